//! Weighted directed sensor graphs.
//!
//! Orientation: row `i` of the weight matrix holds the edges leaving node
//! `i`, so `W[i][j]` is the weight of the edge `i → j`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sparse::{read_triplets, solve_dense, spmm, write_triplets, DenseMatrix, SparseMatrix};

/// Parameters of the thresholded Gaussian kernel a graph was built with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    node_ids: Vec<String>,
    weights: SparseMatrix,
    kernel: Option<GaussianKernel>,
}

/// One record of a road-distance file: `from_id → to_id` at `distance`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRecord {
    pub from: String,
    pub to: String,
    pub distance: f64,
}

impl DistanceRecord {
    pub fn new(from: impl Into<String>, to: impl Into<String>, distance: f64) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            distance,
        }
    }
}

impl WeightedDigraph {
    /// Wraps an existing weight matrix. Rejects negative or non-finite
    /// weights and self-loops.
    pub fn from_weights(node_ids: Vec<String>, weights: SparseMatrix) -> Result<Self> {
        let n = node_ids.len();
        if weights.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                op: "WeightedDigraph::from_weights",
                left: (n, n),
                right: weights.shape(),
            });
        }
        for (r, c, v) in weights.triplets() {
            if r == c {
                return Err(Error::InvalidParameter(format!("self-loop on node {r}")));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "weight ({r}, {c}) = {v} must be positive and finite"
                )));
            }
        }
        Ok(Self {
            node_ids,
            weights,
            kernel: None,
        })
    }

    /// Convenience constructor with ids `0..n` from a dense weight matrix.
    pub fn from_dense(w: &DenseMatrix) -> Result<Self> {
        let ids = (0..w.n_rows()).map(|i| i.to_string()).collect();
        Self::from_weights(ids, SparseMatrix::from_dense(w))
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn weights(&self) -> &SparseMatrix {
        &self.weights
    }

    pub fn kernel(&self) -> Option<GaussianKernel> {
        self.kernel
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn out_degrees(&self) -> Vec<f64> {
        self.weights.row_sums()
    }

    pub fn in_degrees(&self) -> Vec<f64> {
        self.weights.transpose().row_sums()
    }

    /// Writes the weight matrix as triplets to `path` and the metadata to
    /// the sidecar returned by [`metadata_path`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        write_triplets(&self.weights, &mut f)?;
        f.flush()?;
        let mut meta = std::io::BufWriter::new(File::create(metadata_path(path))?);
        writeln!(meta, "n={}", self.n_nodes())?;
        if let Some(k) = self.kernel {
            writeln!(meta, "sigma={}", k.sigma)?;
            writeln!(meta, "kappa={}", k.kappa)?;
        }
        for id in &self.node_ids {
            writeln!(meta, "node={id}")?;
        }
        meta.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = metadata_path(path);
        let meta_name = meta_path.display().to_string();
        let meta = BufReader::new(File::open(&meta_path)?);
        let mut n = None;
        let mut sigma = None;
        let mut kappa = None;
        let mut ids = Vec::new();
        for (i, line) in meta.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&meta_name, i + 1, "expected key=value"))?;
            let num = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::parse(&meta_name, i + 1, format!("bad number `{v}`")))
            };
            match key {
                "n" => {
                    n = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| Error::parse(&meta_name, i + 1, format!("bad count `{value}`")))?,
                    )
                }
                "sigma" => sigma = Some(num(value)?),
                "kappa" => kappa = Some(num(value)?),
                "node" => ids.push(value.to_string()),
                other => return Err(Error::parse(&meta_name, i + 1, format!("unknown key `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| Error::parse(&meta_name, 0, "missing `n`"))?;
        if ids.len() != n {
            return Err(Error::parse(
                &meta_name,
                0,
                format!("expected {n} node ids, found {}", ids.len()),
            ));
        }
        let weights = read_triplets(
            BufReader::new(File::open(path)?),
            n,
            n,
            &path.display().to_string(),
        )?;
        let mut g = Self::from_weights(ids, weights)?;
        if let (Some(sigma), Some(kappa)) = (sigma, kappa) {
            g.kernel = Some(GaussianKernel { sigma, kappa });
        }
        Ok(g)
    }
}

/// Sidecar metadata path for a graph triplet file: `<path>.meta`.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Thresholded Gaussian kernel adjacency:
/// `W_ij = exp(-dist(i,j)² / σ²)` when `dist(i,j) ≤ κ`, absent otherwise.
/// σ is the population standard deviation of the finite distances given.
/// Pairs missing from `distances` are treated as infinitely far apart.
pub fn build_adjacency(
    distances: &[DistanceRecord],
    node_ids: &[String],
    kappa: f64,
) -> Result<WeightedDigraph> {
    if kappa.is_nan() || kappa < 0.0 {
        return Err(Error::InvalidParameter(format!("kappa = {kappa} must be >= 0")));
    }
    let index: HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if index.len() != node_ids.len() {
        return Err(Error::InvalidParameter("duplicate node id".into()));
    }

    let mut pairs = Vec::with_capacity(distances.len());
    for rec in distances {
        let from = *index
            .get(rec.from.as_str())
            .ok_or_else(|| Error::UnknownNode(rec.from.clone()))?;
        let to = *index
            .get(rec.to.as_str())
            .ok_or_else(|| Error::UnknownNode(rec.to.clone()))?;
        if rec.distance < 0.0 || rec.distance.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "negative distance {} -> {}",
                rec.from, rec.to
            )));
        }
        pairs.push((from, to, rec.distance));
    }
    let finite: Vec<f64> = pairs.iter().map(|p| p.2).filter(|d| d.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::EmptyDistances);
    }
    let sigma = population_std(&finite);

    let mut weights: HashMap<(usize, usize), f64> = HashMap::new();
    for (from, to, d) in pairs {
        if from == to || d.is_nan() || d > kappa {
            continue;
        }
        let w = if sigma > 0.0 {
            (-(d * d) / (sigma * sigma)).exp()
        } else if d == 0.0 {
            1.0
        } else {
            0.0
        };
        if w > 0.0 {
            // a repeated pair keeps its last record
            weights.insert((from, to), w);
        }
    }
    let n = node_ids.len();
    let w = SparseMatrix::from_triplets(n, n, weights.into_iter().map(|((r, c), v)| (r, c, v)))?;
    Ok(WeightedDigraph {
        node_ids: node_ids.to_vec(),
        weights: w,
        kernel: Some(GaussianKernel { sigma, kappa }),
    })
}

/// Row-normalizes `w`; rows with zero sum become a unit self-loop.
fn row_stochastic(w: &SparseMatrix) -> SparseMatrix {
    let sums = w.row_sums();
    let n = w.n_rows();
    let trip = w
        .triplets()
        .map(|(r, c, v)| (r, c, v / sums[r]))
        .chain((0..n).filter(|&r| sums[r] == 0.0).map(|r| (r, r, 1.0)));
    SparseMatrix::from_triplets(n, n, trip).expect("square pattern")
}

/// Forward random-walk transition matrix `D_O⁻¹ W`.
pub fn out_transition(g: &WeightedDigraph) -> SparseMatrix {
    row_stochastic(&g.weights)
}

/// Reverse random-walk transition matrix `D_I⁻¹ Wᵀ`.
pub fn in_transition(g: &WeightedDigraph) -> SparseMatrix {
    row_stochastic(&g.weights.transpose())
}

/// Undirected version with `Ŵ_ij = Ŵ_ji = max(W_ij, W_ji)`.
pub fn symmetrize(g: &WeightedDigraph) -> WeightedDigraph {
    let w = &g.weights;
    let wt = w.transpose();
    let n = g.n_nodes();
    let trip = w
        .triplets()
        .chain(wt.triplets())
        .map(|(r, c, _)| ((r, c), w.get(r, c).max(wt.get(r, c))))
        .collect::<HashMap<_, _>>()
        .into_iter()
        .map(|((r, c), v)| (r, c, v));
    WeightedDigraph {
        node_ids: g.node_ids.clone(),
        weights: SparseMatrix::from_triplets(n, n, trip).expect("square pattern"),
        kernel: g.kernel,
    }
}

/// Normalized Laplacian `L = D^{-1/2} (D - W) D^{-1/2}` of a symmetric graph.
/// Isolated nodes keep an all-zero row.
pub fn normalized_laplacian(g: &WeightedDigraph) -> Result<SparseMatrix> {
    if let Some((row, col)) = g.weights.asymmetry(1e-12) {
        return Err(Error::Asymmetric { row, col });
    }
    let inv_sqrt: Vec<f64> = g
        .out_degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let n = g.n_nodes();
    let trip = g
        .weights
        .triplets()
        .map(|(r, c, v)| (r, c, -v * inv_sqrt[r] * inv_sqrt[c]))
        .chain((0..n).filter(|&i| inv_sqrt[i] > 0.0).map(|i| (i, i, 1.0)));
    SparseMatrix::from_triplets(n, n, trip)
}

/// `(2 / λ_max) · L − I`, mapping the spectrum of `L` into `[-1, 1]`.
pub fn rescaled_laplacian(l: &SparseMatrix, lambda_max: f64) -> Result<SparseMatrix> {
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda_max = {lambda_max} must be > 0"
        )));
    }
    let n = l.n_rows();
    l.scale(2.0 / lambda_max)
        .add(&SparseMatrix::identity(n).scale(-1.0))
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration from a fixed start vector.
pub fn estimate_lambda_max(l: &SparseMatrix, max_iter: usize, tol: f64) -> Result<f64> {
    let n = l.n_rows();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    let mut v = DenseMatrix::column(
        &(0..n)
            .map(|i| 1.0 + (i as f64 * 0.618_033_988_749_895).fract())
            .collect::<Vec<_>>(),
    );
    let norm = |m: &DenseMatrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v = v.scale(1.0 / n0);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = spmm(l, &v)?;
        let next = v
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w.scale(1.0 / wn);
        if (next - lambda).abs() <= tol * next.abs().max(1.0) {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PprMode {
    ClosedForm,
    Truncated { k_max: usize },
}

/// Personalized PageRank matrix of the forward random walk with restart
/// probability `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct PprMatrix {
    pub matrix: DenseMatrix,
    pub alpha: f64,
}

/// `Σ_k α(1-α)^k (D_O⁻¹W)^k`, either summed in closed form
/// `α(I - (1-α) D_O⁻¹W)⁻¹` or truncated after `k_max`.
pub fn ppr_stationary(g: &WeightedDigraph, alpha: f64, mode: PprMode) -> Result<PprMatrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha = {alpha} must lie in (0, 1]"
        )));
    }
    let p = out_transition(g);
    let n = g.n_nodes();
    let matrix = match mode {
        PprMode::ClosedForm => {
            let mut a = DenseMatrix::identity(n);
            for (r, c, v) in p.triplets() {
                a.set(r, c, a.get(r, c) - (1.0 - alpha) * v);
            }
            solve_dense(&a, &DenseMatrix::identity(n))?.scale(alpha)
        }
        PprMode::Truncated { k_max } => {
            let mut term = DenseMatrix::identity(n);
            let mut acc = term.scale(alpha);
            let mut coeff = alpha;
            for _ in 0..k_max {
                term = spmm(&p, &term)?;
                coeff *= 1.0 - alpha;
                acc.axpy(coeff, &term)?;
            }
            acc
        }
    };
    Ok(PprMatrix { matrix, alpha })
}

/// Parses `from_id,to_id,distance` records after a header line.
pub fn read_distances(path: &Path) -> Result<Vec<DistanceRecord>> {
    let name = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(&name, i + 1, "expected `from_id,to_id,distance`"));
        }
        let distance: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(&name, i + 1, format!("bad distance `{}`", fields[2])))?;
        if distance < 0.0 || distance.is_nan() {
            return Err(Error::parse(&name, i + 1, "distance must be >= 0"));
        }
        out.push(DistanceRecord::new(fields[0], fields[1], distance));
    }
    Ok(out)
}

/// Reads one node id per line, skipping blank lines.
pub fn read_node_ids(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}
