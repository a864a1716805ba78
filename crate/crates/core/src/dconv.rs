//! Diffusion convolution over a graph signal, the diffusion convolutional
//! layer, and the Chebyshev spectral filter used by the GCRNN variant.
//!
//! A filter of order `K` mixes the signal with the first `K` powers of the
//! forward walk `P_O = D_O⁻¹W` and the reverse walk `P_I = D_I⁻¹Wᵀ`:
//!
//! ```text
//! x ⋆ θ = Σ_{k<K} (θ_{k,0} P_Oᵏ + θ_{k,1} P_Iᵏ) x
//! ```
//!
//! Powers are never formed; `P^k x` is built by `K-1` sparse-dense products.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{
    in_transition, normalized_laplacian, out_transition, rescaled_laplacian, symmetrize, WeightedDigraph,
};
use crate::sparse::{diffusion_powers, spmm, DenseMatrix, SparseMatrix};

/// Which graph operator the convolution uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvMode {
    /// Forward and reverse random walks.
    Bidirectional,
    /// Forward random walk only.
    ForwardOnly,
    /// Both transition matrices replaced by the identity, so no information
    /// crosses edges.
    Identity,
    /// Chebyshev polynomials of the rescaled Laplacian of the symmetrized
    /// graph.
    ChebNet,
}

impl ConvMode {
    /// Number of filter taps per (input, output) feature pair.
    pub fn num_bases(self, k_max: usize) -> usize {
        match self {
            ConvMode::Bidirectional | ConvMode::Identity => 2 * k_max,
            ConvMode::ForwardOnly | ConvMode::ChebNet => k_max,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConvMode::Bidirectional => "bidirectional",
            ConvMode::ForwardOnly => "forward_only",
            ConvMode::Identity => "identity",
            ConvMode::ChebNet => "chebnet",
        }
    }
}

impl std::str::FromStr for ConvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(ConvMode::Bidirectional),
            "forward_only" => Ok(ConvMode::ForwardOnly),
            "identity" => Ok(ConvMode::Identity),
            "chebnet" => Ok(ConvMode::ChebNet),
            other => Err(Error::InvalidParameter(format!("unknown conv mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// `K × 2` filter coefficients; column 0 weights the forward walk, column 1
/// the reverse walk.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFilter {
    theta: DenseMatrix,
}

impl DiffusionFilter {
    pub fn new(theta: DenseMatrix) -> Result<Self> {
        if theta.n_cols() != 2 || theta.n_rows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "filter must be K x 2 with K >= 1, got {:?}",
                theta.shape()
            )));
        }
        Ok(Self { theta })
    }

    pub fn zeros(k_max: usize) -> Self {
        Self {
            theta: DenseMatrix::zeros(k_max.max(1), 2),
        }
    }

    pub fn k_max(&self) -> usize {
        self.theta.n_rows()
    }

    pub fn theta(&self) -> &DenseMatrix {
        &self.theta
    }

    pub fn forward(&self, k: usize) -> f64 {
        self.theta.get(k, 0)
    }

    pub fn reverse(&self, k: usize) -> f64 {
        self.theta.get(k, 1)
    }

    pub fn set(&mut self, k: usize, direction: usize, v: f64) {
        self.theta.set(k, direction, v);
    }
}

/// Layer weights `Θ ∈ R^{Q×P×K×2}` stored as a `(bases·P) × Q` matrix:
/// tap `(k, d)` of input feature `p` feeding output `q` sits at row
/// `(2k + d)·P + p`, column `q`. Forward-only and ChebNet layers have one
/// tap per order, at row `k·P + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DConvLayerParams {
    pub theta: DenseMatrix,
    pub input_dim: usize,
    pub output_dim: usize,
    pub k_max: usize,
    pub mode: ConvMode,
    pub activation: Activation,
}

/// Row of `theta` for tap `(k, direction)` of input feature `p`.
pub fn tap_row(mode: ConvMode, input_dim: usize, p: usize, k: usize, direction: usize) -> usize {
    match mode {
        ConvMode::Bidirectional | ConvMode::Identity => (2 * k + direction) * input_dim + p,
        ConvMode::ForwardOnly | ConvMode::ChebNet => k * input_dim + p,
    }
}

impl DConvLayerParams {
    pub fn zeros(
        input_dim: usize,
        output_dim: usize,
        k_max: usize,
        mode: ConvMode,
        activation: Activation,
    ) -> Self {
        Self {
            theta: DenseMatrix::zeros(mode.num_bases(k_max) * input_dim, output_dim),
            input_dim,
            output_dim,
            k_max,
            mode,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rows = self.mode.num_bases(self.k_max) * self.input_dim;
        if self.theta.shape() != (rows, self.output_dim) || self.k_max == 0 {
            return Err(Error::DimensionMismatch {
                op: "DConvLayerParams",
                left: (rows, self.output_dim),
                right: self.theta.shape(),
            });
        }
        Ok(())
    }

    pub fn get(&self, q: usize, p: usize, k: usize, direction: usize) -> f64 {
        self.theta
            .get(tap_row(self.mode, self.input_dim, p, k, direction), q)
    }

    pub fn set(&mut self, q: usize, p: usize, k: usize, direction: usize, v: f64) {
        let r = tap_row(self.mode, self.input_dim, p, k, direction);
        self.theta.set(r, q, v);
    }

    /// The `K × 2` filter connecting input `p` to output `q`. Forward-only
    /// layers report zero reverse taps.
    pub fn filter(&self, q: usize, p: usize) -> DiffusionFilter {
        let mut f = DiffusionFilter::zeros(self.k_max);
        for k in 0..self.k_max {
            f.set(k, 0, self.get(q, p, k, 0));
            if matches!(self.mode, ConvMode::Bidirectional | ConvMode::Identity) {
                f.set(k, 1, self.get(q, p, k, 1));
            }
        }
        f
    }
}

/// Constant graph operators shared by every convolution in a model.
#[derive(Debug, Clone)]
pub struct Supports {
    n: usize,
    p_out: Arc<SparseMatrix>,
    p_out_t: Arc<SparseMatrix>,
    p_in: Arc<SparseMatrix>,
    p_in_t: Arc<SparseMatrix>,
    l_tilde: Option<Arc<SparseMatrix>>,
}

impl Supports {
    /// Transition matrices of `g`, plus the rescaled Laplacian of the
    /// symmetrized graph (λ_max = 2) when `mode` is ChebNet.
    pub fn from_graph(g: &WeightedDigraph, mode: ConvMode) -> Result<Self> {
        let l_tilde = if mode == ConvMode::ChebNet {
            let l = normalized_laplacian(&symmetrize(g))?;
            Some(rescaled_laplacian(&l, 2.0)?)
        } else {
            None
        };
        Self::new(out_transition(g), in_transition(g), l_tilde)
    }

    pub fn new(p_out: SparseMatrix, p_in: SparseMatrix, l_tilde: Option<SparseMatrix>) -> Result<Self> {
        let n = p_out.n_rows();
        for m in std::iter::once(&p_in).chain(l_tilde.as_ref()) {
            if m.shape() != (n, n) || p_out.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    op: "Supports::new",
                    left: p_out.shape(),
                    right: m.shape(),
                });
            }
        }
        if let Some(l) = &l_tilde {
            if let Some((row, col)) = l.asymmetry(1e-12) {
                return Err(Error::Asymmetric { row, col });
            }
        }
        Ok(Self {
            n,
            p_out_t: Arc::new(p_out.transpose()),
            p_out: Arc::new(p_out),
            p_in_t: Arc::new(p_in.transpose()),
            p_in: Arc::new(p_in),
            l_tilde: l_tilde.map(Arc::new),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn p_out(&self) -> &SparseMatrix {
        &self.p_out
    }

    pub fn p_in(&self) -> &SparseMatrix {
        &self.p_in
    }

    pub fn l_tilde(&self) -> Option<&SparseMatrix> {
        self.l_tilde.as_deref()
    }

    /// Records the tap features of `x` (a stack of `B` blocks of `N` rows)
    /// and returns them concatenated column-wise, tap-major, matching the
    /// row layout of [`DConvLayerParams::theta`].
    pub fn features(&self, tape: &mut Tape, x: Var, mode: ConvMode, k_max: usize) -> Result<Var> {
        if k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        let mut taps = Vec::with_capacity(mode.num_bases(k_max));
        match mode {
            ConvMode::Bidirectional => {
                let (mut fwd, mut rev) = (x, x);
                taps.extend([x, x]);
                for _ in 1..k_max {
                    fwd = tape.spmm(&self.p_out, &self.p_out_t, fwd)?;
                    rev = tape.spmm(&self.p_in, &self.p_in_t, rev)?;
                    taps.extend([fwd, rev]);
                }
            }
            ConvMode::ForwardOnly => {
                let mut fwd = x;
                taps.push(x);
                for _ in 1..k_max {
                    fwd = tape.spmm(&self.p_out, &self.p_out_t, fwd)?;
                    taps.push(fwd);
                }
            }
            ConvMode::Identity => taps.resize(2 * k_max, x),
            ConvMode::ChebNet => {
                let l = self.l_tilde.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("chebnet mode needs a rescaled Laplacian".into())
                })?;
                taps.push(x);
                if k_max > 1 {
                    taps.push(tape.spmm(l, l, x)?);
                }
                for k in 2..k_max {
                    let lt = tape.spmm(l, l, taps[k - 1])?;
                    let two_lt = tape.scale(lt, 2.0);
                    taps.push(tape.sub(two_lt, taps[k - 2])?);
                }
            }
        }
        if taps.len() == 1 {
            return Ok(taps[0]);
        }
        tape.concat_cols(&taps)
    }
}

/// `Σ_k (θ_{k,0} P_Oᵏ + θ_{k,1} P_Iᵏ) x` for a single signal column.
pub fn diffusion_conv(
    x_col: &DenseMatrix,
    f: &DiffusionFilter,
    p_out: &SparseMatrix,
    p_in: &SparseMatrix,
) -> Result<DenseMatrix> {
    if x_col.n_cols() != 1 {
        return Err(Error::DimensionMismatch {
            op: "diffusion_conv",
            left: (p_out.n_cols(), 1),
            right: x_col.shape(),
        });
    }
    if p_in.shape() != p_out.shape() {
        return Err(Error::DimensionMismatch {
            op: "diffusion_conv",
            left: p_out.shape(),
            right: p_in.shape(),
        });
    }
    let fwd = diffusion_powers(p_out, x_col, f.k_max())?;
    let rev = diffusion_powers(p_in, x_col, f.k_max())?;
    let mut out = DenseMatrix::zeros(x_col.n_rows(), 1);
    for k in 0..f.k_max() {
        out.axpy(f.forward(k), &fwd[k])?;
        out.axpy(f.reverse(k), &rev[k])?;
    }
    Ok(out)
}

/// `H[:, q] = a(Σ_p x[:, p] ⋆ Θ[q, p])`. Powers are computed once per input
/// column and shared by all outputs. Modes other than ChebNet take `p_out`
/// and `p_in`; ChebNet takes the rescaled Laplacian in `p_out`.
pub fn dconv_layer(
    x: &DenseMatrix,
    params: &DConvLayerParams,
    p_out: &SparseMatrix,
    p_in: &SparseMatrix,
) -> Result<DenseMatrix> {
    params.validate()?;
    if x.n_cols() != params.input_dim || x.n_rows() != p_out.n_cols() {
        return Err(Error::DimensionMismatch {
            op: "dconv_layer",
            left: (p_out.n_cols(), params.input_dim),
            right: x.shape(),
        });
    }
    let n = x.n_rows();
    let k = params.k_max;
    let mut pre = DenseMatrix::zeros(n, params.output_dim);
    for p in 0..params.input_dim {
        let col = DenseMatrix::column(&x.col(p));
        let taps: Vec<(usize, usize, DenseMatrix)> = match params.mode {
            ConvMode::Bidirectional => {
                let fwd = diffusion_powers(p_out, &col, k)?;
                let rev = diffusion_powers(p_in, &col, k)?;
                fwd.into_iter()
                    .enumerate()
                    .map(|(i, m)| (i, 0, m))
                    .chain(rev.into_iter().enumerate().map(|(i, m)| (i, 1, m)))
                    .collect()
            }
            ConvMode::ForwardOnly => diffusion_powers(p_out, &col, k)?
                .into_iter()
                .enumerate()
                .map(|(i, m)| (i, 0, m))
                .collect(),
            ConvMode::Identity => (0..k)
                .flat_map(|i| [(i, 0, col.clone()), (i, 1, col.clone())])
                .collect(),
            ConvMode::ChebNet => chebyshev_terms(p_out, &col, k)?
                .into_iter()
                .enumerate()
                .map(|(i, m)| (i, 0, m))
                .collect(),
        };
        for (ki, d, t) in &taps {
            for q in 0..params.output_dim {
                let w = params.get(q, p, *ki, *d);
                if w == 0.0 {
                    continue;
                }
                for r in 0..n {
                    let v = pre.get(r, q) + w * t.get(r, 0);
                    pre.set(r, q, v);
                }
            }
        }
    }
    Ok(pre.map(|v| params.activation.apply(v)))
}

/// `[T_0(L̃)x, …, T_{K-1}(L̃)x]` by the recurrence `T_k = 2 L̃ T_{k-1} − T_{k-2}`.
pub fn chebyshev_terms(l_tilde: &SparseMatrix, x: &DenseMatrix, k_max: usize) -> Result<Vec<DenseMatrix>> {
    let mut out = vec![x.clone()];
    if k_max > 1 {
        out.push(spmm(l_tilde, x)?);
    }
    for k in 2..k_max {
        let mut next = spmm(l_tilde, &out[k - 1])?.scale(2.0);
        next.axpy(-1.0, &out[k - 2])?;
        out.push(next);
    }
    Ok(out)
}

/// Coefficients of a ChebNet filter, one per polynomial order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebFilter {
    pub theta: Vec<f64>,
}

impl ChebFilter {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn k_max(&self) -> usize {
        self.theta.len()
    }
}

/// `Σ_k θ̃_k T_k(L̃) x` for a symmetric `L̃`.
pub fn chebnet_conv(x_col: &DenseMatrix, f: &ChebFilter, l_tilde: &SparseMatrix) -> Result<DenseMatrix> {
    if let Some((row, col)) = l_tilde.asymmetry(1e-12) {
        return Err(Error::Asymmetric { row, col });
    }
    if x_col.n_rows() != l_tilde.n_cols() || x_col.n_cols() != 1 {
        return Err(Error::DimensionMismatch {
            op: "chebnet_conv",
            left: l_tilde.shape(),
            right: x_col.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(x_col.n_rows(), 1);
    if f.k_max() == 0 {
        return Ok(out);
    }
    for (t, &c) in chebyshev_terms(l_tilde, x_col, f.k_max())?.iter().zip(&f.theta) {
        out.axpy(c, t)?;
    }
    Ok(out)
}

/// Footprint of a learned filter centered at node `center`: the filter
/// applied to the indicator vector of that node.
pub fn filter_weights(
    f: &DiffusionFilter,
    p_out: &SparseMatrix,
    p_in: &SparseMatrix,
    center: usize,
) -> Result<Vec<f64>> {
    let n = p_out.n_rows();
    if center >= n {
        return Err(Error::InvalidParameter(format!(
            "center {center} out of range for {n} nodes"
        )));
    }
    let mut e = DenseMatrix::zeros(n, 1);
    e.set(center, 0, 1.0);
    Ok(diffusion_conv(&e, f, p_out, p_in)?.into_vec())
}

/// Response of output feature `q` of a layer to a unit impulse on input
/// feature `p` at node `center`, in any mode. For the diffusion modes this
/// is the learned filter's footprint around `center`.
pub fn filter_response(
    supports: &Supports,
    params: &DConvLayerParams,
    p: usize,
    q: usize,
    center: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    let n = supports.n_nodes();
    if center >= n || p >= params.input_dim || q >= params.output_dim {
        return Err(Error::InvalidParameter(format!(
            "node {center}, input {p} or output {q} out of range for {n} nodes and a {}x{} layer",
            params.input_dim, params.output_dim
        )));
    }
    let mut e = DenseMatrix::zeros(n, params.input_dim);
    e.set(center, p, 1.0);
    let mut tape = Tape::new();
    let x = tape.constant(e);
    let z = supports.features(&mut tape, x, params.mode, params.k_max)?;
    let theta = tape.constant(params.theta.slice_cols(q, 1)?);
    let y = tape.matmul(z, theta)?;
    Ok(tape.value(y).col(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap2() -> SparseMatrix {
        SparseMatrix::from_dense(&DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]))
    }

    #[test]
    fn filter_response_matches_filter_weights() {
        let p = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
        ]));
        let sup = Supports::new(p.clone(), p.transpose(), None).unwrap();
        let mut layer = DConvLayerParams::zeros(2, 2, 2, ConvMode::Bidirectional, Activation::Tanh);
        layer.set(1, 1, 0, 0, 0.5);
        layer.set(1, 1, 1, 0, 2.0);
        layer.set(1, 1, 1, 1, -1.0);
        layer.set(0, 1, 1, 1, 9.0);
        let got = filter_response(&sup, &layer, 1, 1, 2).unwrap();
        let expect = filter_weights(&layer.filter(1, 1), sup.p_out(), sup.p_in(), 2).unwrap();
        assert_eq!(got, expect);
        assert!(filter_response(&sup, &layer, 0, 0, 3).is_err());
    }

    #[test]
    fn k0_forward_tap_is_identity() {
        let mut f = DiffusionFilter::zeros(3);
        f.set(0, 0, 1.0);
        let x = DenseMatrix::column(&[1.0, -2.0]);
        assert_eq!(diffusion_conv(&x, &f, &swap2(), &swap2()).unwrap(), x);
    }

    #[test]
    fn zero_filter_gives_zero() {
        let x = DenseMatrix::column(&[1.0, -2.0]);
        let y = diffusion_conv(&x, &DiffusionFilter::zeros(3), &swap2(), &swap2()).unwrap();
        assert_eq!(y, DenseMatrix::zeros(2, 1));
    }

    #[test]
    fn one_step_walk() {
        let mut f = DiffusionFilter::zeros(2);
        f.set(1, 0, 1.0);
        let y = diffusion_conv(&DenseMatrix::column(&[1.0, 2.0]), &f, &swap2(), &swap2()).unwrap();
        assert_eq!(y, DenseMatrix::column(&[2.0, 1.0]));
    }

    #[test]
    fn diffusion_conv_rejects_bad_shapes() {
        let f = DiffusionFilter::zeros(2);
        assert!(diffusion_conv(&DenseMatrix::zeros(2, 2), &f, &swap2(), &swap2()).is_err());
        assert!(diffusion_conv(&DenseMatrix::zeros(3, 1), &f, &swap2(), &swap2()).is_err());
        assert!(DiffusionFilter::new(DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn layer_identity_taps_copy_input() {
        let mut params = DConvLayerParams::zeros(2, 2, 3, ConvMode::Bidirectional, Activation::Identity);
        params.set(0, 0, 0, 0, 1.0);
        params.set(1, 1, 0, 0, 1.0);
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(dconv_layer(&x, &params, &swap2(), &swap2()).unwrap(), x);
    }

    #[test]
    fn layer_relu_clamps() {
        let id = SparseMatrix::identity(2);
        let mut params = DConvLayerParams::zeros(1, 1, 1, ConvMode::Bidirectional, Activation::Relu);
        params.set(0, 0, 0, 0, 1.0);
        let x = DenseMatrix::column(&[-1.0, 2.0]);
        assert_eq!(
            dconv_layer(&x, &params, &id, &id).unwrap(),
            DenseMatrix::column(&[0.0, 2.0])
        );
    }

    #[test]
    fn layer_rejects_wrong_feature_count() {
        let params = DConvLayerParams::zeros(2, 1, 2, ConvMode::Bidirectional, Activation::Identity);
        assert!(dconv_layer(&DenseMatrix::zeros(2, 3), &params, &swap2(), &swap2()).is_err());
    }

    #[test]
    fn chebnet_examples() {
        let l = swap2();
        let x = DenseMatrix::column(&[0.5, -1.5]);
        let y = chebnet_conv(&x, &ChebFilter::new(vec![1.0, 0.0, 0.0]), &l).unwrap();
        assert_eq!(y, x);
        let neg_i = SparseMatrix::identity(2).scale(-1.0);
        let y = chebnet_conv(&x, &ChebFilter::new(vec![0.0, 1.0]), &neg_i).unwrap();
        assert_eq!(y, x.scale(-1.0));
        let asym = SparseMatrix::from_triplets(2, 2, [(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            chebnet_conv(&x, &ChebFilter::new(vec![1.0]), &asym),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn chebyshev_recurrence_matches_cosine_identity() {
        // on a 1×1 operator L̃ = [cos φ], T_k = cos(kφ)
        let phi = 0.7f64;
        let l = SparseMatrix::from_dense(&DenseMatrix::filled(1, 1, phi.cos()));
        let terms = chebyshev_terms(&l, &DenseMatrix::filled(1, 1, 1.0), 6).unwrap();
        for (k, t) in terms.iter().enumerate() {
            assert!((t.get(0, 0) - (k as f64 * phi).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn tape_features_match_layer_function() {
        let g = WeightedDigraph::from_dense(&DenseMatrix::from_rows(&[
            [0.0, 1.0, 0.5],
            [0.0, 0.0, 2.0],
            [1.0, 0.0, 0.0],
        ]))
        .unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 0.5], [-1.0, 2.0], [0.25, 0.0]]);
        for mode in [ConvMode::Bidirectional, ConvMode::ForwardOnly, ConvMode::Identity] {
            let sup = Supports::from_graph(&g, mode).unwrap();
            let mut params = DConvLayerParams::zeros(2, 3, 3, mode, Activation::Identity);
            for (i, v) in params.theta.as_mut_slice().iter_mut().enumerate() {
                *v = ((i * 7) % 5) as f64 - 2.0;
            }
            let expect = dconv_layer(&x, &params, sup.p_out(), sup.p_in()).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let z = sup.features(&mut tape, xv, mode, 3).unwrap();
            let th = tape.constant(params.theta.clone());
            let out = tape.matmul(z, th).unwrap();
            assert!(tape.value(out).max_abs_diff(&expect).unwrap() < 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn filter_weights_of_identity_filter_is_indicator() {
        let mut f = DiffusionFilter::zeros(2);
        f.set(0, 0, 1.0);
        let w = filter_weights(&f, &swap2(), &swap2(), 1).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
        assert!(filter_weights(&f, &swap2(), &swap2(), 2).is_err());
    }
}
