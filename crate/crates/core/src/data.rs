//! Series ingestion, z-score normalization, chronological splitting,
//! sliding windows and a synthetic diffusion-process generator.
//!
//! Series CSV layout:
//!
//! ```text
//! timestamp,<id_1>,...,<id_N>
//! 2024-01-01T00:00:00,61.5,58.0,...
//! ```
//!
//! Timestamps are ISO-8601 in UTC (`T` or a space between date and time; an
//! RFC 3339 offset is also accepted). A cell equal to the missing sentinel,
//! an empty cell, or `nan` is unobserved.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{out_transition, WeightedDigraph};
use crate::sparse::{spmm, DenseMatrix};

pub const DEFAULT_MISSING_SENTINEL: f64 = 0.0;
const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSeries {
    pub node_ids: Vec<String>,
    /// Epoch seconds, strictly increasing.
    pub timestamps: Vec<i64>,
    /// `steps × N`.
    pub values: DenseMatrix,
    /// Row-major `steps × N`, true where observed.
    pub mask: Vec<bool>,
}

impl SpeedSeries {
    pub fn new(
        node_ids: Vec<String>,
        timestamps: Vec<i64>,
        values: DenseMatrix,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let (steps, n) = values.shape();
        if timestamps.len() != steps || node_ids.len() != n || mask.len() != steps * n {
            return Err(Error::InvalidParameter(format!(
                "series with {} timestamps, {} ids and {} mask entries does not fit {steps}x{n} values",
                timestamps.len(),
                node_ids.len(),
                mask.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!(
                "timestamps not strictly increasing at step {}",
                i + 1
            )));
        }
        if let Some(i) = (0..steps * n).find(|&i| mask[i] && !values.as_slice()[i].is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "observed value at step {}, node {} is not finite",
                i / n,
                i % n
            )));
        }
        Ok(Self {
            node_ids,
            timestamps,
            values,
            mask,
        })
    }

    /// Fully observed series.
    pub fn dense(node_ids: Vec<String>, timestamps: Vec<i64>, values: DenseMatrix) -> Result<Self> {
        let mask = vec![true; values.as_slice().len()];
        Self::new(node_ids, timestamps, values, mask)
    }

    pub fn n_steps(&self) -> usize {
        self.values.n_rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.n_cols()
    }

    pub fn observed(&self, t: usize, i: usize) -> bool {
        self.mask[t * self.n_nodes() + i]
    }

    /// Fraction of the UTC day elapsed at step `t`, in `[0, 1)`.
    pub fn time_of_day(&self, t: usize) -> f64 {
        day_fraction(self.timestamps[t])
    }

    /// Spacing between the first two timestamps, or 0 for a single step.
    pub fn interval_secs(&self) -> i64 {
        match self.timestamps.as_slice() {
            [a, b, ..] => b - a,
            _ => 0,
        }
    }

    /// Step whose timestamp is exactly `secs`.
    pub fn step_at(&self, secs: i64) -> Option<usize> {
        self.timestamps.binary_search(&secs).ok()
    }

    /// Copy with columns reordered to `ids`. Extra columns are dropped.
    pub fn select_nodes(&self, ids: &[String]) -> Result<Self> {
        let cols = ids
            .iter()
            .map(|id| {
                self.node_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::UnknownNode(id.clone()))
            })
            .collect::<Result<Vec<usize>>>()?;
        let steps = self.n_steps();
        let mut values = DenseMatrix::zeros(steps, cols.len());
        let mut mask = Vec::with_capacity(steps * cols.len());
        for t in 0..steps {
            for (j, &c) in cols.iter().enumerate() {
                values.set(t, j, self.values.get(t, c));
                mask.push(self.observed(t, c));
            }
        }
        Self::new(ids.to_vec(), self.timestamps.clone(), values, mask)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Unobserved entries are written as empty cells.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "timestamp")?;
        for id in &self.node_ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for t in 0..self.n_steps() {
            write!(w, "{}", format_timestamp(self.timestamps[t]))?;
            for i in 0..self.n_nodes() {
                if self.observed(t, i) {
                    write!(w, ",{}", self.values.get(t, i))?;
                } else {
                    write!(w, ",")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Fraction of the UTC day elapsed at epoch second `secs`, in `[0, 1)`.
pub fn day_fraction(secs: i64) -> f64 {
    secs.rem_euclid(86_400) as f64 / 86_400.0
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .map(|d| d.format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_else(|| secs.to_string())
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    .map(|d| d.and_utc().timestamp())
}

/// Reads a series CSV. Cells equal to `sentinel` are masked out; pass `None`
/// to treat every numeric cell as observed.
pub fn load_series(path: &Path, sentinel: Option<f64>) -> Result<SpeedSeries> {
    let name = path.display().to_string();
    read_series(BufReader::new(File::open(path)?), &name, sentinel)
}

pub fn read_series<R: BufRead>(reader: R, name: &str, sentinel: Option<f64>) -> Result<SpeedSeries> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::parse(name, 1, "empty file")),
    };
    let mut cols = header.trim().split(',').map(str::trim);
    if cols.next() != Some("timestamp") {
        return Err(Error::parse(name, 1, "header must start with `timestamp`"));
    }
    let node_ids: Vec<String> = cols.map(String::from).collect();
    let n = node_ids.len();
    if n == 0 {
        return Err(Error::parse(name, 1, "no node columns"));
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n + 1 {
            return Err(Error::parse(
                name,
                lineno,
                format!("expected {} fields, found {}", n + 1, fields.len()),
            ));
        }
        let ts = parse_timestamp(fields[0])
            .ok_or_else(|| Error::parse(name, lineno, format!("bad timestamp `{}`", fields[0])))?;
        if timestamps.last().is_some_and(|&prev| ts <= prev) {
            return Err(Error::parse(
                name,
                lineno,
                "timestamps must be strictly increasing",
            ));
        }
        timestamps.push(ts);
        for cell in &fields[1..] {
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>()
                    .map_err(|_| Error::parse(name, lineno, format!("bad value `{cell}`")))?
            };
            let observed = v.is_finite() && sentinel.is_none_or(|s| v != s);
            values.push(if observed { v } else { 0.0 });
            mask.push(observed);
        }
    }
    let steps = timestamps.len();
    SpeedSeries::new(
        node_ids,
        timestamps,
        DenseMatrix::from_vec(steps, n, values)?,
        mask,
    )
}

/// Scalar z-score transform fitted on observed training entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply_matrix(&self, x: &DenseMatrix) -> DenseMatrix {
        x.map(|v| self.apply(v))
    }

    pub fn invert_matrix(&self, z: &DenseMatrix) -> DenseMatrix {
        z.map(|v| self.invert(v))
    }
}

/// Mean and population standard deviation over observed entries of the
/// rows in `train`.
pub fn fit_zscore(series: &SpeedSeries, train: Range<usize>) -> Result<ZScore> {
    let n = series.n_nodes();
    let end = train.end.min(series.n_steps());
    let observed: Vec<f64> = (train.start..end)
        .flat_map(|t| (0..n).map(move |i| (t, i)))
        .filter(|&(t, i)| series.observed(t, i))
        .map(|(t, i)| series.values.get(t, i))
        .collect();
    if observed.is_empty() {
        return Err(Error::EmptyMask);
    }
    let count = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / count;
    let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    ZScore::new(mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous train | val | test ranges. Train and val sizes are
/// floor-rounded; the remainder goes to test.
pub fn chronological_split(n_steps: usize, train: f64, val: f64, test: f64) -> Result<SplitRanges> {
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidParameter(format!(
            "split fractions {train}/{val}/{test} must be in [0, 1] and sum to 1"
        )));
    }
    let n = n_steps as f64;
    let n_train = ((train * n + 1e-9).floor() as usize).min(n_steps);
    let n_val = ((val * n + 1e-9).floor() as usize).min(n_steps - n_train);
    Ok(SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub history: usize,
    pub horizon: usize,
    pub time_of_day: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            history: 12,
            horizon: 12,
            time_of_day: false,
        }
    }
}

impl WindowConfig {
    /// Input channels per node.
    pub fn input_dim(&self) -> usize {
        1 + usize::from(self.time_of_day)
    }
}

/// One normalized input/target window.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSample {
    /// Series step of the first input frame.
    pub start: usize,
    /// `T′` frames of `N × P`. Unobserved speeds are 0 (the training mean).
    pub inputs: Vec<DenseMatrix>,
    /// `T` frames of `N × 1`.
    pub targets: Vec<DenseMatrix>,
    /// `T` frames of `N × 1`, 1 where the target is observed.
    pub target_mask: Vec<DenseMatrix>,
    /// `T` frames of `N × (P - 1)`: the auxiliary channels at each target
    /// step, used when predictions are fed back as inputs.
    pub target_aux: Vec<DenseMatrix>,
}

impl ForecastSample {
    pub fn n_nodes(&self) -> usize {
        self.targets.first().map_or(0, DenseMatrix::n_rows)
    }
}

fn frame(series: &SpeedSeries, z: &ZScore, t: usize, time_of_day: bool) -> DenseMatrix {
    let n = series.n_nodes();
    let p = 1 + usize::from(time_of_day);
    let mut m = DenseMatrix::zeros(n, p);
    for i in 0..n {
        if series.observed(t, i) {
            m.set(i, 0, z.apply(series.values.get(t, i)));
        }
        if time_of_day {
            m.set(i, 1, series.time_of_day(t));
        }
    }
    m
}

/// One sample per stride-1 offset whose input and target windows both lie
/// inside `range`; `range_len - T′ - T + 1` of them, or none when the range
/// is too short.
pub fn make_windows(
    series: &SpeedSeries,
    zscore: &ZScore,
    cfg: &WindowConfig,
    range: Range<usize>,
) -> Vec<ForecastSample> {
    let end = range.end.min(series.n_steps());
    let span = cfg.history + cfg.horizon;
    if end < range.start + span || cfg.history == 0 || cfg.horizon == 0 {
        return Vec::new();
    }
    let n = series.n_nodes();
    let frames: Vec<DenseMatrix> = (range.start..end)
        .map(|t| frame(series, zscore, t, cfg.time_of_day))
        .collect();
    (range.start..=end - span)
        .map(|s| {
            let local = s - range.start;
            let inputs = frames[local..local + cfg.history].to_vec();
            let target_steps = local + cfg.history..local + span;
            let targets = target_steps
                .clone()
                .map(|l| frames[l].slice_cols(0, 1).expect("speed column"))
                .collect();
            let target_aux = target_steps
                .clone()
                .map(|l| frames[l].slice_cols(1, cfg.input_dim() - 1).expect("aux columns"))
                .collect();
            let target_mask = target_steps
                .map(|l| {
                    let t = range.start + l;
                    let mut m = DenseMatrix::zeros(n, 1);
                    for i in 0..n {
                        if series.observed(t, i) {
                            m.set(i, 0, 1.0);
                        }
                    }
                    m
                })
                .collect();
            ForecastSample {
                start: s,
                inputs,
                targets,
                target_mask,
                target_aux,
            }
        })
        .collect()
}

/// Normalized model inputs for a forecast whose first predicted step is
/// `at`: the `T′` frames before it, the auxiliary channels of the `T`
/// forecast steps, and their timestamps. Forecast steps may run past the
/// end of the series; their timestamps continue at the series interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastInputs {
    pub inputs: Vec<DenseMatrix>,
    pub aux: Vec<DenseMatrix>,
    pub timestamps: Vec<i64>,
}

pub fn forecast_inputs(
    series: &SpeedSeries,
    zscore: &ZScore,
    cfg: &WindowConfig,
    at: usize,
) -> Result<ForecastInputs> {
    if at < cfg.history || at > series.n_steps() {
        return Err(Error::InvalidParameter(format!(
            "forecast start {at} needs {} prior steps within a {}-step series",
            cfg.history,
            series.n_steps()
        )));
    }
    let n = series.n_nodes();
    let inputs = (at - cfg.history..at)
        .map(|t| frame(series, zscore, t, cfg.time_of_day))
        .collect();
    let last = series.timestamps[at - 1];
    let step = series.interval_secs();
    let timestamps: Vec<i64> = (1..=cfg.horizon as i64).map(|k| last + k * step).collect();
    let aux = timestamps
        .iter()
        .map(|&ts| {
            let v = if cfg.time_of_day {
                vec![day_fraction(ts); n]
            } else {
                Vec::new()
            };
            DenseMatrix::from_vec(n, cfg.input_dim() - 1, v)
        })
        .collect::<Result<_>>()?;
    Ok(ForecastInputs {
        inputs,
        aux,
        timestamps,
    })
}

/// Debug dump, one record per value:
/// `sample,part,step,node,channel,value` where `part` is `input`, `target`
/// or `mask`.
pub fn write_samples<W: Write>(w: &mut W, samples: &[ForecastSample]) -> Result<()> {
    writeln!(w, "sample,part,step,node,channel,value")?;
    for s in samples {
        for (part, frames) in [
            ("input", &s.inputs),
            ("target", &s.targets),
            ("mask", &s.target_mask),
        ] {
            for (step, m) in frames.iter().enumerate() {
                for i in 0..m.n_rows() {
                    for c in 0..m.n_cols() {
                        writeln!(w, "{},{part},{step},{i},{c},{}", s.start, m.get(i, c))?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic generator
/// `x(t+1) = λ P_Oᵀ x(t) + (1 - λ) s(t+1) + noise`, clipped to `[0, 80]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub steps: usize,
    pub lambda: f64,
    pub noise_std: f64,
    /// Period of the seasonal forcing, in steps.
    pub period: usize,
    pub seed: u64,
    /// Forcing at node `i`: `base + amplitude · sin(2π t / period + π i / N)`.
    pub base: f64,
    pub amplitude: f64,
    pub start_timestamp: i64,
    pub interval_secs: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lambda: 0.9,
            noise_std: 1.0,
            period: 288,
            seed: 7,
            base: 45.0,
            amplitude: 30.0,
            // 2024-01-01T00:00:00Z
            start_timestamp: 1_704_067_200,
            interval_secs: 300,
        }
    }
}

pub const SPEED_CLIP: (f64, f64) = (0.0, 80.0);

/// Seasonal forcing for `n` nodes at step `t`.
pub fn seasonal_forcing(cfg: &SynthConfig, n: usize, t: usize) -> Vec<f64> {
    let phase = 2.0 * std::f64::consts::PI * (t % cfg.period.max(1)) as f64 / cfg.period.max(1) as f64;
    (0..n)
        .map(|i| cfg.base + cfg.amplitude * (phase + std::f64::consts::PI * i as f64 / n as f64).sin())
        .collect()
}

/// Fully observed synthetic series diffusing along the graph's edges,
/// deterministic per seed. The first frame is the forcing at step 0.
pub fn synth_diffusion(graph: &WeightedDigraph, cfg: &SynthConfig) -> Result<SpeedSeries> {
    if cfg.steps == 0 || cfg.period == 0 {
        return Err(Error::InvalidParameter("steps and period must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda {} outside [0, 1]",
            cfg.lambda
        )));
    }
    let noise =
        Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidParameter(format!("noise_std: {e}")))?;
    let n = graph.n_nodes();
    let flow = out_transition(graph).transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let clip = |v: f64| v.clamp(SPEED_CLIP.0, SPEED_CLIP.1);

    let mut values = DenseMatrix::zeros(cfg.steps, n);
    let mut x = DenseMatrix::from_vec(n, 1, seasonal_forcing(cfg, n, 0).into_iter().map(clip).collect())?;
    values.row_mut(0).copy_from_slice(x.as_slice());
    for t in 1..cfg.steps {
        let mixed = spmm(&flow, &x)?;
        let s = seasonal_forcing(cfg, n, t);
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let e = if cfg.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                clip(cfg.lambda * mixed.get(i, 0) + (1.0 - cfg.lambda) * s[i] + e)
            })
            .collect();
        x = DenseMatrix::from_vec(n, 1, next)?;
        values.row_mut(t).copy_from_slice(x.as_slice());
    }
    let timestamps = (0..cfg.steps as i64)
        .map(|t| cfg.start_timestamp + t * cfg.interval_secs)
        .collect();
    SpeedSeries::dense(graph.node_ids().to_vec(), timestamps, values)
}
