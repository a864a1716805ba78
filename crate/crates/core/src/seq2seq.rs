//! Encoder–decoder forecaster built from DCGRU layers, its training loop,
//! and the temporal ablations: a teacher-forced seq2seq model and a
//! feed-forward stack of diffusion convolutions rolled out one step at a
//! time.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    adam_step, check_compatible, clip_grad_norm, init_params, AdamConfig, Checkpoint, ErrorKind, InitScheme,
    LrSchedule, ParamId, ParamStore, Tape, Var,
};
use crate::data::{ForecastSample, ZScore};
use crate::dcgru::{next_seed, record_stacked_step, CellShape, CellVars, DcgruLayer, DcgruState};
use crate::dconv::{Activation, ConvMode, DConvLayerParams, Supports};
use crate::error::{Error, Result};
use crate::graph::WeightedDigraph;
use crate::sparse::DenseMatrix;

/// `ε_i = τ / (τ + exp(i / τ))`, the probability of feeding ground truth to
/// the decoder at iteration `i`.
pub fn sampling_probability(i: u64, tau: f64) -> f64 {
    tau / (tau + (i as f64 / tau).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSchedule {
    pub tau: f64,
    pub iteration: u64,
}

impl SamplingSchedule {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {tau}"
            )));
        }
        Ok(Self { tau, iteration: 0 })
    }

    pub fn epsilon(&self) -> f64 {
        sampling_probability(self.iteration, self.tau)
    }

    pub fn advance(&mut self) {
        self.iteration += 1;
    }
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::InvalidParameter(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        s
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curriculum {
    AlwaysTruth,
    AlwaysModel,
    Scheduled,
}

named_enum!(Curriculum {
    AlwaysTruth => "always_truth",
    AlwaysModel => "always_model",
    Scheduled => "scheduled",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalMode {
    /// Encoder–decoder trained with the configured curriculum.
    Dcrnn,
    /// Encoder–decoder always trained with teacher forcing.
    DcrnnSeq,
    /// Stacked diffusion convolutions over the concatenated history.
    Dcnn,
}

named_enum!(TemporalMode {
    Dcrnn => "dcrnn",
    DcrnnSeq => "dcrnn_seq",
    Dcnn => "dcnn",
});

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Input frames `T′`.
    pub history: usize,
    /// Output frames `T`.
    pub horizon: usize,
    /// Channels per node and frame; channel 0 is the forecast quantity.
    pub input_dim: usize,
    pub layers: usize,
    pub units: usize,
    pub k_max: usize,
    pub conv_mode: ConvMode,
    pub curriculum: Curriculum,
    pub temporal_mode: TemporalMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history: 12,
            horizon: 12,
            input_dim: 1,
            layers: 2,
            units: 64,
            k_max: 3,
            conv_mode: ConvMode::Bidirectional,
            curriculum: Curriculum::Scheduled,
            temporal_mode: TemporalMode::Dcrnn,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("history", self.history),
            ("horizon", self.horizon),
            ("input_dim", self.input_dim),
            ("layers", self.layers),
            ("units", self.units),
            ("k_max", self.k_max),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::InvalidParameter(format!("{name} must be at least 1"))),
            None => Ok(()),
        }
    }

    /// Probability of feeding ground truth at training iteration `i`.
    pub fn train_epsilon(&self, i: u64, tau: f64) -> f64 {
        match (self.temporal_mode, self.curriculum) {
            (TemporalMode::DcrnnSeq | TemporalMode::Dcnn, _) | (_, Curriculum::AlwaysTruth) => 1.0,
            (_, Curriculum::AlwaysModel) => 0.0,
            (_, Curriculum::Scheduled) => sampling_probability(i, tau),
        }
    }

    pub fn to_metadata(&self) -> BTreeMap<String, String> {
        [
            ("model.history", self.history.to_string()),
            ("model.horizon", self.horizon.to_string()),
            ("model.input_dim", self.input_dim.to_string()),
            ("model.layers", self.layers.to_string()),
            ("model.units", self.units.to_string()),
            ("model.k_max", self.k_max.to_string()),
            ("model.conv_mode", self.conv_mode.name().to_string()),
            ("model.curriculum", self.curriculum.name().to_string()),
            ("model.temporal_mode", self.temporal_mode.name().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::CheckpointMismatch(format!("metadata key `{k}` missing")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::CheckpointMismatch(format!("metadata key `{k}` is not a count")))
        };
        let cfg = Self {
            history: num("model.history")?,
            horizon: num("model.horizon")?,
            input_dim: num("model.input_dim")?,
            layers: num("model.layers")?,
            units: num("model.units")?,
            k_max: num("model.k_max")?,
            conv_mode: get("model.conv_mode")?.parse()?,
            curriculum: get("model.curriculum")?.parse()?,
            temporal_mode: get("model.temporal_mode")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Minibatch with `B` samples stacked as `B` blocks of `N` rows per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub n_nodes: usize,
    pub inputs: Vec<DenseMatrix>,
    pub targets: Vec<DenseMatrix>,
    pub masks: Vec<DenseMatrix>,
    pub target_aux: Vec<DenseMatrix>,
}

fn stack(frames: &[&[DenseMatrix]], t: usize) -> Result<DenseMatrix> {
    let parts: Vec<&DenseMatrix> = frames.iter().map(|f| &f[t]).collect();
    DenseMatrix::vcat(&parts)
}

impl Batch {
    pub fn from_samples(samples: &[&ForecastSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
        let (h, t) = (first.inputs.len(), first.targets.len());
        if samples.iter().any(|s| {
            s.inputs.len() != h || s.targets.len() != t || s.target_mask.len() != t || s.target_aux.len() != t
        }) {
            return Err(Error::InvalidParameter(
                "samples in a batch differ in window length".into(),
            ));
        }
        let collect = |f: fn(&ForecastSample) -> &[DenseMatrix], len: usize| -> Result<Vec<DenseMatrix>> {
            let frames: Vec<&[DenseMatrix]> = samples.iter().map(|s| f(s)).collect();
            (0..len).map(|i| stack(&frames, i)).collect()
        };
        Ok(Self {
            size: samples.len(),
            n_nodes: first.n_nodes(),
            inputs: collect(|s| &s.inputs, h)?,
            targets: collect(|s| &s.targets, t)?,
            masks: collect(|s| &s.target_mask, t)?,
            target_aux: collect(|s| &s.target_aux, t)?,
        })
    }
}

/// One feed-forward diffusion-convolution layer with a bias.
#[derive(Debug, Clone, PartialEq)]
struct ConvStage {
    theta: ParamId,
    bias: ParamId,
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
enum Architecture {
    Recurrent {
        encoder: Vec<DcgruLayer>,
        decoder: Vec<DcgruLayer>,
        proj_w: ParamId,
        proj_b: ParamId,
    },
    Feedforward {
        stages: Vec<ConvStage>,
    },
}

/// A forecaster with its weights.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    supports: Supports,
    params: ParamStore,
    arch: Architecture,
}

impl Model {
    pub fn new(config: ModelConfig, graph: &WeightedDigraph, seed: u64) -> Result<Self> {
        let supports = Supports::from_graph(graph, config.conv_mode)?;
        Self::with_supports(config, supports, seed)
    }

    /// Builds the parameter set in a fixed order. Weight matrices are
    /// Glorot-uniform with seeds derived from `seed`; biases start at zero.
    pub fn with_supports(config: ModelConfig, supports: Supports, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut s = seed;
        let arch = match config.temporal_mode {
            TemporalMode::Dcrnn | TemporalMode::DcrnnSeq => {
                let stack = |params: &mut ParamStore, prefix: &str, s: &mut u64| {
                    (0..config.layers)
                        .map(|l| {
                            let shape = CellShape {
                                input_dim: if l == 0 { config.input_dim } else { config.units },
                                units: config.units,
                                k_max: config.k_max,
                                mode: config.conv_mode,
                            };
                            DcgruLayer::register(params, &format!("{prefix}.{l}"), shape, s)
                        })
                        .collect::<Result<Vec<_>>>()
                };
                let encoder = stack(&mut params, "enc", &mut s)?;
                let decoder = stack(&mut params, "dec", &mut s)?;
                s = next_seed(s);
                let proj_w = params.add(init_params(
                    "proj.weight",
                    (config.units, 1),
                    s,
                    InitScheme::GlorotUniform,
                ))?;
                let proj_b = params.add(init_params("proj.bias", (1, 1), 0, InitScheme::Zeros))?;
                Architecture::Recurrent {
                    encoder,
                    decoder,
                    proj_w,
                    proj_b,
                }
            }
            TemporalMode::Dcnn => {
                let bases = config.conv_mode.num_bases(config.k_max);
                let mut stages = Vec::with_capacity(config.layers);
                for l in 0..config.layers {
                    let input_dim = if l == 0 {
                        config.history * config.input_dim
                    } else {
                        config.units
                    };
                    let last = l + 1 == config.layers;
                    let output_dim = if last { 1 } else { config.units };
                    s = next_seed(s);
                    let theta = params.add(init_params(
                        format!("dcnn.{l}.theta"),
                        (bases * input_dim, output_dim),
                        s,
                        InitScheme::GlorotUniform,
                    ))?;
                    let bias = params.add(init_params(
                        format!("dcnn.{l}.bias"),
                        (1, output_dim),
                        0,
                        InitScheme::Zeros,
                    ))?;
                    stages.push(ConvStage {
                        theta,
                        bias,
                        input_dim,
                        output_dim,
                        activation: if last {
                            Activation::Identity
                        } else {
                            Activation::Relu
                        },
                    });
                }
                Architecture::Feedforward { stages }
            }
        };
        Ok(Self {
            config,
            supports,
            params,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn supports(&self) -> &Supports {
        &self.supports
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Recurrent layers of the encoder and decoder; empty for the
    /// feed-forward variant.
    pub fn recurrent_layers(&self) -> (&[DcgruLayer], &[DcgruLayer]) {
        match &self.arch {
            Architecture::Recurrent { encoder, decoder, .. } => (encoder, decoder),
            Architecture::Feedforward { .. } => (&[], &[]),
        }
    }

    /// Convolution weights of the feed-forward stages.
    pub fn feedforward_layers(&self) -> Vec<DConvLayerParams> {
        match &self.arch {
            Architecture::Recurrent { .. } => Vec::new(),
            Architecture::Feedforward { stages } => stages
                .iter()
                .map(|st| DConvLayerParams {
                    theta: self.params.get(st.theta).value.clone(),
                    input_dim: st.input_dim,
                    output_dim: st.output_dim,
                    k_max: self.config.k_max,
                    mode: self.config.conv_mode,
                    activation: st.activation,
                })
                .collect(),
        }
    }

    pub fn to_checkpoint(&self, zscore: Option<&ZScore>) -> Checkpoint {
        let mut metadata = self.config.to_metadata();
        metadata.insert("graph.nodes".into(), self.supports.n_nodes().to_string());
        if let Some(z) = zscore {
            metadata.insert("zscore.mean".into(), z.mean.to_string());
            metadata.insert("zscore.std".into(), z.std.to_string());
        }
        Checkpoint {
            metadata,
            params: self.params.clone(),
        }
    }

    /// Replaces weights and optimizer state with those of `ck`, after
    /// checking that every tensor name and shape matches this model.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        if let Some(n) = ck.metadata.get("graph.nodes") {
            if n != &self.supports.n_nodes().to_string() {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint is for {n} nodes, graph has {}",
                    self.supports.n_nodes()
                )));
            }
        }
        check_compatible(&self.params, &ck.params)?;
        self.params = ck.params.clone();
        self.params.zero_grad();
        Ok(())
    }

    /// Model rebuilt from a checkpoint's metadata and weights.
    pub fn from_checkpoint(ck: &Checkpoint, graph: &WeightedDigraph) -> Result<Self> {
        let config = ModelConfig::from_metadata(&ck.metadata)?;
        let mut model = Self::new(config, graph, 0)?;
        model.load_checkpoint(ck)?;
        Ok(model)
    }

    fn bind_layers(&self, tape: &mut Tape, layers: &[DcgruLayer]) -> Vec<CellVars> {
        layers.iter().map(|l| l.bind(tape, &self.params)).collect()
    }

    fn check_frames(
        &self,
        frames: &[DenseMatrix],
        expect_len: usize,
        cols: usize,
        what: &str,
    ) -> Result<usize> {
        if frames.len() != expect_len {
            return Err(Error::InvalidParameter(format!(
                "expected {expect_len} {what} frames, got {}",
                frames.len()
            )));
        }
        let rows = frames.first().map_or(0, DenseMatrix::n_rows);
        let n = self.supports.n_nodes();
        for f in frames {
            if f.n_rows() != rows || f.n_cols() != cols || n == 0 || !rows.is_multiple_of(n) {
                return Err(Error::DimensionMismatch {
                    op: "model input",
                    left: f.shape(),
                    right: (rows, cols),
                });
            }
        }
        Ok(rows)
    }

    /// Auxiliary channels are only read when `P > 1`.
    fn check_aux(&self, aux: &[DenseMatrix], rows: usize) -> Result<()> {
        if self.config.input_dim == 1 {
            return Ok(());
        }
        let aux_rows = self.check_frames(aux, self.config.horizon, self.config.input_dim - 1, "auxiliary")?;
        if aux_rows != rows {
            return Err(Error::DimensionMismatch {
                op: "auxiliary frames",
                left: (rows, self.config.input_dim),
                right: (aux_rows, self.config.input_dim - 1),
            });
        }
        Ok(())
    }

    fn record_encode(&self, tape: &mut Tape, inputs: &[DenseMatrix]) -> Result<Vec<Var>> {
        let Architecture::Recurrent { encoder, .. } = &self.arch else {
            return Err(Error::InvalidParameter(
                "feed-forward model has no encoder".into(),
            ));
        };
        let rows = self.check_frames(inputs, self.config.history, self.config.input_dim, "input")?;
        let cells = self.bind_layers(tape, encoder);
        let mut state: Vec<Var> = encoder
            .iter()
            .map(|l| tape.constant(DenseMatrix::zeros(rows, l.shape.units)))
            .collect();
        for x in inputs {
            let xv = tape.constant(x.clone());
            record_stacked_step(tape, &cells, &self.supports, xv, &mut state)?;
        }
        Ok(state)
    }

    /// Decoder rollout. `targets` holds ground truth for each output step and
    /// must be present when `epsilon > 0`; `aux` holds the auxiliary input
    /// channels of each output step (`rows × (P - 1)`).
    #[allow(clippy::too_many_arguments)]
    fn record_decode(
        &self,
        tape: &mut Tape,
        mut state: Vec<Var>,
        targets: Option<&[DenseMatrix]>,
        aux: &[DenseMatrix],
        epsilon: f64,
        rng: &mut ChaCha8Rng,
        block_rows: usize,
    ) -> Result<Vec<Var>> {
        let Architecture::Recurrent {
            decoder,
            proj_w,
            proj_b,
            ..
        } = &self.arch
        else {
            return Err(Error::InvalidParameter(
                "feed-forward model has no decoder".into(),
            ));
        };
        let cfg = &self.config;
        let rows = tape.value(state[0]).n_rows();
        if epsilon > 0.0 {
            let t = targets.ok_or_else(|| {
                Error::InvalidParameter(format!("epsilon {epsilon} needs ground-truth targets"))
            })?;
            self.check_frames(t, cfg.horizon, 1, "target")?;
        }
        self.check_aux(aux, rows)?;

        let cells = self.bind_layers(tape, decoder);
        let w = tape.param(&self.params, *proj_w);
        let b = tape.param(&self.params, *proj_b);
        let mut input = tape.constant(DenseMatrix::zeros(rows, cfg.input_dim));
        let mut outputs = Vec::with_capacity(cfg.horizon);
        for t in 0..cfg.horizon {
            let top = record_stacked_step(tape, &cells, &self.supports, input, &mut state)?;
            let y = tape.matmul(top, w)?;
            let y = tape.add_row_broadcast(y, b)?;
            outputs.push(y);
            if t + 1 == cfg.horizon {
                break;
            }
            let speed = self.choose_feedback(tape, y, targets.map(|tg| &tg[t]), epsilon, rng, block_rows)?;
            input = if cfg.input_dim > 1 {
                let a = tape.constant(aux[t].clone());
                tape.concat_cols(&[speed, a])?
            } else {
                speed
            };
        }
        Ok(outputs)
    }

    /// Per-sample coin: ground truth with probability `epsilon`, else the
    /// prediction. With `epsilon` of exactly 0 or 1 no randomness is drawn.
    fn choose_feedback(
        &self,
        tape: &mut Tape,
        pred: Var,
        truth: Option<&DenseMatrix>,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
        block_rows: usize,
    ) -> Result<Var> {
        let truth = match truth {
            Some(t) if epsilon > 0.0 => t,
            _ => return Ok(pred),
        };
        if epsilon >= 1.0 {
            return Ok(tape.constant(truth.clone()));
        }
        let rows = truth.n_rows();
        let coins: Vec<bool> = (0..rows / block_rows)
            .map(|_| rng.random::<f64>() < epsilon)
            .collect();
        if coins.iter().all(|&c| c) {
            return Ok(tape.constant(truth.clone()));
        }
        if !coins.iter().any(|&c| c) {
            return Ok(pred);
        }
        let mut keep_pred = DenseMatrix::zeros(rows, 1);
        let mut from_truth = DenseMatrix::zeros(rows, 1);
        for (s, &c) in coins.iter().enumerate() {
            for r in s * block_rows..(s + 1) * block_rows {
                if c {
                    from_truth.set(r, 0, truth.get(r, 0));
                } else {
                    keep_pred.set(r, 0, 1.0);
                }
            }
        }
        let keep = tape.constant(keep_pred);
        let kept = tape.mul(pred, keep)?;
        let fixed = tape.constant(from_truth);
        tape.add(kept, fixed)
    }

    fn record_dcnn_step(&self, tape: &mut Tape, window: &[Var]) -> Result<Var> {
        let Architecture::Feedforward { stages } = &self.arch else {
            return Err(Error::InvalidParameter(
                "recurrent model has no feed-forward stages".into(),
            ));
        };
        let mut x = if window.len() == 1 {
            window[0]
        } else {
            tape.concat_cols(window)?
        };
        for st in stages {
            let theta = tape.param(&self.params, st.theta);
            let bias = tape.param(&self.params, st.bias);
            let z = self
                .supports
                .features(tape, x, self.config.conv_mode, self.config.k_max)?;
            let y = tape.matmul(z, theta)?;
            let y = tape.add_row_broadcast(y, bias)?;
            x = st.activation.record(tape, y);
        }
        Ok(x)
    }

    /// Autoregressive rollout of the feed-forward model for `steps` frames.
    #[allow(clippy::needless_range_loop)]
    fn record_dcnn_rollout(
        &self,
        tape: &mut Tape,
        inputs: &[DenseMatrix],
        aux: &[DenseMatrix],
        steps: usize,
    ) -> Result<Vec<Var>> {
        let cfg = &self.config;
        let rows = self.check_frames(inputs, cfg.history, cfg.input_dim, "input")?;
        self.check_aux(aux, rows)?;
        let mut window: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let y = self.record_dcnn_step(tape, &window)?;
            outputs.push(y);
            if t + 1 == steps {
                break;
            }
            let frame = if cfg.input_dim > 1 {
                let a = tape.constant(aux[t].clone());
                tape.concat_cols(&[y, a])?
            } else {
                y
            };
            window.remove(0);
            window.push(frame);
        }
        Ok(outputs)
    }

    /// Records a forward pass over `batch`. In training the recurrent models
    /// decode all `T` steps with feedback chosen by `epsilon`, and the
    /// feed-forward model predicts one step ahead. Otherwise every model
    /// produces `T` free-running outputs.
    pub fn record_forward(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
        training: bool,
    ) -> Result<Vec<Var>> {
        match self.arch {
            Architecture::Recurrent { .. } => {
                let state = self.record_encode(tape, &batch.inputs)?;
                let eps = if training { epsilon } else { 0.0 };
                self.record_decode(
                    tape,
                    state,
                    Some(&batch.targets),
                    &batch.target_aux,
                    eps,
                    rng,
                    batch.n_nodes,
                )
            }
            Architecture::Feedforward { .. } => {
                let steps = if training { 1 } else { self.config.horizon };
                self.record_dcnn_rollout(tape, &batch.inputs, &batch.target_aux, steps)
            }
        }
    }

    /// Final encoder state after consuming `inputs` in order.
    pub fn encode(&self, inputs: &[DenseMatrix]) -> Result<DcgruState> {
        let mut tape = Tape::new();
        let state = self.record_encode(&mut tape, inputs)?;
        Ok(DcgruState {
            hidden: state.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    /// Decoder outputs (`T` frames of `rows × 1`) from an encoder state.
    pub fn decode(
        &self,
        state: &DcgruState,
        targets: Option<&[DenseMatrix]>,
        aux: &[DenseMatrix],
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<DenseMatrix>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = state.hidden.iter().map(|h| tape.constant(h.clone())).collect();
        if vars.len() != self.config.layers {
            return Err(Error::InvalidParameter(format!(
                "state has {} layers, model has {}",
                vars.len(),
                self.config.layers
            )));
        }
        let n = self.supports.n_nodes();
        let out = self.record_decode(&mut tape, vars, targets, aux, epsilon, rng, n)?;
        Ok(out.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// One-step prediction of the feed-forward model from `T′` frames.
    pub fn dcnn_forward(&self, inputs: &[DenseMatrix]) -> Result<DenseMatrix> {
        let mut tape = Tape::new();
        self.check_frames(inputs, self.config.history, self.config.input_dim, "input")?;
        let window: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = self.record_dcnn_step(&mut tape, &window)?;
        Ok(tape.value(y).clone())
    }

    /// Free-running normalized forecast of `T` frames from `T′` inputs.
    /// `aux` carries the auxiliary channels of the output steps and is empty
    /// when `P = 1`.
    pub fn forecast(&self, inputs: &[DenseMatrix], aux: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
        let mut tape = Tape::new();
        let outputs = match self.arch {
            Architecture::Recurrent { .. } => {
                let state = self.record_encode(&mut tape, inputs)?;
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let n = self.supports.n_nodes();
                self.record_decode(&mut tape, state, None, aux, 0.0, &mut rng, n)?
            }
            Architecture::Feedforward { .. } => {
                self.record_dcnn_rollout(&mut tape, inputs, aux, self.config.horizon)?
            }
        };
        Ok(outputs.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Free-running forecast for one sample, in physical units.
    pub fn predict(&self, sample: &ForecastSample, zscore: &ZScore) -> Result<Vec<DenseMatrix>> {
        Ok(self
            .forecast(&sample.inputs, &sample.target_aux)?
            .iter()
            .map(|m| zscore.invert_matrix(m))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mae,
    Mse,
}

impl LossKind {
    fn error_kind(self) -> ErrorKind {
        match self {
            LossKind::Mae => ErrorKind::Absolute,
            LossKind::Mse => ErrorKind::Squared,
        }
    }
}

named_enum!(LossKind {
    Mae => "mae",
    Mse => "mse",
});

/// Sum of masked errors over `outputs` and the number of observed entries.
pub fn record_masked_loss(
    tape: &mut Tape,
    outputs: &[Var],
    batch: &Batch,
    kind: LossKind,
) -> Result<(Var, f64)> {
    let mut total: Option<Var> = None;
    let mut count = 0.0;
    for (t, &y) in outputs.iter().enumerate() {
        let e = tape.masked_error_sum(y, &batch.targets[t], &batch.masks[t], kind.error_kind())?;
        count += batch.masks[t].sum();
        total = Some(match total {
            Some(acc) => tape.add(acc, e)?,
            None => e,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidParameter("no outputs to score".into()))?;
    Ok((total, count))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
    pub tau: f64,
    pub seed: u64,
    pub lr_decay_start: usize,
    pub lr_decay_period: usize,
    pub lr_decay_factor: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub loss: LossKind,
    /// Stop once the epoch's training loss falls below this value.
    pub target_train_loss: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 64,
            epochs: 100,
            patience: 50,
            tau: 3000.0,
            seed: 0,
            lr_decay_start: 20,
            lr_decay_period: 10,
            lr_decay_factor: 0.1,
            max_grad_norm: None,
            loss: LossKind::Mae,
            target_train_loss: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.lr,
            start_epoch: self.lr_decay_start,
            period: self.lr_decay_period,
            factor: self.lr_decay_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Ground-truth feeding probability at the end of the epoch.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub iterations: u64,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    /// Writes `epoch,train_loss,val_loss,lr,epsilon` records with
    /// shortest round-trip float formatting.
    pub fn write_trace<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,lr,epsilon")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.lr, e.epsilon
            )?;
        }
        Ok(())
    }
}

/// Mean free-running masked error over every output step of `samples`, at
/// the model's current weights.
pub fn dataset_loss(
    model: &Model,
    samples: &[ForecastSample],
    batch_size: usize,
    kind: LossKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut count) = (0.0, 0.0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&ForecastSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        tape.clear();
        let out = model.record_forward(&mut tape, &batch, 0.0, &mut rng, false)?;
        let (loss, c) = record_masked_loss(&mut tape, &out, &batch, kind)?;
        total += tape.value(loss).get(0, 0);
        count += c;
    }
    tape.clear();
    if count == 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count)
}

/// Free-running forecasts for every sample, as `T` frames of
/// `N × len(samples)` in normalized units (column `s` is sample `s`).
pub fn forecast_samples(
    model: &Model,
    samples: &[ForecastSample],
    batch_size: usize,
) -> Result<Vec<DenseMatrix>> {
    let n = model.supports().n_nodes();
    let horizon = model.config().horizon;
    let mut out = vec![DenseMatrix::zeros(n, samples.len()); horizon];
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (c, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&ForecastSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        tape.clear();
        let ys = model.record_forward(&mut tape, &batch, 0.0, &mut rng, false)?;
        for (t, &y) in ys.iter().enumerate() {
            let v = tape.value(y);
            for s in 0..chunk.len() {
                for i in 0..n {
                    out[t].set(i, c * batch_size.max(1) + s, v.get(s * n + i, 0));
                }
            }
        }
    }
    Ok(out)
}

/// Minibatch training with Adam, step-decayed learning rate, curriculum
/// sampling and early stopping. On return the model holds the weights of the
/// best validation epoch. `on_epoch` sees each record as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &[ForecastSample],
    val_set: &[ForecastSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let started = Instant::now();
    let schedule = cfg.schedule();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coin_rng = ChaCha8Rng::seed_from_u64(next_seed(cfg.seed ^ 0x5EED_C011));
    let mut tape = Tape::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut iteration: u64 = 0;
    let mut records = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = schedule.at(epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut err_total, mut err_count) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&ForecastSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_samples(&refs)?;
            let eps = model.config.train_epsilon(iteration, cfg.tau);
            tape.clear();
            let outputs = model.record_forward(&mut tape, &batch, eps, &mut coin_rng, true)?;
            let (sum, count) = record_masked_loss(&mut tape, &outputs, &batch, cfg.loss)?;
            let sum_value = tape.value(sum).get(0, 0);
            if !sum_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration: iteration as usize,
                    loss: sum_value,
                });
            }
            if count > 0.0 {
                let loss = tape.scale(sum, 1.0 / count);
                tape.backward(loss, &mut model.params)?;
                if let Some(max) = cfg.max_grad_norm {
                    clip_grad_norm(model.params.as_mut_slice(), max);
                }
                adam_step(model.params.as_mut_slice(), lr, cfg.adam)?;
                model.params.zero_grad();
            }
            err_total += sum_value;
            err_count += count;
            iteration += 1;
        }
        tape.clear();
        let train_loss = if err_count > 0.0 {
            err_total / err_count
        } else {
            0.0
        };
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            dataset_loss(model, val_set, cfg.batch_size, LossKind::Mae)?
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                iteration: iteration as usize,
                loss: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            epsilon: model.config.train_epsilon(iteration, cfg.tau),
        };
        on_epoch(&record);
        records.push(record);

        let improved = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
        if improved {
            best = Some((epoch, val_loss, model.params.clone()));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if cfg.target_train_loss.is_some_and(|t| train_loss < t) {
            stopped_early = true;
            break;
        }
        if epoch - best_epoch >= cfg.patience {
            stopped_early = true;
            break;
        }
    }

    let best_epoch = match best {
        Some((epoch, _, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainReport {
        epochs: records,
        best_epoch,
        iterations: iteration,
        stopped_early,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
