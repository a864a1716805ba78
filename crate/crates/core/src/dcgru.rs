//! Gated recurrent unit whose affine maps are diffusion convolutions.
//!
//! ```text
//! r = σ(Θ_r ⋆ [x, h] + b_r)
//! u = σ(Θ_u ⋆ [x, h] + b_u)
//! c = tanh(Θ_c ⋆ [x, r ⊙ h] + b_c)
//! h' = u ⊙ h + (1 - u) ⊙ c
//! ```
//!
//! Signals are stacks of `B` blocks of `N` node rows, so one recorded cell
//! step advances a whole minibatch.

use crate::autodiff::{init_params, InitScheme, ParamId, ParamStore, Tape, Var};
use crate::dconv::{Activation, ConvMode, DConvLayerParams, Supports};
use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

/// Shape of one recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellShape {
    pub input_dim: usize,
    pub units: usize,
    pub k_max: usize,
    pub mode: ConvMode,
}

impl CellShape {
    /// Rows of each gate's weight matrix.
    pub fn theta_rows(&self) -> usize {
        self.mode.num_bases(self.k_max) * (self.input_dim + self.units)
    }
}

/// Plain-value weights of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DcgruParams {
    pub shape: CellShape,
    pub theta_r: DenseMatrix,
    pub theta_u: DenseMatrix,
    pub theta_c: DenseMatrix,
    pub bias_r: DenseMatrix,
    pub bias_u: DenseMatrix,
    pub bias_c: DenseMatrix,
}

impl DcgruParams {
    pub fn zeros(shape: CellShape) -> Self {
        let rows = shape.theta_rows();
        let q = shape.units;
        Self {
            shape,
            theta_r: DenseMatrix::zeros(rows, q),
            theta_u: DenseMatrix::zeros(rows, q),
            theta_c: DenseMatrix::zeros(rows, q),
            bias_r: DenseMatrix::zeros(1, q),
            bias_u: DenseMatrix::zeros(1, q),
            bias_c: DenseMatrix::zeros(1, q),
        }
    }

    fn bind(&self, tape: &mut Tape) -> CellVars {
        CellVars {
            shape: self.shape,
            theta_r: tape.constant(self.theta_r.clone()),
            theta_u: tape.constant(self.theta_u.clone()),
            theta_c: tape.constant(self.theta_c.clone()),
            bias_r: tape.constant(self.bias_r.clone()),
            bias_u: tape.constant(self.bias_u.clone()),
            bias_c: tape.constant(self.bias_c.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Reset,
    Update,
    Candidate,
}

/// A cell whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct DcgruLayer {
    pub shape: CellShape,
    pub theta_r: ParamId,
    pub theta_u: ParamId,
    pub theta_c: ParamId,
    pub bias_r: ParamId,
    pub bias_u: ParamId,
    pub bias_c: ParamId,
}

impl DcgruLayer {
    /// Registers the six tensors as `{prefix}.theta_r`, `{prefix}.bias_r`, …
    /// with Glorot-uniform gate weights and zero biases. `seed` is advanced
    /// once per tensor.
    pub fn register(store: &mut ParamStore, prefix: &str, shape: CellShape, seed: &mut u64) -> Result<Self> {
        let rows = shape.theta_rows();
        let q = shape.units;
        let mut weight = |store: &mut ParamStore, name: &str| {
            *seed = next_seed(*seed);
            store.add(init_params(
                format!("{prefix}.{name}"),
                (rows, q),
                *seed,
                InitScheme::GlorotUniform,
            ))
        };
        let theta_r = weight(store, "theta_r")?;
        let theta_u = weight(store, "theta_u")?;
        let theta_c = weight(store, "theta_c")?;
        let mut bias = |name: &str| {
            store.add(init_params(
                format!("{prefix}.{name}"),
                (1, q),
                0,
                InitScheme::Zeros,
            ))
        };
        Ok(Self {
            shape,
            theta_r,
            theta_u,
            theta_c,
            bias_r: bias("bias_r")?,
            bias_u: bias("bias_u")?,
            bias_c: bias("bias_c")?,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> CellVars {
        CellVars {
            shape: self.shape,
            theta_r: tape.param(store, self.theta_r),
            theta_u: tape.param(store, self.theta_u),
            theta_c: tape.param(store, self.theta_c),
            bias_r: tape.param(store, self.bias_r),
            bias_u: tape.param(store, self.bias_u),
            bias_c: tape.param(store, self.bias_c),
        }
    }

    pub fn snapshot(&self, store: &ParamStore) -> DcgruParams {
        DcgruParams {
            shape: self.shape,
            theta_r: store.get(self.theta_r).value.clone(),
            theta_u: store.get(self.theta_u).value.clone(),
            theta_c: store.get(self.theta_c).value.clone(),
            bias_r: store.get(self.bias_r).value.clone(),
            bias_u: store.get(self.bias_u).value.clone(),
            bias_c: store.get(self.bias_c).value.clone(),
        }
    }

    /// One gate's weights as a convolution layer over the concatenated
    /// `[x, h]` features.
    pub fn gate_layer(&self, store: &ParamStore, gate: Gate) -> DConvLayerParams {
        let id = match gate {
            Gate::Reset => self.theta_r,
            Gate::Update => self.theta_u,
            Gate::Candidate => self.theta_c,
        };
        DConvLayerParams {
            theta: store.get(id).value.clone(),
            input_dim: self.shape.input_dim + self.shape.units,
            output_dim: self.shape.units,
            k_max: self.shape.k_max,
            mode: self.shape.mode,
            activation: Activation::Identity,
        }
    }
}

/// SplitMix64 step, used to derive per-tensor seeds from one model seed.
pub fn next_seed(s: u64) -> u64 {
    let mut z = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cell weights recorded on a tape for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub shape: CellShape,
    pub theta_r: Var,
    pub theta_u: Var,
    pub theta_c: Var,
    pub bias_r: Var,
    pub bias_u: Var,
    pub bias_c: Var,
}

/// Graph convolution of `x` under `mode` followed by the linear map `theta`,
/// with no activation.
pub fn conv_dispatch(
    tape: &mut Tape,
    supports: &Supports,
    mode: ConvMode,
    k_max: usize,
    x: Var,
    theta: Var,
) -> Result<Var> {
    let z = supports.features(tape, x, mode, k_max)?;
    tape.matmul(z, theta)
}

/// Records one cell step on the tape.
pub fn record_cell(tape: &mut Tape, cell: &CellVars, supports: &Supports, x: Var, h: Var) -> Result<Var> {
    let s = cell.shape;
    let (xr, xc) = tape.value(x).shape();
    let (hr, hc) = tape.value(h).shape();
    if xc != s.input_dim || hc != s.units || xr != hr || xr % supports.n_nodes().max(1) != 0 {
        return Err(Error::DimensionMismatch {
            op: "dcgru_cell",
            left: (xr, xc),
            right: (hr, hc),
        });
    }

    let xh = tape.concat_cols(&[x, h])?;
    let z = supports.features(tape, xh, s.mode, s.k_max)?;
    let r_pre = tape.matmul(z, cell.theta_r)?;
    let r_pre = tape.add_row_broadcast(r_pre, cell.bias_r)?;
    let r = tape.sigmoid(r_pre);
    let u_pre = tape.matmul(z, cell.theta_u)?;
    let u_pre = tape.add_row_broadcast(u_pre, cell.bias_u)?;
    let u = tape.sigmoid(u_pre);

    let rh = tape.mul(r, h)?;
    let xrh = tape.concat_cols(&[x, rh])?;
    let c_pre = conv_dispatch(tape, supports, s.mode, s.k_max, xrh, cell.theta_c)?;
    let c_pre = tape.add_row_broadcast(c_pre, cell.bias_c)?;
    let c = tape.tanh(c_pre);

    let keep = tape.mul(u, h)?;
    let one_minus_u = tape.one_minus(u);
    let fresh = tape.mul(one_minus_u, c)?;
    tape.add(keep, fresh)
}

/// Feeds `x` through every layer in turn, replacing each layer's hidden
/// state. Returns the top layer's new hidden state.
pub fn record_stacked_step(
    tape: &mut Tape,
    layers: &[CellVars],
    supports: &Supports,
    x: Var,
    state: &mut [Var],
) -> Result<Var> {
    if layers.len() != state.len() || layers.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} layers but {} hidden states",
            layers.len(),
            state.len()
        )));
    }
    let mut input = x;
    for (layer, h) in layers.iter().zip(state.iter_mut()) {
        *h = record_cell(tape, layer, supports, input, *h)?;
        input = *h;
    }
    Ok(input)
}

/// Hidden state of a layer stack, one `N × Q` (or `B·N × Q`) matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DcgruState {
    pub hidden: Vec<DenseMatrix>,
}

impl DcgruState {
    pub fn zeros(rows: usize, layers: &[CellShape]) -> Self {
        Self {
            hidden: layers.iter().map(|s| DenseMatrix::zeros(rows, s.units)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().all(DenseMatrix::is_finite)
    }
}

/// One cell step on plain values.
pub fn dcgru_cell(
    x: &DenseMatrix,
    h_prev: &DenseMatrix,
    params: &DcgruParams,
    supports: &Supports,
) -> Result<DenseMatrix> {
    let mut tape = Tape::new();
    let cell = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let out = record_cell(&mut tape, &cell, supports, xv, hv)?;
    Ok(tape.value(out).clone())
}

/// One stacked step on plain values; returns the top output and new state.
pub fn stacked_step(
    x: &DenseMatrix,
    state: &DcgruState,
    layers: &[DcgruParams],
    supports: &Supports,
) -> Result<(DenseMatrix, DcgruState)> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[1].shape.input_dim != pair[0].shape.units {
            return Err(Error::InvalidParameter(format!(
                "layer {} expects {} inputs but layer {} has {} units",
                i + 1,
                pair[1].shape.input_dim,
                i,
                pair[0].shape.units
            )));
        }
    }
    let mut tape = Tape::new();
    let cells: Vec<CellVars> = layers.iter().map(|l| l.bind(&mut tape)).collect();
    let xv = tape.constant(x.clone());
    let mut hs: Vec<Var> = state.hidden.iter().map(|h| tape.constant(h.clone())).collect();
    let top = record_stacked_step(&mut tape, &cells, supports, xv, &mut hs)?;
    let out = tape.value(top).clone();
    let hidden = hs.iter().map(|&h| tape.value(h).clone()).collect();
    Ok((out, DcgruState { hidden }))
}
