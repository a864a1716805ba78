use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

/// A learnable tensor together with its gradient accumulator and Adam
/// moments. All four matrices share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
    pub m: DenseMatrix,
    pub v: DenseMatrix,
    pub step_count: u64,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: DenseMatrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: DenseMatrix::zeros(r, c),
            m: DenseMatrix::zeros(r, c),
            v: DenseMatrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`, where
    /// fan-in is the row count and fan-out the column count.
    GlorotUniform,
    Zeros,
}

/// Glorot bound for a `rows × cols` weight.
pub fn glorot_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

pub fn init_params(
    name: impl Into<String>,
    shape: (usize, usize),
    seed: u64,
    scheme: InitScheme,
) -> ParamTensor {
    let (rows, cols) = shape;
    let value = match scheme {
        InitScheme::Zeros => DenseMatrix::zeros(rows, cols),
        InitScheme::GlorotUniform => {
            let s = glorot_bound(rows, cols);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            DenseMatrix::from_vec(rows, cols, data).expect("length matches shape")
        }
    };
    ParamTensor::new(name, value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: ParamTensor) -> Result<ParamId> {
        if self.params.iter().any(|q| q.name == p.name) {
            return Err(Error::InvalidParameter(format!(
                "duplicate parameter name `{}`",
                p.name
            )));
        }
        self.params.push(p);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn as_slice(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn as_mut_slice(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        check_compatible(self, other)?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Errors unless both stores hold the same parameter names and shapes in the
/// same order.
pub fn check_compatible(expected: &ParamStore, found: &ParamStore) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} tensors, found {}",
            expected.len(),
            found.len()
        )));
    }
    for (a, b) in expected.iter().zip(found.iter()) {
        if a.name != b.name || a.shape() != b.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "expected `{}` {:?}, found `{}` {:?}",
                a.name,
                a.shape(),
                b.name,
                b.shape()
            )));
        }
    }
    Ok(())
}
