//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "DCRNNCKP"
//! version      u32      currently 1
//! meta_count   u32
//!   key        u32 length + UTF-8 bytes
//!   value      u32 length + UTF-8 bytes
//! param_count  u32
//!   name       u32 length + UTF-8 bytes
//!   rows, cols u64, u64
//!   step_count u64
//!   value      rows*cols f64
//!   m          rows*cols f64
//!   v          rows*cols f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::params::{ParamStore, ParamTensor};
use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"DCRNNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub params: ParamStore,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_mat<W: Write>(w: &mut W, m: &DenseMatrix) -> Result<()> {
    for x in m.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::CheckpointMismatch("invalid UTF-8 string".into()))
}

fn read_mat<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let mut data = Vec::with_capacity(rows * cols);
    let mut b = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.metadata.len() as u32).to_le_bytes())?;
        for (k, v) in &self.metadata {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in self.params.iter() {
            write_str(&mut w, &p.name)?;
            let (r, c) = p.shape();
            w.write_all(&(r as u64).to_le_bytes())?;
            w.write_all(&(c as u64).to_le_bytes())?;
            w.write_all(&p.step_count.to_le_bytes())?;
            write_mat(&mut w, &p.value)?;
            write_mat(&mut w, &p.m)?;
            write_mat(&mut w, &p.v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::CheckpointMismatch("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..read_u32(&mut r)? {
            let k = read_str(&mut r)?;
            let v = read_str(&mut r)?;
            metadata.insert(k, v);
        }
        let mut params = ParamStore::new();
        for _ in 0..read_u32(&mut r)? {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let step_count = read_u64(&mut r)?;
            let value = read_mat(&mut r, rows, cols)?;
            let m = read_mat(&mut r, rows, cols)?;
            let v = read_mat(&mut r, rows, cols)?;
            let mut p = ParamTensor::new(name, value);
            p.m = m;
            p.v = v;
            p.step_count = step_count;
            params.add(p)?;
        }
        Ok(Self { metadata, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::{init_params, InitScheme};

    #[test]
    fn round_trip_preserves_everything() {
        let mut params = ParamStore::new();
        let mut p = init_params("enc.0.theta_r", (4, 3), 9, InitScheme::GlorotUniform);
        p.m = DenseMatrix::filled(4, 3, 0.25);
        p.v = DenseMatrix::filled(4, 3, 1e-300);
        p.step_count = 17;
        params.add(p).unwrap();
        params
            .add(init_params("b", (1, 3), 0, InitScheme::Zeros))
            .unwrap();
        let mut metadata = BTreeMap::new();
        metadata.insert("zscore.mean".to_string(), "51.25".to_string());
        let ck = Checkpoint { metadata, params };

        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::read(&buf[..]).unwrap();
        // grads are not stored; they come back zeroed like the originals
        assert_eq!(back, ck);
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        assert!(Checkpoint::read(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::read(&buf[..]),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut params = ParamStore::new();
        params
            .add(init_params("w", (3, 3), 1, InitScheme::GlorotUniform))
            .unwrap();
        let mut buf = Vec::new();
        Checkpoint {
            metadata: BTreeMap::new(),
            params,
        }
        .write(&mut buf)
        .unwrap();
        buf.truncate(buf.len() - 5);
        assert!(Checkpoint::read(&buf[..]).is_err());
    }
}
