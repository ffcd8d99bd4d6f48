//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic "KBCK" | version u32 | dtype u8 | parameter count u32
//! per parameter: name length u32 | name UTF-8 | rank u32 | dims u64 x rank | values
//! adam flag u8 | [step u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64 | m values | v values]
//! config length u32 | config UTF-8 (key=value lines)
//! ```
//!
//! Values are IEEE-754 in the header's dtype, row-major.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::adam::{Adam, AdamConfig};
use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::real::{Dtype, Real};

const MAGIC: &[u8; 4] = b"KBCK";
const VERSION: u32 = 1;

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub params: Vec<(String, ArrayD<T>)>,
    pub adam: Option<Adam<T>>,
    pub config: String,
}

pub fn write_checkpoint<T: Real>(
    path: &Path,
    store: &ParamStore<T>,
    adam: Option<&Adam<T>>,
    config: &str,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.as_standard_layout().iter() {
            v.write_le(&mut out);
        }
    }
    match adam {
        None => out.push(0),
        Some(a) => {
            out.push(1);
            out.extend_from_slice(&a.steps().to_le_bytes());
            let c = a.config;
            for x in [c.learning_rate, c.beta1, c.beta2, c.eps] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            let (m, v) = a.moments();
            for arr in m.iter().chain(v) {
                for &x in arr.as_standard_layout().iter() {
                    x.write_le(&mut out);
                }
            }
        }
    }
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn values<T: Real>(&mut self, shape: &[usize]) -> Result<ArrayD<T>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * T::BYTES)?;
        let v: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        ArrayD::from_shape_vec(IxDyn(shape), v).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

fn header(bytes: &[u8]) -> Result<(Reader<'_>, Dtype)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.u8()?;
    let dtype = Dtype::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("bad dtype code {code}")))?;
    Ok((r, dtype))
}

/// Element type stored in a checkpoint.
pub fn peek_dtype(path: &Path) -> Result<Dtype> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(header(&bytes)?.1)
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (mut r, dtype) = header(&bytes)?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {}, expected {}",
            dtype.name(),
            T::DTYPE.name()
        )));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let value = r.values::<T>(&shape)?;
        params.push((name, value));
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let config = AdamConfig {
                learning_rate: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
                ..Default::default()
            };
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for (_, p) in &params {
                m.push(r.values::<T>(p.shape())?);
            }
            for (_, p) in &params {
                v.push(r.values::<T>(p.shape())?);
            }
            Some(Adam::from_state(config, step, m, v))
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    let len = r.u32()? as usize;
    let config =
        String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params,
        adam,
        config,
    })
}

impl<T: Real> Checkpoint<T> {
    /// Copies stored values into `store`, matching by name and shape.
    pub fn load_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter '{name}'")))?;
            store
                .set_value(id, value.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a", array![[1.0f32, 2.0], [3.0, 4.0]].into_dyn(), true)
            .unwrap();
        s.add("b.alpha", array![0.5f32].into_dyn(), true).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        write_checkpoint(&path, &sample(), None, "seed=1\n").unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"KBCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 0);
        assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 1);
        assert_eq!(&bytes[17..18], b"a");
        assert_eq!(peek_dtype(&path).unwrap(), Dtype::F32);
    }

    #[test]
    fn round_trip_with_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let mut s = sample();
        let mut adam = Adam::new(&s, AdamConfig::default());
        let id = s.find("a").unwrap();
        s.get_mut(id).grad.fill(1.0);
        adam.step(&mut s).unwrap();
        write_checkpoint(&path, &s, Some(&adam), "k=v\n").unwrap();
        let ck = read_checkpoint::<f32>(&path).unwrap();
        assert_eq!(ck.config, "k=v\n");
        let back = ck.adam.as_ref().unwrap();
        assert_eq!(back.steps(), 1);
        assert_eq!(back.moments(), adam.moments());
        let mut fresh = sample();
        ck.load_into(&mut fresh).unwrap();
        assert_eq!(fresh.value(id), s.value(id));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        write_checkpoint(&path, &sample(), None, "").unwrap();
        assert!(read_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        write_checkpoint(&path, &sample(), None, "").unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_checkpoint::<f32>(&path),
            Err(Error::Checkpoint(_))
        ));
    }
}
