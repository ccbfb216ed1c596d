//! Binary checkpoint container (all integers little-endian):
//!
//! ```text
//! "MCNT"  u32 version
//! u32 config_len  config JSON bytes
//! u32 tensor_count
//!   per tensor: u32 name_len, name, 4 × u32 shape, numel × f32
//! u32 stats_count
//!   per stats:  u32 name_len, name, u32 channels, channels × f32 mean, channels × f32 var
//! ```
//!
//! Each layer contributes `<layer>.weight` and `<layer>.bias` tensors in
//! registration order. Optimiser state is not stored.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::network::{assemble_model, ModelGraph};
use crate::tensor::{Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MCNT";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v =
            u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
        self.0.extend(v.to_le_bytes());
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u32(b.len())?;
        self.0.extend(b);
        Ok(())
    }

    fn floats<T: Scalar>(&mut self, v: &[T]) {
        for x in v {
            self.0.extend((x.as_f64() as f32).to_le_bytes());
        }
    }

    fn tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) -> Result<()> {
        self.bytes(name.as_bytes())?;
        for d in t.shape().0 {
            self.u32(d)?;
        }
        self.floats(t.values());
        Ok(())
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 before byte {}", self.pos)))
    }

    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }
}

pub fn to_bytes<T: Scalar>(model: &ModelGraph<T>) -> Result<Vec<u8>> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION as usize)?;
    w.bytes(serde_json::to_string(&model.config)?.as_bytes())?;
    w.u32(model.params.layers.len() * 2)?;
    for l in &model.params.layers {
        w.tensor(&format!("{}.weight", l.name), &l.weights)?;
        w.tensor(&format!("{}.bias", l.name), &l.bias)?;
    }
    w.u32(model.params.bn.len())?;
    for s in &model.params.bn {
        w.bytes(s.name.as_bytes())?;
        w.u32(s.mean.len())?;
        w.floats(&s.mean);
        w.floats(&s.var);
    }
    Ok(w.0)
}

fn read_tensor<T: Scalar>(r: &mut Reader, want_name: &str, want: Shape) -> Result<Vec<T>> {
    let name = r.string()?;
    if name != want_name {
        return Err(Error::Checkpoint(format!(
            "expected tensor {want_name}, found {name}"
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32()?;
    }
    if Shape(dims) != want {
        return Err(Error::Checkpoint(format!(
            "{name}: shape {} does not match model {want}",
            Shape(dims)
        )));
    }
    r.floats(want.numel())
}

/// Rebuilds the stored network and overwrites its parameters and running statistics.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelGraph<T>> {
    let mut r = Reader { b: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an MCNT file".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_json = r.string()?;
    let cfg: ModelConfig = serde_json::from_str(&cfg_json)?;
    let mut model = assemble_model::<T>(&cfg)?;
    let n = r.u32()?;
    if n != model.params.layers.len() * 2 {
        return Err(Error::Checkpoint(format!(
            "{n} tensors stored, model has {}",
            model.params.layers.len() * 2
        )));
    }
    for l in &mut model.params.layers {
        let w = read_tensor::<T>(&mut r, &format!("{}.weight", l.name), l.weights.shape())?;
        l.weights.values_mut().copy_from_slice(&w);
        let b = read_tensor::<T>(&mut r, &format!("{}.bias", l.name), l.bias.shape())?;
        l.bias.values_mut().copy_from_slice(&b);
    }
    let n = r.u32()?;
    if n != model.params.bn.len() {
        return Err(Error::Checkpoint(format!(
            "{n} statistics stored, model has {}",
            model.params.bn.len()
        )));
    }
    for s in &mut model.params.bn {
        let name = r.string()?;
        let c = r.u32()?;
        if name != s.name || c != s.mean.len() {
            return Err(Error::Checkpoint(format!(
                "statistics {name}/{c} do not match {}/{}",
                s.name,
                s.mean.len()
            )));
        }
        s.mean = r.floats(c)?;
        s.var = r.floats(c)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelGraph<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    from_bytes(&bytes)
}
