//! Model weight files. Little-endian binary: a 4-byte magic, a u32 format
//! version, the architecture header, then every parameter tensor in visitor
//! order, each prefixed by rank and dims as u32s with float64 row-major data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::tensor::{Activation, ParamSet};
use crate::model::{ModelConfig, ToyNoisePredictor};
use crate::refine::RefineNet;

const NOISE_MAGIC: &[u8; 4] = b"PCDF";
const REFINE_MAGIC: &[u8; 4] = b"PCRF";
const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_params(out: &mut Vec<u8>, params: &dyn ParamSet) {
    params.visit_params(&mut |_, p| {
        push_u32(out, p.value.dims.len() as u32);
        for &d in &p.value.dims {
            push_u32(out, d as u32);
        }
        for &v in &p.value.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
}

/// Byte reader that reports the offset of any truncation.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Cursor<'a> {
        Cursor {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: unexpected end of file at byte {} (needed {} more)",
                self.path,
                self.bytes.len(),
                self.pos + n - self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.path,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported format version {v} (expected {VERSION})",
                self.path
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after the last tensor (offset {})",
                self.path,
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

/// Fill every parameter of `params` from the cursor, verifying each stored
/// tensor's shape against the in-memory one.
fn read_params(cursor: &mut Cursor, params: &mut dyn ParamSet) -> Result<()> {
    let mut failure: Option<Error> = None;
    params.visit_params_mut(&mut |name, p| {
        if failure.is_some() {
            return;
        }
        let mut step = || -> Result<()> {
            let rank = cursor.u32()? as usize;
            if rank != p.value.dims.len() {
                return Err(Error::Format(format!(
                    "{}: tensor {name}: rank {rank}, expected {}",
                    cursor.path,
                    p.value.dims.len()
                )));
            }
            for (axis, &want) in p.value.dims.iter().enumerate() {
                let got = cursor.u32()? as usize;
                if got != want {
                    return Err(Error::Format(format!(
                        "{}: tensor {name}: dim {axis} is {got}, expected {want}",
                        cursor.path
                    )));
                }
            }
            for v in &mut p.value.data {
                *v = cursor.f64()?;
            }
            Ok(())
        };
        if let Err(e) = step() {
            failure = Some(e);
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn write_noise_model(path: &Path, model: &ToyNoisePredictor) -> Result<()> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(NOISE_MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, c.d_t as u32);
    push_u32(&mut out, c.d_c as u32);
    push_u32(&mut out, c.n_condition_points as u32);
    push_u32(&mut out, c.activation.code());
    push_u32(&mut out, c.layer_dims.len() as u32);
    for &d in &c.layer_dims {
        push_u32(&mut out, d as u32);
    }
    push_params(&mut out, model);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_noise_model(path: &Path) -> Result<ToyNoisePredictor> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor::new(&bytes, path);
    cursor.expect_magic(NOISE_MAGIC)?;
    cursor.expect_version()?;
    let d_t = cursor.u32()? as usize;
    let d_c = cursor.u32()? as usize;
    let n_condition_points = cursor.u32()? as usize;
    let activation = Activation::from_code(cursor.u32()?)?;
    let n_layers = cursor.u32()? as usize;
    let mut layer_dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layer_dims.push(cursor.u32()? as usize);
    }
    let config = ModelConfig {
        d_t,
        d_c,
        layer_dims,
        n_condition_points,
        activation,
    };
    let mut model = ToyNoisePredictor::new(config, 0)?;
    read_params(&mut cursor, &mut model)?;
    cursor.finish()?;
    Ok(model)
}

pub fn write_refine_net(path: &Path, net: &RefineNet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(REFINE_MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, net.kappa() as u32);
    push_u32(&mut out, net.activation().code());
    let hidden = net.hidden_dims();
    push_u32(&mut out, hidden.len() as u32);
    for d in hidden {
        push_u32(&mut out, d as u32);
    }
    out.extend_from_slice(&net.max_offset().to_le_bytes());
    push_params(&mut out, net);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_refine_net(path: &Path) -> Result<RefineNet> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor::new(&bytes, path);
    cursor.expect_magic(REFINE_MAGIC)?;
    cursor.expect_version()?;
    let kappa = cursor.u32()? as usize;
    let activation = Activation::from_code(cursor.u32()?)?;
    let n_hidden = cursor.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(cursor.u32()? as usize);
    }
    let max_offset = cursor.f64()?;
    if !(max_offset > 0.0) || kappa == 0 {
        return Err(Error::Format(format!(
            "{}: invalid refine header (kappa {kappa}, max_offset {max_offset})",
            path.display()
        )));
    }
    let mut net = RefineNet::zeroed(kappa, max_offset, &hidden, activation);
    read_params(&mut cursor, &mut net)?;
    cursor.finish()?;
    Ok(net)
}
