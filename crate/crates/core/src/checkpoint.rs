//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CONDPRED"
//! version    u32      1
//! header     u32 length, then UTF-8 JSON {format, model, meta}
//! count      u32      number of tensors
//! tensor     u32 name length, name bytes, u32 rows, u32 cols,
//!            rows * cols f64 values in row-major order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{named, Params};

pub const MAGIC: &[u8; 8] = b"CONDPRED";
pub const VERSION: u32 = 1;
const FORMAT: &str = "condpred-checkpoint";

/// Training metadata stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    model: ModelConfig,
    meta: Meta,
}

fn finite(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite())
}

pub fn to_bytes(model: &Model, meta: &Meta) -> Result<Vec<u8>> {
    let header = Header {
        format: FORMAT.into(),
        model: model.config.clone(),
        meta: Meta {
            train_loss: finite(meta.train_loss),
            val_loss: finite(meta.val_loss),
            ..meta.clone()
        },
    };
    let json = serde_json::to_vec(&header)?;
    let tensors = named(&model.params);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(Model, Meta)> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let header: Header = serde_json::from_slice(c.take(len)?)?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format '{}'", header.format)));
    }
    let mut tensors = std::collections::HashMap::new();
    for _ in 0..c.u32()? {
        let n = c.u32()? as usize;
        let name = String::from_utf8(c.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let values = (0..rows * cols).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        tensors.insert(name, (rows, cols, values));
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut model = Model::new(header.model, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut problem = None;
    let mut seen = 0;
    model.params.visit_mut("", &mut |name, m| {
        match tensors.get(&name) {
            Some((r, c, v)) if (*r, *c) == m.dim() => {
                m.as_slice_mut().expect("standard layout").copy_from_slice(v);
                seen += 1;
            }
            Some((r, c, _)) => {
                problem.get_or_insert(Error::DimensionMismatch(format!(
                    "tensor {name} is {r}x{c}, model expects {:?}",
                    m.dim()
                )));
            }
            None => {
                problem.get_or_insert(Error::Checkpoint(format!("missing tensor {name}")));
            }
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if seen != tensors.len() {
        return Err(Error::Checkpoint(format!("{} unexpected tensors", tensors.len() - seen)));
    }
    Ok((model, header.meta))
}

pub fn save(path: &Path, model: &Model, meta: &Meta) -> Result<()> {
    let bytes = to_bytes(model, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, Meta)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

/// Loads a checkpoint and checks that its architecture matches `expected`.
pub fn load_matching(path: &Path, expected: &ModelConfig) -> Result<(Model, Meta)> {
    let (model, meta) = load(path)?;
    let got = &model.config;
    if got.dims != expected.dims
        || got.toggles != expected.toggles
        || got.grid != expected.grid
        || got.horizon.t_pred != expected.horizon.t_pred
    {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint has dims {:?}, toggles {:?}, grid {:?}, t_pred {}; config has {:?}, {:?}, {:?}, {}",
            got.dims,
            got.toggles,
            got.grid,
            got.horizon.t_pred,
            expected.dims,
            expected.toggles,
            expected.grid,
            expected.horizon.t_pred
        )));
    }
    Ok((model, meta))
}
