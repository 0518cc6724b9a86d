//! `model.bin`: a self-describing little-endian binary archive.
//!
//! Layout: the 8-byte magic `SAFELINK`, a `u32` version, a `u32` field
//! count, then fields. Each field is a `u16` name length, the UTF-8 name, a
//! `u8` kind (0 = u64, 1 = f64, 2 = matrix) and the payload. Matrices store
//! `u64` rows, `u64` cols, then column-major `f64` bits. Floats are stored
//! as raw bits, so a round trip is bit-exact.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use safelink_core::rvfl::{EnhancementLayer, ModelParts};
use safelink_core::{CostMatrix, RvflConfig, TrainedModel};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SAFELINK";
pub const VERSION: u32 = 1;

enum Value {
    U64(u64),
    F64(f64),
    Matrix(DMatrix<f64>),
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn header(&mut self, name: &str, kind: u8) {
        self.buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.push(kind);
        self.count += 1;
    }

    fn u64(&mut self, name: &str, v: u64) {
        self.header(name, 0);
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, name: &str, v: f64) {
        self.header(name, 1);
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.header(name, 2);
        self.buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        self.buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

pub fn encode(model: &TrainedModel) -> Vec<u8> {
    let p = model.to_parts();
    let mut w = Writer { buf: Vec::new(), count: 0 };
    let c = &p.config;
    w.u64("config.input_dim", c.input_dim as u64);
    w.u64("config.groups", c.groups as u64);
    w.u64("config.nodes_per_group", c.nodes_per_group as u64);
    w.f64("config.ridge", c.ridge);
    w.f64("config.activation_scale", c.activation_scale);
    w.f64("config.init_range", c.init_range);
    w.f64("config.input_scale", c.input_scale);
    w.u64("config.seed", c.seed);
    w.f64("cost.c1", p.cost.c1);
    w.f64("cost.c2", p.cost.c2);
    w.matrix("layer.weights", &p.layer.weights);
    w.matrix("layer.biases", &column(&p.layer.biases));
    w.matrix("w_b", &p.w_b);
    w.matrix("k_cache", &p.k_cache);
    w.matrix("q_cache", &p.q_cache);
    w.matrix("gram", &p.gram);
    w.u64("sample_count", p.sample_count as u64);
    w.u64("unsafe_count", p.unsafe_count as u64);
    w.matrix("unsafe_feature_sum", &column(&p.unsafe_feature_sum));
    w.u64("updates_since_rebase", p.updates_since_rebase as u64);

    let mut out = Vec::with_capacity(w.buf.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&w.count.to_le_bytes());
    out.extend_from_slice(&w.buf);
    out
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Archive(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Archive("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut fields: HashMap<String, Value> = HashMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Archive("field name is not UTF-8".into()))?;
        let name = name.to_string();
        let value = match r.u8()? {
            0 => Value::U64(r.u64()?),
            1 => Value::F64(f64::from_bits(r.u64()?)),
            2 => {
                let rows = r.u64()? as usize;
                let cols = r.u64()? as usize;
                let n = rows.checked_mul(cols).ok_or_else(|| Error::Archive(format!("{name}: shape overflow")))?;
                if n > (bytes.len() - r.pos) / 8 {
                    return Err(Error::Archive(format!("{name}: truncated matrix")));
                }
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    data.push(f64::from_bits(r.u64()?));
                }
                Value::Matrix(DMatrix::from_vec(rows, cols, data))
            }
            k => return Err(Error::Archive(format!("{name}: unknown kind {k}"))),
        };
        if fields.insert(name.clone(), value).is_some() {
            return Err(Error::Archive(format!("duplicate field {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Archive("trailing bytes".into()));
    }

    let mut get = |name: &str| fields.remove(name).ok_or_else(|| Error::Archive(format!("missing field {name}")));
    let mut int = |name: &str| match get(name)? {
        Value::U64(v) => Ok(v),
        _ => Err(Error::Archive(format!("{name}: expected u64"))),
    };
    let config_ints = [int("config.input_dim")?, int("config.groups")?, int("config.nodes_per_group")?, int("config.seed")?];
    let counts = [int("sample_count")?, int("unsafe_count")?, int("updates_since_rebase")?];
    let mut get = |name: &str| fields.remove(name).ok_or_else(|| Error::Archive(format!("missing field {name}")));
    let mut float = |name: &str| match get(name)? {
        Value::F64(v) => Ok(v),
        _ => Err(Error::Archive(format!("{name}: expected f64"))),
    };
    let config = RvflConfig {
        input_dim: config_ints[0] as usize,
        groups: config_ints[1] as usize,
        nodes_per_group: config_ints[2] as usize,
        ridge: float("config.ridge")?,
        activation_scale: float("config.activation_scale")?,
        init_range: float("config.init_range")?,
        input_scale: float("config.input_scale")?,
        seed: config_ints[3],
    };
    let cost = CostMatrix { c1: float("cost.c1")?, c2: float("cost.c2")? };
    let mut get = |name: &str| fields.remove(name).ok_or_else(|| Error::Archive(format!("missing field {name}")));
    let mut mat = |name: &str| match get(name)? {
        Value::Matrix(m) => Ok(m),
        _ => Err(Error::Archive(format!("{name}: expected a matrix"))),
    };
    let vector = |m: DMatrix<f64>, name: &str| {
        if m.ncols() != 1 {
            return Err(Error::Archive(format!("{name}: expected one column")));
        }
        Ok(DVector::from_column_slice(m.as_slice()))
    };
    let weights = mat("layer.weights")?;
    let biases = vector(mat("layer.biases")?, "layer.biases")?;
    let w_b = mat("w_b")?;
    let k_cache = mat("k_cache")?;
    let q_cache = mat("q_cache")?;
    let gram = mat("gram")?;
    let unsafe_feature_sum = vector(mat("unsafe_feature_sum")?, "unsafe_feature_sum")?;
    if let Some(extra) = fields.keys().next() {
        return Err(Error::Archive(format!("unknown field {extra}")));
    }
    let parts = ModelParts {
        config,
        layer: EnhancementLayer { weights, biases },
        cost,
        w_b,
        k_cache,
        q_cache,
        gram,
        sample_count: counts[0] as usize,
        unsafe_count: counts[1] as usize,
        unsafe_feature_sum,
        updates_since_rebase: counts[2] as usize,
    };
    Ok(TrainedModel::from_parts(parts)?)
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    decode(&std::fs::read(path)?)
}
