//! Versioned binary checkpoints.
//!
//! Layout: magic `ANV2`, format version (u32), then records of
//! `name_len u32 | name | dtype u8 | rank u8 | dims u32 x rank | little-endian values`.
//! A `meta.spec` record (u8 bytes) holds the model spec as JSON; batch-norm running
//! statistics are stored as `<bn>.running_mean` and `<bn>.running_var`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelSpec};

pub const MAGIC: &[u8; 4] = b"ANV2";
pub const FORMAT_VERSION: u32 = 1;
pub const SPEC_RECORD: &str = "meta.spec";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F64 = 0,
    F32 = 1,
    U8 = 2,
}

impl DType {
    fn from_tag(tag: u8, offset: u64) -> Result<Self> {
        match tag {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            2 => Ok(DType::U8),
            _ => Err(Error::Format {
                offset,
                message: format!("unknown dtype tag {tag}"),
            }),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: RecordData,
}

impl Record {
    pub fn f64(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dims,
            data: RecordData::F64(values),
        }
    }

    /// Values widened to f64; `None` for byte records.
    pub fn as_f64(&self) -> Option<Vec<f64>> {
        match &self.data {
            RecordData::F64(v) => Some(v.clone()),
            RecordData::F32(v) => Some(v.iter().map(|&x| x as f64).collect()),
            RecordData::U8(_) => None,
        }
    }
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for r in records {
        let len = u32::try_from(r.name.len()).map_err(|_| Error::InvalidArgument("record name too long".into()))?;
        let rank =
            u8::try_from(r.dims.len()).map_err(|_| Error::InvalidArgument(format!("{}: rank too large", r.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(match r.data {
            RecordData::F64(_) => DType::F64 as u8,
            RecordData::F32(_) => DType::F32 as u8,
            RecordData::U8(_) => DType::U8 as u8,
        });
        out.push(rank);
        for &d in &r.dims {
            let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("{}: dimension too large", r.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &r.data {
            RecordData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RecordData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            RecordData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, not an ANV2 checkpoint".into(),
        });
    }
    let version_at = r.pos as u64;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: version_at,
            message: format!("unsupported format version {version}"),
        });
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name_at = r.pos as u64;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format {
                offset: name_at,
                message: "record name is not UTF-8".into(),
            })?
            .to_owned();
        let dtype_at = r.pos as u64;
        let dtype = DType::from_tag(r.u8("dtype")?, dtype_at)?;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = r.take(count * dtype.width(), &format!("values of {name}"))?;
        let data = match dtype {
            DType::F64 => RecordData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                    .collect(),
            ),
            DType::F32 => RecordData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
                    .collect(),
            ),
            DType::U8 => RecordData::U8(raw.to_vec()),
        };
        records.push(Record { name, dims, data });
    }
    Ok(records)
}

pub fn model_records(model: &Model) -> Result<Vec<Record>> {
    let spec = serde_json::to_vec(&model.spec).map_err(|e| Error::InvalidArgument(format!("spec: {e}")))?;
    let mut records = vec![Record {
        name: SPEC_RECORD.into(),
        dims: vec![spec.len()],
        data: RecordData::U8(spec),
    }];
    for p in model.params() {
        records.push(Record::f64(p.name.clone(), p.dims.clone(), p.value.clone()));
    }
    for bn in model.batch_norms() {
        let c = bn.running.mean.len();
        records.push(Record::f64(
            format!("{}.running_mean", bn.name),
            vec![c],
            bn.running.mean.clone(),
        ));
        records.push(Record::f64(
            format!("{}.running_var", bn.name),
            vec![c],
            bn.running.var.clone(),
        ));
    }
    Ok(records)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_records(&model_records(model)?)?)?;
    Ok(())
}

/// Rebuild the model from its stored spec and fill every parameter and running statistic.
pub fn model_from_records(records: &[Record]) -> Result<Model> {
    let spec_record = records
        .iter()
        .find(|r| r.name == SPEC_RECORD)
        .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no {SPEC_RECORD} record")))?;
    let RecordData::U8(json) = &spec_record.data else {
        return Err(Error::InvalidArgument(format!("{SPEC_RECORD} must hold bytes")));
    };
    let spec: ModelSpec =
        serde_json::from_slice(json).map_err(|e| Error::InvalidArgument(format!("bad model spec: {e}")))?;
    let mut model = build_model(&spec)?;
    let lookup = |name: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let r = records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint is missing {name}")))?;
        if r.dims != dims {
            return Err(Error::InvalidArgument(format!(
                "{name}: stored dims {:?}, model expects {dims:?}",
                r.dims
            )));
        }
        r.as_f64()
            .ok_or_else(|| Error::InvalidArgument(format!("{name} is not numeric")))
    };
    for p in model.params_mut() {
        p.value = lookup(&p.name, &p.dims)?;
    }
    for bn in model.batch_norms_mut() {
        let c = bn.running.mean.len();
        bn.running.mean = lookup(&format!("{}.running_mean", bn.name), &[c])?;
        bn.running.var = lookup(&format!("{}.running_var", bn.name), &[c])?;
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    model_from_records(&decode_records(&fs::read(path)?)?)
}
