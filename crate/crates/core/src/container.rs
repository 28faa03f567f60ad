//! Little-endian tensor container shared by weight files and sequence fixtures.
//!
//! ```text
//! "DMIX"            4 bytes
//! version           u32 (= 1)
//! tensor_count      u32
//! per tensor:
//!   name_len        u16
//!   name            UTF-8
//!   dtype           u8   (0 = f32, 1 = f64)
//!   ndim            u8
//!   dims            ndim x u32
//!   payload         prod(dims) values
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Dims, Scalar, Tensor4};

pub const MAGIC: &[u8; 4] = b"DMIX";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Payload::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Payload::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl Record {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, payload: Payload) -> Result<Self> {
        let name = name.into();
        let count: usize = dims.iter().map(|&d| d as usize).product();
        if count != payload.len() {
            return Err(Error::invalid(
                "container_record",
                format!("{name}: dims {dims:?} need {count} values, payload has {}", payload.len()),
            ));
        }
        if name.len() > u16::MAX as usize || dims.len() > u8::MAX as usize {
            return Err(Error::invalid("container_record", format!("{name}: name or rank too long")));
        }
        Ok(Self { name, dims, payload })
    }

    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor4<T>) -> Self {
        let d = t.dims();
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            DType::F64 => Payload::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            dims: d.as_array().iter().map(|&v| v as u32).collect(),
            payload,
        }
    }

    /// Read back as a 4-D tensor; the stored dtype must be `T`'s.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor4<T>> {
        if self.payload.dtype() != T::DTYPE {
            return Err(Error::Format(format!(
                "{}: stored as {:?}, requested {:?}",
                self.name,
                self.payload.dtype(),
                T::DTYPE
            )));
        }
        if self.dims.len() != 4 {
            return Err(Error::Format(format!("{}: expected 4 dims, found {:?}", self.name, self.dims)));
        }
        let d = Dims::new(self.dims[0] as usize, self.dims[1] as usize, self.dims[2] as usize, self.dims[3] as usize);
        let data = self.payload.to_f64().into_iter().map(T::lit).collect();
        Tensor4::from_vec(d, data)
    }
}

/// An ordered list of named records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub records: Vec<Record>,
}

impl Container {
    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Record> {
        self.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.payload.dtype().code());
            out.push(r.dims.len() as u8);
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &r.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic, not a DMIX container".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut records = Vec::new();
        for i in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
                .to_owned();
            let code = r.take(1, "dtype")?[0];
            let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("{name}: unknown dtype {code}")))?;
            let ndim = r.take(1, "ndim")?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32("dims")?);
            }
            let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let bytes_needed = count
                .and_then(|c| c.checked_mul(dtype.size()))
                .ok_or_else(|| Error::Format(format!("{name}: dims {dims:?} overflow")))?;
            let raw = r.take(bytes_needed, "payload")?;
            let payload = match dtype {
                DType::F32 => Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                DType::F64 => Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            records.push(Record { name, dims, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}
