//! Dense tensor interchange format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DTF1"            4 bytes magic
//! dtype             u8   (0 = f32, 1 = f64, 2 = u8, 3 = i32)
//! rank              u8
//! dims              rank x u64
//! payload           product(dims) elements, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
    I32 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            3 => Ok(DType::I32),
            c => Err(Error::UnknownDtype(c)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::U8 => "u8",
            DType::I32 => "i32",
        }
    }
}

/// Element type storable in a DTF payload.
pub trait DtfElement: Copy + Sized {
    const DTYPE: DType;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn wrap(t: Tensor<Self>) -> AnyTensor;
    fn unwrap(t: AnyTensor) -> Result<Tensor<Self>>;
}

macro_rules! dtf_element {
    ($ty:ty, $variant:ident) => {
        impl DtfElement for $ty {
            const DTYPE: DType = DType::$variant;

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                <$ty>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn wrap(t: Tensor<Self>) -> AnyTensor {
                AnyTensor::$variant(t)
            }

            fn unwrap(t: AnyTensor) -> Result<Tensor<Self>> {
                match t {
                    AnyTensor::$variant(t) => Ok(t),
                    other => Err(Error::UnsupportedElementType {
                        expected: DType::$variant.name(),
                        found: other.dtype().name(),
                    }),
                }
            }
        }
    };
}

dtf_element!(f32, F32);
dtf_element!(f64, F64);
dtf_element!(u8, U8);
dtf_element!(i32, I32);

/// Row-major dense array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E> {
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

impl<E> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
    I32(Tensor<i32>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
            AnyTensor::U8(_) => DType::U8,
            AnyTensor::I32(_) => DType::I32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => &t.shape,
            AnyTensor::F64(t) => &t.shape,
            AnyTensor::U8(t) => &t.shape,
            AnyTensor::I32(t) => &t.shape,
        }
    }

    /// Converts a floating-point tensor to the requested float type.
    /// Integer payloads are rejected.
    pub fn into_float<T: crate::Scalar>(self) -> Result<Tensor<T>> {
        match self {
            AnyTensor::F32(t) => {
                Ok(Tensor { shape: t.shape, data: t.data.into_iter().map(|v| T::lit(v as f64)).collect() })
            }
            AnyTensor::F64(t) => Ok(Tensor { shape: t.shape, data: t.data.into_iter().map(T::lit).collect() }),
            other => Err(Error::UnsupportedElementType { expected: "f32 or f64", found: other.dtype().name() }),
        }
    }
}

fn encode<E: DtfElement>(t: &Tensor<E>) -> Result<Vec<u8>> {
    if t.shape.len() > u8::MAX as usize {
        return Err(Error::invalid(format!("rank {} exceeds 255", t.shape.len())));
    }
    let mut out = Vec::with_capacity(6 + 8 * t.shape.len() + t.data.len() * E::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(E::DTYPE as u8);
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in &t.data {
        v.write_le(&mut out);
    }
    Ok(out)
}

fn decode_payload<E: DtfElement>(shape: Vec<usize>, payload: &[u8]) -> Tensor<E> {
    let width = E::DTYPE.size();
    let data = payload.chunks_exact(width).map(E::read_le).collect();
    Tensor { shape, data }
}

/// Serializes a tensor to bytes.
pub fn to_bytes(t: &AnyTensor) -> Result<Vec<u8>> {
    match t {
        AnyTensor::F32(t) => encode(t),
        AnyTensor::F64(t) => encode(t),
        AnyTensor::U8(t) => encode(t),
        AnyTensor::I32(t) => encode(t),
    }
}

/// Parses a complete DTF buffer.
pub fn from_bytes(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let dtype = DType::from_code(bytes[4])?;
    let rank = bytes[5] as usize;
    let header_len = 6 + 8 * rank;
    if bytes.len() < header_len {
        return Err(Error::PayloadLengthMismatch { expected: header_len as u64, actual: bytes.len() as u64 });
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: u64 = 1;
    for r in 0..rank {
        let off = 6 + 8 * r;
        let d = u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
        count = count.checked_mul(d).ok_or_else(|| Error::invalid("dims overflow"))?;
        shape.push(usize::try_from(d).map_err(|_| Error::invalid("dim exceeds address space"))?);
    }
    let payload = &bytes[header_len..];
    let expected = count.checked_mul(dtype.size() as u64).ok_or_else(|| Error::invalid("payload size overflow"))?;
    if payload.len() as u64 != expected {
        return Err(Error::PayloadLengthMismatch { expected, actual: payload.len() as u64 });
    }
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(shape, payload)),
        DType::F64 => AnyTensor::F64(decode_payload(shape, payload)),
        DType::U8 => AnyTensor::U8(decode_payload(shape, payload)),
        DType::I32 => AnyTensor::I32(decode_payload(shape, payload)),
    })
}

pub fn write_tensor(path: impl AsRef<Path>, t: &AnyTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(t)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Writes a typed tensor.
pub fn write_typed<E: DtfElement + Clone>(path: impl AsRef<Path>, t: Tensor<E>) -> Result<()> {
    write_tensor(path, &E::wrap(t))
}

/// Reads a tensor and requires a specific element type.
pub fn read_typed<E: DtfElement>(path: impl AsRef<Path>) -> Result<Tensor<E>> {
    E::unwrap(read_tensor(path)?)
}
