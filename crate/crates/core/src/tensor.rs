//! Binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"HRPE"  magic
//! u16      version (1)
//! u8       element tag: 1 = complex64, 2 = complex128
//! u16      axis count
//! per axis: u16 name length, UTF-8 name, u64 extent
//! payload: interleaved re/im, row-major in axis order (last axis fastest)
//! ```

use num_complex::Complex64;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HRPE";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Complex64,
    Complex128,
}

impl ElementType {
    fn tag(self) -> u8 {
        match self {
            ElementType::Complex64 => 1,
            ElementType::Complex128 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ElementType::Complex64),
            2 => Ok(ElementType::Complex128),
            t => Err(Error::TensorFormat(format!("unknown element tag {t}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Complex64 => 8,
            ElementType::Complex128 => 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub axes: Vec<(String, usize)>,
    pub element: ElementType,
    pub data: Vec<Complex64>,
}

impl Tensor {
    pub fn new(axes: Vec<(String, usize)>, element: ElementType, data: Vec<Complex64>) -> Result<Self> {
        let n: usize = axes.iter().map(|a| a.1).product();
        if n != data.len() {
            return Err(Error::Shape { expected: format!("{n} elements"), actual: format!("{}", data.len()) });
        }
        Ok(Self { axes, element, data })
    }

    /// Real data stored with zero imaginary part.
    pub fn from_real(axes: Vec<(String, usize)>, data: &[f64]) -> Result<Self> {
        Self::new(axes, ElementType::Complex128, data.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.1).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.data.len() * self.element.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.element.tag());
        let count = u16::try_from(self.axes.len()).map_err(|_| Error::TensorFormat("too many axes".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, len) in &self.axes {
            let n = u16::try_from(name.len()).map_err(|_| Error::TensorFormat("axis name too long".into()))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(*len as u64).to_le_bytes());
        }
        for v in &self.data {
            match self.element {
                ElementType::Complex64 => {
                    out.extend_from_slice(&(v.re as f32).to_le_bytes());
                    out.extend_from_slice(&(v.im as f32).to_le_bytes());
                }
                ElementType::Complex128 => {
                    out.extend_from_slice(&v.re.to_le_bytes());
                    out.extend_from_slice(&v.im.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::TensorFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::TensorFormat(format!("unsupported version {version}")));
        }
        let element = ElementType::from_tag(r.take(1)?[0])?;
        let count = u16::from_le_bytes(r.array()?) as usize;
        let mut axes = Vec::with_capacity(count);
        for _ in 0..count {
            let n = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::TensorFormat("axis name is not UTF-8".into()))?
                .to_string();
            let len = usize::try_from(u64::from_le_bytes(r.array()?))
                .map_err(|_| Error::TensorFormat("axis too long".into()))?;
            axes.push((name, len));
        }
        let n = axes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.1))
            .ok_or_else(|| Error::TensorFormat("shape overflows".into()))?;
        let payload = n
            .checked_mul(element.size())
            .ok_or_else(|| Error::TensorFormat("shape overflows".into()))?;
        let rest = &bytes[r.pos..];
        if rest.len() != payload {
            return Err(Error::TensorFormat(format!("payload has {} bytes, header implies {payload}", rest.len())));
        }
        let data = match element {
            ElementType::Complex64 => rest
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[..4].try_into().unwrap());
                    let im = f32::from_le_bytes(c[4..].try_into().unwrap());
                    Complex64::new(re as f64, im as f64)
                })
                .collect(),
            ElementType::Complex128 => rest
                .chunks_exact(16)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
        };
        Ok(Self { axes, element, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::TensorFormat("truncated header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    std::fs::write(path, tensor.encode()?)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::decode(&std::fs::read(path)?)
}
