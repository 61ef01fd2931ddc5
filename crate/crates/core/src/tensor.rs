//! Dense row-major f32 tensors and the PCTF file format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `PCTF`                     |
//! | 1            | version, currently `0x01`        |
//! | 1            | `ndim`                           |
//! | 4 × ndim     | dims as `u32`                    |
//! | 4 × prod     | payload as `f32`, row-major      |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCTF";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the data and that
    /// every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Validation("tensor must have at least one dimension".into()));
        }
        if shape.len() > u8::MAX as usize {
            return Err(Error::Validation(format!("{} dimensions exceed 255", shape.len())));
        }
        if let Some(d) = shape.iter().find(|&&d| d == 0 || d > u32::MAX as usize) {
            return Err(Error::Validation(format!("invalid dimension {d} in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Validation(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Converts from f64, rejecting non-finite values.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        assert_eq!(self.ndim(), 2, "row() on a {}-d tensor", self.ndim());
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Encodes to the PCTF byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes the PCTF byte layout. `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let corrupt = |reason: String| Error::Corruption {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < 6 {
            return Err(format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
        }
        if bytes[4] != VERSION {
            return Err(format(format!("unsupported version {}", bytes[4])));
        }
        let ndim = bytes[5] as usize;
        if ndim == 0 {
            return Err(corrupt("zero dimensions".into()));
        }
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(corrupt(format!("header truncated: need {header} bytes, have {}", bytes.len())));
        }
        let shape: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt(format!("shape {shape:?} overflows")))?;
        let payload = &bytes[header..];
        if payload.len() != count * 4 {
            return Err(corrupt(format!(
                "shape {shape:?} needs {} payload bytes, found {}",
                count * 4,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
    }
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Tensor::new already enforces this; guard against future constructors.
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("refusing to write non-finite tensor to {}", path.display())));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&t.to_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_is_thirty_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eye.pctf");
        let t = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        write_tensor(&t, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 30);
        assert_eq!(&bytes[..6], b"PCTF\x01\x02");
        assert_eq!(&bytes[6..14], &[2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn scalar_like_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.pctf");
        let t = Tensor::vector(vec![0.5]).unwrap();
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.data()[0].to_bits(), 0.5f32.to_bits());
    }

    #[test]
    fn nan_is_rejected() {
        let err = Tensor::vector(vec![f32::NAN, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pctf");
        let mut bytes = Tensor::vector(vec![1.0, 2.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut bytes = Tensor::vector(vec![1.0]).unwrap().to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            Tensor::from_bytes(&bytes, Path::new("mem")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncated_file_is_corruption_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pctf");
        let bytes = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Corruption { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_tensor("/nonexistent/x.pctf"), Err(Error::Io { .. })));
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..=12, 1..=4)
            .prop_filter("at most 1e5 elements", |s| s.iter().product::<usize>() <= 100_000)
            .prop_flat_map(|shape| {
                let n = shape.iter().product::<usize>();
                (Just(shape), prop::collection::vec(-1e6f32..1e6f32, n))
            })
            .prop_map(|(shape, data)| Tensor::new(shape, data).unwrap())
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(t in arb_tensor()) {
            let back = Tensor::from_bytes(&t.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
