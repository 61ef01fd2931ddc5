//! Encoder adapters: a deterministic synthetic encoder for offline runs and a
//! file-exchange client for real encoders served by an external process.

mod exchange;
mod synthetic;

pub use exchange::{read_request, run_exchange, ExchangeConfig, ExchangeEncoder, ExchangeItem, ItemKind, DONE_MARKER, REQUEST_FILE};
pub use synthetic::{SyntheticEncoder, SyntheticEncoderConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Encoder response for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Flattened spatial feature map, `[N, D]`.
    pub feature_map: Tensor,
    /// Average-pooled `[D]` vector.
    pub pooled: Option<Tensor>,
}

impl EncoderOutput {
    /// Wraps a `[N, D]` map (or a `[D]` vector, treated as `N = 1`) and
    /// attaches its row-mean as the pooled vector.
    pub fn from_map(map: Tensor) -> Result<Self> {
        let map = match map.shape() {
            [_, _] => map,
            [d] => Tensor::matrix(1, *d, map.into_data())?,
            other => return Err(Error::Dimension(format!("feature map must be [N, D] or [D], got {other:?}"))),
        };
        let pooled = Some(row_mean(&map)?);
        Ok(EncoderOutput { feature_map: map, pooled })
    }

    pub fn rows(&self) -> usize {
        self.feature_map.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.feature_map.shape()[1]
    }
}

/// Mean over rows of a `[N, D]` tensor, accumulated in f64.
pub fn row_mean(map: &Tensor) -> Result<Tensor> {
    let [n, d] = *map.shape() else {
        return Err(Error::Dimension(format!("row_mean needs [N, D], got {:?}", map.shape())));
    };
    let mut acc = vec![0f64; d];
    for r in 0..n {
        for (a, &v) in acc.iter_mut().zip(map.row(r)) {
            *a += f64::from(v);
        }
    }
    Tensor::from_f64(vec![d], &acc.iter().map(|a| a / n as f64).collect::<Vec<_>>())
}

/// Identifies the image being encoded. `is_member` is ground truth that only
/// the synthetic encoder consults.
#[derive(Debug, Clone, Copy)]
pub struct ItemKey<'a> {
    pub id: &'a str,
    pub is_member: bool,
}

/// Everything the attack needs encoded for one image.
#[derive(Debug, Clone)]
pub struct EncodeJob {
    pub id: String,
    pub is_member: bool,
    /// `[H, W, 3]` in [0, 1]; `None` when the image map is not needed.
    pub image: Option<Tensor>,
    /// Part crops, pooled to one vector each.
    pub crops: Vec<Tensor>,
    /// Augmented views, pooled to one vector each.
    pub views: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct EncodedJob {
    pub image: Option<EncoderOutput>,
    pub crops: Vec<Tensor>,
    pub views: Vec<Tensor>,
}

pub trait Encoder {
    fn encode_image(&mut self, key: ItemKey<'_>, img: &Tensor) -> Result<EncoderOutput>;

    /// One `[D]` vector per crop, same order.
    fn encode_crops(&mut self, key: ItemKey<'_>, crops: &[Tensor]) -> Result<Vec<Tensor>>;

    /// Like `encode_crops` but for whole-image augmented views.
    fn encode_views(&mut self, key: ItemKey<'_>, views: &[Tensor]) -> Result<Vec<Tensor>> {
        self.encode_crops(key, views)
    }

    /// Encodes several images; adapters with per-call overhead override this.
    fn encode_batch(&mut self, jobs: &[EncodeJob]) -> Result<Vec<EncodedJob>> {
        jobs.iter()
            .map(|job| {
                let key = ItemKey {
                    id: &job.id,
                    is_member: job.is_member,
                };
                let image = job.image.as_ref().map(|img| self.encode_image(key, img)).transpose()?;
                let crops = if job.crops.is_empty() {
                    Vec::new()
                } else {
                    self.encode_crops(key, &job.crops)?
                };
                let views = if job.views.is_empty() {
                    Vec::new()
                } else {
                    self.encode_views(key, &job.views)?
                };
                Ok(EncodedJob { image, crops, views })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_pools_to_constant() {
        let map = Tensor::matrix(3, 4, vec![2.5; 12]).unwrap();
        let out = EncoderOutput::from_map(map).unwrap();
        assert_eq!(out.pooled.unwrap().data(), &[2.5; 4]);
    }

    #[test]
    fn vector_response_is_single_row_map() {
        let out = EncoderOutput::from_map(Tensor::vector(vec![1.0, -2.0]).unwrap()).unwrap();
        assert_eq!(out.feature_map.shape(), &[1, 2]);
        assert_eq!(out.pooled.unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn row_mean_rejects_3d() {
        let t = Tensor::new(vec![2, 2, 2], vec![0.0; 8]).unwrap();
        assert!(row_mean(&t).is_err());
    }
}
