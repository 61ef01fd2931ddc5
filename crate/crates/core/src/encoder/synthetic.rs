//! Deterministic stand-in for a self-supervised encoder.
//!
//! Each image gets `N` random unit vectors as its feature map. Part crop `j`
//! picks one of those rows, `k_j`, and answers with
//! `normalize(alpha * row[k_j] + sigma * noise)`, where `alpha` is larger for
//! members. Members therefore produce crop vectors that line up more sharply
//! with a single map position, i.e. a steeper similarity profile.
//! `crop_scale_response` scales `alpha` for both classes and models an
//! encoder trained with a shrunk crop-scale range.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderOutput, ItemKey};
use crate::error::{Error, Result};
use crate::rng::{self, standard_normal};
use crate::seed_of;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticEncoderConfig {
    pub dim: usize,
    pub map_rows: usize,
    pub alpha_member: f64,
    pub alpha_nonmember: f64,
    pub noise_sigma: f64,
    pub crop_scale_response: f64,
    pub seed: u64,
}

impl Default for SyntheticEncoderConfig {
    fn default() -> Self {
        SyntheticEncoderConfig {
            dim: 64,
            map_rows: 16,
            alpha_member: 0.8,
            alpha_nonmember: 0.5,
            noise_sigma: 0.1,
            crop_scale_response: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("encoder.synthetic.{f}");
        if self.dim == 0 {
            return Err(Error::config(field("dim"), "must be at least 1"));
        }
        if self.map_rows == 0 {
            return Err(Error::config(field("map_rows"), "must be at least 1"));
        }
        for (name, a) in [("alpha_member", self.alpha_member), ("alpha_nonmember", self.alpha_nonmember)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(field(name), format!("{a} outside [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(field("noise_sigma"), format!("{} must be finite and >= 0", self.noise_sigma)));
        }
        if !(self.crop_scale_response >= 0.0 && self.crop_scale_response.is_finite()) {
            return Err(Error::config(
                field("crop_scale_response"),
                format!("{} must be finite and >= 0", self.crop_scale_response),
            ));
        }
        Ok(())
    }

    /// Mixing weight of the selected map row for this class.
    pub fn alpha(&self, is_member: bool) -> f64 {
        let base = if is_member { self.alpha_member } else { self.alpha_nonmember };
        self.crop_scale_response * base
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEncoder {
    cfg: SyntheticEncoderConfig,
}

/// What a synthetic part query resolves to.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCrop {
    /// Index of the map row the crop was mixed from.
    pub row: usize,
    pub vector: Vec<f64>,
}

impl SyntheticEncoder {
    pub fn new(cfg: SyntheticEncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SyntheticEncoder { cfg })
    }

    pub fn config(&self) -> &SyntheticEncoderConfig {
        &self.cfg
    }

    /// `N` unit rows keyed by `(seed, image_id)`.
    pub fn map_rows(&self, image_id: &str) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed_of!(self.cfg.seed, "map", image_id));
        (0..self.cfg.map_rows)
            .map(|_| {
                let v: Vec<f64> = (0..self.cfg.dim).map(|_| standard_normal(&mut r)).collect();
                normalized(v)
            })
            .collect()
    }

    /// Query `j` of stream `stream` ("crop" or "view") for an image.
    pub fn query(&self, rows: &[Vec<f64>], image_id: &str, is_member: bool, stream: &str, j: usize) -> SyntheticCrop {
        let mut r = rng::seeded(seed_of!(self.cfg.seed, stream, image_id, j));
        let row = r.random_range(0..rows.len());
        let alpha = self.cfg.alpha(is_member);
        let sigma = self.cfg.noise_sigma;
        let mixed: Vec<f64> = rows[row]
            .iter()
            .map(|&x| {
                let eps = standard_normal(&mut r);
                alpha * x + sigma * eps
            })
            .collect();
        SyntheticCrop {
            row,
            vector: normalized(mixed),
        }
    }

    /// Feature map plus one vector per crop. Crop pixels are not inspected;
    /// only their count and order matter.
    pub fn synth_encode(&self, image_id: &str, is_member: bool, crops: usize) -> (EncoderOutput, Vec<Tensor>) {
        let rows = self.map_rows(image_id);
        let out = self.map_output(&rows).expect("synthetic map is finite");
        let vectors = (0..crops)
            .map(|j| to_tensor(&self.query(&rows, image_id, is_member, "crop", j).vector))
            .collect();
        (out, vectors)
    }

    fn map_output(&self, rows: &[Vec<f64>]) -> Result<EncoderOutput> {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        EncoderOutput::from_map(Tensor::from_f64(vec![self.cfg.map_rows, self.cfg.dim], &flat)?)
    }

    fn queries(&self, key: ItemKey<'_>, stream: &str, count: usize) -> Vec<Tensor> {
        let rows = self.map_rows(key.id);
        (0..count)
            .map(|j| to_tensor(&self.query(&rows, key.id, key.is_member, stream, j).vector))
            .collect()
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn to_tensor(v: &[f64]) -> Tensor {
    Tensor::from_f64(vec![v.len()], v).expect("synthetic vector is finite")
}

impl Encoder for SyntheticEncoder {
    fn encode_image(&mut self, key: ItemKey<'_>, _img: &Tensor) -> Result<EncoderOutput> {
        self.map_output(&self.map_rows(key.id))
    }

    fn encode_crops(&mut self, key: ItemKey<'_>, crops: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(self.queries(key, "crop", crops.len()))
    }

    fn encode_views(&mut self, key: ItemKey<'_>, views: &[Tensor]) -> Result<Vec<Tensor>> {
        Ok(self.queries(key, "view", views.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{similarity, to_distribution};

    fn dummy_crops(n: usize) -> Vec<Tensor> {
        vec![Tensor::vector(vec![0.0]).unwrap(); n]
    }

    #[test]
    fn default_shapes() {
        let mut enc = SyntheticEncoder::new(SyntheticEncoderConfig::default()).unwrap();
        let key = ItemKey { id: "a", is_member: true };
        let out = enc.encode_image(key, &Tensor::vector(vec![0.0]).unwrap()).unwrap();
        assert_eq!(out.feature_map.shape(), &[16, 64]);
        let crops = enc.encode_crops(key, &dummy_crops(5)).unwrap();
        assert_eq!(crops.len(), 5);
        assert!(crops.iter().all(|c| c.shape() == [64]));
    }

    #[test]
    fn deterministic_per_id() {
        let enc = SyntheticEncoder::new(SyntheticEncoderConfig::default()).unwrap();
        let (a, ca) = enc.synth_encode("img7", true, 4);
        let (b, cb) = enc.synth_encode("img7", true, 4);
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        let (c, _) = enc.synth_encode("img8", true, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_crop_is_a_map_row() {
        let cfg = SyntheticEncoderConfig {
            noise_sigma: 0.0,
            alpha_member: 1.0,
            ..SyntheticEncoderConfig::default()
        };
        let enc = SyntheticEncoder::new(cfg).unwrap();
        let (out, crops) = enc.synth_encode("x", true, 12);
        let rows = enc.map_rows("x");
        for (j, c) in crops.iter().enumerate() {
            let q = enc.query(&rows, "x", true, "crop", j);
            assert_eq!(c.data(), out.feature_map.row(q.row));
            // and the similarity peaks exactly there
            let sims = similarity(&out.feature_map, c).unwrap();
            let argmax = sims
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, q.row);
        }
    }

    fn mean_max_dot(enc: &SyntheticEncoder, is_member: bool, images: usize, per_image: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..images {
            let id = format!("img{i}");
            let (map, crops) = enc.synth_encode(&id, is_member, per_image);
            for c in &crops {
                let sims = similarity(&map.feature_map, c).unwrap();
                out.push(sims.iter().copied().fold(f64::MIN, f64::max));
            }
        }
        out
    }

    #[test]
    fn members_respond_more_sharply() {
        let enc = SyntheticEncoder::new(SyntheticEncoderConfig::default()).unwrap();
        let members = mean_max_dot(&enc, true, 100, 10);
        let nonmembers = mean_max_dot(&enc, false, 100, 10);
        let (mm, vm) = mean_var(&members);
        let (mn, vn) = mean_var(&nonmembers);
        // Welch z statistic; z > 2.33 is one-sided p < 0.01
        let z = (mm - mn) / (vm / members.len() as f64 + vn / nonmembers.len() as f64).sqrt();
        assert!(mm > mn && z > 2.33, "member {mm} nonmember {mn} z {z}");
    }

    #[test]
    fn lower_crop_scale_response_flattens_top1() {
        let top1 = |csr: f64| {
            let enc = SyntheticEncoder::new(SyntheticEncoderConfig {
                crop_scale_response: csr,
                ..SyntheticEncoderConfig::default()
            })
            .unwrap();
            let mut acc = 0.0;
            for i in 0..100 {
                let (map, crops) = enc.synth_encode(&format!("m{i}"), true, 10);
                for c in &crops {
                    let p = to_distribution(&similarity(&map.feature_map, c).unwrap());
                    acc += p.iter().copied().fold(0.0, f64::max);
                }
            }
            acc / 1000.0
        };
        assert!(top1(0.5) < top1(1.0));
    }

    #[test]
    fn equal_alphas_erase_membership() {
        let enc = SyntheticEncoder::new(SyntheticEncoderConfig {
            alpha_member: 0.6,
            alpha_nonmember: 0.6,
            ..SyntheticEncoderConfig::default()
        })
        .unwrap();
        assert_eq!(enc.synth_encode("q", true, 6), enc.synth_encode("q", false, 6));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            SyntheticEncoderConfig { dim: 0, ..Default::default() },
            SyntheticEncoderConfig { alpha_member: 1.2, ..Default::default() },
            SyntheticEncoderConfig { noise_sigma: -1.0, ..Default::default() },
            SyntheticEncoderConfig { crop_scale_response: f64::NAN, ..Default::default() },
        ] {
            assert!(SyntheticEncoder::new(cfg).is_err());
        }
    }

    fn mean_var(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    }
}
