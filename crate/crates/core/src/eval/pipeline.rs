//! Turns a manifest of images into a labelled feature matrix: load or
//! generate each image, cut crops or augmented views, encode, and build the
//! configured membership feature.

use std::path::{Path, PathBuf};

use crate::config::{FeaturesConfig, ResolvedSource};
use crate::crop::{augment_views_with, sample_crops, CropSpec};
use crate::encoder::{EncodeJob, EncodedJob, Encoder};
use crate::error::{Error, Result};
use crate::features::{
    encodermi_feature, partcrop_feature, supervised_feature, variance_feature, EnergySelection, FeatureKind,
    FeatureMeta, FeatureSet,
};
use crate::image::Image;
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::seed_of;

use super::par_map;

/// Per-image seed of the part crops for repeat seed `seed`.
pub fn crop_seed(seed: u64, id: &str) -> u64 {
    seed_of!(seed, "crops", id)
}

/// Per-image seed of the gaussian benchmarks.
pub fn bench_seed(seed: u64, id: &str) -> u64 {
    seed_of!(seed, "bench", id)
}

/// Per-image seed of the augmented views.
pub fn view_seed(seed: u64, id: &str) -> u64 {
    seed_of!(seed, "views", id)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    /// Entry paths are relative to this directory.
    Files(PathBuf),
    Procedural { size: usize, seed: u64 },
}

impl ImageSource {
    pub fn of(source: &ResolvedSource) -> Self {
        match source {
            ResolvedSource::Files { root, .. } => ImageSource::Files(root.clone()),
            ResolvedSource::Synthetic(s) => ImageSource::Procedural {
                size: s.image_size,
                seed: s.seed,
            },
        }
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<Image> {
        match self {
            ImageSource::Files(root) => Image::open(resolve(root, &entry.path)),
            ImageSource::Procedural { size, seed } => Image::procedural(*size, *size, seed_of!(*seed, "image", entry.id.as_str())),
        }
    }
}

fn resolve(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}

/// Everything that shapes a feature matrix apart from the data and encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlan {
    pub crops: CropSpec,
    pub features: FeaturesConfig,
    pub batch_images: usize,
    pub seed: u64,
}

impl FeaturePlan {
    /// Loads an image and cuts what the encoder needs for this feature kind.
    pub fn prepare(&self, source: &ImageSource, entry: &ManifestEntry) -> Result<EncodeJob> {
        let img = source.load(entry)?;
        let id = entry.id.as_str();
        let mut job = EncodeJob {
            id: entry.id.clone(),
            is_member: entry.is_member,
            image: None,
            crops: Vec::new(),
            views: Vec::new(),
        };
        match self.features.kind {
            FeatureKind::Partcrop => {
                let spec = CropSpec {
                    seed: crop_seed(self.seed, id),
                    ..self.crops.clone()
                };
                job.crops = sample_crops(&img, &spec)?;
                job.image = Some(img.to_tensor());
            }
            FeatureKind::Encodermi | FeatureKind::Variance => {
                let views = augment_views_with(&img, self.features.views, view_seed(self.seed, id), &self.features.augment)?;
                job.views = views.iter().map(Image::to_tensor).collect();
            }
            FeatureKind::Supervised => job.image = Some(img.to_tensor()),
        }
        Ok(job)
    }

    fn feature(&self, job: &EncodeJob, enc: &EncodedJob) -> Result<Vec<f32>> {
        let image = || {
            enc.image
                .as_ref()
                .ok_or_else(|| Error::Gateway(format!("encoder returned no feature map for {}", job.id)))
        };
        let f = match self.features.kind {
            FeatureKind::Partcrop => {
                if enc.crops.len() != job.crops.len() {
                    return Err(Error::Gateway(format!(
                        "encoder returned {} crop vectors for {} crops of {}",
                        enc.crops.len(),
                        job.crops.len(),
                        job.id
                    )));
                }
                partcrop_feature(&image()?.feature_map, &enc.crops, bench_seed(self.seed, &job.id))?
            }
            FeatureKind::Encodermi => encodermi_feature(&enc.views)?,
            FeatureKind::Variance => variance_feature(&enc.views)?,
            FeatureKind::Supervised => {
                let pooled = image()?.pooled.as_ref().expect("encoder outputs carry a pooled vector");
                supervised_feature(pooled.data())?
            }
        };
        Ok(f.vector)
    }
}

/// Features for every manifest entry, in manifest order. Part-crop rows keep
/// both energy halves; narrow them with `FeatureSet::select`.
pub fn extract_features(
    source: &ImageSource,
    manifest: &DatasetManifest,
    plan: &FeaturePlan,
    encoder: &mut dyn Encoder,
    jobs: usize,
) -> Result<FeatureSet> {
    if plan.batch_images == 0 {
        return Err(Error::config("encoder.batch_images", "must be at least 1"));
    }
    let mut values = Vec::new();
    let mut dim = None;
    for chunk in manifest.entries.chunks(plan.batch_images) {
        let prepared = par_map(chunk, jobs, |e| plan.prepare(source, e));
        let batch = prepared.into_iter().collect::<Result<Vec<_>>>()?;
        let encoded = encoder.encode_batch(&batch)?;
        if encoded.len() != batch.len() {
            return Err(Error::Gateway(format!(
                "encoder answered {} of {} images",
                encoded.len(),
                batch.len()
            )));
        }
        let pairs: Vec<_> = batch.iter().zip(&encoded).collect();
        for (row, (job, _)) in par_map(&pairs, jobs, |(job, enc)| plan.feature(job, enc)).into_iter().zip(&pairs) {
            let row = row?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Dimension(format!(
                        "feature of {} has length {}, earlier ones {d}",
                        job.id,
                        row.len()
                    )))
                }
                Some(_) => {}
            }
            values.extend(row);
        }
    }
    let (m, n) = match plan.features.kind {
        FeatureKind::Partcrop => (Some(plan.crops.m), None),
        FeatureKind::Encodermi | FeatureKind::Variance => (None, Some(plan.features.views)),
        FeatureKind::Supervised => (None, None),
    };
    let meta = FeatureMeta {
        kind: plan.features.kind,
        dim: dim.unwrap_or(0),
        m,
        n,
        energies: EnergySelection::Both,
        seed: plan.seed,
        ids: manifest.entries.iter().map(|e| e.id.clone()).collect(),
        labels: manifest.entries.iter().map(|e| e.is_member).collect(),
    };
    FeatureSet::new(meta, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{SyntheticEncoder, SyntheticEncoderConfig};

    fn plan(kind: FeatureKind) -> FeaturePlan {
        FeaturePlan {
            crops: CropSpec {
                m: 6,
                ..CropSpec::default()
            },
            features: FeaturesConfig {
                kind,
                views: 5,
                ..FeaturesConfig::default()
            },
            batch_images: 3,
            seed: 9,
        }
    }

    fn run(kind: FeatureKind, jobs: usize) -> FeatureSet {
        let manifest = DatasetManifest::synthetic("t", 4, 3);
        let source = ImageSource::Procedural { size: 24, seed: 1 };
        let mut enc = SyntheticEncoder::new(SyntheticEncoderConfig::default()).unwrap();
        extract_features(&source, &manifest, &plan(kind), &mut enc, jobs).unwrap()
    }

    #[test]
    fn feature_lengths_per_kind() {
        assert_eq!(run(FeatureKind::Partcrop, 1).dim(), 12);
        assert_eq!(run(FeatureKind::Encodermi, 1).dim(), 10);
        assert_eq!(run(FeatureKind::Variance, 1).dim(), 64);
        assert_eq!(run(FeatureKind::Supervised, 1).dim(), 64);
    }

    #[test]
    fn rows_follow_manifest_order() {
        let s = run(FeatureKind::Partcrop, 1);
        assert_eq!(s.len(), 7);
        assert_eq!(s.meta.ids[0], "tm00000");
        assert!(s.label(0) && !s.label(6));
        assert_eq!(s.meta.m, Some(6));
    }

    #[test]
    fn worker_count_does_not_change_values() {
        for kind in [FeatureKind::Partcrop, FeatureKind::Encodermi] {
            assert_eq!(run(kind, 1), run(kind, 3));
        }
    }

    #[test]
    fn missing_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::synthetic("t", 2, 2);
        let source = ImageSource::Files(dir.path().to_path_buf());
        let mut enc = SyntheticEncoder::new(SyntheticEncoderConfig::default()).unwrap();
        let err = extract_features(&source, &manifest, &plan(FeatureKind::Partcrop), &mut enc, 1).unwrap_err();
        assert!(err.to_string().contains("tm00000.png"), "{err}");
    }
}
