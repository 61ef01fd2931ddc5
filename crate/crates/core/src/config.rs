//! The JSON run configuration shared by every command.
//!
//! Every section and field is optional; omitted values take the defaults
//! below. Unknown keys are rejected so typos fail loudly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attacker::{Activation, MlpSpec, Norm, TrainConfig, Variant};
use crate::crop::{AugmentConfig, CropSpec};
use crate::encoder::{Encoder, ExchangeConfig, ExchangeEncoder, SyntheticEncoder, SyntheticEncoderConfig};
use crate::error::{Error, Result};
use crate::features::{EnergySelection, FeatureKind};
use crate::manifest::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub crops: CropSpec,
    pub encoder: EncoderConfig,
    pub features: FeaturesConfig,
    pub attacker: AttackerConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

/// Procedurally generated images with ids `{prefix}m00000...` and
/// `{prefix}n00000...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDataset {
    pub members: usize,
    pub nonmembers: usize,
    pub image_size: usize,
    pub prefix: String,
    pub seed: u64,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        SyntheticDataset {
            members: 2000,
            nonmembers: 2000,
            image_size: 64,
            prefix: "syn".into(),
            seed: 0,
        }
    }
}

/// Where images come from: a manifest file (paths relative to `root`, or to
/// the manifest's directory) or a synthetic set. With neither, the default
/// synthetic set is used.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticDataset>,
    pub known_fraction: f64,
    /// Public data the shadow attacker is trained on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shadow: Option<DatasetSource>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            manifest: None,
            root: None,
            synthetic: None,
            known_fraction: 0.5,
            shadow: None,
        }
    }
}

impl DatasetConfig {
    pub fn source(&self) -> DatasetSource {
        DatasetSource {
            manifest: self.manifest.clone(),
            root: self.root.clone(),
            synthetic: self.synthetic.clone(),
        }
    }
}

/// A dataset source with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedSource {
    Files { manifest: PathBuf, root: PathBuf },
    Synthetic(SyntheticDataset),
}

impl DatasetSource {
    pub fn resolve(&self, field: &str) -> Result<ResolvedSource> {
        match (&self.manifest, &self.synthetic) {
            (Some(_), Some(_)) => Err(Error::config(field, "set either `manifest` or `synthetic`, not both")),
            (Some(m), None) => {
                let root = match &self.root {
                    Some(r) => r.clone(),
                    None => m.parent().map(Path::to_path_buf).unwrap_or_default(),
                };
                Ok(ResolvedSource::Files {
                    manifest: m.clone(),
                    root,
                })
            }
            (None, syn) => {
                if self.root.is_some() {
                    return Err(Error::config(format!("{field}.root"), "`root` needs a `manifest`"));
                }
                let syn = syn.clone().unwrap_or_default();
                if syn.members < 2 || syn.nonmembers < 2 {
                    return Err(Error::config(
                        format!("{field}.synthetic"),
                        "need at least 2 members and 2 non-members",
                    ));
                }
                if syn.image_size < crate::crop::MIN_SIDE {
                    return Err(Error::config(
                        format!("{field}.synthetic.image_size"),
                        format!("must be at least {}", crate::crop::MIN_SIDE),
                    ));
                }
                Ok(ResolvedSource::Synthetic(syn))
            }
        }
    }
}

impl ResolvedSource {
    pub fn manifest(&self) -> Result<DatasetManifest> {
        match self {
            ResolvedSource::Files { manifest, .. } => DatasetManifest::load(manifest),
            ResolvedSource::Synthetic(s) => Ok(DatasetManifest::synthetic(&s.prefix, s.members, s.nonmembers)),
        }
    }

    /// Whether two sources describe the same data.
    pub fn same_as(&self, other: &ResolvedSource) -> bool {
        match (self, other) {
            (ResolvedSource::Files { manifest: a, .. }, ResolvedSource::Files { manifest: b, .. }) => {
                match (fs::canonicalize(a), fs::canonicalize(b)) {
                    (Ok(a), Ok(b)) => a == b,
                    _ => a == b,
                }
            }
            (ResolvedSource::Synthetic(a), ResolvedSource::Synthetic(b)) => a.prefix == b.prefix,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Synthetic,
    Exchange,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub synthetic: SyntheticEncoderConfig,
    pub exchange: ExchangeConfig,
}

impl EncoderSpec {
    pub fn build(&self) -> Result<Box<dyn Encoder + Send>> {
        Ok(match self.kind {
            EncoderKind::Synthetic => Box::new(SyntheticEncoder::new(self.synthetic.clone())?),
            EncoderKind::Exchange => Box::new(ExchangeEncoder::new(self.exchange.clone())),
        })
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self.kind {
            EncoderKind::Synthetic => self.synthetic.validate().map_err(|e| match e {
                Error::Config { field: f, reason } => {
                    Error::config(f.replacen("encoder", field, 1), reason)
                }
                other => other,
            }),
            EncoderKind::Exchange => {
                let ex = &self.exchange;
                if !(ex.timeout_secs > 0.0 && ex.timeout_secs.is_finite()) {
                    return Err(Error::config(format!("{field}.exchange.timeout_secs"), "must be positive"));
                }
                if ex.poll_ms == 0 {
                    return Err(Error::config(format!("{field}.exchange.poll_ms"), "must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub synthetic: SyntheticEncoderConfig,
    pub exchange: ExchangeConfig,
    /// Images per encoder round trip.
    pub batch_images: usize,
    /// Encoder used on the shadow dataset; defaults to the target's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shadow: Option<EncoderSpec>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Synthetic,
            synthetic: SyntheticEncoderConfig::default(),
            exchange: ExchangeConfig::default(),
            batch_images: 64,
            shadow: None,
        }
    }
}

impl EncoderConfig {
    pub fn target(&self) -> EncoderSpec {
        EncoderSpec {
            kind: self.kind,
            synthetic: self.synthetic.clone(),
            exchange: self.exchange.clone(),
        }
    }

    pub fn shadow_spec(&self) -> EncoderSpec {
        self.shadow.clone().unwrap_or_else(|| self.target())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub kind: FeatureKind,
    pub energies: EnergySelection,
    /// Augmented views per image for the view-based baselines.
    pub views: usize,
    pub augment: AugmentConfig,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            kind: FeatureKind::Partcrop,
            energies: EnergySelection::Both,
            views: 10,
            augment: AugmentConfig::default(),
        }
    }
}

/// Attacker architecture; the input width follows from the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    pub width: usize,
    pub variant: Variant,
    pub activation: Activation,
    pub norm: Norm,
    pub v2: bool,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        let s = MlpSpec::default();
        AttackerConfig {
            width: s.width,
            variant: s.variant,
            activation: s.activation,
            norm: s.norm,
            v2: s.v2,
        }
    }
}

impl AttackerConfig {
    pub fn spec(&self, in_dim: usize) -> MlpSpec {
        MlpSpec {
            in_dim,
            width: self.width,
            variant: self.variant,
            activation: self.activation,
            norm: self.norm,
            v2: self.v2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[default]
    Partial,
    Shadow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub setting: Setting,
    pub threshold: f64,
    /// Repeat seeds; each drives the split, crops, benchmarks and training.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            setting: Setting::Partial,
            threshold: 0.5,
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    M,
    Scale,
    Energies,
    KnownFraction,
    CropScaleResponse,
    Variant,
    V2,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::M => "m",
            SweepAxis::Scale => "scale",
            SweepAxis::Energies => "energies",
            SweepAxis::KnownFraction => "known_fraction",
            SweepAxis::CropScaleResponse => "crop_scale_response",
            SweepAxis::Variant => "variant",
            SweepAxis::V2 => "v2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::config("sweep.axis", format!("unknown axis {s:?}")))
    }

    pub fn default_values(self) -> Vec<AxisValue> {
        match self {
            SweepAxis::M => [32, 64, 128, 256].map(AxisValue::M).to_vec(),
            SweepAxis::Scale => [(0.08, 0.1), (0.08, 0.2), (0.08, 0.3), (0.01, 0.03), (0.5, 1.0)]
                .map(AxisValue::Scale)
                .to_vec(),
            SweepAxis::Energies => [EnergySelection::Uniform, EnergySelection::Gaussian, EnergySelection::Both]
                .map(AxisValue::Energies)
                .to_vec(),
            SweepAxis::KnownFraction => [0.1, 0.2, 0.3, 0.4, 0.5].map(AxisValue::KnownFraction).to_vec(),
            SweepAxis::CropScaleResponse => [1.0, 0.6, 0.3].map(AxisValue::CropScaleResponse).to_vec(),
            SweepAxis::Variant => Variant::ALL.map(AxisValue::Variant).to_vec(),
            SweepAxis::V2 => [false, true].map(AxisValue::V2).to_vec(),
        }
    }

    /// Parses one JSON value of this axis.
    pub fn value(self, v: &Value, field: &str) -> Result<AxisValue> {
        let bad = || Error::config(field, format!("{v} is not a valid {} value", self.name()));
        Ok(match self {
            SweepAxis::M => AxisValue::M(v.as_u64().ok_or_else(bad)? as usize),
            SweepAxis::Scale => {
                let (lo, hi): (f64, f64) = serde_json::from_value(v.clone()).map_err(|_| bad())?;
                AxisValue::Scale((lo, hi))
            }
            SweepAxis::Energies => AxisValue::Energies(serde_json::from_value(v.clone()).map_err(|_| bad())?),
            SweepAxis::KnownFraction => AxisValue::KnownFraction(v.as_f64().ok_or_else(bad)?),
            SweepAxis::CropScaleResponse => AxisValue::CropScaleResponse(v.as_f64().ok_or_else(bad)?),
            SweepAxis::Variant => AxisValue::Variant(serde_json::from_value(v.clone()).map_err(|_| bad())?),
            SweepAxis::V2 => AxisValue::V2(v.as_bool().ok_or_else(bad)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisValue {
    M(usize),
    Scale((f64, f64)),
    Energies(EnergySelection),
    KnownFraction(f64),
    CropScaleResponse(f64),
    Variant(Variant),
    V2(bool),
}

impl AxisValue {
    /// Returns `base` with this value substituted.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match *self {
            AxisValue::M(m) => cfg.crops.m = m,
            AxisValue::Scale(s) => cfg.crops.scale = s,
            AxisValue::Energies(e) => cfg.features.energies = e,
            AxisValue::KnownFraction(f) => cfg.dataset.known_fraction = f,
            AxisValue::CropScaleResponse(c) => cfg.encoder.synthetic.crop_scale_response = c,
            AxisValue::Variant(v) => cfg.attacker.variant = v,
            AxisValue::V2(b) => cfg.attacker.v2 = b,
        }
        cfg
    }

    pub fn label(&self) -> String {
        match *self {
            AxisValue::M(m) => m.to_string(),
            AxisValue::Scale((lo, hi)) => format!("{lo}-{hi}"),
            AxisValue::Energies(e) => e.name().to_string(),
            AxisValue::KnownFraction(f) => format!("{f}"),
            AxisValue::CropScaleResponse(c) => format!("{c}"),
            AxisValue::Variant(v) => serde_json::to_value(v)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            AxisValue::V2(b) => if b { "v2" } else { "base" }.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<SweepAxis>,
    /// Axis values; the axis's standard grid when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Value>>,
}

impl SweepConfig {
    pub fn resolved_values(&self, axis: SweepAxis) -> Result<Vec<AxisValue>> {
        match &self.values {
            None => Ok(axis.default_values()),
            Some(vs) if vs.is_empty() => Err(Error::config("sweep.values", "must not be empty")),
            Some(vs) => vs
                .iter()
                .enumerate()
                .map(|(i, v)| axis.value(v, &format!("sweep.values[{i}]")))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Makes implicit defaults explicit so the echoed config describes the
    /// run on its own.
    pub fn resolve_defaults(&mut self) {
        if self.dataset.manifest.is_none() && self.dataset.synthetic.is_none() {
            self.dataset.synthetic = Some(SyntheticDataset::default());
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        self.crops.validate()?;
        self.dataset.source().resolve("dataset")?;
        if let Some(shadow) = &self.dataset.shadow {
            shadow.resolve("dataset.shadow")?;
        }
        let f = self.dataset.known_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::config("dataset.known_fraction", format!("{f} outside (0, 1]")));
        }
        self.encoder.target().validate("encoder")?;
        if let Some(s) = &self.encoder.shadow {
            s.validate("encoder.shadow")?;
        }
        if self.encoder.batch_images == 0 {
            return Err(Error::config("encoder.batch_images", "must be at least 1"));
        }
        if matches!(self.features.kind, FeatureKind::Encodermi | FeatureKind::Variance) && self.features.views < 2 {
            return Err(Error::config("features.views", format!("need at least 2 views, got {}", self.features.views)));
        }
        if self.features.energies != EnergySelection::Both && self.features.kind != FeatureKind::Partcrop {
            return Err(Error::config("features.energies", "energy selection applies to partcrop features only"));
        }
        let aug = &self.features.augment;
        if !(aug.crop_scale.0 > 0.0 && aug.crop_scale.0 <= aug.crop_scale.1 && aug.crop_scale.1 <= 1.0) {
            return Err(Error::config("features.augment.crop_scale", "need 0 < lo <= hi <= 1"));
        }
        if !(aug.aspect.0 > 0.0 && aug.aspect.0 <= aug.aspect.1 && aug.aspect.1.is_finite()) {
            return Err(Error::config("features.augment.aspect", "need 0 < lo <= hi"));
        }
        if !(0.0..=1.0).contains(&aug.flip_prob) {
            return Err(Error::config("features.augment.flip_prob", "must be in [0, 1]"));
        }
        if !(aug.max_rotation_deg >= 0.0 && aug.max_rotation_deg.is_finite()) {
            return Err(Error::config("features.augment.max_rotation_deg", "must be finite and >= 0"));
        }
        self.attacker
            .spec(1)
            .layer_dims()
            .map_err(|e| Error::config("attacker", e.to_string()))?;
        self.train.validate()?;
        let t = self.eval.threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::config("eval.threshold", format!("{t} outside [0, 1]")));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::config("eval.seeds", "need at least one seed"));
        }
        if let Some(axis) = self.sweep.axis {
            for v in self.sweep.resolved_values(axis)? {
                v.apply(self).validate_axis_free()?;
            }
        }
        Ok(())
    }

    fn validate_axis_free(&self) -> Result<()> {
        let mut c = self.clone();
        c.sweep = SweepConfig::default();
        c.validate()
    }
}
