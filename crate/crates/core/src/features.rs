//! Membership features.
//!
//! The part-crop feature treats every crop vector as a query against the
//! image's feature map: the dot-product responses are softmaxed into a
//! distribution over map positions, and that distribution is compared with a
//! uniform and a (per-query random) softmaxed-gaussian benchmark by
//! `sum_j b_j ln(b_j / v_j)`. The two energy lists are each sorted in
//! descending order and concatenated.
//!
//! The baseline features (EncoderMI pairwise cosines, per-channel variance of
//! augmented views, and the pooled representation itself) live here too.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, standard_normal};
use crate::seed_of;
use crate::tensor::{read_tensor, write_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Partcrop,
    Encodermi,
    Variance,
    Supervised,
}

/// Which energy halves of a part-crop feature to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySelection {
    #[default]
    Both,
    Uniform,
    Gaussian,
}

impl EnergySelection {
    pub fn name(self) -> &'static str {
        match self {
            EnergySelection::Both => "both",
            EnergySelection::Uniform => "uniform",
            EnergySelection::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipFeature {
    pub kind: FeatureKind,
    pub vector: Vec<f32>,
    pub label: Option<bool>,
}

/// Raw dot products of every map row with the query, in f64.
pub fn similarity(feature_map: &Tensor, query: &Tensor) -> Result<Vec<f64>> {
    let [n, d] = *feature_map.shape() else {
        return Err(Error::Dimension(format!("feature map must be [N, D], got {:?}", feature_map.shape())));
    };
    if query.shape() != [d] {
        return Err(Error::Dimension(format!("query shape {:?} does not match D = {d}", query.shape())));
    }
    let q = query.data();
    Ok((0..n)
        .map(|j| {
            feature_map
                .row(j)
                .iter()
                .zip(q)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum()
        })
        .collect())
}

/// Max-subtracted softmax.
pub fn to_distribution(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn uniform_benchmark(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Softmax of `n` i.i.d. standard normal draws from the stream `seed`.
pub fn gaussian_benchmark(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut r)).collect();
    to_distribution(&draws)
}

/// `sum_j bench_j * ln(bench_j / v_j)`.
pub fn kl_energy(v: &[f64], bench: &[f64]) -> Result<f64> {
    if v.len() != bench.len() {
        return Err(Error::Dimension(format!(
            "distribution lengths differ: {} vs {}",
            v.len(),
            bench.len()
        )));
    }
    let mut total = 0.0;
    for (j, (&p, &b)) in v.iter().zip(bench).enumerate() {
        if b == 0.0 {
            continue;
        }
        if !(p > 0.0) {
            return Err(Error::Numeric(format!("response probability {p} at slot {j} is not positive")));
        }
        total += b * (b / p).ln();
    }
    Ok(total)
}

/// Uniform and gaussian energies of one query, unsorted.
pub fn response_energy(feature_map: &Tensor, part: &Tensor, gaussian_seed: u64) -> Result<(f64, f64)> {
    let v = to_distribution(&similarity(feature_map, part)?);
    let eu = kl_energy(&v, &uniform_benchmark(v.len()))?;
    let eg = kl_energy(&v, &gaussian_benchmark(v.len(), gaussian_seed))?;
    Ok((eu, eg))
}

/// Seed of the gaussian benchmark of query `i` for a feature seeded `seed`.
pub fn query_seed(seed: u64, i: usize) -> u64 {
    seed_of!(seed, "gauss", i)
}

fn sort_descending(v: &mut [f64]) {
    v.sort_by(|a, b| b.total_cmp(a));
}

/// The part-crop membership feature `[sorted E^u || sorted E^g]`, length 2m.
pub fn partcrop_feature(feature_map: &Tensor, parts: &[Tensor], seed: u64) -> Result<MembershipFeature> {
    if parts.is_empty() {
        return Err(Error::Parameter("part-crop feature needs at least one part".into()));
    }
    let mut eu = Vec::with_capacity(parts.len());
    let mut eg = Vec::with_capacity(parts.len());
    for (i, p) in parts.iter().enumerate() {
        let (u, g) = response_energy(feature_map, p, query_seed(seed, i))?;
        eu.push(u);
        eg.push(g);
    }
    sort_descending(&mut eu);
    sort_descending(&mut eg);
    let vector = eu.iter().chain(&eg).map(|&e| e as f32).collect();
    Ok(MembershipFeature {
        kind: FeatureKind::Partcrop,
        vector,
        label: None,
    })
}

/// Keeps the requested half (or both) of a part-crop vector.
pub fn select_energies(vector: &[f32], sel: EnergySelection) -> &[f32] {
    let m = vector.len() / 2;
    match sel {
        EnergySelection::Both => vector,
        EnergySelection::Uniform => &vector[..m],
        EnergySelection::Gaussian => &vector[m..],
    }
}

fn check_views(views: &[Tensor]) -> Result<usize> {
    if views.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 views, got {}", views.len())));
    }
    let d = views[0].len();
    if let Some(v) = views.iter().find(|v| v.shape() != [d]) {
        return Err(Error::Dimension(format!("view shape {:?} differs from [{d}]", v.shape())));
    }
    Ok(d)
}

/// EncoderMI: cosine similarity of every unordered pair of view
/// representations, sorted descending; length n(n-1)/2.
pub fn encodermi_feature(views: &[Tensor]) -> Result<MembershipFeature> {
    check_views(views)?;
    let norms: Vec<f64> = views
        .iter()
        .map(|v| v.data().iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Numeric(format!("view {i} has zero norm; cosine undefined")));
    }
    let n = views.len();
    let mut sims = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = views[i]
                .data()
                .iter()
                .zip(views[j].data())
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum();
            sims.push(dot / (norms[i] * norms[j]));
        }
    }
    sort_descending(&mut sims);
    Ok(MembershipFeature {
        kind: FeatureKind::Encodermi,
        vector: sims.into_iter().map(|s| s as f32).collect(),
        label: None,
    })
}

/// Per-channel population variance across views (Welford).
pub fn variance_feature(views: &[Tensor]) -> Result<MembershipFeature> {
    let d = check_views(views)?;
    let mut mean = vec![0f64; d];
    let mut m2 = vec![0f64; d];
    for (k, v) in views.iter().enumerate() {
        let count = (k + 1) as f64;
        for ((mu, s), &x) in mean.iter_mut().zip(&mut m2).zip(v.data()) {
            let x = f64::from(x);
            let delta = x - *mu;
            *mu += delta / count;
            *s += delta * (x - *mu);
        }
    }
    let n = views.len() as f64;
    Ok(MembershipFeature {
        kind: FeatureKind::Variance,
        vector: m2.into_iter().map(|s| (s / n) as f32).collect(),
        label: None,
    })
}

/// The pooled representation used directly as the feature.
pub fn supervised_feature(pooled: &[f32]) -> Result<MembershipFeature> {
    if pooled.is_empty() {
        return Err(Error::Validation("empty pooled vector".into()));
    }
    if let Some(i) = pooled.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value {} at index {i}", pooled[i])));
    }
    Ok(MembershipFeature {
        kind: FeatureKind::Supervised,
        vector: pooled.to_vec(),
        label: None,
    })
}

/// Sidecar describing a persisted feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub kind: FeatureKind,
    pub dim: usize,
    /// Crop count for part-crop features, view count for view-based ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub energies: EnergySelection,
    pub seed: u64,
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
}

/// Labelled feature rows, all of one kind and length.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub meta: FeatureMeta,
    /// Row-major `[len, dim]`.
    pub values: Vec<f32>,
}

impl FeatureSet {
    pub fn new(meta: FeatureMeta, values: Vec<f32>) -> Result<Self> {
        if meta.ids.len() != meta.labels.len() {
            return Err(Error::Validation(format!(
                "{} ids but {} labels",
                meta.ids.len(),
                meta.labels.len()
            )));
        }
        if values.len() != meta.ids.len() * meta.dim {
            return Err(Error::Validation(format!(
                "{} values do not form {} rows of {}",
                values.len(),
                meta.ids.len(),
                meta.dim
            )));
        }
        Ok(FeatureSet { meta, values })
    }

    pub fn len(&self) -> usize {
        self.meta.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.meta.dim..(i + 1) * self.meta.dim]
    }

    pub fn label(&self, i: usize) -> bool {
        self.meta.labels[i]
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn subset(&self, mut keep: impl FnMut(usize) -> bool) -> FeatureSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        let mut meta = self.meta.clone();
        meta.ids = idx.iter().map(|&i| self.meta.ids[i].clone()).collect();
        meta.labels = idx.iter().map(|&i| self.meta.labels[i]).collect();
        let values = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        FeatureSet { meta, values }
    }

    /// Restricts part-crop rows to one energy half.
    pub fn select(&self, sel: EnergySelection) -> Result<FeatureSet> {
        if sel == EnergySelection::Both {
            return Ok(self.clone());
        }
        if self.meta.kind != FeatureKind::Partcrop || self.meta.energies != EnergySelection::Both {
            return Err(Error::Validation("energy selection needs full part-crop features".into()));
        }
        let mut meta = self.meta.clone();
        meta.dim = self.meta.dim / 2;
        meta.energies = sel;
        let values = (0..self.len())
            .flat_map(|i| select_energies(self.row(i), sel).iter().copied())
            .collect();
        Ok(FeatureSet { meta, values })
    }

    /// Writes `features.pctf` (`[len, dim]`) and `features.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let t = Tensor::matrix(self.len(), self.dim(), self.values.clone())?;
        write_tensor(&t, dir.join("features.pctf"))?;
        let path = dir.join("features.json");
        let text = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("features.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: FeatureMeta = serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
        let t = read_tensor(dir.join("features.pctf"))?;
        if t.shape() != [meta.ids.len(), meta.dim] {
            return Err(Error::Validation(format!(
                "feature tensor {:?} disagrees with sidecar ({} x {})",
                t.shape(),
                meta.ids.len(),
                meta.dim
            )));
        }
        FeatureSet::new(meta, t.into_data())
    }
}
