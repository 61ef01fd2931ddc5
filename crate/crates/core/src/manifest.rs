//! Dataset manifests and the known/unknown split used by the attack protocols.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::seed_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    AttackTrain,
    AttackEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub is_member: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// An ordered list of image records. Serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub known_fraction: f64,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest { entries };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// A manifest of `members + nonmembers` path-less entries, used by the
    /// synthetic benchmarks where images are rendered procedurally.
    pub fn synthetic(prefix: &str, members: usize, nonmembers: usize) -> Self {
        let entries = (0..members)
            .map(|i| (format!("{prefix}m{i:05}"), true))
            .chain((0..nonmembers).map(|i| (format!("{prefix}n{i:05}"), false)))
            .map(|(id, is_member)| ManifestEntry {
                path: PathBuf::from(format!("{id}.png")),
                id,
                is_member,
                split: None,
            })
            .collect();
        DatasetManifest { entries }
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn members(&self) -> usize {
        self.entries.iter().filter(|e| e.is_member).count()
    }

    pub fn nonmembers(&self) -> usize {
        self.entries.len() - self.members()
    }

    /// Errors unless both classes are present.
    pub fn require_both_classes(&self, what: &str) -> Result<()> {
        if self.members() == 0 || self.nonmembers() == 0 {
            return Err(Error::Split(format!(
                "{what} needs members and non-members, has {} and {}",
                self.members(),
                self.nonmembers()
            )));
        }
        Ok(())
    }
}

/// Number of entries of one class assigned to `attack_train`:
/// floor(fraction * n), but at least one.
pub fn known_count(n: usize, fraction: f64) -> usize {
    (((n as f64) * fraction + 1e-9).floor() as usize).clamp(1, n)
}

/// Splits a listing into the adversary's known part (`attack_train`) and the
/// held-out unknown part (`attack_eval`), stratified by membership only.
pub fn split_manifest(full: &DatasetManifest, cfg: SplitConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(cfg.known_fraction > 0.0 && cfg.known_fraction <= 1.0) {
        return Err(Error::Split(format!(
            "known_fraction {} outside (0, 1]",
            cfg.known_fraction
        )));
    }
    full.check_unique_ids()?;

    let mut train_ids = HashSet::new();
    for (class, member) in [("members", true), ("nonmembers", false)] {
        let mut idx: Vec<usize> = full
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_member == member)
            .map(|(i, _)| i)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Split(format!("need at least 2 {class}, found {}", idx.len())));
        }
        idx.shuffle(&mut rng::seeded(seed_of!(cfg.seed, "split", class)));
        let k = known_count(idx.len(), cfg.known_fraction);
        train_ids.extend(idx[..k].iter().copied());
    }

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, e) in full.entries.iter().enumerate() {
        let mut e = e.clone();
        if train_ids.contains(&i) {
            e.split = Some(Split::AttackTrain);
            train.push(e);
        } else {
            e.split = Some(Split::AttackEval);
            eval.push(e);
        }
    }
    Ok((DatasetManifest { entries: train }, DatasetManifest { entries: eval }))
}
