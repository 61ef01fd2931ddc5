use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::sigmoid;
use super::{adam_step, AdamState, Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::rng::{self, Rng};
use crate::seed_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 100,
            lr: 1e-3,
            weight_decay: 5e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 || self.batch % 2 != 0 {
            return Err(Error::config("train.batch", format!("must be even and >= 2, got {}", self.batch)));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("{} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", format!("{} must be >= 0", self.weight_decay)));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("train.betas", format!("({b1}, {b2}) must lie in [0, 1)")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("train.eps", "must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("train.threshold", format!("{} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    /// CSV with header `epoch,loss,train_acc`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "train_acc"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), format!("{:.8}", e.loss), format!("{:.6}", e.train_acc)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Index stream over one class: a shuffled pool that reshuffles on
/// exhaustion.
struct ClassStream {
    pool: Vec<usize>,
    pos: usize,
}

impl ClassStream {
    fn new(pool: Vec<usize>) -> Self {
        ClassStream { pool, pos: 0 }
    }

    fn reshuffle(&mut self, r: &mut Rng) {
        self.pool.shuffle(r);
        self.pos = 0;
    }

    fn take(&mut self, k: usize, r: &mut Rng, out: &mut Vec<usize>) {
        for _ in 0..k {
            if self.pos == self.pool.len() {
                self.reshuffle(r);
            }
            out.push(self.pool[self.pos]);
            self.pos += 1;
        }
    }
}

/// Batches for every epoch: each has `batch/2` members followed by
/// `batch/2` non-members. Both pools are reshuffled at the start of each
/// epoch; an epoch covers the larger class once, recycling the smaller one.
pub fn balanced_batches(labels: &[bool], batch: usize, epochs: usize, seed: u64) -> Result<Vec<Vec<Vec<usize>>>> {
    let half = batch / 2;
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let nonmembers: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    for (name, pool) in [("member", &members), ("non-member", &nonmembers)] {
        if pool.len() < half.max(1) {
            return Err(Error::TrainingSetup(format!(
                "{} {name} samples cannot fill half of a batch of {batch}; lower train.batch or add data",
                pool.len()
            )));
        }
    }
    let per_epoch = members.len().max(nonmembers.len()).div_ceil(half);
    let mut r = rng::seeded(seed);
    let mut ms = ClassStream::new(members);
    let mut ns = ClassStream::new(nonmembers);
    Ok((0..epochs)
        .map(|_| {
            ms.reshuffle(&mut r);
            ns.reshuffle(&mut r);
            (0..per_epoch)
                .map(|_| {
                    let mut b = Vec::with_capacity(batch);
                    ms.take(half, &mut r, &mut b);
                    ns.take(half, &mut r, &mut b);
                    b
                })
                .collect()
        })
        .collect())
}

fn gather(set: &FeatureSet, idx: &[usize]) -> (Array2<f64>, Vec<f64>) {
    let d = set.dim();
    let mut x = Array2::zeros((idx.len(), d));
    for (mut row, &i) in x.rows_mut().into_iter().zip(idx) {
        for (o, &v) in row.iter_mut().zip(set.row(i)) {
            *o = f64::from(v);
        }
    }
    let y = idx.iter().map(|&i| if set.label(i) { 1.0 } else { 0.0 }).collect();
    (x, y)
}

/// Trains an attacker on balanced mini-batches. Deterministic in
/// `cfg.seed`: the same seed and data give bit-identical parameters.
pub fn train(spec: &MlpSpec, data: &FeatureSet, cfg: &TrainConfig) -> Result<(Mlp, History)> {
    cfg.validate()?;
    if spec.in_dim != data.dim() {
        return Err(Error::Dimension(format!(
            "attacker in_dim {} but features have {} columns",
            spec.in_dim,
            data.dim()
        )));
    }
    let mut params = Mlp::build(spec, seed_of!(cfg.seed, "attacker"))?;
    let mut state = AdamState::new(&params);
    let schedule = balanced_batches(&data.meta.labels, cfg.batch, cfg.epochs, seed_of!(cfg.seed, "batches"))?;
    let mut history = History::default();
    for (epoch, batches) in schedule.iter().enumerate() {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for idx in batches {
            let (x, y) = gather(data, idx);
            let (loss, grads, logits) = params.loss_grad_logits(x.view(), &y)?;
            correct += logits
                .iter()
                .zip(&y)
                .filter(|(&z, &t)| (sigmoid(z) >= cfg.threshold) == (t == 1.0))
                .count();
            seen += y.len();
            loss_sum += loss;
            adam_step(&mut params, &grads, &mut state, cfg);
        }
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / batches.len() as f64,
            train_acc: correct as f64 / seen as f64,
        });
    }
    Ok((params, history))
}

/// Writes the training history next to a saved attacker.
pub fn save_history(history: &History, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    history.write_csv(dir.join("history.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{EnergySelection, FeatureKind, FeatureMeta};
    use crate::rng::standard_normal;

    fn set(labels: Vec<bool>, dim: usize, values: Vec<f32>) -> FeatureSet {
        let meta = FeatureMeta {
            kind: FeatureKind::Supervised,
            dim,
            m: None,
            n: None,
            energies: EnergySelection::Both,
            seed: 0,
            ids: (0..labels.len()).map(|i| format!("s{i}")).collect(),
            labels,
        };
        FeatureSet::new(meta, values).unwrap()
    }

    /// Two gaussians 5 sigma apart along every axis.
    fn separable(n_per_class: usize, dim: usize, seed: u64) -> FeatureSet {
        let mut r = rng::seeded(seed);
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for class in [true, false] {
            for _ in 0..n_per_class {
                labels.push(class);
                let shift = if class { 2.5 } else { -2.5 };
                values.extend((0..dim).map(|_| (shift + standard_normal(&mut r)) as f32));
            }
        }
        set(labels, dim, values)
    }

    #[test]
    fn batches_are_exactly_balanced() {
        let labels: Vec<bool> = (0..530).map(|i| i % 3 == 0).collect();
        let schedule = balanced_batches(&labels, 100, 3, 1).unwrap();
        for epoch in &schedule {
            for b in epoch {
                assert_eq!(b.len(), 100);
                assert_eq!(b.iter().filter(|&&i| labels[i]).count(), 50);
            }
        }
    }

    #[test]
    fn larger_class_seen_once_per_epoch() {
        let labels: Vec<bool> = (0..300).map(|i| i < 200).collect();
        let schedule = balanced_batches(&labels, 100, 2, 7).unwrap();
        for epoch in &schedule {
            let mut members: Vec<usize> = epoch.iter().flatten().copied().filter(|&i| labels[i]).collect();
            members.sort();
            assert_eq!(members, (0..200).collect::<Vec<_>>());
        }
    }

    #[test]
    fn starving_class_is_setup_error() {
        let labels = vec![true; 120];
        assert!(matches!(balanced_batches(&labels, 100, 1, 0), Err(Error::TrainingSetup(_))));
        let labels: Vec<bool> = (0..100).map(|i| i < 70).collect();
        assert!(matches!(balanced_batches(&labels, 100, 1, 0), Err(Error::TrainingSetup(_))));
    }

    #[test]
    fn odd_batch_rejected() {
        let data = separable(10, 2, 0);
        let cfg = TrainConfig { batch: 7, ..TrainConfig::default() };
        let spec = MlpSpec { in_dim: 2, width: 8, ..MlpSpec::default() };
        assert!(train(&spec, &data, &cfg).is_err());
    }

    #[test]
    fn separable_gaussians_reach_99_percent() {
        let data = separable(200, 8, 3);
        let spec = MlpSpec { in_dim: 8, width: 32, ..MlpSpec::default() };
        let cfg = TrainConfig { seed: 5, ..TrainConfig::default() };
        let (_, history) = train(&spec, &data, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 100);
        assert!(history.last().unwrap().train_acc >= 0.99, "{:?}", history.last());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let data = separable(60, 4, 1);
        let spec = MlpSpec { in_dim: 4, width: 16, v2: true, ..MlpSpec::default() };
        let cfg = TrainConfig { epochs: 5, batch: 20, seed: 9, ..TrainConfig::default() };
        let (a, ha) = train(&spec, &data, &cfg).unwrap();
        let (b, hb) = train(&spec, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let data = separable(25, 4, 11);
        let spec = MlpSpec { in_dim: 4, width: 16, ..MlpSpec::default() };
        let cfg = TrainConfig { epochs: 60, batch: 50, lr: 1e-4, seed: 2, ..TrainConfig::default() };
        let (_, history) = train(&spec, &data, &cfg).unwrap();
        for w in history.epochs.windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn empty_nonmember_pool() {
        let data = set(vec![true; 4], 1, vec![0.0; 4]);
        let cfg = TrainConfig { batch: 2, ..TrainConfig::default() };
        let spec = MlpSpec { in_dim: 1, width: 4, ..MlpSpec::default() };
        assert!(matches!(train(&spec, &data, &cfg), Err(Error::TrainingSetup(_))));
    }

    #[test]
    fn history_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let h = History {
            epochs: vec![EpochStats { epoch: 1, loss: 0.5, train_acc: 0.75 }],
        };
        save_history(&h, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(text, "epoch,loss,train_acc\n1,0.50000000,0.750000\n");
    }
}
