//! Experiment protocols (partial knowledge and shadow transfer), metrics,
//! parameter sweeps and the synthetic benchmark presets.

mod bench;
mod metrics;
mod pipeline;
mod report;

pub use bench::{run_preset, Preset};
pub use metrics::{evaluate, evaluate_features, MetricsReport};
pub use pipeline::{bench_seed, crop_seed, extract_features, view_seed, FeaturePlan, ImageSource};
pub use report::{mean, sample_sd, ExperimentReport, Group, MetricStats, CSV_HEADER};

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use crate::attacker::{train, History, Mlp};
use crate::config::{EncoderSpec, ResolvedSource, RunConfig, Setting, SweepAxis, SweepConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::manifest::{split_manifest, DatasetManifest, Split, SplitConfig};
use crate::seed_of;

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

/// One trained and evaluated attacker.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub feature_dim: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub attacker: Mlp,
    pub history: History,
}

/// Executes runs, caching feature matrices and finished runs so that
/// presets and sweeps sharing a configuration do the work once.
pub struct Runner {
    jobs: usize,
    verbose: bool,
    extract: Mutex<HashMap<String, Arc<FeatureSet>>>,
    runs: Mutex<HashMap<String, Arc<RunOutcome>>>,
}

impl Runner {
    pub fn new(jobs: usize) -> Self {
        Runner {
            jobs: jobs.max(1),
            verbose: false,
            extract: Mutex::new(HashMap::new()),
            runs: Mutex::new(HashMap::new()),
        }
    }

    /// Log one line per finished run to stderr.
    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    /// Full-manifest features (both energy halves) for one repeat seed.
    /// Extractions run one at a time so exchange directories are never
    /// shared between concurrent rounds.
    pub fn features(&self, source: &ResolvedSource, encoder: &EncoderSpec, cfg: &RunConfig, seed: u64) -> Result<Arc<FeatureSet>> {
        let key = serde_json::json!({
            "source": format!("{source:?}"),
            "encoder": encoder,
            "crops": cfg.crops,
            "kind": cfg.features.kind,
            "views": cfg.features.views,
            "augment": cfg.features.augment,
            "seed": seed,
        })
        .to_string();
        let mut cache = self.extract.lock().expect("feature cache lock");
        if let Some(f) = cache.get(&key) {
            return Ok(Arc::clone(f));
        }
        let manifest = source.manifest()?;
        let plan = FeaturePlan {
            crops: cfg.crops.clone(),
            features: cfg.features.clone(),
            batch_images: cfg.encoder.batch_images,
            seed,
        };
        let mut enc = encoder.build()?;
        let set = Arc::new(extract_features(&ImageSource::of(source), &manifest, &plan, enc.as_mut(), self.jobs)?);
        cache.insert(key, Arc::clone(&set));
        Ok(set)
    }

    /// Runs `cfg` for one repeat seed under its configured setting.
    pub fn run(&self, cfg: &RunConfig, seed: u64) -> Result<Arc<RunOutcome>> {
        let mut key_cfg = cfg.clone();
        key_cfg.sweep = SweepConfig::default();
        key_cfg.eval.seeds.clear();
        let key = format!("{}#{seed}", serde_json::to_string(&key_cfg).expect("config serializes"));
        if let Some(r) = self.runs.lock().expect("run cache lock").get(&key) {
            return Ok(Arc::clone(r));
        }
        let out = Arc::new(match cfg.eval.setting {
            Setting::Partial => run_partial(self, cfg, seed)?,
            Setting::Shadow => run_shadow(self, cfg, seed)?,
        });
        if self.verbose {
            eprintln!(
                "seed {seed}: accuracy {:.4} (train {}, eval {}, dim {})",
                out.metrics.accuracy, out.train_size, out.eval_size, out.feature_dim
            );
        }
        self.runs.lock().expect("run cache lock").insert(key, Arc::clone(&out));
        Ok(out)
    }

    /// Every repeat seed of `cfg`, reported as a single group.
    pub fn experiment(&self, cfg: &RunConfig) -> Result<ExperimentReport> {
        cfg.validate()?;
        let runs = par_map(&cfg.eval.seeds, self.jobs, |&s| self.run(cfg, s))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentReport {
            setting: cfg.eval.setting,
            axis: None,
            feature_kind: cfg.features.kind,
            groups: vec![Group {
                axis_value: "-".into(),
                runs,
            }],
        })
    }

    /// One group per axis value; every value reuses the same repeat seeds
    /// (and so the same crops and splits) for paired comparisons.
    pub fn sweep(&self, cfg: &RunConfig, axis: SweepAxis) -> Result<ExperimentReport> {
        cfg.validate()?;
        let values = cfg.sweep.resolved_values(axis)?;
        let configs: Vec<RunConfig> = values.iter().map(|v| v.apply(cfg)).collect();
        for c in &configs {
            c.validate()?;
        }
        let tasks: Vec<(usize, u64)> = (0..configs.len())
            .flat_map(|i| cfg.eval.seeds.iter().map(move |&s| (i, s)))
            .collect();
        let results = par_map(&tasks, self.jobs, |&(i, s)| self.run(&configs[i], s));
        let mut groups: Vec<Group> = values
            .iter()
            .map(|v| Group {
                axis_value: v.label(),
                runs: Vec::new(),
            })
            .collect();
        for (&(i, _), r) in tasks.iter().zip(results) {
            groups[i].runs.push(r?);
        }
        Ok(ExperimentReport {
            setting: cfg.eval.setting,
            axis: Some(axis),
            feature_kind: cfg.features.kind,
            groups,
        })
    }
}

/// Uses the manifest's own split when every entry has one, otherwise splits
/// by `known_fraction`.
fn partial_split(manifest: &DatasetManifest, known_fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !manifest.entries.is_empty() && manifest.entries.iter().all(|e| e.split.is_some()) {
        let part = |s: Split| {
            DatasetManifest::new(manifest.entries.iter().filter(|e| e.split == Some(s)).cloned().collect())
        };
        return Ok((part(Split::AttackTrain)?, part(Split::AttackEval)?));
    }
    split_manifest(
        manifest,
        SplitConfig {
            known_fraction,
            seed: seed_of!(seed, "split"),
        },
    )
}

fn rows_of(set: &FeatureSet, part: &DatasetManifest) -> FeatureSet {
    let ids: BTreeSet<&str> = part.entries.iter().map(|e| e.id.as_str()).collect();
    set.subset(|i| ids.contains(set.meta.ids[i].as_str()))
}

fn train_and_evaluate(cfg: &RunConfig, seed: u64, train_set: &FeatureSet, eval_set: &FeatureSet) -> Result<RunOutcome> {
    let spec = cfg.attacker.spec(train_set.dim());
    let tc = crate::attacker::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (attacker, history) = train(&spec, train_set, &tc)?;
    let metrics = evaluate(&attacker, eval_set, cfg.eval.threshold)?;
    Ok(RunOutcome {
        seed,
        metrics,
        feature_dim: train_set.dim(),
        train_size: train_set.len(),
        eval_size: eval_set.len(),
        attacker,
        history,
    })
}

/// Partial-knowledge attack: the adversary knows `known_fraction` of the
/// target's members and non-members, trains on them, and is scored on the
/// rest.
pub fn run_partial(runner: &Runner, cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let source = cfg.dataset.source().resolve("dataset")?;
    let manifest = source.manifest()?;
    let (train_m, eval_m) = partial_split(&manifest, cfg.dataset.known_fraction, seed)?;
    train_m.require_both_classes("attack train split")?;
    eval_m.require_both_classes("attack eval split")?;
    let train_ids: BTreeSet<&str> = train_m.entries.iter().map(|e| e.id.as_str()).collect();
    if let Some(e) = eval_m.entries.iter().find(|e| train_ids.contains(e.id.as_str())) {
        return Err(Error::Evaluation(format!("id {} is in both the train and eval splits", e.id)));
    }
    let all = runner.features(&source, &cfg.encoder.target(), cfg, seed)?;
    let all = all.select(cfg.features.energies)?;
    train_and_evaluate(cfg, seed, &rows_of(&all, &train_m), &rows_of(&all, &eval_m))
}

/// Shadow transfer: the attacker learns on all of the public shadow dataset
/// (encoded by the shadow encoder) and is scored on the target dataset's
/// evaluation split.
pub fn run_shadow(runner: &Runner, cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let shadow = cfg
        .dataset
        .shadow
        .as_ref()
        .ok_or_else(|| Error::config("dataset.shadow", "the shadow setting needs a shadow dataset"))?
        .resolve("dataset.shadow")?;
    let target = cfg.dataset.source().resolve("dataset")?;
    if shadow.same_as(&target) {
        return Err(Error::config("dataset.shadow", "shadow and target datasets must differ"));
    }
    let target_manifest = target.manifest()?;
    let (_, eval_m) = partial_split(&target_manifest, cfg.dataset.known_fraction, seed)?;
    eval_m.require_both_classes("attack eval split")?;
    shadow.manifest()?.require_both_classes("shadow dataset")?;
    let train_set = runner.features(&shadow, &cfg.encoder.shadow_spec(), cfg, seed)?.select(cfg.features.energies)?;
    let target_set = runner.features(&target, &cfg.encoder.target(), cfg, seed)?.select(cfg.features.energies)?;
    train_and_evaluate(cfg, seed, &train_set, &rows_of(&target_set, &eval_m))
}
