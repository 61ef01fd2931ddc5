//! Synthetic benchmark presets with pinned data sizes and seeds.

use serde_json::json;

use super::{ExperimentReport, Runner};
use crate::attacker::Variant;
use crate::config::{RunConfig, SweepAxis, SyntheticDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Member steepness 0.8 against 0.5.
    Gap03,
    /// Identical class-conditional responses.
    Gap0,
    /// `Gap03` with the encoder's crop-scale response at 1.0, 0.6 and 0.3.
    ScsrSweep,
    /// Narrow attacker on a small gap (0.6 against 0.5), with and without v2.
    Gap01Narrow,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Gap03, Preset::Gap0, Preset::ScsrSweep, Preset::Gap01Narrow];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Gap03 => "gap03",
            Preset::Gap0 => "gap0",
            Preset::ScsrSweep => "scsr_sweep",
            Preset::Gap01Narrow => "gap01_narrow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::config("preset", format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
        })
    }

    pub fn config(self) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dataset.synthetic = Some(SyntheticDataset {
            members: 2000,
            nonmembers: 2000,
            image_size: 32,
            prefix: "syn".into(),
            seed: 0,
        });
        cfg.crops.m = 32;
        cfg.encoder.synthetic.dim = 64;
        cfg.encoder.synthetic.map_rows = 16;
        cfg.encoder.synthetic.alpha_member = 0.8;
        cfg.encoder.synthetic.alpha_nonmember = 0.5;
        cfg.eval.seeds = vec![1, 2, 3];
        match self {
            Preset::Gap03 => {}
            Preset::Gap0 => cfg.encoder.synthetic.alpha_nonmember = 0.8,
            Preset::ScsrSweep => {
                cfg.sweep.axis = Some(SweepAxis::CropScaleResponse);
                cfg.sweep.values = Some(vec![json!(1.0), json!(0.6), json!(0.3)]);
            }
            Preset::Gap01Narrow => {
                cfg.encoder.synthetic.alpha_member = 0.6;
                cfg.attacker.variant = Variant::Narrow;
                cfg.sweep.axis = Some(SweepAxis::V2);
                cfg.sweep.values = Some(vec![json!(false), json!(true)]);
            }
        }
        cfg
    }
}

/// Runs a preset configuration: a sweep when it names an axis, otherwise a
/// plain experiment over its seeds.
pub fn run_preset(runner: &Runner, cfg: &RunConfig) -> Result<ExperimentReport> {
    match cfg.sweep.axis {
        Some(axis) => runner.sweep(cfg, axis),
        None => runner.experiment(cfg),
    }
}
