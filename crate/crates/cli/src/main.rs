use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use partcrop::attacker::{save_history, train, Mlp, TrainConfig};
use partcrop::config::{RunConfig, SweepAxis};
use partcrop::crop::{sample_crop_windows, sample_crops, CropSpec};
use partcrop::eval::{crop_seed, evaluate, run_preset, ExperimentReport, FeaturePlan, Group, ImageSource, Preset, Runner};
use partcrop::features::{FeatureKind, FeatureSet};
use partcrop::image::Image;
use partcrop::manifest::{split_manifest, SplitConfig};
use partcrop::{seed_of, write_tensor, Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "partcrop", version, about = "Part-crop membership inference against visual encoders")]
struct Cli {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the configured repeat seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "partcrop-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitPart {
    All,
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Cut part crops from every image in a directory.
    Crops { images: PathBuf },
    /// Encode the dataset's images and their crops or views.
    Encode,
    /// Build membership features for the dataset.
    Features {
        #[arg(long, value_enum, default_value_t = SplitPart::All)]
        split: SplitPart,
    },
    /// Train an attacker on a saved feature set.
    Train {
        #[arg(long)]
        features: PathBuf,
    },
    /// Score a saved attacker on a saved feature set.
    Eval {
        #[arg(long)]
        attacker: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Run the configured attack end to end for every repeat seed.
    Attack,
    /// Run a synthetic benchmark preset.
    SynthBench { preset: String },
    /// Run the attack once per value of a sweep axis.
    Sweep {
        #[arg(long)]
        axis: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ExchangeTimeout { .. } => 3,
        e if e.is_validation() => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.eval.seeds = vec![s];
    }
    cfg.resolve_defaults();
    cfg.validate()?;
    Ok(cfg)
}

/// Seed for commands that produce a single artifact.
fn base_seed(cfg: &RunConfig) -> u64 {
    cfg.eval.seeds[0]
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_file(&out.join("config.json"), cfg.to_json())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::SynthBench { preset } => {
            let mut cfg = Preset::parse(preset)?.config();
            if let Some(s) = cli.seed {
                cfg.eval.seeds = vec![s];
            }
            let report = run_preset(&Runner::new(cli.jobs).verbose(true), &cfg)?;
            finish_report(&cfg, &report, &cli.out, false)
        }
        Command::Crops { images } => {
            let cfg = load_config(&cli)?;
            cmd_crops(&cfg, images, &cli.out)
        }
        Command::Encode => cmd_encode(&load_config(&cli)?, cli.jobs, &cli.out),
        Command::Features { split } => cmd_features(&load_config(&cli)?, *split, cli.jobs, &cli.out),
        Command::Train { features } => cmd_train(&load_config(&cli)?, features, &cli.out),
        Command::Eval { attacker, features } => cmd_eval(&load_config(&cli)?, attacker, features, &cli.out),
        Command::Attack => {
            let cfg = load_config(&cli)?;
            let report = Runner::new(cli.jobs).verbose(true).experiment(&cfg)?;
            finish_report(&cfg, &report, &cli.out, true)
        }
        Command::Sweep { axis } => {
            let cfg = load_config(&cli)?;
            let axis = match axis {
                Some(a) => SweepAxis::parse(a)?,
                None => cfg
                    .sweep
                    .axis
                    .ok_or_else(|| Error::config("sweep.axis", "name an axis with --axis or in the config"))?,
            };
            let report = Runner::new(cli.jobs).verbose(true).sweep(&cfg, axis)?;
            finish_report(&cfg, &report, &cli.out, false)
        }
    }
}

fn finish_report(cfg: &RunConfig, report: &ExperimentReport, out: &Path, save_attackers: bool) -> Result<()> {
    report.write(out)?;
    echo_config(cfg, out)?;
    if save_attackers {
        for r in report.groups.iter().flat_map(|g: &Group| &g.runs) {
            let dir = out.join(format!("attacker_seed{}", r.seed));
            r.attacker.save(&dir)?;
            save_history(&r.history, &dir)?;
        }
    }
    for g in &report.groups {
        let m = g.mean();
        let sd = g.sd();
        println!(
            "{:>10}  acc {:.4} ± {:.4}  pre {:.4}  rec {:.4}  f1 {:.4}  (dim {}, {} runs)",
            g.axis_value,
            m.accuracy,
            sd.accuracy,
            m.precision,
            m.recall,
            m.f1,
            g.feature_dim(),
            g.runs.len()
        );
    }
    Ok(())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn cmd_crops(cfg: &RunConfig, images: &Path, out: &Path) -> Result<()> {
    let seed = base_seed(cfg);
    let mut paths: Vec<PathBuf> = fs::read_dir(images)
        .map_err(|e| io_error(images, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_error(images, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    let mut listing = Vec::new();
    for path in &paths {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let img = Image::open(path)?;
        let spec = CropSpec {
            seed: crop_seed(seed, &id),
            ..cfg.crops.clone()
        };
        let windows = sample_crop_windows(&img, &spec)?;
        let crops = sample_crops(&img, &spec)?;
        let dir = out.join(&id);
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let mut files = Vec::new();
        for (j, c) in crops.iter().enumerate() {
            let name = format!("{id}/crop_{j:04}.pctf");
            write_tensor(c, out.join(&name))?;
            files.push(name);
        }
        listing.push(json!({
            "id": id,
            "source": path,
            "height": img.height(),
            "width": img.width(),
            "seed": spec.seed,
            "files": files,
            "windows": windows,
        }));
    }
    let doc = json!({
        "m": cfg.crops.m,
        "scale": cfg.crops.scale,
        "out_size": cfg.crops.out_size,
        "aspect": cfg.crops.aspect,
        "repeat_seed": seed,
        "images": listing,
    });
    write_file(&out.join("crops.json"), serde_json::to_string_pretty(&doc).expect("json"))?;
    echo_config(cfg, out)?;
    println!("{} crops from {} images", cfg.crops.m * paths.len(), paths.len());
    Ok(())
}

fn stack(rows: &[Tensor]) -> Result<Tensor> {
    let d = rows.first().map_or(0, Tensor::len);
    let data = rows.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::matrix(rows.len(), d, data)
}

fn cmd_encode(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<()> {
    let source = cfg.dataset.source().resolve("dataset")?;
    let manifest = source.manifest()?;
    let images = ImageSource::of(&source);
    let plan = FeaturePlan {
        crops: cfg.crops.clone(),
        features: cfg.features.clone(),
        batch_images: cfg.encoder.batch_images,
        seed: base_seed(cfg),
    };
    let mut encoder = cfg.encoder.target().build()?;
    let dir = out.join("encoded");
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let mut listing = Vec::new();
    for chunk in manifest.entries.chunks(plan.batch_images) {
        let batch = partcrop::eval::par_map(chunk, jobs, |e| plan.prepare(&images, e))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let encoded = encoder.encode_batch(&batch)?;
        for (job, enc) in batch.iter().zip(&encoded) {
            let mut files = serde_json::Map::new();
            if let Some(img) = &enc.image {
                let p = format!("{}.map.pctf", job.id);
                write_tensor(&img.feature_map, dir.join(&p))?;
                files.insert("map".into(), json!(p));
            }
            if !enc.crops.is_empty() {
                let p = format!("{}.crops.pctf", job.id);
                write_tensor(&stack(&enc.crops)?, dir.join(&p))?;
                files.insert("crops".into(), json!(p));
            }
            if !enc.views.is_empty() {
                let p = format!("{}.views.pctf", job.id);
                write_tensor(&stack(&enc.views)?, dir.join(&p))?;
                files.insert("views".into(), json!(p));
            }
            listing.push(json!({"id": job.id, "is_member": job.is_member, "files": files}));
        }
    }
    write_file(&dir.join("encoded.json"), serde_json::to_string_pretty(&listing).expect("json"))?;
    echo_config(cfg, out)?;
    println!("encoded {} images", listing.len());
    Ok(())
}

fn cmd_features(cfg: &RunConfig, part: SplitPart, jobs: usize, out: &Path) -> Result<()> {
    let seed = base_seed(cfg);
    let source = cfg.dataset.source().resolve("dataset")?;
    let all = Runner::new(jobs).features(&source, &cfg.encoder.target(), cfg, seed)?;
    let mut set = all.select(cfg.features.energies)?;
    if !matches!(part, SplitPart::All) {
        let (train_m, eval_m) = split_manifest(
            &source.manifest()?,
            SplitConfig {
                known_fraction: cfg.dataset.known_fraction,
                seed: seed_of!(seed, "split"),
            },
        )?;
        let keep = if matches!(part, SplitPart::Train) { train_m } else { eval_m };
        let ids: std::collections::BTreeSet<&str> = keep.entries.iter().map(|e| e.id.as_str()).collect();
        set = set.subset(|i| ids.contains(set.meta.ids[i].as_str()));
    }
    set.save(out)?;
    echo_config(cfg, out)?;
    let what = match set.meta.kind {
        FeatureKind::Partcrop => format!("m = {}", set.meta.m.unwrap_or(0)),
        FeatureKind::Encodermi | FeatureKind::Variance => format!("n = {}", set.meta.n.unwrap_or(0)),
        FeatureKind::Supervised => "pooled".into(),
    };
    println!("{} rows of length {} ({what})", set.len(), set.dim());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, features: &Path, out: &Path) -> Result<()> {
    let set = FeatureSet::load(features)?;
    let spec = cfg.attacker.spec(set.dim());
    let tc = TrainConfig {
        seed: base_seed(cfg),
        ..cfg.train.clone()
    };
    let (attacker, history) = train(&spec, &set, &tc)?;
    attacker.save(out)?;
    save_history(&history, out)?;
    echo_config(cfg, out)?;
    if let Some(last) = history.last() {
        println!("epoch {}: loss {:.6}, train accuracy {:.4}", last.epoch, last.loss, last.train_acc);
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, attacker: &Path, features: &Path, out: &Path) -> Result<()> {
    let mlp = Mlp::load(attacker)?;
    let set = FeatureSet::load(features)?;
    let m = evaluate(&mlp, &set, cfg.eval.threshold)?;
    write_file(&out.join("metrics.json"), serde_json::to_string_pretty(&m).expect("json"))?;
    echo_config(cfg, out)?;
    println!(
        "acc {:.4}  pre {:.4}  rec {:.4}  f1 {:.4}  (tp {} fp {} tn {} fn {})",
        m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_
    );
    Ok(())
}
