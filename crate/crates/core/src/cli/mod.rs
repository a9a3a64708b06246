//! Command-line front end. Every command reads/writes files under the
//! `--out` directory, records a run manifest (inputs, outputs, seed,
//! version, wall-clock duration) and is bitwise reproducible given the
//! same inputs and seed, independent of `--threads`.
//!
//! Exit codes: 0 success, 2 config/usage error, 3 empty-result warning,
//! 4 numerical failure.

pub mod gradcheck;

use crate::classical::{run_classical, ClassicalConfig};
use crate::error::{Error, Result};
use crate::networks::{checkpoint, predict_full, Network, NetworkKind, NetworkSpec};
use crate::quality::{build_report, landcover_class_names, StipConfig};
use crate::stack::format::{read_mask, read_stack, write_mask, write_probability_pgm, write_stack};
use crate::stack::PixelMask;
use crate::synth::{generate, LandcoverClass, SceneConfig};
use crate::trainer::{train, Dataset, TrainConfig, TrainSample};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "psnet",
    version,
    about = "Persistent-scatterer selection on interferogram stacks: synthetic scenes, the classical phase-stability chain, CNN/ConvLSTM segmentation, and STIP-based evaluation"
)]
pub struct Cli {
    /// Seed override for stochastic commands (synth, train, gradcheck).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap; defaults to the available cores. Results do not
    /// depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a truth-labelled synthetic interferogram stack.
    Synth(SynthArgs),
    /// Run the classical phase-stability PS selection.
    Classical(ClassicalArgs),
    /// Train CNN-ISS or CLSTM-ISS on labelled scenes.
    Train(TrainArgs),
    /// Predict a PS probability map and mask from a checkpoint.
    Predict(PredictArgs),
    /// Compare masks: overlaps, land cover shares, truth metrics, STIP.
    Eval(EvalArgs),
    /// Verify every differentiable op and both networks against finite
    /// differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene config JSON (all fields optional; defaults documented in
    /// --help of the library types).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassicalArgs {
    #[arg(long)]
    pub stack: PathBuf,
    /// Selection config JSON; defaults: D_A gate 0.4, filter radius 10 px,
    /// Δh grid ±20 m at 0.1 m, coherence threshold 0.75, ≤10 iterations at
    /// RMS tolerance 1e-3.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of <name>.ifgstack + <name>.psmask training pairs.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Network kind: cnn | clstm.
    #[arg(long)]
    pub kind: String,
    /// Training config JSON overriding the per-kind defaults
    /// (cnn: 400 epochs at lr 0.01; clstm: 300 epochs at lr 0.001;
    /// patience 20, class weights 200:1, batch 8, patch 100, dropout 0.25).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub stack: PathBuf,
    /// Mask file; repeat for several masks.
    #[arg(long = "mask", required = true)]
    pub masks: Vec<PathBuf>,
    /// Truth mask for precision/recall/F1 columns.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Truth sidecar JSON (land cover codes) for area-wise statistics.
    #[arg(long)]
    pub truth_json: Option<PathBuf>,
    /// STIP config JSON; defaults: 5x25 window, similarity 0.8,
    /// reliability threshold 35.
    #[arg(long)]
    pub stip_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Test fixture: report one deliberately wrong gradient.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Manifest written next to every command's outputs.
#[derive(Serialize, Deserialize, Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub duration_seconds: f64,
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    let tmp = out_dir.join(".manifest.json.tmp");
    let body = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&tmp, body)?;
    std::fs::rename(&tmp, out_dir.join("manifest.json"))?;
    Ok(())
}

fn read_json_config<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("{what}: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&body)
        .map_err(|e| Error::invalid(format!("{what}: {} {e}", path.display())))
}

/// Sidecar with the generated per-pixel truth (full component stacks stay
/// in memory; the sidecar records what evaluation needs).
#[derive(Serialize, Deserialize)]
struct TruthSidecar {
    config: SceneConfig,
    /// Land cover class codes, row-major (0 urban, 1 forest, 2 water,
    /// 3 uncropped).
    landcover_codes: Vec<u8>,
    /// Spatially uncorrelated DEM error, meters, per pixel.
    delta_h_su: Vec<f64>,
    /// Generative noise std, radians, per pixel.
    noise_std: Vec<f64>,
}

pub fn run(cli: Cli) -> i32 {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = pool.install(|| dispatch(&cli));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Classical(args) => cmd_classical(cli, args),
        Command::Train(args) => cmd_train(cli, args),
        Command::Predict(args) => cmd_predict(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Gradcheck(args) => cmd_gradcheck(cli, args),
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<i32> {
    let start = Instant::now();
    let mut config: SceneConfig = read_json_config(&args.config, "scene config")?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let (stack, truth) = generate(&config)?;

    let stack_path = cli.out.join("scene.ifgstack");
    let mask_path = cli.out.join("truth.psmask");
    let sidecar_path = cli.out.join("truth.json");
    write_stack(&stack, &stack_path)?;
    write_mask(&truth.ps_mask, &mask_path)?;
    let sidecar = TruthSidecar {
        config: config.clone(),
        landcover_codes: truth.landcover.iter().map(|c| c.code()).collect(),
        delta_h_su: truth.delta_h_su.clone(),
        noise_std: truth.noise_std.clone(),
    };
    std::fs::write(&sidecar_path, serde_json::to_string(&sidecar)?)?;

    write_manifest(
        &cli.out,
        &RunManifest {
            command: "synth".into(),
            config: serde_json::to_value(&config)?,
            inputs: vec![args.config.display().to_string()],
            outputs: vec![
                stack_path.display().to_string(),
                mask_path.display().to_string(),
                sidecar_path.display().to_string(),
            ],
            seed: Some(config.seed),
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "synth: {}x{} stack, {} interferograms, {} true PS pixels",
        stack.width(),
        stack.height(),
        stack.n_ifgs(),
        truth.ps_mask.count()
    );
    Ok(EXIT_OK)
}

fn cmd_classical(cli: &Cli, args: &ClassicalArgs) -> Result<i32> {
    let start = Instant::now();
    let config: ClassicalConfig = match &args.config {
        Some(path) => read_json_config(path, "classical config")?,
        None => ClassicalConfig::default(),
    };
    let stack = read_stack(&args.stack)?;
    let outcome = run_classical(&stack, &config)?;

    let mask_path = cli.out.join("mask.psmask");
    let csv_path = cli.out.join("candidates.csv");
    write_mask(&outcome.mask, &mask_path)?;
    let mut csv = String::from("row,col,d_a,w,delta_h,gamma\n");
    for r in &outcome.records {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.pixel.0, r.pixel.1, r.d_a, r.weight, r.delta_h_su, r.gamma
        )
        .expect("string write");
    }
    std::fs::write(&csv_path, csv)?;

    write_manifest(
        &cli.out,
        &RunManifest {
            command: "classical".into(),
            config: serde_json::to_value(&config)?,
            inputs: vec![args.stack.display().to_string()],
            outputs: vec![mask_path.display().to_string(), csv_path.display().to_string()],
            seed: None,
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    if outcome.records.is_empty() {
        eprintln!("classical: no candidates passed the amplitude-dispersion gate");
        return Ok(EXIT_EMPTY);
    }
    println!(
        "classical: {} candidates, {} selected, {} iterations, {:.1}s",
        outcome.records.len(),
        outcome.mask.count(),
        outcome.iterations,
        start.elapsed().as_secs_f64()
    );
    Ok(EXIT_OK)
}

/// Flat overlay over the per-kind network and training defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    pub patch_size: Option<usize>,
    pub filter_plan: Option<Vec<usize>>,
    pub kernel: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub n_timesteps: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub patience: Option<usize>,
    pub class_weights: Option<(f64, f64)>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub val_fraction: Option<f64>,
}

fn parse_kind(s: &str) -> Result<NetworkKind> {
    match s {
        "cnn" | "cnn_iss" => Ok(NetworkKind::CnnIss),
        "clstm" | "clstm_iss" => Ok(NetworkKind::ClstmIss),
        other => Err(Error::invalid(format!("unknown network kind {other} (use cnn | clstm)"))),
    }
}

fn scan_dataset(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::invalid(format!("dataset {}: {e}", dir.display())))?;
    let mut stacks: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |x| x == "ifgstack"))
        .collect();
    stacks.sort();
    for stack in stacks {
        let mask = stack.with_extension("psmask");
        if mask.exists() {
            pairs.push((stack, mask));
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "dataset {}: no <name>.ifgstack + <name>.psmask pairs",
            dir.display()
        )));
    }
    Ok(pairs)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<i32> {
    let start = Instant::now();
    let kind = parse_kind(&args.kind)?;
    let overlay: TrainCliConfig = match &args.config {
        Some(path) => read_json_config(path, "train config")?,
        None => TrainCliConfig::default(),
    };

    let pairs = scan_dataset(&args.dataset)?;
    let patch = overlay.patch_size.unwrap_or(100);
    let mut samples: Vec<TrainSample> = Vec::new();
    let mut n_timesteps = None;
    for (stack_path, mask_path) in &pairs {
        let stack = read_stack(stack_path)?;
        let mask = read_mask(mask_path)?;
        match n_timesteps {
            None => n_timesteps = Some(stack.n_ifgs()),
            Some(t) if t != stack.n_ifgs() => {
                return Err(Error::invalid("dataset: scenes have differing interferogram counts"))
            }
            _ => {}
        }
        let ds = Dataset::from_scene(&stack, &mask, patch)?;
        samples.extend(ds.samples);
    }
    let t = n_timesteps.expect("at least one pair");
    let dataset = Dataset::new(samples, t, patch)?;

    let mut spec = match kind {
        NetworkKind::CnnIss => NetworkSpec::cnn_default(),
        NetworkKind::ClstmIss => NetworkSpec::clstm_default(),
    };
    spec.input_patch = patch;
    spec.n_timesteps = overlay.n_timesteps.unwrap_or(t);
    if let Some(plan) = &overlay.filter_plan {
        spec.filter_plan = plan.clone();
    }
    if let Some(k) = overlay.kernel {
        spec.kernel = k;
    }
    if let Some(d) = overlay.dropout_rate {
        spec.dropout_rate = d;
    }

    let mut train_cfg = TrainConfig::default_for(kind);
    if let Some(v) = overlay.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = overlay.lr {
        train_cfg.lr = v;
    }
    if let Some(v) = overlay.patience {
        train_cfg.patience = v;
    }
    if let Some(v) = overlay.class_weights {
        train_cfg.class_weights = v;
    }
    if let Some(v) = overlay.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = overlay.val_fraction {
        train_cfg.val_fraction = v;
    }
    train_cfg.seed = cli.seed.or(overlay.seed).unwrap_or(0);

    let mut network = Network::new(spec.clone(), train_cfg.seed)?;
    let history = train(&mut network, &dataset, &train_cfg)?;

    let ckpt_path = cli.out.join("checkpoint.psnet");
    let hyper = serde_json::to_value(&train_cfg)?;
    checkpoint::save(&network, train_cfg.seed, Some(hyper.clone()), &ckpt_path)?;
    let csv_path = cli.out.join("history.csv");
    let mut csv = String::from("epoch,train_loss,val_loss,accuracy,precision,recall,f1\n");
    for (i, e) in history.epochs.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            i + 1,
            e.train_loss,
            e.val_loss,
            e.accuracy,
            e.precision,
            e.recall,
            e.f1
        )
        .expect("string write");
    }
    std::fs::write(&csv_path, csv)?;

    write_manifest(
        &cli.out,
        &RunManifest {
            command: "train".into(),
            config: serde_json::json!({
                "kind": kind.as_str(),
                "spec": spec,
                "train": hyper,
            }),
            inputs: pairs
                .iter()
                .flat_map(|(s, m)| [s.display().to_string(), m.display().to_string()])
                .collect(),
            outputs: vec![ckpt_path.display().to_string(), csv_path.display().to_string()],
            seed: Some(train_cfg.seed),
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    let best = &history.epochs[history.best_epoch - 1];
    println!(
        "train: {} epochs (best {}), val loss {:.4}, val f1 {:.4}",
        history.stopped_epoch, history.best_epoch, best.val_loss, best.f1
    );
    Ok(EXIT_OK)
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<i32> {
    let start = Instant::now();
    let (network, manifest) = checkpoint::load(&args.checkpoint)?;
    let stack = read_stack(&args.stack)?;
    let (prob, mask) = predict_full(&network, &stack)?;

    let pgm_path = cli.out.join("prob.pgm");
    let mask_path = cli.out.join("mask.psmask");
    write_probability_pgm(&prob, &pgm_path)?;
    write_mask(&mask, &mask_path)?;

    write_manifest(
        &cli.out,
        &RunManifest {
            command: "predict".into(),
            config: serde_json::json!({
                "spec": network.spec(),
                "checkpoint_seed": manifest.seed,
            }),
            inputs: vec![
                args.checkpoint.display().to_string(),
                args.stack.display().to_string(),
            ],
            outputs: vec![pgm_path.display().to_string(), mask_path.display().to_string()],
            seed: None,
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    println!(
        "predict: {} PS pixels of {} ({:.1}s)",
        mask.count(),
        stack.width() * stack.height(),
        start.elapsed().as_secs_f64()
    );
    Ok(EXIT_OK)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<i32> {
    let start = Instant::now();
    let stack = read_stack(&args.stack)?;
    let masks: Vec<PixelMask> = args.masks.iter().map(|p| read_mask(p)).collect::<Result<_>>()?;
    let mask_refs: Vec<&PixelMask> = masks.iter().collect();
    let truth: Option<PixelMask> = args.truth.as_ref().map(|p| read_mask(p)).transpose()?;
    let landcover: Option<Vec<LandcoverClass>> = match &args.truth_json {
        Some(path) => {
            #[derive(Deserialize)]
            struct Sidecar {
                landcover_codes: Vec<u8>,
            }
            let sidecar: Sidecar = read_json_config(path, "truth sidecar")?;
            Some(
                sidecar
                    .landcover_codes
                    .iter()
                    .map(|&c| LandcoverClass::from_code(c))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => None,
    };
    let stip_cfg: StipConfig = match &args.stip_config {
        Some(path) => read_json_config(path, "stip config")?,
        None => StipConfig::default(),
    };
    let report = build_report(
        &stack,
        &mask_refs,
        landcover.as_deref(),
        truth.as_ref(),
        &stip_cfg,
    )?;

    let mut outputs = Vec::new();
    let report_path = cli.out.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    outputs.push(report_path.display().to_string());

    let overlap_path = cli.out.join("overlap.csv");
    let mut csv = String::from("mask_a,mask_b,common,pct_of_first\n");
    for p in &report.pairwise {
        writeln!(csv, "{},{},{},{}", p.a, p.b, p.common, p.pct_of_a).expect("string write");
    }
    std::fs::write(&overlap_path, csv)?;
    outputs.push(overlap_path.display().to_string());

    if landcover.is_some() {
        let lc_path = cli.out.join("landcover.csv");
        let names = landcover_class_names();
        let mut csv = format!("mask,{},{},{},{}\n", names[0], names[1], names[2], names[3]);
        for m in &report.masks {
            let pct = m.landcover_pct.expect("landcover present");
            writeln!(csv, "{},{},{},{},{}", m.source, pct[0], pct[1], pct[2], pct[3])
                .expect("string write");
        }
        std::fs::write(&lc_path, csv)?;
        outputs.push(lc_path.display().to_string());
    }

    if truth.is_some() {
        let metrics_path = cli.out.join("metrics.csv");
        let mut csv = String::from("mask,accuracy,precision,recall,f1\n");
        for m in &report.masks {
            let t = m.vs_truth.as_ref().expect("truth present");
            writeln!(csv, "{},{},{},{},{}", m.source, t.accuracy, t.precision, t.recall, t.f1)
                .expect("string write");
        }
        std::fs::write(&metrics_path, csv)?;
        outputs.push(metrics_path.display().to_string());
    }

    for (i, m) in report.masks.iter().enumerate() {
        let hist_path = cli.out.join(format!("stip_hist_{}_{}.csv", i, m.source));
        let mut csv = String::from("bin,count\n");
        for (bin, count) in m.stip_histogram.as_ref().expect("stip computed").iter().enumerate() {
            writeln!(csv, "{bin},{count}").expect("string write");
        }
        std::fs::write(&hist_path, csv)?;
        outputs.push(hist_path.display().to_string());
    }

    write_manifest(
        &cli.out,
        &RunManifest {
            command: "eval".into(),
            config: serde_json::to_value(&stip_cfg)?,
            inputs: args
                .masks
                .iter()
                .chain([&args.stack])
                .chain(args.truth.iter())
                .chain(args.truth_json.iter())
                .map(|p| p.display().to_string())
                .collect(),
            outputs,
            seed: None,
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    for m in &report.masks {
        println!(
            "eval: {} -> {} PS, {} reliable (STIP > {})",
            m.source,
            m.ps_count,
            m.stip_reliable.unwrap_or(0),
            stip_cfg.reliable_count
        );
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<i32> {
    let start = Instant::now();
    let suite_seed = cli.seed.unwrap_or(0);
    let reports = gradcheck::run_suite(suite_seed, args.inject_fault)?;

    let csv_path = cli.out.join("gradcheck.csv");
    let mut csv = String::from("op,max_rel_error,coords_checked,pass\n");
    let mut all_pass = true;
    for r in &reports {
        println!(
            "gradcheck {:24} max_rel_error {:.3e} over {:4} coords: {}",
            r.name,
            r.max_rel_error,
            r.coords_checked,
            if r.pass() { "PASS" } else { "FAIL" }
        );
        writeln!(csv, "{},{},{},{}", r.name, r.max_rel_error, r.coords_checked, r.pass())
            .expect("string write");
        all_pass &= r.pass();
    }
    std::fs::write(&csv_path, csv)?;

    write_manifest(
        &cli.out,
        &RunManifest {
            command: "gradcheck".into(),
            config: serde_json::json!({ "threshold": gradcheck::PASS_THRESHOLD }),
            inputs: vec![],
            outputs: vec![csv_path.display().to_string()],
            seed: Some(suite_seed),
            version: env!("CARGO_PKG_VERSION").into(),
            duration_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    if all_pass {
        Ok(EXIT_OK)
    } else {
        eprintln!("gradcheck: at least one op exceeded the error threshold");
        Ok(EXIT_NUMERICAL)
    }
}
