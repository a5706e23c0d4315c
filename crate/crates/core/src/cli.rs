//! The `cotrack` command line: argument parsing, artifact writing and exit
//! codes. Every run leaves a `manifest.json` next to its artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{ablation_checks, ablation_variants, build_suite, render_all, run_variant, track_frames, VariantReport};
use crate::gradsuite::{gradient_suite, worst_per_op};
use crate::metrics::{clear_mot, id_counts, occlusion_profile, pretty_table, profile_csv, EvalResult};
use crate::motio::{parse_gt, parse_results, write_results};
use crate::sim::{generate, load_sequence, write_sequence};
use crate::tracker::Variant;
use crate::trainer::{curve_csv, embed_samples, pretrain, rank1_retrieval, IdentityPool};
use crate::weights::{ModelWeights, WeightStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVARIANT: i32 = 2;
pub const EXIT_ACCEPTANCE: i32 = 3;

/// Gradient error tolerated by `gradcheck`.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPSILON: f64 = 1e-5;
pub const GRAD_SEEDS: u64 = 20;
/// Required tracked-through improvement of the full model over the disabled one.
pub const MIN_TRACKED_GAIN: f64 = 0.15;

#[derive(Debug, Parser)]
#[command(name = "cotrack", version, about = "Attention-refined multiple object tracking on simulated feature grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn switch(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on or off, got `{other}`")),
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct VariantFlags {
    #[arg(long, default_value = "on", value_parser = switch, action = clap::ArgAction::Set)]
    pub ta: bool,
    #[arg(long, default_value = "on", value_parser = switch, action = clap::ArgAction::Set)]
    pub da: bool,
    #[arg(long, default_value = "on", value_parser = switch, action = clap::ArgAction::Set)]
    pub memory: bool,
    #[arg(long = "adaptive-weight", default_value = "on", value_parser = switch, action = clap::ArgAction::Set)]
    pub adaptive_weight: bool,
}

impl VariantFlags {
    pub fn variant(&self) -> Variant {
        Variant {
            target_attention: self.ta,
            distractor_attention: self.da,
            memory: self.memory,
            adaptive_weight: self.adaptive_weight,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one scenario and write it as a MOTChallenge sequence.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Track a sequence written by `simulate`.
    Track {
        #[command(flatten)]
        common: Common,
        /// Sequence directory.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        variant: VariantFlags,
        /// Weight file; the bundled weights are used when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Score a results file against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Sequence directory or gt.txt file.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        results: PathBuf,
    },
    /// Run the ablation variants over the configured suite.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Also run every combination of the four switches.
        #[arg(long = "variant-all")]
        variant_all: bool,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Train memory and attention weights from scratch.
    TrainEmbed {
        #[command(flatten)]
        common: Common,
    },
}

/// What a run did, for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub variant: Option<Variant>,
    pub weights_hash: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    fn new(subcommand: &str, common: &Common, cfg: &RunConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            config: common.config.as_ref().map(|p| p.display().to_string()),
            config_hash: cfg.hash()?,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            variant: None,
            weights_hash: None,
        })
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// Whether a completed run met its thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    BelowThreshold,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(common: &Common) -> Result<&Path> {
    let dir = common.out.as_deref().ok_or_else(|| Error::Invalid("--out is required".into()))?;
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

fn load_weights(path: Option<&Path>) -> Result<ModelWeights> {
    match path {
        Some(p) => ModelWeights::from_store(&WeightStore::load(p)?),
        None => Ok(ModelWeights::pretrained()),
    }
}

fn weights_hash(w: &ModelWeights) -> Result<String> {
    Ok(hex::encode(Sha256::digest(w.to_store().to_json()?.as_bytes())))
}

fn write(dir: &Path, name: &str, text: &str, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn simulate(common: &Common) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let dir = out_dir(common)?;
    let scenario = generate(&cfg.suite.sim, seed)?;
    write_sequence(dir, &scenario)?;
    let mut m = RunManifest::new("simulate", common, &cfg, seed)?;
    m.outputs = ["seqinfo.ini", "gt/gt.txt", "det/det.txt", crate::sim::SIDECAR_FILE].map(String::from).to_vec();
    m.write(dir)?;
    let dets: usize = scenario.detections.iter().map(Vec::len).sum();
    println!(
        "{} frames, {} objects, {} detections, peak pairwise IoU {:.3}",
        scenario.frames,
        scenario.objects.len(),
        dets,
        scenario.max_pairwise_iou()
    );
    Ok(Outcome::Passed)
}

fn track(common: &Common, input: &Path, flags: VariantFlags, weights: Option<&Path>) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let model = load_weights(weights)?;
    let scenario = load_sequence(input)?;
    let variant = flags.variant();
    let results = track_frames(&scenario, &render_all(&scenario)?, &model, &cfg.suite.tracker, variant)?;
    let mut m = RunManifest::new("track", common, &cfg, scenario.seed)?;
    m.inputs.push(input.display().to_string());
    m.variant = Some(variant);
    m.weights_hash = Some(weights_hash(&model)?);
    write(dir, "results.txt", &write_results(&results), &mut m)?;
    m.write(dir)?;
    let ids: std::collections::BTreeSet<u32> = results.iter().map(|r| r.id).collect();
    println!("{} boxes, {} tracks ({})", results.len(), ids.len(), variant.tag());
    Ok(Outcome::Passed)
}

fn eval(common: &Common, gt_path: &Path, results_path: &Path) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let gt_file = if gt_path.is_dir() { gt_path.join("gt").join("gt.txt") } else { gt_path.to_path_buf() };
    let gt = parse_gt(&std::fs::read_to_string(&gt_file)?)?;
    let hyp = parse_results(&std::fs::read_to_string(results_path)?)?;
    let mut r = clear_mot(&gt, &hyp, 0.5)?;
    let (idtp, _, hyp_count) = id_counts(&gt, &hyp, 0.5)?;
    r = EvalResult::merge(&[r], idtp, hyp_count);
    let name = results_path.file_stem().map_or("results".to_string(), |s| s.to_string_lossy().into_owned());
    let mut m = RunManifest::new("eval", common, &cfg, common.seed.unwrap_or(cfg.seed))?;
    m.inputs = vec![gt_file.display().to_string(), results_path.display().to_string()];
    write(dir, "metrics.csv", &format!("{}\n{}\n", EvalResult::csv_header(), r.csv_row(&name)), &mut m)?;
    write(dir, "occlusion.csv", &profile_csv(&[(name.clone(), occlusion_profile(&gt, &hyp))]), &mut m)?;
    m.write(dir)?;
    print!("{}", pretty_table(&[(name, r)]));
    Ok(Outcome::Passed)
}

/// Every assignment of the four switches, as ablation rows.
fn all_combinations() -> Vec<(String, Variant)> {
    (0..16u8)
        .map(|bits| {
            let v = Variant {
                target_attention: bits & 1 != 0,
                distractor_attention: bits & 2 != 0,
                memory: bits & 4 != 0,
                adaptive_weight: bits & 8 != 0,
            };
            (v.tag(), v)
        })
        .collect()
}

/// `variant,tracked,targets,tracked_rate` rows.
pub fn tracked_csv(reports: &[VariantReport]) -> String {
    let mut out = String::from("variant,tracked,targets,tracked_rate\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{:.6}", r.name, r.tracked, r.targets, r.tracked_rate());
    }
    out
}

fn ablate(common: &Common, variant_all: bool, weights: Option<&Path>) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.suite.base_seed = seed;
    }
    let dir = out_dir(common)?;
    let model = load_weights(weights)?;
    let suite = build_suite(&cfg.suite)?;
    let mut variants = ablation_variants();
    if variant_all {
        variants.extend(all_combinations());
    }
    let reports = variants
        .iter()
        .map(|(name, v)| run_variant(&suite, &model, &cfg.suite, name, *v))
        .collect::<Result<Vec<_>>>()?;
    let mut m = RunManifest::new("ablate", common, &cfg, cfg.suite.base_seed)?;
    m.weights_hash = Some(weights_hash(&model)?);
    let mut metrics = format!("{}\n", EvalResult::csv_header());
    for r in &reports {
        metrics.push_str(&r.eval.csv_row(&r.name));
        metrics.push('\n');
    }
    write(dir, "ablation.csv", &metrics, &mut m)?;
    let profiles: Vec<(String, Vec<_>)> = reports.iter().map(|r| (r.name.clone(), r.profile.clone())).collect();
    write(dir, "occlusion.csv", &profile_csv(&profiles), &mut m)?;
    write(dir, "tracked.csv", &tracked_csv(&reports), &mut m)?;
    let checks = ablation_checks(&reports, MIN_TRACKED_GAIN).expect("ablation rows include full and disabled");
    write(dir, "checks.json", &(serde_json::to_string_pretty(&checks)? + "\n"), &mut m)?;
    m.write(dir)?;

    let rows: Vec<(String, EvalResult)> = reports.iter().map(|r| (r.name.clone(), r.eval)).collect();
    print!("{}", pretty_table(&rows));
    for r in &reports {
        println!("{:<24} tracked through {:>4}/{:<4} heavy occlusion {:.3}", r.name, r.tracked, r.targets, r.pooled_fraction(crate::experiment::HEAVY_BIN));
    }
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    println!("tracked-through gain {:+.1} pp: {}", 100.0 * checks.tracked_gain, mark(checks.gain_ok));
    println!("full model has the highest MOTA: {}", mark(checks.full_highest));
    println!("heavy-occlusion bins above disabled: {}", mark(checks.heavy_bins_higher));
    Ok(if checks.passed() { Outcome::Passed } else { Outcome::BelowThreshold })
}

fn gradcheck(common: &Common) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let reports = gradient_suite(seed, GRAD_SEEDS, GRAD_EPSILON)?;
    let worst = worst_per_op(&reports);
    let mut ok = true;
    for (op, err) in &worst {
        let pass = *err <= GRAD_TOLERANCE;
        ok &= pass;
        println!("{op:<16} max rel. error {err:.3e} {}", if pass { "pass" } else { "FAIL" });
    }
    if common.out.is_some() {
        let dir = out_dir(common)?;
        let mut m = RunManifest::new("gradcheck", common, &cfg, seed)?;
        let mut csv = String::from("op,seed,error\n");
        for r in &reports {
            let _ = writeln!(csv, "{},{},{:e}", r.op, r.seed, r.error);
        }
        write(dir, "gradcheck.csv", &csv, &mut m)?;
        m.write(dir)?;
    }
    Ok(if ok { Outcome::Passed } else { Outcome::BelowThreshold })
}

fn train_embed(common: &Common) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.train.init_seed = seed;
    }
    let dir = out_dir(common)?;
    let out = pretrain(&cfg.train)?;
    let mut m = RunManifest::new("train-embed", common, &cfg, cfg.train.init_seed)?;
    m.weights_hash = Some(weights_hash(&out.model)?);
    write(dir, "weights.json", &out.model.to_store().to_json()?, &mut m)?;
    write(dir, "loss.csv", &curve_csv(&out.embed_curve), &mut m)?;
    let mut att = String::from("step,loss\n");
    for (i, l) in out.attention_curve.iter().enumerate() {
        let _ = writeln!(att, "{i},{l}");
    }
    write(dir, "attention_loss.csv", &att, &mut m)?;
    m.write(dir)?;
    let unseen = IdentityPool::new(10, cfg.train.channels, cfg.train.pool_seed.wrapping_add(1))?;
    let (gallery, _) = embed_samples(&unseen, &out.model.memory, 5, 2, 1)?;
    let (probes, _) = embed_samples(&unseen, &out.model.memory, 10, 2, 2)?;
    println!("rank-1 on unseen identities {:.3}", rank1_retrieval(&gallery, &probes)?);
    Ok(Outcome::Passed)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::Track { common, input, variant, weights } => track(common, input, *variant, weights.as_deref()),
        Command::Eval { common, gt, results } => eval(common, gt, results),
        Command::Ablate { common, variant_all, weights } => ablate(common, *variant_all, weights.as_deref()),
        Command::Gradcheck { common } => gradcheck(common),
        Command::TrainEmbed { common } => train_embed(common),
    }
}

/// Exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Shape(_) | Error::NonFinite(_) | Error::Diverged { .. } | Error::OutOfOrder { .. } => EXIT_INVARIANT,
        Error::Invalid(_) | Error::Config(_) | Error::Parse { .. } | Error::MissingTensor(_) | Error::Io(_) | Error::Json(_) => {
            EXIT_USAGE
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::BelowThreshold) => EXIT_ACCEPTANCE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
