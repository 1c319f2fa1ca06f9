//! `noisegeo` — experiment dispatch, report emission, reproducibility
//! plumbing.
//!
//! Every run writes into its own output directory (`--out`, or the
//! `NOISEGEO_OUT` environment variable, or `runs/`): `report.json` plus the
//! applicable CSV tables, and a `manifest.json` holding the seed, full
//! config, thread count, config hash and version — enough to replay the run
//! exactly. Exit codes: 0 success, 1 configuration error, 2 numerical
//! divergence.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use noisegeo::diagnostics::{self, ConditionConfig};
use noisegeo::gan::{
    ablation_suite, dimension_trap_experiment, injection_comparison, invert_latent, train_gan,
    DatasetSpec, ExperimentConfig,
};
use noisegeo::geometry::{approx_error_profile, build_skeleton, coverage_check, AnalyticManifold};
use noisegeo::layers::Network;
use noisegeo::{RandomSource, Tensor};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "noisegeo", version, about = "noise-injection experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (defaults to 0 for reproducibility, never time-based).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $NOISEGEO_OUT or `runs`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread bound; results are independent of this.
    #[arg(long)]
    threads: Option<usize>,
    /// Report format: json, csv, or both.
    #[arg(long, default_value = "both")]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        self != Format::Csv
    }
    fn csv(self) -> bool {
        self != Format::Json
    }
}

#[derive(Subcommand)]
enum Command {
    /// Three-arm dimension-trap experiment on a 2-D dataset.
    Trap(CommonOpts),
    /// Injection-mode comparison: none vs eni vs rni-full.
    Compare(CommonOpts),
    /// Five-variant injection-pipeline ablation table.
    Ablate(CommonOpts),
    /// Single training run; emits the full report, timeline and networks.
    Train(CommonOpts),
    /// Rank profile, intrinsic dimensions and condition metrics of a saved
    /// network.
    Diagnose {
        #[command(flatten)]
        common: CommonOpts,
        /// Saved network JSON (as written by `train`).
        #[arg(long)]
        network: PathBuf,
        /// Latent dimension fed to the network.
        #[arg(long, default_value_t = 2)]
        latent_dim: usize,
        /// Probe inputs for the rank profile.
        #[arg(long, default_value_t = 5)]
        rank_probes: usize,
        /// Samples for the intrinsic-dimension estimate.
        #[arg(long, default_value_t = 51_200)]
        dim_samples: usize,
        /// Pairs for condition metrics.
        #[arg(long, default_value_t = 50_000)]
        condition_pairs: usize,
    },
    /// Exponential-map error profiles and skeleton covering of an analytic
    /// manifold.
    Geometry {
        #[command(flatten)]
        common: CommonOpts,
        /// circle | sphere2 | flat-torus
        #[arg(long, default_value = "circle")]
        manifold: String,
        /// Comma-separated descending radii for the error profile.
        #[arg(long, default_value = "0.2,0.1,0.05")]
        radius_list: String,
        /// Covering radius for the skeleton build (skip when absent).
        #[arg(long)]
        skeleton_radius: Option<f64>,
        /// Fresh samples for the coverage check.
        #[arg(long, default_value_t = 10_000)]
        coverage_samples: usize,
    },
    /// Latent inversion of a saved generator against a target.
    Invert {
        #[command(flatten)]
        common: CommonOpts,
        /// Saved generator JSON.
        #[arg(long)]
        network: PathBuf,
        /// Target vector as a JSON array file; when absent a target is
        /// synthesized as G(z*) with z* drawn from --target-seed.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        target_seed: u64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        step_size: f64,
        /// Co-optimize the stabilization blend of RNI layers.
        #[arg(long, default_value_t = false)]
        tune_alpha: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap's exit code conventions differ; the contract here is 1
            // for anything unusable, with usage text on stderr
            eprintln!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Trap(common) => cmd_trap(common),
        Command::Compare(common) => cmd_compare(common),
        Command::Ablate(common) => cmd_ablate(common),
        Command::Train(common) => cmd_train(common),
        Command::Diagnose {
            common,
            network,
            latent_dim,
            rank_probes,
            dim_samples,
            condition_pairs,
        } => cmd_diagnose(common, network, latent_dim, rank_probes, dim_samples, condition_pairs),
        Command::Geometry {
            common,
            manifold,
            radius_list,
            skeleton_radius,
            coverage_samples,
        } => cmd_geometry(common, manifold, radius_list, skeleton_radius, coverage_samples),
        Command::Invert {
            common,
            network,
            target,
            target_seed,
            steps,
            step_size,
            tune_alpha,
        } => cmd_invert(common, network, target, target_seed, steps, step_size, tune_alpha),
    }
}

fn init_threads(common: &CommonOpts) -> Result<usize> {
    let threads = common.threads.unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("thread pool already initialized")?;
    }
    Ok(threads)
}

fn out_dir(common: &CommonOpts) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os("NOISEGEO_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Loads the experiment config, applying the seed override; a missing
/// `--config` falls back to the desk preset on the annulus task.
fn load_experiment(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .with_context(|| format!("cannot parse config file {}", path.display()))?
        }
        None => ExperimentConfig::desk(
            DatasetSpec::Annulus2d { r_inner: 1.0, r_outer: 2.0 },
            0,
        ),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn config_hash(text: &str) -> String {
    let mut h = FNV_OFFSET;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    format!("{h:016x}")
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    config_hash: String,
    config: serde_json::Value,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .with_context(|| format!("cannot write {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    seed: u64,
    threads: usize,
    config: &impl Serialize,
) -> Result<()> {
    let config_value = serde_json::to_value(config)?;
    let canonical = serde_json::to_string(&config_value)?;
    let manifest = Manifest {
        command,
        version: VERSION,
        seed,
        threads,
        config_hash: config_hash(&canonical),
        config: config_value,
    };
    write_file(dir, "manifest.json", &to_pretty(&manifest)?)
}

fn to_pretty(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn cmd_trap(common: CommonOpts) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let cfg = load_experiment(&common)?;
    let dir = out_dir(&common);
    let report = dimension_trap_experiment(&cfg).map_err(|e| anyhow!(e.to_string()))?;

    write_manifest(&dir, "trap", cfg.train.seed, threads, &cfg)?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&report)?)?;
    }
    if common.format.csv() {
        let mut table = String::from(
            "arm,js,frechet,path_length,mc,ttmc,grad_proxy_initial,grad_proxy_final,grad_proxy_growth\n",
        );
        for a in &report.arms {
            table.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                a.name,
                a.js,
                a.frechet,
                a.path_length,
                a.mc,
                a.ttmc,
                a.grad_proxy_initial,
                a.grad_proxy_final,
                a.grad_proxy_growth
            ));
        }
        write_file(&dir, "table.csv", &table)?;
        for t in &report.timelines {
            let name = format!(
                "timeline-{}-n{}.csv",
                t.config.injection.name(),
                t.config.latent_dim
            );
            write_file(&dir, &name, &t.timeline_csv())?;
        }
    }
    let diverged = report.arms.iter().any(|a| a.diverged.is_some());
    Ok(if diverged { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_compare(common: CommonOpts) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let cfg = load_experiment(&common)?;
    let dir = out_dir(&common);
    let table = injection_comparison(&cfg).map_err(|e| anyhow!(e.to_string()))?;

    write_manifest(&dir, "compare", cfg.train.seed, threads, &cfg)?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&table)?)?;
    }
    if common.format.csv() {
        write_file(&dir, "table.csv", &table.to_csv())?;
    }
    let diverged = table.rows.iter().any(|r| r.diverged);
    Ok(if diverged { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_ablate(common: CommonOpts) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let cfg = load_experiment(&common)?;
    let dir = out_dir(&common);
    let table = ablation_suite(&cfg).map_err(|e| anyhow!(e.to_string()))?;

    write_manifest(&dir, "ablate", cfg.train.seed, threads, &cfg)?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&table)?)?;
    }
    if common.format.csv() {
        write_file(&dir, "table.csv", &table.to_csv())?;
    }
    // diverged variants are recorded in the table, not fatal
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(common: CommonOpts) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let cfg = load_experiment(&common)?;
    let dir = out_dir(&common);
    let outcome = train_gan(&cfg.train, &cfg.dataset).map_err(|e| anyhow!(e.to_string()))?;

    write_manifest(&dir, "train", cfg.train.seed, threads, &cfg)?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&outcome.report)?)?;
        write_file(&dir, "generator.json", &outcome.generator.to_json())?;
        write_file(&dir, "discriminator.json", &outcome.discriminator.to_json())?;
    }
    if common.format.csv() {
        write_file(&dir, "timeline.csv", &outcome.report.timeline_csv())?;
    }
    eprintln!("wall clock: {:.1}s", outcome.report.wall_clock_secs);
    Ok(match outcome.report.diverged {
        Some(_) => ExitCode::from(2),
        None => ExitCode::SUCCESS,
    })
}

#[derive(Serialize)]
struct DiagnoseReport {
    rank_profile: diagnostics::RankProfile,
    intrinsic_dims: Vec<usize>,
    mc: f64,
    ttmc: f64,
    discarded_pairs: usize,
}

fn cmd_diagnose(
    common: CommonOpts,
    network: PathBuf,
    latent_dim: usize,
    rank_probes: usize,
    dim_samples: usize,
    condition_pairs: usize,
) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let dir = out_dir(&common);
    let text = std::fs::read_to_string(&network)
        .with_context(|| format!("cannot read network file {}", network.display()))?;
    let net = Network::from_json(&text).map_err(|e| anyhow!(e.to_string()))?;
    let seed = common.seed.unwrap_or(0);
    let root = RandomSource::new(seed);

    let mut probe_rs = root.child(0);
    let probes: Vec<Tensor> = (0..rank_probes.max(1))
        .map(|_| probe_rs.gaussian(&[latent_dim]))
        .collect::<noisegeo::Result<_>>()
        .map_err(|e| anyhow!(e.to_string()))?;
    let rank_profile =
        diagnostics::layer_rank_profile(&net, &probes).map_err(|e| anyhow!(e.to_string()))?;

    let mut dims = Vec::new();
    for depth in 0..net.depth() {
        let mut rs = root.child(100 + depth as u64);
        let d = diagnostics::feature_intrinsic_dim(&net, latent_dim, Some(depth), dim_samples, &mut rs)
            .map_err(|e| anyhow!(e.to_string()))?;
        dims.push(d);
    }

    let condition = diagnostics::condition_metrics(
        |z| net.output(z),
        |rs| rs.gaussian(&[latent_dim]).expect("latent dim > 0"),
        &ConditionConfig { n_pairs: condition_pairs, ..ConditionConfig::default() },
        &root.child(200),
    )
    .map_err(|e| anyhow!(e.to_string()))?;

    let report = DiagnoseReport {
        rank_profile,
        intrinsic_dims: dims,
        mc: condition.mc,
        ttmc: condition.ttmc,
        discarded_pairs: condition.discarded_pairs,
    };

    write_manifest(&dir, "diagnose", seed, threads, &serde_json::json!({
        "network": network.display().to_string(),
        "latent_dim": latent_dim,
        "rank_probes": rank_probes,
        "dim_samples": dim_samples,
        "condition_pairs": condition_pairs,
    }))?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&report)?)?;
    }
    if common.format.csv() {
        let mut table = String::from("layer,rank,intrinsic_dim\n");
        for (e, d) in report.rank_profile.entries.iter().zip(&report.intrinsic_dims) {
            table.push_str(&format!("{},{},{}\n", e.layer, e.rank, d));
        }
        write_file(&dir, "table.csv", &table)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GeometryReport {
    manifold: AnalyticManifold,
    error_profile: Vec<(f64, f64)>,
    skeleton_centers: Option<usize>,
    coverage: Option<noisegeo::geometry::CoverageReport>,
}

fn parse_manifold(name: &str) -> Result<AnalyticManifold> {
    let m = match name {
        "circle" => AnalyticManifold::circle(1.0),
        "sphere2" => AnalyticManifold::sphere2(1.0),
        "flat-torus" => AnalyticManifold::flat_torus(1.0, 0.5),
        other => bail!("unknown manifold `{other}` (circle | sphere2 | flat-torus)"),
    };
    m.map_err(|e| anyhow!(e.to_string()))
}

fn cmd_geometry(
    common: CommonOpts,
    manifold: String,
    radius_list: String,
    skeleton_radius: Option<f64>,
    coverage_samples: usize,
) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let dir = out_dir(&common);
    let m = parse_manifold(&manifold)?;
    let radii: Vec<f64> = radius_list
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad radius `{s}`: {e}")))
        .collect::<Result<_>>()?;
    let seed = common.seed.unwrap_or(0);

    let base_point = match m {
        AnalyticManifold::Circle { .. } => m.point(&[0.0]),
        _ => m.point(&[0.7, 1.3]),
    };
    let profile =
        approx_error_profile(&m, &base_point, &radii).map_err(|e| anyhow!(e.to_string()))?;

    let mut skeleton_centers = None;
    let mut coverage = None;
    if let Some(r) = skeleton_radius {
        let mut rs = RandomSource::new(seed).child(1);
        let skeleton = build_skeleton(&m, r, &mut rs).map_err(|e| anyhow!(e.to_string()))?;
        skeleton_centers = Some(skeleton.pairs.len());
        let mut cov_rs = RandomSource::new(seed).child(2);
        coverage = Some(
            coverage_check(&skeleton, coverage_samples, &mut cov_rs)
                .map_err(|e| anyhow!(e.to_string()))?,
        );
        write_file(&dir, "skeleton.json", &to_pretty(&skeleton)?)?;
    }

    let report = GeometryReport {
        manifold: m,
        error_profile: profile.clone(),
        skeleton_centers,
        coverage,
    };
    write_manifest(&dir, "geometry", seed, threads, &serde_json::json!({
        "manifold": manifold,
        "radius_list": radius_list,
        "skeleton_radius": skeleton_radius,
        "coverage_samples": coverage_samples,
    }))?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&report)?)?;
    }
    if common.format.csv() {
        let mut table = String::from("radius,sup_error\n");
        for (r, e) in &profile {
            table.push_str(&format!("{r},{e}\n"));
        }
        write_file(&dir, "table.csv", &table)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_invert(
    common: CommonOpts,
    network: PathBuf,
    target: Option<PathBuf>,
    target_seed: u64,
    steps: usize,
    step_size: f64,
    tune_alpha: bool,
) -> Result<ExitCode> {
    let threads = init_threads(&common)?;
    let dir = out_dir(&common);
    let text = std::fs::read_to_string(&network)
        .with_context(|| format!("cannot read network file {}", network.display()))?;
    let net = Network::from_json(&text).map_err(|e| anyhow!(e.to_string()))?;
    let seed = common.seed.unwrap_or(0);

    let target_vec = match &target {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read target file {}", path.display()))?;
            let values: Vec<f64> = serde_json::from_str(&raw)
                .with_context(|| format!("target file {} must be a JSON array", path.display()))?;
            Tensor::vector(values)
        }
        None => {
            // synthesize an in-range target G(z*)
            let latent_dim = match net.layers.first() {
                Some(noisegeo::layers::Layer::Dense { weight, .. }) => weight.shape()[1],
                _ => bail!("cannot infer latent dim; provide --target"),
            };
            let mut rs = RandomSource::new(target_seed);
            let z_star = rs.gaussian(&[latent_dim]).map_err(|e| anyhow!(e.to_string()))?;
            net.output(&z_star).map_err(|e| anyhow!(e.to_string()))?
        }
    };

    let mut rs = RandomSource::new(seed);
    let report = invert_latent(&net, &target_vec, steps, step_size, &mut rs, tune_alpha)
        .map_err(|e| anyhow!(e.to_string()))?;

    write_manifest(&dir, "invert", seed, threads, &serde_json::json!({
        "network": network.display().to_string(),
        "target": target.map(|p| p.display().to_string()),
        "target_seed": target_seed,
        "steps": steps,
        "step_size": step_size,
        "tune_alpha": tune_alpha,
    }))?;
    if common.format.json() {
        write_file(&dir, "report.json", &to_pretty(&report)?)?;
    }
    if common.format.csv() {
        let mut csv = String::from("step,mse\n");
        for (i, v) in report.mse_curve.iter().enumerate() {
            csv.push_str(&format!("{i},{v}\n"));
        }
        write_file(&dir, "timeline.csv", &csv)?;
    }
    Ok(match report.aborted_at {
        Some(_) => ExitCode::from(2),
        None => ExitCode::SUCCESS,
    })
}
