use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anchored_sync::experiment::{
    register_files, run_diagnostics, run_register, run_scaling, run_selftest, run_sweep, ExperimentConfig,
    ExperimentKind, SelftestOptions,
};
use anchored_sync::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Rigid-motion synchronization experiments.
#[derive(Parser)]
#[command(name = "anchored-sync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error against a noise level, every requested estimator.
    Sweep(SweepArgs),
    /// Error against n with the fitted log-log slope.
    Scale(CommonArgs),
    /// Decomposition identities and norm bounds on random instances.
    Diagnose(CommonArgs),
    /// Multiple point-set registration (synthetic, or PLY scans).
    Register(RegisterArgs),
    /// Built-in invariant checks.
    Selftest(SelftestArgs),
}

/// Flags shared by every experiment. Each overrides the config-file key of
/// the same name.
#[derive(Args)]
struct CommonArgs {
    /// Flat key = value file, `#` comments.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of motions (a list for `scale`, scans for `register`).
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// Rotation noise (a list when sweeping it).
    #[arg(long)]
    sigma1: Option<String>,
    /// Translation noise (a list when sweeping it).
    #[arg(long)]
    sigma2: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated: ase, two-stage, naive, naive-flip.
    #[arg(long)]
    methods: Option<String>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fill the wall_ms column (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long = "experiment-id")]
    experiment_id: Option<String>,
    /// Standard deviation of ground-truth translations.
    #[arg(long = "translation-scale")]
    translation_scale: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("n", self.n.clone());
        push("d", self.d.map(|v| v.to_string()));
        push("sigma1", self.sigma1.clone());
        push("sigma2", self.sigma2.clone());
        push("trials", self.trials.map(|v| v.to_string()));
        push("methods", self.methods.clone());
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("threads", self.threads.map(|v| v.to_string()));
        push("timing", self.timing.then(|| "true".to_string()));
        push("experiment-id", self.experiment_id.clone());
        push("translation-scale", self.translation_scale.map(|v| v.to_string()));
        out
    }

    fn build(&self, kind: ExperimentKind, extra: Vec<(&'static str, String)>) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::defaults(kind);
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.overrides().into_iter().chain(extra) {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Which noise level to sweep; defaults to the config file's `kind`,
    /// else sigma2.
    #[arg(long, value_parser = ["sigma1", "sigma2"])]
    vary: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct RegisterArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Points per synthetic scan.
    #[arg(long)]
    points: Option<usize>,
    /// Upper end of the uniform rotation perturbation, degrees.
    #[arg(long = "max-angle-deg")]
    max_angle_deg: Option<f64>,
    /// Standard deviation of the translation perturbation, mm.
    #[arg(long = "trans-sigma")]
    trans_sigma: Option<f64>,
    /// ICP iterations per edge (0 = none).
    #[arg(long = "icp-iters")]
    icp_iters: Option<usize>,
    /// Comma-separated ASCII PLY scans; switches to real-data mode.
    #[arg(long)]
    scans: Option<String>,
    /// Pose graph CSV for real-data mode.
    #[arg(long = "pose-graph")]
    pose_graph: Option<PathBuf>,
    /// Where to write the merged cloud (PLY).
    #[arg(long)]
    merged: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fault injection: perturb the data matrix before the null-space check.
    #[arg(long = "corrupt-omega", hide = true)]
    corrupt_omega: bool,
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn kind_in_file(path: Option<&PathBuf>) -> Result<Option<ExperimentKind>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "kind" {
                return v.trim().parse().map(Some);
            }
        }
    }
    Ok(None)
}

/// `Ok(true)` when every check passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sweep(args) => {
            let kind = match args.vary.as_deref() {
                Some("sigma1") => ExperimentKind::SweepSigma1,
                Some(_) => ExperimentKind::SweepSigma2,
                None => kind_in_file(args.common.config.as_ref())?.unwrap_or(ExperimentKind::SweepSigma2),
            };
            let cfg = args.common.build(kind, Vec::new())?;
            let out = run_sweep(&cfg)?;
            let mut w = output(cfg.out.as_ref())?;
            out.write_csv(&mut w)?;
            w.flush()?;
            Ok(true)
        }
        Command::Scale(args) => {
            let cfg = args.build(ExperimentKind::ScaleN, Vec::new())?;
            let out = run_scaling(&cfg)?;
            let mut w = output(cfg.out.as_ref())?;
            out.write_csv(&mut w)?;
            w.flush()?;
            Ok(true)
        }
        Command::Diagnose(args) => {
            let cfg = args.build(ExperimentKind::Diagnostics, Vec::new())?;
            let out = run_diagnostics(&cfg)?;
            let mut w = output(cfg.out.as_ref())?;
            out.write_csv(&mut w)?;
            w.flush()?;
            Ok(out.all_satisfied())
        }
        Command::Register(args) => {
            let mut extra = Vec::new();
            if let Some(v) = args.points {
                extra.push(("points", v.to_string()));
            }
            if let Some(v) = args.max_angle_deg {
                extra.push(("max-angle-deg", v.to_string()));
            }
            if let Some(v) = args.trans_sigma {
                extra.push(("trans-sigma", v.to_string()));
            }
            if let Some(v) = args.icp_iters {
                extra.push(("icp-iters", v.to_string()));
            }
            if let Some(v) = args.scans {
                extra.push(("scans", v));
            }
            if let Some(v) = args.pose_graph {
                extra.push(("pose-graph", v.display().to_string()));
            }
            if let Some(v) = args.merged {
                extra.push(("merged", v.display().to_string()));
            }
            let mut cfg = ExperimentConfig::defaults(ExperimentKind::Register);
            // Synthetic scenes are in millimetres.
            cfg.translation_scale = 50.0;
            if let Some(path) = &args.common.config {
                cfg.apply_file(path)?;
            }
            for (k, v) in args.common.overrides().into_iter().chain(extra) {
                cfg.set(k, &v)?;
            }
            cfg.validate()?;
            let mut w = output(cfg.out.as_ref())?;
            if cfg.scans.is_empty() {
                run_register(&cfg)?.write_csv(&mut w)?;
            } else {
                register_files(&cfg, &mut w)?;
            }
            w.flush()?;
            Ok(true)
        }
        Command::Selftest(args) => {
            let report = run_selftest(SelftestOptions { corrupt_omega: args.corrupt_omega, seed: args.seed })?;
            report.write_table(io::stdout().lock())?;
            if let Some(path) = &args.out {
                let mut w = output(Some(path))?;
                report.write_csv(&mut w)?;
                w.flush()?;
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_) | Error::Parse { .. }) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
