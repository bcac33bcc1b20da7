//! Monte-Carlo sweeps, scaling studies, diagnostics runs and the
//! registration demo, with CSV output.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diagnostics::{
    build_ground_truth_decomposition, centering_identity_residual, check_eigen_gap, check_norm_bounds,
    logged_rates, BoundCheck, CheckKind,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate, run_methods, EstimateSet, EstimatorOptions, Method};
use crate::evaluation::error_report;
use crate::experiment::config::{trial_seed, ExperimentConfig, ExperimentKind};
use crate::registration::{
    load_ply, perturb_pose_graph, register_scans, save_ply, synthetic_scene, PoseGraph,
};
use crate::synthesis::{generate_ground_truth, synthesize_observations, GroundTruth, MirrorMode};

pub const DATA_HEADER: &str = "experiment_id,kind,method,n,d,sigma1,sigma2,trial,seed,\
max_se_error,avg_rot_deg,max_rot_deg,avg_trans_err,max_trans_err,wall_ms";

const METRICS: [&str; 5] = ["max_se_error", "avg_rot_deg", "max_rot_deg", "avg_trans_err", "max_trans_err"];

/// One estimator on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub trial: usize,
    pub seed: u64,
    /// In the order of the CSV columns.
    pub metrics: [f64; 5],
    pub wall_ms: Option<f64>,
}

impl TrialRecord {
    pub fn max_se_error(&self) -> f64 {
        self.metrics[0]
    }

    pub fn avg_rot_deg(&self) -> f64 {
        self.metrics[1]
    }
}

/// Quartiles of every metric over the trials of one (value, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub method: Method,
    pub n: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub trials: usize,
    /// `[q1, median, q3]` per metric.
    pub quartiles: [[f64; 3]; 5],
}

impl SummaryRecord {
    pub fn median_max_se_error(&self) -> f64 {
        self.quartiles[0][1]
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub experiment_id: String,
    pub kind: ExperimentKind,
    pub d: usize,
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<SummaryRecord>,
    /// Log-log slope of the median `max_se_error` against `n`, per method;
    /// only for `scale-n`, and `None` with fewer than two sizes.
    pub slopes: Vec<(Method, Option<f64>)>,
}

impl SweepOutput {
    /// Data rows, then `summary,` rows, then `fit,` rows for scaling runs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{DATA_HEADER}")?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                self.experiment_id, self.kind, r.method, r.n, r.d, r.sigma1, r.sigma2, r.trial, r.seed
            )?;
            for m in r.metrics {
                write!(w, ",{}", fmt_num(m))?;
            }
            match r.wall_ms {
                Some(ms) => writeln!(w, ",{ms:.3}")?,
                None => writeln!(w, ",")?,
            }
        }
        write!(w, "summary,experiment_id,kind,method,n,d,sigma1,sigma2,trials")?;
        for m in METRICS {
            write!(w, ",{m}_q1,{m}_median,{m}_q3")?;
        }
        writeln!(w)?;
        for s in &self.summaries {
            write!(
                w,
                "summary,{},{},{},{},{},{},{},{}",
                self.experiment_id, self.kind, s.method, s.n, self.d, s.sigma1, s.sigma2, s.trials
            )?;
            for q in s.quartiles.iter().flatten() {
                write!(w, ",{}", fmt_num(*q))?;
            }
            writeln!(w)?;
        }
        if self.kind == ExperimentKind::ScaleN {
            writeln!(w, "fit,experiment_id,kind,method,metric,loglog_slope")?;
            for (method, slope) in &self.slopes {
                let s = slope.map(fmt_num).unwrap_or_default();
                writeln!(w, "fit,{},{},{},max_se_error,{s}", self.experiment_id, self.kind, method)?;
            }
        }
        Ok(())
    }

    pub fn summary(&self, method: Method, value_idx: usize) -> Option<&SummaryRecord> {
        self.summaries.iter().filter(|s| s.method == method).nth(value_idx)
    }
}

/// Shortest round-trip decimal, switching to exponent form outside
/// `[1e-4, 1e15)` so tiny errors stay readable.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

/// Quartile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Runs `f` on a pool of `threads` workers, or rayon's global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// The `(n, sigma1, sigma2)` settings a sweep iterates over.
fn settings(cfg: &ExperimentConfig) -> Result<Vec<(usize, f64, f64)>> {
    Ok(match cfg.kind {
        ExperimentKind::SweepSigma2 => cfg.sigma2.iter().map(|&s2| (cfg.n[0], cfg.sigma1[0], s2)).collect(),
        ExperimentKind::SweepSigma1 => cfg.sigma1.iter().map(|&s1| (cfg.n[0], s1, cfg.sigma2[0])).collect(),
        ExperimentKind::ScaleN => cfg.n.iter().map(|&n| (n, cfg.sigma1[0], cfg.sigma2[0])).collect(),
        other => return Err(Error::Config(format!("'{other}' is not a sweep"))),
    })
}

fn timed_estimates(
    obs: &crate::synthesis::ObservationSet<f64>,
    methods: &[Method],
    timing: bool,
) -> Result<Vec<(EstimateSet<f64>, Option<f64>)>> {
    let options = EstimatorOptions::default();
    if !timing {
        return Ok(run_methods(obs, methods, &options)?.into_iter().map(|e| (e, None)).collect());
    }
    methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let est = estimate(obs, m, &options)?;
            Ok((est, Some(start.elapsed().as_secs_f64() * 1e3)))
        })
        .collect()
}

fn record(
    est: &EstimateSet<f64>,
    gt: &GroundTruth<f64>,
    setting: (usize, f64, f64),
    trial: usize,
    seed: u64,
    wall_ms: Option<f64>,
) -> Result<TrialRecord> {
    let rep = error_report(est, gt)?;
    Ok(TrialRecord {
        method: est.method,
        n: setting.0,
        d: gt.d(),
        sigma1: setting.1,
        sigma2: setting.2,
        trial,
        seed,
        metrics: [
            rep.max_se_error,
            rep.avg_rotation_deg,
            rep.max_rotation_deg,
            rep.avg_translation_err,
            rep.max_translation_err,
        ],
        wall_ms,
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    settings: &[(usize, f64, f64)],
    records: Vec<TrialRecord>,
) -> SweepOutput {
    let mut summaries = Vec::new();
    for (v, &(n, s1, s2)) in settings.iter().enumerate() {
        for &method in &cfg.methods {
            let cell: Vec<&TrialRecord> = records
                .iter()
                .skip(v * cfg.trials * cfg.methods.len())
                .take(cfg.trials * cfg.methods.len())
                .filter(|r| r.method == method)
                .collect();
            let mut quartiles = [[0.0; 3]; 5];
            for (k, q) in quartiles.iter_mut().enumerate() {
                let mut vals: Vec<f64> = cell.iter().map(|r| r.metrics[k]).collect();
                vals.sort_by(f64::total_cmp);
                *q = [quantile(&vals, 0.25), quantile(&vals, 0.5), quantile(&vals, 0.75)];
            }
            summaries.push(SummaryRecord { method, n, sigma1: s1, sigma2: s2, trials: cell.len(), quartiles });
        }
    }
    let slopes = if cfg.kind == ExperimentKind::ScaleN {
        cfg.methods
            .iter()
            .map(|&m| {
                let pts: Vec<(f64, f64)> = summaries
                    .iter()
                    .filter(|s| s.method == m)
                    .map(|s| (s.n as f64, s.median_max_se_error()))
                    .collect();
                (m, loglog_slope(&pts))
            })
            .collect()
    } else {
        Vec::new()
    };
    SweepOutput {
        experiment_id: cfg.experiment_id.clone(),
        kind: cfg.kind,
        d: cfg.d,
        records,
        summaries,
        slopes,
    }
}

/// Noise sweep: for every value and trial a fresh ground truth, mirrored
/// observations and every requested estimator.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let settings = settings(cfg)?;
    let items: Vec<(usize, usize)> =
        (0..settings.len()).flat_map(|v| (0..cfg.trials).map(move |t| (v, t))).collect();
    let run_item = |&(v, t): &(usize, usize)| -> Result<Vec<TrialRecord>> {
        let setting = settings[v];
        let seed = trial_seed(cfg.seed, v, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: GroundTruth<f64> = generate_ground_truth(setting.0, cfg.d, cfg.translation_scale, &mut rng)?;
        let obs = synthesize_observations(&gt, setting.1, setting.2, &mut rng, MirrorMode::Mirrored)?;
        timed_estimates(&obs, &cfg.methods, cfg.timing)?
            .iter()
            .map(|(est, ms)| record(est, &gt, setting, t, seed, *ms))
            .collect()
    };
    let nested = with_threads(cfg.threads, || items.par_iter().map(run_item).collect::<Result<Vec<_>>>())??;
    Ok(summarize(cfg, &settings, nested.into_iter().flatten().collect()))
}

/// [`run_sweep`] over a list of `n`, with the log-log slope of the median
/// error.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    if cfg.kind != ExperimentKind::ScaleN {
        return Err(Error::Config(format!("'{}' is not a scaling run", cfg.kind)));
    }
    run_sweep(cfg)
}

/// One diagnostics row with its trial.
#[derive(Debug, Clone)]
pub struct DiagnosticsRow {
    pub trial: usize,
    pub seed: u64,
    pub check: BoundCheck,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsOutput {
    pub experiment_id: String,
    pub n: usize,
    pub d: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rows: Vec<DiagnosticsRow>,
}

impl DiagnosticsOutput {
    pub fn all_satisfied(&self) -> bool {
        self.rows.iter().all(|r| r.check.satisfied())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "experiment_id,n,d,sigma1,sigma2,trial,seed,quantity,value,bound,ratio,kind,satisfied")?;
        for r in &self.rows {
            let c = &r.check;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.experiment_id,
                self.n,
                self.d,
                self.sigma1,
                self.sigma2,
                r.trial,
                r.seed,
                c.quantity,
                fmt_num(c.value),
                fmt_num(c.bound),
                fmt_num(c.ratio()),
                c.kind.as_str(),
                c.satisfied()
            )?;
        }
        Ok(())
    }
}

/// Decomposition identities, deterministic bounds and logged rates on
/// `trials` random instances.
pub fn run_diagnostics(cfg: &ExperimentConfig) -> Result<DiagnosticsOutput> {
    cfg.validate()?;
    let (n, s1, s2) = (cfg.n[0], cfg.sigma1[0], cfg.sigma2[0]);
    let run_trial = |t: usize| -> Result<Vec<DiagnosticsRow>> {
        let seed = trial_seed(cfg.seed, 0, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt: GroundTruth<f64> = generate_ground_truth(n, cfg.d, cfg.translation_scale, &mut rng)?;
        let obs = synthesize_observations(&gt, s1, s2, &mut rng, MirrorMode::Mirrored)?;
        let dec = build_ground_truth_decomposition(&gt, &obs)?;
        let mut checks = vec![
            BoundCheck::new("decomposition_residual", dec.decomposition_residual(), 1e-8, CheckKind::UpperBound),
            BoundCheck::new(
                "translation_identity_residual",
                dec.translation_identity_residual(),
                1e-8,
                CheckKind::UpperBound,
            ),
            BoundCheck::new(
                "centering_identity_residual",
                centering_identity_residual(&gt),
                1e-8 * (1.0 + crate::scalar::to_f64(gt.max_translation_norm())) * (n * n) as f64,
                CheckKind::UpperBound,
            ),
        ];
        checks.extend(check_norm_bounds(&dec, &gt));
        checks.extend(check_eigen_gap(&dec)?);
        checks.extend(logged_rates(&dec)?);
        Ok(checks.into_iter().map(|check| DiagnosticsRow { trial: t, seed, check }).collect())
    };
    let nested =
        with_threads(cfg.threads, || (0..cfg.trials).into_par_iter().map(run_trial).collect::<Result<Vec<_>>>())??;
    Ok(DiagnosticsOutput {
        experiment_id: cfg.experiment_id.clone(),
        n,
        d: cfg.d,
        sigma1: s1,
        sigma2: s2,
        rows: nested.into_iter().flatten().collect(),
    })
}

/// Synthetic registration: `n` scans of a `points`-point shape, exact
/// Kabsch pose graph (optionally ICP-refined), perturbed with
/// `max-angle-deg` / `trans-sigma`. Rows use the sweep schema with
/// `sigma1 = max-angle-deg` and `sigma2 = trans-sigma`.
pub fn run_register(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    if !cfg.scans.is_empty() {
        return Err(Error::Config("scan files given: use register_files".into()));
    }
    let n = cfg.n[0];
    let setting = (n, cfg.max_angle_deg, cfg.trans_sigma);
    let run_trial = |t: usize| -> Result<Vec<TrialRecord>> {
        let seed = trial_seed(cfg.seed, 0, t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = synthetic_scene::<f64, _>(n, cfg.points, cfg.translation_scale, &mut rng)?;
        let mut graph = PoseGraph::from_correspondences(&scene.scans)?;
        if cfg.icp_iters > 0 {
            graph = graph.refine_with_icp(&scene.scans, cfg.icp_iters, 1e-9)?;
        }
        let noisy = perturb_pose_graph(&graph, cfg.max_angle_deg, cfg.trans_sigma, &mut rng)?;
        let gt = GroundTruth::from_motions(scene.poses.clone())?;
        let mut out = Vec::with_capacity(cfg.methods.len());
        for &m in &cfg.methods {
            let start = Instant::now();
            let reg = register_scans(&scene.scans, &noisy, m)?;
            let ms = cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
            if t == 0 && m == cfg.methods[0] {
                if let Some(path) = &cfg.merged {
                    save_ply(&reg.merged, path)?;
                }
            }
            out.push(record(&reg.estimate, &gt, setting, t, seed, ms)?);
        }
        Ok(out)
    };
    let nested =
        with_threads(cfg.threads, || (0..cfg.trials).into_par_iter().map(run_trial).collect::<Result<Vec<_>>>())??;
    Ok(summarize(cfg, &[setting], nested.into_iter().flatten().collect()))
}

/// Registers real scans: PLY files, a pose graph from CSV (or Kabsch on
/// positional correspondences), optional ICP. Writes the estimated pose
/// of every scan per method; the merged cloud of the first method goes to
/// `merged` when set.
pub fn register_files<W: Write>(cfg: &ExperimentConfig, mut w: W) -> Result<()> {
    if cfg.scans.len() < 2 {
        return Err(Error::Config("register needs at least two scan files".into()));
    }
    let scans = cfg.scans.iter().map(load_ply::<f64>).collect::<Result<Vec<_>>>()?;
    let mut graph = match &cfg.pose_graph {
        Some(path) => PoseGraph::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))?,
        None => PoseGraph::from_correspondences(&scans)?,
    };
    if cfg.icp_iters > 0 {
        graph = with_threads(cfg.threads, || graph.refine_with_icp(&scans, cfg.icp_iters, 1e-9))??;
    }
    writeln!(w, "experiment_id,method,scan,label,r00,r01,r02,r10,r11,r12,r20,r21,r22,t0,t1,t2")?;
    for (k, &m) in cfg.methods.iter().enumerate() {
        let reg = register_scans(&scans, &graph, m)?;
        for (i, g) in reg.estimate.motions.iter().enumerate() {
            write!(w, "{},{},{},{}", cfg.experiment_id, m, i, scans[i].label)?;
            let r = g.rotation.matrix();
            for a in 0..3 {
                for b in 0..3 {
                    write!(w, ",{}", r[(a, b)])?;
                }
            }
            writeln!(w, ",{},{},{}", g.translation[0], g.translation[1], g.translation[2])?;
        }
        if k == 0 {
            if let Some(path) = &cfg.merged {
                save_ply(&reg.merged, path)?;
            }
        }
    }
    Ok(())
}
