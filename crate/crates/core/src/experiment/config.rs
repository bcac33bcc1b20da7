//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SweepSigma2,
    SweepSigma1,
    ScaleN,
    Selftest,
    Diagnostics,
    Register,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SweepSigma2 => "sweep-sigma2",
            Self::SweepSigma1 => "sweep-sigma1",
            Self::ScaleN => "scale-n",
            Self::Selftest => "selftest",
            Self::Diagnostics => "diagnostics",
            Self::Register => "register",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sweep-sigma2" => Self::SweepSigma2,
            "sweep-sigma1" => Self::SweepSigma1,
            "scale-n" => Self::ScaleN,
            "selftest" => Self::Selftest,
            "diagnostics" => Self::Diagnostics,
            "register" => Self::Register,
            other => return Err(Error::Config(format!("unknown experiment kind '{other}'"))),
        })
    }
}

/// Every setting of one experiment run. List-valued keys take
/// comma-separated values.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub experiment_id: String,
    /// A list only for `scale-n`; the number of scans for `register`.
    pub n: Vec<usize>,
    pub d: usize,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Standard deviation of the ground-truth translations.
    pub translation_scale: f64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Fill the `wall_ms` column. Timings differ between runs.
    pub timing: bool,
    // register only
    pub points: usize,
    pub max_angle_deg: f64,
    pub trans_sigma: f64,
    pub icp_iters: usize,
    pub scans: Vec<PathBuf>,
    pub pose_graph: Option<PathBuf>,
    pub merged: Option<PathBuf>,
}

/// Keys accepted in config files and as `--key` flags.
pub const KEYS: &[&str] = &[
    "kind",
    "experiment-id",
    "n",
    "d",
    "sigma1",
    "sigma2",
    "trials",
    "seed",
    "methods",
    "translation-scale",
    "out",
    "threads",
    "timing",
    "points",
    "max-angle-deg",
    "trans-sigma",
    "icp-iters",
    "scans",
    "pose-graph",
    "merged",
];

impl ExperimentConfig {
    /// Defaults for `kind`. The sweep grids are our choice; the figure
    /// they mirror does not print its grid.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            kind,
            experiment_id: kind.as_str().to_string(),
            n: vec![500],
            d: 3,
            sigma1: vec![1.0],
            sigma2: vec![0.25, 0.5, 1.0, 2.0],
            trials: 25,
            seed: 0,
            methods: vec![Method::Ase, Method::TwoStage],
            translation_scale: 1.0,
            out: None,
            threads: None,
            timing: false,
            points: 500,
            max_angle_deg: 8.0,
            trans_sigma: 0.8,
            icp_iters: 0,
            scans: Vec::new(),
            pose_graph: None,
            merged: None,
        };
        match kind {
            ExperimentKind::SweepSigma2 => {}
            ExperimentKind::SweepSigma1 => {
                cfg.sigma1 = vec![0.25, 0.5, 1.0, 2.0];
                cfg.sigma2 = vec![1.0];
            }
            ExperimentKind::ScaleN => {
                cfg.n = vec![100, 200, 400];
                cfg.sigma1 = vec![0.5];
                cfg.sigma2 = vec![0.5];
                cfg.methods = vec![Method::Ase];
            }
            ExperimentKind::Selftest => {
                cfg.trials = 1;
            }
            ExperimentKind::Diagnostics => {
                cfg.n = vec![50];
                cfg.sigma1 = vec![0.5];
                cfg.sigma2 = vec![0.5];
                cfg.trials = 5;
            }
            ExperimentKind::Register => {
                cfg.n = vec![5];
                cfg.methods = vec![Method::Ase, Method::TwoStage, Method::NaiveProjection { sign_flip: true }];
            }
        }
        cfg
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("{key}: {what} '{value}'"));
        match key {
            "kind" => {
                let kind: ExperimentKind = value.parse()?;
                if kind != self.kind {
                    return Err(Error::Config(format!("config is for '{kind}', running '{}'", self.kind)));
                }
            }
            "experiment-id" => {
                if value.is_empty() || value.contains(',') || value.contains('\n') {
                    return Err(bad("experiment id must be non-empty without commas"));
                }
                self.experiment_id = value.to_string();
            }
            "n" => self.n = parse_list(value).map_err(|_| bad("expected integers"))?,
            "d" => self.d = value.parse().map_err(|_| bad("expected an integer"))?,
            "sigma1" => self.sigma1 = parse_list(value).map_err(|_| bad("expected numbers"))?,
            "sigma2" => self.sigma2 = parse_list(value).map_err(|_| bad("expected numbers"))?,
            "trials" => self.trials = value.parse().map_err(|_| bad("expected an integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "methods" => {
                self.methods = value.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?;
            }
            "translation-scale" => self.translation_scale = value.parse().map_err(|_| bad("expected a number"))?,
            "out" => self.out = Some(PathBuf::from(value)),
            "threads" => self.threads = Some(value.parse().map_err(|_| bad("expected an integer"))?),
            "timing" => self.timing = value.parse().map_err(|_| bad("expected true or false"))?,
            "points" => self.points = value.parse().map_err(|_| bad("expected an integer"))?,
            "max-angle-deg" => self.max_angle_deg = value.parse().map_err(|_| bad("expected a number"))?,
            "trans-sigma" => self.trans_sigma = value.parse().map_err(|_| bad("expected a number"))?,
            "icp-iters" => self.icp_iters = value.parse().map_err(|_| bad("expected an integer"))?,
            "scans" => self.scans = value.split(',').map(|s| PathBuf::from(s.trim())).collect(),
            "pose-graph" => self.pose_graph = Some(PathBuf::from(value)),
            "merged" => self.merged = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every setting of a config file's text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: k + 1, msg: format!("expected key = value, got '{line}'") })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Parse { line: k + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    /// Checks the invariants the runners rely on.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.n.is_empty() || self.sigma1.is_empty() || self.sigma2.is_empty() || self.methods.is_empty() {
            return fail("n, sigma1, sigma2 and methods must be non-empty".into());
        }
        if self.d < 2 {
            return fail(format!("d must be >= 2, got {}", self.d));
        }
        if self.n.iter().any(|&n| n < 2) {
            return fail("every n must be >= 2".into());
        }
        if self.sigma1.iter().chain(&self.sigma2).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("noise levels must be finite and >= 0".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be >= 1".into());
        }
        let single = |name: &str, len: usize| {
            if len != 1 {
                Err(Error::Config(format!("{} expects a single {name}", self.kind)))
            } else {
                Ok(())
            }
        };
        match self.kind {
            ExperimentKind::SweepSigma2 => {
                single("sigma1", self.sigma1.len())?;
                single("n", self.n.len())?;
            }
            ExperimentKind::SweepSigma1 => {
                single("sigma2", self.sigma2.len())?;
                single("n", self.n.len())?;
            }
            ExperimentKind::ScaleN => {
                single("sigma1", self.sigma1.len())?;
                single("sigma2", self.sigma2.len())?;
            }
            ExperimentKind::Diagnostics => {
                single("n", self.n.len())?;
                single("sigma1", self.sigma1.len())?;
                single("sigma2", self.sigma2.len())?;
            }
            ExperimentKind::Register => {
                single("n", self.n.len())?;
                if self.d != 3 {
                    return fail("register works in d = 3".into());
                }
                if self.scans.is_empty() && self.points < 3 {
                    return fail("points must be >= 3".into());
                }
            }
            ExperimentKind::Selftest => {}
        }
        Ok(())
    }
}

fn parse_list<X: FromStr>(s: &str) -> std::result::Result<Vec<X>, X::Err> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
}

/// 64-bit FNV-1a of `"{seed}:{value_idx}:{trial_idx}"`: the seed of one
/// trial. Adding values or trials never changes earlier seeds.
pub fn trial_seed(seed: u64, value_idx: usize, trial_idx: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    format!("{seed}:{value_idx}:{trial_idx}")
        .bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
