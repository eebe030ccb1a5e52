//! Experiment configuration, the end-to-end runner, and file outputs.

mod output;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::power::{StoppingRule, UpdateVariant};
use crate::refine::NicenessParams;
use crate::synth::MatchStrategy;
use crate::tensor::DEFAULT_DENSE_BUDGET;

pub use output::{emit_outputs, emit_table1, load_metrics, read_footer, table1_table, verify_aggregates, Table1Row};
pub use run::{
    aggregate, run_experiment, sweep, table1_suite, Aggregates, CurvePoint, MetricsRow, RefinedMetrics, RepeatDetail, RunSummary, Scale,
    TrialRow,
};

/// Representation of the additive noise tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Dense,
    Factored,
}

/// Every knob of one experiment. Build with [`ExperimentConfig::default`]
/// and [`ExperimentConfig::set`], or parse a `key=value` file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    /// One entry (cubical) or one per mode.
    pub dims: Vec<usize>,
    pub rank: usize,
    pub order: usize,
    pub symmetric: bool,
    pub trials: usize,
    pub iters: Option<usize>,
    pub stop_t1: Option<f64>,
    /// Stopping rule for polishing cluster centers; `None` reuses the trial rule.
    pub center_iters: Option<usize>,
    pub nu: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub noise: f64,
    pub noise_kind: NoiseMode,
    pub noise_rank: usize,
    pub init: InitMethod,
    pub variant: UpdateVariant,
    pub refine_sweeps: usize,
    pub seed: u64,
    pub repeats: usize,
    pub out: Option<PathBuf>,
    pub dense_budget: usize,
    pub truth: Option<PathBuf>,
    #[serde(rename = "match")]
    pub match_strategy: MatchStrategy,
    pub accept_dist: f64,
    /// A trial or component counts as recovered when its largest per-mode
    /// dist to the nearest truth component is at most this.
    pub recovery_dist: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dims: vec![100],
            rank: 10,
            order: 3,
            symmetric: false,
            trials: 200,
            iters: Some(100),
            stop_t1: Some(1e-8),
            center_iters: None,
            nu: 0.5,
            eta0: 10.0,
            eta1: 2.5,
            noise: 0.0,
            noise_kind: NoiseMode::Dense,
            noise_rank: 10,
            init: InitMethod::Random,
            variant: UpdateVariant::Jacobi,
            refine_sweeps: 30,
            seed: 0,
            repeats: 1,
            out: None,
            dense_budget: DEFAULT_DENSE_BUDGET,
            truth: None,
            match_strategy: MatchStrategy::Greedy,
            accept_dist: 1.0,
            recovery_dist: 0.1,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::set`], in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "dims",
    "rank",
    "order",
    "symmetric",
    "trials",
    "iters",
    "stop-t1",
    "center-iters",
    "nu",
    "eta0",
    "eta1",
    "noise",
    "noise-kind",
    "noise-rank",
    "init",
    "variant",
    "refine-sweeps",
    "seed",
    "repeats",
    "out",
    "dense-budget",
    "truth",
    "match",
    "accept-dist",
    "recovery-dist",
];

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::InvalidValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| invalid(key, format!("`{value}`: {e}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value.trim().eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn opt_str<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    /// Sets one key from its text form. `dim` is an alias of `dims`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dims" | "dim" => {
                let parts: Vec<&str> = v.split([',', 'x']).map(str::trim).filter(|s| !s.is_empty()).collect();
                if parts.is_empty() {
                    return Err(invalid(key, "empty dimension list"));
                }
                self.dims = parts.iter().map(|p| num(key, p)).collect::<Result<_>>()?;
            }
            "rank" => self.rank = num(key, v)?,
            "order" => self.order = num(key, v)?,
            "symmetric" => self.symmetric = num(key, v)?,
            "trials" => self.trials = num(key, v)?,
            "iters" => self.iters = optional(key, v)?,
            "stop-t1" => self.stop_t1 = optional(key, v)?,
            "center-iters" => self.center_iters = optional(key, v)?,
            "nu" => self.nu = num(key, v)?,
            "eta0" => self.eta0 = num(key, v)?,
            "eta1" => self.eta1 = num(key, v)?,
            "noise" => self.noise = num(key, v)?,
            "noise-kind" => {
                self.noise_kind = match v {
                    "dense" => NoiseMode::Dense,
                    "factored" => NoiseMode::Factored,
                    _ => return Err(invalid(key, format!("`{v}`: expected dense or factored"))),
                }
            }
            "noise-rank" => self.noise_rank = num(key, v)?,
            "init" => self.init = v.parse().map_err(|_| invalid(key, format!("`{v}`: expected random or svd")))?,
            "variant" => {
                self.variant = match v {
                    "jacobi" => UpdateVariant::Jacobi,
                    "gauss-seidel" => UpdateVariant::GaussSeidel,
                    _ => return Err(invalid(key, format!("`{v}`: expected jacobi or gauss-seidel"))),
                }
            }
            "refine-sweeps" => self.refine_sweeps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "repeats" => self.repeats = num(key, v)?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dense-budget" => self.dense_budget = num(key, v)?,
            "truth" => self.truth = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "match" => {
                self.match_strategy = match v {
                    "greedy" => MatchStrategy::Greedy,
                    "optimal" => MatchStrategy::Optimal,
                    _ => return Err(invalid(key, format!("`{v}`: expected greedy or optimal"))),
                }
            }
            "accept-dist" => self.accept_dist = num(key, v)?,
            "recovery-dist" => self.recovery_dist = num(key, v)?,
            _ => return Err(invalid(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a flat `key=value` text; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected key=value, got `{line}`"),
                });
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then `overrides` in order.
    pub fn from_sources(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(t) = file_text {
            cfg.apply_text(t)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dims" => self.dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
            "rank" => self.rank.to_string(),
            "order" => self.order.to_string(),
            "symmetric" => self.symmetric.to_string(),
            "trials" => self.trials.to_string(),
            "iters" => opt_str(&self.iters),
            "stop-t1" => opt_str(&self.stop_t1),
            "center-iters" => opt_str(&self.center_iters),
            "nu" => self.nu.to_string(),
            "eta0" => self.eta0.to_string(),
            "eta1" => self.eta1.to_string(),
            "noise" => self.noise.to_string(),
            "noise-kind" => match self.noise_kind {
                NoiseMode::Dense => "dense".into(),
                NoiseMode::Factored => "factored".into(),
            },
            "noise-rank" => self.noise_rank.to_string(),
            "init" => self.init.to_string(),
            "variant" => match self.variant {
                UpdateVariant::Jacobi => "jacobi".into(),
                UpdateVariant::GaussSeidel => "gauss-seidel".into(),
            },
            "refine-sweeps" => self.refine_sweeps.to_string(),
            "seed" => self.seed.to_string(),
            "repeats" => self.repeats.to_string(),
            "out" => self.out.as_ref().map_or_else(String::new, |p| p.display().to_string()),
            "dense-budget" => self.dense_budget.to_string(),
            "truth" => self.truth.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string()),
            "match" => match self.match_strategy {
                MatchStrategy::Greedy => "greedy".into(),
                MatchStrategy::Optimal => "optimal".into(),
            },
            "accept-dist" => self.accept_dist.to_string(),
            "recovery-dist" => self.recovery_dist.to_string(),
            _ => return None,
        })
    }

    /// `key=value` lines that [`ExperimentConfig::apply_text`] reads back to
    /// the same config.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("rank", self.rank),
            ("order", self.order),
            ("trials", self.trials),
            ("repeats", self.repeats),
            ("noise-rank", self.noise_rank),
            ("dense-budget", self.dense_budget),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.order < 3 {
            return Err(invalid("order", "must be at least 3"));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(invalid("dims", "must be positive"));
        }
        if self.dims.len() != 1 && self.dims.len() != self.order {
            return Err(invalid("dims", format!("give 1 or {} dimensions", self.order)));
        }
        if self.symmetric && self.dims.iter().any(|&d| d != self.dims[0]) {
            return Err(invalid("dims", "symmetric tensors need equal dimensions"));
        }
        if self.iters == Some(0) {
            return Err(invalid("iters", "must be positive"));
        }
        if let Some(t) = self.stop_t1 {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("stop-t1", "must be positive"));
            }
        }
        if self.iters.is_none() && self.stop_t1.is_none() {
            return Err(invalid("iters", "need iters, stop-t1, or both"));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(invalid("nu", "must lie in (0,1)"));
        }
        NicenessParams::new(self.eta0, self.eta1).map_err(|e| invalid("eta0", e.to_string()))?;
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("noise", "must be a finite value ≥ 0"));
        }
        if !(self.accept_dist >= 0.0) {
            return Err(invalid("accept-dist", "must be ≥ 0"));
        }
        if !(self.recovery_dist >= 0.0) {
            return Err(invalid("recovery-dist", "must be ≥ 0"));
        }
        if self.rank > self.trials {
            return Err(invalid("trials", format!("need at least rank={} trials", self.rank)));
        }
        Ok(())
    }

    /// Per-mode dimensions.
    pub fn mode_dims(&self) -> Vec<usize> {
        if self.dims.len() == 1 {
            vec![self.dims[0]; self.order]
        } else {
            self.dims.clone()
        }
    }

    pub fn max_dim(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(0)
    }

    /// `iters` and `stop-t1` together give the combined rule.
    pub fn stopping_rule(&self) -> StoppingRule {
        match (self.iters, self.stop_t1) {
            (Some(n), Some(t)) => StoppingRule::Both(n, t),
            (Some(n), None) => StoppingRule::FixedIters(n),
            (None, Some(t)) => StoppingRule::Threshold(t),
            (None, None) => StoppingRule::FixedIters(1),
        }
    }

    pub fn niceness(&self) -> NicenessParams {
        NicenessParams::new(self.eta0, self.eta1).unwrap_or_default()
    }
}
