//! Option resolution and a single training entry point shared by the command
//! line and the C interface.

use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::accel::{self, AccelConfig, NuChoice};
use crate::comm::CommStats;
use crate::dadm::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::dadm::{self, GapValues, Problem, RunConfig};
use crate::dataio::{self, Dataset};
use crate::error::{Error, Result};
use crate::localsolver::{LocalStepConfig, StepMode};
use crate::losses::{self, LossKind};
use crate::metrics::{self, MetricsRecord};
use crate::regularizer::ShiftedElasticNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    #[default]
    Dadm,
    AccDadm,
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dadm" => Ok(Algo::Dadm),
            "acc-dadm" => Ok(Algo::AccDadm),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KappaChoice {
    #[default]
    Auto,
    Value(f64),
}

impl FromStr for KappaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(KappaChoice::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(KappaChoice::Value(v)),
            _ => Err(Error::InvalidArgument(format!("kappa must be auto or a number >= 0, got {s:?}"))),
        }
    }
}

/// How `--kappa auto` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KappaFormula {
    /// `mR/(γn) − λ`.
    #[default]
    PerExample,
    /// `mR/(λγ) − λ`.
    PerLambda,
}

impl FromStr for KappaFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-example" => Ok(KappaFormula::PerExample),
            "per-lambda" => Ok(KappaFormula::PerLambda),
            other => Err(Error::InvalidArgument(format!("unknown kappa formula {other:?}"))),
        }
    }
}

/// Every setting that influences a run's trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub algo: Algo,
    pub loss: LossKind,
    /// Smoothing width applied to the hinge.
    pub smoothing: Option<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub m: usize,
    pub sp: f64,
    pub seed: u64,
    /// Target for the normalized gap `(P − D)/n`.
    pub target_gap: f64,
    /// Cap on rounds over the whole run.
    pub max_rounds: u64,
    /// Cap on rounds per stage of the accelerated method.
    pub inner_max_rounds: Option<u64>,
    pub mode: StepMode,
    pub local_passes: usize,
    pub step_fraction: Option<f64>,
    pub lipschitz_q: Option<f64>,
    pub gap_every: u64,
    pub tail_average: Option<u64>,
    pub kappa: KappaChoice,
    pub kappa_formula: KappaFormula,
    pub nu: NuChoice,
    /// Stage cap. Stages whose target already holds cost no global update,
    /// so the round cap is normally the one that binds.
    pub outer_max: u64,
    /// Scale every example to unit norm before training.
    pub normalize: bool,
    pub timeout_secs: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            algo: Algo::Dadm,
            loss: LossKind::SmoothHinge,
            smoothing: None,
            lambda: 1e-4,
            mu: 1e-5,
            m: 4,
            sp: 0.2,
            seed: 1,
            target_gap: 1e-6,
            max_rounds: 1000,
            inner_max_rounds: None,
            mode: StepMode::Exact,
            local_passes: 1,
            step_fraction: None,
            lipschitz_q: None,
            gap_every: 1,
            tail_average: None,
            kappa: KappaChoice::Auto,
            kappa_formula: KappaFormula::PerExample,
            nu: NuChoice::Zero,
            outer_max: 1_000_000,
            normalize: false,
            timeout_secs: 600,
        }
    }
}

/// Values derived from the options and the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub n: usize,
    pub d: usize,
    pub r: f64,
    /// Loss actually optimized.
    pub loss: LossKind,
    pub gamma: f64,
    pub kappa: f64,
    pub nu: f64,
    pub eta: Option<f64>,
    /// Normalized gap the optimized objective is driven to.
    pub solved_target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub data: Option<String>,
    /// Forced feature dimension.
    pub dim: Option<usize>,
    pub options: TrainOptions,
    pub resolved: Option<Resolved>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub model: Checkpoint,
    pub resolved: Resolved,
    pub original: GapValues,
    pub converged: bool,
    pub rounds: u64,
    pub stats: CommStats,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("target-gap", self.target_gap)?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be >= 0, got {}", self.mu)));
        }
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        if self.outer_max == 0 {
            return Err(Error::InvalidArgument("outer-max must be at least 1".into()));
        }
        if let Some(g) = self.smoothing {
            positive("smoothing", g)?;
            if self.loss != LossKind::Hinge {
                return Err(Error::InvalidArgument(format!("smoothing applies to the hinge only, not {}", self.loss)));
            }
        }
        Ok(())
    }

    fn step(&self) -> LocalStepConfig {
        LocalStepConfig {
            sp: self.sp,
            mode: self.mode,
            passes: self.local_passes,
            s_override: self.step_fraction,
            q_override: self.lipschitz_q,
        }
    }
}

/// Applies the data-shaping options.
pub fn prepare(data: Dataset, opts: &TrainOptions) -> Dataset {
    if opts.normalize {
        data.normalized()
    } else {
        data
    }
}

/// Loss to optimize and the normalized target for it.
fn effective_loss(opts: &TrainOptions) -> Result<(LossKind, f64)> {
    match (opts.loss, opts.smoothing, opts.algo) {
        (LossKind::Hinge, Some(g), _) => Ok((losses::smooth(LossKind::Hinge, g)?, opts.target_gap)),
        (LossKind::Hinge, None, Algo::AccDadm) => accel::smooth_wrap(LossKind::Hinge, opts.target_gap, 1.0),
        (loss, _, _) => Ok((loss, opts.target_gap)),
    }
}

pub fn resolve(data: &Dataset, opts: &TrainOptions) -> Result<Resolved> {
    opts.validate()?;
    let (loss, solved_target) = effective_loss(opts)?;
    let (n, r) = (data.n(), data.stats().r);
    let gamma = loss.gamma();
    let mut kappa = 0.0;
    let mut nu = 0.0;
    let mut eta = None;
    if opts.algo == Algo::AccDadm {
        kappa = match opts.kappa {
            KappaChoice::Value(v) => v,
            KappaChoice::Auto => match opts.kappa_formula {
                KappaFormula::PerExample => accel::default_kappa(opts.m, r, gamma, n, opts.lambda),
                KappaFormula::PerLambda => accel::per_lambda_kappa(opts.m, r, gamma, opts.lambda),
            },
        };
        let sched = accel::schedule(opts.lambda, kappa, 0.0, opts.nu)?;
        nu = sched.nu;
        eta = Some(sched.eta);
    }
    Ok(Resolved { n, d: data.d(), r, loss, gamma, kappa, nu, eta, solved_target })
}

pub fn train(data: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    let resolved = resolve(data, opts)?;
    if data.n() == 0 {
        return Err(Error::InvalidArgument("dataset has no examples".into()));
    }
    let partition = dataio::partition(data.n(), opts.m, opts.seed)?;
    let reg = ShiftedElasticNet::new(opts.lambda, opts.mu)?;
    let problem = Problem { data, partition: &partition, reg, loss: resolved.loss };
    let n = data.n();
    let epoch_per_round = opts.sp * opts.local_passes as f64;
    let note = match (opts.loss, resolved.loss) {
        (LossKind::Hinge, LossKind::SmoothedHinge(g)) => format!("smoothed hinge gamma={g}"),
        _ => String::new(),
    };
    let run_cfg = RunConfig {
        seed: opts.seed,
        target_gap: resolved.solved_target * n as f64,
        original_target: None,
        max_rounds: opts.max_rounds,
        step: opts.step(),
        gap_every: opts.gap_every,
        tail_average: opts.tail_average,
        timeout: Duration::from_secs(opts.timeout_secs.max(1)),
        round_offset: 0,
        stage: 0,
    };
    let base_ck = |alpha, u, w, y, round, kappa| Checkpoint {
        format_version: FORMAT_VERSION,
        n,
        d: data.d(),
        m: opts.m,
        lambda: opts.lambda,
        mu: opts.mu,
        kappa,
        loss: resolved.loss.name(),
        seed: opts.seed,
        round,
        alpha,
        u,
        w,
        y,
    };

    match opts.algo {
        Algo::Dadm => {
            let res = dadm::run(&problem, &run_cfg, None)?;
            if let Some(avg) = &res.averaged {
                log::info!("tail average over {} iterates: gap {:e}", avg.count, avg.values.gap);
            }
            let records = metrics::from_dadm(&res, n, epoch_per_round, &note);
            let model = base_ck(res.alpha, res.u, res.w, vec![0.0; data.d()], res.rounds, 0.0);
            Ok(TrainOutcome {
                records,
                model,
                original: res.original,
                converged: res.converged,
                rounds: res.rounds,
                stats: res.stats,
                resolved,
            })
        }
        Algo::AccDadm => {
            let mut inner = run_cfg.clone();
            inner.max_rounds = opts.inner_max_rounds.unwrap_or(opts.max_rounds);
            let cfg = AccelConfig {
                kappa: resolved.kappa,
                nu: opts.nu,
                target_gap: resolved.solved_target * n as f64,
                outer_max: opts.outer_max,
                inner,
                max_total_rounds: Some(opts.max_rounds),
            };
            let res = accel::run_acc(&problem, &cfg, None)?;
            let records = metrics::from_accel(&res, n, resolved.kappa, epoch_per_round, &note);
            let kappa = resolved.kappa;
            let (u, y) = match res.stages.last() {
                Some(st) if kappa > 0.0 => {
                    // store the direction relative to the last center so a
                    // restore can undo the shift
                    let le = opts.lambda + kappa;
                    let u = res.u.iter().zip(&st.y).map(|(&uj, &yj)| (opts.lambda * uj + kappa * yj) / le).collect();
                    (u, st.y.clone())
                }
                _ => (res.u.clone(), vec![0.0; data.d()]),
            };
            let model = base_ck(res.alpha, u, res.w, y, res.total_rounds, kappa);
            Ok(TrainOutcome {
                records,
                model,
                original: res.original,
                converged: res.converged,
                rounds: res.total_rounds,
                stats: res.stats,
                resolved,
            })
        }
    }
}
