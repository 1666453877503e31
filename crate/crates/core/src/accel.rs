//! Accelerated outer loop: a sequence of proximally regularized stage
//! problems `P(w) + (κn/2)‖w − y‖²`, each solved by the plain round loop to a
//! scheduled gap, with the center `y` extrapolated between stages.

use serde::{Deserialize, Serialize};

use crate::comm::CommStats;
use crate::dadm::{self, gap, GapValues, Problem, RoundRecord, RunConfig, WarmStart};
use crate::error::{Error, Result};
use crate::losses::{self, LossKind};

/// Momentum weight between stages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NuChoice {
    #[default]
    Zero,
    /// `(1 − η)/(1 + η)`.
    Theory,
    Value(f64),
}

impl std::str::FromStr for NuChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" | "zero" => Ok(NuChoice::Zero),
            "theory" => Ok(NuChoice::Theory),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("nu must be 0, theory or a number, got {other:?}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("nu {v} not in [0, 1]")));
                }
                Ok(if v == 0.0 { NuChoice::Zero } else { NuChoice::Value(v) })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub eta: f64,
    /// `η⁻² = (λ + 2κ)/λ`, computed directly rather than by squaring `η`.
    pub eta_inv_sq: f64,
    pub nu: f64,
    pub xi0: f64,
}

pub fn schedule(lambda: f64, kappa: f64, gap0: f64, nu: NuChoice) -> Result<Schedule> {
    if !(lambda > 0.0) || !(kappa >= 0.0) || !(gap0 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "schedule needs lambda > 0, kappa >= 0, gap0 >= 0 (got {lambda}, {kappa}, {gap0})"
        )));
    }
    let eta_inv_sq = (lambda + 2.0 * kappa) / lambda;
    let eta = (lambda / (lambda + 2.0 * kappa)).sqrt();
    let nu = match nu {
        NuChoice::Zero => 0.0,
        NuChoice::Theory => (1.0 - eta) / (1.0 + eta),
        NuChoice::Value(v) => v,
    };
    Ok(Schedule { eta, eta_inv_sq, nu, xi0: (1.0 + eta_inv_sq) * gap0 })
}

impl Schedule {
    /// Gap the stage after `xi_prev` must reach: `ηξ/(2 + 2η⁻²)`.
    pub fn stage_target(&self, xi_prev: f64) -> f64 {
        self.eta * xi_prev / (2.0 + 2.0 * self.eta_inv_sq)
    }

    pub fn next_xi(&self, xi_prev: f64) -> f64 {
        (1.0 - self.eta / 2.0) * xi_prev
    }
}

/// `max(0, mR/(γn) − λ)`; zero means the plain method is already optimal.
pub fn default_kappa(m: usize, r: f64, gamma: f64, n: usize, lambda: f64) -> f64 {
    (m as f64 * r / (gamma * n as f64) - lambda).max(0.0)
}

/// The alternative reading `max(0, mR/(λγ) − λ)`, available only on request.
pub fn per_lambda_kappa(m: usize, r: f64, gamma: f64, lambda: f64) -> f64 {
    (m as f64 * r / (lambda * gamma) - lambda).max(0.0)
}

/// `max(0, mL²R/(nε) − λ)` for Lipschitz losses solved through smoothing.
pub fn lipschitz_kappa(m: usize, l: f64, r: f64, n: usize, eps: f64, lambda: f64) -> f64 {
    (m as f64 * l * l * r / (n as f64 * eps) - lambda).max(0.0)
}

/// Smoothed surrogate for the hinge with width `ε/L²`, and the normalized
/// target the surrogate must be solved to.
pub fn smooth_wrap(loss: LossKind, eps: f64, l: f64) -> Result<(LossKind, f64)> {
    if !(eps > 0.0) || !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing needs eps > 0 and L > 0, got {eps}, {l}")));
    }
    Ok((losses::smooth(loss, eps / (l * l))?, eps / 2.0))
}

/// Moves a stage direction to a new center:
/// `u' = ((λ̃u − κy_old) + κy_new)/λ̃`.
pub fn rebase(u: &[f64], lambda_eff: f64, kappa: f64, y_old: &[f64], y_new: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(y_old.iter().zip(y_new))
        .map(|(&uj, (&yo, &yn))| ((lambda_eff * uj - kappa * yo) + kappa * yn) / lambda_eff)
        .collect()
}

#[derive(Clone, Debug)]
pub struct AccelConfig {
    pub kappa: f64,
    pub nu: NuChoice,
    /// Stop once the unshifted gap (unnormalized) is at most this.
    pub target_gap: f64,
    pub outer_max: u64,
    /// Template for each stage: seed, local step, per-stage round cap,
    /// gap cadence and timeout. Its target fields are overwritten.
    pub inner: RunConfig,
    /// Cap on rounds summed over all stages.
    pub max_total_rounds: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: u64,
    pub target: f64,
    pub rounds: u64,
    pub met_target: bool,
    pub values: GapValues,
    pub original: GapValues,
    pub xi: f64,
    pub w: Vec<f64>,
    /// Center for the next stage.
    pub y: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccelRound {
    pub stage: u64,
    /// Global updates applied since the start of the whole run.
    pub comms: u64,
    pub record: RoundRecord,
}

#[derive(Clone, Debug)]
pub struct AccelResult {
    pub w: Vec<f64>,
    /// Dual values in example order.
    pub alpha: Vec<f64>,
    /// Unshifted direction `Σ x_i α_i/(λn)`.
    pub u: Vec<f64>,
    pub original: GapValues,
    pub converged: bool,
    pub total_rounds: u64,
    pub schedule: Schedule,
    pub stages: Vec<StageRecord>,
    pub trace: Vec<AccelRound>,
    pub stats: CommStats,
}

pub fn run_acc(problem: &Problem<'_>, cfg: &AccelConfig, warm: Option<&WarmStart>) -> Result<AccelResult> {
    let base = problem.reg.base();
    if problem.reg.kappa() != 0.0 {
        return Err(Error::InvalidArgument("the base regularizer must be unshifted".into()));
    }
    if !problem.loss.is_smooth() {
        return Err(Error::InvalidArgument(format!(
            "{} is not smooth; wrap it with smooth_wrap first",
            problem.loss
        )));
    }
    if cfg.outer_max == 0 {
        return Err(Error::InvalidArgument("outer-max must be at least 1".into()));
    }
    let data = problem.data;
    let (n, d) = (data.n(), data.d());
    let (mut alpha, u0) = match warm {
        Some(w) => (w.alpha.clone(), w.u.clone()),
        None => (vec![0.0; n], vec![0.0; d]),
    };
    let w0 = base.grad_conj(&u0);
    let (loss0, conj0) = gap::sums(data, problem.loss, &alpha, &w0)?;
    let gap0 = gap::duality_gap(&base, n, loss0, conj0, &u0, &w0)?.gap.max(0.0);
    let sched = schedule(base.lambda(), cfg.kappa, gap0, cfg.nu)?;

    if cfg.kappa == 0.0 {
        return run_plain(problem, cfg, warm, sched);
    }

    let kappa = cfg.kappa;
    let lambda_eff = base.lambda() + kappa;
    let mut y = w0.clone();
    let mut w_prev = w0;
    // Stage direction (Σx_iα_i + κny)/(λ̃n) for the first center.
    let mut u: Vec<f64> = u0
        .iter()
        .zip(&y)
        .map(|(&uj, &yj)| (base.lambda() * uj + kappa * yj) / lambda_eff)
        .collect();
    let mut xi = sched.xi0;
    let mut stages = Vec::new();
    let mut trace = Vec::new();
    let mut stats = CommStats::default();
    let mut total = 0u64;
    let mut offset = 0u64;
    let mut converged = false;
    let mut last_w = Vec::new();
    let mut last_original = None;
    let clock = std::time::Instant::now();

    for stage in 1..=cfg.outer_max {
        let target = sched.stage_target(xi);
        let mut inner = cfg.inner.clone();
        inner.target_gap = target.max(f64::MIN_POSITIVE);
        inner.original_target = Some(cfg.target_gap);
        inner.round_offset = cfg.inner.round_offset + offset;
        inner.stage = stage;
        if let Some(cap) = cfg.max_total_rounds {
            let left = cap.saturating_sub(total);
            if left == 0 {
                break;
            }
            inner.max_rounds = inner.max_rounds.min(left);
        }
        let stage_problem = Problem { reg: base.shift(kappa, &y)?, ..problem.clone() };
        let since_start = clock.elapsed();
        let res = dadm::run(&stage_problem, &inner, Some(&WarmStart { alpha: alpha.clone(), u: u.clone() }))?;
        for rec in &res.trace {
            let mut record = *rec;
            record.elapsed += since_start;
            trace.push(AccelRound { stage, comms: total + rec.round, record });
        }
        total += res.rounds;
        offset += res.rounds + 1;
        stats.merge(&res.stats);
        let met = res.converged || res.values.gap <= target;
        let done = res.original.gap <= cfg.target_gap;
        if !met && !done {
            log::warn!(
                "stage {stage}: round cap reached with stage gap {:e} above target {target:e}",
                res.values.gap
            );
        }
        alpha = res.alpha;
        let w = res.w;
        let y_next: Vec<f64> = w.iter().zip(&w_prev).map(|(&a, &b)| a + sched.nu * (a - b)).collect();
        stages.push(StageRecord {
            stage,
            target,
            rounds: res.rounds,
            met_target: met,
            values: res.values,
            original: res.original,
            xi,
            w: w.clone(),
            y: y_next.clone(),
        });
        last_original = Some(res.original);
        if done {
            converged = true;
            last_w = w;
            u = gap::unshifted_direction(&stage_problem.reg, &res.u);
            break;
        }
        u = rebase(&res.u, lambda_eff, kappa, &y, &y_next);
        xi = sched.next_xi(xi);
        y = y_next;
        w_prev = w.clone();
        last_w = w;
        if cfg.max_total_rounds.is_some_and(|cap| total >= cap) {
            break;
        }
    }

    let original = last_original.ok_or_else(|| Error::InvalidArgument("no stage ran".into()))?;
    if !converged {
        // u is the direction for the next center; bring it back to the unshifted problem.
        let shifted = base.shift(kappa, &y)?;
        u = gap::unshifted_direction(&shifted, &u);
    }
    Ok(AccelResult {
        w: last_w,
        alpha,
        u,
        original,
        converged,
        total_rounds: total,
        schedule: sched,
        stages,
        trace,
        stats,
    })
}

/// κ = 0: a single stage of the plain method on the original objective.
fn run_plain(problem: &Problem<'_>, cfg: &AccelConfig, warm: Option<&WarmStart>, sched: Schedule) -> Result<AccelResult> {
    let mut inner = cfg.inner.clone();
    inner.target_gap = cfg.target_gap;
    inner.original_target = None;
    if let Some(cap) = cfg.max_total_rounds {
        inner.max_rounds = inner.max_rounds.min(cap);
    }
    let res = dadm::run(problem, &inner, warm)?;
    let trace = res.trace.iter().map(|r| AccelRound { stage: 0, comms: r.round, record: *r }).collect();
    Ok(AccelResult {
        stages: vec![StageRecord {
            stage: 0,
            target: cfg.target_gap,
            rounds: res.rounds,
            met_target: res.converged,
            values: res.values,
            original: res.original,
            xi: sched.xi0,
            w: res.w.clone(),
            y: res.w.clone(),
        }],
        w: res.w,
        alpha: res.alpha,
        u: res.u,
        original: res.original,
        converged: res.converged,
        total_rounds: res.rounds,
        schedule: sched,
        trace,
        stats: res.stats,
    })
}
