//! The synchronous round loop: parallel local dual ascent, weighted
//! averaging of the dual directions, and an exact duality gap per round.
//!
//! Round `t` of the protocol:
//!
//! 1. the coordinator broadcasts the change of the synchronized direction
//!    produced by round `t − 1`;
//! 2. each worker applies it, evaluates its loss and conjugate sums at the
//!    synchronized point (when asked to), then runs its local step;
//! 3. the coordinator gathers the results, computes the gap of the
//!    synchronized state `t` and either stops (asking the workers to undo the
//!    step they just took) or averages the new directions.
//!
//! The gap of state `t` therefore rides on the exchange that also carries
//! the step from `t` to `t + 1`, so evaluating it costs no extra round.

pub mod bounds;
pub mod checkpoint;
pub mod gap;

use std::time::{Duration, Instant};

use crate::comm::{CommStats, Coordinator, RoundBroadcast, RoundResult, Worker};
use crate::dataio::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::localsolver::{add_in_place, LocalStepConfig, StepEnv, WorkerState};
use crate::losses::LossKind;
use crate::regularizer::ShiftedElasticNet;
use crate::rng;

pub use gap::GapValues;

/// Data, its partition and the objective being solved.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub data: &'a Dataset,
    pub partition: &'a Partition,
    pub reg: ShiftedElasticNet,
    pub loss: LossKind,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// Stop once `P − D` (unnormalized) of the solved objective is at most this.
    pub target_gap: f64,
    /// Stop once the gap of the unshifted objective is at most this.
    pub original_target: Option<f64>,
    pub max_rounds: u64,
    pub step: LocalStepConfig,
    /// Evaluate the gap every `gap_every` rounds (and always at the last one).
    pub gap_every: u64,
    /// Average iterates after this round.
    pub tail_average: Option<u64>,
    pub timeout: Duration,
    /// Added to the round index when deriving random streams, so that
    /// consecutive calls do not reuse streams.
    pub round_offset: u64,
    /// Tag of the stage objective, carried in broadcasts.
    pub stage: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            target_gap: 1e-6,
            original_target: None,
            max_rounds: 1000,
            step: LocalStepConfig::default(),
            gap_every: 1,
            tail_average: None,
            timeout: Duration::from_secs(600),
            round_offset: 0,
            stage: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_gap > 0.0) {
            return Err(Error::InvalidArgument(format!("target gap must be positive, got {}", self.target_gap)));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max rounds must be at least 1".into()));
        }
        if self.gap_every == 0 {
            return Err(Error::InvalidArgument("gap-every must be at least 1".into()));
        }
        if let Some(t0) = self.tail_average {
            if t0 >= self.max_rounds {
                return Err(Error::InvalidArgument(format!(
                    "averaging start {t0} leaves no history within {} rounds",
                    self.max_rounds
                )));
            }
        }
        self.step.validate()
    }
}

/// Dual values (example order) and the matching direction to resume from.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub alpha: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    /// Index of the synchronized state (number of global updates applied).
    pub round: u64,
    pub elapsed: Duration,
    /// Gap of the objective being solved.
    pub values: GapValues,
    /// Gap of the unshifted objective at the same point.
    pub original: GapValues,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Averaged {
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
    pub values: GapValues,
    pub count: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    /// Dual values in example order.
    pub alpha: Vec<f64>,
    pub values: GapValues,
    pub original: GapValues,
    /// Global updates applied (local steps kept).
    pub rounds: u64,
    pub converged: bool,
    pub trace: Vec<RoundRecord>,
    pub stats: CommStats,
    pub averaged: Option<Averaged>,
}

/// A worker's synchronized state as seen at an evaluated round.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerSync {
    pub worker: usize,
    pub shard: Vec<usize>,
    pub alpha: Vec<f64>,
    /// `Σ_{S_ℓ} x_i α_i`, unscaled.
    pub xa_sum: Vec<f64>,
    pub u_local: Vec<f64>,
    pub loss_sum: f64,
    pub conj_sum: f64,
}

/// What an observer sees after each evaluated round.
#[derive(Debug)]
pub struct SyncView<'a> {
    pub round: u64,
    pub u: &'a [f64],
    pub w: &'a [f64],
    pub values: GapValues,
    pub workers: &'a [WorkerSync],
}

/// `Σ_ℓ (n_ℓ/n) Δv_ℓ`, accumulated in ascending worker order.
pub fn aggregate(sizes: &[usize], deltas: &[&[f64]]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    let d = deltas.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; d];
    for (&n_ell, dv) in sizes.iter().zip(deltas) {
        let weight = n_ell as f64 / n as f64;
        for (o, &x) in out.iter_mut().zip(dv.iter()) {
            if x != 0.0 {
                *o += weight * x;
            }
        }
    }
    out
}

struct WorkerFinal {
    sync: Option<WorkerSync>,
    shard: Vec<usize>,
    alpha: Vec<f64>,
    tail_sum: Option<Vec<f64>>,
}

struct DadmWorker<'a> {
    state: WorkerState,
    data: &'a Dataset,
    reg: &'a ShiftedElasticNet,
    loss: LossKind,
    step: &'a LocalStepConfig,
    r: f64,
    n_tilde: f64,
    seed: u64,
    round_offset: u64,
    capture: bool,
    last_sync: Option<WorkerSync>,
    tail_from: Option<u64>,
    tail_sum: Option<Vec<f64>>,
}

impl Worker for DadmWorker<'_> {
    type Snapshot = WorkerFinal;

    fn id(&self) -> usize {
        self.state.worker()
    }

    fn on_round(&mut self, msg: RoundBroadcast) -> Result<RoundResult> {
        self.state.apply_sync(&msg.delta_v_tilde);
        let (mut loss_sum, mut conj_sum) = (0.0, 0.0);
        if msg.evaluate {
            let w = self.reg.grad_conj(self.state.u_sync());
            let terms = self.state.primal_terms(self.data, self.loss, &w)?;
            loss_sum = terms.loss_sum;
            conj_sum = terms.conj_sum;
            if self.capture {
                self.last_sync = Some(WorkerSync {
                    worker: self.state.worker(),
                    shard: self.state.shard().to_vec(),
                    alpha: self.state.alpha().to_vec(),
                    xa_sum: self.state.xa_sum().to_vec(),
                    u_local: self.state.u_local().to_vec(),
                    loss_sum,
                    conj_sum,
                });
            }
        }
        if self.tail_from.is_some_and(|t0| msg.round > t0) {
            let sum = self.tail_sum.get_or_insert_with(|| vec![0.0; self.state.n_ell()]);
            for (s, a) in sum.iter_mut().zip(self.state.alpha()) {
                *s += a;
            }
        }
        let (delta_v, dual_increase) = if msg.step {
            let env = StepEnv {
                data: self.data,
                reg: self.reg,
                loss: self.loss,
                cfg: self.step,
                r: self.r,
                n_tilde: self.n_tilde,
                seed: self.seed,
                round: self.round_offset + msg.round,
            };
            let res = self.state.local_step(&env)?;
            (res.delta_v, res.dual_increase_lb)
        } else {
            (vec![0.0; self.data.d()], 0.0)
        };
        Ok(RoundResult {
            worker_id: self.state.worker() as u32,
            n_ell: self.state.n_ell() as u32,
            round: msg.round,
            loss_sum,
            conj_sum,
            dual_increase,
            evaluated: msg.evaluate,
            delta_v,
        })
    }

    fn on_rollback(&mut self) {
        self.state.rollback();
    }

    fn snapshot(&self) -> WorkerFinal {
        WorkerFinal {
            sync: self.last_sync.clone(),
            shard: self.state.shard().to_vec(),
            alpha: self.state.alpha().to_vec(),
            tail_sum: self.tail_sum.clone(),
        }
    }
}

fn check_warm(problem: &Problem<'_>, warm: &WarmStart) -> Result<()> {
    let data = problem.data;
    if warm.alpha.len() != data.n() || warm.u.len() != data.d() {
        return Err(Error::InvalidArgument(format!(
            "warm start has {} duals and direction length {}, expected {} and {}",
            warm.alpha.len(),
            warm.u.len(),
            data.n(),
            data.d()
        )));
    }
    for (e, &a) in data.examples().iter().zip(&warm.alpha) {
        problem.loss.conj(a, e.label())?;
    }
    let fresh = gap::direction_from_alpha(data, &problem.reg, &warm.alpha);
    let scale = 1.0 + warm.u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let drift = fresh.iter().zip(&warm.u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if drift > 1e-9 * scale {
        return Err(Error::InvalidArgument(format!(
            "warm-start direction disagrees with its dual values by {drift:e}"
        )));
    }
    Ok(())
}

pub fn run(problem: &Problem<'_>, cfg: &RunConfig, warm: Option<&WarmStart>) -> Result<RunResult> {
    run_inner(problem, cfg, warm, None)
}

/// [`run`] that also hands every evaluated synchronized state to `observer`.
pub fn run_observed(
    problem: &Problem<'_>,
    cfg: &RunConfig,
    warm: Option<&WarmStart>,
    observer: &mut dyn FnMut(&SyncView<'_>),
) -> Result<RunResult> {
    run_inner(problem, cfg, warm, Some(observer))
}

fn run_inner(
    problem: &Problem<'_>,
    cfg: &RunConfig,
    warm: Option<&WarmStart>,
    mut observer: Option<&mut dyn FnMut(&SyncView<'_>)>,
) -> Result<RunResult> {
    cfg.validate()?;
    let data = problem.data;
    let partition = problem.partition;
    let (n, d) = (data.n(), data.d());
    if partition.total() != n {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} examples, dataset has {n}",
            partition.total()
        )));
    }
    if let Some(w) = warm {
        check_warm(problem, w)?;
    }
    let reg = &problem.reg;
    let sizes = partition.sizes();
    let n_tilde = sizes
        .iter()
        .map(|&s| s as f64 / rng::batch_size(cfg.step.sp, s) as f64)
        .fold(0.0, f64::max);
    let r = data.stats().r;
    let mut u = warm.map_or_else(|| vec![0.0; d], |w| w.u.clone());

    let mut workers = Vec::with_capacity(partition.workers());
    for (l, shard) in partition.assignments().iter().enumerate() {
        let alpha = match warm {
            Some(w) => shard.iter().map(|&i| w.alpha[i]).collect(),
            None => vec![0.0; shard.len()],
        };
        workers.push(DadmWorker {
            state: WorkerState::new(l, shard.clone(), alpha, u.clone(), data)?,
            data,
            reg,
            loss: problem.loss,
            step: &cfg.step,
            r,
            n_tilde,
            seed: cfg.seed,
            round_offset: cfg.round_offset,
            capture: observer.is_some(),
            last_sync: None,
            tail_from: cfg.tail_average,
            tail_sum: None,
        });
    }

    std::thread::scope(|scope| {
        let mut coord = Coordinator::spawn(scope, workers, cfg.timeout)?;
        let start = Instant::now();
        let mut w = reg.grad_conj(&u);
        let mut pending = vec![0.0; d];
        let mut trace = Vec::new();
        let mut last: Option<RoundRecord> = None;
        let mut converged = false;
        let mut w_tail: Option<(Vec<f64>, u64)> = None;
        let mut t = 0u64;
        loop {
            let is_final = t == cfg.max_rounds;
            let evaluate = is_final || t % cfg.gap_every == 0;
            if cfg.tail_average.is_some_and(|t0| t > t0) {
                let (sum, count) = w_tail.get_or_insert_with(|| (vec![0.0; d], 0));
                add_in_place(sum, &w);
                *count += 1;
            }
            coord.broadcast(&RoundBroadcast {
                round: t,
                stage: cfg.stage,
                kappa: reg.kappa(),
                step: !is_final,
                evaluate,
                delta_v_tilde: std::mem::take(&mut pending),
            })?;
            let results = coord.gather()?;

            if evaluate {
                let loss_sum: f64 = results.iter().map(|r| r.loss_sum).sum();
                let conj_sum: f64 = results.iter().map(|r| r.conj_sum).sum();
                let values = gap::duality_gap(reg, n, loss_sum, conj_sum, &u, &w)?;
                let original = gap::original_gap(reg, n, loss_sum, conj_sum, &u, &w)?;
                let record = RoundRecord { round: t, elapsed: start.elapsed(), values, original };
                trace.push(record);
                last = Some(record);
                if let Some(obs) = observer.as_deref_mut() {
                    let snaps = coord.snapshots()?;
                    let syncs: Vec<WorkerSync> = snaps.into_iter().filter_map(|s| s.sync).collect();
                    obs(&SyncView { round: t, u: &u, w: &w, values, workers: &syncs });
                }
                let stage_done = values.gap <= cfg.target_gap;
                let original_done = cfg.original_target.is_some_and(|eps| original.gap <= eps);
                if stage_done || original_done {
                    if !is_final {
                        coord.rollback()?;
                    }
                    converged = stage_done;
                    break;
                }
            }
            if is_final {
                break;
            }
            let global_start = Instant::now();
            let deltas: Vec<&[f64]> = results.iter().map(|r| r.delta_v.as_slice()).collect();
            let delta = aggregate(&sizes, &deltas);
            add_in_place(&mut u, &delta);
            reg.grad_conj_into(&u, &mut w);
            pending = delta;
            log::trace!("round {t}: global step {:?}", global_start.elapsed());
            t += 1;
        }

        let finals = coord.snapshots()?;
        let stats = coord.finish();
        let mut alpha = vec![0.0; n];
        for f in &finals {
            for (&i, &a) in f.shard.iter().zip(&f.alpha) {
                alpha[i] = a;
            }
        }
        let last = last.expect("the final round is always evaluated");

        let averaged = match (cfg.tail_average, w_tail) {
            (Some(_), Some((w_sum, count))) => {
                let w_bar: Vec<f64> = w_sum.iter().map(|x| x / count as f64).collect();
                let mut alpha_bar = vec![0.0; n];
                for f in &finals {
                    let sum = f.tail_sum.as_ref().ok_or_else(|| {
                        Error::ContractViolation("worker kept no averaging history".into())
                    })?;
                    for (&i, &s) in f.shard.iter().zip(sum) {
                        alpha_bar[i] = problem.loss.clip_dual(s / count as f64, data.example(i).label());
                    }
                }
                let u_bar = gap::direction_from_alpha(data, reg, &alpha_bar);
                let (_, conj_sum) = gap::sums(data, problem.loss, &alpha_bar, &w_bar)?;
                let primal = gap::primal_objective(data, reg, problem.loss, &w_bar);
                let values = GapValues::new(primal, -conj_sum + reg.dual_value(&u_bar, n as f64))?;
                Some(Averaged { w: w_bar, alpha: alpha_bar, values, count })
            }
            (Some(t0), None) => {
                return Err(Error::InvalidArgument(format!("run stopped at round {t} before averaging start {t0}")))
            }
            _ => None,
        };

        Ok(RunResult {
            w,
            u,
            alpha,
            values: last.values,
            original: last.original,
            rounds: t,
            converged,
            trace,
            stats,
            averaged,
        })
    })
}
