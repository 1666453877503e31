//! One worker's share of a round: mini-batch dual ascent on its shard.
//!
//! The worker keeps its dual values and the running sum `Σ x_i α_i` over the
//! shard. Its local dual direction starts each round at the synchronized
//! global direction and absorbs every coordinate change immediately
//! (Gauss-Seidel within the mini-batch).

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::regularizer::{soft_threshold, ShiftedElasticNet};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    /// Exact 1D maximization, one coordinate after another.
    #[default]
    Exact,
    /// Fixed fraction `s_ℓ = γλ̃n_ℓ/(γλ̃n_ℓ + M_ℓR)` toward the negative gradient.
    ConservativeSmooth,
    /// Fixed fraction `q·n_ℓ/M_ℓ` toward the negative gradient (Lipschitz losses).
    ConservativeLipschitz,
}

impl std::str::FromStr for StepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(StepMode::Exact),
            "conservative-smooth" => Ok(StepMode::ConservativeSmooth),
            "conservative-lipschitz" => Ok(StepMode::ConservativeLipschitz),
            other => Err(Error::InvalidArgument(format!("unknown step mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalStepConfig {
    /// Sampling fraction `M_ℓ/n_ℓ`.
    pub sp: f64,
    pub mode: StepMode,
    /// Passes over the sampled mini-batch per round (exact mode).
    pub passes: usize,
    /// Replaces the computed conservative-smooth fraction.
    pub s_override: Option<f64>,
    /// Replaces the conservative-Lipschitz `q` schedule with a constant.
    pub q_override: Option<f64>,
}

impl Default for LocalStepConfig {
    fn default() -> Self {
        Self { sp: 1.0, mode: StepMode::Exact, passes: 1, s_override: None, q_override: None }
    }
}

impl LocalStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sp > 0.0 && self.sp <= 1.0) {
            return Err(Error::InvalidArgument(format!("sp {} not in (0, 1]", self.sp)));
        }
        if self.passes == 0 {
            return Err(Error::InvalidArgument("local passes must be at least 1".into()));
        }
        if let Some(s) = self.s_override {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidArgument(format!("step fraction {s} not in [0, 1]")));
            }
        }
        if let Some(q) = self.q_override {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(Error::InvalidArgument(format!("q {q} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Everything a local step needs besides the worker's own state.
#[derive(Clone, Copy, Debug)]
pub struct StepEnv<'a> {
    pub data: &'a Dataset,
    pub reg: &'a ShiftedElasticNet,
    pub loss: LossKind,
    pub cfg: &'a LocalStepConfig,
    /// Largest squared example norm over the whole dataset.
    pub r: f64,
    /// `max_ℓ n_ℓ/M_ℓ` over all workers.
    pub n_tilde: f64,
    pub seed: u64,
    /// Round index used for the random stream and step schedules.
    pub round: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalResult {
    /// `Σ_{i∈Q} x_i Δα_i / (λ̃ n_ℓ)`.
    pub delta_v: Vec<f64>,
    /// Increase of the local dual objective produced by the step.
    pub dual_increase_lb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimalTerms {
    pub loss_sum: f64,
    pub conj_sum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    worker: usize,
    shard: Vec<usize>,
    alpha: Vec<f64>,
    /// `Σ_{i∈S_ℓ} x_i α_i`, unscaled.
    xa_sum: Vec<f64>,
    u_sync: Vec<f64>,
    u_local: Vec<f64>,
    synced: bool,
    undo: Option<(Vec<(usize, f64)>, Vec<f64>)>,
}

impl WorkerState {
    /// `alpha` holds the dual values of the shard in shard order; `u` is the
    /// current synchronized direction.
    pub fn new(worker: usize, shard: Vec<usize>, alpha: Vec<f64>, u: Vec<f64>, data: &Dataset) -> Result<Self> {
        if alpha.len() != shard.len() {
            return Err(Error::InvalidArgument(format!(
                "worker {worker}: {} dual values for {} examples",
                alpha.len(),
                shard.len()
            )));
        }
        if u.len() != data.d() {
            return Err(Error::InvalidArgument(format!("direction has length {}, expected {}", u.len(), data.d())));
        }
        let mut state = Self {
            worker,
            shard,
            alpha,
            xa_sum: Vec::new(),
            u_local: u.clone(),
            u_sync: u,
            synced: true,
            undo: None,
        };
        state.xa_sum = state.recompute_xa_sum(data);
        Ok(state)
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn shard(&self) -> &[usize] {
        &self.shard
    }

    pub fn n_ell(&self) -> usize {
        self.shard.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn xa_sum(&self) -> &[f64] {
        &self.xa_sum
    }

    pub fn u_sync(&self) -> &[f64] {
        &self.u_sync
    }

    pub fn u_local(&self) -> &[f64] {
        &self.u_local
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    /// `Σ x_i α_i / (λ̃ n_ℓ)`.
    pub fn v_local_raw(&self, lambda_eff: f64) -> Vec<f64> {
        let scale = lambda_eff * self.n_ell() as f64;
        self.xa_sum.iter().map(|x| x / scale).collect()
    }

    pub fn recompute_xa_sum(&self, data: &Dataset) -> Vec<f64> {
        let mut acc = vec![0.0; data.d()];
        for (&i, &a) in self.shard.iter().zip(&self.alpha) {
            if a != 0.0 {
                data.example(i).axpy(a, &mut acc);
            }
        }
        acc
    }

    /// Applies the broadcast change of the global direction and makes the
    /// local direction equal to it.
    pub fn apply_sync(&mut self, delta: &[f64]) {
        add_in_place(&mut self.u_sync, delta);
        self.u_local.copy_from_slice(&self.u_sync);
        self.synced = true;
        self.undo = None;
    }

    /// Reverts the last local step (the coordinator decided to stop at the
    /// state that step started from).
    pub fn rollback(&mut self) {
        if let Some((changes, xa)) = self.undo.take() {
            for (pos, old) in changes.into_iter().rev() {
                self.alpha[pos] = old;
            }
            self.xa_sum = xa;
        }
        self.u_local.copy_from_slice(&self.u_sync);
        self.synced = true;
    }

    /// Loss and conjugate sums over the shard at the primal point `w`.
    pub fn primal_terms(&self, data: &Dataset, loss: LossKind, w: &[f64]) -> Result<PrimalTerms> {
        let mut loss_sum = 0.0;
        let mut conj_sum = 0.0;
        for (&i, &a) in self.shard.iter().zip(&self.alpha) {
            let e = data.example(i);
            loss_sum += loss.eval(e.dot(w), e.label());
            conj_sum += loss.conj(a, e.label())?;
        }
        Ok(PrimalTerms { loss_sum, conj_sum })
    }

    /// Local dual `−Σφ*(−α_i) − λ̃n_ℓ f*(u_local) + (κn_ℓ/2)‖y‖²`.
    pub fn local_dual_value(&self, data: &Dataset, reg: &ShiftedElasticNet, loss: LossKind) -> Result<f64> {
        let mut conj_sum = 0.0;
        for (&i, &a) in self.shard.iter().zip(&self.alpha) {
            conj_sum += loss.conj(a, data.example(i).label())?;
        }
        Ok(-conj_sum + reg.dual_value(&self.u_local, self.n_ell() as f64))
    }

    /// One round of local dual ascent. Requires a preceding sync.
    pub fn local_step(&mut self, env: &StepEnv<'_>) -> Result<LocalResult> {
        if !self.synced {
            return Err(Error::ContractViolation(format!(
                "worker {} stepped twice without a sync",
                self.worker
            )));
        }
        self.synced = false;
        let n_ell = self.n_ell();
        let m_ell = rng::batch_size(env.cfg.sp, n_ell);
        let mut stream = rng::stream(env.seed, self.worker as u64, env.round);
        let batch = rng::sample_batch(&mut stream, n_ell, m_ell);

        let lambda_n = env.reg.lambda_eff() * n_ell as f64;
        let inv = 1.0 / lambda_n;
        let thr = env.reg.threshold();
        let before = self.f_conj_term(env.reg, lambda_n);
        let mut delta_v = vec![0.0; self.u_local.len()];
        let mut changes = Vec::with_capacity(batch.len() * env.cfg.passes);
        let saved_xa = self.xa_sum.clone();
        let mut conj_change = 0.0;

        match env.cfg.mode {
            StepMode::Exact => {
                for _ in 0..env.cfg.passes {
                    for &pos in &batch {
                        let e = env.data.example(self.shard[pos]);
                        let old = self.alpha[pos];
                        let a: f64 = e.iter().map(|(j, x)| x * soft_threshold(self.u_local[j], thr)).sum();
                        let s = e.squared_norm() * inv;
                        let new = env.loss.maximize_coordinate(old, a, e.label(), s);
                        let d = new - old;
                        if d == 0.0 {
                            continue;
                        }
                        conj_change += env.loss.conj(new, e.label())? - env.loss.conj(old, e.label())?;
                        changes.push((pos, old));
                        self.alpha[pos] = new;
                        for (j, x) in e.iter() {
                            let step = x * d;
                            self.xa_sum[j] += step;
                            self.u_local[j] += step * inv;
                            delta_v[j] += step * inv;
                        }
                    }
                }
            }
            StepMode::ConservativeSmooth | StepMode::ConservativeLipschitz => {
                let frac = self.conservative_fraction(env, m_ell);
                let w: Vec<f64> = self.u_sync.iter().map(|&u| soft_threshold(u, thr)).collect();
                let mut targets = Vec::with_capacity(batch.len());
                for &pos in &batch {
                    let e = env.data.example(self.shard[pos]);
                    let u_i = -env.loss.deriv(e.dot(&w), e.label());
                    let old = self.alpha[pos];
                    targets.push((pos, env.loss.clip_dual(old + frac * (u_i - old), e.label())));
                }
                for (pos, new) in targets {
                    let e = env.data.example(self.shard[pos]);
                    let old = self.alpha[pos];
                    let d = new - old;
                    if d == 0.0 {
                        continue;
                    }
                    conj_change += env.loss.conj(new, e.label())? - env.loss.conj(old, e.label())?;
                    changes.push((pos, old));
                    self.alpha[pos] = new;
                    for (j, x) in e.iter() {
                        let step = x * d;
                        self.xa_sum[j] += step;
                        self.u_local[j] += step * inv;
                        delta_v[j] += step * inv;
                    }
                }
            }
        }

        debug_assert!(self.xa_drift(env.data) <= 1e-9 * (1.0 + max_abs(&self.xa_sum)));
        let after = self.f_conj_term(env.reg, lambda_n);
        self.undo = Some((changes, saved_xa));
        Ok(LocalResult { delta_v, dual_increase_lb: -conj_change - (after - before) })
    }

    /// Step fraction of the conservative modes.
    pub fn conservative_fraction(&self, env: &StepEnv<'_>, m_ell: usize) -> f64 {
        let n_ell = self.n_ell() as f64;
        let m_ell = m_ell as f64;
        match env.cfg.mode {
            StepMode::ConservativeLipschitz => {
                let q = env.cfg.q_override.unwrap_or_else(|| lipschitz_q(env.n_tilde, env.round));
                (q * n_ell / m_ell).min(1.0)
            }
            _ => env.cfg.s_override.unwrap_or_else(|| {
                smooth_fraction(env.loss.gamma(), env.reg.lambda_eff(), n_ell, m_ell, env.r)
            }),
        }
    }

    fn f_conj_term(&self, reg: &ShiftedElasticNet, lambda_n: f64) -> f64 {
        lambda_n * reg.conj_value(&self.u_local)
    }

    fn xa_drift(&self, data: &Dataset) -> f64 {
        let fresh = self.recompute_xa_sum(data);
        fresh.iter().zip(&self.xa_sum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `γλ̃n_ℓ / (γλ̃n_ℓ + M_ℓR)`.
pub fn smooth_fraction(gamma: f64, lambda_eff: f64, n_ell: f64, m_ell: f64, r: f64) -> f64 {
    let num = gamma * lambda_eff * n_ell;
    if num + m_ell * r == 0.0 {
        return 1.0;
    }
    num / (num + m_ell * r)
}

/// Default `q` schedule of the conservative Lipschitz mode:
/// `min(1/ñ, 2/(2ñ + t))`.
pub fn lipschitz_q(n_tilde: f64, round: u64) -> f64 {
    (1.0 / n_tilde).min(2.0 / (2.0 * n_tilde + round as f64))
}

/// `dst += delta`, skipping exact zeros so an all-zero delta leaves `dst`
/// bitwise unchanged. Coordinator and workers share this so their copies of
/// the synchronized direction stay identical.
pub fn add_in_place(dst: &mut [f64], delta: &[f64]) {
    for (d, &x) in dst.iter_mut().zip(delta) {
        if x != 0.0 {
            *d += x;
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
