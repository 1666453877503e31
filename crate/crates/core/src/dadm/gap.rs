//! Primal/dual objective values, the consensus multipliers β_ℓ and the
//! per-worker decomposition of the duality gap.

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::regularizer::ShiftedElasticNet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapValues {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl GapValues {
    pub fn new(primal: f64, dual: f64) -> Result<Self> {
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::Numeric(format!(
                "objective values not finite (primal {primal}, dual {dual}); lambda may be too small for the data scale"
            )));
        }
        Ok(Self { primal, dual, gap: primal - dual })
    }
}

/// Gap of the (possibly shifted) objective from the aggregated sums.
///
/// `u` is the synchronized direction, `w = ∇f*(u)`.
pub fn duality_gap(reg: &ShiftedElasticNet, n: usize, loss_sum: f64, conj_sum: f64, u: &[f64], w: &[f64]) -> Result<GapValues> {
    let n = n as f64;
    GapValues::new(loss_sum + reg.primal_value(w, n), -conj_sum + reg.dual_value(u, n))
}

/// `Σ x_i α_i / (λn)` of the unshifted problem, recovered from a stage direction.
pub fn unshifted_direction(reg: &ShiftedElasticNet, u: &[f64]) -> Vec<f64> {
    if reg.kappa() == 0.0 {
        return u.to_vec();
    }
    let (le, k, l) = (reg.lambda_eff(), reg.kappa(), reg.lambda());
    u.iter().zip(reg.center()).map(|(&uj, &yj)| (le * uj - k * yj) / l).collect()
}

/// Gap of the unshifted problem at the stage iterate `w`. Identical to
/// [`duality_gap`] when the regularizer carries no shift.
pub fn original_gap(reg: &ShiftedElasticNet, n: usize, loss_sum: f64, conj_sum: f64, u: &[f64], w: &[f64]) -> Result<GapValues> {
    if reg.kappa() == 0.0 {
        return duality_gap(reg, n, loss_sum, conj_sum, u, w);
    }
    let base = reg.base();
    let v = unshifted_direction(reg, u);
    let nf = n as f64;
    GapValues::new(loss_sum + base.primal_value(w, nf), -conj_sum + base.dual_value(&v, nf))
}

/// β_ℓ = λ̃n_ℓ(v_ℓ − v) with v_ℓ = Σ_{S_ℓ} x_i α_i/(λ̃n_ℓ) and v the global
/// counterpart. `xa_sums[ℓ]` holds the unscaled shard sums.
pub fn compute_beta(lambda_eff: f64, sizes: &[usize], xa_sums: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n: usize = sizes.iter().sum();
    let d = xa_sums.first().map_or(0, Vec::len);
    let mut v = vec![0.0; d];
    for xa in xa_sums {
        for (vj, x) in v.iter_mut().zip(xa) {
            *vj += x;
        }
    }
    let scale = lambda_eff * n as f64;
    for vj in &mut v {
        *vj /= scale;
    }
    sizes
        .iter()
        .zip(xa_sums)
        .map(|(&n_ell, xa)| {
            let s = lambda_eff * n_ell as f64;
            xa.iter().zip(&v).map(|(x, vj)| s * (x / s - vj)).collect()
        })
        .collect()
}

/// One worker's ingredients for its share of the gap.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalGapInput<'a> {
    pub n_ell: usize,
    pub loss_sum: f64,
    pub conj_sum: f64,
    pub xa_sum: &'a [f64],
    pub beta: &'a [f64],
}

/// `(P̃_ℓ, D̃_ℓ)` at the consensus point `w`:
///
/// ```text
/// P̃_ℓ = Σ_{S_ℓ} φ_i(x_i·w) + n_ℓ[(λ/2)‖w‖² + μ‖w‖₁] + β_ℓ·w + (κn_ℓ/2)‖w − y‖²
/// D̃_ℓ = −Σ_{S_ℓ} φ*(−α_i) − λ̃n_ℓ f*(ũ_ℓ) + (κn_ℓ/2)‖y‖²
/// ũ_ℓ = (Σ_{S_ℓ} x_i α_i − β_ℓ + κn_ℓ y)/(λ̃n_ℓ)
/// ```
pub fn local_gap(reg: &ShiftedElasticNet, input: &LocalGapInput<'_>, w: &[f64]) -> Result<GapValues> {
    let n_ell = input.n_ell as f64;
    let beta_w: f64 = input.beta.iter().zip(w).map(|(b, x)| b * x).sum();
    let primal = input.loss_sum + reg.primal_value(w, n_ell) + beta_w;
    let scale = reg.lambda_eff() * n_ell;
    let kn = reg.kappa() * n_ell;
    let u: Vec<f64> = (0..w.len())
        .map(|j| {
            let y = if reg.kappa() == 0.0 { 0.0 } else { reg.center()[j] };
            (input.xa_sum[j] - input.beta[j] + kn * y) / scale
        })
        .collect();
    GapValues::new(primal, -input.conj_sum + reg.dual_value(&u, n_ell))
}

/// Objective values recomputed from scratch for a full dual vector (example
/// order). Returns the direction, the primal point and the gap.
pub fn evaluate(data: &Dataset, reg: &ShiftedElasticNet, loss: LossKind, alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>, GapValues)> {
    let n = data.n();
    let u = direction_from_alpha(data, reg, alpha);
    let w = reg.grad_conj(&u);
    let (loss_sum, conj_sum) = sums(data, loss, alpha, &w)?;
    let gap = duality_gap(reg, n, loss_sum, conj_sum, &u, &w)?;
    Ok((u, w, gap))
}

/// `(Σ x_i α_i + κn y)/(λ̃n)`.
pub fn direction_from_alpha(data: &Dataset, reg: &ShiftedElasticNet, alpha: &[f64]) -> Vec<f64> {
    let n = data.n() as f64;
    let mut acc = vec![0.0; data.d()];
    for (e, &a) in data.examples().iter().zip(alpha) {
        if a != 0.0 {
            e.axpy(a, &mut acc);
        }
    }
    let scale = reg.lambda_eff() * n;
    let kn = reg.kappa() * n;
    for (j, x) in acc.iter_mut().enumerate() {
        let y = if reg.kappa() == 0.0 { 0.0 } else { reg.center()[j] };
        *x = (*x + kn * y) / scale;
    }
    acc
}

/// `(Σ φ_i(x_i·w), Σ φ*(−α_i))` over the whole dataset.
pub fn sums(data: &Dataset, loss: LossKind, alpha: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut conj_sum = 0.0;
    for (e, &a) in data.examples().iter().zip(alpha) {
        loss_sum += loss.eval(e.dot(w), e.label());
        conj_sum += loss.conj(a, e.label())?;
    }
    Ok((loss_sum, conj_sum))
}

/// Primal objective `Σφ_i(x_i·w) + n[(λ/2)‖w‖² + μ‖w‖₁] (+ shift)`.
pub fn primal_objective(data: &Dataset, reg: &ShiftedElasticNet, loss: LossKind, w: &[f64]) -> f64 {
    let loss_sum: f64 = data.examples().iter().map(|e| loss.eval(e.dot(w), e.label())).sum();
    loss_sum + reg.primal_value(w, data.n() as f64)
}

/// Global step for a non-zero secondary regularizer `h`. That case needs an
/// iterative inner solver which is not provided; only `h = 0` (where the
/// synchronized direction is the plain weighted average) is supported.
pub fn global_step_nonzero_h(_v: &[f64]) -> Result<Vec<f64>> {
    Err(Error::InvalidArgument("only h = 0 is supported in the global step".into()))
}
