//! Reference computations used to check the solver: a grid maximizer, a
//! full-batch accelerated proximal-gradient solver that certifies its answer
//! with a duality gap, and a plain single-machine sequential dual coordinate
//! ascent.

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::regularizer::{soft_threshold, ShiftedElasticNet};
use crate::rng;

/// Maximum of `f` on the grid `lo, lo + step, ..., hi` and the first point
/// attaining it. For an `L`-Lipschitz `f` the true supremum exceeds the grid
/// value by at most `L·step/2`.
pub fn grid_sup<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let steps = ((hi - lo) / step).round() as u64;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..=steps {
        let x = if k == steps { hi } else { lo + k as f64 * step };
        let v = f(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}

/// Central difference `(f(x+h) − f(x−h))/(2h)`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Neumaier-compensated sum.
fn ksum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub w_star: Vec<f64>,
    pub primal_at_star: f64,
    pub certified_gap: f64,
    pub iterations: usize,
}

fn margins(data: &Dataset, w: &[f64]) -> Vec<f64> {
    data.examples().iter().map(|e| e.dot(w)).collect()
}

/// `Σφ(x_i·w) + n[(λ/2)‖w‖² + μ‖w‖₁]` with compensated sums.
pub fn primal(data: &Dataset, reg: &ShiftedElasticNet, loss: LossKind, w: &[f64]) -> f64 {
    let n = data.n() as f64;
    let losses = ksum(data.examples().iter().map(|e| loss.eval(e.dot(w), e.label())));
    let sq = ksum(w.iter().map(|x| x * x));
    let l1 = ksum(w.iter().map(|x| x.abs()));
    losses + n * (0.5 * reg.lambda() * sq + reg.mu() * l1)
}

/// `−Σφ*(−α_i) − λn f*(Σx_iα_i/(λn))` with compensated sums.
pub fn dual(data: &Dataset, reg: &ShiftedElasticNet, loss: LossKind, alpha: &[f64]) -> Result<f64> {
    let n = data.n() as f64;
    let mut conj = Vec::with_capacity(alpha.len());
    let mut acc = vec![Vec::new(); data.d()];
    for (e, &a) in data.examples().iter().zip(alpha) {
        conj.push(loss.conj(a, e.label())?);
        for (j, x) in e.iter() {
            acc[j].push(x * a);
        }
    }
    let scale = reg.lambda() * n;
    let v: Vec<f64> = acc.into_iter().map(|c| ksum(c) / scale).collect();
    Ok(-ksum(conj) - scale * reg.conj_value(&v))
}

/// Dual point `α_i = −φ′(x_i·w)` and the gap it certifies for `w`.
pub fn certify(data: &Dataset, reg: &ShiftedElasticNet, loss: LossKind, w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let alpha: Vec<f64> = data
        .examples()
        .iter()
        .map(|e| loss.clip_dual(-loss.deriv(e.dot(w), e.label()), e.label()))
        .collect();
    let gap = primal(data, reg, loss, w) - dual(data, reg, loss, &alpha)?;
    Ok((alpha, gap))
}

/// Largest eigenvalue of `XᵀX` by power iteration (a lower estimate; the
/// solver backtracks if it is too small).
fn gram_norm(data: &Dataset) -> f64 {
    let d = data.d();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut est = 0.0;
    for _ in 0..50 {
        let xv = margins(data, &v);
        let mut next = vec![0.0; d];
        for (e, &m) in data.examples().iter().zip(&xv) {
            e.axpy(m, &mut next);
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    est
}

/// Accelerated proximal gradient (FISTA with backtracking and adaptive
/// restart) on the unshifted primal, stopped when the certificate built from
/// `α_i = −φ′(x_i·w)` proves a gap of at most `tol`.
pub fn prox_grad_reference(
    data: &Dataset,
    reg: &ShiftedElasticNet,
    loss: LossKind,
    tol: f64,
    max_iter: usize,
) -> Result<Certificate> {
    if !loss.is_smooth() {
        return Err(Error::InvalidArgument(format!("{loss} is not smooth")));
    }
    if data.n() * data.d() > 10_000_000 {
        return Err(Error::InvalidArgument("problem too large for the reference solver".into()));
    }
    let reg = reg.base();
    let n = data.n() as f64;
    let d = data.d();
    let smooth_part = |w: &[f64]| -> f64 {
        let losses = ksum(data.examples().iter().map(|e| loss.eval(e.dot(w), e.label())));
        losses + 0.5 * reg.lambda() * n * ksum(w.iter().map(|x| x * x))
    };
    let gradient = |w: &[f64]| -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|x| reg.lambda() * n * x).collect();
        for e in data.examples() {
            let dphi = loss.deriv(e.dot(w), e.label());
            if dphi != 0.0 {
                e.axpy(dphi, &mut g);
            }
        }
        g
    };
    let mut lip = (loss.info().smoothness * gram_norm(data) + reg.lambda() * n).max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; d];
    let mut z = w.clone();
    let mut theta = 1.0f64;
    let mut last_obj = primal(data, &reg, loss, &w);
    for it in 1..=max_iter {
        let fz = smooth_part(&z);
        let gz = gradient(&z);
        let next = loop {
            let step = 1.0 / lip;
            let cand: Vec<f64> = z
                .iter()
                .zip(&gz)
                .map(|(&zj, &gj)| soft_threshold(zj - step * gj, step * n * reg.mu()))
                .collect();
            let diff: Vec<f64> = cand.iter().zip(&z).map(|(a, b)| a - b).collect();
            let lin = ksum(diff.iter().zip(&gz).map(|(a, b)| a * b));
            let quad = 0.5 * lip * ksum(diff.iter().map(|x| x * x));
            if smooth_part(&cand) <= fz + lin + quad + 1e-12 * fz.abs().max(1.0) {
                break cand;
            }
            lip *= 2.0;
        };
        let obj = primal(data, &reg, loss, &next);
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        if obj > last_obj {
            // Restart momentum from the better point.
            theta = 1.0;
            z = w.clone();
            continue;
        }
        let beta = (theta - 1.0) / theta_next;
        z = next.iter().zip(&w).map(|(a, b)| a + beta * (a - b)).collect();
        w = next;
        theta = theta_next;
        last_obj = obj;
        if it % 10 == 0 || it == max_iter {
            let (_, gap) = certify(data, &reg, loss, &w)?;
            if gap <= tol {
                return Ok(Certificate { primal_at_star: obj, certified_gap: gap, w_star: w, iterations: it });
            }
        }
    }
    let (_, gap) = certify(data, &reg, loss, &w)?;
    if gap <= tol {
        let primal_at_star = primal(data, &reg, loss, &w);
        return Ok(Certificate { w_star: w, primal_at_star, certified_gap: gap, iterations: max_iter });
    }
    Err(Error::Numeric(format!(
        "reference solver reached {max_iter} iterations with certified gap {gap:e} > {tol:e}"
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdcaTrajectory {
    /// Dual values (example order) after each epoch; entry 0 is the start.
    pub alphas: Vec<Vec<f64>>,
    pub ws: Vec<Vec<f64>>,
    /// `(primal, dual)` after each epoch.
    pub objectives: Vec<(f64, f64)>,
}

/// Sequential dual coordinate ascent on the single-machine dual.
///
/// Epoch `e` visits the examples in the order of a full random permutation
/// of positions drawn from stream `(seed, 0, e)`, mapped through `order`
/// (position → example id). With `order` equal to the single shard of a
/// one-worker partition this visits examples exactly as the distributed
/// solver's only worker does with `sp = 1`.
pub fn single_machine_sdca(
    data: &Dataset,
    reg: &ShiftedElasticNet,
    loss: LossKind,
    epochs: usize,
    seed: u64,
    order: &[usize],
) -> Result<SdcaTrajectory> {
    let n = data.n();
    if order.len() != n {
        return Err(Error::InvalidArgument("order must list every example once".into()));
    }
    let reg = reg.base();
    let lambda_n = reg.lambda() * n as f64;
    let thr = reg.threshold();
    let mut alpha = vec![0.0; n];
    let mut u = vec![0.0; data.d()];
    let mut traj = SdcaTrajectory { alphas: Vec::new(), ws: Vec::new(), objectives: Vec::new() };
    let record = |alpha: &[f64], u: &[f64], traj: &mut SdcaTrajectory| -> Result<()> {
        let w = reg.grad_conj(u);
        traj.objectives.push((primal(data, &reg, loss, &w), dual(data, &reg, loss, alpha)?));
        traj.alphas.push(alpha.to_vec());
        traj.ws.push(w);
        Ok(())
    };
    record(&alpha, &u, &mut traj)?;
    for epoch in 0..epochs {
        let mut stream = rng::stream(seed, 0, epoch as u64);
        for pos in rng::sample_batch(&mut stream, n, n) {
            let i = order[pos];
            let e = data.example(i);
            let a: f64 = e.iter().map(|(j, x)| x * soft_threshold(u[j], thr)).sum();
            let new = loss.maximize_coordinate(alpha[i], a, e.label(), e.squared_norm() / lambda_n);
            let delta = new - alpha[i];
            if delta == 0.0 {
                continue;
            }
            alpha[i] = new;
            for (j, x) in e.iter() {
                u[j] += x * delta / lambda_n;
            }
        }
        record(&alpha, &u, &mut traj)?;
    }
    Ok(traj)
}
