//! Iteration-count calculators for the convergence guarantees.

use crate::error::{Error, Result};

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")))
    }
}

/// Rounds sufficient for a smooth loss to reach gap `ε` with the
/// conservative step: `χ ln(χ ε_D⁰/ε)` with `χ = R/(γλ) + ñ`.
pub fn smooth_rounds(r: f64, gamma: f64, lambda: f64, n_tilde: f64, dual_subopt_over_eps: f64) -> Result<u64> {
    positive("R", r)?;
    positive("gamma", gamma)?;
    positive("lambda", lambda)?;
    positive("n_tilde", n_tilde)?;
    positive("initial sub-optimality ratio", dual_subopt_over_eps)?;
    let chi = r / (gamma * lambda) + n_tilde;
    Ok((chi * (chi * dual_subopt_over_eps).ln()).max(0.0).ceil() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LipschitzBound {
    pub t0: u64,
    /// Start of the averaging window.
    pub big_t0: u64,
    pub total: u64,
}

/// `t₀ = max(0, ⌈ñ ln(2λñ ε_D⁰/(nG))⌉)`.
pub fn lipschitz_t0(n_tilde: f64, g: f64, lambda: f64, eps_d0: f64, n: f64) -> Result<u64> {
    positive("n_tilde", n_tilde)?;
    positive("G", g)?;
    positive("lambda", lambda)?;
    positive("n", n)?;
    if eps_d0 <= 0.0 {
        return Ok(0);
    }
    Ok((n_tilde * (2.0 * lambda * n_tilde * eps_d0 / (n * g)).ln()).ceil().max(0.0) as u64)
}

/// Rounds sufficient for a Lipschitz loss to reach normalized gap `ε` with
/// averaging: `T₀ = max(t₀, 4G/(λε) − 2ñ + t₀)`, `T = T₀ + max(ñ, G/(λε))`,
/// where `G = 4RL²`.
pub fn lipschitz_rounds(n_tilde: f64, g: f64, lambda: f64, eps: f64, t0: u64) -> Result<LipschitzBound> {
    positive("n_tilde", n_tilde)?;
    positive("G", g)?;
    positive("lambda", lambda)?;
    positive("epsilon", eps)?;
    let t0f = t0 as f64;
    let big_t0 = t0f.max(4.0 * g / (lambda * eps) - 2.0 * n_tilde + t0f).ceil();
    let total = (big_t0 + n_tilde.max(g / (lambda * eps))).ceil();
    Ok(LipschitzBound { t0, big_t0: big_t0 as u64, total: total as u64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccelBound {
    pub outer: u64,
    pub inner: u64,
}

fn accel(lambda: f64, kappa: f64, log_ratio: f64, chi: f64) -> AccelBound {
    let e = (lambda + 2.0 * kappa) / lambda;
    let outer = 1.0 + (4.0 * e).sqrt() * (((2.0 * lambda + 2.0 * kappa) / lambda).ln() + log_ratio);
    let inner = chi * (chi.ln() + 7.0 + 2.5 * e.ln());
    AccelBound { outer: outer.max(1.0).ceil() as u64, inner: inner.max(1.0).ceil() as u64 }
}

/// Stage and inner-round counts for the accelerated method on a smooth loss.
pub fn accel_smooth(r: f64, gamma: f64, lambda: f64, kappa: f64, n_tilde: f64, gap0_over_eps: f64) -> Result<AccelBound> {
    positive("R", r)?;
    positive("gamma", gamma)?;
    positive("lambda", lambda)?;
    positive("initial gap ratio", gap0_over_eps)?;
    if kappa < 0.0 {
        return Err(Error::InvalidArgument(format!("kappa must be non-negative, got {kappa}")));
    }
    let chi = r / (gamma * (lambda + kappa)) + n_tilde;
    Ok(accel(lambda, kappa, gap0_over_eps.ln(), chi))
}

/// Same for a Lipschitz loss solved through smoothing with width `ε/L²`;
/// `eps` is the normalized target.
pub fn accel_lipschitz(r: f64, l: f64, lambda: f64, kappa: f64, n_tilde: f64, eps: f64, gap0: f64) -> Result<AccelBound> {
    positive("R", r)?;
    positive("L", l)?;
    positive("lambda", lambda)?;
    positive("epsilon", eps)?;
    positive("initial gap", gap0)?;
    if kappa < 0.0 {
        return Err(Error::InvalidArgument(format!("kappa must be non-negative, got {kappa}")));
    }
    let chi = l * l * r / (eps * (lambda + kappa)) + n_tilde;
    Ok(accel(lambda, kappa, (2.0 * gap0 / eps).ln(), chi))
}
