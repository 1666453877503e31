//! Elastic-net regularizer `λg(w) = (λ/2)‖w‖² + μ‖w‖₁`, optionally shifted by
//! a proximal term `(κ/2)‖w − y‖²` around a center `y`.
//!
//! All dual-side quantities are expressed through the normalized function
//! `f(w) = ½‖w‖² + (μ/λ̃)‖w‖₁` with `λ̃ = λ + κ`, which is 1-strongly convex.
//! The linear part `−κ w·y` of the shift lives in the dual direction, not here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedElasticNet {
    lambda: f64,
    mu: f64,
    kappa: f64,
    /// Empty when `kappa == 0`.
    center: Vec<f64>,
}

pub fn soft_threshold(x: f64, thr: f64) -> f64 {
    if x > thr {
        x - thr
    } else if x < -thr {
        x + thr
    } else {
        0.0
    }
}

impl ShiftedElasticNet {
    /// The unshifted regularizer.
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be non-negative, got {mu}")));
        }
        Ok(Self { lambda, mu, kappa: 0.0, center: Vec::new() })
    }

    /// Adds `(κ/2)‖w − y‖²` to the base regularizer (any existing shift is replaced).
    pub fn shift(&self, kappa: f64, center: &[f64]) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa must be non-negative, got {kappa}")));
        }
        if kappa == 0.0 {
            return Ok(Self { kappa: 0.0, center: Vec::new(), ..self.clone() });
        }
        Ok(Self { kappa, center: center.to_vec(), ..self.clone() })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `λ̃ = λ + κ`.
    pub fn lambda_eff(&self) -> f64 {
        self.lambda + self.kappa
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// ℓ1 threshold of `f`, `μ/λ̃`.
    pub fn threshold(&self) -> f64 {
        self.mu / self.lambda_eff()
    }

    /// ∇f*(u): coordinate-wise soft threshold.
    pub fn grad_conj(&self, u: &[f64]) -> Vec<f64> {
        let thr = self.threshold();
        u.iter().map(|&x| soft_threshold(x, thr)).collect()
    }

    pub fn grad_conj_into(&self, u: &[f64], w: &mut [f64]) {
        let thr = self.threshold();
        for (wj, &uj) in w.iter_mut().zip(u) {
            *wj = soft_threshold(uj, thr);
        }
    }

    /// f*(u) = Σ ½ max(|u_j| − μ/λ̃, 0)².
    pub fn conj_value(&self, u: &[f64]) -> f64 {
        let thr = self.threshold();
        u.iter()
            .map(|&x| {
                let r = (x.abs() - thr).max(0.0);
                0.5 * r * r
            })
            .sum()
    }

    /// f(w) = ½‖w‖² + (μ/λ̃)‖w‖₁.
    pub fn f_value(&self, w: &[f64]) -> f64 {
        let thr = self.threshold();
        w.iter().map(|&x| 0.5 * x * x + thr * x.abs()).sum()
    }

    /// Regularization part of the stage primal for `n` examples:
    /// `n[(λ/2)‖w‖² + μ‖w‖₁] + (κn/2)‖w − y‖²`.
    pub fn primal_value(&self, w: &[f64], n: f64) -> f64 {
        let (sq, l1) = w.iter().fold((0.0, 0.0), |(s, a), &x| (s + x * x, a + x.abs()));
        let base = n * (0.5 * self.lambda * sq + self.mu * l1);
        if self.kappa == 0.0 {
            return base;
        }
        let dist: f64 = w.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        base + 0.5 * self.kappa * n * dist
    }

    /// Constant `(κn/2)‖y‖²` shared by the stage primal and stage dual.
    pub fn stage_constant(&self, n: f64) -> f64 {
        if self.kappa == 0.0 {
            return 0.0;
        }
        0.5 * self.kappa * n * self.center.iter().map(|c| c * c).sum::<f64>()
    }

    /// Regularizer side of the dual: `−λ̃n f*(u) + (κn/2)‖y‖²`.
    pub fn dual_value(&self, u: &[f64], n: f64) -> f64 {
        -self.lambda_eff() * n * self.conj_value(u) + self.stage_constant(n)
    }

    /// The unshifted base regularizer.
    pub fn base(&self) -> Self {
        Self { kappa: 0.0, center: Vec::new(), ..self.clone() }
    }
}
