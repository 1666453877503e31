//! Per-example losses φ_i(a) for binary labels y ∈ {−1, +1}.
//!
//! The hinge, smooth hinge and smoothed hinge share one formula indexed by
//! the smoothing width γ (γ = 0 is the hinge, γ = 1 the smooth hinge):
//!
//! ```text
//! z = y·a
//! φ(a) = 0                     z ≥ 1
//!        1 − z − γ/2           z ≤ 1 − γ
//!        (1 − z)² / (2γ)       otherwise
//! ```
//!
//! Dual values are stored with the sign convention of the dual objective
//! `−φ*(−α)`, so the effective domain of every loss here is `y·α ∈ [0, 1]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "gamma", rename_all = "kebab-case")]
pub enum LossKind {
    /// Hinge smoothed with width 1.
    SmoothHinge,
    /// `log(1 + exp(−y·a))`.
    Logistic,
    /// `max(0, 1 − y·a)`.
    Hinge,
    /// Hinge smoothed with an arbitrary width γ > 0.
    SmoothedHinge(f64),
}

/// Smoothness and Lipschitz metadata.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossInfo {
    /// `1/γ` where the loss gradient is (1/γ)-Lipschitz; 0 for non-smooth losses.
    pub smoothness: f64,
    pub lipschitz: f64,
}

/// Newton/bisection stopping rule for the logistic coordinate solve.
const LOGISTIC_TOL: f64 = 1e-12;
const LOGISTIC_MAX_ITERS: usize = 80;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn xlogx(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

impl LossKind {
    /// Smoothing width of the hinge family; `None` for the logistic loss.
    fn hinge_width(self) -> Option<f64> {
        match self {
            LossKind::SmoothHinge => Some(1.0),
            LossKind::Hinge => Some(0.0),
            LossKind::SmoothedHinge(g) => Some(g),
            LossKind::Logistic => None,
        }
    }

    pub fn info(self) -> LossInfo {
        let smoothness = match self {
            LossKind::SmoothHinge => 1.0,
            LossKind::Logistic => 0.25,
            LossKind::Hinge => 0.0,
            LossKind::SmoothedHinge(g) => 1.0 / g,
        };
        LossInfo { smoothness, lipschitz: 1.0 }
    }

    /// The γ of a (1/γ)-smooth loss, i.e. the strong convexity of its
    /// conjugate. Zero for the hinge.
    pub fn gamma(self) -> f64 {
        match self {
            LossKind::Logistic => 4.0,
            other => other.hinge_width().unwrap_or(0.0),
        }
    }

    pub fn is_smooth(self) -> bool {
        self.gamma() > 0.0
    }

    pub fn eval(self, a: f64, y: f64) -> f64 {
        let z = y * a;
        match self.hinge_width() {
            Some(g) => {
                if z >= 1.0 {
                    0.0
                } else if z <= 1.0 - g {
                    1.0 - z - g / 2.0
                } else {
                    (1.0 - z) * (1.0 - z) / (2.0 * g)
                }
            }
            None => {
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
        }
    }

    /// φ′(a). For the hinge the kink at `y·a = 1` returns `−y`.
    pub fn deriv(self, a: f64, y: f64) -> f64 {
        let z = y * a;
        match self.hinge_width() {
            Some(g) if g == 0.0 => {
                if z <= 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            Some(g) => -y * ((1.0 - z) / g).clamp(0.0, 1.0),
            None => -y * sigmoid(-z),
        }
    }

    /// φ*(−b). Errors outside the effective domain `y·b ∈ [0, 1]`.
    pub fn conj(self, b: f64, y: f64) -> Result<f64> {
        let t = y * b;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("dual value {b} with label {y} outside [0, 1]")));
        }
        Ok(match self.hinge_width() {
            Some(g) => -t + 0.5 * g * t * t,
            None => xlogx(t) + xlogx(1.0 - t),
        })
    }

    /// Projects a dual value onto the effective domain.
    pub fn clip_dual(self, b: f64, y: f64) -> f64 {
        y * (y * b).clamp(0.0, 1.0)
    }

    /// Exact maximizer over α' of `−φ*(−α') − a(α' − α) − (s/2)(α' − α)²`.
    ///
    /// Returns the new dual value itself rather than the increment so the
    /// result lies in the domain without rounding drift.
    pub fn maximize_coordinate(self, alpha: f64, a: f64, y: f64, s: f64) -> f64 {
        let t0 = y * alpha;
        let z = y * a;
        let t = match self.hinge_width() {
            Some(g) if g + s == 0.0 => {
                if z <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Some(g) => ((1.0 - z + s * t0) / (g + s)).clamp(0.0, 1.0),
            None => logistic_coordinate(t0, z, s),
        };
        y * t
    }

    /// Increment form of [`LossKind::maximize_coordinate`].
    pub fn coord_update(self, alpha: f64, a: f64, y: f64, s: f64) -> f64 {
        self.maximize_coordinate(alpha, a, y, s) - alpha
    }

    pub fn name(self) -> String {
        match self {
            LossKind::SmoothHinge => "smooth-hinge".into(),
            LossKind::Logistic => "logistic".into(),
            LossKind::Hinge => "hinge".into(),
            LossKind::SmoothedHinge(g) => format!("smoothed-hinge({g})"),
        }
    }
}

/// Solves `−θ − z − s(σ(θ) − t0) = 0` for θ = logit(t') and returns σ(θ).
/// The left side is strictly decreasing and changes sign on `[−z−s, −z+s]`.
fn logistic_coordinate(t0: f64, z: f64, s: f64) -> f64 {
    let g = |theta: f64| -theta - z - s * (sigmoid(theta) - t0);
    let (mut lo, mut hi) = (-z - s, -z + s);
    let mut theta = -z - s * (sigmoid(-z) - t0);
    if !(lo..=hi).contains(&theta) {
        theta = 0.5 * (lo + hi);
    }
    let mut prev_step = hi - lo;
    for _ in 0..LOGISTIC_MAX_ITERS {
        let val = g(theta);
        if val.abs() <= LOGISTIC_TOL {
            break;
        }
        if val > 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let sig = sigmoid(theta);
        let slope = -1.0 - s * sig * (1.0 - sig);
        let newton = theta - val / slope;
        // Newton only while it stays bracketed and keeps halving its step.
        let next = if newton > lo && newton < hi && (newton - theta).abs() < 0.5 * prev_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        prev_step = (next - theta).abs();
        theta = next;
        if hi - lo <= f64::EPSILON * (1.0 + theta.abs()) {
            break;
        }
    }
    sigmoid(theta)
}

/// Replaces the hinge by its γ-smoothed version.
pub fn smooth(kind: LossKind, gamma: f64) -> Result<LossKind> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing width {gamma} must be positive")));
    }
    match kind {
        LossKind::Hinge => Ok(LossKind::SmoothedHinge(gamma)),
        other => Err(Error::InvalidArgument(format!("only the hinge is smoothed, got {}", other.name()))),
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth-hinge" => Ok(LossKind::SmoothHinge),
            "logistic" => Ok(LossKind::Logistic),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::grid_sup;
    use proptest::prelude::*;

    const ALL: [LossKind; 5] = [
        LossKind::SmoothHinge,
        LossKind::Logistic,
        LossKind::Hinge,
        LossKind::SmoothedHinge(0.5),
        LossKind::SmoothedHinge(0.01),
    ];

    /// The 1D objective maximized by a coordinate update, as a function of the new value.
    fn coord_objective(kind: LossKind, alpha: f64, a: f64, y: f64, s: f64, new: f64) -> f64 {
        let d = new - alpha;
        -kind.conj(new, y).unwrap() - a * d - 0.5 * s * d * d
    }

    #[test]
    fn eval_examples() {
        assert_eq!(LossKind::SmoothHinge.eval(0.5, 1.0), 0.125);
        assert_eq!(LossKind::SmoothHinge.eval(0.0, 1.0), 0.5);
        assert!((LossKind::Logistic.eval(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((LossKind::Logistic.eval(0.0, -1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(LossKind::Hinge.eval(-1.0, 1.0), 2.0);
        assert_eq!(LossKind::SmoothedHinge(0.5).eval(-3.0, 1.0), 3.75);
    }

    #[test]
    fn deriv_examples() {
        assert_eq!(LossKind::SmoothHinge.deriv(0.5, 1.0), -0.5);
        assert_eq!(LossKind::Logistic.deriv(0.0, 1.0), -0.5);
        assert_eq!(LossKind::Hinge.deriv(2.0, 1.0), 0.0);
        assert_eq!(LossKind::Hinge.deriv(1.0, 1.0), -1.0);
        assert_eq!(LossKind::Hinge.deriv(-1.0, -1.0), 1.0);
    }

    #[test]
    fn conj_examples_against_grid() {
        let cases = [
            (LossKind::SmoothHinge, 0.5, -0.375),
            (LossKind::Logistic, 0.5, -std::f64::consts::LN_2),
            (LossKind::Hinge, 1.0, -1.0),
        ];
        for (kind, b, expect) in cases {
            let (sup, _) = grid_sup(|a| -b * a - kind.eval(a, 1.0), -10.0, 10.0, 1e-5);
            assert!((sup - expect).abs() < 1e-6, "{kind}: grid {sup}");
            assert!((kind.conj(b, 1.0).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conj_matches_grid_sup_for_all_losses() {
        for kind in ALL {
            for y in [1.0, -1.0] {
                for k in 1..10 {
                    let t = k as f64 / 10.0;
                    let b = y * t;
                    // The supremum is attained where φ′(a) = −b; |a| ≤ 10 covers
                    // t ∈ [0.1, 0.9] for every loss, except where γ is tiny and the
                    // maximizer sits at the kink, which the grid contains.
                    let (sup, _) = grid_sup(|a| -b * a - kind.eval(a, y), -10.0, 10.0, 1e-4);
                    let c = kind.conj(b, y).unwrap();
                    assert!((sup - c).abs() < 1e-6, "{kind} y={y} t={t}: {sup} vs {c}");
                }
            }
        }
    }

    #[test]
    fn conj_domain_and_endpoints() {
        assert!(matches!(LossKind::Hinge.conj(1.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(LossKind::Logistic.conj(0.5, -1.0), Err(Error::Domain(_))));
        assert_eq!(LossKind::Logistic.conj(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(LossKind::Logistic.conj(-1.0, -1.0).unwrap(), 0.0);
        for kind in ALL {
            assert_eq!(kind.conj(0.0, 1.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn coord_update_examples() {
        let d = LossKind::SmoothHinge.coord_update(0.0, 0.0, 1.0, 1.0);
        assert_eq!(d, 0.5);
        let (_, arg) = grid_sup(
            |n| coord_objective(LossKind::SmoothHinge, 0.0, 0.0, 1.0, 1.0, n),
            0.0,
            1.0,
            1e-6,
        );
        assert!((arg - 0.5).abs() < 1e-6);
        assert_eq!(LossKind::Hinge.coord_update(0.0, 0.0, 1.0, 1.0), 1.0);
        let (_, arg) = grid_sup(|n| coord_objective(LossKind::Hinge, 0.0, 0.0, 1.0, 1.0, n), 0.0, 1.0, 1e-6);
        assert!((arg - 1.0).abs() < 1e-6);
    }

    #[test]
    fn coord_update_fixed_point() {
        for kind in ALL {
            for (a, y, s) in [(0.3, 1.0, 0.7), (-0.4, -1.0, 2.0), (0.9, 1.0, 0.05)] {
                let opt = kind.maximize_coordinate(0.0, a, y, s);
                // Re-solving with the current value as the anchor and the margin
                // moved accordingly must not move.
                let again = kind.coord_update(opt, a + s * (opt - 0.0), y, s);
                assert!(again.abs() < 1e-12, "{kind}: {again}");
            }
        }
    }

    #[test]
    fn zero_norm_example_goes_to_negative_gradient() {
        for kind in ALL {
            for a in [-2.0, 0.3, 0.999, 3.0] {
                let new = kind.maximize_coordinate(0.0, a, 1.0, 0.0);
                let target = kind.clip_dual(-kind.deriv(a, 1.0), 1.0);
                assert!((new - target).abs() < 1e-12, "{kind} a={a}: {new} vs {target}");
            }
        }
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth(LossKind::Hinge, 0.3).unwrap(), LossKind::SmoothedHinge(0.3));
        assert!(smooth(LossKind::Hinge, 0.0).is_err());
        assert!(smooth(LossKind::Logistic, 1.0).is_err());
        let sm = smooth(LossKind::Hinge, 1.0).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let a = -5.0 + 10.0 * k as f64 / 999.0;
            for y in [1.0, -1.0] {
                worst = worst.max((sm.eval(a, y) - LossKind::SmoothHinge.eval(a, y)).abs());
            }
        }
        assert!(worst <= 1e-12);
        let gap = smooth(LossKind::Hinge, 0.01).unwrap().eval(1.0, 1.0) - LossKind::Hinge.eval(1.0, 1.0);
        assert!((0.0..=0.005).contains(&gap));
    }

    #[test]
    fn smoothed_linear_region_matches_double_conjugate() {
        // φ̃ = (φ* + (γ/2)b²)*, evaluated by grid sup over the dual box.
        let g = 0.5;
        let a = -3.0;
        let (sup, _) = grid_sup(|t| -t * a - (-t + 0.5 * g * t * t), 0.0, 1.0, 1e-6);
        assert!((sup - 3.75).abs() < 1e-9);
        assert_eq!(LossKind::SmoothedHinge(g).eval(a, 1.0), 3.75);
    }

    #[test]
    fn parse_names() {
        for s in ["smooth-hinge", "logistic", "hinge"] {
            assert_eq!(s.parse::<LossKind>().unwrap().name(), s);
        }
        assert!("squared".parse::<LossKind>().is_err());
    }

    fn kind_strategy() -> impl Strategy<Value = LossKind> {
        prop_oneof![
            Just(LossKind::SmoothHinge),
            Just(LossKind::Logistic),
            Just(LossKind::Hinge),
            (0.001f64..5.0).prop_map(LossKind::SmoothedHinge),
        ]
    }

    fn label() -> impl Strategy<Value = f64> {
        prop_oneof![Just(1.0), Just(-1.0)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn fenchel_young(kind in kind_strategy(), y in label(), a in -8.0f64..8.0, t in 0.0f64..=1.0) {
            let b = y * t;
            prop_assert!(kind.eval(a, y) + kind.conj(b, y).unwrap() >= -a * b - 1e-12);
            let b_star = -kind.deriv(a, y);
            let eq = kind.eval(a, y) + kind.conj(b_star, y).unwrap() + a * b_star;
            prop_assert!(eq.abs() <= 1e-8, "equality residual {}", eq);
        }

        #[test]
        fn deriv_matches_finite_differences(kind in kind_strategy(), y in label(), a in -6.0f64..6.0) {
            let h = 1e-6;
            let z = y * a;
            if let Some(g) = kind.hinge_width() {
                // Skip the kinks where the loss is not differentiable (or the
                // second derivative jumps inside the stencil).
                prop_assume!((z - 1.0).abs() > 1e-4 && (z - (1.0 - g)).abs() > 1e-4);
            }
            let fd = (kind.eval(a + h, y) - kind.eval(a - h, y)) / (2.0 * h);
            prop_assert!((fd - kind.deriv(a, y)).abs() <= 1e-5);
        }

        #[test]
        fn coordinate_maximizer_is_optimal(
            kind in kind_strategy(),
            y in label(),
            t0 in 0.0f64..=1.0,
            a in -4.0f64..4.0,
            s in 0.0f64..20.0,
        ) {
            let alpha = y * t0;
            let new = kind.maximize_coordinate(alpha, a, y, s);
            prop_assert!((0.0..=1.0).contains(&(y * new)));
            let best = coord_objective(kind, alpha, a, y, s, new);
            prop_assert!(best >= coord_objective(kind, alpha, a, y, s, alpha) - 1e-10);
            // Dominates every conservative step toward the negative gradient.
            let u = -kind.deriv(a, y);
            for k in 0..=20 {
                let sc = k as f64 / 20.0;
                let cand = kind.clip_dual(alpha + sc * (u - alpha), y);
                prop_assert!(best >= coord_objective(kind, alpha, a, y, s, cand) - 1e-10);
            }
            // And a coarse grid over the box.
            for k in 0..=100 {
                let cand = y * k as f64 / 100.0;
                prop_assert!(best >= coord_objective(kind, alpha, a, y, s, cand) - 1e-10);
            }
        }

        #[test]
        fn smoothed_conjugate_adds_quadratic(g in 0.001f64..5.0, y in label(), t in 0.0f64..=1.0) {
            let b = y * t;
            let lhs = LossKind::SmoothedHinge(g).conj(b, y).unwrap();
            let rhs = LossKind::Hinge.conj(b, y).unwrap() + 0.5 * g * b * b;
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
