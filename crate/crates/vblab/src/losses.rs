//! Per-sample classification losses and their exact gradients.
//!
//! Every loss here is a function of the predicted class probabilities `u`
//! (a softmax output), not of logits. The single-probability families
//! depend only on the probability `u_y` assigned to the true label:
//!
//! | family | value                          | gradient in `u_y`              |
//! |--------|--------------------------------|--------------------------------|
//! | CE     | `-ln(u)`                       | `-1/u`                         |
//! | MAE    | `2(1-u)`                       | `-2`                           |
//! | EL     | `exp(-u)`                      | `-exp(-u)`                     |
//! | VCE(a) | `-ln(u+a)`                     | `-1/(u+a)`                     |
//! | VEL(a) | `a^(-u)`                       | `-a^(-u)·ln(a)`                |
//! | VSL(a) | `(ln(a·u+1)-ln 2)²/a`          | `2(ln(a·u+1)-ln 2)/(a·u+1)`    |
//! | SL     | VSL with `a = 1`               |                                |
//!
//! NCE (normalized cross entropy, `(-ln u_y)/(-Σ_k ln u_k)`) depends on the
//! whole probability vector, and [`LossSpec::Combined`] mixes NCE with one
//! variation-bounded loss (`α·NCE + β·VBL`), pairing NCE's noise robustness
//! with a partner that still has gradient signal everywhere.
//!
//! The hyperparameter `a` interpolates each bounded family between its
//! robust extreme and its unbounded classic: VCE(a=0) is CE, VEL(a=e) is EL,
//! VSL(a=1) is SL. All logarithms are natural; probabilities are clamped to
//! `[PROB_EPS, 1-PROB_EPS]` before entering any logarithm so degenerate
//! predictions cannot produce infinities.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp bound applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Tolerance for the simplex sum check in [`ProbabilityVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Errors from loss construction and evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{family} requires {constraint}, got a = {value}")]
    InvalidHyperparameter {
        family: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("combined loss weights must be finite, nonnegative and not both zero, got alpha = {alpha}, beta = {beta}")]
    InvalidCombinationWeights { alpha: f64, beta: f64 },
    #[error("combined loss requires nce as its active part, got {0}")]
    InvalidActivePart(String),
    #[error("combined loss requires vce, vel or vsl as its passive part, got {0}")]
    InvalidPassivePart(String),
    #[error("probability vector needs at least 2 components, got {0}")]
    TooFewClasses(usize),
    #[error("probability component {index} is {value}, outside [0, 1]")]
    ComponentOutOfRange { index: usize, value: f64 },
    #[error("probability components sum to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("{0} has no per-probability gradient curve; it is not a single-probability loss")]
    NotSingleLoss(String),
    #[error("gradient curve needs at least 2 points, got {0}")]
    CurveTooShort(usize),
}

/// A point on the probability simplex: `K >= 2` components in `[0, 1]`
/// summing to 1 within [`SIMPLEX_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, LossError> {
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Validates simplex membership without constructing a [`ProbabilityVector`].
pub fn check_simplex(probs: &[f64]) -> Result<(), LossError> {
    if probs.len() < 2 {
        return Err(LossError::TooFewClasses(probs.len()));
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(LossError::ComponentOutOfRange { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(LossError::NotNormalized(sum));
    }
    Ok(())
}

/// A loss family together with its hyperparameters.
///
/// Use the checked constructors ([`LossSpec::vce`], [`LossSpec::vel`],
/// [`LossSpec::vsl`], [`LossSpec::combined`]) to build parameterized
/// variants; they reject hyperparameters outside each family's domain.
/// Values deserialized from config files should be re-checked with
/// [`LossSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossSpec {
    /// Cross entropy, `-ln(u_y)`.
    Ce,
    /// Mean absolute error, `2(1-u_y)`.
    Mae,
    /// Exponential loss, `exp(-u_y)`.
    El,
    /// Square log loss, `(ln(u_y+1)-ln 2)²`.
    Sl,
    /// Cross entropy with a shifted argument, `-ln(u_y+a)`, `a >= 0`.
    Vce { a: f64 },
    /// Exponential loss with tunable base, `a^(-u_y)`, `a > 1`.
    Vel { a: f64 },
    /// Square log loss with tunable slope, `(ln(a·u_y+1)-ln 2)²/a`, `0 < a <= 1`.
    Vsl { a: f64 },
    /// Normalized cross entropy, `(-ln u_y)/(-Σ_k ln u_k)`.
    Nce,
    /// `alpha·NCE + beta·passive` where `passive` is one of VCE/VEL/VSL.
    Combined {
        alpha: f64,
        beta: f64,
        active: Box<LossSpec>,
        passive: Box<LossSpec>,
    },
}

impl LossSpec {
    pub fn vce(a: f64) -> Result<Self, LossError> {
        if !a.is_finite() || a < 0.0 {
            return Err(LossError::InvalidHyperparameter {
                family: "vce",
                constraint: "a >= 0",
                value: a,
            });
        }
        Ok(LossSpec::Vce { a })
    }

    pub fn vel(a: f64) -> Result<Self, LossError> {
        if !a.is_finite() || a <= 1.0 {
            return Err(LossError::InvalidHyperparameter {
                family: "vel",
                constraint: "a > 1",
                value: a,
            });
        }
        Ok(LossSpec::Vel { a })
    }

    pub fn vsl(a: f64) -> Result<Self, LossError> {
        if !a.is_finite() || a <= 0.0 || a > 1.0 {
            return Err(LossError::InvalidHyperparameter {
                family: "vsl",
                constraint: "0 < a <= 1",
                value: a,
            });
        }
        Ok(LossSpec::Vsl { a })
    }

    /// Builds `alpha·active + beta·passive`. The active part must be NCE and
    /// the passive part a single variation-bounded loss, so combinations
    /// never nest.
    pub fn combined(
        alpha: f64,
        beta: f64,
        active: LossSpec,
        passive: LossSpec,
    ) -> Result<Self, LossError> {
        if !alpha.is_finite() || !beta.is_finite() || alpha < 0.0 || beta < 0.0
            || (alpha == 0.0 && beta == 0.0)
        {
            return Err(LossError::InvalidCombinationWeights { alpha, beta });
        }
        if active != LossSpec::Nce {
            return Err(LossError::InvalidActivePart(active.to_string()));
        }
        match passive {
            LossSpec::Vce { .. } | LossSpec::Vel { .. } | LossSpec::Vsl { .. } => {
                passive.validate()?;
            }
            other => return Err(LossError::InvalidPassivePart(other.to_string())),
        }
        Ok(LossSpec::Combined {
            alpha,
            beta,
            active: Box::new(active),
            passive: Box::new(passive),
        })
    }

    /// Re-checks every hyperparameter constraint. Needed for specs built
    /// from deserialized configs, which bypass the checked constructors.
    pub fn validate(&self) -> Result<(), LossError> {
        match self {
            LossSpec::Ce | LossSpec::Mae | LossSpec::El | LossSpec::Sl | LossSpec::Nce => Ok(()),
            LossSpec::Vce { a } => Self::vce(*a).map(|_| ()),
            LossSpec::Vel { a } => Self::vel(*a).map(|_| ()),
            LossSpec::Vsl { a } => Self::vsl(*a).map(|_| ()),
            LossSpec::Combined {
                alpha,
                beta,
                active,
                passive,
            } => Self::combined(*alpha, *beta, (**active).clone(), (**passive).clone())
                .map(|_| ()),
        }
    }

    /// True for families defined by a scalar function of the label
    /// probability alone (everything except NCE and Combined).
    pub fn is_single(&self) -> bool {
        !matches!(self, LossSpec::Nce | LossSpec::Combined { .. })
    }

    /// Loss value with full input validation.
    pub fn value(&self, probs: &[f64], label: usize) -> Result<f64, LossError> {
        self.validate()?;
        check_simplex(probs)?;
        check_label(label, probs.len())?;
        Ok(self.value_unchecked(probs, label))
    }

    /// Loss value without validation. The caller guarantees `probs` is a
    /// simplex point (softmax output qualifies) and `label < probs.len()`.
    pub fn value_unchecked(&self, probs: &[f64], label: usize) -> f64 {
        debug_assert!(label < probs.len());
        match self {
            LossSpec::Nce => nce_value(probs, label),
            LossSpec::Combined {
                alpha,
                beta,
                active,
                passive,
            } => {
                alpha * active.value_unchecked(probs, label)
                    + beta * passive.value_unchecked(probs, label)
            }
            single => single.scalar_value(probs[label]),
        }
    }

    /// Gradient `∂L/∂u` with full input validation.
    pub fn grad(&self, probs: &[f64], label: usize) -> Result<Vec<f64>, LossError> {
        self.validate()?;
        check_simplex(probs)?;
        check_label(label, probs.len())?;
        let mut out = vec![0.0; probs.len()];
        self.grad_into(probs, label, &mut out);
        Ok(out)
    }

    /// Writes the gradient `∂L/∂u` into `out` without validation.
    ///
    /// Single families touch only the label component; NCE fills all of
    /// them. Overwrites `out` completely.
    pub fn grad_into(&self, probs: &[f64], label: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), probs.len());
        debug_assert!(label < probs.len());
        match self {
            LossSpec::Nce => nce_grad_into(probs, label, out),
            LossSpec::Combined {
                alpha,
                beta,
                active,
                passive,
            } => {
                active.grad_into(probs, label, out);
                for g in out.iter_mut() {
                    *g *= alpha;
                }
                out[label] += beta * passive.scalar_grad(probs[label]);
            }
            single => {
                out.fill(0.0);
                out[label] = single.scalar_grad(probs[label]);
            }
        }
    }

    /// `(u, |∂ℓ/∂u|)` pairs on a uniform grid over `[PROB_EPS, 1-PROB_EPS]`,
    /// the raw material for gradient-magnitude plots.
    pub fn grad_magnitude_curve(&self, n_points: usize) -> Result<Vec<(f64, f64)>, LossError> {
        self.validate()?;
        if !self.is_single() {
            return Err(LossError::NotSingleLoss(self.to_string()));
        }
        if n_points < 2 {
            return Err(LossError::CurveTooShort(n_points));
        }
        let lo = PROB_EPS;
        let hi = 1.0 - PROB_EPS;
        let step = (hi - lo) / (n_points - 1) as f64;
        Ok((0..n_points)
            .map(|i| {
                let u = lo + step * i as f64;
                (u, self.scalar_grad(u).abs())
            })
            .collect())
    }

    /// Scalar value `ℓ(u)` for single-probability families.
    ///
    /// Only CE, VCE, VSL/SL and NCE take logarithms of a probability, so
    /// only they see the clamped `u`; MAE, EL and VEL use `u` as-is, which
    /// keeps e.g. `MAE(1) = 0` exact.
    pub(crate) fn scalar_value(&self, u: f64) -> f64 {
        match self {
            LossSpec::Ce => -clamp_prob(u).ln(),
            LossSpec::Mae => 2.0 * (1.0 - u),
            LossSpec::El => (-u).exp(),
            LossSpec::Sl => vsl_value(1.0, u),
            LossSpec::Vce { a } => -(clamp_prob(u) + a).ln(),
            LossSpec::Vel { a } => (-u * a.ln()).exp(),
            LossSpec::Vsl { a } => vsl_value(*a, u),
            LossSpec::Nce | LossSpec::Combined { .. } => {
                unreachable!("scalar_value is only defined for single-probability losses")
            }
        }
    }

    /// Scalar gradient `ℓ'(u)` for single-probability families, evaluated at
    /// the clamped `u` wherever the value does the same.
    pub(crate) fn scalar_grad(&self, u: f64) -> f64 {
        match self {
            LossSpec::Ce => -1.0 / clamp_prob(u),
            LossSpec::Mae => -2.0,
            LossSpec::El => -(-u).exp(),
            LossSpec::Sl => vsl_grad(1.0, clamp_prob(u)),
            LossSpec::Vce { a } => -1.0 / (clamp_prob(u) + a),
            LossSpec::Vel { a } => -a.ln() * (-u * a.ln()).exp(),
            LossSpec::Vsl { a } => vsl_grad(*a, clamp_prob(u)),
            LossSpec::Nce | LossSpec::Combined { .. } => {
                unreachable!("scalar_grad is only defined for single-probability losses")
            }
        }
    }

    /// Scalar gradient without clamping, defined on the closed interval
    /// `[0, 1]`. Division by zero yields IEEE infinities, which is exactly
    /// what the analysis module wants when it probes the endpoint limits of
    /// `|ℓ'|` (e.g. CE at `u = 0`).
    pub(crate) fn scalar_grad_limit(&self, u: f64) -> f64 {
        match self {
            LossSpec::Ce => -1.0 / u,
            LossSpec::Mae => -2.0,
            LossSpec::El => -(-u).exp(),
            LossSpec::Sl => vsl_grad(1.0, u),
            LossSpec::Vce { a } => -1.0 / (u + a),
            LossSpec::Vel { a } => -a.ln() * (-u * a.ln()).exp(),
            LossSpec::Vsl { a } => vsl_grad(*a, u),
            LossSpec::Nce | LossSpec::Combined { .. } => {
                unreachable!("scalar_grad_limit is only defined for single-probability losses")
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Ce => write!(f, "ce"),
            LossSpec::Mae => write!(f, "mae"),
            LossSpec::El => write!(f, "el"),
            LossSpec::Sl => write!(f, "sl"),
            LossSpec::Vce { a } => write!(f, "vce(a={a})"),
            LossSpec::Vel { a } => write!(f, "vel(a={a})"),
            LossSpec::Vsl { a } => write!(f, "vsl(a={a})"),
            LossSpec::Nce => write!(f, "nce"),
            LossSpec::Combined {
                alpha,
                beta,
                active,
                passive,
            } => write!(f, "{alpha}*{active}+{beta}*{passive}"),
        }
    }
}

#[inline]
fn clamp_prob(u: f64) -> f64 {
    u.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_label(label: usize, k: usize) -> Result<(), LossError> {
    if label >= k {
        return Err(LossError::LabelOutOfRange { label, k });
    }
    Ok(())
}

fn vsl_value(a: f64, u: f64) -> f64 {
    let t = (a * clamp_prob(u) + 1.0).ln() - std::f64::consts::LN_2;
    t * t / a
}

/// `d/du [(ln(a·u+1) - ln 2)²/a] = 2(ln(a·u+1) - ln 2)/(a·u+1)`; the inner
/// factor `a` from the chain rule cancels the outer `1/a`.
fn vsl_grad(a: f64, u: f64) -> f64 {
    let au1 = a * u + 1.0;
    2.0 * (au1.ln() - std::f64::consts::LN_2) / au1
}

fn nce_value(probs: &[f64], label: usize) -> f64 {
    let numer = -clamp_prob(probs[label]).ln();
    let denom: f64 = probs.iter().map(|&u| -clamp_prob(u).ln()).sum();
    numer / denom
}

/// Quotient rule for `n/d` with `n = -ln û_y`, `d = -Σ_k ln û_k`:
/// the label picks up `(n-d)/(û_y·d²)`, every other class `n/(û_k·d²)`.
fn nce_grad_into(probs: &[f64], label: usize, out: &mut [f64]) {
    let numer = -clamp_prob(probs[label]).ln();
    let denom: f64 = probs.iter().map(|&u| -clamp_prob(u).ln()).sum();
    let d2 = denom * denom;
    for (k, &u) in probs.iter().enumerate() {
        out[k] = numer / (clamp_prob(u) * d2);
    }
    out[label] = (numer - denom) / (clamp_prob(probs[label]) * d2);
}

// ====== Tests ======

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::{stream, StreamPurpose};

    fn nce_plus_vce(alpha: f64, beta: f64, a: f64) -> LossSpec {
        LossSpec::combined(alpha, beta, LossSpec::Nce, LossSpec::vce(a).unwrap()).unwrap()
    }

    /// Every family with representative hyperparameters.
    fn all_specs() -> Vec<LossSpec> {
        vec![
            LossSpec::Ce,
            LossSpec::Mae,
            LossSpec::El,
            LossSpec::Sl,
            LossSpec::vce(4.0).unwrap(),
            LossSpec::vce(0.0).unwrap(),
            LossSpec::vel(1.5).unwrap(),
            LossSpec::vsl(0.1).unwrap(),
            LossSpec::Nce,
            nce_plus_vce(1.0, 10.0, 2.0),
        ]
    }

    fn simplex_with_label(k: usize, u_label: f64, label: usize) -> Vec<f64> {
        let rest = (1.0 - u_label) / (k - 1) as f64;
        let mut p = vec![rest; k];
        p[label] = u_label;
        p
    }

    // ====== Construction ======

    #[test]
    fn hyperparameter_domains_are_enforced() {
        assert!(LossSpec::vce(-0.1).is_err());
        assert!(LossSpec::vce(f64::NAN).is_err());
        assert!(LossSpec::vce(0.0).is_ok());
        assert!(LossSpec::vel(1.0).is_err());
        assert!(LossSpec::vel(0.5).is_err());
        assert!(LossSpec::vel(1.0 + 1e-9).is_ok());
        assert!(LossSpec::vsl(0.0).is_err());
        assert!(LossSpec::vsl(1.0 + 1e-9).is_err());
        assert!(LossSpec::vsl(1.0).is_ok());
    }

    #[test]
    fn combined_requires_nce_active_and_vbl_passive() {
        let vce = LossSpec::vce(2.0).unwrap();
        assert!(LossSpec::combined(1.0, 10.0, LossSpec::Nce, vce.clone()).is_ok());
        assert_eq!(
            LossSpec::combined(1.0, 10.0, LossSpec::Ce, vce.clone()),
            Err(LossError::InvalidActivePart("ce".into()))
        );
        assert_eq!(
            LossSpec::combined(1.0, 10.0, LossSpec::Nce, LossSpec::Mae),
            Err(LossError::InvalidPassivePart("mae".into()))
        );
        // No nesting: a combined passive part is rejected outright.
        let nested = nce_plus_vce(1.0, 1.0, 2.0);
        assert!(matches!(
            LossSpec::combined(1.0, 1.0, LossSpec::Nce, nested),
            Err(LossError::InvalidPassivePart(_))
        ));
        assert!(LossSpec::combined(-1.0, 1.0, LossSpec::Nce, vce.clone()).is_err());
        assert!(LossSpec::combined(0.0, 0.0, LossSpec::Nce, vce).is_err());
    }

    #[test]
    fn validate_catches_hand_built_specs() {
        // Specs assembled without the constructors (e.g. from serde) must
        // fail validation when out of domain.
        assert!(LossSpec::Vel { a: 0.5 }.validate().is_err());
        assert!(LossSpec::Vsl { a: 2.0 }.validate().is_err());
        assert!(LossSpec::Vce { a: 4.0 }.validate().is_ok());
    }

    #[test]
    fn probability_vector_rejects_malformed_input() {
        assert!(ProbabilityVector::new(vec![1.0]).is_err());
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![0.5, f64::NAN]).is_err());
        let pv = ProbabilityVector::new(vec![0.25; 4]).unwrap();
        assert_eq!(pv.k(), 4);
    }

    #[test]
    fn spec_serde_round_trips() {
        for spec in all_specs() {
            let json = serde_json::to_string(&spec).unwrap();
            let back: LossSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec, "round trip failed for {json}");
        }
        let json = r#"{"family":"vce","a":4.0}"#;
        let spec: LossSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec, LossSpec::Vce { a: 4.0 });
    }

    // ====== Frozen values ======

    #[test]
    fn vce_at_zero_recovers_ce_value() {
        let p = simplex_with_label(2, 0.5, 0);
        let v = LossSpec::vce(0.0).unwrap().value(&p, 0).unwrap();
        assert!((v - 0.693147).abs() < 5e-7, "got {v}");
        assert_eq!(v, LossSpec::Ce.value(&p, 0).unwrap());
    }

    #[test]
    fn vel_at_e_with_full_confidence() {
        let p = simplex_with_label(3, 1.0, 1);
        let v = LossSpec::vel(std::f64::consts::E)
            .unwrap()
            .value(&p, 1)
            .unwrap();
        assert!((v - 0.367879).abs() < 5e-7, "got {v}");
    }

    #[test]
    fn vsl_at_zero_confidence() {
        let p = simplex_with_label(2, 0.0, 0);
        let v = LossSpec::vsl(0.1).unwrap().value(&p, 0).unwrap();
        assert!((v - 4.804530).abs() < 5e-7, "got {v}");
    }

    #[test]
    fn mae_perfect_prediction_is_zero() {
        let p = simplex_with_label(4, 1.0, 2);
        assert_eq!(LossSpec::Mae.value(&p, 2).unwrap(), 0.0);
    }

    #[test]
    fn vce_gradient_frozen_value() {
        let p = simplex_with_label(5, 0.2, 3);
        let g = LossSpec::vce(4.0).unwrap().grad(&p, 3).unwrap();
        assert!((g[3] - (-0.238095)).abs() < 5e-7, "got {}", g[3]);
        for (k, &gk) in g.iter().enumerate() {
            if k != 3 {
                assert_eq!(gk, 0.0);
            }
        }
    }

    #[test]
    fn mae_gradient_is_constant() {
        for &u in &[0.05, 0.3, 0.9] {
            let p = simplex_with_label(3, u, 0);
            let g = LossSpec::Mae.grad(&p, 0).unwrap();
            assert_eq!(g, vec![-2.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn nce_is_normalized_to_unit_range() {
        // Uniform prediction: numerator is one of K equal terms.
        let p = vec![0.25; 4];
        let v = LossSpec::Nce.value(&p, 0).unwrap();
        assert!((v - 0.25).abs() < 1e-12, "got {v}");
        // Confident and right: near 0. Confident and wrong (K=2, where the
        // denominator has a single other term): near 1.
        let right = LossSpec::Nce
            .value(&simplex_with_label(4, 0.9997, 0), 0)
            .unwrap();
        let wrong = LossSpec::Nce
            .value(&simplex_with_label(2, 0.9997, 1), 0)
            .unwrap();
        assert!(right < 0.01, "got {right}");
        assert!(wrong > 0.99, "got {wrong}");
    }

    #[test]
    fn combined_is_the_weighted_sum_of_its_parts() {
        let spec = nce_plus_vce(1.0, 10.0, 2.0);
        let p = vec![0.6, 0.3, 0.1];
        let expect = LossSpec::Nce.value(&p, 0).unwrap()
            + 10.0 * LossSpec::vce(2.0).unwrap().value(&p, 0).unwrap();
        assert!((spec.value(&p, 0).unwrap() - expect).abs() < 1e-12);
    }

    // ====== Gradient checks against finite differences ======

    /// Central finite difference of the loss in coordinate `j`, treating the
    /// loss as a function on all of R^K (the simplex constraint is not
    /// re-imposed, matching what the analytic gradient claims).
    fn fd_grad(spec: &LossSpec, probs: &[f64], label: usize, j: usize, h: f64) -> f64 {
        let mut hi = probs.to_vec();
        let mut lo = probs.to_vec();
        hi[j] += h;
        lo[j] -= h;
        (spec.value_unchecked(&hi, label) - spec.value_unchecked(&lo, label)) / (2.0 * h)
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = stream(2024, StreamPurpose::Sampling, 0);
        for spec in all_specs() {
            for _ in 0..100 {
                let k = rng.gen_range(2..=10);
                // Keep coordinates comfortably inside the clamp region so the
                // finite-difference stencil stays differentiable.
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                let probs: Vec<f64> = raw.iter().map(|x| x / sum).collect();
                let label = rng.gen_range(0..k);
                let analytic = spec.grad(&probs, label).unwrap();
                for j in 0..k {
                    let fd = fd_grad(&spec, &probs, label, j, 1e-5);
                    let err = (analytic[j] - fd).abs();
                    let ok = if fd.abs() < 1e-6 {
                        err < 1e-8
                    } else {
                        err / fd.abs() < 1e-5
                    };
                    assert!(
                        ok,
                        "{spec}: coord {j} of K={k}, analytic {} vs fd {fd}",
                        analytic[j]
                    );
                }
            }
        }
    }

    // ====== Shape and structure ======

    #[test]
    fn single_losses_touch_only_the_label_coordinate() {
        let p = vec![0.2, 0.5, 0.3];
        for spec in all_specs() {
            if !spec.is_single() {
                continue;
            }
            let g = spec.grad(&p, 1).unwrap();
            assert_eq!(g[0], 0.0);
            assert_eq!(g[2], 0.0);
            assert!(g[1] < 0.0, "{spec} gradient must be negative in u_y");
        }
    }

    #[test]
    fn nce_gradient_touches_every_coordinate() {
        let p = vec![0.2, 0.5, 0.3];
        let g = LossSpec::Nce.grad(&p, 1).unwrap();
        assert!(g[1] < 0.0, "raising the label probability lowers the loss");
        assert!(g[0] > 0.0 && g[2] > 0.0, "raising others raises the loss");
    }

    #[test]
    fn vce_gradient_has_no_additive_constant() {
        // The gradient is the pure reciprocal -1/(u+a): shifting the value
        // by any constant (say, to make it nonnegative) would not change it.
        let spec = LossSpec::vce(0.7).unwrap();
        for &u in &[0.1, 0.4, 0.9] {
            let p = simplex_with_label(3, u, 0);
            let g = spec.grad(&p, 0).unwrap();
            assert_eq!(g[0], -1.0 / (u + 0.7));
        }
    }

    #[test]
    fn value_can_be_negative_for_shifted_families() {
        let p = simplex_with_label(2, 1.0, 0);
        let v = LossSpec::vce(4.0).unwrap().value(&p, 0).unwrap();
        assert!(v < 0.0, "vce attains -ln(1+a) < 0 at u_y = 1, got {v}");
    }

    // ====== Limits and monotonicity ======

    #[test]
    fn vce_with_tiny_a_recovers_ce() {
        let spec = LossSpec::vce(1e-12).unwrap();
        let mut worst: f64 = 0.0;
        let mut u = 0.01;
        while u <= 0.999 {
            let p = simplex_with_label(2, u, 0);
            let d = (spec.value_unchecked(&p, 0) - LossSpec::Ce.value_unchecked(&p, 0)).abs();
            worst = worst.max(d);
            u += 1e-3;
        }
        assert!(worst < 1e-9, "sup gap {worst}");
    }

    #[test]
    fn vel_at_e_recovers_el_exactly() {
        let spec = LossSpec::vel(std::f64::consts::E).unwrap();
        let mut u = 0.0;
        while u <= 1.0 {
            let p = simplex_with_label(2, u, 0);
            assert_eq!(
                spec.value_unchecked(&p, 0),
                LossSpec::El.value_unchecked(&p, 0),
                "at u = {u}"
            );
            u += 1e-2;
        }
    }

    #[test]
    fn vsl_at_one_recovers_sl_exactly() {
        let spec = LossSpec::vsl(1.0).unwrap();
        let mut u = 0.0;
        while u <= 1.0 {
            let p = simplex_with_label(2, u, 0);
            assert_eq!(
                spec.value_unchecked(&p, 0),
                LossSpec::Sl.value_unchecked(&p, 0),
                "at u = {u}"
            );
            u += 1e-2;
        }
    }

    #[test]
    fn single_losses_strictly_decrease_in_label_probability() {
        for spec in all_specs() {
            if !spec.is_single() {
                continue;
            }
            let mut prev = f64::INFINITY;
            let mut u: f64 = 0.0;
            while u <= 1.0 + 1e-12 {
                let v = spec.scalar_value(u.min(1.0));
                assert!(v < prev, "{spec} not strictly decreasing at u = {u}");
                prev = v;
                u += 1e-3;
            }
        }
    }

    #[test]
    fn every_family_is_minimized_at_the_one_hot_label() {
        // Simplex lattice search at resolution 0.02, K = 3.
        let n = 50;
        for spec in all_specs() {
            let mut best = (f64::INFINITY, (0, 0));
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let p = [
                        i as f64 / n as f64,
                        j as f64 / n as f64,
                        (n - i - j) as f64 / n as f64,
                    ];
                    let v = spec.value_unchecked(&p, 0);
                    if v < best.0 {
                        best = (v, (i, j));
                    }
                }
            }
            assert_eq!(best.1, (n, 0), "{spec} argmin is not e_y");
        }
    }

    // ====== Gradient magnitude curve ======

    #[test]
    fn curve_endpoints_and_shape() {
        let curve = LossSpec::Ce.grad_magnitude_curve(101).unwrap();
        assert_eq!(curve.len(), 101);
        assert!((curve[0].0 - PROB_EPS).abs() < 1e-15);
        assert!((curve[100].0 - (1.0 - PROB_EPS)).abs() < 1e-15);
        // CE blows up like 1/u at the left edge.
        assert!((curve[0].1 - 1.0 / PROB_EPS).abs() / (1.0 / PROB_EPS) < 1e-9);

        let flat = LossSpec::Mae.grad_magnitude_curve(11).unwrap();
        assert!(flat.iter().all(|&(_, g)| g == 2.0));

        let vel = LossSpec::vel(1.5).unwrap().grad_magnitude_curve(101).unwrap();
        let ratio = vel[0].1 / vel[100].1;
        assert!((ratio - 1.5).abs() < 1e-6, "got {ratio}");
    }

    #[test]
    fn curve_rejects_multi_probability_losses() {
        assert!(matches!(
            LossSpec::Nce.grad_magnitude_curve(10),
            Err(LossError::NotSingleLoss(_))
        ));
        assert!(matches!(
            nce_plus_vce(1.0, 1.0, 2.0).grad_magnitude_curve(10),
            Err(LossError::NotSingleLoss(_))
        ));
        assert!(matches!(
            LossSpec::Ce.grad_magnitude_curve(1),
            Err(LossError::CurveTooShort(1))
        ));
    }

    // ====== Validation paths ======

    #[test]
    fn checked_api_rejects_bad_inputs() {
        let spec = LossSpec::Ce;
        assert!(matches!(
            spec.value(&[0.5, 0.6], 0),
            Err(LossError::NotNormalized(_))
        ));
        assert!(matches!(
            spec.value(&[0.5, 0.5], 2),
            Err(LossError::LabelOutOfRange { .. })
        ));
        let invalid = LossSpec::Vel { a: 0.5 };
        assert!(invalid.value(&[0.5, 0.5], 0).is_err());
    }
}
