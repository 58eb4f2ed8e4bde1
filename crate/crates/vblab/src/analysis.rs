//! Gradient-range analysis and robustness certificates for the loss
//! families in [`crate::losses`].
//!
//! Everything here reduces to one quantity: the variation ratio
//! `v(L) = sup|ℓ'| / inf|ℓ'|` over scores `u ∈ (0,1)`. A constant-slope
//! loss has `v = 1` and ignores where on the simplex probability mass sits;
//! cross-entropy has `v = ∞` and can be dominated by a single mislabeled
//! sample. The exported operations are:
//!
//! - [`variation_ratio_closed`] and [`variation_ratio_numeric`], the exact
//!   ratios and a grid estimator that cross-checks them;
//! - [`symmetric_defect`], a sampling probe of how far the normalized
//!   all-class loss sum can move across the simplex (at most `v − 1`);
//! - [`excess_risk_bound_symmetric`] and [`excess_risk_bound_general`],
//!   clean-risk gap guarantees under symmetric and clean-label-dominant
//!   noise;
//! - [`asymmetry_threshold`], [`certify_asymmetric`], and
//!   [`certify_asymmetric_under_noise`], which decide whether a weighted
//!   risk is provably minimized at the heaviest class;
//! - [`argmin_weighted_risk_bruteforce`], a simplex-lattice oracle that
//!   validates those certificates on small instances.

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::losses::{LossError, LossSpec};
use crate::noise::{NoiseModel, NoiseProfile};
use crate::rng::{stream, StreamPurpose};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("the variation ratio of `{0}` is not defined; use a single loss family")]
    UnsupportedFamily(String),
    #[error("`{0}` has an unbounded variation ratio; this quantity needs a finite one")]
    UnboundedRatio(String),
    #[error("numeric ratio estimation needs at least {min} grid steps, got {got}")]
    GridTooCoarse { got: usize, min: usize },
    #[error("needs at least 2 classes, got K = {0}")]
    TooFewClasses(usize),
    #[error("needs at least one sampled pair")]
    NoPairs,
    #[error("noise rate eta = {eta} must lie below 1 - 1/K = {limit} for K = {k}")]
    EtaTooLarge { eta: f64, k: usize, limit: f64 },
    #[error(
        "clean-label dominance fails at instance {index}: clean mass {clean_mass} \
         vs max off-class rate {max_off}"
    )]
    NotCleanDominant {
        index: usize,
        clean_mass: f64,
        max_off: f64,
    },
    #[error("noise profile is {0}")]
    InvalidProfile(&'static str),
    #[error(
        "instance-dependent noise has no analytic per-instance rates; compute a \
         profile from the realized rates with `noise::instance_noise_profile`"
    )]
    InstanceRatesRequired,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("brute-force argmin supports at most {max} classes, got K = {got}")]
    TooManyClasses { got: usize, max: usize },
    #[error("grid resolution {0} out of range; need 0 < resolution <= 0.02")]
    BadResolution(f64),
    #[error("{0} and labels have different lengths")]
    LengthMismatch(&'static str),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("classifier does not fit the dataset: {0}")]
    ClassifierMismatch(String),
}

/// A nonnegative quantity that may be infinite (gradient suprema, variation
/// ratios, certification thresholds). Serialized as a JSON number when
/// finite and as the string `"inf"` otherwise, so readers never have to
/// guess at float sentinels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    /// Maps IEEE infinities to [`Extended::Infinite`]. `x` must not be NaN.
    pub fn from_f64(x: f64) -> Self {
        debug_assert!(!x.is_nan());
        if x.is_infinite() {
            Extended::Infinite
        } else {
            Extended::Finite(x)
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Extended::Finite(x) => Some(x),
            Extended::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Extended::Infinite)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Extended::Finite(x) => x,
            Extended::Infinite => f64::INFINITY,
        }
    }
}

impl PartialOrd for Extended {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extended::Finite(x) => write!(f, "{x}"),
            Extended::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Extended::Finite(x) => serializer.serialize_f64(*x),
            Extended::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ExtendedVisitor;

        impl Visitor<'_> for ExtendedVisitor {
            type Value = Extended;

            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a finite number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, x: f64) -> Result<Extended, E> {
                if x.is_finite() {
                    Ok(Extended::Finite(x))
                } else {
                    Err(E::custom("non-finite number; use the string \"inf\""))
                }
            }

            fn visit_u64<E: de::Error>(self, x: u64) -> Result<Extended, E> {
                Ok(Extended::Finite(x as f64))
            }

            fn visit_i64<E: de::Error>(self, x: i64) -> Result<Extended, E> {
                Ok(Extended::Finite(x as f64))
            }

            fn visit_str<E: de::Error>(self, s: &str) -> Result<Extended, E> {
                if s == "inf" {
                    Ok(Extended::Infinite)
                } else {
                    Err(E::custom(format!("expected \"inf\", got {s:?}")))
                }
            }
        }

        deserializer.deserialize_any(ExtendedVisitor)
    }
}

/// How a [`VariationReport`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    ClosedForm,
    NumericGrid,
}

/// Gradient magnitude range of a single loss family over `u ∈ (0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationReport {
    pub loss: LossSpec,
    /// `inf |ℓ'|` over (0,1); zero exactly when the gradient vanishes at a
    /// boundary (symmetric-labels loss with `a = 1`).
    pub grad_abs_min: f64,
    pub grad_abs_max: Extended,
    pub variation_ratio: Extended,
    /// `1 / grad_abs_min`; multiplying the loss by this puts the slope
    /// floor at 1, the scale the defect and bound statements assume.
    pub normalization_c: Extended,
    pub method: RatioMethod,
}

/// The numeric estimator reports [`Extended::Infinite`] once the observed
/// max/min gradient ratio exceeds this, rather than an arbitrary huge float.
pub const UNBOUNDED_RATIO_SENTINEL: f64 = 1e9;

/// Minimum grid size [`variation_ratio_numeric`] accepts.
pub const MIN_GRID_STEPS: usize = 1000;

/// Exact gradient extrema and variation ratio per family.
///
/// All families here have monotone gradient magnitude in `u`, so the
/// extrema sit at the interval endpoints and come out in closed form:
///
/// | family  | ratio                                | unbounded when |
/// |---------|--------------------------------------|----------------|
/// | `ce`    | ∞                                    | always         |
/// | `mae`   | 1                                    | never          |
/// | `el`    | e                                    | never          |
/// | `vce(a)`| (1+a)/a                              | a = 0          |
/// | `vel(a)`| a                                    | never          |
/// | `vsl(a)`| (1+a)·ln2 / (ln2 − ln(1+a))          | a = 1          |
/// | `sl`    | ∞                                    | always         |
///
/// Composite and normalized losses have no scalar gradient, so `nce` and
/// combinations are rejected.
pub fn variation_ratio_closed(spec: &LossSpec) -> Result<VariationReport, AnalysisError> {
    spec.validate()?;
    use std::f64::consts::{E, LN_2};
    let (min, max, ratio) = match *spec {
        LossSpec::Ce => (1.0, Extended::Infinite, Extended::Infinite),
        LossSpec::Mae => (2.0, Extended::Finite(2.0), Extended::Finite(1.0)),
        LossSpec::El => (
            (-1.0f64).exp(),
            Extended::Finite(1.0),
            Extended::Finite(E),
        ),
        LossSpec::Vce { a } if a == 0.0 => (1.0, Extended::Infinite, Extended::Infinite),
        LossSpec::Vce { a } => (
            1.0 / (1.0 + a),
            Extended::Finite(1.0 / a),
            Extended::Finite((1.0 + a) / a),
        ),
        LossSpec::Vel { a } => (
            a.ln() / a,
            Extended::Finite(a.ln()),
            Extended::Finite(a),
        ),
        LossSpec::Sl => (0.0, Extended::Finite(2.0 * LN_2), Extended::Infinite),
        LossSpec::Vsl { a } if a == 1.0 => {
            (0.0, Extended::Finite(2.0 * LN_2), Extended::Infinite)
        }
        LossSpec::Vsl { a } => {
            let margin = LN_2 - (1.0 + a).ln();
            (
                2.0 * margin / (1.0 + a),
                Extended::Finite(2.0 * LN_2),
                Extended::Finite((1.0 + a) * LN_2 / margin),
            )
        }
        LossSpec::Nce | LossSpec::Combined { .. } => {
            return Err(AnalysisError::UnsupportedFamily(spec.to_string()))
        }
    };
    Ok(VariationReport {
        loss: spec.clone(),
        grad_abs_min: min,
        grad_abs_max: max,
        variation_ratio: ratio,
        normalization_c: if min > 0.0 {
            Extended::Finite(1.0 / min)
        } else {
            Extended::Infinite
        },
        method: RatioMethod::ClosedForm,
    })
}

/// Grid estimate of the variation ratio: `|ℓ'|` on `grid_steps` uniform
/// points over `(1e-6, 1−1e-6)` plus the raw one-sided limits at `u = 0`
/// and `u = 1` (IEEE division delivers the exact infinite limits), so for
/// every family here the estimate matches the closed form to rounding
/// error. Ratios past [`UNBOUNDED_RATIO_SENTINEL`] report as infinite.
pub fn variation_ratio_numeric(
    spec: &LossSpec,
    grid_steps: usize,
) -> Result<VariationReport, AnalysisError> {
    spec.validate()?;
    if !spec.is_single() {
        return Err(AnalysisError::UnsupportedFamily(spec.to_string()));
    }
    if grid_steps < MIN_GRID_STEPS {
        return Err(AnalysisError::GridTooCoarse {
            got: grid_steps,
            min: MIN_GRID_STEPS,
        });
    }
    const DELTA: f64 = 1e-6;
    let mut min = f64::INFINITY;
    let mut max = 0.0f64;
    let mut record = |u: f64| {
        let g = spec.scalar_grad_limit(u).abs();
        min = min.min(g);
        max = max.max(g);
    };
    record(0.0);
    record(1.0);
    for i in 0..grid_steps {
        record(DELTA + i as f64 * (1.0 - 2.0 * DELTA) / (grid_steps - 1) as f64);
    }
    let ratio = max / min;
    Ok(VariationReport {
        loss: spec.clone(),
        grad_abs_min: min,
        grad_abs_max: Extended::from_f64(max),
        variation_ratio: if ratio > UNBOUNDED_RATIO_SENTINEL {
            Extended::Infinite
        } else {
            Extended::Finite(ratio)
        },
        normalization_c: if min > 0.0 {
            Extended::Finite(1.0 / min)
        } else {
            Extended::Infinite
        },
        method: RatioMethod::NumericGrid,
    })
}

/// Samples `n_pairs` pairs of uniform simplex points and returns the
/// largest observed `|Σ_k c·ℓ(u_k) − Σ_k c·ℓ(v_k)|`, where `c` is the
/// family's normalization constant. This gap is at most `v(L) − 1` for any
/// pair of simplex points: with the slope floor normalized to 1, moving
/// mass between classes changes the all-class sum at a rate bounded by the
/// slope spread.
pub fn symmetric_defect(
    spec: &LossSpec,
    k: usize,
    n_pairs: usize,
    rng_seed: u64,
) -> Result<f64, AnalysisError> {
    let report = variation_ratio_closed(spec)?;
    if report.variation_ratio.is_infinite() {
        return Err(AnalysisError::UnboundedRatio(spec.to_string()));
    }
    let c = 1.0 / report.grad_abs_min;
    if k < 2 {
        return Err(AnalysisError::TooFewClasses(k));
    }
    if n_pairs == 0 {
        return Err(AnalysisError::NoPairs);
    }
    let mut rng = stream(rng_seed, StreamPurpose::Sampling, 0);
    let mut point = vec![0.0; k];
    let mut normalized_sum = |point: &mut Vec<f64>| {
        sample_uniform_simplex(&mut rng, point);
        point.iter().map(|&u| c * spec.scalar_value(u)).sum::<f64>()
    };
    let mut max_defect = 0.0f64;
    let mut u = vec![0.0; k];
    for _ in 0..n_pairs {
        let su = normalized_sum(&mut u);
        let sv = normalized_sum(&mut point);
        max_defect = max_defect.max((su - sv).abs());
    }
    Ok(max_defect)
}

/// Uniform draw from the probability simplex: normalized unit-rate
/// exponentials, via inverse CDF on `1 - U` so the log argument stays in
/// `(0, 1]`.
fn sample_uniform_simplex(rng: &mut rand_chacha::ChaCha8Rng, out: &mut [f64]) {
    use rand::Rng;
    loop {
        let mut total = 0.0;
        for slot in out.iter_mut() {
            let e = -(1.0 - rng.gen::<f64>()).ln();
            *slot = e;
            total += e;
        }
        if total > 0.0 {
            for slot in out.iter_mut() {
                *slot /= total;
            }
            return;
        }
    }
}

/// Which guarantee a [`BoundReport`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Uniform label flips below the `1 - 1/K` consistency limit.
    SymmetricNoise,
    /// Any clean-label-dominant noise, including class- and
    /// instance-dependent rates.
    GeneralNoise,
}

/// An excess-risk guarantee: training under the noise moves the minimizer's
/// clean risk away from the clean optimum by at most `risk_gap_bound`
/// (in normalized loss units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub variation_ratio: f64,
    /// Symmetric: `η/((1−η)K − 1)`. General: the mean clean mass `E[1−η_x]`.
    pub c_const: f64,
    /// General bound only: worst-case margin `min(1 − η_x − η_{x,k})`.
    pub a_const: Option<f64>,
    pub risk_gap_bound: f64,
}

/// Risk-gap bound `c·(v − 1)` with `c = η/((1−η)K − 1)` for symmetric
/// label noise at rate `eta` over `k` classes. Zero exactly when the noise
/// is zero or the loss has constant slope.
pub fn excess_risk_bound_symmetric(
    spec: &LossSpec,
    k: usize,
    eta: f64,
) -> Result<BoundReport, AnalysisError> {
    if k < 2 {
        return Err(AnalysisError::TooFewClasses(k));
    }
    let limit = 1.0 - 1.0 / k as f64;
    if !eta.is_finite() || !(0.0..1.0).contains(&eta) || eta >= limit {
        return Err(AnalysisError::EtaTooLarge { eta, k, limit });
    }
    let v = finite_ratio(spec)?;
    let c = eta / ((1.0 - eta) * k as f64 - 1.0);
    Ok(BoundReport {
        kind: BoundKind::SymmetricNoise,
        variation_ratio: v,
        c_const: c,
        a_const: None,
        risk_gap_bound: c * (v - 1.0),
    })
}

/// Risk-gap bound `(1 + c/a)·(v − 1)` for any clean-label-dominant noise,
/// with `c` the mean clean mass and `a` the smallest clean-vs-off-class
/// margin. Rates come from the model's closed form; instance-dependent
/// models have none, so pass their realized rates to
/// [`excess_risk_bound_from_profile`] instead.
pub fn excess_risk_bound_general(
    spec: &LossSpec,
    noise: &NoiseModel,
    k: usize,
) -> Result<BoundReport, AnalysisError> {
    let profile = analytic_profile_checked(noise, k)?;
    excess_risk_bound_from_profile(spec, &profile)
}

/// As [`excess_risk_bound_general`], from explicit per-instance rates.
pub fn excess_risk_bound_from_profile(
    spec: &LossSpec,
    profile: &NoiseProfile,
) -> Result<BoundReport, AnalysisError> {
    check_profile(profile)?;
    let v = finite_ratio(spec)?;
    let n = profile.len() as f64;
    let c: f64 = profile.flip_rate.iter().map(|&f| 1.0 - f).sum::<f64>() / n;
    let a = profile
        .flip_rate
        .iter()
        .zip(&profile.max_off_rate)
        .map(|(&f, &m)| 1.0 - f - m)
        .fold(f64::INFINITY, f64::min);
    Ok(BoundReport {
        kind: BoundKind::GeneralNoise,
        variation_ratio: v,
        c_const: c,
        a_const: Some(a),
        risk_gap_bound: (1.0 + c / a) * (v - 1.0),
    })
}

/// The certification budget this noise leaves: the worst-case over
/// instances of `(1 − η_x) / max_{k≠y} η_{x,k}`. Any loss whose variation
/// ratio stays at or below it is asymmetric under the noise (see
/// [`certify_asymmetric_under_noise`]). Infinite when some class never
/// flips anywhere (in particular at `η = 0`).
pub fn asymmetry_threshold(noise: &NoiseModel, k: usize) -> Result<Extended, AnalysisError> {
    let profile = analytic_profile_checked(noise, k)?;
    asymmetry_threshold_from_profile(&profile)
}

/// As [`asymmetry_threshold`], from explicit per-instance rates.
pub fn asymmetry_threshold_from_profile(
    profile: &NoiseProfile,
) -> Result<Extended, AnalysisError> {
    check_profile(profile)?;
    let mut threshold = Extended::Infinite;
    for (&f, &m) in profile.flip_rate.iter().zip(&profile.max_off_rate) {
        let here = if m == 0.0 {
            Extended::Infinite
        } else {
            Extended::Finite((1.0 - f) / m)
        };
        if here < threshold {
            threshold = here;
        }
    }
    Ok(threshold)
}

/// Outcome of an asymmetry check. `NotCertified` means neither sufficient
/// condition held, not that the loss is provably symmetric-risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    CertifiedByRatio,
    CertifiedByConcavity,
    NotCertified,
}

/// Whether the family's scalar loss is concave on `(0,1)` (second
/// derivative ≤ 0 everywhere). Closed-form per family where the sign is
/// obvious; the shifted-log families get a numeric slope-monotonicity check.
pub fn loss_is_concave(spec: &LossSpec) -> Result<bool, AnalysisError> {
    spec.validate()?;
    match spec {
        // ℓ' is constant (−2): concave with ℓ'' = 0.
        LossSpec::Mae => Ok(true),
        // 1/u², e^{−u}, 1/(u+a)², (ln a)²·a^{−u}: all strictly positive.
        LossSpec::Ce | LossSpec::El | LossSpec::Vce { .. } | LossSpec::Vel { .. } => Ok(false),
        LossSpec::Sl | LossSpec::Vsl { .. } => {
            const POINTS: usize = 1001;
            const DELTA: f64 = 1e-6;
            let mut prev = f64::INFINITY;
            for i in 0..POINTS {
                let u = DELTA + i as f64 * (1.0 - 2.0 * DELTA) / (POINTS - 1) as f64;
                let g = spec.scalar_grad_limit(u);
                // Concavity means a nonincreasing slope; any genuine rise
                // (beyond rounding slack) disproves it.
                if g > prev + 1e-12 * (1.0 + g.abs()) {
                    return Ok(false);
                }
                prev = g;
            }
            Ok(true)
        }
        LossSpec::Nce | LossSpec::Combined { .. } => {
            Err(AnalysisError::UnsupportedFamily(spec.to_string()))
        }
    }
}

/// Decides whether the weighted risk `Σ_k w_k·ℓ(u_k)` is provably minimized
/// at the vertex of the heaviest class. Two sufficient conditions, checked
/// in order: concavity of ℓ (any weight profile with a strict maximum
/// qualifies), then the ratio test `v(L) ≤ w_t/w_i` against every other
/// class. Weights need a strict unique maximum.
pub fn certify_asymmetric(
    spec: &LossSpec,
    weights: &[f64],
) -> Result<Certificate, AnalysisError> {
    let t = strict_max_weight_index(weights)?;
    if loss_is_concave(spec)? {
        return Ok(Certificate::CertifiedByConcavity);
    }
    let report = variation_ratio_closed(spec)?;
    let v = match report.variation_ratio {
        Extended::Finite(v) => v,
        Extended::Infinite => return Ok(Certificate::NotCertified),
    };
    let certified = weights.iter().enumerate().all(|(i, &w)| {
        // A zero-weight class imposes no constraint.
        i == t || w == 0.0 || v <= weights[t] / w * (1.0 + 1e-12)
    });
    Ok(if certified {
        Certificate::CertifiedByRatio
    } else {
        Certificate::NotCertified
    })
}

/// Certifies a loss against a noise model's worst-case weight profile:
/// concavity first, then `v(L)` against [`asymmetry_threshold`]. An
/// infinite threshold (noise that never flips into some class) certifies
/// every loss.
pub fn certify_asymmetric_under_noise(
    spec: &LossSpec,
    noise: &NoiseModel,
    k: usize,
) -> Result<Certificate, AnalysisError> {
    let threshold = asymmetry_threshold(noise, k)?;
    certify_asymmetric_with_threshold(spec, threshold)
}

/// As [`certify_asymmetric_under_noise`] with a precomputed threshold
/// (e.g. from realized instance-dependent rates).
pub fn certify_asymmetric_with_threshold(
    spec: &LossSpec,
    threshold: Extended,
) -> Result<Certificate, AnalysisError> {
    if loss_is_concave(spec)? {
        return Ok(Certificate::CertifiedByConcavity);
    }
    let certified = match (variation_ratio_closed(spec)?.variation_ratio, threshold) {
        (_, Extended::Infinite) => true,
        (Extended::Infinite, _) => false,
        (Extended::Finite(v), Extended::Finite(t)) => v <= t * (1.0 + 1e-12),
    };
    Ok(if certified {
        Certificate::CertifiedByRatio
    } else {
        Certificate::NotCertified
    })
}

/// A simplex lattice point and the weighted risk it attains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgminReport {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Exhaustively minimizes `Σ_k w_k·L(u, k)` over the simplex lattice with
/// the given resolution. Risks within a 1e-12 relative band count as tied,
/// and ties break toward the lexicographically smallest point; without the
/// band, rounding noise in genuinely flat directions would pick an
/// arbitrary interior point. Exponential in K, hence the K ≤ 4 cap; its
/// purpose is validating certificates, not scale.
pub fn argmin_weighted_risk_bruteforce(
    spec: &LossSpec,
    weights: &[f64],
    grid_resolution: f64,
) -> Result<ArgminReport, AnalysisError> {
    spec.validate()?;
    const MAX_K: usize = 4;
    let k = weights.len();
    if k < 2 {
        return Err(AnalysisError::TooFewClasses(k));
    }
    if k > MAX_K {
        return Err(AnalysisError::TooManyClasses { got: k, max: MAX_K });
    }
    check_weights(weights)?;
    if !grid_resolution.is_finite() || grid_resolution <= 0.0 || grid_resolution > 0.02 {
        return Err(AnalysisError::BadResolution(grid_resolution));
    }
    let n = (1.0 / grid_resolution).round() as usize;
    let mut point = vec![0.0; k];
    let mut best_value = f64::INFINITY;
    let mut best_point = vec![0.0; k];
    let mut counts = vec![0usize; k];
    // Compositions of n into k parts, visited in lexicographic order, so
    // keeping the first strict minimum realizes the tie-break.
    for_each_composition(n, k, &mut counts, 0, &mut |counts| {
        for (slot, &c) in point.iter_mut().zip(counts.iter()) {
            *slot = c as f64 / n as f64;
        }
        let risk: f64 = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| w * spec.value_unchecked(&point, j))
            .sum();
        // Losses are nonnegative, so a relative band suffices for ties.
        if risk < best_value * (1.0 - 1e-12) {
            best_value = risk;
            best_point.copy_from_slice(&point);
        }
    });
    Ok(ArgminReport {
        point: best_point,
        value: best_value,
    })
}

fn for_each_composition(
    n_left: usize,
    k: usize,
    counts: &mut Vec<usize>,
    idx: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if idx == k - 1 {
        counts[idx] = n_left;
        visit(counts);
        return;
    }
    for c in 0..=n_left {
        counts[idx] = c;
        for_each_composition(n_left - c, k, counts, idx + 1, visit);
    }
}

/// Mean loss of a classifier's predictions over a dataset — the empirical
/// risk, and the noisy-label risk when the dataset's labels are corrupted.
pub fn empirical_risk<C: crate::nn::Classifier>(
    spec: &LossSpec,
    model: &C,
    dataset: &crate::data::LabeledDataset,
) -> Result<f64, AnalysisError> {
    if model.n_classes() != dataset.k {
        return Err(AnalysisError::ClassifierMismatch(format!(
            "model outputs {} classes but the dataset has {}",
            model.n_classes(),
            dataset.k
        )));
    }
    let probs = model
        .class_probabilities(dataset.features.view())
        .map_err(|e| AnalysisError::ClassifierMismatch(e.to_string()))?;
    mean_loss_rows(spec, probs.view(), &dataset.labels)
}

/// Mean loss over rows of class probabilities, one label per row. The
/// empirical risk of whatever produced the rows.
pub fn mean_loss_rows(
    spec: &LossSpec,
    probs: ndarray::ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<f64, AnalysisError> {
    spec.validate()?;
    if probs.nrows() != labels.len() {
        return Err(AnalysisError::LengthMismatch("probability rows"));
    }
    if labels.is_empty() {
        return Err(AnalysisError::EmptyInput("probability rows"));
    }
    let mut total = 0.0;
    for (row, &label) in probs.rows().into_iter().zip(labels) {
        let value = match row.as_slice() {
            Some(s) => spec.value(s, label)?,
            None => spec.value(&row.to_vec(), label)?,
        };
        total += value;
    }
    Ok(total / labels.len() as f64)
}

// ====== Internals ======

fn finite_ratio(spec: &LossSpec) -> Result<f64, AnalysisError> {
    variation_ratio_closed(spec)?
        .variation_ratio
        .finite()
        .ok_or_else(|| AnalysisError::UnboundedRatio(spec.to_string()))
}

fn analytic_profile_checked(
    noise: &NoiseModel,
    k: usize,
) -> Result<NoiseProfile, AnalysisError> {
    if k < 2 {
        return Err(AnalysisError::TooFewClasses(k));
    }
    noise
        .validate()
        .map_err(|_| AnalysisError::InvalidProfile("built from an invalid noise model"))?;
    noise
        .analytic_profile(k)
        .ok_or(AnalysisError::InstanceRatesRequired)
}

fn check_profile(profile: &NoiseProfile) -> Result<(), AnalysisError> {
    if profile.flip_rate.len() != profile.max_off_rate.len() {
        return Err(AnalysisError::InvalidProfile("length-mismatched"));
    }
    if profile.is_empty() {
        return Err(AnalysisError::InvalidProfile("empty"));
    }
    for (i, (&f, &m)) in profile
        .flip_rate
        .iter()
        .zip(&profile.max_off_rate)
        .enumerate()
    {
        if !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&m) {
            return Err(AnalysisError::InvalidProfile("out of [0,1]"));
        }
        if 1.0 - f <= m {
            return Err(AnalysisError::NotCleanDominant {
                index: i,
                clean_mass: 1.0 - f,
                max_off: m,
            });
        }
    }
    Ok(())
}

fn check_weights(weights: &[f64]) -> Result<(), AnalysisError> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(AnalysisError::InvalidWeights(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(AnalysisError::InvalidWeights(
            "weights must not all be zero".into(),
        ));
    }
    Ok(())
}

fn strict_max_weight_index(weights: &[f64]) -> Result<usize, AnalysisError> {
    if weights.len() < 2 {
        return Err(AnalysisError::TooFewClasses(weights.len()));
    }
    check_weights(weights)?;
    let (t, &w_t) = weights
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.total_cmp(b))
        .expect("nonempty");
    let tied = weights
        .iter()
        .enumerate()
        .any(|(i, &w)| i != t && w == w_t);
    if tied {
        return Err(AnalysisError::InvalidWeights(format!(
            "maximum weight {w_t} is tied; the target class must be unique"
        )));
    }
    Ok(t)
}

// ====== Tests ======
