//! Label corruption under three noise models, plus empirical noise
//! statistics.
//!
//! - Symmetric: every label flips with probability `eta` to a uniformly
//!   random *different* class, so each off class receives `eta/(K-1)`.
//! - Asymmetric circular: flips go to the next class, `y → (y+1) mod K`,
//!   a class-conditional pattern with one dominant confusion per class.
//! - Instance-dependent: each instance gets its own flip rate `q_i` drawn
//!   from a truncated normal around `eta`, and flip *targets* follow a
//!   softmax over random projections of the instance's features, so similar
//!   inputs are confused with the same wrong classes.
//!
//! Corruption draws one ChaCha stream per instance (see [`crate::rng`]),
//! so results are byte-identical however the work is partitioned, and the
//! realized per-instance rates can be recomputed without re-running the
//! label draws (see [`instance_noise_profile`]).

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, StreamPurpose};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("noise rate must satisfy {constraint}, got eta = {eta}")]
    RateOutOfRange { eta: f64, constraint: &'static str },
    #[error("rate_std must be finite and nonnegative, got {0}")]
    InvalidRateStd(f64),
    #[error("noise needs at least 2 classes, got K = {0}")]
    TooFewClasses(usize),
    #[error("label {label} at index {index} out of range for {k} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        k: usize,
    },
    #[error("feature matrix has {rows} rows but there are {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("feature matrix contains a non-finite value at row {0}")]
    NonFiniteFeature(usize),
    #[error("class {0} never occurs among the clean labels; its transition row is undefined")]
    DegenerateClass(usize),
    #[error("clean and noisy label sequences have different lengths ({clean} vs {noisy})")]
    SequenceMismatch { clean: usize, noisy: usize },
}

/// Which of the three corruption processes to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    AsymmetricCircular,
    InstanceDependent,
}

/// A noise process description: kind, target overall flip rate, and (for
/// instance-dependent noise) the spread of per-instance rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub eta: f64,
    /// Truncated-normal spread of per-instance rates; only read by the
    /// instance-dependent kind.
    #[serde(default = "default_rate_std")]
    pub rate_std: f64,
}

pub const DEFAULT_RATE_STD: f64 = 0.1;

fn default_rate_std() -> f64 {
    DEFAULT_RATE_STD
}

impl NoiseModel {
    pub fn symmetric(eta: f64) -> Result<Self, NoiseError> {
        check_eta(eta, 1.0, "0 <= eta < 1")?;
        Ok(Self {
            kind: NoiseKind::Symmetric,
            eta,
            rate_std: DEFAULT_RATE_STD,
        })
    }

    /// `eta >= 0.5` makes the flip target as likely as the clean label and
    /// breaks clean-label dominance; construction still succeeds (callers
    /// may want the degenerate regime) — check [`NoiseModel::clean_label_dominant`].
    pub fn asymmetric_circular(eta: f64) -> Result<Self, NoiseError> {
        check_eta(eta, 1.0, "0 <= eta < 1")?;
        Ok(Self {
            kind: NoiseKind::AsymmetricCircular,
            eta,
            rate_std: DEFAULT_RATE_STD,
        })
    }

    pub fn instance_dependent(eta: f64, rate_std: f64) -> Result<Self, NoiseError> {
        if !(0.0..=0.6).contains(&eta) || !eta.is_finite() {
            return Err(NoiseError::RateOutOfRange {
                eta,
                constraint: "0 <= eta <= 0.6",
            });
        }
        if !rate_std.is_finite() || rate_std < 0.0 {
            return Err(NoiseError::InvalidRateStd(rate_std));
        }
        Ok(Self {
            kind: NoiseKind::InstanceDependent,
            eta,
            rate_std,
        })
    }

    /// Re-checks the rate constraints; needed for deserialized models.
    pub fn validate(&self) -> Result<(), NoiseError> {
        match self.kind {
            NoiseKind::Symmetric => Self::symmetric(self.eta).map(|_| ()),
            NoiseKind::AsymmetricCircular => Self::asymmetric_circular(self.eta).map(|_| ()),
            NoiseKind::InstanceDependent => {
                Self::instance_dependent(self.eta, self.rate_std).map(|_| ())
            }
        }
    }

    /// Whether the clean label stays the most probable observed label for
    /// every instance. `None` for instance-dependent noise, whose rates
    /// depend on the features; use [`instance_noise_profile`] there.
    pub fn clean_label_dominant(&self, k: usize) -> Option<bool> {
        self.analytic_profile(k).map(|p| p.is_clean_dominant())
    }

    /// Per-instance rates in closed form. Symmetric and circular noise
    /// treat every instance identically, so the profile has a single entry;
    /// instance-dependent noise has no closed form and returns `None`.
    pub fn analytic_profile(&self, k: usize) -> Option<NoiseProfile> {
        match self.kind {
            NoiseKind::Symmetric => Some(NoiseProfile {
                flip_rate: vec![self.eta],
                max_off_rate: vec![self.eta / (k - 1) as f64],
            }),
            NoiseKind::AsymmetricCircular => Some(NoiseProfile {
                flip_rate: vec![self.eta],
                max_off_rate: vec![self.eta],
            }),
            NoiseKind::InstanceDependent => None,
        }
    }
}

/// The outcome of one corruption run.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    pub noisy_labels: Vec<usize>,
    /// `flip_mask[i]` is true iff `noisy_labels[i]` differs from the clean label.
    pub flip_mask: Vec<bool>,
    /// Per-instance flip rates `q_i`; present only for instance-dependent noise.
    pub realized_rates: Option<Vec<f64>>,
}

impl CorruptionRecord {
    pub fn flip_fraction(&self) -> f64 {
        if self.flip_mask.is_empty() {
            return 0.0;
        }
        self.flip_mask.iter().filter(|&&f| f).count() as f64 / self.flip_mask.len() as f64
    }
}

/// Per-instance noise rates: the overall flip probability `η_x` and the
/// largest probability of any single wrong class, `max_{k≠y} η_{x,k}`.
/// These two numbers per instance are all the robustness bounds need.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    pub flip_rate: Vec<f64>,
    pub max_off_rate: Vec<f64>,
}

impl NoiseProfile {
    /// Clean-label dominance: the correct label stays strictly more likely
    /// than any single wrong label, for every instance.
    pub fn is_clean_dominant(&self) -> bool {
        self.flip_rate
            .iter()
            .zip(&self.max_off_rate)
            .all(|(&f, &m)| 1.0 - f > m)
    }

    pub fn len(&self) -> usize {
        self.flip_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flip_rate.is_empty()
    }
}

// ====== Corruption ======

/// Flips each label with probability `eta` to a uniformly random different
/// class. Instance `i` draws from stream `(rng_seed, Corruption, i)`.
pub fn corrupt_symmetric(
    labels: &[usize],
    k: usize,
    eta: f64,
    rng_seed: u64,
) -> Result<CorruptionRecord, NoiseError> {
    check_eta(eta, 1.0, "0 <= eta < 1")?;
    check_labels(labels, k)?;
    corrupt_with(labels, rng_seed, |rng, &y| {
        if rng.gen::<f64>() < eta {
            // Uniform over the K-1 other classes: draw in 0..K-1 and skip y.
            let j = rng.gen_range(0..k - 1);
            if j >= y {
                j + 1
            } else {
                j
            }
        } else {
            y
        }
    })
}

/// Flips each label with probability `eta` to the next class `(y+1) mod K`.
pub fn corrupt_asymmetric_circular(
    labels: &[usize],
    k: usize,
    eta: f64,
    rng_seed: u64,
) -> Result<CorruptionRecord, NoiseError> {
    check_eta(eta, 1.0, "0 <= eta < 1")?;
    check_labels(labels, k)?;
    corrupt_with(labels, rng_seed, |rng, &y| {
        if rng.gen::<f64>() < eta {
            (y + 1) % k
        } else {
            y
        }
    })
}

/// Instance-dependent corruption:
///
/// 1. draw a per-instance rate `q_i ~ Normal(eta, rate_std)` truncated to `[0, 1]`;
/// 2. draw one fixed projection matrix (d×K) per class from the standard
///    normal, on the run-global stream;
/// 3. project the instance's features through its class's matrix, mask the
///    clean class to `-∞`, and softmax the rest into flip-target weights;
/// 4. give the clean label probability `1 - q_i` and scale the weights by `q_i`;
/// 5. sample the observed label from that distribution.
///
/// `realized_rates` records the `q_i`.
pub fn corrupt_instance_dependent<'a>(
    features: ArrayView2<'a, f64>,
    labels: &'a [usize],
    k: usize,
    eta: f64,
    rate_std: f64,
    rng_seed: u64,
) -> Result<CorruptionRecord, NoiseError> {
    let gen = InstanceNoise::new(features, labels, k, eta, rate_std, rng_seed)?;
    let n = labels.len();
    let mut noisy = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for i in 0..n {
        let (q, dist, mut rng) = gen.flip_distribution(i);
        let u: f64 = rng.gen();
        noisy.push(sample_categorical(&dist, u));
        rates.push(q);
    }
    let flip_mask: Vec<bool> = noisy.iter().zip(labels).map(|(n, c)| n != c).collect();
    Ok(CorruptionRecord {
        noisy_labels: noisy,
        flip_mask,
        realized_rates: Some(rates),
    })
}

/// Recomputes the per-instance rates an instance-dependent corruption run
/// realizes, without sampling any labels: same seed, same streams, same
/// `q_i` and flip distributions as [`corrupt_instance_dependent`].
pub fn instance_noise_profile<'a>(
    features: ArrayView2<'a, f64>,
    labels: &'a [usize],
    k: usize,
    eta: f64,
    rate_std: f64,
    rng_seed: u64,
) -> Result<NoiseProfile, NoiseError> {
    let gen = InstanceNoise::new(features, labels, k, eta, rate_std, rng_seed)?;
    let n = labels.len();
    let mut flip_rate = Vec::with_capacity(n);
    let mut max_off_rate = Vec::with_capacity(n);
    for i in 0..n {
        let (q, dist, _) = gen.flip_distribution(i);
        flip_rate.push(q);
        let max_off = dist
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != labels[i])
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        max_off_rate.push(max_off);
    }
    Ok(NoiseProfile {
        flip_rate,
        max_off_rate,
    })
}

/// Applies whichever corruption `model` describes. Features are only read
/// for the instance-dependent kind.
pub fn corrupt<'a>(
    features: ArrayView2<'a, f64>,
    labels: &'a [usize],
    k: usize,
    model: &NoiseModel,
    rng_seed: u64,
) -> Result<CorruptionRecord, NoiseError> {
    model.validate()?;
    match model.kind {
        NoiseKind::Symmetric => corrupt_symmetric(labels, k, model.eta, rng_seed),
        NoiseKind::AsymmetricCircular => {
            corrupt_asymmetric_circular(labels, k, model.eta, rng_seed)
        }
        NoiseKind::InstanceDependent => {
            corrupt_instance_dependent(features, labels, k, model.eta, model.rate_std, rng_seed)
        }
    }
}

// ====== Empirical statistics ======

/// Row `y` is the empirical distribution of noisy labels among samples whose
/// clean label is `y`. Every class must occur in `clean` at least once.
pub fn empirical_transition_matrix(
    clean: &[usize],
    noisy: &[usize],
    k: usize,
) -> Result<Vec<Vec<f64>>, NoiseError> {
    if clean.len() != noisy.len() {
        return Err(NoiseError::SequenceMismatch {
            clean: clean.len(),
            noisy: noisy.len(),
        });
    }
    check_labels(clean, k)?;
    check_labels(noisy, k)?;
    let mut counts = vec![vec![0usize; k]; k];
    for (&c, &n) in clean.iter().zip(noisy) {
        counts[c][n] += 1;
    }
    let mut matrix = vec![vec![0.0; k]; k];
    for (c, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            return Err(NoiseError::DegenerateClass(c));
        }
        for (n, &count) in row.iter().enumerate() {
            matrix[c][n] = count as f64 / total as f64;
        }
    }
    Ok(matrix)
}

// ====== Internals ======

fn check_eta(eta: f64, upper: f64, constraint: &'static str) -> Result<(), NoiseError> {
    if !eta.is_finite() || eta < 0.0 || eta >= upper {
        return Err(NoiseError::RateOutOfRange { eta, constraint });
    }
    Ok(())
}

fn check_labels(labels: &[usize], k: usize) -> Result<(), NoiseError> {
    if k < 2 {
        return Err(NoiseError::TooFewClasses(k));
    }
    for (index, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(NoiseError::LabelOutOfRange { index, label, k });
        }
    }
    Ok(())
}

fn corrupt_with(
    labels: &[usize],
    rng_seed: u64,
    mut flip: impl FnMut(&mut rand_chacha::ChaCha8Rng, &usize) -> usize,
) -> Result<CorruptionRecord, NoiseError> {
    let noisy: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let mut rng = stream(rng_seed, StreamPurpose::Corruption, i as u64);
            flip(&mut rng, y)
        })
        .collect();
    let flip_mask: Vec<bool> = noisy.iter().zip(labels).map(|(n, c)| n != c).collect();
    Ok(CorruptionRecord {
        noisy_labels: noisy,
        flip_mask,
        realized_rates: None,
    })
}

/// Shared machinery of the instance-dependent generator: holds the
/// per-class projection matrices and hands out per-instance distributions.
struct InstanceNoise<'a> {
    features: ArrayView2<'a, f64>,
    labels: &'a [usize],
    eta: f64,
    rate_std: f64,
    seed: u64,
    /// Projection matrices, one d×K matrix per class, drawn from the
    /// run-global stream in class order.
    projections: Vec<ndarray::Array2<f64>>,
}

impl<'a> InstanceNoise<'a> {
    fn new(
        features: ArrayView2<'a, f64>,
        labels: &'a [usize],
        k: usize,
        eta: f64,
        rate_std: f64,
        seed: u64,
    ) -> Result<Self, NoiseError> {
        if !(0.0..=0.6).contains(&eta) || !eta.is_finite() {
            return Err(NoiseError::RateOutOfRange {
                eta,
                constraint: "0 <= eta <= 0.6",
            });
        }
        if !rate_std.is_finite() || rate_std < 0.0 {
            return Err(NoiseError::InvalidRateStd(rate_std));
        }
        check_labels(labels, k)?;
        if features.nrows() != labels.len() {
            return Err(NoiseError::LengthMismatch {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        for (i, row) in features.rows().into_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(NoiseError::NonFiniteFeature(i));
            }
        }
        let d = features.ncols();
        let mut w_rng = stream(seed, StreamPurpose::CorruptionGlobal, 0);
        let projections = (0..k)
            .map(|_| {
                ndarray::Array2::from_shape_simple_fn((d, k), || w_rng.sample(StandardNormal))
            })
            .collect();
        Ok(Self {
            features,
            labels,
            eta,
            rate_std,
            seed,
            projections,
        })
    }

    /// Rate `q_i`, flip distribution over all K classes, and the instance's
    /// stream positioned right after the draws that produced them.
    fn flip_distribution(&self, i: usize) -> (f64, Vec<f64>, rand_chacha::ChaCha8Rng) {
        let mut rng = stream(self.seed, StreamPurpose::Corruption, i as u64);
        let q = if self.rate_std == 0.0 {
            self.eta
        } else {
            truncated_normal(&mut rng, self.eta, self.rate_std)
        };
        let y = self.labels[i];
        let mut logits = self.features.row(i).dot(&self.projections[y]);
        logits[y] = f64::NEG_INFINITY;
        let weights = masked_softmax(logits.as_slice().unwrap());
        let mut dist: Vec<f64> = weights.iter().map(|&w| q * w).collect();
        dist[y] = 1.0 - q;
        (q, dist, rng)
    }
}

/// Rejection-sampled Normal(mean, std) conditioned on [0, 1]. With the rates
/// this crate uses (mean ≤ 0.6, std ~ 0.1) the acceptance region covers most
/// of the mass, so the loop terminates almost immediately; the clamp fallback
/// is unreachable in practice but keeps the function total.
fn truncated_normal(rng: &mut rand_chacha::ChaCha8Rng, mean: f64, std: f64) -> f64 {
    for _ in 0..1000 {
        let x: f64 = mean + std * rng.sample::<f64, _>(StandardNormal);
        if (0.0..=1.0).contains(&x) {
            return x;
        }
    }
    mean.clamp(0.0, 1.0)
}

/// Softmax that treats `-∞` entries as zero weight, with max-subtraction
/// over the remaining entries.
fn masked_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&p| (p - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Inverse-CDF draw from `dist` at uniform coordinate `u`, walking classes
/// in index order. Rounding can leave the total a hair under 1; the final
/// positive-mass class absorbs that sliver.
fn sample_categorical(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (c, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_positive = c;
            acc += p;
            if u < acc {
                return c;
            }
        }
    }
    last_positive
}

// ====== Tests ======
