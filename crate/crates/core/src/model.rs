//! Probabilistic model for tag classifiers: scores, marginal losses, and
//! analytic gradients for both plain and robust logistic regression.
//!
//! The robust model treats the observed tag `y` as a noisy view of a latent
//! true label `z` with `P(z=1|x) = sigmoid(w.x + b)`, `P(y=1|z=1) = pi` and
//! `P(y=0|z=0) = gamma`. Setting `pi = gamma = 1` recovers plain logistic
//! regression bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Score above which the robust loss summand saturates: `sigmoid(s)` is 1 to
/// within f64 epsilon, so the per-example likelihood reduces to `pi` (for
/// `y=1`) or `1-pi` (for `y=0`).
pub const SCORE_SATURATION: f64 = 35.0;

/// Dense image descriptor of fixed dimension. Values are stored in the same
/// 32-bit precision as the on-disk feature format; arithmetic is in f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f32>,
}

impl FeatureVector {
    /// Rejects non-finite entries; dimension agreement is enforced where
    /// vectors meet a model or a batch.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { id: None });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn dot(&self, w: &[f64]) -> f64 {
        debug_assert_eq!(self.values.len(), w.len());
        self.values
            .iter()
            .zip(w)
            .map(|(x, wi)| f64::from(*x) * wi)
            .sum()
    }
}

/// Per-tag classifier parameters.
///
/// `pi` is the probability that a truly present concept gets tagged,
/// `gamma` the probability that an absent concept stays untagged, and
/// `beta` the calibration offset fitted after training (0 until then).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagModel {
    pub tag: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub pi: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl TagModel {
    /// Fresh model: zero weights and bias, noise-free tagging parameters.
    pub fn new(tag: impl Into<String>, dim: usize) -> Self {
        Self {
            tag: tag.into(),
            weights: vec![0.0; dim],
            bias: 0.0,
            pi: 1.0,
            gamma: 1.0,
            beta: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w.x + b + beta`, rejecting dimension mismatches.
    pub fn score(&self, x: &FeatureVector) -> Result<f64> {
        if x.dim() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.dim(),
            });
        }
        Ok(self.raw_score(x))
    }

    pub(crate) fn raw_score(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias + self.beta
    }

    /// Probability that an uploader supplies this tag:
    /// `pi*sigmoid(s) + (1-gamma)*(1-sigmoid(s))`.
    pub fn predict_y(&self, x: &FeatureVector) -> Result<f64> {
        let s = self.score(x)?;
        let sig = sigmoid(s);
        Ok(self.pi * sig + (1.0 - self.gamma) * (1.0 - sig))
    }

    /// Probability that the concept is truly present: `sigmoid(w.x + b + beta)`.
    pub fn predict_z(&self, x: &FeatureVector) -> Result<f64> {
        Ok(sigmoid(self.score(x)?))
    }
}

/// Observed-label batch: borrowed feature vectors plus 0/1 tags.
#[derive(Debug, Clone)]
pub struct LabeledBatch<'a> {
    features: Vec<&'a FeatureVector>,
    labels: Vec<bool>,
    dim: usize,
}

impl<'a> LabeledBatch<'a> {
    pub fn new(features: Vec<&'a FeatureVector>, labels: Vec<bool>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "batch has {} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].dim();
        for x in &features {
            if x.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.dim(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn from_slices(features: &'a [FeatureVector], labels: &[bool]) -> Result<Self> {
        Self::new(features.iter().collect(), labels.to_vec())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a FeatureVector, bool)> + '_ {
        self.features.iter().copied().zip(self.labels.iter().copied())
    }
}

/// Numerically stable sigmoid. Finite inputs map strictly inside (0, 1):
/// the tails clamp to the nearest representable values instead of
/// underflowing to exactly 0 or rounding to exactly 1.
pub fn sigmoid(s: f64) -> f64 {
    let raw = if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    };
    raw.clamp(f64::from_bits(1), next_below_one())
}

#[inline]
fn next_below_one() -> f64 {
    1.0_f64 - f64::EPSILON / 2.0
}

/// `ln(1 + e^t)` without overflow in either tail.
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `ln(a + b*e^t)` for `t <= 0` and `a, b >= 0` with `a + b > 0`.
/// The `a == 0` case is exact even when `b*e^t` underflows.
fn ln_a_plus_b_exp(a: f64, b: f64, t: f64) -> f64 {
    debug_assert!(t <= 0.0);
    if a == 0.0 {
        b.ln() + t
    } else {
        (a + b * t.exp()).ln()
    }
}

/// Plain logistic regression loss and gradients over a batch.
///
/// Loss is the summed negative log-likelihood, computed through the stable
/// form `ln(1 + e^{-s}) + (1-y) s`. Gradients are `sum (sigmoid(s)-y) x`
/// and the same with a constant-1 feature for the bias.
pub fn lr_loss_grad(w: &[f64], b: f64, batch: &LabeledBatch) -> (f64, Vec<f64>, f64) {
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    for (x, y) in batch.iter() {
        let s = x.dot(w) + b;
        loss += softplus(-s) + if y { 0.0 } else { s };
        let residual = sigmoid(s) - if y { 1.0 } else { 0.0 };
        for (g, v) in grad_w.iter_mut().zip(x.values()) {
            *g += residual * f64::from(*v);
        }
        grad_b += residual;
    }
    (loss, grad_w, grad_b)
}

/// One summand of the robust marginal negative log-likelihood.
///
/// Uses the factorization `P(y=1|s) = sigmoid(s)((1-gamma)e^{-s} + pi)` and
/// `P(y=0|s) = sigmoid(s)(1-pi + gamma e^{-s})`, rewritten per sign of `s`
/// so no intermediate overflows. Above [`SCORE_SATURATION`] (and with
/// `pi < 1`, where the limit is finite) the summand collapses to
/// `-ln pi` / `-ln(1-pi)`.
pub fn rlr_loss_term(pi: f64, gamma: f64, s: f64, y: bool) -> f64 {
    if s > SCORE_SATURATION && pi < 1.0 {
        return if y { -pi.ln() } else { -(1.0 - pi).ln() };
    }
    let base = softplus(-s);
    let ln_mix = if y {
        // ln((1-gamma)e^{-s} + pi)
        if s >= 0.0 {
            ln_a_plus_b_exp(pi, 1.0 - gamma, -s)
        } else {
            -s + ln_a_plus_b_exp(1.0 - gamma, pi, s)
        }
    } else {
        // ln((1-pi) + gamma e^{-s})
        if s >= 0.0 {
            ln_a_plus_b_exp(1.0 - pi, gamma, -s)
        } else {
            -s + ln_a_plus_b_exp(gamma, 1.0 - pi, s)
        }
    };
    base - ln_mix
}

/// Robust marginal negative log-likelihood, summed over the batch.
pub fn rlr_loss(model: &TagModel, batch: &LabeledBatch) -> f64 {
    batch
        .iter()
        .map(|(x, y)| rlr_loss_term(model.pi, model.gamma, model.raw_score(x), y))
        .sum()
}

/// Gradients of the robust marginal negative log-likelihood.
#[derive(Debug, Clone)]
pub struct RlrGrads {
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
    pub grad_pi: f64,
    pub grad_gamma: f64,
}

struct TermGrads {
    d_s: f64,
    d_pi: f64,
    d_gamma: f64,
}

/// Per-example derivatives of [`rlr_loss_term`] with respect to the score,
/// `pi`, and `gamma`. Every ratio is written with the exponential on the
/// small side of the fraction, branching on the sign of `s`; the exact-zero
/// cases `gamma == 1` and `pi == 1` short-circuit to their algebraic limits.
fn rlr_term_grads(pi: f64, gamma: f64, s: f64, y: bool) -> TermGrads {
    if s > SCORE_SATURATION && pi < 1.0 {
        return TermGrads {
            d_s: 0.0,
            d_pi: if y { -1.0 / pi } else { 1.0 / (1.0 - pi) },
            d_gamma: 0.0,
        };
    }
    let sig_neg = sigmoid(-s);
    if y {
        let fp = 1.0 - gamma;
        // mixture fraction (1-gamma)e^{-s} / ((1-gamma)e^{-s} + pi)
        let (frac, d_pi, d_gamma) = if fp == 0.0 {
            (0.0, -1.0 / pi, if s >= 0.0 { (-s).exp() / pi } else { 1.0 / (pi * s.exp()) })
        } else if s >= 0.0 {
            let num = fp * (-s).exp();
            let den = num + pi;
            (num / den, -1.0 / den, (-s).exp() / den)
        } else {
            let den = fp + pi * s.exp();
            (fp / den, -s.exp() / den, 1.0 / den)
        };
        TermGrads {
            d_s: frac - sig_neg,
            d_pi,
            d_gamma,
        }
    } else {
        let fnr = 1.0 - pi;
        // mixture fraction gamma e^{-s} / ((1-pi) + gamma e^{-s})
        let (frac, d_pi, d_gamma) = if fnr == 0.0 {
            let d_pi = if s >= 0.0 { s.exp() / gamma } else { 1.0 / (gamma * (-s).exp()) };
            (1.0, d_pi, -1.0 / gamma)
        } else if s >= 0.0 {
            let num = gamma * (-s).exp();
            let den = fnr + num;
            (num / den, 1.0 / den, -(-s).exp() / den)
        } else {
            let den = fnr * s.exp() + gamma;
            (gamma / den, s.exp() / den, -1.0 / den)
        };
        TermGrads {
            d_s: frac - sig_neg,
            d_pi,
            d_gamma,
        }
    }
}

/// Analytic gradients of [`rlr_loss`] with respect to the weights, bias,
/// `pi`, and `gamma`. Summed over the batch in index order.
pub fn rlr_direct_grads(model: &TagModel, batch: &LabeledBatch) -> RlrGrads {
    let mut grad_w = vec![0.0; model.dim()];
    let mut grad_b = 0.0;
    let mut grad_pi = 0.0;
    let mut grad_gamma = 0.0;
    for (x, y) in batch.iter() {
        let s = model.raw_score(x);
        let g = rlr_term_grads(model.pi, model.gamma, s, y);
        for (gw, v) in grad_w.iter_mut().zip(x.values()) {
            *gw += g.d_s * f64::from(*v);
        }
        grad_b += g.d_s;
        grad_pi += g.d_pi;
        grad_gamma += g.d_gamma;
    }
    RlrGrads {
        grad_w,
        grad_b,
        grad_pi,
        grad_gamma,
    }
}
