//! Stochastic EM training loop for robust tag classifiers.
//!
//! Each minibatch goes through four steps: posterior responsibilities for
//! the latent true labels (E-step), an exponential-moving-average update of
//! the sufficient-statistic tallies, a closed-form update of the noise
//! parameters from those tallies (M-step), and a stochastic gradient step
//! on the weights.

mod batch_em;

pub use batch_em::{batch_em_reference, BatchEmConfig, BatchEmFit};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, softplus, FeatureVector, LabeledBatch, TagModel};

/// Whether the false-positive rate `1 - gamma` is modeled or pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    FixedOne,
    Learned,
}

/// Box constraints applied to the noise parameters after every update.
/// `pi` must stay strictly below 1 during training or the loss diverges on
/// saturated negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamClamps {
    pub pi_floor: f64,
    pub pi_ceiling: f64,
    pub gamma_floor: f64,
    pub gamma_ceiling: f64,
}

impl Default for ParamClamps {
    fn default() -> Self {
        Self {
            pi_floor: 0.01,
            pi_ceiling: 0.999,
            gamma_floor: 0.01,
            gamma_ceiling: 1.0,
        }
    }
}

impl ParamClamps {
    pub fn clamp_pi(&self, pi: f64) -> f64 {
        pi.clamp(self.pi_floor, self.pi_ceiling)
    }

    pub fn clamp_gamma(&self, gamma: f64) -> f64 {
        gamma.clamp(self.gamma_floor, self.gamma_ceiling)
    }
}

/// Exponentially averaged tallies of the minibatch sufficient statistics:
/// mean responsibility, mean `y * alpha`, and mean `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub s_alpha: f64,
    pub s_y_alpha: f64,
    pub s_y: f64,
    pub eta: f64,
}

impl SufficientStats {
    pub fn new(init: f64, eta: f64) -> Self {
        Self {
            s_alpha: init,
            s_y_alpha: init,
            s_y: init,
            eta,
        }
    }

    /// Blend the minibatch means into the running tallies:
    /// `S <- (1 - eta) S + eta S_mb`.
    pub fn update(&mut self, alphas: &[f64], labels: &[bool]) {
        debug_assert_eq!(alphas.len(), labels.len());
        debug_assert!(!alphas.is_empty());
        let n = alphas.len() as f64;
        let mut sum_a = 0.0;
        let mut sum_ya = 0.0;
        let mut sum_y = 0.0;
        for (&a, &y) in alphas.iter().zip(labels) {
            sum_a += a;
            if y {
                sum_ya += a;
                sum_y += 1.0;
            }
        }
        let keep = 1.0 - self.eta;
        self.s_alpha = keep * self.s_alpha + self.eta * sum_a / n;
        self.s_y_alpha = keep * self.s_y_alpha + self.eta * sum_ya / n;
        self.s_y = keep * self.s_y + self.eta * sum_y / n;
    }
}

/// Posterior probability that the true label is 1 given the observed tag
/// and the current score. Tail-stable for any finite score; the exact-zero
/// noise cases short-circuit so `gamma = 1` positives are exactly 1 and
/// `pi = 1` negatives exactly 0.
pub fn posterior_alpha(pi: f64, gamma: f64, s: f64, y: bool) -> f64 {
    if y {
        let fp = 1.0 - gamma;
        if fp == 0.0 {
            return 1.0;
        }
        if s >= 0.0 {
            pi / (pi + fp * (-s).exp())
        } else {
            let e = s.exp();
            pi * e / (pi * e + fp)
        }
    } else {
        let fnr = 1.0 - pi;
        if fnr == 0.0 {
            return 0.0;
        }
        if s >= 0.0 {
            fnr / (fnr + gamma * (-s).exp())
        } else {
            let e = s.exp();
            fnr * e / (fnr * e + gamma)
        }
    }
}

/// E-step: responsibilities for every example in the batch.
pub fn e_step(model: &TagModel, batch: &LabeledBatch) -> Vec<f64> {
    batch
        .iter()
        .map(|(x, y)| posterior_alpha(model.pi, model.gamma, model.raw_score(x), y))
        .collect()
}

/// Result of an M-step: new noise parameters, plus whether the gamma
/// update had to be skipped because the tallies were saturated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepUpdate {
    pub pi: f64,
    pub gamma: f64,
    pub gamma_skipped: bool,
}

/// M-step from the running tallies: `pi = S_ya / S_a` and, in learned mode,
/// `gamma = (1 - S_y - S_a + S_ya) / (1 - S_a)`, both clamped.
///
/// `S_a = 0` is unrecoverable; `S_a = 1` in learned mode only makes the
/// gamma ratio indeterminate, so the previous gamma is kept and the skip is
/// logged and reported.
pub fn m_step(
    stats: &SufficientStats,
    mode: GammaMode,
    clamps: &ParamClamps,
    current_gamma: f64,
) -> Result<MStepUpdate> {
    if stats.s_alpha <= 0.0 {
        return Err(Error::DegenerateStats {
            s_alpha: stats.s_alpha,
        });
    }
    let pi = clamps.clamp_pi(stats.s_y_alpha / stats.s_alpha);
    let (gamma, gamma_skipped) = match mode {
        GammaMode::FixedOne => (1.0, false),
        GammaMode::Learned => {
            if stats.s_alpha >= 1.0 {
                log::debug!("gamma update skipped: s_alpha = {}", stats.s_alpha);
                (current_gamma, true)
            } else {
                let raw = (1.0 - stats.s_y - stats.s_alpha + stats.s_y_alpha)
                    / (1.0 - stats.s_alpha);
                (clamps.clamp_gamma(raw), false)
            }
        }
    };
    Ok(MStepUpdate {
        pi,
        gamma,
        gamma_skipped,
    })
}

/// Gradient of the expected complete negative log-likelihood with respect
/// to the weights and bias, with responsibilities frozen:
/// `sum (sigmoid(s_i) - alpha_i) x_i`.
pub fn em_w_gradient(model: &TagModel, batch: &LabeledBatch, alphas: &[f64]) -> (Vec<f64>, f64) {
    debug_assert_eq!(batch.len(), alphas.len());
    let mut grad_w = vec![0.0; model.dim()];
    let mut grad_b = 0.0;
    for ((x, _), &alpha) in batch.iter().zip(alphas) {
        let residual = sigmoid(model.raw_score(x)) - alpha;
        for (g, v) in grad_w.iter_mut().zip(x.values()) {
            *g += residual * f64::from(*v);
        }
        grad_b += residual;
    }
    (grad_w, grad_b)
}

/// The score-dependent part of the expected complete negative
/// log-likelihood, i.e. the logistic loss with soft targets:
/// `sum softplus(-s_i) + (1 - alpha_i) s_i`. Its gradient is
/// [`em_w_gradient`].
pub fn expected_nll_score_part(
    weights: &[f64],
    bias: f64,
    batch: &LabeledBatch,
    alphas: &[f64],
) -> f64 {
    debug_assert_eq!(batch.len(), alphas.len());
    batch
        .iter()
        .zip(alphas)
        .map(|((x, _), &alpha)| {
            let s = x.dot(weights) + bias;
            softplus(-s) + (1.0 - alpha) * s
        })
        .sum()
}

/// One stochastic gradient step on the weights and bias, using frozen
/// responsibilities. Noise parameters and the calibration offset are left
/// untouched. A non-finite score or gradient aborts with the index of the
/// offending example.
pub fn sgd_step(
    model: &mut TagModel,
    batch: &LabeledBatch,
    alphas: &[f64],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    debug_assert_eq!(batch.len(), alphas.len());
    let mut grad_w = vec![0.0; model.dim()];
    let mut grad_b = 0.0;
    for (i, ((x, _), &alpha)) in batch.iter().zip(alphas).enumerate() {
        let s = model.raw_score(x);
        if !s.is_finite() {
            return Err(Error::NonFiniteGradient { example: i });
        }
        let residual = sigmoid(s) - alpha;
        for (g, v) in grad_w.iter_mut().zip(x.values()) {
            *g += residual * f64::from(*v);
        }
        grad_b += residual;
    }
    for (w, g) in model.weights.iter_mut().zip(&grad_w) {
        *w -= lr * (g + weight_decay * *w);
    }
    model.bias -= lr * (grad_b + weight_decay * model.bias);
    Ok(())
}

/// Learning-rate schedule across minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrDecay {
    Constant,
    /// `lr_t = lr / (1 + decay * t)`.
    InverseTime { decay: f64 },
}

/// Training knobs. `learning_rate` is per-example: the summed minibatch
/// gradient is scaled by `learning_rate / minibatch_size` before the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub minibatch_size: usize,
    pub num_minibatches: usize,
    /// Step size of the sufficient-statistic EMA.
    pub eta: f64,
    pub learning_rate: f64,
    pub lr_decay: LrDecay,
    pub weight_decay: f64,
    pub gamma_mode: GammaMode,
    /// `false` trains a plain logistic regression baseline with
    /// `pi = gamma = 1` frozen.
    pub robust: bool,
    /// Initial value of all three sufficient-statistic tallies.
    pub pi_init_stats: f64,
    /// Starting gamma in learned mode. Must be strictly below 1: at
    /// exactly 1 every positive gets responsibility 1, the tallies keep
    /// `S_y = S_ya` bit for bit, and the gamma update returns 1 forever.
    pub gamma_init: f64,
    pub clamps: ParamClamps,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch_size: 500,
            num_minibatches: 20_000,
            eta: 0.01,
            learning_rate: 0.01,
            lr_decay: LrDecay::Constant,
            weight_decay: 0.0,
            gamma_mode: GammaMode::FixedOne,
            robust: true,
            pi_init_stats: 1.0,
            gamma_init: 0.99,
            clamps: ParamClamps::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::InvalidParameter("minibatch_size must be >= 1".into()));
        }
        if self.num_minibatches == 0 {
            return Err(Error::InvalidParameter("num_minibatches must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParameter("eta must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidParameter("weight_decay must be >= 0".into()));
        }
        if self.gamma_mode == GammaMode::Learned && !(self.gamma_init > 0.0 && self.gamma_init < 1.0)
        {
            return Err(Error::InvalidParameter(
                "gamma_init must lie strictly inside (0, 1) in learned mode".into(),
            ));
        }
        Ok(())
    }

    fn lr_at(&self, minibatch: usize) -> f64 {
        match self.lr_decay {
            LrDecay::Constant => self.learning_rate,
            LrDecay::InverseTime { decay } => {
                self.learning_rate / (1.0 + decay * minibatch as f64)
            }
        }
    }
}

/// One sampled point of a training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub minibatch: usize,
    /// Mean robust loss per example on the sampled minibatch.
    pub loss: f64,
    pub pi: f64,
    pub gamma: f64,
}

/// Train a single tag with Stochastic EM. Minibatches are sampled uniformly
/// with replacement using `config.seed`; summation is in index order, so a
/// fixed seed reproduces the model bit for bit.
pub fn train_tag(
    tag: &str,
    features: &[&FeatureVector],
    labels: &[bool],
    config: &TrainConfig,
) -> Result<TagModel> {
    Ok(train_tag_traced(tag, features, labels, config, 0)?.0)
}

/// As [`train_tag`], recording a trace point every `trace_every` minibatches
/// (0 disables tracing).
pub fn train_tag_traced(
    tag: &str,
    features: &[&FeatureVector],
    labels: &[bool],
    config: &TrainConfig,
    trace_every: usize,
) -> Result<(TagModel, Vec<TracePoint>)> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n = features.len();
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::DegenerateLabels {
            tag: tag.to_string(),
            positives,
            total: n,
        });
    }
    let dim = features[0].dim();
    for x in features {
        if x.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.dim(),
            });
        }
    }

    let mut model = TagModel::new(tag, dim);
    if config.robust {
        model.pi = config.clamps.clamp_pi(1.0);
        if config.gamma_mode == GammaMode::Learned {
            model.gamma = config.clamps.clamp_gamma(config.gamma_init);
        }
    }
    let mut stats = SufficientStats::new(config.pi_init_stats, config.eta);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::new();

    let mut batch_features = Vec::with_capacity(config.minibatch_size);
    let mut batch_labels = Vec::with_capacity(config.minibatch_size);
    for t in 0..config.num_minibatches {
        batch_features.clear();
        batch_labels.clear();
        for _ in 0..config.minibatch_size {
            let i = rng.random_range(0..n);
            batch_features.push(features[i]);
            batch_labels.push(labels[i]);
        }
        let batch = LabeledBatch::new(batch_features.clone(), batch_labels.clone())?;

        let alphas = if config.robust {
            e_step(&model, &batch)
        } else {
            batch.labels().iter().map(|&y| f64::from(u8::from(y))).collect()
        };
        if config.robust {
            stats.update(&alphas, batch.labels());
            let update = m_step(&stats, config.gamma_mode, &config.clamps, model.gamma)?;
            model.pi = update.pi;
            model.gamma = update.gamma;
        }
        let lr = config.lr_at(t);
        sgd_step(&mut model, &batch, &alphas, lr, config.weight_decay)?;

        if trace_every > 0 && (t % trace_every == 0 || t + 1 == config.num_minibatches) {
            let loss = crate::model::rlr_loss(&model, &batch) / batch.len() as f64;
            trace.push(TracePoint {
                minibatch: t,
                loss,
                pi: model.pi,
                gamma: model.gamma,
            });
        }
    }
    Ok((model, trace))
}

/// Per-tag training failure, recorded instead of aborting the run.
#[derive(Debug, Clone, Serialize)]
pub struct TagFailure {
    pub tag: String,
    pub error: String,
}

/// Outcome of a multi-tag training run: the bundle holds every tag that
/// trained, failures are listed separately.
#[derive(Debug)]
pub struct TrainRun {
    pub bundle: crate::bundle::ModelBundle,
    pub failures: Vec<TagFailure>,
    pub traces: Vec<(String, Vec<TracePoint>)>,
}

/// Train one model per vocabulary tag, independently and in parallel.
/// Every tag trains with the same seed, so tags with identical label
/// streams produce identical models; failed tags are reported and omitted
/// from the bundle.
pub fn train_all(
    store: &crate::data::FeatureStore,
    images: &[crate::data::TaggedImage],
    vocab: &crate::data::Vocabulary,
    config: &TrainConfig,
    trace_every: usize,
) -> Result<TrainRun> {
    use rayon::prelude::*;

    if vocab.is_empty() {
        return Err(Error::InvalidParameter("vocabulary is empty".into()));
    }
    if images.is_empty() {
        return Err(Error::InvalidParameter("no training images".into()));
    }
    let mut features = Vec::with_capacity(images.len());
    let mut missing = Vec::new();
    for img in images {
        match img
            .feature_ref
            .or_else(|| store.index_of(&img.image_id))
        {
            Some(idx) => features.push(store.get(idx)),
            None => missing.push(img.image_id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFeatures { ids: missing });
    }

    let tag_sets: Vec<std::collections::HashSet<&str>> = images
        .iter()
        .map(|img| img.tags.iter().map(String::as_str).collect())
        .collect();

    let results: Vec<std::result::Result<(TagModel, Vec<TracePoint>), TagFailure>> = vocab
        .tags()
        .par_iter()
        .map(|tag| {
            let labels: Vec<bool> = tag_sets.iter().map(|set| set.contains(tag.as_str())).collect();
            train_tag_traced(tag, &features, &labels, config, trace_every).map_err(|e| {
                TagFailure {
                    tag: tag.clone(),
                    error: e.to_string(),
                }
            })
        })
        .collect();

    let mut models = Vec::new();
    let mut failures = Vec::new();
    let mut traces = Vec::new();
    for result in results {
        match result {
            Ok((model, trace)) => {
                if trace_every > 0 {
                    traces.push((model.tag.clone(), trace));
                }
                models.push(model);
            }
            Err(failure) => failures.push(failure),
        }
    }
    let bundle = crate::bundle::ModelBundle::new(store.dim(), models)?;
    Ok(TrainRun {
        bundle,
        failures,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rlr_loss;

    fn fv(values: &[f32]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    fn toy_model(pi: f64, gamma: f64) -> TagModel {
        TagModel {
            tag: "t".into(),
            weights: vec![1.0],
            bias: 0.0,
            pi,
            gamma,
            beta: 0.0,
        }
    }

    #[test]
    fn e_step_positive_is_exact_one_without_false_positives() {
        let m = toy_model(0.3, 1.0);
        let xs = [fv(&[-4.0]), fv(&[0.0]), fv(&[7.0])];
        let batch = LabeledBatch::from_slices(&xs, &[true, true, true]).unwrap();
        assert_eq!(e_step(&m, &batch), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn e_step_negative_direct_substitution() {
        // gamma=1, y=0, pi=0.5, sigmoid=0.5 -> (0.5*0.5)/(1 - 0.5*0.5) = 1/3
        let m = toy_model(0.5, 1.0);
        let xs = [fv(&[0.0])];
        let batch = LabeledBatch::from_slices(&xs, &[false]).unwrap();
        let alpha = e_step(&m, &batch)[0];
        assert!((alpha - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn e_step_positive_with_false_positives() {
        // gamma=0.9, y=1, pi=0.9, sigmoid=0.5 -> 0.45/(0.45+0.05) = 0.9
        let m = toy_model(0.9, 0.9);
        let xs = [fv(&[0.0])];
        let batch = LabeledBatch::from_slices(&xs, &[true]).unwrap();
        let alpha = e_step(&m, &batch)[0];
        assert!((alpha - 0.9).abs() < 1e-12);
    }

    #[test]
    fn e_step_alphas_stay_in_unit_interval_in_tails() {
        for &(pi, gamma) in &[(0.999, 1.0), (0.5, 0.5), (0.01, 0.9)] {
            for &v in &[-900.0f32, -40.0, 0.0, 40.0, 900.0] {
                let m = toy_model(pi, gamma);
                let xs = [fv(&[v])];
                for y in [false, true] {
                    let batch = LabeledBatch::from_slices(&xs, &[y]).unwrap();
                    let a = e_step(&m, &batch)[0];
                    assert!((0.0..=1.0).contains(&a), "pi={pi} gamma={gamma} v={v} y={y} a={a}");
                }
            }
        }
    }

    #[test]
    fn stats_full_replacement_at_eta_one() {
        let mut stats = SufficientStats::new(1.0, 1.0);
        stats.update(&[0.5, 0.25], &[true, false]);
        assert_eq!(stats.s_alpha, 0.375);
        assert_eq!(stats.s_y_alpha, 0.25);
        assert_eq!(stats.s_y, 0.5);
    }

    #[test]
    fn stats_ema_arithmetic() {
        let mut stats = SufficientStats::new(1.0, 0.01);
        stats.update(&[0.0, 0.0], &[false, false]);
        assert!((stats.s_alpha - 0.99).abs() < 1e-15);
    }

    #[test]
    fn stats_converge_geometrically_to_constant_means() {
        let mut stats = SufficientStats::new(1.0, 0.01);
        let mut gap_prev = (stats.s_alpha - 0.5f64).abs();
        for _ in 0..50 {
            stats.update(&[0.5], &[true]);
            let gap = (stats.s_alpha - 0.5f64).abs();
            assert!((gap - 0.99 * gap_prev).abs() < 1e-12);
            gap_prev = gap;
        }
    }

    #[test]
    fn stats_ordering_invariant() {
        let mut stats = SufficientStats::new(1.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let alphas: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..=1.0)).collect();
            let labels: Vec<bool> = (0..16).map(|_| rng.random_range(0..2) == 1).collect();
            stats.update(&alphas, &labels);
            assert!(stats.s_y_alpha <= stats.s_alpha + 1e-12);
            assert!(stats.s_y_alpha >= 0.0 && stats.s_alpha <= 1.0 + 1e-12);
            assert!(stats.s_y >= 0.0 && stats.s_y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn m_step_ratio() {
        let stats = SufficientStats {
            s_alpha: 0.6,
            s_y_alpha: 0.3,
            s_y: 0.4,
            eta: 0.01,
        };
        let update = m_step(&stats, GammaMode::FixedOne, &ParamClamps::default(), 1.0).unwrap();
        assert!((update.pi - 0.5).abs() < 1e-15);
        assert_eq!(update.gamma, 1.0);
    }

    #[test]
    fn m_step_gamma_is_one_without_observed_false_positives() {
        // S_y = S_ya means every observed tag is explained by a true label.
        let stats = SufficientStats {
            s_alpha: 0.5,
            s_y_alpha: 0.2,
            s_y: 0.2,
            eta: 0.01,
        };
        let update = m_step(&stats, GammaMode::Learned, &ParamClamps::default(), 0.7).unwrap();
        assert!((update.gamma - 1.0).abs() < 1e-15);
        assert!(!update.gamma_skipped);
    }

    #[test]
    fn m_step_from_optimistic_initialization() {
        let stats = SufficientStats::new(1.0, 0.01);
        let clamps = ParamClamps {
            pi_ceiling: 1.0,
            ..ParamClamps::default()
        };
        let update = m_step(&stats, GammaMode::Learned, &clamps, 0.42).unwrap();
        assert_eq!(update.pi, 1.0);
        assert_eq!(update.gamma, 0.42);
        assert!(update.gamma_skipped);
    }

    #[test]
    fn m_step_rejects_zero_mass() {
        let stats = SufficientStats {
            s_alpha: 0.0,
            s_y_alpha: 0.0,
            s_y: 0.0,
            eta: 0.1,
        };
        assert!(matches!(
            m_step(&stats, GammaMode::FixedOne, &ParamClamps::default(), 1.0),
            Err(Error::DegenerateStats { .. })
        ));
    }

    #[test]
    fn sgd_step_is_identity_at_matched_alphas() {
        let xs = [fv(&[1.0, -2.0]), fv(&[0.5, 0.5])];
        let batch = LabeledBatch::from_slices(&xs, &[true, false]).unwrap();
        let mut model = TagModel::new("t", 2);
        model.weights = vec![0.3, -0.1];
        model.bias = 0.2;
        let alphas: Vec<f64> = batch
            .iter()
            .map(|(x, _)| sigmoid(model.raw_score(x)))
            .collect();
        let before = model.clone();
        sgd_step(&mut model, &batch, &alphas, 0.1, 0.0).unwrap();
        assert_eq!(model.weights, before.weights);
        assert_eq!(model.bias, before.bias);
    }

    #[test]
    fn sgd_step_reduces_expected_nll() {
        let xs = [fv(&[1.0]), fv(&[-1.5]), fv(&[0.2])];
        let batch = LabeledBatch::from_slices(&xs, &[true, false, true]).unwrap();
        let mut model = TagModel::new("t", 1);
        let alphas = [1.0, 0.2, 0.9];
        let before = expected_nll_score_part(&model.weights, model.bias, &batch, &alphas);
        sgd_step(&mut model, &batch, &alphas, 0.05, 0.0).unwrap();
        let after = expected_nll_score_part(&model.weights, model.bias, &batch, &alphas);
        assert!(after < before);
    }

    #[test]
    fn train_rejects_single_class_streams() {
        let xs = [fv(&[1.0]), fv(&[2.0])];
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let config = TrainConfig {
            num_minibatches: 10,
            minibatch_size: 2,
            ..TrainConfig::default()
        };
        let err = train_tag("t", &refs, &[true, true], &config).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels { positives: 2, .. }));
        let err = train_tag("t", &refs, &[false, false], &config).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels { positives: 0, .. }));
    }

    #[test]
    fn train_is_deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<FeatureVector> = (0..60)
            .map(|_| fv(&[rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)]))
            .collect();
        let labels: Vec<bool> = xs.iter().map(|x| x.values()[0] > 0.0).collect();
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let config = TrainConfig {
            minibatch_size: 16,
            num_minibatches: 200,
            seed: 7,
            ..TrainConfig::default()
        };
        let a = train_tag("t", &refs, &labels, &config).unwrap();
        let b = train_tag("t", &refs, &labels, &config).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
        assert_eq!(a.pi, b.pi);
        assert_eq!(a.gamma, b.gamma);
    }

    #[test]
    fn fixed_one_mode_never_moves_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<FeatureVector> = (0..40).map(|_| fv(&[rng.random_range(-2.0f32..2.0)])).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let config = TrainConfig {
            minibatch_size: 8,
            num_minibatches: 150,
            gamma_mode: GammaMode::FixedOne,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, trace) = train_tag_traced("t", &refs, &labels, &config, 10).unwrap();
        assert_eq!(model.gamma, 1.0);
        assert!(trace.iter().all(|p| p.gamma == 1.0));
        assert_eq!(model.beta, 0.0);
    }

    #[test]
    fn plain_mode_freezes_noise_parameters() {
        let xs = [fv(&[1.0]), fv(&[-1.0]), fv(&[0.5]), fv(&[-0.2])];
        let labels = [true, false, true, false];
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let config = TrainConfig {
            minibatch_size: 4,
            num_minibatches: 50,
            robust: false,
            ..TrainConfig::default()
        };
        let model = train_tag("t", &refs, &labels, &config).unwrap();
        assert_eq!(model.pi, 1.0);
        assert_eq!(model.gamma, 1.0);
        // Plain LR on separable-ish data pushes the weight positive.
        assert!(model.weights[0] > 0.0);
    }

    #[test]
    fn train_all_reports_per_tag_failures() {
        use crate::data::{build_vocab, FeatureStore, TaggedImage};
        let mut store = FeatureStore::new(1);
        let mut images = Vec::new();
        for i in 0..30 {
            let id = format!("img{i}");
            store.push(id.clone(), fv(&[i as f32 * 0.2 - 3.0])).unwrap();
            let mut tags = Vec::new();
            if i >= 15 {
                tags.push("common".to_string());
            }
            tags.push("everywhere".to_string());
            images.push(TaggedImage {
                image_id: id,
                user_id: format!("u{}", i % 3),
                tags,
                feature_ref: Some(i),
            });
        }
        let vocab = build_vocab(&images, 1);
        let config = TrainConfig {
            minibatch_size: 8,
            num_minibatches: 60,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = train_all(&store, &images, &vocab, &config, 0).unwrap();
        assert_eq!(run.bundle.len(), 1);
        assert!(run.bundle.get("common").is_some());
        assert_eq!(run.failures.len(), 1);
        assert_eq!(run.failures[0].tag, "everywhere");
    }

    #[test]
    fn identical_label_streams_share_a_model() {
        use crate::data::{build_vocab, FeatureStore, TaggedImage};
        let mut store = FeatureStore::new(1);
        let mut images = Vec::new();
        for i in 0..24 {
            let id = format!("img{i}");
            store.push(id.clone(), fv(&[i as f32 * 0.25 - 3.0])).unwrap();
            let tags = if i % 2 == 0 {
                vec!["twin_a".to_string(), "twin_b".to_string()]
            } else {
                Vec::new()
            };
            images.push(TaggedImage {
                image_id: id,
                user_id: "u".into(),
                tags,
                feature_ref: Some(i),
            });
        }
        let vocab = build_vocab(&images, 1);
        let config = TrainConfig {
            minibatch_size: 6,
            num_minibatches: 80,
            seed: 13,
            ..TrainConfig::default()
        };
        let run = train_all(&store, &images, &vocab, &config, 0).unwrap();
        let a = run.bundle.get("twin_a").unwrap();
        let b = run.bundle.get("twin_b").unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.pi, b.pi);
    }

    #[test]
    fn traced_loss_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<FeatureVector> = (0..30).map(|_| fv(&[rng.random_range(-1.0f32..1.0)])).collect();
        let labels: Vec<bool> = (0..30).map(|i| i % 2 == 0).collect();
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let config = TrainConfig {
            minibatch_size: 8,
            num_minibatches: 40,
            ..TrainConfig::default()
        };
        let (model, trace) = train_tag_traced("t", &refs, &labels, &config, 5).unwrap();
        assert!(!trace.is_empty());
        assert!(trace.iter().all(|p| p.loss.is_finite()));
        let xs_batch = LabeledBatch::from_slices(&xs, &labels).unwrap();
        assert!(rlr_loss(&model, &xs_batch).is_finite());
    }
}
