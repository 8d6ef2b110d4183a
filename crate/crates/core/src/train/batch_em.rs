//! Full-batch EM reference fit. Exact E-steps over the whole dataset
//! alternate with exact M-step ratios and a converged inner weight
//! optimization; used as a correctness oracle for the stochastic loop.

use crate::error::{Error, Result};
use crate::model::{rlr_loss, FeatureVector, LabeledBatch, TagModel};

use super::{e_step, em_w_gradient, expected_nll_score_part, GammaMode, ParamClamps};

#[derive(Debug, Clone)]
pub struct BatchEmConfig {
    pub max_iters: usize,
    /// Outer stop: maximum absolute parameter change across w, b, pi, gamma.
    pub param_tol: f64,
    pub gamma_mode: GammaMode,
    pub clamps: ParamClamps,
    /// Initial pi before clamping.
    pub init_pi: f64,
    /// Initial gamma in learned mode; must sit strictly below 1, since
    /// gamma = 1 is an exact fixed point of the update.
    pub init_gamma: f64,
    pub inner_max_iters: usize,
    /// Inner stop: infinity norm of the weight gradient, per example.
    pub inner_grad_tol: f64,
}

impl Default for BatchEmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            param_tol: 1e-6,
            gamma_mode: GammaMode::FixedOne,
            clamps: ParamClamps::default(),
            init_pi: 1.0,
            init_gamma: 0.99,
            inner_max_iters: 2_000,
            inner_grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchEmFit {
    pub model: TagModel,
    pub converged: bool,
    pub iterations: usize,
    /// Marginal robust loss before the first iteration and after each one.
    pub loss_trace: Vec<f64>,
}

/// Descend the expected complete negative log-likelihood in (w, b) with
/// responsibilities frozen, only ever accepting steps that decrease it.
fn optimize_weights(
    model: &mut TagModel,
    batch: &LabeledBatch,
    alphas: &[f64],
    cfg: &BatchEmConfig,
) {
    let n = batch.len() as f64;
    // Inverse curvature bound for the logistic loss keeps the first step sane.
    let mut lr = 4.0 / (n * (1.0 + batch.dim() as f64));
    let mut energy = expected_nll_score_part(&model.weights, model.bias, batch, alphas);
    for _ in 0..cfg.inner_max_iters {
        let (grad_w, grad_b) = em_w_gradient(model, batch, alphas);
        let grad_max = grad_w
            .iter()
            .chain(std::iter::once(&grad_b))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_max <= cfg.inner_grad_tol * n {
            break;
        }
        loop {
            let trial_w: Vec<f64> = model
                .weights
                .iter()
                .zip(&grad_w)
                .map(|(w, g)| w - lr * g)
                .collect();
            let trial_b = model.bias - lr * grad_b;
            let trial_energy = expected_nll_score_part(&trial_w, trial_b, batch, alphas);
            if trial_energy <= energy {
                model.weights = trial_w;
                model.bias = trial_b;
                energy = trial_energy;
                lr *= 1.2;
                break;
            }
            lr *= 0.5;
            if lr < 1e-18 {
                return;
            }
        }
    }
}

/// Alternate exact E-steps with exact M-steps until the parameters settle
/// or the iteration cap is reached; the cap returns the last iterate with
/// `converged = false`.
pub fn batch_em_reference(
    tag: &str,
    features: &[&FeatureVector],
    labels: &[bool],
    cfg: &BatchEmConfig,
) -> Result<BatchEmFit> {
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch = LabeledBatch::new(features.to_vec(), labels.to_vec())?;
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateLabels {
            tag: tag.to_string(),
            positives,
            total: labels.len(),
        });
    }

    let mut model = TagModel::new(tag, batch.dim());
    model.pi = cfg.clamps.clamp_pi(cfg.init_pi);
    if cfg.gamma_mode == GammaMode::Learned {
        model.gamma = cfg.clamps.clamp_gamma(cfg.init_gamma);
    }
    let mut loss_trace = vec![rlr_loss(&model, &batch)];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..cfg.max_iters {
        iterations = iter + 1;
        let prev = model.clone();

        let alphas = e_step(&model, &batch);
        let mut sum_a = 0.0;
        let mut sum_ya = 0.0;
        for (&a, &y) in alphas.iter().zip(labels) {
            sum_a += a;
            if y {
                sum_ya += a;
            }
        }
        if sum_a <= 0.0 {
            return Err(Error::DegenerateStats { s_alpha: sum_a });
        }
        model.pi = cfg.clamps.clamp_pi(sum_ya / sum_a);
        if cfg.gamma_mode == GammaMode::Learned {
            let sum_not_a: f64 = alphas.iter().map(|a| 1.0 - a).sum();
            if sum_not_a > 0.0 {
                let spurious: f64 = alphas
                    .iter()
                    .zip(labels)
                    .map(|(a, &y)| if y { 0.0 } else { 1.0 - a })
                    .sum();
                model.gamma = cfg.clamps.clamp_gamma(spurious / sum_not_a);
            }
        }

        optimize_weights(&mut model, &batch, &alphas, cfg);
        loss_trace.push(rlr_loss(&model, &batch));

        let mut delta = (model.pi - prev.pi).abs().max((model.gamma - prev.gamma).abs());
        delta = delta.max((model.bias - prev.bias).abs());
        for (a, b) in model.weights.iter().zip(&prev.weights) {
            delta = delta.max((a - b).abs());
        }
        if delta < cfg.param_tol {
            converged = true;
            break;
        }
    }

    Ok(BatchEmFit {
        model,
        converged,
        iterations,
        loss_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_dataset(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let v: f32 = rng.random_range(-3.0..3.0);
            let z = rng.random_range(0.0..1.0) < crate::model::sigmoid(2.0 * f64::from(v));
            // Drop 60% of true tags.
            let y = z && rng.random_range(0.0..1.0) < 0.4;
            xs.push(FeatureVector::new(vec![v]).unwrap());
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn marginal_loss_is_monotone_non_increasing() {
        let (xs, ys) = toy_dataset(200, 21);
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let fit = batch_em_reference("t", &refs, &ys, &BatchEmConfig::default()).unwrap();
        for pair in fit.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-8, "loss rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn recovers_high_pi_on_noise_free_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..300 {
            let v: f32 = rng.random_range(-3.0..3.0);
            let z = rng.random_range(0.0..1.0) < crate::model::sigmoid(3.0 * f64::from(v));
            xs.push(FeatureVector::new(vec![v]).unwrap());
            ys.push(z);
        }
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let fit = batch_em_reference("t", &refs, &ys, &BatchEmConfig::default()).unwrap();
        assert!(fit.model.pi > 0.95, "pi = {}", fit.model.pi);
    }

    #[test]
    fn cap_reports_non_convergence() {
        let (xs, ys) = toy_dataset(120, 3);
        let refs: Vec<&FeatureVector> = xs.iter().collect();
        let cfg = BatchEmConfig {
            max_iters: 1,
            ..BatchEmConfig::default()
        };
        let fit = batch_em_reference("t", &refs, &ys, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }
}
