//! Per-tag intercept calibration on curated true labels.
//!
//! The weight vector stays frozen; only the offset `beta` moves, fitted by
//! bisection on the monotone gradient of the plain logistic likelihood of
//! the curated labels. One convex parameter per tag means tiny label sets
//! already pin it down.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::ModelBundle;
use crate::data::{AnnotatedImage, FeatureStore};
use crate::error::{Error, Result};
use crate::model::{sigmoid, FeatureVector, TagModel};

/// Separable calibration sets push `beta` to infinity; clamp and flag.
pub const BETA_CLAMP: f64 = 20.0;

/// Gradient tolerance per example for the intercept solve.
pub const BETA_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    Converged,
    ClampedHigh,
    ClampedLow,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterceptFit {
    pub beta: f64,
    pub flag: FitFlag,
    /// Mean predicted probability at the fitted beta.
    pub mean_prediction: f64,
    pub positive_rate: f64,
}

/// Fit the intercept on `(x, z)` pairs with weights and trained bias held
/// fixed. Solves `sum sigmoid(s_i + beta) = sum z_i` to
/// `|gradient| < BETA_GRAD_TOL * n` by bisection; all-positive or
/// all-negative label sets clamp to the corresponding bound.
pub fn fit_intercept(
    model: &TagModel,
    examples: &[(&FeatureVector, bool)],
) -> Result<(TagModel, InterceptFit)> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let base_scores: Vec<f64> = examples
        .iter()
        .map(|(x, _)| {
            if x.dim() != model.dim() {
                Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: x.dim(),
                })
            } else {
                Ok(x.dot(&model.weights) + model.bias)
            }
        })
        .collect::<Result<_>>()?;
    let n = examples.len() as f64;
    let positives = examples.iter().filter(|(_, z)| *z).count() as f64;

    let gradient = |beta: f64| -> f64 {
        base_scores.iter().map(|s| sigmoid(s + beta)).sum::<f64>() - positives
    };

    let tol = BETA_GRAD_TOL * n;
    let (beta, flag) = if positives == n || gradient(BETA_CLAMP) < -tol {
        // All-positive sets (and separable ones) push beta to +infinity.
        (BETA_CLAMP, FitFlag::ClampedHigh)
    } else if positives == 0.0 || gradient(-BETA_CLAMP) > tol {
        (-BETA_CLAMP, FitFlag::ClampedLow)
    } else {
        let (mut lo, mut hi) = (-BETA_CLAMP, BETA_CLAMP);
        let mut mid = 0.0;
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let g = gradient(mid);
            if g.abs() <= tol {
                break;
            }
            if g < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (mid, FitFlag::Converged)
    };

    let mean_prediction =
        base_scores.iter().map(|s| sigmoid(s + beta)).sum::<f64>() / n;
    let calibrated = TagModel {
        beta,
        ..model.clone()
    };
    Ok((
        calibrated,
        InterceptFit {
            beta,
            flag,
            mean_prediction,
            positive_rate: positives / n,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationEntry {
    pub tag: String,
    pub beta: f64,
    pub flag: FitFlag,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub subset_size: usize,
    pub fitted: Vec<CalibrationEntry>,
    /// Bundle tags absent from the calibration vocabulary, passed through
    /// with beta unchanged.
    pub skipped: Vec<String>,
}

/// Calibrate every bundle tag on a seeded subset of the curated set.
///
/// Subsets are prefixes of one seeded permutation, so growing the size
/// extends the sample rather than redrawing it. Tags missing from the
/// calibration vocabulary keep their beta and are listed in the report.
pub fn calibrate_bundle(
    bundle: &ModelBundle,
    store: &FeatureStore,
    annotations: &[AnnotatedImage],
    ann_vocab: &[String],
    subset_size: usize,
    seed: u64,
) -> Result<(ModelBundle, CalibrationReport)> {
    if subset_size == 0 || subset_size > annotations.len() {
        return Err(Error::InvalidParameter(format!(
            "subset_size must lie in [1, {}], got {subset_size}",
            annotations.len()
        )));
    }
    let order = seeded_permutation(annotations.len(), seed);
    let subset: Vec<&AnnotatedImage> = order[..subset_size]
        .iter()
        .map(|&i| &annotations[i])
        .collect();

    let features: Vec<&FeatureVector> = subset
        .iter()
        .map(|img| match img.feature_ref {
            Some(idx) => Ok(store.get(idx)),
            None => store.by_id(&img.image_id).ok_or_else(|| Error::MissingFeatures {
                ids: vec![img.image_id.clone()],
            }),
        })
        .collect::<Result<_>>()?;

    let column_of: std::collections::HashMap<&str, usize> = ann_vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let results: Vec<Result<(TagModel, Option<CalibrationEntry>)>> = bundle
        .models
        .par_iter()
        .map(|model| match column_of.get(model.tag.as_str()) {
            None => Ok((model.clone(), None)),
            Some(&col) => {
                let examples: Vec<(&FeatureVector, bool)> = features
                    .iter()
                    .zip(&subset)
                    .map(|(x, img)| (*x, img.labels[col]))
                    .collect();
                let (calibrated, fit) = fit_intercept(model, &examples)?;
                let entry = CalibrationEntry {
                    tag: model.tag.clone(),
                    beta: fit.beta,
                    flag: fit.flag,
                };
                Ok((calibrated, Some(entry)))
            }
        })
        .collect();

    let mut models = Vec::with_capacity(bundle.len());
    let mut fitted = Vec::new();
    let mut skipped = Vec::new();
    for result in results {
        let (model, entry) = result?;
        match entry {
            Some(e) => fitted.push(e),
            None => skipped.push(model.tag.clone()),
        }
        models.push(model);
    }
    Ok((
        ModelBundle::new(bundle.dim, models)?,
        CalibrationReport {
            subset_size,
            fitted,
            skipped,
        },
    ))
}

/// Calibrate at several subset sizes; all sizes extend the same seeded
/// permutation.
pub fn calibration_sweep(
    bundle: &ModelBundle,
    store: &FeatureStore,
    annotations: &[AnnotatedImage],
    ann_vocab: &[String],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, ModelBundle, CalibrationReport)>> {
    sizes
        .iter()
        .map(|&size| {
            calibrate_bundle(bundle, store, annotations, ann_vocab, size, seed)
                .map(|(b, r)| (size, b, r))
        })
        .collect()
}

fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: &[f32]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).unwrap()
    }

    fn linear_model(w: f64, b: f64) -> TagModel {
        TagModel {
            tag: "t".into(),
            weights: vec![w],
            bias: b,
            pi: 0.4,
            gamma: 1.0,
            beta: 0.0,
        }
    }

    #[test]
    fn balanced_set_keeps_beta_at_zero() {
        // sigmoid symmetry: x and -x with labels 1/0 already balance the
        // gradient at beta = 0.
        let xs = [fv(&[1.0]), fv(&[-1.0])];
        let examples = vec![(&xs[0], true), (&xs[1], false)];
        let (model, fit) = fit_intercept(&linear_model(2.0, 0.0), &examples).unwrap();
        assert!(model.beta.abs() < 1e-9, "beta = {}", model.beta);
        assert_eq!(fit.flag, FitFlag::Converged);
    }

    #[test]
    fn moment_matching_holds_at_convergence() {
        let xs: Vec<FeatureVector> = (0..40).map(|i| fv(&[(i as f32 - 11.0) * 0.2])).collect();
        let examples: Vec<(&FeatureVector, bool)> =
            xs.iter().enumerate().map(|(i, x)| (x, i % 4 == 0)).collect();
        let (_, fit) = fit_intercept(&linear_model(1.0, 0.3), &examples).unwrap();
        assert_eq!(fit.flag, FitFlag::Converged);
        assert!(
            (fit.mean_prediction - fit.positive_rate).abs() < 1e-6,
            "{} vs {}",
            fit.mean_prediction,
            fit.positive_rate
        );
    }

    #[test]
    fn degenerate_labels_clamp_and_flag() {
        let xs = [fv(&[0.5]), fv(&[1.5])];
        let all_pos = vec![(&xs[0], true), (&xs[1], true)];
        let (model, fit) = fit_intercept(&linear_model(1.0, 0.0), &all_pos).unwrap();
        assert_eq!(model.beta, BETA_CLAMP);
        assert_eq!(fit.flag, FitFlag::ClampedHigh);

        let all_neg = vec![(&xs[0], false), (&xs[1], false)];
        let (model, fit) = fit_intercept(&linear_model(1.0, 0.0), &all_neg).unwrap();
        assert_eq!(model.beta, -BETA_CLAMP);
        assert_eq!(fit.flag, FitFlag::ClampedLow);
    }

    #[test]
    fn calibration_touches_only_beta() {
        let xs: Vec<FeatureVector> = (0..10).map(|i| fv(&[i as f32 * 0.3 - 1.5])).collect();
        let examples: Vec<(&FeatureVector, bool)> =
            xs.iter().enumerate().map(|(i, x)| (x, i % 2 == 0)).collect();
        let base = linear_model(0.8, -0.2);
        let (calibrated, _) = fit_intercept(&base, &examples).unwrap();
        assert_eq!(calibrated.weights, base.weights);
        assert_eq!(calibrated.bias, base.bias);
        assert_eq!(calibrated.pi, base.pi);
        assert_eq!(calibrated.gamma, base.gamma);
    }

    #[test]
    fn within_tag_ranking_is_preserved() {
        let xs: Vec<FeatureVector> = (0..12).map(|i| fv(&[(i as f32) * 0.5 - 3.0])).collect();
        let examples: Vec<(&FeatureVector, bool)> =
            xs.iter().enumerate().map(|(i, x)| (x, i >= 9)).collect();
        let base = linear_model(1.2, 0.0);
        let (calibrated, _) = fit_intercept(&base, &examples).unwrap();
        let rank = |m: &TagModel| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| {
                m.predict_z(&xs[b])
                    .unwrap()
                    .total_cmp(&m.predict_z(&xs[a]).unwrap())
            });
            idx
        };
        assert_eq!(rank(&base), rank(&calibrated));
    }

    #[test]
    fn bundle_calibration_skips_unknown_tags() {
        let mut store = FeatureStore::new(1);
        let mut annotations = Vec::new();
        for i in 0..20 {
            let id = format!("img{i}");
            store.push(id.clone(), fv(&[i as f32 * 0.2 - 2.0])).unwrap();
            annotations.push(AnnotatedImage {
                image_id: id,
                feature_ref: Some(i),
                labels: vec![i % 2 == 0],
            });
        }
        let models = vec![
            TagModel { tag: "known".into(), ..linear_model(1.0, 0.0) },
            TagModel { tag: "missing".into(), beta: 0.125, ..linear_model(1.0, 0.0) },
        ];
        let bundle = ModelBundle::new(1, models).unwrap();
        let vocab = vec!["known".to_string()];
        let (out, report) =
            calibrate_bundle(&bundle, &store, &annotations, &vocab, 20, 3).unwrap();
        assert_eq!(report.skipped, vec!["missing".to_string()]);
        assert_eq!(report.fitted.len(), 1);
        assert_eq!(out.get("missing").unwrap().beta, 0.125);
        assert_ne!(out.get("known").unwrap().beta, 0.0);
    }

    #[test]
    fn sweep_sizes_nest() {
        let mut store = FeatureStore::new(1);
        let mut annotations = Vec::new();
        for i in 0..30 {
            let id = format!("img{i}");
            store.push(id.clone(), fv(&[i as f32 * 0.1 - 1.5])).unwrap();
            annotations.push(AnnotatedImage {
                image_id: id,
                feature_ref: Some(i),
                labels: vec![i % 3 == 0],
            });
        }
        let bundle =
            ModelBundle::new(1, vec![TagModel { tag: "t".into(), ..linear_model(1.0, 0.0) }])
                .unwrap();
        let vocab = vec!["t".to_string()];
        let sweep =
            calibration_sweep(&bundle, &store, &annotations, &vocab, &[5, 15, 30], 9).unwrap();
        assert_eq!(sweep.len(), 3);
        for (size, bundle, report) in &sweep {
            assert_eq!(report.subset_size, *size);
            assert!(bundle.get("t").unwrap().beta.is_finite());
        }
        // Full-set calibration is independent of the permutation.
        let (full, _) = calibrate_bundle(&bundle, &store, &annotations, &vocab, 30, 1234).unwrap();
        assert_eq!(full.get("t").unwrap().beta, sweep[2].1.get("t").unwrap().beta);
    }
}
