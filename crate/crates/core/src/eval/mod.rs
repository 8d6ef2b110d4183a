//! Evaluation protocols: per-image tag prediction, per-tag annotation, and
//! multi-tag retrieval, all at predictions-at-k with deterministic
//! tie-breaking.

mod analysis;

pub use analysis::{
    compare_pi, curve_tsv, empirical_tag_likelihoods, index_accuracy_curve, CurvePoint,
    PiComparison, PiComparisonRow, TagLikelihoodRow, TagLikelihoods,
};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::bundle::ModelBundle;
use crate::data::{AnnotatedImage, FeatureStore, TaggedImage};
use crate::error::{Error, Result};
use crate::model::FeatureVector;

/// Which probability ranks the tags: the uploader-behavior prediction
/// `P(y=1|x)` or the objective-label prediction `P(z=1|x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictTarget {
    ObservedTag,
    TrueLabel,
}

/// `2pr / (p + r)`, zero when both are zero.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn feature_of<'a>(
    store: &'a FeatureStore,
    feature_ref: Option<usize>,
    image_id: &str,
) -> Result<&'a FeatureVector> {
    match feature_ref {
        Some(idx) => Ok(store.get(idx)),
        None => store.by_id(image_id).ok_or_else(|| Error::MissingFeatures {
            ids: vec![image_id.to_string()],
        }),
    }
}

/// Rank the bundle's tags for one image and keep the top `k`. Ties break
/// toward the earlier vocabulary position, so rankings are deterministic.
/// Returns `(vocabulary index, probability)` pairs.
pub fn predict_topk(
    bundle: &ModelBundle,
    x: &FeatureVector,
    k: usize,
    target: PredictTarget,
) -> Result<Vec<(usize, f64)>> {
    let mut scored = Vec::with_capacity(bundle.len());
    for (idx, model) in bundle.models.iter().enumerate() {
        let p = match target {
            PredictTarget::ObservedTag => model.predict_y(x)?,
            PredictTarget::TrueLabel => model.predict_z(x)?,
        };
        scored.push((idx, p));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Top-k selection among an index subset of the bundle, used when only the
/// evaluated vocabulary may be predicted.
fn topk_among(
    bundle: &ModelBundle,
    candidates: &[usize],
    x: &FeatureVector,
    k: usize,
    target: PredictTarget,
) -> Result<Vec<usize>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for &idx in candidates {
        let model = &bundle.models[idx];
        let p = match target {
            PredictTarget::ObservedTag => model.predict_y(x)?,
            PredictTarget::TrueLabel => model.predict_z(x)?,
        };
        scored.push((idx, p));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(idx, _)| idx).collect())
}

/// Per-image precision/recall at `k` against the uploader's own tags,
/// ranked by the tagging-behavior prediction. Images with no in-vocabulary
/// tags are excluded from the recall average and counted.
#[derive(Debug, Clone, Serialize)]
pub struct TagPredictionReport {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub images_evaluated: usize,
    pub images_excluded_from_recall: usize,
}

pub fn tag_prediction_metrics(
    bundle: &ModelBundle,
    store: &FeatureStore,
    test: &[TaggedImage],
    k: usize,
) -> Result<TagPredictionReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("tag prediction needs a test set".into()));
    }
    let tag_index = bundle.tag_index();
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut recall_count = 0usize;
    for image in test {
        let x = feature_of(store, image.feature_ref, &image.image_id)?;
        let in_vocab: HashSet<usize> = image
            .tags
            .iter()
            .filter_map(|t| tag_index.get(t.as_str()).copied())
            .collect();
        let topk = predict_topk(bundle, x, k, PredictTarget::ObservedTag)?;
        let hits = topk.iter().filter(|(idx, _)| in_vocab.contains(idx)).count();
        precision_sum += hits as f64 / k as f64;
        if !in_vocab.is_empty() {
            recall_sum += hits as f64 / in_vocab.len() as f64;
            recall_count += 1;
        }
    }
    let precision = precision_sum / test.len() as f64;
    let recall = if recall_count > 0 {
        recall_sum / recall_count as f64
    } else {
        0.0
    };
    Ok(TagPredictionReport {
        k,
        precision,
        recall,
        f_score: f_score(precision, recall),
        images_evaluated: test.len(),
        images_excluded_from_recall: test.len() - recall_count,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TagMetricsRow {
    pub tag: String,
    pub predicted: usize,
    pub correct: usize,
    pub ground_truth: usize,
    /// Zero (and flagged undefined) when the tag was never predicted.
    pub precision: f64,
    pub precision_undefined: bool,
    /// Absent when the tag has no ground-truth positives.
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
}

/// Per-tag annotation metrics at `k`, ranked by the true-label prediction.
/// The headline F comes from the averaged precision and recall; the mean
/// of per-tag F-scores is reported alongside.
#[derive(Debug, Clone, Serialize)]
pub struct AnnotationReport {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub mean_per_tag_f: f64,
    pub tags_evaluated: usize,
    pub tags_never_predicted: usize,
    pub tags_without_positives: usize,
    pub per_tag: Vec<TagMetricsRow>,
}

impl AnnotationReport {
    pub fn per_tag_tsv(&self) -> String {
        let mut out = String::from("tag\tpredicted\tcorrect\tground_truth\tprecision\trecall\tf_score\n");
        for row in &self.per_tag {
            let recall = row.recall.map_or(String::from("NA"), |r| format!("{r:.6}"));
            let f = row.f_score.map_or(String::from("NA"), |f| format!("{f:.6}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}",
                row.tag, row.predicted, row.correct, row.ground_truth, row.precision, recall, f
            );
        }
        out
    }
}

pub fn annotation_metrics(
    bundle: &ModelBundle,
    store: &FeatureStore,
    test: &[AnnotatedImage],
    ann_vocab: &[String],
    k: usize,
) -> Result<AnnotationReport> {
    if test.is_empty() {
        return Err(Error::EmptyInput("annotation needs a test set".into()));
    }
    let tag_index = bundle.tag_index();
    let mut candidates = Vec::with_capacity(ann_vocab.len());
    let mut missing = Vec::new();
    for tag in ann_vocab {
        match tag_index.get(tag.as_str()) {
            Some(&idx) => candidates.push(idx),
            None => missing.push(tag.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::VocabMismatch { missing });
    }

    // bundle index -> annotation column
    let column_of: HashMap<usize, usize> = candidates
        .iter()
        .enumerate()
        .map(|(col, &idx)| (idx, col))
        .collect();

    let mut predicted = vec![0usize; ann_vocab.len()];
    let mut correct = vec![0usize; ann_vocab.len()];
    let mut ground_truth = vec![0usize; ann_vocab.len()];
    for image in test {
        let x = feature_of(store, image.feature_ref, &image.image_id)?;
        for (col, &z) in image.labels.iter().enumerate() {
            ground_truth[col] += usize::from(z);
        }
        for idx in topk_among(bundle, &candidates, x, k, PredictTarget::TrueLabel)? {
            let col = column_of[&idx];
            predicted[col] += 1;
            if image.labels[col] {
                correct[col] += 1;
            }
        }
    }

    let mut per_tag = Vec::with_capacity(ann_vocab.len());
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut recall_count = 0usize;
    let mut per_tag_f_sum = 0.0;
    let mut per_tag_f_count = 0usize;
    let mut never_predicted = 0usize;
    for (col, tag) in ann_vocab.iter().enumerate() {
        let precision_undefined = predicted[col] == 0;
        let precision = if precision_undefined {
            never_predicted += 1;
            0.0
        } else {
            correct[col] as f64 / predicted[col] as f64
        };
        precision_sum += precision;
        let recall = if ground_truth[col] > 0 {
            let r = correct[col] as f64 / ground_truth[col] as f64;
            recall_sum += r;
            recall_count += 1;
            Some(r)
        } else {
            None
        };
        let f = recall.map(|r| f_score(precision, r));
        if let Some(f) = f {
            per_tag_f_sum += f;
            per_tag_f_count += 1;
        }
        per_tag.push(TagMetricsRow {
            tag: tag.clone(),
            predicted: predicted[col],
            correct: correct[col],
            ground_truth: ground_truth[col],
            precision,
            precision_undefined,
            recall,
            f_score: f,
        });
    }

    let precision = precision_sum / ann_vocab.len() as f64;
    let recall = if recall_count > 0 {
        recall_sum / recall_count as f64
    } else {
        0.0
    };
    Ok(AnnotationReport {
        k,
        precision,
        recall,
        f_score: f_score(precision, recall),
        mean_per_tag_f: if per_tag_f_count > 0 {
            per_tag_f_sum / per_tag_f_count as f64
        } else {
            0.0
        },
        tags_evaluated: ann_vocab.len(),
        tags_never_predicted: never_predicted,
        tags_without_positives: ann_vocab.len() - recall_count,
        per_tag,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRow {
    pub tags: Vec<String>,
    pub relevant: usize,
    pub retrieved_relevant: usize,
    /// Normalized precision: retrieved relevant over `min(k, relevant)`.
    pub precision: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArityRow {
    pub arity: usize,
    pub queries: usize,
    pub mean_precision: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedQuery {
    pub tags: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub mean_precision: f64,
    pub queries_evaluated: usize,
    pub per_arity: Vec<ArityRow>,
    pub skipped: Vec<SkippedQuery>,
    pub per_query: Vec<QueryRow>,
}

impl RetrievalReport {
    pub fn per_arity_tsv(&self) -> String {
        let mut out = String::from("arity\tqueries\tmean_precision\n");
        for row in &self.per_arity {
            let _ = writeln!(out, "{}\t{}\t{:.6}", row.arity, row.queries, row.mean_precision);
        }
        out
    }
}

/// Multi-tag retrieval at `k`: each image is scored by the sum of log
/// calibrated probabilities over the query tags (monotone per tag, so
/// single-tag rankings are unchanged), images tie-break by id, and each
/// query scores retrieved-relevant over `min(k, relevant)`.
pub fn retrieval_metrics(
    bundle: &ModelBundle,
    store: &FeatureStore,
    test: &[AnnotatedImage],
    ann_vocab: &[String],
    queries: &[Vec<String>],
    k: usize,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("retrieval needs a query list".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput("retrieval needs a test set".into()));
    }
    let tag_index = bundle.tag_index();
    let column_of: HashMap<&str, usize> = ann_vocab
        .iter()
        .enumerate()
        .map(|(col, t)| (t.as_str(), col))
        .collect();

    // Per-image log probabilities per queried tag are reused across
    // queries; compute lazily per tag.
    let features: Vec<&FeatureVector> = test
        .iter()
        .map(|img| feature_of(store, img.feature_ref, &img.image_id))
        .collect::<Result<_>>()?;
    let mut log_prob_cache: HashMap<String, Vec<f64>> = HashMap::new();

    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    let mut by_arity: HashMap<usize, (usize, f64)> = HashMap::new();
    let mut total = 0.0;
    for query in queries {
        let unknown: Vec<&String> = query
            .iter()
            .filter(|t| !tag_index.contains_key(t.as_str()))
            .collect();
        if !unknown.is_empty() {
            skipped.push(SkippedQuery {
                tags: query.clone(),
                reason: format!(
                    "tag(s) absent from bundle: {}",
                    unknown.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", ")
                ),
            });
            continue;
        }
        let columns: Vec<usize> = match query
            .iter()
            .map(|t| column_of.get(t.as_str()).copied())
            .collect::<Option<Vec<_>>>()
        {
            Some(cols) => cols,
            None => {
                skipped.push(SkippedQuery {
                    tags: query.clone(),
                    reason: "tag(s) absent from annotation vocabulary".into(),
                });
                continue;
            }
        };
        let relevant: Vec<usize> = (0..test.len())
            .filter(|&i| columns.iter().all(|&c| test[i].labels[c]))
            .collect();
        if relevant.is_empty() {
            skipped.push(SkippedQuery {
                tags: query.clone(),
                reason: "no relevant images in the test set".into(),
            });
            continue;
        }

        for tag in query {
            if !log_prob_cache.contains_key(tag) {
                let model = &bundle.models[tag_index[tag.as_str()]];
                let logs: Vec<f64> = features
                    .iter()
                    .map(|x| model.predict_z(x).map(f64::ln))
                    .collect::<Result<_>>()?;
                log_prob_cache.insert(tag.clone(), logs);
            }
        }
        let mut scored: Vec<(usize, f64)> = (0..test.len())
            .map(|i| {
                let score: f64 = query.iter().map(|t| log_prob_cache[t][i]).sum();
                (i, score)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| test[a.0].image_id.cmp(&test[b.0].image_id))
        });
        scored.truncate(k);

        let relevant_set: HashSet<usize> = relevant.iter().copied().collect();
        let retrieved_relevant = scored
            .iter()
            .filter(|(i, _)| relevant_set.contains(i))
            .count();
        let denom = k.min(relevant.len());
        let precision = retrieved_relevant as f64 / denom as f64;
        total += precision;
        let entry = by_arity.entry(query.len()).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += precision;
        per_query.push(QueryRow {
            tags: query.clone(),
            relevant: relevant.len(),
            retrieved_relevant,
            precision,
        });
    }

    let queries_evaluated = per_query.len();
    let mut per_arity: Vec<ArityRow> = by_arity
        .into_iter()
        .map(|(arity, (count, sum))| ArityRow {
            arity,
            queries: count,
            mean_precision: sum / count as f64,
        })
        .collect();
    per_arity.sort_by_key(|row| row.arity);
    Ok(RetrievalReport {
        k,
        mean_precision: if queries_evaluated > 0 {
            total / queries_evaluated as f64
        } else {
            0.0
        },
        queries_evaluated,
        per_arity,
        skipped,
        per_query,
    })
}

/// All tag subsets of size 1 to `max_arity` that co-occur in at least one
/// annotated image, ordered by arity then vocabulary position.
pub fn enumerate_queries(
    test: &[AnnotatedImage],
    ann_vocab: &[String],
    max_arity: usize,
) -> Vec<Vec<String>> {
    let mut combos: BTreeSet<Vec<usize>> = BTreeSet::new();
    for image in test {
        let positives: Vec<usize> = (0..ann_vocab.len())
            .filter(|&c| image.labels[c])
            .collect();
        for a in 0..positives.len() {
            combos.insert(vec![positives[a]]);
            if max_arity < 2 {
                continue;
            }
            for b in a + 1..positives.len() {
                combos.insert(vec![positives[a], positives[b]]);
                if max_arity < 3 {
                    continue;
                }
                for c in b + 1..positives.len() {
                    combos.insert(vec![positives[a], positives[b], positives[c]]);
                }
            }
        }
    }
    let mut queries: Vec<Vec<usize>> = combos.into_iter().collect();
    queries.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    queries
        .into_iter()
        .map(|combo| combo.into_iter().map(|c| ann_vocab[c].clone()).collect())
        .collect()
}
