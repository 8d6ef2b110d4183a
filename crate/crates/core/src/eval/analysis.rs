//! Empirical analyses joining uploader tags with curated annotations:
//! per-tag tagging likelihoods, the positional accuracy curve, and the
//! comparison of learned tagging likelihoods against empirical ones.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::bundle::ModelBundle;
use crate::data::{AnnotatedImage, TaggedImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct TagLikelihoodRow {
    pub tag: String,
    pub z_positive: usize,
    /// Images with the concept present that the uploader actually tagged.
    pub supplied: usize,
    pub z_negative: usize,
    /// Images without the concept that carry the tag anyway.
    pub spurious: usize,
    /// `P(y=1|z=1)`; absent when the tag has no true positives.
    pub p_supply: Option<f64>,
    /// `P(y=1|z=0)`.
    pub p_spurious: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TagLikelihoods {
    pub per_tag: Vec<TagLikelihoodRow>,
    pub pooled_supply: f64,
    pub pooled_spurious: f64,
    /// `P(z=1|y=1)` pooled over all tags.
    pub observed_true_rate: f64,
    pub joined_images: usize,
}

impl TagLikelihoods {
    pub fn per_tag_tsv(&self) -> String {
        let mut out = String::from(
            "tag\tz_positive\tsupplied\tz_negative\tspurious\tp_supply\tp_spurious\n",
        );
        for row in &self.per_tag {
            let supply = row.p_supply.map_or(String::from("NA"), |p| format!("{p:.6}"));
            let spurious = row.p_spurious.map_or(String::from("NA"), |p| format!("{p:.6}"));
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                row.tag, row.z_positive, row.supplied, row.z_negative, row.spurious, supply, spurious
            );
        }
        out
    }
}

/// Join uploader tags with annotations on image id (identity tag mapping)
/// and count the four (y, z) cells per tag.
pub fn empirical_tag_likelihoods(
    tagged: &[TaggedImage],
    truth: &[AnnotatedImage],
    ann_vocab: &[String],
) -> Result<TagLikelihoods> {
    let truth_by_id: HashMap<&str, &AnnotatedImage> = truth
        .iter()
        .map(|img| (img.image_id.as_str(), img))
        .collect();
    let column_of: HashMap<&str, usize> = ann_vocab
        .iter()
        .enumerate()
        .map(|(c, t)| (t.as_str(), c))
        .collect();

    let t = ann_vocab.len();
    let mut z_positive = vec![0usize; t];
    let mut supplied = vec![0usize; t];
    let mut z_negative = vec![0usize; t];
    let mut spurious = vec![0usize; t];
    let mut joined = 0usize;
    for image in tagged {
        let Some(annotated) = truth_by_id.get(image.image_id.as_str()) else {
            continue;
        };
        joined += 1;
        let mut has_tag = vec![false; t];
        for tag in &image.tags {
            if let Some(&col) = column_of.get(tag.as_str()) {
                has_tag[col] = true;
            }
        }
        for col in 0..t {
            if annotated.labels[col] {
                z_positive[col] += 1;
                supplied[col] += usize::from(has_tag[col]);
            } else {
                z_negative[col] += 1;
                spurious[col] += usize::from(has_tag[col]);
            }
        }
    }
    if joined == 0 {
        return Err(Error::EmptyInput(
            "no tagged image joins an annotated image".into(),
        ));
    }

    let per_tag: Vec<TagLikelihoodRow> = ann_vocab
        .iter()
        .enumerate()
        .map(|(col, tag)| TagLikelihoodRow {
            tag: tag.clone(),
            z_positive: z_positive[col],
            supplied: supplied[col],
            z_negative: z_negative[col],
            spurious: spurious[col],
            p_supply: (z_positive[col] > 0)
                .then(|| supplied[col] as f64 / z_positive[col] as f64),
            p_spurious: (z_negative[col] > 0)
                .then(|| spurious[col] as f64 / z_negative[col] as f64),
        })
        .collect();

    let total_z1: usize = z_positive.iter().sum();
    let total_z0: usize = z_negative.iter().sum();
    let total_supplied: usize = supplied.iter().sum();
    let total_spurious: usize = spurious.iter().sum();
    let total_observed = total_supplied + total_spurious;
    Ok(TagLikelihoods {
        per_tag,
        pooled_supply: if total_z1 > 0 {
            total_supplied as f64 / total_z1 as f64
        } else {
            0.0
        },
        pooled_spurious: if total_z0 > 0 {
            total_spurious as f64 / total_z0 as f64
        } else {
            0.0
        },
        observed_true_rate: if total_observed > 0 {
            total_supplied as f64 / total_observed as f64
        } else {
            0.0
        },
        joined_images: joined,
    })
}

/// One bucket of the tag-position accuracy curve (1-based positions; the
/// last bucket pools everything at or past the cutoff).
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub position: usize,
    pub accuracy: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn curve_tsv(points: &[CurvePoint]) -> String {
    let mut out = String::from("position\taccuracy\tstderr\tcount\n");
    for p in points {
        let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{}", p.position, p.accuracy, p.stderr, p.count);
    }
    out
}

/// Fraction of tags at each list position that are true under the
/// annotations, with binomial standard errors. Positions at or past
/// `pool_from` share one bucket; empty buckets are omitted.
pub fn index_accuracy_curve(
    tagged: &[TaggedImage],
    truth: &[AnnotatedImage],
    ann_vocab: &[String],
    pool_from: usize,
) -> Result<Vec<CurvePoint>> {
    if pool_from < 2 {
        return Err(Error::InvalidParameter("pool_from must be >= 2".into()));
    }
    let truth_by_id: HashMap<&str, &AnnotatedImage> = truth
        .iter()
        .map(|img| (img.image_id.as_str(), img))
        .collect();
    let column_of: HashMap<&str, usize> = ann_vocab
        .iter()
        .enumerate()
        .map(|(c, t)| (t.as_str(), c))
        .collect();

    let mut totals = vec![0usize; pool_from];
    let mut accurate = vec![0usize; pool_from];
    let mut joined = 0usize;
    for image in tagged {
        let Some(annotated) = truth_by_id.get(image.image_id.as_str()) else {
            continue;
        };
        joined += 1;
        for (pos, tag) in image.tags.iter().enumerate() {
            let Some(&col) = column_of.get(tag.as_str()) else {
                continue;
            };
            let bucket = pos.min(pool_from - 1);
            totals[bucket] += 1;
            accurate[bucket] += usize::from(annotated.labels[col]);
        }
    }
    if joined == 0 {
        return Err(Error::EmptyInput(
            "no tagged image joins an annotated image".into(),
        ));
    }

    Ok((0..pool_from)
        .filter(|&b| totals[b] > 0)
        .map(|b| {
            let n = totals[b] as f64;
            let a = accurate[b] as f64 / n;
            CurvePoint {
                position: b + 1,
                accuracy: a,
                stderr: (a * (1.0 - a) / n).sqrt(),
                count: totals[b],
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PiComparisonRow {
    pub tag: String,
    pub learned_pi: f64,
    pub empirical_p_supply: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PiComparison {
    /// Pearson correlation over the shared tags.
    pub r: f64,
    pub rows: Vec<PiComparisonRow>,
}

impl PiComparison {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("tag\tlearned_pi\tempirical_p_supply\n");
        for row in &self.rows {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", row.tag, row.learned_pi, row.empirical_p_supply);
        }
        out
    }
}

/// Pair each tag's learned `pi` with its empirical supply likelihood and
/// correlate. Needs at least three tags present on both sides.
pub fn compare_pi(bundle: &ModelBundle, likelihoods: &TagLikelihoods) -> Result<PiComparison> {
    let mut rows = Vec::new();
    for row in &likelihoods.per_tag {
        let Some(p_supply) = row.p_supply else {
            continue;
        };
        if let Some(model) = bundle.get(&row.tag) {
            rows.push(PiComparisonRow {
                tag: row.tag.clone(),
                learned_pi: model.pi,
                empirical_p_supply: p_supply,
            });
        }
    }
    if rows.len() < 3 {
        return Err(Error::EmptyInput(format!(
            "need at least 3 shared tags to correlate, found {}",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mean_a = rows.iter().map(|r| r.learned_pi).sum::<f64>() / n;
    let mean_b = rows.iter().map(|r| r.empirical_p_supply).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for row in &rows {
        let da = row.learned_pi - mean_a;
        let db = row.empirical_p_supply - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    let denom = (var_a * var_b).sqrt();
    let r = if denom > 0.0 { cov / denom } else { 0.0 };
    Ok(PiComparison { r, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TagModel;

    fn tagged(id: &str, tags: &[&str]) -> TaggedImage {
        TaggedImage {
            image_id: id.into(),
            user_id: "u".into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            feature_ref: None,
        }
    }

    fn annotated(id: &str, labels: &[bool]) -> AnnotatedImage {
        AnnotatedImage {
            image_id: id.into(),
            feature_ref: None,
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn truth_equals_tags_gives_perfect_rates() {
        let vocab = vec!["a".to_string(), "b".to_string()];
        let tagged = vec![tagged("i1", &["a"]), tagged("i2", &["b"])];
        let truth = vec![
            annotated("i1", &[true, false]),
            annotated("i2", &[false, true]),
        ];
        let out = empirical_tag_likelihoods(&tagged, &truth, &vocab).unwrap();
        assert_eq!(out.pooled_supply, 1.0);
        assert_eq!(out.pooled_spurious, 0.0);
        assert_eq!(out.observed_true_rate, 1.0);
    }

    #[test]
    fn zero_positive_tags_are_flagged_undefined() {
        let vocab = vec!["a".to_string(), "never".to_string()];
        let tagged = vec![tagged("i1", &["a"])];
        let truth = vec![annotated("i1", &[true, false])];
        let out = empirical_tag_likelihoods(&tagged, &truth, &vocab).unwrap();
        assert!(out.per_tag[1].p_supply.is_none());
        assert!(out.per_tag[0].p_supply.is_some());
    }

    #[test]
    fn counts_follow_definitions() {
        let vocab = vec!["a".to_string()];
        let tagged = vec![
            tagged("i1", &["a"]),   // z=1, y=1
            tagged("i2", &[]),      // z=1, y=0
            tagged("i3", &["a"]),   // z=0, y=1
            tagged("i4", &[]),      // z=0, y=0
        ];
        let truth = vec![
            annotated("i1", &[true]),
            annotated("i2", &[true]),
            annotated("i3", &[false]),
            annotated("i4", &[false]),
        ];
        let out = empirical_tag_likelihoods(&tagged, &truth, &vocab).unwrap();
        assert_eq!(out.per_tag[0].p_supply, Some(0.5));
        assert_eq!(out.per_tag[0].p_spurious, Some(0.5));
        assert_eq!(out.observed_true_rate, 0.5);
    }

    #[test]
    fn accurate_tags_give_flat_unit_curve() {
        let vocab = vec!["a".to_string(), "b".to_string()];
        let tagged = vec![tagged("i1", &["a", "b"]), tagged("i2", &["b"])];
        let truth = vec![
            annotated("i1", &[true, true]),
            annotated("i2", &[false, true]),
        ];
        let points = index_accuracy_curve(&tagged, &truth, &vocab, 20).unwrap();
        assert!(points.iter().all(|p| p.accuracy == 1.0));
        assert_eq!(points[0].count, 2);
    }

    #[test]
    fn positions_past_cutoff_pool_into_last_bucket() {
        let vocab: Vec<String> = (0..25).map(|i| format!("t{i}")).collect();
        let tag_names: Vec<&str> = vocab.iter().map(String::as_str).collect();
        let tagged = vec![tagged("i1", &tag_names)];
        let truth = vec![annotated("i1", &vec![true; 25])];
        let points = index_accuracy_curve(&tagged, &truth, &vocab, 20).unwrap();
        let last = points.last().unwrap();
        assert_eq!(last.position, 20);
        assert_eq!(last.count, 6, "positions 20..25 pool together");
    }

    #[test]
    fn perfect_pi_agreement_correlates_at_one() {
        let models: Vec<TagModel> = [0.2, 0.5, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &pi)| TagModel {
                tag: format!("t{i}"),
                weights: vec![0.0],
                bias: 0.0,
                pi,
                gamma: 1.0,
                beta: 0.0,
            })
            .collect();
        let bundle = ModelBundle::new(1, models).unwrap();
        let likelihoods = TagLikelihoods {
            per_tag: [0.2, 0.5, 0.8]
                .iter()
                .enumerate()
                .map(|(i, &p)| TagLikelihoodRow {
                    tag: format!("t{i}"),
                    z_positive: 100,
                    supplied: (p * 100.0) as usize,
                    z_negative: 100,
                    spurious: 0,
                    p_supply: Some(p),
                    p_spurious: Some(0.0),
                })
                .collect(),
            pooled_supply: 0.5,
            pooled_spurious: 0.0,
            observed_true_rate: 1.0,
            joined_images: 100,
        };
        let cmp = compare_pi(&bundle, &likelihoods).unwrap();
        assert!((cmp.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_shared_tags_is_an_error() {
        let bundle = ModelBundle::new(1, vec![TagModel::new("only", 1)]).unwrap();
        let likelihoods = TagLikelihoods {
            per_tag: vec![TagLikelihoodRow {
                tag: "only".into(),
                z_positive: 1,
                supplied: 1,
                z_negative: 0,
                spurious: 0,
                p_supply: Some(1.0),
                p_spurious: None,
            }],
            pooled_supply: 1.0,
            pooled_spurious: 0.0,
            observed_true_rate: 1.0,
            joined_images: 1,
        };
        assert!(compare_pi(&bundle, &likelihoods).is_err());
    }
}
