//! Synthetic corpus generator with known ground-truth parameters.
//!
//! Per tag, a weight vector is drawn and a bias solved so the latent
//! positive rate hits the requested prevalence; latent labels follow
//! `z ~ Bernoulli(sigmoid(w*.x + b*))` and observed tags flip through the
//! per-tag noise rates `pi*` and `gamma*`. Both the noisy uploader view and
//! the true-label view are emitted, so recovery of the generating
//! parameters can be checked end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, FeatureVector};

use super::{AnnotatedImage, FeatureStore, TaggedImage};

/// Per-tag parameter specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamSpec {
    Fixed { value: f64 },
    /// Independent uniform draw per tag.
    Uniform { lo: f64, hi: f64 },
    PerTag { values: Vec<f64> },
}

impl ParamSpec {
    pub fn fixed(value: f64) -> Self {
        Self::Fixed { value }
    }

    fn validate(&self, name: &str, num_tags: usize) -> Result<()> {
        let check = |v: f64| -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1], got {v}"
                )))
            }
        };
        match self {
            Self::Fixed { value } => check(*value),
            Self::Uniform { lo, hi } => {
                check(*lo)?;
                check(*hi)?;
                if lo > hi {
                    return Err(Error::InvalidParameter(format!(
                        "{name} range is inverted: {lo} > {hi}"
                    )));
                }
                Ok(())
            }
            Self::PerTag { values } => {
                if values.len() != num_tags {
                    return Err(Error::InvalidParameter(format!(
                        "{name} needs {num_tags} per-tag values, got {}",
                        values.len()
                    )));
                }
                values.iter().try_for_each(|v| check(*v))
            }
        }
    }

    fn draw(&self, tag: usize, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::Fixed { value } => *value,
            Self::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            Self::PerTag { values } => values[tag],
        }
    }
}

/// Makes earlier positions in the generated tag lists more reliable: the
/// chance that position `p` holds a true tag falls linearly from
/// `start_accuracy` to `end_accuracy` at `full_decline_position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionNoise {
    pub start_accuracy: f64,
    pub end_accuracy: f64,
    pub full_decline_position: usize,
}

impl Default for PositionNoise {
    fn default() -> Self {
        Self {
            start_accuracy: 0.65,
            end_accuracy: 0.35,
            full_decline_position: 20,
        }
    }
}

impl PositionNoise {
    fn accuracy_at(&self, position: usize) -> f64 {
        let last = self.full_decline_position.saturating_sub(1).max(1);
        let t = position.min(last) as f64 / last as f64;
        self.start_accuracy + (self.end_accuracy - self.start_accuracy) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_tags: usize,
    pub dim: usize,
    pub num_images: usize,
    pub pi_star: ParamSpec,
    pub gamma_star: ParamSpec,
    pub weight_scale: f64,
    /// Target latent positive rate per tag.
    pub prevalence: f64,
    pub position_noise: Option<PositionNoise>,
    pub num_users: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_tags: 20,
            dim: 10,
            num_images: 50_000,
            pi_star: ParamSpec::fixed(0.4),
            gamma_star: ParamSpec::fixed(1.0),
            weight_scale: 1.0,
            prevalence: 0.5,
            position_noise: None,
            num_users: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tags == 0 || self.dim == 0 || self.num_images == 0 {
            return Err(Error::InvalidParameter(
                "num_tags, dim, and num_images must all be positive".into(),
            ));
        }
        self.pi_star.validate("pi_star", self.num_tags)?;
        self.gamma_star.validate("gamma_star", self.num_tags)?;
        if !(self.weight_scale > 0.0) {
            return Err(Error::InvalidParameter("weight_scale must be > 0".into()));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidParameter(
                "prevalence must lie in (0, 1)".into(),
            ));
        }
        if self.num_users < 2 {
            return Err(Error::InvalidParameter("num_users must be >= 2".into()));
        }
        Ok(())
    }
}

/// Generating parameters of one tag, recorded for recovery checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagTruth {
    pub tag: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub pi: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub dim: usize,
    pub prevalence: f64,
    pub tags: Vec<TagTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub store: FeatureStore,
    pub tagged: Vec<TaggedImage>,
    pub annotated: Vec<AnnotatedImage>,
    pub vocab: Vec<String>,
    pub truth: TrueParams,
}

fn tag_name(j: usize) -> String {
    format!("tag{j:04}")
}

fn user_name(u: usize) -> String {
    format!("u{u:05}")
}

fn image_name(i: usize) -> String {
    format!("img{i:06}")
}

/// Solve for the bias that puts the mean of `sigmoid(u + b)` at the target
/// rate. The mean is strictly increasing in `b`, so plain bisection does.
fn solve_bias(scores: &[f64], target: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        let mean: f64 =
            scores.iter().map(|u| sigmoid(u + mid)).sum::<f64>() / scores.len() as f64;
        if mean < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let n = config.num_images;
    let d = config.dim;
    let t = config.num_tags;

    // Independent streams per component, all keyed by the root seed.
    let mut param_rng = ChaCha8Rng::seed_from_u64(config.seed);
    param_rng.set_stream(0);
    let mut feature_rng = ChaCha8Rng::seed_from_u64(config.seed);
    feature_rng.set_stream(1);
    let mut label_rng = ChaCha8Rng::seed_from_u64(config.seed);
    label_rng.set_stream(2);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(3);

    let mut weights = Vec::with_capacity(t);
    let mut pis = Vec::with_capacity(t);
    let mut gammas = Vec::with_capacity(t);
    for j in 0..t {
        let w: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut param_rng);
                z * config.weight_scale
            })
            .collect();
        weights.push(w);
        pis.push(config.pi_star.draw(j, &mut param_rng));
        gammas.push(config.gamma_star.draw(j, &mut param_rng));
    }

    let mut store = FeatureStore::new(d);
    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        let values: Vec<f32> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut feature_rng);
                z as f32
            })
            .collect();
        store.push(image_name(i), FeatureVector::new(values)?)?;
        users.push(feature_rng.random_range(0..config.num_users));
    }

    let mut biases = Vec::with_capacity(t);
    let mut z_matrix: Vec<Vec<bool>> = vec![vec![false; t]; n];
    let mut y_matrix: Vec<Vec<bool>> = vec![vec![false; t]; n];
    for j in 0..t {
        let scores: Vec<f64> = (0..n).map(|i| store.get(i).dot(&weights[j])).collect();
        let bias = solve_bias(&scores, config.prevalence);
        biases.push(bias);
        for i in 0..n {
            let z = label_rng.random::<f64>() < sigmoid(scores[i] + bias);
            let flip: f64 = label_rng.random();
            let y = if z {
                flip < pis[j]
            } else {
                flip < 1.0 - gammas[j]
            };
            z_matrix[i][j] = z;
            y_matrix[i][j] = y;
        }
    }

    let vocab: Vec<String> = (0..t).map(tag_name).collect();
    let mut tagged = Vec::with_capacity(n);
    let mut annotated = Vec::with_capacity(n);
    for i in 0..n {
        let tags = match &config.position_noise {
            None => (0..t)
                .filter(|&j| y_matrix[i][j])
                .map(tag_name)
                .collect(),
            Some(noise) => ordered_noisy_tags(&z_matrix[i], &y_matrix[i], noise, &mut order_rng),
        };
        tagged.push(TaggedImage {
            image_id: image_name(i),
            user_id: user_name(users[i]),
            tags,
            feature_ref: Some(i),
        });
        annotated.push(AnnotatedImage {
            image_id: image_name(i),
            feature_ref: Some(i),
            labels: z_matrix[i].clone(),
        });
    }

    let truth = TrueParams {
        dim: d,
        prevalence: config.prevalence,
        tags: (0..t)
            .map(|j| TagTruth {
                tag: tag_name(j),
                weights: weights[j].clone(),
                bias: biases[j],
                pi: pis[j],
                gamma: gammas[j],
            })
            .collect(),
    };

    Ok(SynthOutput {
        store,
        tagged,
        annotated,
        vocab,
        truth,
    })
}

/// Build an ordered tag list whose accuracy declines with position: slot
/// `p` holds a true tag with probability `accuracy_at(p)`, drawing without
/// replacement and falling back to the other pool when one runs dry.
fn ordered_noisy_tags(
    z_row: &[bool],
    y_row: &[bool],
    noise: &PositionNoise,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let list_len = y_row.iter().filter(|&&y| y).count();
    let mut true_pool: Vec<usize> = (0..z_row.len()).filter(|&j| z_row[j]).collect();
    let mut false_pool: Vec<usize> = (0..z_row.len()).filter(|&j| !z_row[j]).collect();
    shuffle(&mut true_pool, rng);
    shuffle(&mut false_pool, rng);
    let mut tags = Vec::with_capacity(list_len);
    for p in 0..list_len {
        let want_true = rng.random::<f64>() < noise.accuracy_at(p);
        let j = if want_true {
            true_pool.pop().or_else(|| false_pool.pop())
        } else {
            false_pool.pop().or_else(|| true_pool.pop())
        };
        match j {
            Some(j) => tags.push(tag_name(j)),
            None => break,
        }
    }
    tags
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
