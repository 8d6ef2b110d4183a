//! Data model, file formats, preprocessing rules, and the synthetic
//! tag-noise generator.

mod features;
mod lemma;
mod synth;

pub use features::{FeatureStore, FEATURE_MAGIC};
pub use lemma::lemmatize;
pub use synth::{synth_generate, ParamSpec, PositionNoise, SynthConfig, SynthOutput, TagTruth, TrueParams};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw uploader-supplied record: ordered tag list, position matters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedImage {
    pub image_id: String,
    pub user_id: String,
    pub tags: Vec<String>,
    /// Index into a [`FeatureStore`], filled by [`link_features`].
    pub feature_ref: Option<usize>,
}

/// Curated record: binary ground truth over an evaluation vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub feature_ref: Option<usize>,
    pub labels: Vec<bool>,
}

/// Ordered tag vocabulary with occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tags: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_counted(entries: Vec<(String, u64)>) -> Self {
        let mut index = HashMap::with_capacity(entries.len());
        let mut tags = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (tag, count)) in entries.into_iter().enumerate() {
            index.insert(tag.clone(), i);
            tags.push(tag);
            counts.push(count);
        }
        Self { tags, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.index.contains_key(tag)
    }
}

/// Per-file parse outcome for the tag TSV reader.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseReport {
    pub rows: usize,
    pub rejected_rows: usize,
    pub duplicate_image_ids: Vec<String>,
}

/// Read uploader tags from TSV: `image_id, user_id, tag, tag, ...` with
/// order preserved and empty cells skipped. Rows with a missing id are
/// rejected and counted; duplicate image ids are kept and flagged.
pub fn load_tags(path: impl AsRef<Path>) -> Result<(Vec<TaggedImage>, ParseReport)> {
    let content = std::fs::read_to_string(path)?;
    let mut images = Vec::new();
    let mut report = ParseReport::default();
    let mut seen = HashSet::new();
    for line in content.lines() {
        if line.is_empty() {
            continue;
        }
        report.rows += 1;
        let mut fields = line.split('\t');
        let image_id = fields.next().unwrap_or_default();
        let user_id = fields.next().unwrap_or_default();
        if image_id.is_empty() || user_id.is_empty() {
            report.rejected_rows += 1;
            continue;
        }
        let tags: Vec<String> = fields
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if !seen.insert(image_id.to_string()) {
            report.duplicate_image_ids.push(image_id.to_string());
        }
        images.push(TaggedImage {
            image_id: image_id.to_string(),
            user_id: user_id.to_string(),
            tags,
            feature_ref: None,
        });
    }
    Ok((images, report))
}

pub fn save_tags(images: &[TaggedImage], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for img in images {
        write!(w, "{}\t{}", img.image_id, img.user_id)?;
        for tag in &img.tags {
            write!(w, "\t{tag}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read annotations from TSV. The header row is `image_id` followed by the
/// evaluation vocabulary; each data row is an image id and one 0/1 per tag.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<(Vec<AnnotatedImage>, Vec<String>)> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing header row".into(),
    })?;
    let mut header_fields = header.split('\t');
    let first = header_fields.next().unwrap_or_default();
    if first != "image_id" {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with 'image_id', got '{first}'"),
        });
    }
    let vocab: Vec<String> = header_fields.map(str::to_string).collect();
    let mut images = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let image_id = fields.next().unwrap_or_default().to_string();
        if image_id.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "missing image id".into(),
            });
        }
        let mut labels = Vec::with_capacity(vocab.len());
        for f in fields.by_ref() {
            match f {
                "0" => labels.push(false),
                "1" => labels.push(true),
                other => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("label must be 0 or 1, got '{other}'"),
                    })
                }
            }
        }
        if labels.len() != vocab.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected {} labels, got {}", vocab.len(), labels.len()),
            });
        }
        images.push(AnnotatedImage {
            image_id,
            feature_ref: None,
            labels,
        });
    }
    Ok((images, vocab))
}

pub fn save_annotations(
    images: &[AnnotatedImage],
    vocab: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "image_id")?;
    for tag in vocab {
        write!(w, "\t{tag}")?;
    }
    writeln!(w)?;
    for img in images {
        write!(w, "{}", img.image_id)?;
        for &label in &img.labels {
            write!(w, "\t{}", u8::from(label))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Preprocessing knobs; the tag-list truncation defaults to the first 20.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessRules {
    pub max_tags: usize,
    pub lemmatize: bool,
}

impl Default for PreprocessRules {
    fn default() -> Self {
        Self {
            max_tags: 20,
            lemmatize: true,
        }
    }
}

/// Lowercase, merge plural/singular forms, drop within-image duplicates
/// keeping the earliest position, and truncate to the first `max_tags`.
/// Idempotent.
pub fn preprocess_tags(images: &[TaggedImage], rules: &PreprocessRules) -> Vec<TaggedImage> {
    images
        .iter()
        .map(|img| {
            let mut seen = HashSet::new();
            let mut tags = Vec::new();
            for raw in &img.tags {
                let lowered = raw.to_lowercase();
                let tag = if rules.lemmatize {
                    lemmatize(&lowered)
                } else {
                    lowered
                };
                if seen.insert(tag.clone()) {
                    tags.push(tag);
                }
                if tags.len() == rules.max_tags {
                    break;
                }
            }
            TaggedImage {
                image_id: img.image_id.clone(),
                user_id: img.user_id.clone(),
                tags,
                feature_ref: img.feature_ref,
            }
        })
        .collect()
}

/// Count tag occurrences (once per image) and keep tags seen in at least
/// `min_count` images, ordered by descending count then lexicographically.
pub fn build_vocab(images: &[TaggedImage], min_count: u64) -> Vocabulary {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for img in images {
        let unique: HashSet<&str> = img.tags.iter().map(String::as_str).collect();
        for tag in unique {
            *counts.entry(tag).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_counted(entries)
}

/// Index partition produced by [`split_by_user`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Assign whole users to the test side, in seeded-hash order, until the
/// test set holds at least `test_fraction` of the images. No user appears
/// on both sides.
pub fn split_by_user(
    images: &[TaggedImage],
    test_fraction: f64,
    seed: u64,
) -> Result<UserSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, img) in images.iter().enumerate() {
        by_user.entry(img.user_id.as_str()).or_default().push(i);
    }
    if test_fraction > 0.0 && by_user.len() < 2 {
        return Err(Error::Split(format!(
            "need at least two users to split, found {}",
            by_user.len()
        )));
    }
    let mut users: Vec<(&str, &Vec<usize>)> = by_user.iter().map(|(u, v)| (*u, v)).collect();
    users.sort_by_key(|(user, _)| (fnv1a64(seed, user.as_bytes()), *user));

    let target = test_fraction * images.len() as f64;
    let mut split = UserSplit {
        train: Vec::new(),
        test: Vec::new(),
    };
    let mut test_count = 0usize;
    for (_, indices) in users {
        if test_fraction > 0.0 && (test_count as f64) < target {
            test_count += indices.len();
            split.test.extend(indices);
        } else {
            split.train.extend(indices);
        }
    }
    if split.train.is_empty() {
        return Err(Error::Split(
            "split left the training side empty; lower test_fraction".into(),
        ));
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Resolve every image's `feature_ref` against the store, erroring with the
/// full list of ids that have no feature vector.
pub fn link_features(images: &mut [TaggedImage], store: &FeatureStore) -> Result<()> {
    let mut missing = Vec::new();
    for img in images.iter_mut() {
        match store.index_of(&img.image_id) {
            Some(idx) => img.feature_ref = Some(idx),
            None => missing.push(img.image_id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFeatures { ids: missing })
    }
}

/// As [`link_features`] for annotated records.
pub fn link_annotation_features(
    images: &mut [AnnotatedImage],
    store: &FeatureStore,
) -> Result<()> {
    let mut missing = Vec::new();
    for img in images.iter_mut() {
        match store.index_of(&img.image_id) {
            Some(idx) => img.feature_ref = Some(idx),
            None => missing.push(img.image_id.clone()),
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFeatures { ids: missing })
    }
}
