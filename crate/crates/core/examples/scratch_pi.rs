use ntl_core::calibrate::calibration_sweep;
use ntl_core::data::{AnnotatedImage, FeatureStore, TaggedImage, Vocabulary, build_vocab};
use ntl_core::eval::annotation_metrics;
use ntl_core::model::sigmoid;
use ntl_core::train::{train_all, TrainConfig};
use ntl_core::FeatureVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 8;
const TAGS: usize = 8;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gen(
    rng: &mut ChaCha8Rng,
    n: usize,
    weights: &[Vec<f64>],
    shifts: &[f64],
    pi: f64,
    prefix: &str,
) -> (FeatureStore, Vec<TaggedImage>, Vec<AnnotatedImage>) {
    let mut store = FeatureStore::new(DIM);
    let mut tagged = Vec::new();
    let mut annotated = Vec::new();
    for i in 0..n {
        let id = format!("{prefix}{i:06}");
        let values: Vec<f32> = (0..DIM).map(|_| normal(rng) as f32).collect();
        let x = FeatureVector::new(values).unwrap();
        let mut labels = Vec::new();
        let mut tags = Vec::new();
        for j in 0..TAGS {
            let s: f64 = x.values().iter().zip(&weights[j]).map(|(v, w)| f64::from(*v) * w).sum::<f64>() + shifts[j];
            let z = rng.random::<f64>() < sigmoid(s);
            let y = z && rng.random::<f64>() < pi;
            labels.push(z);
            if y { tags.push(format!("t{j}")); }
        }
        store.push(id.clone(), x).unwrap();
        tagged.push(TaggedImage { image_id: id.clone(), user_id: format!("u{}", i % 40), tags, feature_ref: Some(i) });
        annotated.push(AnnotatedImage { image_id: id, feature_ref: Some(i), labels });
    }
    (store, tagged, annotated)
}

fn main() {
    for seed in [5u64, 6, 7] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<Vec<f64>> = (0..TAGS).map(|_| (0..DIM).map(|_| normal(&mut rng) * 1.2).collect()).collect();
        let train_shifts = vec![0.0; TAGS];
        let calib_shifts: Vec<f64> = (0..TAGS).map(|j| if j % 2 == 0 { 1.4 } else { -1.4 }).collect();

        let (store, tagged, _) = gen(&mut rng, 12_000, &weights, &train_shifts, 0.5, "tr");
        let vocab: Vocabulary = build_vocab(&tagged, 1);
        let config = TrainConfig { num_minibatches: 4000, seed: 11, ..TrainConfig::default() };
        let run = train_all(&store, &tagged, &vocab, &config, 0).unwrap();
        assert_eq!(run.bundle.len(), TAGS);

        let (calib_store, _, calib_ann) = gen(&mut rng, 2_000, &weights, &calib_shifts, 0.5, "ca");
        let (eval_store, _, eval_ann) = gen(&mut rng, 2_000, &weights, &calib_shifts, 0.5, "ev");
        let ann_vocab: Vec<String> = (0..TAGS).map(|j| format!("t{j}")).collect();

        let sweep = calibration_sweep(&run.bundle, &calib_store, &calib_ann, &ann_vocab, &[10, 100, 1000], 21).unwrap();
        let base = annotation_metrics(&run.bundle, &eval_store, &eval_ann, &ann_vocab, 3).unwrap();
        print!("seed {seed}: uncal F={:.4}", base.f_score);
        for (size, bundle, _) in &sweep {
            let report = annotation_metrics(bundle, &eval_store, &eval_ann, &ann_vocab, 3).unwrap();
            print!("  F({size})={:.4}", report.f_score);
        }
        println!();
    }
}

#[allow(dead_code)]
fn unused() {}
