use ntl_core::data::{build_vocab, synth_generate, ParamSpec, SynthConfig};
use ntl_core::train::{train_all, TrainConfig};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

fn main() {
    for (mb, seed) in [(8000usize, 77u64), (20000, 77), (20000, 78)] {
        let config = SynthConfig {
            num_tags: 20,
            dim: 10,
            num_images: 20_000,
            pi_star: ParamSpec::Uniform { lo: 0.25, hi: 0.95 },
            gamma_star: ParamSpec::fixed(1.0),
            seed,
            ..SynthConfig::default()
        };
        let out = synth_generate(&config).unwrap();
        let vocab = build_vocab(&out.tagged, 1);
        let tc = TrainConfig { num_minibatches: mb, seed: 5, ..TrainConfig::default() };
        let t = std::time::Instant::now();
        let run = train_all(&out.store, &out.tagged, &vocab, &tc, 0).unwrap();
        let learned: Vec<f64> = out.truth.tags.iter().map(|t| run.bundle.get(&t.tag).unwrap().pi).collect();
        let truth: Vec<f64> = out.truth.tags.iter().map(|t| t.pi).collect();
        println!("mb={mb} seed={seed}: r={:.4} ({:?})", pearson(&learned, &truth), t.elapsed());
        if mb == 20000 && seed == 77 {
            for (l, t) in learned.iter().zip(&truth) {
                print!(" {:.2}/{:.2}", l, t);
            }
            println!();
        }
    }
}
