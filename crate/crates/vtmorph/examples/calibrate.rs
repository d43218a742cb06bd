//! Desk-scale warp-recovery calibration: synthesize the quantitative
//! corpus, train, and report corner error on both splits at intervals.
//!
//! Run: cargo run --example calibrate -p vtmorph [steps] [lr_stn] [lambda_cyc]

use vtmorph::data::{procedural_face, synthesize_corpus, SynthConfig};
use vtmorph::stn::AffineParams;
use vtmorph::tensor::Tensor;
use vtmorph::train::{RegistrationModel, TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr_stn: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let lambda_cyc: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let lambda_l1_t2v: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let t2v_drop_step: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
    let t2v_after_drop: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(5.0);

    let dir = std::env::temp_dir().join("vtmorph-calibrate");
    let _ = std::fs::remove_dir_all(&dir);

    // criterion corpus: 200 train / 50 test, 64x64, translation <= 0.15,
    // rotation <= 10 deg, scale in [0.9, 1.1], no shear
    let synth = SynthConfig {
        max_translation: 0.15,
        max_rotation_deg: 10.0,
        scale_min: 0.9,
        scale_max: 1.1,
        max_shear: 0.0,
        ..SynthConfig::default()
    };
    let bases: Vec<(String, Tensor<f32>)> = (0..10)
        .map(|s| (format!("s{s:02}"), procedural_face(1000 + s, 64)))
        .collect();
    let manifest = synthesize_corpus(&dir, &bases, 250, &synth, 42, 0.2).unwrap();
    println!(
        "corpus: {} train / {} test",
        manifest.train().len(),
        manifest.test().len()
    );

    let config = TrainConfig {
        seed: 42,
        steps,
        lr_stn,
        lambda_cyc,
        lambda_l1_t2v,
        ..TrainConfig::default()
    };
    let model = RegistrationModel::<f32>::new(&config);
    let mut trainer = Trainer::new(model);

    // preload both splits
    let load = |pairs: &[&vtmorph::data::ImagePair]| {
        pairs
            .iter()
            .map(|p| {
                (
                    vtmorph::data::load_gray::<f32>(&p.visible_path).unwrap(),
                    vtmorph::data::load_gray::<f32>(&p.thermal_path).unwrap(),
                    AffineParams::<f64>::from_array(p.theta_true.unwrap()),
                )
            })
            .collect::<Vec<_>>()
    };
    let train_set = load(&manifest.train());
    let test_set = load(&manifest.test());

    let corner = |model: &RegistrationModel<f32>, set: &[(Tensor<f32>, Tensor<f32>, AffineParams<f64>)]| {
        let mut total = 0.0;
        for (vis, thm, theta_true) in set {
            let size = 64;
            let (theta, _) = vtmorph::tensor::no_grad(|| {
                let a01 = vis.reshape(&[1, 1, size, size]);
                let b01 = thm.reshape(&[1, 1, size, size]);
                let a = vtmorph::train::to_signed(&a01);
                let b = vtmorph::train::to_signed(&b01);
                let a1 = model.flow2_t2v(&b);
                model.flow3_register(&a, &a1, &b01)
            });
            let p = vtmorph::stn::theta_from_tensor(&theta)[0];
            let pred = AffineParams::<f64>::from_array(p.to_array().map(|v| v as f64));
            let target = theta_true.invert().unwrap();
            total += pred.corner_error(&target, size, size);
        }
        total / set.len() as f64
    };

    let bank_pairs = manifest.train();
    let bank = (0..bank_pairs.len())
        .map(|i| {
            (
                train_set[i].0.to_vec(),
                train_set[i].1.to_vec(),
            )
        })
        .collect::<Vec<_>>();
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let t0 = std::time::Instant::now();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut cursor = bank.len();
    let mut epoch = 0u64;
    for step in 0..steps {
        let mut idx = Vec::with_capacity(8);
        for _ in 0..8 {
            if cursor == bank.len() {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(epoch ^ 42);
                order.shuffle(&mut rng);
                cursor = 0;
                epoch += 1;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for &i in &idx {
            a.extend_from_slice(&bank[i].0);
            b.extend_from_slice(&bank[i].1);
        }
        let a = Tensor::new(a, &[8, 1, 64, 64]);
        let b = Tensor::new(b, &[8, 1, 64, 64]);
        if step == t2v_drop_step {
            trainer.model.config.lambda_l1_t2v = t2v_after_drop;
            println!("-- dropped lambda_l1_t2v to {t2v_after_drop} at step {step}");
        }
        let report = trainer.train_step(&a, &b).unwrap();
        if (step + 1) % 100 == 0 || step < 3 {
            let elapsed = t0.elapsed().as_secs_f64();
            let tr_err = corner(&trainer.model, &train_set[..40.min(train_set.len())]);
            let te_err = corner(&trainer.model, &test_set);
            println!(
                "step {:4} | {:5.1}s ({:.2}s/step) | l1_v2t {:.4} l1_t2v {:.4} cycle {:.4} treg {:.5} | corner train {:.3}px test {:.3}px",
                step + 1,
                elapsed,
                elapsed / (step + 1) as f64,
                report.l1_v2t,
                report.l1_t2v,
                report.cycle,
                report.theta_reg,
                tr_err,
                te_err
            );
        }
    }
}
