//! The training driver: per-step updates, deterministic batching, loss
//! logging, checkpoint cadence.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{derive_seed, load_gray, Manifest};
use crate::nn::Module;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{
    l1_loss, mse_to, run_flows, theta_identity_penalty, CycleTarget, LossReport,
    RegistrationModel, TrainConfig, TrainError,
};

/// Model plus optimizer state. Discriminators, generators and the
/// registration head each keep their own optimizer; none share moments.
pub struct Trainer<T: Scalar> {
    pub model: RegistrationModel<T>,
    opt_g: Adam<T>,
    opt_d1: Adam<T>,
    opt_d2: Adam<T>,
    opt_stn: Adam<T>,
    step: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: RegistrationModel<T>) -> Self {
        let cfg = model.config.clone();
        let adam = |lr: f64| AdamConfig {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
        };
        let mut g_params = model.g1.params();
        g_params.extend(model.g2.params());
        let mut stn_params = model.vit.params();
        stn_params.extend(model.regressor.params());
        let opt_g = Adam::new(g_params, adam(cfg.lr_g));
        let opt_d1 = Adam::new(model.d1.params(), adam(cfg.lr_d));
        let opt_d2 = Adam::new(model.d2.params(), adam(cfg.lr_d));
        let opt_stn = Adam::new(stn_params, adam(cfg.lr_stn));
        Trainer {
            model,
            opt_g,
            opt_d1,
            opt_d2,
            opt_stn,
            step: 0,
        }
    }

    pub fn with_step(model: RegistrationModel<T>, step: u64) -> Self {
        let mut t = Trainer::new(model);
        t.step = step;
        t
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn zero_all_grads(&self) {
        self.opt_g.zero_grad();
        self.opt_d1.zero_grad();
        self.opt_d2.zero_grad();
        self.opt_stn.zero_grad();
    }

    /// One full update: each discriminator once, then one joint
    /// generator + registration-head update over the combined loss.
    pub fn train_step(&mut self, a01: &Tensor<T>, b01: &Tensor<T>) -> Result<LossReport, TrainError> {
        let cfg = self.model.config.clone();
        self.zero_all_grads();

        let flows = run_flows(&self.model, a01, b01);

        // discriminator for the V2T pair: condition on A
        let b_hat_const = flows.b_hat.detach();
        let d1_real = mse_to(&self.model.d1.forward(&flows.a, &flows.b), 1.0);
        let d1_fake = mse_to(&self.model.d1.forward(&flows.a, &b_hat_const), 0.0);
        let d1_loss = d1_real.add(&d1_fake).mul_scalar(T::from_f64(0.5));
        d1_loss.backward().expect("d1 loss is a tracked scalar");
        self.opt_d1.step();

        // discriminator for the T2V pair: condition on B
        let a1_hat_const = flows.a1_hat.detach();
        let d2_real = mse_to(&self.model.d2.forward(&flows.b, &flows.a), 1.0);
        let d2_fake = mse_to(&self.model.d2.forward(&flows.b, &a1_hat_const), 0.0);
        let d2_loss = d2_real.add(&d2_fake).mul_scalar(T::from_f64(0.5));
        d2_loss.backward().expect("d2 loss is a tracked scalar");
        self.opt_d2.step();

        // joint generator + registration objective against the fresh
        // discriminators
        let adv1 = mse_to(&self.model.d1.forward(&flows.a, &flows.b_hat), 1.0);
        let adv2 = mse_to(&self.model.d2.forward(&flows.b, &flows.a1_hat), 1.0);
        let l1_v2t = l1_loss(&flows.b_hat, &flows.b);
        let l1_t2v = l1_loss(&flows.a1_hat, &flows.a);
        let cycle_target = match cfg.cycle_target {
            CycleTarget::Visible => flows.a.clone(),
            CycleTarget::FakeVisible => flows.a1_hat.detach(),
        };
        let cycle = l1_loss(&flows.a2_hat, &cycle_target);
        let theta_reg = theta_identity_penalty(&flows.theta);

        let total = adv1
            .add(&adv2)
            .mul_scalar(T::from_f64(cfg.lambda_adv))
            .add(&l1_v2t.mul_scalar(T::from_f64(cfg.lambda_l1_v2t)))
            .add(&l1_t2v.mul_scalar(T::from_f64(cfg.lambda_l1_t2v)))
            .add(&cycle.mul_scalar(T::from_f64(cfg.lambda_cyc)))
            .add(&theta_reg.mul_scalar(T::from_f64(cfg.lambda_theta)));
        total.backward().expect("total loss is a tracked scalar");
        self.opt_g.step();
        self.opt_stn.step();

        self.step += 1;
        let report = LossReport {
            step: self.step,
            d1: d1_loss.item().as_f64(),
            d2: d2_loss.item().as_f64(),
            adv1: adv1.item().as_f64(),
            l1_v2t: l1_v2t.item().as_f64(),
            adv2: adv2.item().as_f64(),
            l1_t2v: l1_t2v.item().as_f64(),
            cycle: cycle.item().as_f64(),
            theta_reg: theta_reg.item().as_f64(),
            total: total.item().as_f64(),
        };
        report.check_finite()?;
        Ok(report)
    }
}

/// In-memory training set: images preloaded once, stacked per batch.
pub(crate) struct PairBank<T: Scalar> {
    pub ids: Vec<String>,
    visible: Vec<Vec<T>>,
    thermal: Vec<Vec<T>>,
    image_size: usize,
}

impl<T: Scalar> PairBank<T> {
    pub fn load(
        pairs: &[&crate::data::ImagePair],
        image_size: usize,
    ) -> Result<Self, TrainError> {
        let mut bank = PairBank {
            ids: Vec::new(),
            visible: Vec::new(),
            thermal: Vec::new(),
            image_size,
        };
        for p in pairs {
            let vis = load_gray::<T>(&p.visible_path).map_err(TrainError::Data)?;
            let thm = load_gray::<T>(&p.thermal_path).map_err(TrainError::Data)?;
            for img in [&vis, &thm] {
                if img.shape() != [image_size, image_size] {
                    return Err(TrainError::ImageSize {
                        pair_id: p.pair_id.clone(),
                        got: img.shape().to_vec(),
                        expect: image_size,
                    });
                }
            }
            bank.ids.push(p.pair_id.clone());
            bank.visible.push(vis.to_vec());
            bank.thermal.push(thm.to_vec());
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let hw = self.image_size * self.image_size;
        let mut a = Vec::with_capacity(indices.len() * hw);
        let mut b = Vec::with_capacity(indices.len() * hw);
        for &i in indices {
            a.extend_from_slice(&self.visible[i]);
            b.extend_from_slice(&self.thermal[i]);
        }
        let shape = [indices.len(), 1, self.image_size, self.image_size];
        (Tensor::new(a, &shape), Tensor::new(b, &shape))
    }
}

/// Deterministic epoch shuffling: a fresh permutation per epoch, derived
/// from (seed, epoch index).
pub(crate) struct IndexSampler {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl IndexSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = IndexSampler {
            n,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, self.epoch));
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.epoch += 1;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.n {
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Artifacts of a completed run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub steps_run: u64,
}

/// Train from a manifest. The manifest is fully validated (including file
/// existence) before any step runs; checkpoints land in `out_dir` at the
/// configured cadence plus a final one; losses stream to losses.csv.
/// `resume_from` restarts from a saved checkpoint, continuing its step
/// counter (fresh optimizer moments).
pub fn train<T: Scalar>(
    manifest: &Manifest,
    config: &TrainConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    manifest.validate().map_err(TrainError::Data)?;
    manifest.validate_files().map_err(TrainError::Data)?;
    let train_pairs = manifest.train();
    if train_pairs.is_empty() {
        return Err(TrainError::NoPairs("train"));
    }

    std::fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut trainer = match resume_from {
        Some(ckpt_path) => {
            let loaded = checkpoint::load::<T>(ckpt_path)?;
            Trainer::with_step(loaded.model, loaded.step)
        }
        None => Trainer::new(RegistrationModel::new(config)),
    };
    let cfg = trainer.model.config.clone();

    let bank = PairBank::<T>::load(&train_pairs, cfg.image_size)?;
    let mut sampler = IndexSampler::new(bank.len(), cfg.seed);

    let loss_log = out_dir.join("losses.csv");
    let mut log = std::fs::File::create(&loss_log).map_err(|source| TrainError::Io {
        path: loss_log.clone(),
        source,
    })?;
    writeln!(log, "{}", LossReport::CSV_HEADER).map_err(|source| TrainError::Io {
        path: loss_log.clone(),
        source,
    })?;

    let ckpt_path = |step: u64| out_dir.join(format!("ckpt-{step:06}.vtm"));
    let mut steps_run = 0;
    let target = trainer.step_count() + cfg.steps;
    while trainer.step_count() < target {
        let indices = sampler.next_batch(cfg.batch_size);
        let (a01, b01) = bank.batch(&indices);
        let report = trainer.train_step(&a01, &b01)?;
        writeln!(log, "{}", report.to_csv_row()).map_err(|source| TrainError::Io {
            path: loss_log.clone(),
            source,
        })?;
        steps_run += 1;
        if cfg.checkpoint_every > 0 && trainer.step_count() % cfg.checkpoint_every == 0 {
            checkpoint::save(&ckpt_path(trainer.step_count()), &trainer.model, trainer.step_count())?;
        }
    }

    let final_checkpoint = ckpt_path(trainer.step_count());
    checkpoint::save(&final_checkpoint, &trainer.model, trainer.step_count())?;
    Ok(TrainOutcome {
        final_checkpoint,
        loss_log,
        steps_run,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::data::{procedural_face, synthesize_corpus, SynthConfig};

    fn face_batch(seed: u64, n: usize, size: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..n {
            let f = procedural_face::<f32>(seed + i as u64, size);
            a.extend(f.to_vec());
            b.extend(crate::data::pseudo_thermal(&f, seed + i as u64, 1.5).to_vec());
        }
        let shape = [n, 1, size, size];
        (Tensor::new(a, &shape), Tensor::new(b, &shape))
    }

    #[test]
    fn joint_training_moves_every_network() {
        // The zero-weight identity head blocks gradient into the encoder at
        // the very first step (dθ·Wᵀ = 0); from step 2 the head is nonzero
        // and all four networks must move.
        let cfg = tiny_config();
        let model = RegistrationModel::<f32>::new(&cfg);
        let snapshot: Vec<(String, Vec<f32>)> = model
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.to_vec()))
            .collect();
        let mut trainer = Trainer::new(model);
        let (a, b) = face_batch(0, 2, 32);
        trainer.train_step(&a, &b).unwrap();
        trainer.train_step(&a, &b).unwrap();

        let mut changed = std::collections::BTreeSet::new();
        for ((name, before), (_, after)) in
            snapshot.iter().zip(trainer.model.named_params())
        {
            if *before != after.to_vec() {
                changed.insert(name.split('.').next().unwrap().to_string());
            }
        }
        for net in ["g1", "g2", "d1", "d2", "vit", "regressor"] {
            assert!(changed.contains(net), "{net} did not move; changed: {changed:?}");
        }
    }

    #[test]
    fn identical_seeds_give_bit_identical_loss_reports() {
        let cfg = tiny_config();
        let run = || {
            let mut trainer = Trainer::new(RegistrationModel::<f32>::new(&cfg));
            let (a, b) = face_batch(4, 2, 32);
            (0..10)
                .map(|_| trainer.train_step(&a, &b).unwrap().to_csv_row())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn theta_stays_identity_when_only_its_regularizer_is_active() {
        let cfg = TrainConfig {
            lambda_adv: 0.0,
            lambda_l1_v2t: 0.0,
            lambda_l1_t2v: 0.0,
            lambda_cyc: 0.0,
            ..tiny_config()
        };
        let mut trainer = Trainer::new(RegistrationModel::<f32>::new(&cfg));
        let (a, b) = face_batch(8, 2, 32);
        for _ in 0..5 {
            trainer.train_step(&a, &b).unwrap();
        }
        let flows = run_flows(&trainer.model, &a, &b);
        for t in crate::stn::theta_from_tensor(&flows.theta) {
            assert_eq!(t, crate::stn::AffineParams::identity());
        }
    }

    #[test]
    fn overfit_eight_pairs_reduces_translation_losses() {
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 8,
            ..tiny_config()
        };
        let mut trainer = Trainer::new(RegistrationModel::<f32>::new(&cfg));
        let (a, b) = face_batch(100, 8, 32);
        let first = trainer.train_step(&a, &b).unwrap();
        let mut last = first;
        for _ in 1..200 {
            last = trainer.train_step(&a, &b).unwrap();
        }
        assert!(
            last.l1_v2t < first.l1_v2t,
            "V2T L1 did not drop: {} -> {}",
            first.l1_v2t,
            last.l1_v2t
        );
        assert!(
            last.l1_t2v < first.l1_t2v,
            "T2V L1 did not drop: {} -> {}",
            first.l1_t2v,
            last.l1_t2v
        );
    }

    #[test]
    fn train_rejects_empty_and_missing_before_running() {
        let dir = tempfile::tempdir().unwrap();
        // manifest referencing nonexistent files
        let pairs = vec![crate::data::ImagePair {
            pair_id: "p0".into(),
            subject_id: "s0".into(),
            visible_path: dir.path().join("nope_vis.png"),
            thermal_path: dir.path().join("nope_thm.png"),
            split: crate::data::Split::Train,
            pain_class: None,
            theta_true: None,
        }];
        let manifest = Manifest::new(pairs).unwrap();
        match train::<f32>(&manifest, &tiny_config(), dir.path(), None) {
            Err(TrainError::Data(crate::data::DataError::MissingFiles { .. })) => {}
            other => panic!("expected MissingFiles, got {other:?}"),
        }
    }

    #[test]
    fn smoke_train_writes_loadable_checkpoint_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let bases: Vec<(String, Tensor<f32>)> = (0..4)
            .map(|s| (format!("s{s}"), procedural_face(s, 32)))
            .collect();
        let manifest = synthesize_corpus(
            &corpus,
            &bases,
            8,
            &SynthConfig::default().scaled(0.3),
            1,
            0.25,
        )
        .unwrap();

        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            checkpoint_every: 0,
            ..tiny_config()
        };
        let out = dir.path().join("run");
        let outcome = train::<f32>(&manifest, &cfg, &out, None).unwrap();
        assert_eq!(outcome.steps_run, 3);
        assert!(outcome.final_checkpoint.is_file());
        assert!(outcome.loss_log.is_file());
        let log = std::fs::read_to_string(&outcome.loss_log).unwrap();
        assert_eq!(log.lines().count(), 4); // header + 3 steps

        // resume continues the counter
        let out2 = dir.path().join("run2");
        let resumed = train::<f32>(&manifest, &cfg, &out2, Some(&outcome.final_checkpoint)).unwrap();
        assert!(resumed
            .final_checkpoint
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .contains("000006"));
    }

    #[test]
    fn sampler_is_deterministic_and_covers_all_indices() {
        let mut s1 = IndexSampler::new(5, 3);
        let mut s2 = IndexSampler::new(5, 3);
        let b1: Vec<usize> = (0..4).flat_map(|_| s1.next_batch(3)).collect();
        let b2: Vec<usize> = (0..4).flat_map(|_| s2.next_batch(3)).collect();
        assert_eq!(b1, b2);
        // first epoch (5 draws) is a permutation of 0..5
        let mut first: Vec<usize> = b1[..5].to_vec();
        first.sort_unstable();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
    }
}
