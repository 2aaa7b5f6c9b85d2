//! Model behavior: gradient integrity across variants, degenerate-label
//! equivalences, training determinism and the classifier surface.

use cdisent::datagen::{desk_tabular_spec, sample_dataset, LabeledDataset};
use cdisent::models::{loss_grad_check, train, CdVaeConfig, ModelError, PiPolicy, Variant};

fn tiny_config(variant: Variant) -> CdVaeConfig {
    CdVaeConfig {
        variant,
        latent_dim: 4,
        n_conf: 2,
        enc_hidden: vec![8],
        dec_hidden: vec![8],
        lambda_ioss: if variant == Variant::CdvaeIoss { 0.5 } else { 0.0 },
        n_classes: if variant == Variant::Classifier { 3 } else { 0 },
        ..CdVaeConfig::default()
    }
}

/// All-variant gradient integrity on tiny random batches in 64-bit.
#[test]
fn all_variant_losses_pass_grad_check() {
    let variants = [
        Variant::Cdvae,
        Variant::Vae,
        Variant::BetaVae,
        Variant::Cvae,
        Variant::Classifier,
    ];
    for variant in variants {
        let mut cfg = tiny_config(variant);
        cfg.beta = 2.5;
        // All loss weights strictly positive.
        cfg.lambda_rec = 1.0;
        cfg.lambda_cls = 0.7;
        cfg.lambda_kl = 0.9;
        for seed in 0..4u64 {
            let err = loss_grad_check(&cfg, 6, 2, seed, 1e-4).unwrap();
            assert!(err < 1e-4, "{variant} seed {seed}: max rel err {err}");
        }
    }
    // The support-regularized variant needs a bigger batch.
    let mut cfg = tiny_config(Variant::CdvaeIoss);
    cfg.lambda_rec = 1.0;
    cfg.lambda_cls = 0.7;
    cfg.lambda_kl = 0.9;
    for seed in 0..2u64 {
        let err = loss_grad_check(&cfg, 6, 32, seed, 1e-4).unwrap();
        assert!(err < 1e-4, "cdvae-ioss seed {seed}: max rel err {err}");
    }
}

/// Paper-literal L2 assignment normalization is also differentiable.
#[test]
fn paper_l2_policy_passes_grad_check() {
    let mut cfg = tiny_config(Variant::Cdvae);
    cfg.pi_policy = PiPolicy::PaperL2;
    for seed in 0..3u64 {
        let err = loss_grad_check(&cfg, 6, 2, seed, 1e-4).unwrap();
        assert!(err < 1e-4, "paper-l2 seed {seed}: max rel err {err}");
    }
}

fn small_dataset(n: usize, seed: u64) -> LabeledDataset {
    sample_dataset(&desk_tabular_spec(), n, seed).unwrap()
}

fn param_bits(model: &cdisent::models::TrainedModel) -> Vec<u32> {
    model.params.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
}

/// The one-component model IS the vanilla VAE: equal seeds give bit-equal
/// trajectories.
#[test]
fn single_label_model_is_bitwise_vanilla_vae() {
    let ds = small_dataset(512, 3);
    let mut a = tiny_config(Variant::Cdvae);
    a.n_conf = 1;
    a.epochs = 6;
    a.batch_size = 64;
    let mut b = tiny_config(Variant::Vae);
    b.epochs = 6;
    b.batch_size = 64;
    let ma = train(&a, &ds).unwrap();
    let mb = train(&b, &ds).unwrap();
    assert_eq!(param_bits(&ma), param_bits(&mb));
    for (ha, hb) in ma.history.iter().zip(&mb.history) {
        assert_eq!(ha.total.to_bits(), hb.total.to_bits());
    }
}

/// Beta-VAE at beta=1 is bit-identical to the vanilla VAE.
#[test]
fn beta_one_is_bitwise_vanilla_vae() {
    let ds = small_dataset(512, 4);
    let mut a = tiny_config(Variant::BetaVae);
    a.beta = 1.0;
    a.epochs = 5;
    a.batch_size = 64;
    let mut b = tiny_config(Variant::Vae);
    b.epochs = 5;
    b.batch_size = 64;
    assert_eq!(param_bits(&train(&a, &ds).unwrap()), param_bits(&train(&b, &ds).unwrap()));
}

#[test]
fn same_seed_reproduces_checkpoints() {
    let ds = small_dataset(512, 5);
    let mut cfg = tiny_config(Variant::Cdvae);
    cfg.n_conf = 4;
    cfg.epochs = 5;
    cfg.batch_size = 64;
    let a = train(&cfg, &ds).unwrap();
    let b = train(&cfg, &ds).unwrap();
    assert_eq!(param_bits(&a), param_bits(&b));
}

#[test]
fn loss_decreases_over_early_epochs() {
    let ds = small_dataset(2000, 6);
    let mut cfg = tiny_config(Variant::Cdvae);
    cfg.n_conf = 4;
    cfg.latent_dim = 8;
    cfg.enc_hidden = vec![32];
    cfg.dec_hidden = vec![32];
    cfg.epochs = 8;
    cfg.batch_size = 128;
    let model = train(&cfg, &ds).unwrap();
    assert!(!model.diverged);
    for w in model.history.windows(2).take(5) {
        assert!(
            w[1].total < w[0].total + 1e-9,
            "loss rose early: {} -> {}",
            w[0].total,
            w[1].total
        );
    }
    // Loss identity holds on every epoch record.
    for h in &model.history {
        h.check_identity(&cfg).unwrap();
    }
}

#[test]
fn classifier_reaches_high_accuracy_on_separable_data() {
    // Strong shape signal: crank the shape block scale so the task is
    // nearly noiseless, then expect >= 95% train accuracy quickly.
    let mut spec = desk_tabular_spec();
    spec.tabular_scales = vec![1.2, 1.0, 0.5, 0.5];
    spec.noise = 0.05;
    let ds = sample_dataset(&spec, 2000, 7).unwrap();
    let mut cfg = tiny_config(Variant::Classifier);
    cfg.n_conf = 4;
    cfg.latent_dim = 8;
    cfg.enc_hidden = vec![32];
    cfg.dec_hidden = vec![16];
    cfg.n_classes = 4;
    cfg.task_factor = 0;
    cfg.epochs = 30;
    cfg.batch_size = 128;
    let model = train(&cfg, &ds).unwrap();
    let acc = model.accuracy(&ds).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn classify_distribution_sums_to_one_and_checks_variant() {
    let ds = small_dataset(256, 8);
    let mut cfg = tiny_config(Variant::Classifier);
    cfg.n_conf = 4;
    cfg.n_classes = 4;
    cfg.epochs = 2;
    cfg.batch_size = 64;
    let model = train(&cfg, &ds).unwrap();
    let dist = model.classify(ds.observation(0)).unwrap();
    let s: f64 = dist.iter().sum();
    assert!((s - 1.0).abs() < 1e-6);
    assert!(dist.iter().all(|&p| p >= 0.0));

    // Generative models refuse to classify, classifiers refuse to
    // reconstruct.
    let gen = train(&tiny_config(Variant::Vae), &ds).unwrap();
    assert!(matches!(
        gen.classify(ds.observation(0)),
        Err(ModelError::WrongVariant { .. })
    ));
    assert!(matches!(model.reconstruct(&ds), Err(ModelError::WrongVariant { .. })));
}

/// Reparameterization statistics: mean and variance of sampled codes track
/// the encoder heads (Monte Carlo over the noise source used in training).
#[test]
fn reparameterization_moments_match() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
    let (mu, logvar) = (0.7f64, -0.4f64);
    let sigma2 = logvar.exp();
    let n = 100_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        let z = mu + (0.5 * logvar).exp() * e;
        sum += z;
        sumsq += z * z;
    }
    let mean = sum / n as f64;
    let var = sumsq / n as f64 - mean * mean;
    let se_mean = (sigma2 / n as f64).sqrt();
    assert!((mean - mu).abs() < 3.0 * se_mean, "mean {mean} vs {mu}");
    let se_var = sigma2 * (2.0 / n as f64).sqrt();
    assert!((var - sigma2).abs() < 3.0 * se_var, "var {var} vs {sigma2}");
}

#[test]
fn dataset_label_mismatch_is_rejected() {
    let ds = small_dataset(128, 9);
    let mut cfg = tiny_config(Variant::Cdvae);
    cfg.n_conf = 2; // dataset has labels up to 3
    cfg.epochs = 1;
    assert!(matches!(train(&cfg, &ds), Err(ModelError::DataMismatch(_))));
}

#[test]
fn save_load_roundtrip_preserves_parameters() {
    let ds = small_dataset(256, 11);
    let mut cfg = tiny_config(Variant::Cdvae);
    cfg.n_conf = 4;
    cfg.epochs = 2;
    cfg.batch_size = 64;
    let model = train(&cfg, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = cdisent::models::TrainedModel::load(dir.path()).unwrap();
    assert_eq!(param_bits(&model), param_bits(&loaded));
    assert_eq!(model.history.len(), loaded.history.len());
    // Loaded model produces identical latents.
    let probe = ds.take(32);
    assert_eq!(model.latents(&probe).unwrap(), loaded.latents(&probe).unwrap());
}
