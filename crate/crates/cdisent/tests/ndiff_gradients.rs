//! Finite-difference oracle tests for the reverse-mode tape, plus
//! checkpoint and optimizer behavior that crosses module boundaries.

use cdisent::ndiff::{
    backward, grad_check, mlp_forward, mlp_forward_tape, mlp_init, Activation, MlpArch, ParamSet,
    Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ps.insert(*name, Tensor::new(shape.clone(), data).unwrap()).unwrap();
    }
    ps
}

#[test]
fn linear_loss_gives_all_ones_gradient() {
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::matrix(2, 3, vec![0.3, -0.1, 2.0, 0.5, 0.0, -4.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let bound = tape.bind_params(&ps);
    let loss = tape.sum_all(bound.id("w").unwrap()).unwrap();
    backward(&tape, loss, &bound, &mut ps).unwrap();
    assert!(ps.get("w").unwrap().grad.data().iter().all(|&g| g == 1.0));
}

#[test]
fn quadratic_loss_gradient_equals_param() {
    let mut ps = ParamSet::<f64>::new();
    let w = vec![0.7f64, -1.4, 0.2, 3.1];
    ps.insert("w", Tensor::vector(w.clone()).unwrap()).unwrap();
    let mut tape = Tape::new();
    let bound = tape.bind_params(&ps);
    let wid = bound.id("w").unwrap();
    let sq = tape.square(wid).unwrap();
    let half = tape.scale(sq, 0.5).unwrap();
    let loss = tape.sum_all(half).unwrap();
    backward(&tape, loss, &bound, &mut ps).unwrap();
    let g = ps.get("w").unwrap().grad.data();
    for i in 0..w.len() {
        assert!((g[i] - w[i]).abs() < 1e-14);
    }
}

#[test]
fn unreachable_param_gets_zero_gradient() {
    let mut ps = ParamSet::new();
    ps.insert("used", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    ps.insert("unused", Tensor::vector(vec![5.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let bound = tape.bind_params(&ps);
    let loss = tape.sum_all(bound.id("used").unwrap()).unwrap();
    backward(&tape, loss, &bound, &mut ps).unwrap();
    assert_eq!(ps.get("unused").unwrap().grad.data(), &[0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    let mut tape = Tape::<f64>::new();
    let bound = tape.bind_params(&ps);
    let wid = bound.id("w").unwrap();
    assert!(tape.gradients(wid).is_err());
}

// Random 2-layer MLP with MSE loss against finite differences.
#[test]
fn mlp_mse_matches_central_differences() {
    for seed in 0..5u64 {
        let arch = MlpArch::new(vec![4, 6, 3], Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        mlp_init(&mut ps, "net", &arch, &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(2, 4, x).unwrap();
        let y = Tensor::matrix(2, 3, y).unwrap();

        let err = grad_check(
            |tape, bound| {
                let xid = tape.constant(x.clone());
                let yid = tape.constant(y.clone());
                let out = mlp_forward_tape(tape, bound, "net", xid, &arch)?;
                let diff = tape.sub(out, yid)?;
                let sq = tape.square(diff)?;
                tape.mean_all(sq)
            },
            &ps,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: max rel err {err}");
    }
}

// Softplus(sum(w)) composed through exp/log.
#[test]
fn softplus_of_sum_passes_grad_check() {
    let ps = random_params(&[("w", vec![7])], 42);
    let err = grad_check(
        |tape, bound| {
            let w = bound.id("w")?;
            let s = tape.sum_all(w)?;
            let e = tape.exp(s)?;
            let ep1 = tape.add_const(e, 1.0)?;
            tape.log(ep1)
        },
        &ps,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-5, "max rel err {err}");
}

// A gradient off by a factor of two must be flagged. Under the relative
// error definition |a - cd| / max(|a|, |cd|) a doubled gradient scores 0.5,
// well clear of the 1e-4 acceptance band.
#[test]
fn doubled_gradient_is_detected() {
    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::vector(vec![3.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let bound = tape.bind_params(&ps);
    let wid = bound.id("w").unwrap();
    let sq = tape.square(wid).unwrap();
    let loss = tape.sum_all(sq).unwrap();
    backward(&tape, loss, &bound, &mut ps).unwrap();
    let analytic = 2.0 * ps.get("w").unwrap().grad.data()[0]; // deliberately wrong
    let eps = 1e-5;
    let cd = (((3.0f64 + eps) * (3.0 + eps)) - ((3.0 - eps) * (3.0 - eps))) / (2.0 * eps);
    let rel = (analytic - cd).abs() / analytic.abs().max(cd.abs()).max(1e-8);
    assert!((rel - 0.5).abs() < 1e-6, "detector should report 0.5, got {rel}");
    assert!(rel > 1e-4 * 100.0, "detector must flag the corruption");
}

// Every differentiable op in the vocabulary, exercised jointly.
#[test]
fn full_op_vocabulary_passes_grad_check() {
    let ps = random_params(&[("a", vec![3, 4]), ("b", vec![4, 3]), ("c", vec![3]), ("d", vec![3, 3])], 9);
    let err = grad_check(
        |tape, bound| {
            let a = bound.id("a")?;
            let b = bound.id("b")?;
            let c = bound.id("c")?;
            let d = bound.id("d")?;
            let mm = tape.matmul(a, b)?; // [3,3]
            let t = tape.tanh(mm)?;
            let r = tape.relu(d)?;
            let s = tape.add(t, r)?;
            let sm = tape.softmax_rows(s)?;
            let lg = tape.log(sm)?;
            let rowsum = tape.sum_axis1(lg)?; // [3]
            let withrow = tape.add_row(s, c)?;
            let wr2 = tape.square(withrow)?;
            let wr2s = tape.add_const(wr2, 0.3)?;
            let sq = tape.sqrt(wr2s)?;
            let colred = tape.mean_axis0(sq)?; // [3]
            let cl = tape.clamp(colred, -2.0, 2.0)?;
            let picked = tape.slice_cols(sm, 1, 2)?;
            let cat = tape.concat_cols(picked, sm)?;
            let mx = tape.max_axis0(cat)?; // [5]
            let m1 = tape.mean_all(mx)?;
            let m2 = tape.sum_all(cl)?;
            let m3 = tape.mean_all(rowsum)?;
            let m3s = tape.scale(m3, 0.1)?;
            let e = tape.exp(m3s)?;
            let m12 = tape.add(m1, m2)?;
            let total = tape.add(m12, e)?;
            let s2 = tape.square(s)?;
            let s2sum = tape.sum_axis1(s2)?;
            let denom = tape.add_const(s2sum, 1.0)?;
            let dcol = tape.div_col(s, denom)?;
            let m4 = tape.mean_all(dcol)?;
            tape.add(total, m4)
        },
        &ps,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn pick_and_divrow_pass_grad_check() {
    let ps = random_params(&[("a", vec![4, 3])], 17);
    let err = grad_check(
        |tape, bound| {
            let a = bound.id("a")?;
            let sm = tape.softmax_rows(a)?;
            let picked = tape.pick_cols(sm, vec![0, 2, 1, 1])?; // [4]
            let psum = tape.sum_all(picked)?;
            let shifted = tape.add_const(psum, 0.5)?;
            let lp = tape.log(shifted)?;
            let means = tape.mean_axis0(a)?;
            let means2 = tape.square(means)?;
            let ranges = tape.add_const(means2, 0.7)?; // [3]
            let dr = tape.div_row(a, ranges)?;
            let m = tape.mean_all(dr)?;
            tape.add(lp, m)
        },
        &ps,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn forward_is_deterministic() {
    let arch = MlpArch::new(vec![5, 8, 4], Activation::Relu);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::<f32>::new();
    mlp_init(&mut ps, "net", &arch, &mut rng).unwrap();
    let x = Tensor::matrix(3, 5, (0..15).map(|i| (i as f32) / 7.0 - 1.0).collect()).unwrap();
    let a = mlp_forward(&ps, &x, "net", &arch).unwrap();
    let b = mlp_forward(&ps, &x, "net", &arch).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Gradients of a composite loss stay within the 1e-4 oracle band for
    // random parameter draws.
    #[test]
    fn random_mlp_gradients_within_band(seed in 0u64..500) {
        let arch = MlpArch::new(vec![3, 4, 2], Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        mlp_init(&mut ps, "net", &arch, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(2, 3, x).unwrap();
        let err = grad_check(
            |tape, bound| {
                let xid = tape.constant(x.clone());
                let out = mlp_forward_tape(tape, bound, "net", xid, &arch)?;
                let sq = tape.square(out)?;
                tape.mean_all(sq)
            },
            &ps,
            1e-3,
        ).unwrap();
        prop_assert!(err < 1e-4, "seed {} err {}", seed, err);
    }
}
