use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rationale::autodiff::{
    directional_gradient_check, gradient_check, gradient_check_with, AutodiffError, GradCheckOptions, Primitive,
    Tape, Tensor, ThresholdMode, Var,
};

type LossFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>>;

const TOL: f64 = 1e-4;

/// Contracts an arbitrary output with fixed weights so every element of the
/// output gets a distinct upstream gradient.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.37 + seed as f64 * 0.11).sin()).collect();
    let w = tape.constant(Tensor::new(shape, w).unwrap());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn check(f: LossFn, params: &[Tensor]) -> f64 {
    gradient_check(f, params, 1e-6).unwrap().max_relative_error
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

fn vector(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, n).prop_map(Tensor::vector)
}

/// Values bounded away from zero, for primitives with a kink there.
fn away_from_zero(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(prop_oneof![-2.0f64..-0.05, 0.05f64..2.0], n).prop_map(Tensor::vector)
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn matmul_grad((m, k) in dims(), n in 1usize..5, seed in 0u64..100) {
        let params = [Tensor::matrix(m, k, (0..m * k).map(|i| (i as f64 * 0.7 + seed as f64).cos()).collect()),
                      Tensor::matrix(k, n, (0..k * n).map(|i| (i as f64 * 1.3 - seed as f64).sin()).collect())];
        let err = check(Box::new(move |t, v| { let o = t.matmul(v[0], v[1])?; contract(t, o, seed) }), &params);
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn elementwise_binary_grads(a in matrix(3, 4), b in matrix(3, 4)) {
        for op in 0..3 {
            let err = check(Box::new(move |t, v| {
                let o = match op { 0 => t.add(v[0], v[1])?, 1 => t.sub(v[0], v[1])?, _ => t.mul(v[0], v[1])? };
                contract(t, o, op)
            }), &[a.clone(), b.clone()]);
            prop_assert!(err < TOL, "op {op}: {err}");
        }
    }

    #[test]
    fn row_vector_grads(a in matrix(3, 4), v in vector(4), s in vector(3)) {
        let err = check(Box::new(|t, x| { let o = t.add_row_vector(x[0], x[1])?; contract(t, o, 1) }), &[a.clone(), v.clone()]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, x| { let o = t.mul_row_vector(x[0], x[1])?; contract(t, o, 2) }), &[a.clone(), v]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, x| { let o = t.scale_rows(x[0], x[1])?; contract(t, o, 3) }), &[a.clone(), s]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, x| {
            let s = t.slice(x[1], 0, 1)?;
            let s = t.sum(s);
            let o = t.scale_by(s, x[0])?;
            contract(t, o, 4)
        }), &[a.clone(), Tensor::vector(vec![0.7, 0.2])]);
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn smooth_unary_grads(x in matrix(2, 5), scale in -2.0f64..2.0, shift in -1.0f64..1.0) {
        let err = check(Box::new(|t, v| { let o = t.sigmoid(v[0]); contract(t, o, 5) }), &[x.clone()]);
        prop_assert!(err < TOL, "sigmoid {err}");
        let err = check(Box::new(move |t, v| { let o = t.affine(v[0], scale, shift); contract(t, o, 6) }), &[x.clone()]);
        prop_assert!(err < TOL, "affine {err}");
        let err = check(Box::new(|t, v| { let o = t.softmax_rows(v[0])?; contract(t, o, 7) }), &[x.clone()]);
        prop_assert!(err < TOL, "softmax {err}");
        let err = check(Box::new(|t, v| { let o = t.layer_norm_rows(v[0])?; contract(t, o, 8) }), &[x.clone()]);
        prop_assert!(err < TOL, "layer norm {err}");
        let err = check(Box::new(|t, v| { let o = t.mean_rows(v[0])?; contract(t, o, 9) }), &[x.clone()]);
        prop_assert!(err < TOL, "mean rows {err}");
        let err = check(Box::new(|t, v| { let o = t.transpose(v[0])?; contract(t, o, 10) }), &[x.clone()]);
        prop_assert!(err < TOL, "transpose {err}");
        let err = check(Box::new(|t, v| { let o = t.mean(v[0]); let s = t.sum(v[0]); let p = t.mul(o, s)?; Ok(t.sum(p)) }), &[x]);
        prop_assert!(err < TOL, "mean/sum {err}");
    }

    #[test]
    fn kinked_unary_grads(x in away_from_zero(7)) {
        let err = check(Box::new(|t, v| { let o = t.selu(v[0]); contract(t, o, 11) }), &[x.clone()]);
        prop_assert!(err < TOL, "selu {err}");
        let err = check(Box::new(|t, v| { let o = t.relu(v[0]); contract(t, o, 12) }), &[x.clone()]);
        prop_assert!(err < TOL, "relu {err}");
        let err = check(Box::new(|t, v| { let o = t.abs(v[0]); contract(t, o, 13) }), &[x]);
        prop_assert!(err < TOL, "abs {err}");
    }

    #[test]
    fn maxpool_grad_with_distinct_values(m in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
        // distinct entries keep every column's argmax unique under the probe
        let data: Vec<f64> = (0..m * n).map(|i| ((i as u64 * 7919 + seed * 104729) % 1009) as f64 / 97.0).collect();
        let err = check(Box::new(|t, v| { let o = t.maxpool_rows(v[0])?; contract(t, o, 14) }), &[Tensor::matrix(m, n, data)]);
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn slicing_and_stacking_grads(x in matrix(3, 6), v in vector(5)) {
        let err = check(Box::new(|t, p| { let o = t.slice_cols(p[0], 1, 4)?; contract(t, o, 15) }), &[x.clone()]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, p| {
            let a = t.slice_cols(p[0], 0, 2)?;
            let b = t.slice_cols(p[0], 2, 6)?;
            let o = t.concat_cols(&[b, a])?;
            contract(t, o, 16)
        }), &[x.clone()]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, p| {
            let a = t.slice(p[0], 1, 3)?;
            let b = t.slice(p[0], 0, 3)?;
            let o = t.stack_rows(&[a, b, a])?;
            contract(t, o, 17)
        }), &[v]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, p| { let o = t.gather_rows(p[0], &[2, 0, 2, 1])?; contract(t, o, 18) }), &[x.clone()]);
        prop_assert!(err < TOL, "{err}");
        let err = check(Box::new(|t, p| { let o = t.segment_mean(p[0], &[vec![0, 2], vec![1], vec![2, 2, 0]])?; contract(t, o, 19) }), &[x]);
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn cosine_and_bce_grads(a in away_from_zero(5), b in away_from_zero(5), logits in vector(4), y in prop::collection::vec(0u8..2, 4)) {
        let err = check(Box::new(|t, p| t.cosine(p[0], p[1])), &[a, b]);
        prop_assert!(err < TOL, "cosine {err}");
        let targets: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let err = check(Box::new(move |t, p| { let q = t.sigmoid(p[0]); t.binary_cross_entropy(q, &targets) }), &[logits]);
        prop_assert!(err < TOL, "bce {err}");
    }

    #[test]
    fn threshold_is_binary_with_identity_backward(a in prop::collection::vec(0.0f64..=1.0, 1..12), g in prop::collection::vec(-3.0f64..3.0, 12)) {
        let n = a.len();
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(a.clone()));
        let z = t.threshold(x, 0.5).unwrap();
        for (zi, ai) in t.value(z).data().iter().zip(&a) {
            prop_assert!(*zi == 0.0 || *zi == 1.0);
            prop_assert_eq!(*zi == 1.0, *ai > 0.5);
        }
        let w = t.constant(Tensor::vector(g[..n].to_vec()));
        let p = t.mul(z, w).unwrap();
        let l = t.sum(p);
        t.backward(l).unwrap();
        prop_assert_eq!(t.grad(x).unwrap(), &g[..n]);
    }

    #[test]
    fn backward_is_linear(x in away_from_zero(6), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grad_of = |ka: f64, kb: f64| {
            let mut t = Tape::new();
            let v = t.param(x.clone());
            let s = t.sigmoid(v);
            let l1 = t.sum(s);
            let e = t.selu(v);
            let sq = t.mul(e, e).unwrap();
            let l2 = t.mean(sq);
            let l1 = t.affine(l1, ka, 0.0);
            let l2 = t.affine(l2, kb, 0.0);
            let l = t.add(l1, l2).unwrap();
            t.backward(l).unwrap();
            t.grad(v).unwrap().to_vec()
        };
        let combined = grad_of(a, b);
        let g1 = grad_of(1.0, 0.0);
        let g2 = grad_of(0.0, 1.0);
        for i in 0..combined.len() {
            let expect = a * g1[i] + b * g2[i];
            prop_assert!((combined[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{} vs {}", combined[i], expect);
        }
    }

    #[test]
    fn replay_is_bitwise_identical(x in matrix(3, 4), seed in 0u64..1000) {
        let run = || {
            let mut t = Tape::new();
            let v = t.param(x.clone());
            let s = t.softmax_rows(v).unwrap();
            let n = t.layer_norm_rows(s).unwrap();
            let l = contract(&mut t, n, seed).unwrap();
            t.backward(l).unwrap();
            (t.scalar(l).to_bits(), t.grad(v).unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn forward_examples() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::vector(vec![0.0]));
    let s = t.sigmoid(z);
    assert_eq!(t.value(s).data(), &[0.5]);
    let m = t.constant(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]));
    let p = t.maxpool_rows(m).unwrap();
    assert_eq!(t.value(p).data(), &[3.0, 5.0]);
    let a = t.constant(Tensor::vector(vec![1.0, 0.0]));
    let b = t.constant(Tensor::vector(vec![0.0, 1.0]));
    let c = t.cosine(a, b).unwrap();
    assert_eq!(t.scalar(c), 0.0);
}

#[test]
fn threshold_examples() {
    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![0.6, 0.4, 0.5]));
    let z = t.threshold(a, 0.5).unwrap();
    assert_eq!(t.value(z).data(), &[1.0, 0.0, 0.0]);
    let b = t.constant(Tensor::vector(vec![1.0, 1.0]));
    let z2 = t.threshold(b, 0.5).unwrap();
    assert_eq!(t.value(z2).data(), &[1.0, 1.0]);

    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![0.7, 0.2]));
    let z = t.threshold(a, 0.5).unwrap();
    let g = t.constant(Tensor::vector(vec![0.3, -0.2]));
    let p = t.mul(z, g).unwrap();
    let l = t.sum(p);
    t.backward(l).unwrap();
    assert_eq!(t.grad(a).unwrap(), &[0.3, -0.2]);
}

#[test]
fn threshold_rejects_out_of_range_scores() {
    let mut t = Tape::new();
    let a = t.param(Tensor::vector(vec![0.2, 1.5]));
    assert!(t.threshold(a, 0.5).is_err());
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
    let b = t.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
    let msg = t.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let l = t.sum(x);
    t.backward(l).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
    let l = t.mean(x);
    t.backward(l).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[0.25; 4]);

    let mut t = Tape::new();
    let w = t.param(Tensor::vector(vec![0.0]));
    let s = t.sigmoid(w);
    let s = t.affine(s, 2.0, 0.0);
    let l = t.sum(s);
    t.backward(l).unwrap();
    assert_eq!(t.grad(w).unwrap(), &[0.5]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    let l = t.sum(x);
    t.backward(l).unwrap();
    t.backward(l).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);
    t.zero_grad();
    assert!(t.grad(x).is_none());
}

#[test]
fn non_scalar_loss_fails() {
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
}

#[test]
fn quadratic_check_is_tight() {
    let f = |t: &mut Tape, v: &[Var]| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    };
    let r = gradient_check(f, &[Tensor::vector(vec![0.3, -1.2, 2.0])], 1e-5).unwrap();
    assert!(r.max_relative_error < 1e-6, "{}", r.max_relative_error);
}

#[test]
fn threshold_check_uses_soft_surrogate() {
    let f = |t: &mut Tape, v: &[Var]| {
        let a = t.sigmoid(v[0]);
        let z = t.threshold(a, 0.5)?;
        let w = t.constant(Tensor::vector(vec![1.0, -2.0, 0.5]));
        let p = t.mul(z, w)?;
        Ok(t.sum(p))
    };
    let params = [Tensor::vector(vec![0.4, -0.3, 1.1])];
    let soft = gradient_check_with(
        f,
        &params,
        GradCheckOptions {
            epsilon: 1e-6,
            mode: ThresholdMode::Surrogate,
            fault: None,
        },
    )
    .unwrap();
    assert!(soft.max_relative_error < 1e-6, "{}", soft.max_relative_error);
    // Against the hard step the numeric gradient is zero almost everywhere.
    let hard = gradient_check_with(
        f,
        &params,
        GradCheckOptions {
            epsilon: 1e-6,
            mode: ThresholdMode::Hard,
            fault: None,
        },
    )
    .unwrap();
    assert!(hard.max_relative_error > 0.5);
}

#[test]
fn injected_faults_are_caught() {
    let f = |t: &mut Tape, v: &[Var]| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.selu(h);
        let h = t.softmax_rows(h)?;
        let p = t.maxpool_rows(h)?;
        Ok(t.sum(p))
    };
    let params = [
        Tensor::matrix(3, 2, vec![0.1, -0.4, 0.9, 0.3, -0.7, 0.5]),
        Tensor::matrix(2, 3, vec![0.2, 0.8, -0.5, 1.1, -0.3, 0.6]),
    ];
    let clean = gradient_check(f, &params, 1e-6).unwrap();
    assert!(clean.max_relative_error < TOL);
    for p in [Primitive::MatMul, Primitive::Selu, Primitive::SoftmaxRows, Primitive::MaxPoolRows] {
        let opts = GradCheckOptions {
            epsilon: 1e-6,
            mode: ThresholdMode::Surrogate,
            fault: Some(p),
        };
        let r = gradient_check_with(f, &params, opts).unwrap();
        assert!(r.max_relative_error > TOL, "{p:?} fault went unnoticed");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = directional_gradient_check(f, &params, 4, opts, &mut rng).unwrap();
        assert!(r.max_relative_error > TOL, "{p:?} fault went unnoticed by directional probes");
    }
}

#[test]
fn gradient_check_rejects_bad_inputs() {
    let f = |t: &mut Tape, v: &[Var]| Ok(t.sum(v[0]));
    assert!(gradient_check(f, &[Tensor::vector(vec![1.0])], 0.0).is_err());
    let nan = |t: &mut Tape, v: &[Var]| {
        let s = t.sum(v[0]);
        Ok(t.affine(s, f64::NAN, 0.0))
    };
    assert!(gradient_check(nan, &[Tensor::vector(vec![1.0])], 1e-5).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(directional_gradient_check(f, &[Tensor::vector(vec![1.0])], 0, GradCheckOptions::default(), &mut rng).is_err());
}
