use awa_core::autodiff::nn::{batch_norm_train, conv2d, softmax_cross_entropy};
use awa_core::autodiff::{
    finite_diff_gradient, forward_primitive, grad, ops, Array, AutodiffError, Primitive, Tape,
    Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-30)
}

fn random_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero so relu kinks stay out of finite-difference stencils.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Array::new(shape.to_vec(), data).unwrap()
}

/// Checks grad() of `f(inputs)` w.r.t. input `which` against central differences.
fn check_against_fd(
    f: &dyn Fn(&[Tensor]) -> Tensor,
    inputs: &[Array],
    which: usize,
    tol: f64,
) -> f64 {
    let tape = Tape::new();
    let tensors: Vec<Tensor> = inputs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if i == which {
                tape.leaf(a.clone())
            } else {
                Tensor::constant(a.clone())
            }
        })
        .collect();
    let out = f(&tensors);
    let analytic = grad(&out, &[tensors[which].clone()], false).unwrap();
    let numeric = finite_diff_gradient(
        |x| {
            let mut ts: Vec<Tensor> = inputs.iter().cloned().map(Tensor::constant).collect();
            ts[which] = Tensor::constant(x.clone());
            f(&ts).item()
        },
        &inputs[which],
        1e-5,
    );
    let err = rel_err(analytic[0].data(), numeric.data());
    assert!(err < tol, "relative error {err} exceeds {tol}");
    err
}

#[test]
fn relu_example() {
    let x = Tensor::constant(Array::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = forward_primitive(&Primitive::Relu, &[x]).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![-1.0, 0.0, 2.0]));
    let y = ops::sum_all(&ops::relu(&x));
    let g = grad(&y, &[x], false).unwrap();
    assert_eq!(g[0].data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn mean_example() {
    let x = Tensor::constant(Array::from_vec(vec![2.0, 4.0, 6.0]));
    assert_eq!(
        forward_primitive(&Primitive::Mean, &[x]).unwrap().item(),
        4.0
    );
}

#[test]
fn conv2d_identity_kernel_leaves_input_unchanged() {
    let data: Vec<f64> = (0..9).map(|v| v as f64 * 0.5 - 1.0).collect();
    let x = Tensor::constant(Array::new(vec![1, 1, 3, 3], data.clone()).unwrap());
    let k = Tensor::constant(Array::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
    let y = conv2d(&x, &k, None, 1, 0).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data(), data.as_slice());
}

#[test]
fn derivative_of_square() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(3.0));
    let y = ops::mul(&x, &x).unwrap();
    let g = grad(&y, std::slice::from_ref(&x), true).unwrap();
    assert_eq!(g[0].item(), 6.0);
    assert!(g[0].requires_grad());
    let h = grad(&g[0], &[x], false).unwrap();
    assert_eq!(h[0].item(), 2.0);
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random_array(&mut rng, &[1, 4], -2.0, 2.0);
    let mut target = Array::zeros(&[1, 4]);
    target.data_mut()[2] = 1.0;
    let f = |t: &[Tensor]| softmax_cross_entropy(&t[0], &t[1]).unwrap();
    check_against_fd(&f, &[logits, target], 0, 1e-6);
}

#[test]
fn finite_diff_examples() {
    let x = Array::from_vec(vec![1.0, 2.0]);
    let g = finite_diff_gradient(|a| a.data().iter().map(|v| v * v).sum(), &x, 1e-5);
    assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
    let x = Array::from_vec(vec![5.0, 7.0]);
    let g = finite_diff_gradient(|a| a.data().iter().sum::<f64>() / 2.0, &x, 1e-5);
    assert!((g.data()[0] - 0.5).abs() < 1e-9 && (g.data()[1] - 0.5).abs() < 1e-9);
}

#[test]
fn composed_conv_relu_mean_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = away_from_zero(&mut rng, &[1, 1, 4, 4]);
    let w = random_array(&mut rng, &[2, 1, 3, 3], -0.5, 0.5);
    let b = Array::from_vec(vec![0.1, -0.2]);
    let f = |t: &[Tensor]| {
        let y = conv2d(&t[0], &t[1], Some(&t[2]), 1, 1).unwrap();
        ops::mean(&ops::relu(&y))
    };
    // Keep pre-activations away from the kink before trusting the stencil.
    let pre = conv2d(
        &Tensor::constant(x.clone()),
        &Tensor::constant(w.clone()),
        Some(&Tensor::constant(b.clone())),
        1,
        1,
    )
    .unwrap();
    assert!(pre.data().iter().all(|v| v.abs() > 1e-3));
    for which in 0..3 {
        check_against_fd(&f, &[x.clone(), w.clone(), b.clone()], which, 1e-4);
    }
}

/// Every primitive, reduced to a scalar by a fixed random projection.
#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cases: Vec<(Primitive, Vec<Array>)> = vec![
        (
            Primitive::Matmul,
            vec![
                random_array(&mut rng, &[3, 4], -1.0, 1.0),
                random_array(&mut rng, &[4, 2], -1.0, 1.0),
            ],
        ),
        (
            Primitive::Conv2d { stride: 1, pad: 1 },
            vec![
                random_array(&mut rng, &[2, 2, 4, 4], -1.0, 1.0),
                random_array(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
                random_array(&mut rng, &[3], -1.0, 1.0),
            ],
        ),
        (
            Primitive::Conv2d { stride: 2, pad: 0 },
            vec![
                random_array(&mut rng, &[1, 2, 5, 5], -1.0, 1.0),
                random_array(&mut rng, &[2, 2, 3, 3], -1.0, 1.0),
            ],
        ),
        (
            Primitive::Add,
            vec![
                random_array(&mut rng, &[5], -1.0, 1.0),
                random_array(&mut rng, &[5], -1.0, 1.0),
            ],
        ),
        (
            Primitive::Sub,
            vec![
                random_array(&mut rng, &[5], -1.0, 1.0),
                random_array(&mut rng, &[5], -1.0, 1.0),
            ],
        ),
        (
            Primitive::Scale(-2.5),
            vec![random_array(&mut rng, &[2, 3], -1.0, 1.0)],
        ),
        (Primitive::Relu, vec![away_from_zero(&mut rng, &[6])]),
        (
            Primitive::Mean,
            vec![random_array(&mut rng, &[2, 3], -1.0, 1.0)],
        ),
        (
            Primitive::Reshape(vec![3, 2]),
            vec![random_array(&mut rng, &[2, 3], -1.0, 1.0)],
        ),
        (
            Primitive::BatchNormTrain,
            vec![
                random_array(&mut rng, &[3, 2, 2, 2], -1.0, 1.0),
                random_array(&mut rng, &[2], 0.5, 1.5),
                random_array(&mut rng, &[2], -0.5, 0.5),
            ],
        ),
        (
            Primitive::SoftmaxCrossEntropy,
            vec![
                random_array(&mut rng, &[3, 4], -2.0, 2.0),
                random_array(&mut rng, &[3, 4], 0.0, 1.0),
            ],
        ),
        (
            Primitive::SumOfSquares,
            vec![random_array(&mut rng, &[4], -1.0, 1.0)],
        ),
    ];
    for (kind, inputs) in cases {
        let probe_shape = {
            let ts: Vec<Tensor> = inputs.iter().cloned().map(Tensor::constant).collect();
            forward_primitive(&kind, &ts).unwrap().shape().to_vec()
        };
        let probe = Tensor::constant(random_array(&mut rng, &probe_shape, -1.0, 1.0));
        let f = |t: &[Tensor]| {
            let y = forward_primitive(&kind, t).unwrap();
            ops::sum_all(&ops::mul(&y, &probe).unwrap())
        };
        for which in 0..inputs.len() {
            let err = check_against_fd(&f, &inputs, which, 1e-4);
            assert!(err.is_finite(), "{} input {which}", kind.name());
        }
    }
}

/// f(x) = 1/2 xᵀAx + bᵀx has Hessian A (symmetric), so the gradient of
/// (∇f · v) is A v.
#[test]
fn second_order_quadratic_hessian_vector_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4;
    let m = random_array(&mut rng, &[n, n], -1.0, 1.0);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = m.data()[i * n + j] + m.data()[j * n + i];
        }
    }
    let a_arr = Array::new(vec![n, n], a.clone()).unwrap();
    let b = random_array(&mut rng, &[n, 1], -1.0, 1.0);
    let v = random_array(&mut rng, &[n, 1], -1.0, 1.0);

    let tape = Tape::new();
    let x = tape.leaf(random_array(&mut rng, &[n, 1], -1.0, 1.0));
    let ax = ops::matmul(&Tensor::constant(a_arr), &x).unwrap();
    let quad = ops::scale(&ops::matmul_t(&x, &ax, true, false).unwrap(), 0.5);
    let lin = ops::matmul_t(&Tensor::constant(b), &x, true, false).unwrap();
    let f = ops::add(&quad, &lin).unwrap();
    let g = grad(&f, std::slice::from_ref(&x), true).unwrap();
    let gv = ops::sum_all(&ops::mul(&g[0], &Tensor::constant(v.clone())).unwrap());
    let hv = grad(&gv, &[x], false).unwrap();

    let expected: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * v.data()[j]).sum())
        .collect();
    assert!(rel_err(hv[0].data(), &expected) < 1e-6);
}

/// Second order through softmax cross-entropy, conv and batch norm, checked
/// by differencing first-order grad() outputs.
#[test]
fn second_order_matches_differenced_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x0 = random_array(&mut rng, &[2, 1, 3, 3], 0.0, 1.0);
    let w = random_array(&mut rng, &[2, 1, 3, 3], -0.5, 0.5);
    let gamma = random_array(&mut rng, &[2], 0.5, 1.5);
    let beta = random_array(&mut rng, &[2], -0.5, 0.5);
    let fc = random_array(&mut rng, &[3, 18], -0.3, 0.3);
    let mut targets = Array::zeros(&[2, 3]);
    targets.data_mut()[0] = 1.0;
    targets.data_mut()[5] = 1.0;

    // φ(x) = ‖∇_w loss(x, w)‖²
    let phi = |x: &Tensor, tape: &Tape, create: bool| -> (Tensor, Tensor) {
        let wl = tape.leaf(w.clone());
        let y = conv2d(x, &wl, None, 1, 1).unwrap();
        let y = batch_norm_train(
            &y,
            &Tensor::constant(gamma.clone()),
            &Tensor::constant(beta.clone()),
        )
        .unwrap();
        let y = ops::reshape(&y, vec![2, 18]).unwrap();
        let logits = ops::matmul_t(&y, &Tensor::constant(fc.clone()), false, true).unwrap();
        let loss = softmax_cross_entropy(&logits, &Tensor::constant(targets.clone())).unwrap();
        let gw = grad(&loss, &[wl], create).unwrap();
        (ops::sum_of_squares(&gw[0]), gw[0].clone())
    };

    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let (val, _) = phi(&x, &tape, true);
    let analytic = grad(&val, &[x], false).unwrap();

    let numeric = finite_diff_gradient(
        |xa| {
            let tape = Tape::new();
            phi(&Tensor::constant(xa.clone()), &tape, false).0.item()
        },
        &x0,
        1e-5,
    );
    assert!(rel_err(analytic[0].data(), numeric.data()) < 1e-4);
}

#[test]
fn grad_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let x = tape.leaf(random_array(&mut rng, &[2, 2, 4, 4], -1.0, 1.0));
        let w = Tensor::constant(random_array(&mut rng, &[3, 2, 3, 3], -1.0, 1.0));
        let y = ops::mean(&ops::relu(&conv2d(&x, &w, None, 1, 1).unwrap()));
        let g = grad(&y, &[x], false).unwrap();
        (
            y.item().to_bits(),
            g[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn non_scalar_output_is_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
    let y = ops::scale(&x, 2.0);
    assert!(matches!(
        grad(&y, &[x], false),
        Err(AutodiffError::NonScalarOutput { .. })
    ));
}

#[test]
fn unreachable_target_gets_zero_gradient_and_flag() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
    let z = tape.leaf(Array::from_vec(vec![3.0]));
    let y = ops::sum_of_squares(&x);
    let g = grad(&y, &[x, z], false).unwrap();
    assert_eq!(g.unreachable, vec![1]);
    assert_eq!(g[1].data(), &[0.0]);
    assert_eq!(g[0].data(), &[2.0, 4.0]);
}

#[test]
fn constant_target_is_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(1.0));
    let c = Tensor::scalar(2.0);
    let y = ops::mul(&x, &c).unwrap();
    assert!(matches!(
        grad(&y, &[c], false),
        Err(AutodiffError::NotDifferentiable { position: 0 })
    ));
}

#[test]
fn shape_mismatch_names_the_primitive() {
    let a = Tensor::constant(Array::zeros(&[2, 3]));
    let b = Tensor::constant(Array::zeros(&[2, 3]));
    let err = forward_primitive(&Primitive::Matmul, &[a, b]).unwrap_err();
    assert!(err.to_string().starts_with("matmul"), "{err}");
    assert!(err.to_string().contains("[2, 3]"));

    let x = Tensor::constant(Array::zeros(&[1, 2, 3, 3]));
    let k = Tensor::constant(Array::zeros(&[1, 3, 3, 3]));
    let err = conv2d(&x, &k, None, 1, 0).unwrap_err();
    assert!(err.to_string().starts_with("conv2d"), "{err}");

    let err = forward_primitive(
        &Primitive::Add,
        &[Tensor::scalar(1.0), Tensor::constant(Array::zeros(&[2]))],
    )
    .unwrap_err();
    assert!(err.to_string().starts_with("add"));
}

#[test]
fn batch_norm_needs_two_values_per_channel() {
    let x = Tensor::constant(Array::zeros(&[1, 2]));
    let g = Tensor::constant(Array::full(&[2], 1.0));
    let b = Tensor::constant(Array::zeros(&[2]));
    let err = batch_norm_train(&x, &g, &b).unwrap_err();
    assert!(err.to_string().starts_with("batch_norm_train"));
}

#[test]
fn batch_norm_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::constant(random_array(&mut rng, &[4, 3, 2, 2], -2.0, 3.0));
    let y = batch_norm_train(
        &x,
        &Tensor::constant(Array::full(&[3], 1.0)),
        &Tensor::constant(Array::zeros(&[3])),
    )
    .unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..4).map(move |p| (n, p)))
            .map(|(n, p)| y.data()[(n * 3 + c) * 4 + p])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grad_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = away_from_zero(&mut rng, &[2, 3]);
        let w = Tensor::constant(random_array(&mut rng, &[3, 2], -1.0, 1.0));
        let f = |x: &Tensor| ops::sum_of_squares(&ops::matmul(x, &w).unwrap());
        let g = |x: &Tensor| ops::mean(&ops::relu(x));

        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let combo = ops::add(&ops::scale(&f(&x), a), &ops::scale(&g(&x), b)).unwrap();
        let lhs = grad(&combo, std::slice::from_ref(&x), false).unwrap();
        let gf = grad(&f(&x), std::slice::from_ref(&x), false).unwrap();
        let gg = grad(&g(&x), &[x], false).unwrap();
        for i in 0..x0.len() {
            let rhs = a * gf[0].data()[i] + b * gg[0].data()[i];
            prop_assert!((lhs[0].data()[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn array_rejects_inconsistent_lengths(n in 1usize..6, m in 1usize..6, extra in 1usize..3) {
        prop_assert!(Array::new(vec![n, m], vec![0.0; n * m + extra]).is_err());
        prop_assert!(Array::new(vec![n, m], vec![0.0; n * m]).is_ok());
    }
}

#[test]
fn row_permutation_is_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_array(&mut rng, &[3, 2], -1.0, 1.0);
    let w = random_array(&mut rng, &[3, 2], -1.0, 1.0);
    let f = |t: &[Tensor]| {
        ops::sum_all(&ops::mul(&ops::permute_rows(&t[0], &[2, 0, 1]).unwrap(), &t[1]).unwrap())
    };
    check_against_fd(&f, &[x.clone(), w], 0, 1e-6);
    let p = ops::permute_rows(&Tensor::constant(x.clone()), &[2, 0, 1]).unwrap();
    assert_eq!(&p.value().data()[..2], &x.data()[4..]);
    assert!(ops::permute_rows(&Tensor::constant(x.clone()), &[0, 0, 1]).is_err());
    assert!(ops::permute_rows(&Tensor::constant(x), &[0, 1]).is_err());
}
