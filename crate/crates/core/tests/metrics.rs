use awa_core::autodiff::Array;
use awa_core::metrics::*;
use awa_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn img(shape: &[usize], data: Vec<f64>) -> Array {
    Array::new(shape.to_vec(), data).unwrap()
}

fn pair(a: &Array, b: &Array) -> ImagePair {
    ImagePair::new(a, b).unwrap()
}

#[test]
fn mse_examples() {
    let z = img(&[1, 2, 2], vec![0.0; 4]);
    let h = img(&[1, 2, 2], vec![0.5; 4]);
    assert_eq!(mse(&pair(&z, &z)), 0.0);
    assert_eq!(mse(&pair(&z, &h)), 0.25);
    assert_eq!(
        mse(&pair(
            &img(&[1, 2, 1], vec![0.0, 1.0]),
            &img(&[1, 2, 1], vec![1.0, 1.0])
        )),
        0.5
    );
    assert!(ImagePair::new(&z, &img(&[1, 4], vec![0.0; 4])).is_err());
}

#[test]
fn reconstructions_are_clamped() {
    let t = img(&[1, 1, 2], vec![0.0, 1.0]);
    let r = img(&[1, 1, 2], vec![-3.0, 7.0]);
    assert_eq!(mse(&pair(&t, &r)), 0.0);
}

#[test]
fn psnr_examples() {
    // MSE 0.01 against a peak of 1.
    let t = img(&[1, 1, 2], vec![1.0, 0.5]);
    let r = img(&[1, 1, 2], vec![1.0, 0.5 + 0.02f64.sqrt()]);
    assert!((psnr(&pair(&t, &r)).unwrap() - 20.0).abs() < 1e-9);
    assert_eq!(psnr(&pair(&t, &t)).unwrap(), f64::INFINITY);
    let r = img(&[1, 1, 2], vec![1.0, 0.5 + 0.012f64.sqrt()]);
    assert!((psnr(&pair(&t, &r)).unwrap() - 22.218_487_496_163_56).abs() < 1e-9);
    let zero = img(&[1, 1, 2], vec![0.0, 0.0]);
    assert!(psnr(&pair(&zero, &t)).is_err());
}

#[test]
fn ssim_fixed_points_and_hand_instances() {
    let mut r = rng::rng_from(1);
    let d = img(&[3, 4, 4], (0..48).map(|_| r.gen()).collect());
    assert!((ssim(&pair(&d, &d)) - 1.0).abs() < 1e-15);
    let c = img(&[1, 2, 2], vec![0.3; 4]);
    assert!((ssim(&pair(&c, &c)) - 1.0).abs() < 1e-15);

    // μ = 0.5, σ² = 0.05, and D′ = 1 − D so σ_DD′ = −0.05.
    let s = 0.05f64.sqrt();
    let d = img(&[1, 1, 2], vec![0.5 - s, 0.5 + s]);
    let inv = img(&[1, 1, 2], vec![0.5 + s, 0.5 - s]);
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let expected =
        (2.0 * 0.25 + c1) * (2.0 * -0.05 + c2) / ((0.25 + 0.25 + c1) * (0.05 + 0.05 + c2));
    assert!((ssim(&pair(&d, &inv)) - expected).abs() < 1e-15);
    assert!((expected - (-0.0991 / 0.1009)).abs() < 1e-12);

    // Flat images with different levels exercise only k1: (2·0.08 + 1e-4)/(0.2 + 1e-4).
    let a = img(&[1, 1, 2], vec![0.2, 0.2]);
    let b = img(&[1, 1, 2], vec![0.4, 0.4]);
    assert!((ssim(&pair(&a, &b)) - 0.1601 / 0.2001).abs() < 1e-12);
}

#[test]
fn ssim_averages_channels() {
    let a = img(&[2, 1, 2], vec![0.2, 0.2, 0.7, 0.3]);
    let b = img(&[2, 1, 2], vec![0.4, 0.4, 0.7, 0.3]);
    let first = 0.1601 / 0.2001;
    assert!((ssim(&pair(&a, &b)) - (first + 1.0) / 2.0).abs() < 1e-12);
}

fn brute_force(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == n {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row * n + j] + go(cost, n, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, n, 0, &mut vec![false; n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_is_optimal(n in 1usize..7, seed in any::<u64>()) {
        let mut r = rng::rng_from(seed);
        let cost: Vec<f64> = (0..n * n).map(|_| r.gen()).collect();
        let a = hungarian(&cost, n);
        let mut seen = a.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        prop_assert!((total - brute_force(&cost, n)).abs() < 1e-12);
    }

    #[test]
    fn matching_never_worse_than_identity(n in 1usize..6, seed in any::<u64>()) {
        let mut r = rng::rng_from(seed);
        let mk = |r: &mut rand_chacha::ChaCha8Rng| img(&[1, 2, 2], (0..4).map(|_| r.gen()).collect());
        let truth: Vec<Array> = (0..n).map(|_| mk(&mut r)).collect();
        let recon: Vec<Array> = (0..n).map(|_| mk(&mut r)).collect();
        let m = match_batches(&truth, &recon).unwrap();
        let identity: f64 = truth.iter().zip(&recon).map(|(t, x)| mse(&pair(t, x))).sum();
        prop_assert!(m.per_image.iter().map(|p| p.metrics.mse).sum::<f64>() <= identity + 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse(e1 in 1e-6f64..0.1, e2 in 1e-6f64..0.1) {
        prop_assume!(e1 < e2);
        // Keeps the perturbed pixel inside [0, 1] so clamping does not interfere.
        let t = img(&[1, 1, 2], vec![1.0, 0.5]);
        let at = |e: f64| img(&[1, 1, 2], vec![1.0, 0.5 - (2.0 * e).sqrt()]);
        prop_assert!(psnr(&pair(&t, &at(e1))).unwrap() > psnr(&pair(&t, &at(e2))).unwrap());
    }

    #[test]
    fn ssim_in_unit_interval_for_equal_means(v in prop::collection::vec(0.0f64..0.5, 4), scale in 0.0f64..1.0) {
        // Shrinking towards the mean keeps μ and gives non-negative covariance.
        let mean = v.iter().sum::<f64>() / 4.0;
        let d = img(&[1, 2, 2], v.clone());
        let shrunk = img(&[1, 2, 2], v.iter().map(|x| mean + scale * (x - mean)).collect());
        let s = ssim(&pair(&d, &shrunk));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
    }
}

#[test]
fn matching_examples() {
    let mut r = rng::rng_from(5);
    let truth: Vec<Array> = (0..3)
        .map(|_| img(&[3, 2, 2], (0..12).map(|_| r.gen()).collect()))
        .collect();
    let recon = vec![truth[2].clone(), truth[0].clone(), truth[1].clone()];
    let m = match_batches(&truth, &recon).unwrap();
    assert_eq!(m.permutation, vec![1, 2, 0]);
    assert_eq!(m.mean.mse, 0.0);
    assert_eq!(m.mean.ssim, 1.0);

    let single = match_batches(&truth[..1], &recon[..1]).unwrap();
    assert_eq!(single.permutation, vec![0]);

    let noisy: Vec<Array> = [1usize, 2, 0]
        .iter()
        .map(|&i| {
            img(
                &[3, 2, 2],
                truth[i]
                    .data()
                    .iter()
                    .map(|v| v + r.gen_range(-0.01..0.01))
                    .collect(),
            )
        })
        .collect();
    // noisy[j] came from truth[perm_src[j]]; the match inverts that.
    assert_eq!(
        match_batches(&truth, &noisy).unwrap().permutation,
        vec![2, 0, 1]
    );
    assert!(match_batches(&truth, &recon[..2]).is_err());
}

#[test]
fn report_serializes_infinite_psnr_as_text() {
    let t = vec![img(&[1, 1, 2], vec![0.2, 0.9])];
    let m = match_batches(&t, &t).unwrap();
    let json = serde_json::to_value(&m).unwrap();
    assert_eq!(json["mean"]["psnr"], "inf");
    assert_eq!(json["per_image"][0]["recon"], 0);
}

#[test]
fn batches_split_into_samples() {
    let b = img(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let s = split_batch(&b);
    assert_eq!(s.len(), 2);
    assert_eq!(s[1].shape(), &[1, 1, 2]);
    assert_eq!(s[1].data(), &[3.0, 4.0]);
}
