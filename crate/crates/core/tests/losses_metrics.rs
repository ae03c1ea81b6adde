use fagan::data::ImageBuffer;
use fagan::losses::{
    adversarial_loss_g, combined_loss_g, combined_value, content_loss, discriminator_loss, FeatureExtractor, Reduction,
    ADVERSARIAL_WEIGHT,
};
use fagan::metrics::{compare_dirs, fid, psnr, ssim, GaussianStats, MetricReport, SsimMode, PSNR_CAP, REPORT_HEADER};
use fagan::Tensor;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn image(h: usize, w: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..255.0)).collect(), 255.0).unwrap()
}

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Windowed SSIM by explicit 2-D weighted sums over every 11x11 window.
fn ssim_oracle(x: &ImageBuffer, y: &ImageBuffer) -> f64 {
    let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g1.iter().sum::<f64>().powi(2);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let (h, w) = x.dims();
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let wgt = g1[dy] * g1[dx] / norm;
                    let (a, b) = (x.get(oy + dy, ox + dx), y.get(oy + dy, ox + dx));
                    mx += wgt * a;
                    my += wgt * b;
                    sxx += wgt * a * a;
                    syy += wgt * b * b;
                    sxy += wgt * a * b;
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn stats(n: usize, d: usize, seed: u64, shift: f64) -> GaussianStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + shift).collect())
        .collect();
    GaussianStats::from_vectors(&v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psnr_symmetric_and_shift_invariant(h in 2usize..20, w in 2usize..20, seed in any::<u64>(), c in -50.0f64..50.0) {
        let mid = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            ImageBuffer::new(h, w, (0..h * w).map(|_| rng.random_range(60.0..190.0)).collect(), 255.0).unwrap()
        };
        let (x, y) = (mid(seed), mid(seed ^ 1));
        let p = psnr(&x, &y, 255.0).unwrap();
        prop_assert_eq!(p, psnr(&y, &x, 255.0).unwrap());
        let shift = |i: &ImageBuffer| ImageBuffer::new(h, w, i.data.iter().map(|v| v + c).collect(), 255.0).unwrap();
        prop_assert!((psnr(&shift(&x), &shift(&y), 255.0).unwrap() - p).abs() <= 1e-9);
        let mse: f64 = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (h * w) as f64;
        prop_assert!((p - 10.0 * (255.0f64 * 255.0 / mse).log10()).abs() <= 1e-9);
    }

    #[test]
    fn ssim_self_one_and_symmetric(h in 11usize..20, w in 11usize..20, seed in any::<u64>()) {
        let (x, y) = (image(h, w, seed), image(h, w, seed ^ 2));
        for mode in [SsimMode::Global, SsimMode::Windowed] {
            prop_assert_eq!(ssim(&x, &x, mode).unwrap(), 1.0);
            let (a, b) = (ssim(&x, &y, mode).unwrap(), ssim(&y, &x, mode).unwrap());
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(a <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn fid_symmetric_and_nonnegative(d in 1usize..8, seed in any::<u64>(), shift in -2.0f64..2.0) {
        let (a, b) = (stats(20, d, seed, 0.0), stats(25, d, seed ^ 3, shift));
        let (ab, ba) = (fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(ab >= -1e-8);
        prop_assert!(fid(&a, &a).unwrap().abs() <= 1e-8);
        let sym = (&a.cov - a.cov.transpose()).amax();
        prop_assert!(sym <= 1e-9);
    }

    #[test]
    fn content_loss_zero_iff_features_match(seed in any::<u64>(), depth in 0usize..4) {
        let fx = if depth == 0 { FeatureExtractor::identity() } else { FeatureExtractor::frozen_conv(seed, depth).unwrap() };
        let (a, b) = (tensor(&[2, 1, 16, 16], seed), tensor(&[2, 1, 16, 16], seed ^ 4));
        prop_assert_eq!(content_loss(&a, &a, &fx).unwrap().item(), 0.0);
        let l = content_loss(&a, &b, &fx).unwrap().item();
        prop_assert!(l > 0.0);
        let fa = fx.features(&a).unwrap();
        let fb = fx.features(&b).unwrap();
        let mse: f64 = fa.data().iter().zip(fb.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / fa.numel() as f64;
        prop_assert!((l - mse).abs() <= 1e-12 * (1.0 + mse));
    }

    #[test]
    fn combined_loss_is_exactly_linear(c in -10.0f64..10.0, a in 0.0f64..20.0) {
        let v = combined_loss_g(&Tensor::scalar(c), &Tensor::scalar(a)).unwrap().item();
        prop_assert!((v - (c + 1e-3 * a)).abs() <= 1e-9);
        prop_assert_eq!(v, combined_value(c, a));
    }

    #[test]
    fn discriminator_loss_symmetry(seed in any::<u64>(), n in 1usize..6) {
        let real = tensor(&[n, 1], seed).scale(0.98).add_scalar(0.01);
        let fake = tensor(&[n, 1], seed ^ 5).scale(0.98).add_scalar(0.01);
        let l = discriminator_loss(&real, &fake).unwrap().item();
        let mirrored = discriminator_loss(&fake.neg().add_scalar(1.0), &real.neg().add_scalar(1.0)).unwrap().item();
        prop_assert!((l - mirrored).abs() <= 1e-12 * (1.0 + l.abs()));
        let oracle: f64 = -(real.data().iter().map(|p| p.ln()).sum::<f64>() + fake.data().iter().map(|p| (1.0 - p).ln()).sum::<f64>()) / n as f64;
        prop_assert!((l - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
    }

    #[test]
    fn adversarial_sum_is_batch_times_mean(seed in any::<u64>(), n in 1usize..9) {
        let d = tensor(&[n, 1], seed).scale(0.9).add_scalar(0.05);
        let s = adversarial_loss_g(&d, Reduction::Sum).unwrap().item();
        let m = adversarial_loss_g(&d, Reduction::Mean).unwrap().item();
        prop_assert!((s - n as f64 * m).abs() <= 1e-12 * (1.0 + s.abs()));
        let oracle: f64 = d.data().iter().map(|p| -p.ln()).sum();
        prop_assert!((s - oracle).abs() <= 1e-12 * (1.0 + oracle));
    }
}

#[test]
fn windowed_ssim_matches_direct_window_sums() {
    for (h, w, seed) in [(11, 11, 1), (16, 13, 2), (24, 24, 3)] {
        let x = image(h, w, seed);
        let y = ImageBuffer::new(h, w, x.data.iter().map(|v| (v * 0.7 + 30.0).min(255.0)).collect(), 255.0).unwrap();
        let got = ssim(&x, &y, SsimMode::Windowed).unwrap();
        let expect = ssim_oracle(&x, &y);
        assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");
    }
    assert!(ssim(&image(10, 20, 0), &image(10, 20, 1), SsimMode::Windowed).is_err());
}

#[test]
fn psnr_caps_identical_images() {
    let x = image(5, 5, 3);
    assert_eq!(psnr(&x, &x, 255.0).unwrap(), PSNR_CAP);
    assert!(psnr(&x, &image(5, 6, 3), 255.0).is_err());
}

#[test]
fn fid_of_diagonal_gaussians_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in [1, 3, 10] {
        let va: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..4.0)).collect();
        let vb: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..4.0)).collect();
        let ma: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mb: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = |m: &[f64], v: &[f64]| GaussianStats {
            mean: DVector::from_column_slice(m),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            n: 2,
        };
        // commuting covariances: Σ (μa-μb)² + (√va - √vb)²
        let expect: f64 = (0..d).map(|i| (ma[i] - mb[i]).powi(2) + (va[i].sqrt() - vb[i].sqrt()).powi(2)).sum();
        let got = fid(&g(&ma, &va), &g(&mb, &vb)).unwrap();
        assert!((got - expect).abs() <= 1e-10, "d={d}: {got} vs {expect}");
    }
}

#[test]
fn fid_rejects_indefinite_covariance() {
    let bad = GaussianStats {
        mean: DVector::zeros(2),
        cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        n: 2,
    };
    assert!(fid(&bad, &bad).is_err());
}

#[test]
fn stats_do_not_depend_on_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut r = v.clone();
    r.reverse();
    let (a, b) = (GaussianStats::from_vectors(&v).unwrap(), GaussianStats::from_vectors(&r).unwrap());
    assert!((&a.mean - &b.mean).amax() <= 1e-15 && (&a.cov - &b.cov).amax() <= 1e-15);
    assert!(GaussianStats::from_vectors(&v[..1]).is_err());
}

#[test]
fn frozen_extractor_is_deterministic_and_gradient_free() {
    let fx = FeatureExtractor::<f64>::frozen_conv(4, 3).unwrap();
    let again = FeatureExtractor::<f64>::frozen_conv(4, 3).unwrap();
    let x = tensor(&[1, 1, 16, 16], 0);
    assert_eq!(fx.features(&x).unwrap().data(), again.features(&x).unwrap().data());
    assert!(!fx.features(&x).unwrap().requires_grad());
    assert_eq!(fx.feature_channels(), 32);
    assert!(FeatureExtractor::<f64>::frozen_conv(0, 4).is_err());
    assert_eq!(ADVERSARIAL_WEIGHT, 1e-3);
}

#[test]
fn adversarial_loss_rejects_non_probabilities() {
    for bad in [1.5, -0.1, f64::NAN] {
        assert!(adversarial_loss_g(&Tensor::new(&[1], vec![bad]).unwrap(), Reduction::Mean).is_err());
    }
    // 0 and 1 are clamped, not infinite
    let v = adversarial_loss_g(&Tensor::<f64>::new(&[2], vec![0.0, 1.0]).unwrap(), Reduction::Sum).unwrap().item();
    assert!(v.is_finite());
}

#[test]
fn metric_report_csv_and_directory_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let (refs, cands) = (dir.path().join("ref"), dir.path().join("cand"));
    std::fs::create_dir_all(&refs).unwrap();
    std::fs::create_dir_all(&cands).unwrap();
    let mut pairs = Vec::new();
    for (i, name) in ["b", "a", "c"].iter().enumerate() {
        let x = image(16, 16, i as u64);
        let y = ImageBuffer::new(16, 16, x.data.iter().map(|v| (v + 3.0).min(255.0)).collect(), 255.0).unwrap();
        x.write_fatn(&refs.join(format!("{name}.fatn"))).unwrap();
        y.write_fatn(&cands.join(format!("{name}.fatn"))).unwrap();
        pairs.push((name.to_string(), x, y));
    }
    let report = compare_dirs(&refs, &cands).unwrap();
    let direct = MetricReport::compute(&pairs, &fagan::metrics::fid_extractor()).unwrap();
    assert_eq!(report, direct);
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("a,") && lines[2].starts_with("b,") && lines[3].starts_with("c,"));
    assert!(lines[4].starts_with("summary,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 6));

    std::fs::remove_file(cands.join("c.fatn")).unwrap();
    assert!(compare_dirs(&refs, &cands).is_err());
}
