//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, even when everything passes.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fagan::data::{build_dataset, bicubic_resize, DatasetManifest, DatasetSpec, ImageBuffer};
use fagan::gradcheck::{run_case, GradCheckConfig, CASES};
use fagan::metrics::{fid, psnr, sqrtm_psd, ssim, GaussianStats, SsimMode};
use fagan::nn::spectral::{spectral_normalize, SpectralNormState};
use fagan::nn::{fuse, ChannelAttention, FusionConfig, FusionMode, Init, Module, SelfAttention};
use fagan::train::ablate::{ablate, rows_to_csv, CSV_HEADER};
use fagan::train::{evaluate, load_generator, Candidate, Checkpoint, TrainConfig, Trainer};
use fagan::Tensor;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("{what} took {elapsed:.1?}, limit {limit:?}"))
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn gradient_oracles() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    let mut worst = (0.0f64, "");
    let mut checked = 0;
    for case in CASES {
        let r = run_case(case, &cfg, 7).map_err(e)?;
        ensure(r.passed(), || {
            format!(
                "{}: max rel err {:.3e} ({} checked, {} unstable) at {}",
                r.name, r.max_error, r.checked, r.unstable, r.worst
            )
        })?;
        checked += r.checked;
        if r.max_error >= worst.0 {
            worst = (r.max_error, case.name);
        }
    }
    within(start.elapsed(), Duration::from_secs(300), "gradient suite")?;
    Ok(format!(
        "{} cases x {} instances, {checked} coordinates, max rel err {:.2e} ({}) < {:e}, {:.0?}",
        CASES.len(),
        cfg.instances,
        worst.0,
        worst.1,
        cfg.tolerance,
        start.elapsed()
    ))
}

fn attention_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut init = Init::new(2);
    let sa = SelfAttention::<f64>::new(&mut init, 16).map_err(e)?;
    let x = normal(&mut rng, &[2, 16, 5, 6]);
    let y = sa.forward(&x).map_err(e)?;
    ensure(y.data() == x.data(), || "self-attention with gamma = 0 is not the identity".into())?;

    let mut worst_row = 0.0f64;
    for k in 0..100 {
        let sa = SelfAttention::<f64>::new(&mut Init::new(100 + k), 8).map_err(e)?;
        let x = normal(&mut rng, &[1, 8, 4, 5]).scale(1.0 + k as f64 / 10.0);
        let map = sa.attention_map(&x).map_err(e)?;
        let hw = 20;
        for row in map.data().chunks(hw) {
            ensure(row.iter().all(|&p| (0.0..=1.0).contains(&p)), || "attention weight outside [0,1]".into())?;
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_row <= 1e-6, || format!("attention row sum off by {worst_row:e}"))?;

    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for k in 0..100 {
        let ca = ChannelAttention::<f64>::new(&mut Init::new(300 + k), 16, 4).map_err(e)?;
        let s = ca.scales(&normal(&mut rng, &[2, 16, 3, 3]).scale(3.0)).map_err(e)?;
        for &v in s.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    ensure(lo > 0.0 && hi < 1.0, || format!("channel scales span [{lo}, {hi}]"))?;
    Ok(format!(
        "SA(gamma=0) == identity; max |row sum - 1| {worst_row:.1e} over 100 inputs; CA scales in [{lo:.4}, {hi:.4}]"
    ))
}

fn spectral_normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sigma_err, mut norm_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let w = normal(&mut rng, &[64, 64]);
        let oracle = DMatrix::from_row_slice(64, 64, w.data()).singular_values().max();
        let mut st = SpectralNormState::new(&[64, 64], 1, &mut rng).map_err(e)?;
        let sigma = st.converge(w.data(), 64, 64, 1e-14, 200_000).map_err(e)?;
        sigma_err = sigma_err.max((sigma - oracle).abs());
        let wn = spectral_normalize(&w, &mut st).map_err(e)?;
        let after = DMatrix::from_row_slice(64, 64, wn.data()).singular_values().max();
        norm_err = norm_err.max((after - 1.0).abs());
    }
    ensure(sigma_err <= 1e-4, || format!("sigma differs from SVD by {sigma_err:e}"))?;
    ensure(norm_err <= 1e-4, || format!("normalized spectral norm off by {norm_err:e}"))?;
    within(start.elapsed(), Duration::from_secs(60), "spectral check")?;
    Ok(format!(
        "10 random 64x64: |sigma - svd| <= {sigma_err:.1e}, |sigma(W/sigma) - 1| <= {norm_err:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0..255) as f64).collect();
    let x = ImageBuffer::new(32, 32, base.clone(), 255.0).map_err(e)?;
    let y = ImageBuffer::new(32, 32, base.iter().map(|v| v + 1.0).collect(), 255.0).map_err(e)?;
    let p = psnr(&x, &y, 255.0).map_err(e)?;
    ensure((p - 48.1308).abs() <= 1e-4, || format!("unit-offset PSNR {p}"))?;

    for mode in [SsimMode::Global, SsimMode::Windowed] {
        let s = ssim(&x, &x, mode).map_err(e)?;
        ensure(s == 1.0, || format!("SSIM(x,x) = {s} ({mode:?})"))?;
    }

    let vectors: Vec<Vec<f64>> = (0..40).map(|_| (0..12).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let stats = GaussianStats::from_vectors(&vectors).map_err(e)?;
    let self_fid = fid(&stats, &stats).map_err(e)?;
    ensure(self_fid.abs() <= 1e-8, || format!("FID(a,a) = {self_fid:e}"))?;

    let d = 16;
    let m: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let unit = |mean: DVector<f64>| GaussianStats {
        mean,
        cov: DMatrix::identity(d, d),
        n: 2,
    };
    let shifted = fid(&unit(DVector::zeros(d)), &unit(DVector::from_vec(m.clone()))).map_err(e)?;
    let expect: f64 = m.iter().map(|v| v * v).sum();
    ensure((shifted - expect).abs() <= 1e-6, || format!("mean-shift FID {shifted} vs {expect}"))?;

    let mut worst = 0.0f64;
    for dim in [1, 2, 5, 16, 33, 64] {
        let b = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &b * b.transpose();
        let s = sqrtm_psd(&a).map_err(e)?;
        worst = worst.max((&s * &s - &a).norm() / a.norm());
    }
    ensure(worst < 1e-8, || format!("sqrtm reconstruction error {worst:e}"))?;
    Ok(format!(
        "PSNR {p:.6} dB; SSIM(x,x) = 1; FID(a,a) = {self_fid:.1e}; shift FID err {:.1e}; sqrtm rel err {worst:.1e}",
        (shifted - expect).abs()
    ))
}

fn fusion_operators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = normal(&mut rng, &[2, 8, 6, 6]);
    let direct = FusionConfig::new(FusionMode::Direct, 0.5, 0.5);
    ensure(fuse(&x, &x, &direct).map_err(e)?.data() == x.data(), || {
        "direct fusion of equal inputs is not the identity".into()
    })?;

    let weighted = FusionConfig::new(FusionMode::Weighted, 0.5, 0.5);
    let pos = Tensor::<f64>::new(&[500], (0..500).map(|_| rng.random_range(1e-3..10.0)).collect()).unwrap();
    let out = fuse(&pos, &pos, &weighted).map_err(e)?;
    // (0.5x)^2 · 2 / (x + eps) = 0.5x · x / (x + eps), off from 0.5x by at most 0.5·eps
    let mut half_err = 0.0f64;
    for (o, v) in out.data().iter().zip(pos.data()) {
        half_err = half_err.max((o - 0.5 * v).abs());
    }
    ensure(half_err <= 0.5 * weighted.eps + 1e-15, || format!("weighted halving error {half_err:e}"))?;

    let mut homog = 0.0f64;
    for mode in [FusionMode::Direct, FusionMode::Weighted] {
        for (alpha, beta) in [(0.4, 0.6), (0.5, 0.5), (0.6, 0.4)] {
            let cfg = FusionConfig::new(mode, alpha, beta);
            let r = Tensor::<f64>::new(&[200], (0..200).map(|_| rng.random_range(0.1..5.0)).collect()).unwrap();
            let y = Tensor::<f64>::new(&[200], (0..200).map(|_| rng.random_range(0.1..5.0)).collect()).unwrap();
            let base = fuse(&r, &y, &cfg).map_err(e)?;
            for lambda in [0.25, 2.0, 7.5] {
                let scaled = fuse(&r.scale(lambda), &y.scale(lambda), &cfg).map_err(e)?;
                for (s, b) in scaled.data().iter().zip(base.data()) {
                    homog = homog.max((s - lambda * b).abs() / (lambda * b).abs());
                }
            }
        }
    }
    ensure(homog <= 1e-5, || format!("homogeneity error {homog:e}"))?;
    Ok(format!(
        "direct(x,x) == x; |weighted(x,x) - x/2| <= {half_err:.1e}; homogeneity rel err {homog:.1e}"
    ))
}

fn toy_config(sn_enabled: bool) -> TrainConfig {
    TrainConfig {
        iterations: 500,
        width: 16,
        lffb_blocks: 2,
        batch_size: 4,
        patch_size: 32,
        seed: 0,
        sn_enabled,
        ..TrainConfig::default()
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn toy_training(dir: &Path) -> Outcome {
    let start = Instant::now();
    let spec = DatasetSpec {
        n_train: 64,
        n_val: 8,
        scale: 2,
        seed: 1,
        hr_size: 64,
    };
    let manifest = build_dataset(&spec, &dir.join("toy")).map_err(e)?;
    let bicubic = evaluate(&Candidate::Bicubic, &manifest).map_err(e)?;
    let mut runs = Vec::new();
    for sn in [true, false] {
        let mut trainer = Trainer::new(toy_config(sn), &manifest).map_err(e)?;
        let log = trainer.run(None).map_err(e)?;
        ensure(
            log.rows.len() == 500
                && log
                    .rows
                    .iter()
                    .all(|r| [r.g_loss, r.d_loss, r.content, r.adversarial].iter().all(|v| v.is_finite())),
            || format!("run with sn={sn} has non-finite losses or missing rows"),
        )?;
        let report = evaluate(&Candidate::Generator(&trainer.generator), &manifest).map_err(e)?;
        let g = log.g_losses();
        runs.push((report.psnr, std_dev(&g[g.len() - 100..])));
    }
    let (psnr_sn, std_sn) = runs[0];
    let (_, std_plain) = runs[1];
    let gain = psnr_sn - bicubic.psnr;
    ensure(gain >= 0.5, || {
        format!("G(LR) {psnr_sn:.4} dB vs bicubic {:.4} dB: gain {gain:.4} < 0.5", bicubic.psnr)
    })?;
    ensure(std_sn < std_plain, || {
        format!("g_loss std over last 100: SN {std_sn:.3e} not below no-SN {std_plain:.3e}")
    })?;
    within(start.elapsed(), Duration::from_secs(1800), "toy training")?;
    Ok(format!(
        "finite losses; PSNR {psnr_sn:.4} vs bicubic {:.4} dB (+{gain:.3}); g_loss std SN {std_sn:.3e} < no-SN {std_plain:.3e}; {:.0?}",
        bicubic.psnr,
        start.elapsed()
    ))
}

fn small_dataset(dir: &Path, seed: u64) -> Result<DatasetManifest, String> {
    let spec = DatasetSpec {
        n_train: 6,
        n_val: 3,
        scale: 2,
        seed,
        hr_size: 32,
    };
    build_dataset(&spec, dir).map_err(e)
}

fn check_grid_csv(text: &str, rows: usize, labels: &[&str]) -> Result<(), String> {
    let lines: Vec<&str> = text.lines().collect();
    ensure(lines.first() == Some(&CSV_HEADER), || format!("bad header {:?}", lines.first()))?;
    ensure(lines.len() == rows + 1, || format!("{} data rows, expected {rows}", lines.len() - 1))?;
    for (line, label) in lines[1..].iter().zip(labels) {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f.len() == 8, || format!("row {line:?} has {} fields", f.len()))?;
        ensure(f[1] == *label, || format!("row label {} expected {label}", f[1]))?;
        ensure(f[2] == "direct" || f[2] == "weighted", || format!("fusion {}", f[2]))?;
        ensure(f[5].parse::<usize>().is_ok(), || format!("parameter count {}", f[5]))?;
        for v in [f[3], f[4], f[6], f[7]] {
            ensure(v.parse::<f64>().map(f64::is_finite).unwrap_or(false), || format!("non-numeric {v}"))?;
        }
    }
    Ok(())
}

fn ablation_harness(dir: &Path) -> Outcome {
    let start = Instant::now();
    let manifest = small_dataset(&dir.join("ablate_data"), 11)?;
    let base = TrainConfig {
        width: 8,
        lffb_blocks: 1,
        patch_size: 16,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let mut bytes = Vec::new();
    for k in 0..2 {
        let grids = ablate(&base, &manifest, 1).map_err(e)?;
        let out = dir.join(format!("ablate_{k}"));
        let mut files = Vec::new();
        for p in grids.write_csvs(&out).map_err(e)? {
            files.push(std::fs::read(&p).map_err(e)?);
        }
        ensure(String::from_utf8_lossy(&files[0]) == rows_to_csv(&grids.ablation), || {
            "ablation.csv differs from the in-memory rows".into()
        })?;
        bytes.push(files);
    }
    let text = |i: usize| String::from_utf8_lossy(&bytes[0][i]).into_owned();
    check_grid_csv(&text(0), 7, &["FA-GAN", "-SA", "-CA", "-LFFB", "-SA-CA", "-SA-LFFB", "-CA-LFFB"])?;
    check_grid_csv(&text(1), 2, &["direct", "weighted"])?;
    check_grid_csv(&text(2), 3, &["0.4/0.6", "0.5/0.5", "0.6/0.4"])?;
    ensure(bytes[0] == bytes[1], || "grid CSVs differ between identical runs".into())?;
    within(start.elapsed(), Duration::from_secs(300), "ablation dry run")?;
    Ok(format!(
        "7/2/3-row grids well formed and byte-identical across two runs, {:.1?}",
        start.elapsed()
    ))
}

fn determinism(dir: &Path) -> Outcome {
    let manifest = small_dataset(&dir.join("det_data"), 12)?;
    let cfg = TrainConfig {
        iterations: 6,
        width: 8,
        lffb_blocks: 1,
        patch_size: 16,
        batch_size: 2,
        checkpoint_interval: 3,
        val_interval: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut last = None;
    for k in 0..2 {
        let out = dir.join(format!("det_{k}"));
        let mut trainer = Trainer::new(cfg.clone(), &manifest).map_err(e)?;
        trainer.run(Some(&out)).map_err(e)?;
        let files: Vec<Vec<u8>> = ["log.csv", "checkpoint_000003.fatc", "checkpoint.fatc"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).map_err(e))
            .collect::<Result<_, _>>()?;
        if let Some(prev) = &last {
            ensure(prev == &files, || "logs or checkpoints differ between identical runs".into())?;
        }
        last = Some(files);

        let ckpt = Checkpoint::load(&out.join("checkpoint.fatc")).map_err(e)?;
        let (stored_cfg, g) = load_generator(&ckpt).map_err(e)?;
        ensure(stored_cfg == cfg, || "checkpoint config does not round-trip".into())?;
        let probe = ImageBuffer::batch_to_tensor::<f32>(&[&bicubic_resize(
            &ImageBuffer::new(16, 16, (0..256).map(|i| ((i * 37) % 256) as f64).collect(), 255.0).map_err(e)?,
            16,
            16,
        )
        .map_err(e)?])
        .map_err(e)?;
        let a = trainer.generator.forward(&probe).map_err(e)?;
        let b = g.forward(&probe).map_err(e)?;
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), || "restored generator output differs bitwise".into())?;
        ensure(g.num_parameters() == trainer.generator.num_parameters(), || "parameter count changed".into())?;
    }
    Ok("two runs byte-identical (log.csv, checkpoint_000003.fatc, checkpoint.fatc); restored G bitwise equal on probe".into())
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 gradient oracles", Box::new(gradient_oracles)),
        ("2 attention invariants", Box::new(attention_invariants)),
        ("3 spectral normalization", Box::new(spectral_normalization)),
        ("4 metric oracles", Box::new(metric_oracles)),
        ("5 fusion operators", Box::new(fusion_operators)),
        ("6 toy training", Box::new(|| toy_training(dir.path()))),
        ("7 ablation harness", Box::new(|| ablation_harness(dir.path()))),
        ("8 determinism and persistence", Box::new(|| determinism(dir.path()))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("acceptance criterion {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("acceptance criterion {name}: FAIL ({why})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
