//! Acceptance criteria 1 to 9, one pass/fail line each.
//!
//! Criteria 6 and 7 train twelve desk-scale models and are skipped unless the
//! binary is run with `--ignored` (or `--include-ignored`).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sareo_core::bundle::ModelBundle;
use sareo_core::eval::{self, evaluate_run, lpips, median, psnr, ssim, TestBackbone, PSNR_CAP_DB};
use sareo_core::imageio::encode_png;
use sareo_core::ingest::{build_manifest, IngestConfig, SceneInput};
use sareo_core::losses::{
    d_loss, d_loss_grad, feature_matching_loss, feature_matching_loss_grad, g_adv_loss, g_adv_loss_grad, AdversarialForm,
    Objective,
};
use sareo_core::model::{DiscriminatorConfig, MultiScaleDiscriminator, NormKind};
use sareo_core::osm::{fetch_map_chip, latlon_to_tile, tile_path, tile_resolution, LocalTileSource, TileCache, TileCoord, TILE_SIZE};
use sareo_core::synthgen::{generate_corpus, SceneSpec};
use sareo_core::train::{fit, read_log, StepReport, TrainConfig, LOG_FILE};
use sareo_core::{Conditioning, Manifest, ModalityKind, RasterChip, Split, ValueRange};
use sareo_nn::{exec, Tensor};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
    NotApplicable(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Check {
    ensure(elapsed <= limit, || format!("took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))?;
    Ok(detail)
}

fn run(n: usize, title: &str, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Verdict::Fail(format!("panicked: {msg}"))
    });
    let secs = started.elapsed().as_secs_f64();
    let (tag, detail, ok) = match verdict {
        Verdict::Pass(d) => ("PASS", d, true),
        Verdict::Fail(d) => ("FAIL", d, false),
        Verdict::Skip(d) => ("SKIP", d, true),
        Verdict::NotApplicable(d) => ("N/A", d, true),
    };
    println!("criterion {n} [{title}]: {tag} ({secs:.1} s) {detail}");
    ok
}

fn timed(limit_secs: u64, f: impl FnOnce() -> Check) -> Verdict {
    let started = Instant::now();
    match f().and_then(|d| within(started.elapsed(), Duration::from_secs(limit_secs), d)) {
        Ok(d) => Verdict::Pass(d),
        Err(d) => Verdict::Fail(d),
    }
}

fn random_unit(rng: &mut ChaCha8Rng, size: usize) -> RasterChip {
    let data = (0..3 * size * size).map(|_| rng.random::<f32>()).collect();
    RasterChip::new(3, size, size, data, ValueRange::Unit).unwrap()
}

fn perturbed(a: &RasterChip, noise: &[f32], amp: f32) -> RasterChip {
    let data = a.data().iter().zip(noise).map(|(v, n)| (v + amp * n).clamp(0.0, 1.0)).collect();
    RasterChip::new(3, a.height(), a.width(), data, ValueRange::Unit).unwrap()
}

fn criterion_2() -> Check {
    let backbone = TestBackbone::load(eval::TEST_BACKBONE).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..8 {
        let a = random_unit(&mut rng, 32);
        let b = random_unit(&mut rng, 32);
        ensure(psnr(&a, &a, 1.0).unwrap() == PSNR_CAP_DB, || "psnr identity".into())?;
        ensure((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12, || "ssim identity".into())?;
        ensure(lpips(&a, &a, &backbone).unwrap() == 0.0, || "lpips identity".into())?;
        ensure(psnr(&a, &b, 1.0).unwrap() == psnr(&b, &a, 1.0).unwrap(), || "psnr symmetry".into())?;
        ensure((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12, || "ssim symmetry".into())?;
        let (ab, ba) = (lpips(&a, &b, &backbone).unwrap(), lpips(&b, &a, &backbone).unwrap());
        ensure((ab - ba).abs() <= 1e-12 * ab.max(1.0) && ab >= 0.0, || format!("lpips symmetry {ab} vs {ba}"))?;

        let mid = RasterChip::filled(3, 32, 32, 0.5, ValueRange::Unit).unwrap();
        let noise: Vec<f32> = (0..mid.data().len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let scores: Vec<f64> = (1..=5).map(|k| psnr(&mid, &perturbed(&mid, &noise, 0.08 * k as f32), 1.0).unwrap()).collect();
        ensure(scores.windows(2).all(|w| w[1] < w[0]), || format!("psnr not decreasing: {scores:?}"))?;
    }
    let a = RasterChip::filled(3, 8, 8, 100.0, ValueRange::Raw).unwrap();
    let b = RasterChip::filled(3, 8, 8, 101.0, ValueRange::Raw).unwrap();
    let p = psnr(&a, &b, 255.0).unwrap();
    ensure((p - 48.13).abs() <= 0.01, || format!("MSE 1 at peak 255 gave {p} dB"))?;
    let zero = RasterChip::filled(3, 16, 16, 0.0, ValueRange::Unit).unwrap();
    let one = RasterChip::filled(3, 16, 16, 1.0, ValueRange::Unit).unwrap();
    let s = ssim(&zero, &one).unwrap();
    ensure((s - 1.0e-4).abs() <= 1e-6, || format!("constant-image SSIM {s}"))?;
    Ok(format!("48.13 dB case gave {p:.4}; constant SSIM {s:.3e}"))
}

/// Step that keeps `x + H` exact for inputs on the 2^-10 grid.
const H: f64 = 1.0 / 4096.0;

fn grid_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-4096i32..4096) as f32 / 1024.0).collect()).unwrap()
}

/// Worst relative error between `grads` and central differences of `f`.
fn fd_error(xs: &[Tensor], grads: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..xs.len() {
        for i in 0..xs[k].data().len() {
            let nudge = |d: f64| {
                let mut v = xs.to_vec();
                v[k].data_mut()[i] = (xs[k].data()[i] as f64 + d) as f32;
                v
            };
            let numeric = (f(&nudge(H)) - f(&nudge(-H))) / (2.0 * H);
            let analytic = grads[k].data()[i] as f64;
            let err = (analytic - numeric).abs();
            if err >= 1e-12 {
                worst = worst.max(err / analytic.abs().max(numeric.abs()));
            }
        }
    }
    worst
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..16 {
        for form in [AdversarialForm::LogSigmoid, AdversarialForm::LogSigmoidMinimax, AdversarialForm::LeastSquares] {
            let real = vec![grid_tensor(&mut rng, [2, 1, 3, 3]), grid_tensor(&mut rng, [2, 1, 2, 2])];
            let fake = vec![grid_tensor(&mut rng, [2, 1, 3, 3]), grid_tensor(&mut rng, [2, 1, 2, 2])];
            let (_, gr, gf) = d_loss_grad(&real, &fake, form).unwrap();
            worst = worst.max(fd_error(&real, &gr, |r| d_loss(r, &fake, form).unwrap()));
            worst = worst.max(fd_error(&fake, &gf, |f| d_loss(&real, f, form).unwrap()));
            let (_, g) = g_adv_loss_grad(&fake, form).unwrap();
            worst = worst.max(fd_error(&fake, &g, |f| g_adv_loss(f, form).unwrap()));
        }
        let real = vec![grid_tensor(&mut rng, [1, 2, 3, 3]), grid_tensor(&mut rng, [1, 3, 2, 2])];
        let fake: Vec<Tensor> = real
            .iter()
            .map(|t| {
                let data = t
                    .data()
                    .iter()
                    .map(|v| {
                        let d = rng.random_range(1i32..2048) as f32 / 1024.0;
                        if rng.random_bool(0.5) { v + d } else { v - d }
                    })
                    .collect();
                Tensor::from_vec(t.shape(), data).unwrap()
            })
            .collect();
        let (_, g) = feature_matching_loss_grad(&[real.clone()], &[fake.clone()]).unwrap();
        worst = worst.max(fd_error(&fake, &g[0], |f| feature_matching_loss(&[real.clone()], &[f.to_vec()]).unwrap()));
    }
    ensure(worst <= 1e-4, || format!("worst relative finite-difference error {worst:.2e}"))?;

    let x = grid_tensor(&mut rng, [2, 3, 32, 32]);
    let real = grid_tensor(&mut rng, [2, 3, 32, 32]);
    let fake = grid_tensor(&mut rng, [2, 3, 32, 32]);
    let cfg = DiscriminatorConfig {
        in_channels: 6,
        num_scales: 3,
        base_width: 8,
        n_layers: 2,
        norm: NormKind::Instance,
    };
    let d = MultiScaleDiscriminator::new(cfg, 5).unwrap();
    let losses = |objective: Objective| {
        let cond = objective.discriminator_condition(&x, &[]).unwrap().unwrap();
        let logits = |y: &Tensor| d.discriminate(&cond, y).unwrap().into_iter().map(|o| o.logits).collect::<Vec<_>>();
        let (r, f) = (logits(&real), logits(&fake));
        (d_loss(&r, &f, AdversarialForm::LogSigmoid).unwrap(), g_adv_loss(&f, AdversarialForm::LogSigmoid).unwrap())
    };
    ensure(losses(Objective::Conditional) == losses(Objective::MultiConditional), || "conditional and multi-conditional losses differ".into())?;

    let even = vec![Tensor::zeros([1, 1, 4, 4])];
    let v = d_loss(&even, &even, AdversarialForm::LogSigmoid).unwrap();
    ensure((v - 2.0 * std::f64::consts::LN_2).abs() <= 1e-9, || format!("d_loss at even odds {v}"))?;
    Ok(format!("worst finite-difference error {worst:.2e}"))
}

fn scene(id: &str, size: usize, eo_level: f32, occluded_rows: &[usize]) -> SceneInput {
    let mut sar = RasterChip::from_fn(3, size, size, ValueRange::Raw, |c, y, x| ((c * 31 + y * 7 + x * 3) % 97) as f32 * 1e-2).unwrap();
    let mut mask = vec![false; size * size];
    for (k, rows) in occluded_rows.iter().enumerate() {
        for y in 0..*rows {
            for x in k * 256..(k + 1) * 256 {
                mask[y * size + x] = true;
            }
        }
    }
    if occluded_rows.iter().any(|r| *r > 0) {
        sar = sar.with_nodata_mask(mask).unwrap();
    }
    SceneInput {
        source_id: id.into(),
        sar,
        sar_modality: ModalityKind::SarDualPol,
        eo: RasterChip::filled(3, size, size, eo_level, ValueRange::Unit).unwrap(),
        ir: None,
        lat: 30.0,
        lon: 30.0,
        ground_resolution: 10.0,
    }
}

fn criterion_4() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut scenes: Vec<SceneInput> = (0..10).map(|i| scene(&format!("s{i}"), 900, 0.6, &[])).collect();
    scenes.push(scene("occluded", 900, 0.6, &[29, 23]));
    scenes.push(scene("dark", 900, 0.0, &[]));
    let (m, summary) = build_manifest(&scenes, &IngestConfig::new(4), "acceptance", dir.path()).map_err(|e| e.to_string())?;
    let count = |src: &str| m.samples.iter().filter(|s| s.source_id == src).count();
    ensure((0..10).all(|i| count(&format!("s{i}")) == 9), || "a 900 px scene did not give 9 chips".into())?;
    let occluded: Vec<&str> = m.samples.iter().filter(|s| s.source_id == "occluded").map(|s| s.id.as_str()).collect();
    ensure(
        occluded.len() == 8 && !occluded.contains(&"occluded_r0c0") && occluded.contains(&"occluded_r0c1"),
        || format!("occlusion filter kept {occluded:?}"),
    )?;
    ensure(summary.cloud_rejected == ["dark"], || format!("rejected {:?}", summary.cloud_rejected))?;
    let sources: std::collections::BTreeMap<&str, Split> = m.samples.iter().map(|s| (s.source_id.as_str(), s.split)).collect();
    let train = sources.values().filter(|s| **s == Split::Train).count();
    let target = 0.8 * sources.len() as f64;
    ensure((train as f64 - target).abs() <= 1.0, || format!("{train} of {} sources in train", sources.len()))?;
    Ok(format!("{} chips from {} sources, {train} train sources", m.samples.len(), sources.len()))
}

fn all_train(mut m: Manifest) -> Manifest {
    m.samples.iter_mut().for_each(|s| s.split = Split::Train);
    m
}

fn criterion_5() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut ratios = Vec::new();
    for seed in [1u64, 2, 3] {
        let corpus = dir.path().join(format!("corpus{seed}"));
        let (m, p) = common::corpus(&corpus, 4, 64, seed);
        let m = all_train(m);
        let cfg = TrainConfig {
            epochs: 500,
            checkpoint_every: 0,
            ..TrainConfig::desk("sar+map".parse().unwrap(), seed)
        };
        let out = dir.path().join(format!("run{seed}"));
        fit(&m, &p, &cfg, &out, None).map_err(|e| e.to_string())?;
        let log = read_log(&out.join(LOG_FILE)).map_err(|e| e.to_string())?;
        ensure(log.len() == 500, || format!("seed {seed}: {} steps", log.len()))?;
        ratios.push(log[499].l1_monitor / log[10].l1_monitor);
    }
    let med = median(ratios.clone());
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    ensure(med <= 0.5, || format!("median L1 ratio {med:.3} (per seed {shown:?})"))?;
    Ok(format!("median final/step-10 L1 ratio {med:.3} (per seed {shown:?})"))
}

struct Outcome {
    l1: f64,
    lpips: f64,
}

fn train_and_score(corpus: &Path, conditioning: &str, seed: u64, out: &Path) -> Outcome {
    let manifest_path = corpus.join(sareo_core::synthgen::MANIFEST_FILE);
    let m = Manifest::read(&manifest_path).unwrap();
    let c: Conditioning = conditioning.parse().unwrap();
    let cfg = TrainConfig {
        epochs: u64::MAX,
        max_steps: Some(2000),
        checkpoint_every: 0,
        ..TrainConfig::desk(c.clone(), seed)
    };
    let bundle = fit(&m, &manifest_path, &cfg, out, None).unwrap();
    let backbone = TestBackbone::load(eval::TEST_BACKBONE).unwrap();
    let report = evaluate_run(&bundle, &m, &manifest_path, &c, &backbone, conditioning, None).unwrap();
    report.write(&out.join(eval::REPORT_FILE)).unwrap();
    Outcome {
        l1: report.aggregate.l1,
        lpips: report.aggregate.lpips,
    }
}

const SEEDS: [u64; 3] = [11, 12, 13];

fn slow_root() -> std::path::PathBuf {
    let root = std::env::temp_dir().join("sareo-acceptance-slow");
    std::fs::create_dir_all(&root).unwrap();
    root
}

fn corpus_dir(misalignment: usize) -> std::path::PathBuf {
    let dir = slow_root().join(format!("corpus_mis{misalignment}"));
    if !dir.join(sareo_core::synthgen::MANIFEST_FILE).exists() {
        let spec = SceneSpec {
            misalignment,
            ..SceneSpec::new(64, 64)
        };
        generate_corpus(64, &spec, 0.8, &dir).unwrap();
    }
    dir
}

/// Median test L1 and LPIPS over the matched seeds.
fn medians(corpus: &Path, conditioning: &str, tag: &str) -> (f64, f64, Vec<f64>) {
    let runs: Vec<Outcome> = SEEDS
        .iter()
        .map(|s| {
            let out = slow_root().join(format!("{tag}_{}_{s}", conditioning.replace('+', "_")));
            let _ = std::fs::remove_dir_all(&out);
            train_and_score(corpus, conditioning, *s, &out)
        })
        .collect();
    let l1s: Vec<f64> = runs.iter().map(|o| o.l1).collect();
    (median(l1s.clone()), median(runs.iter().map(|o| o.lpips).collect()), l1s)
}

fn criteria_6_and_7() -> (Check, Check) {
    let started = Instant::now();
    let aligned = corpus_dir(0);
    let (base_l1, base_lp, base_runs) = medians(&aligned, "sar", "aligned");
    let (multi_l1, multi_lp, multi_runs) = medians(&aligned, "sar+map", "aligned");
    let detail6 = format!(
        "{:.0} min; baseline L1 {base_l1:.4} LPIPS {base_lp:.4}; sar+map L1 {multi_l1:.4} LPIPS {multi_lp:.4}; per-seed L1 {base_runs:.4?} vs {multi_runs:.4?}",
        started.elapsed().as_secs_f64() / 60.0
    );
    let six = ensure(multi_l1 < base_l1 && multi_lp < base_lp, || detail6.clone())
        .and_then(|_| within(started.elapsed(), Duration::from_secs(7200), detail6.clone()));

    let started = Instant::now();
    let shifted = corpus_dir(16);
    let (shift_l1, shift_lp, shift_runs) = medians(&shifted, "sar+map", "misaligned");
    let detail7 = format!(
        "{:.0} min; misaligned sar+map L1 {shift_l1:.4} LPIPS {shift_lp:.4} vs baseline L1 {base_l1:.4}; ratio {:.3}; per-seed {shift_runs:.4?}",
        started.elapsed().as_secs_f64() / 60.0,
        shift_l1 / base_l1
    );
    let seven = ensure(shift_l1 >= 0.9 * base_l1, || detail7.clone())
        .and_then(|_| within(started.elapsed(), Duration::from_secs(7200), detail7.clone()));
    (six, seven)
}

fn timeless(log: &[StepReport]) -> Vec<StepReport> {
    log.iter().map(|r| StepReport { wall_ms: 0.0, ..r.clone() }).collect()
}

fn criterion_8() -> Check {
    exec::set_sequential(true);
    let dir = tempfile::tempdir().unwrap();
    let scenes: Vec<SceneInput> = (0..5).map(|i| scene(&format!("d{i}"), 512, 0.5, &[])).collect();
    build_manifest(&scenes, &IngestConfig::new(8), "det", &dir.path().join("ingest_a")).unwrap();
    build_manifest(&scenes, &IngestConfig::new(8), "det", &dir.path().join("ingest_b")).unwrap();
    ensure(
        common::tree(&dir.path().join("ingest_a")) == common::tree(&dir.path().join("ingest_b")),
        || "ingest outputs differ".into(),
    )?;

    let (m, p) = common::corpus(&dir.path().join("corpus"), 10, 64, 8);
    let conditioning: Conditioning = "sar+map".parse().unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::desk(conditioning.clone(), 8)
    };
    let mut bundles = Vec::new();
    let mut logs = Vec::new();
    let mut images = Vec::new();
    let backbone = TestBackbone::load(eval::TEST_BACKBONE).unwrap();
    for tag in ["a", "b"] {
        let out = dir.path().join(format!("train_{tag}"));
        let bundle = fit(&m, &p, &cfg, &out, None).unwrap();
        logs.push(timeless(&read_log(&out.join(LOG_FILE)).unwrap()));
        let eval_dir = dir.path().join(format!("eval_{tag}"));
        evaluate_run(&bundle, &m, &p, &conditioning, &backbone, "det", Some(&eval_dir)).unwrap();
        images.push(common::tree(&eval_dir));
        bundles.push(bundle);
    }
    ensure(logs[0] == logs[1], || "training logs differ".into())?;
    ensure(bundles[0].to_bytes() == bundles[1].to_bytes(), || "trained bundles differ".into())?;
    ensure(images[0] == images[1], || "generated images differ".into())?;

    let ckpt = dir.path().join("rt.ckpt");
    bundles[0].save(&ckpt).unwrap();
    let loaded = ModelBundle::load(&ckpt).unwrap();
    ensure(loaded == bundles[0] && loaded.to_bytes() == std::fs::read(&ckpt).unwrap(), || "checkpoint round trip".into())?;
    exec::set_sequential(false);
    Ok(format!("{} log lines, {} output files compared", logs[0].len(), images[0].len()))
}

fn mercator_tile(lat: f64, lon: f64, zoom: u8) -> (u32, u32) {
    let n = 2f64.powi(zoom as i32);
    let merc = (std::f64::consts::FRAC_PI_4 + lat.to_radians() / 2.0).tan().ln();
    let x = ((lon + 180.0) / 360.0 * n).floor().clamp(0.0, n - 1.0);
    let y = ((1.0 - merc / std::f64::consts::PI) / 2.0 * n).floor().clamp(0.0, n - 1.0);
    (x as u32, y as u32)
}

fn criterion_9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let lat = rng.random_range(-85.0..85.0);
        let lon = rng.random_range(-180.0..180.0);
        let zoom = rng.random_range(0..=18u8);
        let t = latlon_to_tile(lat, lon, zoom).unwrap();
        ensure((t.x, t.y) == mercator_tile(lat, lon, zoom), || format!("tile mismatch at {lat}, {lon}, z{zoom}"))?;
    }

    let dir = tempfile::tempdir().unwrap();
    let tiles = dir.path().join("tiles");
    let (zoom, tx, ty) = (14u8, 8_700u32, 5_600u32);
    let t = TILE_SIZE as u32;
    let mut images = Vec::new();
    for (k, (dx, dy)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        let img = image::RgbImage::from_fn(t, t, |x, y| image::Rgb([(k * 50) as u8, (x % 256) as u8, ((y * 5) % 256) as u8]));
        let path = tile_path(&tiles, TileCoord::new(zoom, tx + dx, ty + dy).unwrap());
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, encode_png(&img).unwrap()).unwrap();
        images.push(img);
    }
    let world = TILE_SIZE as f64 * 2f64.powi(zoom as i32);
    let (px, py) = ((tx + 1) as f64 * TILE_SIZE as f64 + 0.25, (ty + 1) as f64 * TILE_SIZE as f64 + 0.25);
    let lon = px / world * 360.0 - 180.0;
    let lat = (std::f64::consts::PI * (1.0 - 2.0 * py / world)).sinh().atan().to_degrees();
    let cache = TileCache::new(&dir.path().join("cache"), Box::new(LocalTileSource { root: tiles })).unwrap();
    let size = 64usize;
    let chip = fetch_map_chip(lat, lon, tile_resolution(lat, zoom), size, &cache, false).map_err(|e| e.to_string())?;
    let origin = t as usize - size / 2;
    for i in 0..size {
        for j in 0..size {
            let (gy, gx) = (origin + i, origin + j);
            let img = &images[(gy / t as usize) * 2 + gx / t as usize];
            let px = img.get_pixel((gx % t as usize) as u32, (gy % t as usize) as u32);
            for c in 0..3 {
                ensure(chip.get(c, i, j) == px[c] as f32 / 255.0, || format!("mosaic mismatch at ({i}, {j})"))?;
            }
        }
    }
    Ok("1000 points exact; 64 px chip equals the 2x2 mosaic".into())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let slow = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let mut ok = true;
    ok &= run(1, "full-scale reproduction", || {
        Verdict::NotApplicable("full datasets and 400-epoch training are out of desk-scale reach; criteria 2 to 9 substitute".into())
    });
    ok &= run(2, "metric oracles", || timed(60, criterion_2));
    ok &= run(3, "loss correctness", || timed(120, criterion_3));
    ok &= run(4, "pipeline counts", || timed(60, criterion_4));
    ok &= run(5, "overfit sanity", || timed(1200, criterion_5));
    if slow {
        let (six, seven) = criteria_6_and_7();
        let verdict = |c: Check| match c {
            Ok(d) => Verdict::Pass(d),
            Err(d) => Verdict::Fail(d),
        };
        ok &= run(6, "direction of effect", || verdict(six));
        ok &= run(7, "misalignment regression", || verdict(seven));
    } else {
        for (n, title) in [(6, "direction of effect"), (7, "misalignment regression")] {
            run(n, title, || Verdict::Skip("slow; run `cargo test -p sareo-core --test acceptance -- --ignored`".into()));
        }
    }
    ok &= run(8, "determinism", || timed(300, criterion_8));
    ok &= run(9, "tile math", || timed(60, criterion_9));
    if !ok {
        std::process::exit(1);
    }
}
