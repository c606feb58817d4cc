//! Property tests for the cross-module invariants.

use proptest::prelude::*;

use sareo_core::eval::{self, lpips, psnr, ssim, MetricReport, SampleMetrics, TestBackbone};
use sareo_core::ingest::{chip_scene, cloud_filter, compose_dual_pol, compose_quad_pol, IngestConfig};
use sareo_core::losses::{d_loss, feature_matching_loss, g_adv_loss, AdversarialForm};
use sareo_core::manifest::split_by_source;
use sareo_core::osm::{latlon_to_tile, tile_to_latlon, TileCoord, MAX_LATITUDE};
use sareo_core::{concat_conditioning, latlon_to_planes, RasterChip, ValueRange};
use sareo_nn::{Adam, AdamState, Tensor};

fn chip(c: usize, h: usize, w: usize, range: ValueRange, data: Vec<f32>) -> RasterChip {
    RasterChip::new(c, h, w, data, range).unwrap()
}

fn unit_chip(c: usize, h: usize, w: usize) -> impl Strategy<Value = RasterChip> {
    prop::collection::vec(0.0f32..=1.0, c * h * w).prop_map(move |d| chip(c, h, w, ValueRange::Unit, d))
}

fn signed_chip(c: usize, h: usize, w: usize) -> impl Strategy<Value = RasterChip> {
    prop::collection::vec(-1.0f32..=1.0, c * h * w).prop_map(move |d| chip(c, h, w, ValueRange::UnitSigned, d))
}

fn permute(t: &Tensor, perm: &[usize]) -> Tensor {
    let data = perm.iter().map(|&i| t.data()[i]).collect();
    Tensor::from_vec(t.shape(), data).unwrap()
}

fn forms() -> impl Strategy<Value = AdversarialForm> {
    prop_oneof![
        Just(AdversarialForm::LogSigmoid),
        Just(AdversarialForm::LogSigmoidMinimax),
        Just(AdversarialForm::LeastSquares),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn concat_is_associative(a in signed_chip(2, 4, 4), b in signed_chip(3, 4, 4), c in signed_chip(1, 4, 4)) {
        let left = concat_conditioning(&concat_conditioning(&a, &[b.clone()]).unwrap(), &[c.clone()]).unwrap();
        let right = concat_conditioning(&a, &[b, c]).unwrap();
        prop_assert_eq!(left.data(), right.data());
        prop_assert_eq!(left.channels(), 6);
    }

    #[test]
    fn latlon_planes_are_constant(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0, h in 1usize..12, w in 1usize..12) {
        let p = latlon_to_planes(lat, lon, h, w).unwrap();
        prop_assert_eq!(p.channels(), 2);
        for c in 0..2 {
            let plane = p.plane(c);
            prop_assert!(plane.iter().all(|v| *v == plane[0]));
            prop_assert!((-1.0..=1.0).contains(&plane[0]));
        }
    }

    #[test]
    fn split_is_reproducible(n in 1usize..40, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let a = split_by_source(ids.iter().map(String::as_str), 0.8, seed);
        let b = split_by_source(ids.iter().rev().map(String::as_str), 0.8, seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn brightening_never_rejects(eo in unit_chip(3, 6, 6), k in 1.0f32..8.0, threshold in 0.0f64..1.0) {
        let brighter = eo.map_values(ValueRange::Unit, |_, v| (v * k).min(1.0)).unwrap();
        if cloud_filter(&eo, threshold).unwrap() {
            prop_assert!(cloud_filter(&brighter, threshold).unwrap());
        }
    }

    #[test]
    fn chipping_conserves_pixels(size in 2usize..9, ny in 1usize..4, nx in 1usize..4, extra_y in 0usize..8, extra_x in 0usize..8) {
        let (h, w) = (ny * size + extra_y % size, nx * size + extra_x % size);
        let scene = RasterChip::from_fn(2, h, w, ValueRange::Raw, |c, y, x| (c * 10_000 + y * 100 + x) as f32).unwrap();
        let cfg = IngestConfig { chip_size: size, chip_stride: size, ..IngestConfig::new(0) };
        let chips = chip_scene(&scene, &cfg).unwrap();
        prop_assert_eq!(chips.len(), (h / size) * (w / size));
        for (i, ch) in chips.iter().enumerate() {
            let (y0, x0) = ((i / (w / size)) * size, (i % (w / size)) * size);
            for c in 0..2 {
                for y in 0..size {
                    for x in 0..size {
                        prop_assert_eq!(ch.get(c, y, x), scene.get(c, y0 + y, x0 + x));
                    }
                }
            }
        }
    }

    #[test]
    fn filtering_then_chipping_matches_chipping(eo in unit_chip(3, 8, 8)) {
        let eo = eo.map_values(ValueRange::Unit, |_, v| 0.5 + v / 2.0).unwrap();
        let cfg = IngestConfig { chip_size: 4, chip_stride: 4, ..IngestConfig::new(0) };
        let direct = chip_scene(&eo, &cfg).unwrap();
        let filtered = if cloud_filter(&eo, cfg.v_mean_threshold).unwrap() { chip_scene(&eo, &cfg).unwrap() } else { vec![] };
        prop_assert_eq!(direct, filtered);
    }

    #[test]
    fn dual_pol_is_always_finite(
        vv in prop::collection::vec(prop_oneof![Just(0.0f32), -1e30f32..1e30, -1e-30f32..1e-30], 9),
        vh in prop::collection::vec(prop_oneof![Just(0.0f32), -1e30f32..1e30, -1e-30f32..1e-30], 9),
        clip in 0.5f32..100.0,
    ) {
        let a = chip(1, 3, 3, ValueRange::Raw, vv);
        let b = chip(1, 3, 3, ValueRange::Raw, vh);
        let out = compose_dual_pol(&a, &b, clip, Some(0.0)).unwrap();
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
        prop_assert!(out.plane(2).iter().all(|v| (0.0..=clip).contains(v)));
        let q = compose_quad_pol(&a, &b, &b, &a, None).unwrap();
        prop_assert!(q.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn losses_ignore_patch_order(
        real in prop::collection::vec(-4.0f32..4.0, 16),
        fake in prop::collection::vec(-4.0f32..4.0, 16),
        perm in Just((0..16).collect::<Vec<usize>>()).prop_shuffle(),
        form in forms(),
    ) {
        let r = Tensor::from_vec([1, 1, 4, 4], real).unwrap();
        let f = Tensor::from_vec([1, 1, 4, 4], fake).unwrap();
        let (rp, fp) = (permute(&r, &perm), permute(&f, &perm));
        let d0 = d_loss(&[r.clone()], &[f.clone()], form).unwrap();
        let d1 = d_loss(&[rp.clone()], &[fp.clone()], form).unwrap();
        prop_assert!(close(d0, d1, 1e-12));
        let g0 = g_adv_loss(&[f.clone()], form).unwrap();
        let g1 = g_adv_loss(&[fp.clone()], form).unwrap();
        prop_assert!(close(g0, g1, 1e-12));
        let m0 = feature_matching_loss(&[vec![r]], &[vec![f]]).unwrap();
        let m1 = feature_matching_loss(&[vec![rp]], &[vec![fp]]).unwrap();
        prop_assert!(close(m0, m1, 1e-12));
    }

    #[test]
    fn adam_matches_closed_form_on_a_quadratic(
        p0 in prop::collection::vec(-5.0f64..5.0, 1..8),
        curvature in 0.1f64..10.0,
        target in -3.0f64..3.0,
        lr in 1e-5f64..1e-1,
    ) {
        let opt = Adam { lr, ..Adam::default() };
        let grad: Vec<f64> = p0.iter().map(|p| curvature * (p - target)).collect();
        let mut state = AdamState::<f64>::new([p0.len()]);
        let mut params = vec![p0.clone()];
        {
            let mut refs: Vec<&mut Vec<f64>> = params.iter_mut().collect();
            opt.step(&mut state, &mut refs, std::slice::from_ref(&grad), 1.0);
        }
        for ((p, g), got) in p0.iter().zip(&grad).zip(&params[0]) {
            let (b1, b2) = (opt.beta1, opt.beta2);
            let m = (1.0 - b1) * g;
            let v = (1.0 - b2) * g * g;
            let expected = p - lr * (m / (1.0 - b1)) / ((v / (1.0 - b2)).sqrt() + opt.eps);
            prop_assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        }
    }

    #[test]
    fn ssim_is_symmetric(a in unit_chip(3, 16, 16), b in unit_chip(3, 16, 16)) {
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_ignores_joint_translation(
        a in prop::collection::vec(0.0f32..=1.0, 64),
        b in prop::collection::vec(0.0f32..=1.0, 64),
        o1 in (10usize..=22, 10usize..=22),
        o2 in (10usize..=22, 10usize..=22),
    ) {
        const N: usize = 40;
        let place = |content: &[f32], (oy, ox): (usize, usize)| {
            RasterChip::from_fn(1, N, N, ValueRange::Unit, |_, y, x| {
                if (oy..oy + 8).contains(&y) && (ox..ox + 8).contains(&x) {
                    content[(y - oy) * 8 + (x - ox)]
                } else {
                    0.5
                }
            })
            .unwrap()
        };
        let s1 = ssim(&place(&a, o1), &place(&b, o1)).unwrap();
        let s2 = ssim(&place(&a, o2), &place(&b, o2)).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-9, "{s1} vs {s2}");
    }

    #[test]
    fn psnr_falls_as_noise_grows(
        base in prop::collection::vec(0.0f32..=1.0, 48),
        pattern in prop::collection::vec(-1.0f32..=1.0, 48),
        step in 0.01f32..0.2,
    ) {
        prop_assume!(pattern.iter().any(|v| v.abs() > 1e-3));
        let a = chip(3, 4, 4, ValueRange::Raw, base.clone());
        let values: Vec<f64> = (1..=5)
            .map(|k| {
                let amp = step * k as f32;
                let noisy = base.iter().zip(&pattern).map(|(x, n)| x + amp * n).collect();
                psnr(&a, &chip(3, 4, 4, ValueRange::Raw, noisy), 1.0).unwrap()
            })
            .collect();
        prop_assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    }

    #[test]
    fn report_round_trips(rows in prop::collection::vec(("[a-z0-9_]{1,12}", 0.0f64..100.0, 0.0f64..=1.0, 0.0f64..2.0, 0.0f64..2.0), 1..10)) {
        let per_sample = rows
            .into_iter()
            .map(|(id, psnr, ssim, lpips, l1)| SampleMetrics { id, psnr, ssim, lpips, l1 })
            .collect();
        let report = MetricReport::new("run", per_sample);
        prop_assert_eq!(MetricReport::parse(&report.to_json()).unwrap(), report);
    }

    #[test]
    fn tile_contains_its_point(lat in -MAX_LATITUDE..MAX_LATITUDE, lon in -180.0f64..180.0, zoom in 0u8..=19) {
        let t = latlon_to_tile(lat, lon, zoom).unwrap();
        let (north, west) = tile_to_latlon(t);
        let (south, east) = tile_to_latlon(TileCoord { zoom, x: t.x + 1, y: t.y + 1 });
        prop_assert!(west <= lon + 1e-9 && lon < east + 1e-9, "lon {lon} not in [{west}, {east})");
        prop_assert!(south - 1e-9 < lat && lat <= north + 1e-9, "lat {lat} not in ({south}, {north}]");
    }

    #[test]
    fn next_zoom_doubles_indices(lat in -MAX_LATITUDE..MAX_LATITUDE, lon in -180.0f64..180.0, zoom in 0u8..19) {
        let a = latlon_to_tile(lat, lon, zoom).unwrap();
        let b = latlon_to_tile(lat, lon, zoom + 1).unwrap();
        prop_assert!(b.x / 2 == a.x && b.y / 2 == a.y, "{a:?} -> {b:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lpips_is_a_nonnegative_symmetric_distance(seed in any::<u64>(), a in unit_chip(3, 16, 16), b in unit_chip(3, 16, 16)) {
        let backbone = TestBackbone::generate(seed);
        prop_assert_eq!(lpips(&a, &a, &backbone).unwrap(), 0.0);
        let ab = lpips(&a, &b, &backbone).unwrap();
        let ba = lpips(&b, &a, &backbone).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
    }
}

#[test]
fn psnr_cap_applies_to_identical_images() {
    let a = RasterChip::filled(3, 8, 8, 0.3, ValueRange::Unit).unwrap();
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), eval::PSNR_CAP_DB);
}
