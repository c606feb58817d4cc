//! End-to-end ingest counts on TIFF scene directories: chipping, occlusion
//! dropping, dark-scene rejection and the by-source split.

use std::fs::File;
use std::path::Path;

use tiff::encoder::{colortype, TiffEncoder};

use sareo_core::ingest::{build_manifest, read_input_dir, IngestConfig, SceneInput};
use sareo_core::{ModalityKind, RasterChip, Split, ValueRange};

const NODATA: f32 = -9999.0;

fn write_gray(path: &Path, w: usize, h: usize, data: &[f32]) {
    let mut enc = TiffEncoder::new(File::create(path).unwrap()).unwrap();
    enc.write_image::<colortype::Gray32Float>(w as u32, h as u32, data).unwrap();
}

fn write_rgb(path: &Path, w: usize, h: usize, data: &[u8]) {
    let mut enc = TiffEncoder::new(File::create(path).unwrap()).unwrap();
    enc.write_image::<colortype::RGB8>(w as u32, h as u32, data).unwrap();
}

/// Dual-pol scene of side `n`; the first `nodata_rows[k]` rows of chip column
/// `k` in the top chip row hold the nodata value in both polarizations.
fn write_scene(root: &Path, name: &str, n: usize, eo_level: u8, nodata_rows: &[usize]) {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let mut vv: Vec<f32> = (0..n * n).map(|i| 0.05 + ((i * 37) % 101) as f32 * 1e-3).collect();
    let mut vh: Vec<f32> = (0..n * n).map(|i| 0.01 + ((i * 53) % 97) as f32 * 1e-4).collect();
    for (k, rows) in nodata_rows.iter().enumerate() {
        for y in 0..*rows {
            for x in k * 256..(k + 1) * 256 {
                vv[y * n + x] = NODATA;
                vh[y * n + x] = NODATA;
            }
        }
    }
    write_gray(&dir.join("vv.tif"), n, n, &vv);
    write_gray(&dir.join("vh.tif"), n, n, &vh);
    let eo: Vec<u8> = (0..n * n * 3).map(|i| eo_level.saturating_add((i % 7) as u8)).collect();
    write_rgb(&dir.join("eo.tif"), n, n, &eo);
    let meta = serde_json::json!({
        "lat": 48.1, "lon": 11.5, "ground_resolution": 10.0,
        "sar": "dual_pol", "nodata": NODATA, "eo_scale": 255.0,
    });
    std::fs::write(dir.join("scene.json"), meta.to_string()).unwrap();
}

fn chips_of<'a>(m: &'a sareo_core::Manifest, source: &str) -> Vec<&'a str> {
    m.samples.iter().filter(|s| s.source_id == source).map(|s| s.id.as_str()).collect()
}

#[test]
fn scene_directories_yield_the_expected_chip_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    // 29 of 256 rows is 11.3% nodata, 23 rows is 9.0%.
    write_scene(&input, "clean", 900, 120, &[]);
    write_scene(&input, "occluded", 900, 120, &[29, 23]);
    write_scene(&input, "dark", 900, 10, &[]);

    let scenes = read_input_dir(&input, 10.0).unwrap();
    assert_eq!(scenes.len(), 3);
    assert!(scenes.iter().all(|s| s.sar_modality == ModalityKind::SarDualPol));
    let cfg = IngestConfig::new(7);
    let (m, summary) = build_manifest(&scenes, &cfg, "tiff", &dir.path().join("out")).unwrap();

    assert_eq!(summary.cloud_rejected, vec!["dark".to_string()]);
    assert_eq!(chips_of(&m, "clean").len(), 9);
    let occluded = chips_of(&m, "occluded");
    assert_eq!(occluded.len(), 8);
    assert!(!occluded.contains(&"occluded_r0c0"));
    assert!(occluded.contains(&"occluded_r0c1"));
    assert!(chips_of(&m, "dark").is_empty());
    assert_eq!(summary.chips, 17);
    for s in &m.samples {
        assert!(dir.path().join("out").join(&s.paths[0].path).exists());
    }
}

#[test]
fn dark_threshold_brackets_a_v_mean_of_one_fifth() {
    let scene = |name: &str, v: f32| SceneInput {
        source_id: name.into(),
        sar: RasterChip::from_fn(3, 256, 256, ValueRange::Raw, |c, y, x| (c + y + x) as f32 * 1e-3).unwrap(),
        sar_modality: ModalityKind::SarDualPol,
        eo: RasterChip::filled(3, 256, 256, v, ValueRange::Unit).unwrap(),
        ir: None,
        lat: 0.0,
        lon: 0.0,
        ground_resolution: 10.0,
    };
    let scenes = vec![scene("a", 0.0), scene("b", 0.199), scene("c", 0.201), scene("d", 0.6)];
    let (m, summary) = build_manifest(&scenes, &IngestConfig::new(1), "t", &tempfile::tempdir().unwrap().path().join("o")).unwrap();
    assert_eq!(summary.cloud_rejected, vec!["a".to_string(), "b".to_string()]);
    assert_eq!(m.samples.len(), 2);
}

#[test]
fn split_is_eighty_twenty_by_source() {
    for (n, seed) in [(10usize, 1u64), (20, 2), (37, 3)] {
        let scenes: Vec<SceneInput> = (0..n)
            .map(|i| SceneInput {
                source_id: format!("s{i:03}"),
                sar: RasterChip::from_fn(3, 512, 256, ValueRange::Raw, |c, y, x| (c * 7 + y + x + i) as f32 * 1e-3).unwrap(),
                sar_modality: ModalityKind::SarDualPol,
                eo: RasterChip::filled(3, 512, 256, 0.5, ValueRange::Unit).unwrap(),
                ir: None,
                lat: 10.0,
                lon: 20.0,
                ground_resolution: 10.0,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = build_manifest(&scenes, &IngestConfig::new(seed), "t", dir.path()).unwrap();
        let mut train = std::collections::BTreeSet::new();
        let mut test = std::collections::BTreeSet::new();
        for s in &m.samples {
            match s.split {
                Split::Train => train.insert(s.source_id.clone()),
                Split::Test => test.insert(s.source_id.clone()),
            };
        }
        assert!(train.is_disjoint(&test), "a source straddles the split");
        assert_eq!(train.len() + test.len(), n);
        let target = 0.8 * n as f64;
        assert!((train.len() as f64 - target).abs() <= 1.0, "n {n}: {} train", train.len());
    }
}
