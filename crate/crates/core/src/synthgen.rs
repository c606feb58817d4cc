//! Procedural paired scenes: SAR-like, EO-like, map-like and IR-like
//! layers rendered from one seeded geometry.
//!
//! Roads and rivers are drawn by the same polyline generator at the same
//! width. They differ in EO and in the map but share one dark SAR
//! signature, so the SAR layer alone cannot tell them apart.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sareo_nn::exec;
use sareo_nn::ops::mix_seed;

use crate::chipio::{write_chip, ChipSidecar};
use crate::error::{Error, Result};
use crate::manifest::{split_by_source, ChannelNormalization, Manifest, ManifestRecord, ModalityPath};
use crate::raster::{GeoInfo, ModalityKind, RasterChip, ValueRange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub size: usize,
    /// Shapes beyond the one road and one river every scene carries.
    pub n_shapes: usize,
    pub speckle_strength: f64,
    /// Map-layer shift in pixels.
    pub misalignment: usize,
}

impl SceneSpec {
    pub fn new(seed: u64, size: usize) -> Self {
        SceneSpec {
            seed,
            size,
            n_shapes: 6,
            speckle_strength: 0.5,
            misalignment: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 64 {
            return Err(Error::Validation(format!("scene size {} is below 64 px", self.size)));
        }
        if !(0.0..=1.0).contains(&self.speckle_strength) {
            return Err(Error::Validation(format!(
                "speckle_strength {} outside [0, 1]",
                self.speckle_strength
            )));
        }
        if self.misalignment >= self.size {
            return Err(Error::Validation("misalignment must be smaller than the scene".into()));
        }
        Ok(())
    }
}

/// Land-cover class of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    Background,
    Field,
    Water,
    Road,
    Building,
}

impl Class {
    fn eo(self) -> [f32; 3] {
        match self {
            Class::Background => [0.30, 0.52, 0.25],
            Class::Field => [0.78, 0.70, 0.42],
            Class::Water => [0.12, 0.28, 0.62],
            Class::Road => [0.55, 0.55, 0.55],
            Class::Building => [0.72, 0.30, 0.22],
        }
    }

    fn map(self) -> [f32; 3] {
        match self {
            Class::Background => [0.93, 0.93, 0.90],
            Class::Field => [0.80, 0.92, 0.68],
            Class::Water => [0.66, 0.80, 0.98],
            Class::Road => [1.00, 1.00, 1.00],
            Class::Building => [0.85, 0.72, 0.68],
        }
    }

    /// Backscatter for (VV, VH).
    fn sar(self) -> [f32; 2] {
        match self {
            Class::Background => [0.45, 0.30],
            Class::Field => [0.35, 0.18],
            Class::Water | Class::Road => [0.08, 0.04],
            Class::Building => [0.95, 0.60],
        }
    }
}

/// Per-pixel class labels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub size: usize,
    pub labels: Vec<Class>,
}

impl LabelMap {
    pub fn get(&self, y: usize, x: usize) -> Class {
        self.labels[y * self.size + x]
    }

    /// Translates by `(dy, dx)`; uncovered pixels become background.
    pub fn shifted(&self, dy: isize, dx: isize) -> LabelMap {
        let n = self.size as isize;
        let mut labels = vec![Class::Background; self.labels.len()];
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = (y - dy, x - dx);
                if (0..n).contains(&sy) && (0..n).contains(&sx) {
                    labels[(y * n + x) as usize] = self.labels[(sy * n + sx) as usize];
                }
            }
        }
        LabelMap {
            size: self.size,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Dual-pol SAR (VV, VH, VV/VH composition) in [-1, 1].
    pub sar: RasterChip,
    pub eo: RasterChip,
    pub map: RasterChip,
    pub ir: RasterChip,
    pub lat: f64,
    pub lon: f64,
}

fn paint(labels: &mut [Class], size: usize, class: Class, inside: impl Fn(f64, f64) -> bool) {
    for y in 0..size {
        for x in 0..size {
            if inside(y as f64 + 0.5, x as f64 + 0.5) {
                labels[y * size + x] = class;
            }
        }
    }
}

fn segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    let (qy, qx) = (a.0 + t * dy - p.0, a.1 + t * dx - p.1);
    qy * qy + qx * qx
}

/// Edge-to-edge polyline with two interior waypoints.
fn polyline(rng: &mut ChaCha8Rng, size: f64) -> Vec<(f64, f64)> {
    let vertical = rng.random_bool(0.5);
    let mut pts = Vec::with_capacity(4);
    for i in 0..4 {
        let along = size * i as f64 / 3.0;
        let across = rng.random_range(0.1 * size..0.9 * size);
        pts.push(if vertical { (along, across) } else { (across, along) });
    }
    pts
}

/// Renders the scene geometry.
pub fn generate_labels(spec: &SceneSpec) -> Result<LabelMap> {
    spec.validate()?;
    let size = spec.size;
    let s = size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x6E0));
    let mut labels = vec![Class::Background; size * size];
    let half_width = (s / 32.0).max(1.5);

    let mut blobs = Vec::new();
    let mut buildings = Vec::new();
    for _ in 0..spec.n_shapes {
        if rng.random_bool(0.5) {
            buildings.push(());
        } else {
            blobs.push(if rng.random_bool(0.5) { Class::Field } else { Class::Water });
        }
    }
    for class in blobs {
        let cy = rng.random_range(0.1 * s..0.9 * s);
        let cx = rng.random_range(0.1 * s..0.9 * s);
        let lobes: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    cy + rng.random_range(-0.06 * s..0.06 * s),
                    cx + rng.random_range(-0.06 * s..0.06 * s),
                    rng.random_range(0.05 * s..0.11 * s),
                )
            })
            .collect();
        paint(&mut labels, size, class, |y, x| {
            lobes.iter().any(|&(ly, lx, r)| (y - ly).powi(2) + (x - lx).powi(2) <= r * r)
        });
    }
    for class in [Class::Road, Class::Water] {
        let pts = polyline(&mut rng, s);
        paint(&mut labels, size, class, |y, x| {
            pts.windows(2)
                .any(|w| segment_dist2((y, x), w[0], w[1]) <= half_width * half_width)
        });
    }
    for _ in buildings {
        let h = rng.random_range(0.08 * s..0.2 * s);
        let w = rng.random_range(0.08 * s..0.2 * s);
        let y0 = rng.random_range(0.0..s - h);
        let x0 = rng.random_range(0.0..s - w);
        paint(&mut labels, size, Class::Building, |y, x| {
            y >= y0 && y < y0 + h && x >= x0 && x < x0 + w
        });
    }
    Ok(LabelMap { size, labels })
}

/// Seeded axis-aligned direction for the map shift.
pub fn misalignment_offset(spec: &SceneSpec) -> (isize, isize) {
    let m = spec.misalignment as isize;
    match mix_seed(spec.seed, 0xA11) % 4 {
        0 => (m, 0),
        1 => (-m, 0),
        2 => (0, m),
        _ => (0, -m),
    }
}

fn rgb_chip(labels: &LabelMap, color: impl Fn(Class) -> [f32; 3]) -> RasterChip {
    let n = labels.size;
    RasterChip::from_fn(3, n, n, ValueRange::Unit, |c, y, x| color(labels.get(y, x))[c])
        .expect("palette lies in [0, 1]")
}

pub fn render_map(labels: &LabelMap) -> RasterChip {
    rgb_chip(labels, Class::map)
}

/// Speckle multiplier with mean 1: average of four uniform draws on [0, 2].
fn speckle(rng: &mut ChaCha8Rng, strength: f64) -> f32 {
    let u: f64 = (0..4).map(|_| rng.random_range(0.0..2.0)).sum::<f64>() / 4.0;
    (1.0 + strength * (u - 1.0)) as f32
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    let labels = generate_labels(spec)?;
    let n = spec.size;
    let eo = rgb_chip(&labels, Class::eo);
    let (dy, dx) = misalignment_offset(spec);
    let map = render_map(&labels.shifted(dy, dx));
    let ir = RasterChip::from_fn(1, n, n, ValueRange::Unit, |_, y, x| {
        0.05 + 0.9 * eo.get(1, y, x)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x5A2));
    let mut sar = vec![0.0f32; 3 * n * n];
    for i in 0..n * n {
        let [vv, vh] = labels.labels[i].sar();
        let vv = (vv * speckle(&mut rng, spec.speckle_strength)).clamp(0.0, 1.0);
        let vh = (vh * speckle(&mut rng, spec.speckle_strength)).clamp(0.0, 1.0);
        sar[i] = 2.0 * vv - 1.0;
        sar[n * n + i] = 2.0 * vh - 1.0;
        sar[2 * n * n + i] = 2.0 * (vh / (vv + 1e-6)).min(1.0) - 1.0;
    }
    let sar = RasterChip::new(3, n, n, sar, ValueRange::UnitSigned)?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0x1A7));
    let lat = rng.random_range(-60.0..60.0);
    let lon = rng.random_range(-180.0..180.0);
    let geo = GeoInfo::new(lat, lon, 10.0)?;
    Ok(Scene {
        sar: sar.with_geo(geo),
        eo: eo.with_geo(geo),
        map: map.with_geo(geo),
        ir: ir.with_geo(geo),
        lat,
        lon,
    })
}

/// Writes `n_scenes` scenes (one chip each) plus `manifest.jsonl` under `out_dir`.
///
/// Scene `i` uses seed `mix_seed(template.seed, i)`.
pub fn generate_corpus(n_scenes: usize, template: &SceneSpec, split_ratio: f64, out_dir: &Path) -> Result<Manifest> {
    if n_scenes == 0 {
        return Err(Error::Validation("n_scenes must be >= 1".into()));
    }
    template.validate()?;
    let ids: Vec<String> = (0..n_scenes).map(|i| format!("scene{i:04}")).collect();
    let splits = split_by_source(ids.iter().map(String::as_str), split_ratio, template.seed);
    let records = exec::try_map_indexed(n_scenes, |i| -> Result<ManifestRecord> {
        let spec = SceneSpec {
            seed: mix_seed(template.seed, i as u64),
            ..template.clone()
        };
        let scene = generate_scene(&spec)?;
        let id = &ids[i];
        let mut paths = Vec::new();
        for (kind, chip) in [
            (ModalityKind::SarDualPol, &scene.sar),
            (ModalityKind::EoRgb, &scene.eo),
            (ModalityKind::MapRgb, &scene.map),
            (ModalityKind::IrSingle, &scene.ir),
        ] {
            let rel = format!("chips/{id}_{}.chip", kind.short_name());
            write_chip(
                &out_dir.join(&rel),
                chip,
                &ChipSidecar {
                    modality: kind,
                    value_range: chip.value_range(),
                    geo: chip.geo,
                    source_id: id.clone(),
                },
            )?;
            paths.push(ModalityPath { modality: kind, path: rel });
        }
        Ok(ManifestRecord {
            source_id: id.clone(),
            split: splits[id],
            paths,
            lat: scene.lat,
            lon: scene.lon,
            id: format!("{id}_r0c0"),
        })
    })?;
    let mut manifest = Manifest::new("synthetic", template.seed, split_ratio, ModalityKind::SarDualPol);
    manifest.header.sar_normalization = Some(ChannelNormalization::identity_unit(3));
    manifest.samples = records;
    manifest.validate()?;
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
