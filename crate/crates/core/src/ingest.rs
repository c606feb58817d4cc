//! Preprocessing: SAR channel composition, cloud filtering, chipping with
//! occlusion rejection, percentile normalization and manifest writing.
//!
//! Scene directory layout read by [`read_scene_dir`]:
//!
//! ```text
//! <input>/<scene_id>/scene.json   {"lat", "lon", "ground_resolution", "sar": "dual_pol"|"quad_pol",
//!                                  "nodata": optional, "eo_scale": optional (default 1)}
//! <input>/<scene_id>/vv.tif vh.tif          dual-pol bands (or hh, hv, vh, vv for quad-pol)
//! <input>/<scene_id>/eo.tif                 3-band RGB reflectance
//! <input>/<scene_id>/ir.tif                 optional single band, same scale as eo
//! ```
//!
//! Every `.tif` may be replaced by a `.chip` file of the same stem.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};

use sareo_nn::exec;

use crate::chipio::{self, write_chip, ChipSidecar};
use crate::error::{Error, Result};
use crate::manifest::{split_by_source, ChannelNormalization, Manifest, ManifestRecord, ModalityPath};
use crate::raster::{GeoInfo, ModalityKind, RasterChip, Split, ValueRange};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub chip_size: usize,
    pub chip_stride: usize,
    pub v_mean_threshold: f64,
    pub occlusion_max_fraction: f64,
    pub split_ratio: f64,
    pub seed: u64,
    /// Upper clip for the |VV| / |VH| channel.
    pub ratio_clip: f32,
    /// Lower and upper percentiles for SAR normalization.
    pub percentiles: (f64, f64),
}

impl IngestConfig {
    pub fn new(seed: u64) -> Self {
        IngestConfig {
            chip_size: 256,
            chip_stride: 256,
            v_mean_threshold: 0.2,
            occlusion_max_fraction: 0.10,
            split_ratio: 0.8,
            seed,
            ratio_clip: 10.0,
            percentiles: (1.0, 99.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chip_size == 0 || self.chip_stride == 0 {
            return Err(Error::Config("chip size and stride must be positive".into()));
        }
        if !(self.occlusion_max_fraction > 0.0 && self.occlusion_max_fraction < 1.0) {
            return Err(Error::Config("occlusion_max_fraction must lie in (0, 1)".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must lie in (0, 1)".into()));
        }
        let (lo, hi) = self.percentiles;
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::Config(format!("bad percentile pair ({lo}, {hi})")));
        }
        if !(self.ratio_clip > 0.0) {
            return Err(Error::Config("ratio_clip must be positive".into()));
        }
        Ok(())
    }
}

pub const RATIO_EPS: f32 = 1e-6;

fn check_grids(grids: &[&RasterChip]) -> Result<()> {
    let first = grids[0];
    for g in grids {
        if g.channels() != 1 {
            return Err(Error::Dimension(format!("polarization grid has {} channels", g.channels())));
        }
        if !g.same_extent(first) {
            return Err(Error::Dimension(format!(
                "polarization grids differ: {}x{} vs {}x{}",
                first.height(),
                first.width(),
                g.height(),
                g.width()
            )));
        }
    }
    Ok(())
}

/// Occluded where every band is masked or every band equals `nodata`.
fn joint_mask(grids: &[&RasterChip], nodata: Option<f32>) -> Option<Vec<bool>> {
    let n = grids[0].height() * grids[0].width();
    let any_mask = grids.iter().any(|g| g.nodata_mask().is_some());
    if nodata.is_none() && !any_mask {
        return None;
    }
    Some(
        (0..n)
            .map(|i| {
                let masked = any_mask && grids.iter().all(|g| g.nodata_mask().is_some_and(|m| m[i]));
                let valued = nodata.is_some_and(|v| grids.iter().all(|g| g.data()[i] == v));
                masked || valued
            })
            .collect(),
    )
}

fn stack_raw(planes: Vec<Vec<f32>>, h: usize, w: usize, mask: Option<Vec<bool>>) -> Result<RasterChip> {
    let c = planes.len();
    let chip = RasterChip::new(c, h, w, planes.concat(), ValueRange::Raw)?;
    match mask {
        Some(m) => chip.with_nodata_mask(m),
        None => Ok(chip),
    }
}

/// Raw 3-channel chip: VV, VH, min(|VV| / (|VH| + eps), ratio_clip).
pub fn compose_dual_pol(vv: &RasterChip, vh: &RasterChip, ratio_clip: f32, nodata: Option<f32>) -> Result<RasterChip> {
    check_grids(&[vv, vh])?;
    let ratio: Vec<f32> = vv
        .data()
        .iter()
        .zip(vh.data())
        .map(|(a, b)| {
            let r = a.abs() / (b.abs() + RATIO_EPS);
            if r.is_finite() {
                r.min(ratio_clip)
            } else {
                ratio_clip
            }
        })
        .collect();
    let mask = joint_mask(&[vv, vh], nodata);
    stack_raw(
        vec![vv.data().to_vec(), vh.data().to_vec(), ratio],
        vv.height(),
        vv.width(),
        mask,
    )
}

/// Raw 4-channel chip in HH, HV, VH, VV order.
pub fn compose_quad_pol(
    hh: &RasterChip,
    hv: &RasterChip,
    vh: &RasterChip,
    vv: &RasterChip,
    nodata: Option<f32>,
) -> Result<RasterChip> {
    let grids = [hh, hv, vh, vv];
    check_grids(&grids)?;
    let mask = joint_mask(&grids, nodata);
    stack_raw(
        grids.iter().map(|g| g.data().to_vec()).collect(),
        hh.height(),
        hh.width(),
        mask,
    )
}

/// Mean over pixels of HSV value `max(R, G, B)`.
pub fn v_mean(eo_rgb: &RasterChip) -> Result<f64> {
    if eo_rgb.channels() != 3 {
        return Err(Error::Modality(format!(
            "cloud filter needs 3-channel RGB, got {} channels",
            eo_rgb.channels()
        )));
    }
    if eo_rgb.value_range() != ValueRange::Unit {
        return Err(Error::Range("cloud filter expects unit-range RGB".into()));
    }
    let (r, g, b) = (eo_rgb.plane(0), eo_rgb.plane(1), eo_rgb.plane(2));
    let sum: f64 = (0..r.len()).map(|i| r[i].max(g[i]).max(b[i]) as f64).sum();
    Ok(sum / r.len() as f64)
}

/// Keep iff the mean V exceeds `threshold`.
pub fn cloud_filter(eo_rgb: &RasterChip, threshold: f64) -> Result<bool> {
    Ok(v_mean(eo_rgb)? > threshold)
}

/// Top-left corners of the full chips at `stride`, row-major.
pub fn chip_windows(height: usize, width: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if height < size || width < size {
        return Vec::new();
    }
    let ny = (height - size) / stride + 1;
    let nx = (width - size) / stride + 1;
    (0..ny)
        .flat_map(|r| (0..nx).map(move |c| (r * stride, c * stride)))
        .collect()
}

/// Grid chips of `scene`, dropping those whose nodata fraction exceeds the limit.
pub fn chip_scene(scene: &RasterChip, cfg: &IngestConfig) -> Result<Vec<RasterChip>> {
    let wins = chip_windows(scene.height(), scene.width(), cfg.chip_size, cfg.chip_stride);
    if wins.is_empty() {
        log::warn!(
            "scene {}x{} is smaller than one {} px chip",
            scene.height(),
            scene.width(),
            cfg.chip_size
        );
    }
    let mut out = Vec::with_capacity(wins.len());
    for (y, x) in wins {
        let chip = scene.window(y, x, cfg.chip_size, cfg.chip_size)?;
        if chip.nodata_fraction() <= cfg.occlusion_max_fraction {
            out.push(chip);
        }
    }
    Ok(out)
}

/// One co-registered input scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    pub source_id: String,
    /// Composed raw SAR (see [`compose_dual_pol`] / [`compose_quad_pol`]).
    pub sar: RasterChip,
    pub sar_modality: ModalityKind,
    /// Unit-range RGB.
    pub eo: RasterChip,
    /// Unit-range single band.
    pub ir: Option<RasterChip>,
    pub lat: f64,
    pub lon: f64,
    pub ground_resolution: f64,
}

const METERS_PER_DEGREE: f64 = 111_320.0;

/// Center of a chip window, offset from the scene center.
fn chip_center(scene: &SceneInput, y0: usize, x0: usize, size: usize) -> (f64, f64) {
    let dy = (y0 as f64 + size as f64 / 2.0) - scene.sar.height() as f64 / 2.0;
    let dx = (x0 as f64 + size as f64 / 2.0) - scene.sar.width() as f64 / 2.0;
    let lat = (scene.lat - dy * scene.ground_resolution / METERS_PER_DEGREE).clamp(-90.0, 90.0);
    let cos = scene.lat.to_radians().cos().max(1e-6);
    let lon = scene.lon + dx * scene.ground_resolution / (METERS_PER_DEGREE * cos);
    let lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
    (lat, lon)
}

struct ChipSet {
    id: String,
    sar: RasterChip,
    eo: RasterChip,
    ir: Option<RasterChip>,
    lat: f64,
    lon: f64,
}

/// Why a scene contributed no chips.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Cloud { v_mean: f64 },
    NoChips,
}

fn process_scene(scene: &SceneInput, cfg: &IngestConfig) -> Result<std::result::Result<Vec<ChipSet>, Rejection>> {
    for other in std::iter::once(&scene.eo).chain(scene.ir.as_ref()) {
        if !other.same_extent(&scene.sar) {
            return Err(Error::Dimension(format!("scene {} layers differ in extent", scene.source_id)));
        }
    }
    let v = v_mean(&scene.eo)?;
    if v <= cfg.v_mean_threshold {
        return Ok(Err(Rejection::Cloud { v_mean: v }));
    }
    let size = cfg.chip_size;
    let mut out = Vec::new();
    for (y, x) in chip_windows(scene.sar.height(), scene.sar.width(), size, cfg.chip_stride) {
        let sar = scene.sar.window(y, x, size, size)?;
        if sar.nodata_fraction() > cfg.occlusion_max_fraction {
            continue;
        }
        let (lat, lon) = chip_center(scene, y, x, size);
        let geo = GeoInfo::new(lat, lon, scene.ground_resolution)?;
        out.push(ChipSet {
            id: format!("{}_r{}c{}", scene.source_id, y / cfg.chip_stride, x / cfg.chip_stride),
            sar: sar.with_geo(geo),
            eo: scene.eo.window(y, x, size, size)?.with_geo(geo),
            ir: scene
                .ir
                .as_ref()
                .map(|ir| ir.window(y, x, size, size).map(|c| c.with_geo(geo)))
                .transpose()?,
            lat,
            lon,
        });
    }
    if out.is_empty() {
        return Ok(Err(Rejection::NoChips));
    }
    Ok(Ok(out))
}

/// Nearest-rank percentile of `values` (sorted in place).
pub fn percentile(values: &mut [f32], p: f64) -> f32 {
    values.sort_by(f32::total_cmp);
    let idx = ((p / 100.0) * (values.len() - 1) as f64).round() as usize;
    values[idx.min(values.len() - 1)]
}

/// Per-channel percentiles over the valid pixels of `chips`.
pub fn fit_normalization<'a>(chips: impl Iterator<Item = &'a RasterChip>, channels: usize, pct: (f64, f64)) -> Result<ChannelNormalization> {
    let mut per_channel: Vec<Vec<f32>> = vec![Vec::new(); channels];
    for chip in chips {
        let mask = chip.nodata_mask();
        for (c, values) in per_channel.iter_mut().enumerate() {
            values.extend(
                chip.plane(c)
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !mask.is_some_and(|m| m[*i]))
                    .map(|(_, v)| *v),
            );
        }
    }
    let mut norm = ChannelNormalization {
        lo: Vec::with_capacity(channels),
        hi: Vec::with_capacity(channels),
    };
    for mut values in per_channel {
        if values.is_empty() {
            return Err(Error::EmptyCorpus("no valid SAR pixels to fit normalization".into()));
        }
        norm.lo.push(percentile(&mut values, pct.0));
        norm.hi.push(percentile(&mut values, pct.1));
    }
    Ok(norm)
}

pub fn normalize_sar(chip: &RasterChip, norm: &ChannelNormalization) -> Result<RasterChip> {
    if norm.lo.len() != chip.channels() {
        return Err(Error::Dimension(format!(
            "normalization has {} channels, chip {}",
            norm.lo.len(),
            chip.channels()
        )));
    }
    chip.map_values(ValueRange::UnitSigned, |c, v| norm.apply(v, c))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestSummary {
    pub scenes_in: usize,
    pub cloud_rejected: Vec<String>,
    pub chipless: Vec<String>,
    pub chips: usize,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Filters, chips, splits by scene, normalizes and writes chips plus
/// `manifest.jsonl` under `out_dir`. Scenes are processed in `source_id` order.
pub fn build_manifest(
    scenes: &[SceneInput],
    cfg: &IngestConfig,
    dataset: &str,
    out_dir: &Path,
) -> Result<(Manifest, IngestSummary)> {
    cfg.validate()?;
    let sar_modality = scenes
        .first()
        .map(|s| s.sar_modality)
        .ok_or_else(|| Error::EmptyCorpus("no input scenes".into()))?;
    if scenes.iter().any(|s| s.sar_modality != sar_modality) {
        return Err(Error::Modality("scenes mix dual- and quad-pol SAR".into()));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.sort_by(|&a, &b| scenes[a].source_id.cmp(&scenes[b].source_id));
    let results = exec::try_map_indexed(order.len(), |i| process_scene(&scenes[order[i]], cfg))?;

    let mut summary = IngestSummary {
        scenes_in: scenes.len(),
        ..IngestSummary::default()
    };
    let mut kept: BTreeMap<String, Vec<ChipSet>> = BTreeMap::new();
    for (i, r) in order.iter().zip(results) {
        let id = scenes[*i].source_id.clone();
        match r {
            Ok(chips) => {
                summary.chips += chips.len();
                if kept.insert(id.clone(), chips).is_some() {
                    return Err(Error::Validation(format!("duplicate source_id {id}")));
                }
            }
            Err(Rejection::Cloud { v_mean }) => {
                log::info!("scene {id} rejected by cloud filter (V mean {v_mean:.3})");
                summary.cloud_rejected.push(id);
            }
            Err(Rejection::NoChips) => summary.chipless.push(id),
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyCorpus("no chips survived filtering".into()));
    }
    let splits = split_by_source(kept.keys().map(String::as_str), cfg.split_ratio, cfg.seed);
    let train_chips = kept
        .iter()
        .filter(|(id, _)| splits[*id] == Split::Train)
        .flat_map(|(_, c)| c.iter().map(|s| &s.sar));
    let norm = fit_normalization(train_chips, sar_modality.channel_count(), cfg.percentiles)?;

    let mut manifest = Manifest::new(dataset, cfg.seed, cfg.split_ratio, sar_modality);
    manifest.header.sar_normalization = Some(norm.clone());
    let flat: Vec<(&String, &ChipSet)> = kept.iter().flat_map(|(id, cs)| cs.iter().map(move |c| (id, c))).collect();
    let records = exec::try_map_indexed(flat.len(), |i| -> Result<ManifestRecord> {
        let (source, set) = flat[i];
        let sar = normalize_sar(&set.sar, &norm)?;
        let mut layers = vec![(sar_modality, sar), (ModalityKind::EoRgb, set.eo.clone())];
        if let Some(ir) = &set.ir {
            layers.push((ModalityKind::IrSingle, ir.clone()));
        }
        let mut paths = Vec::new();
        for (kind, chip) in layers {
            let rel = format!("chips/{}_{}.chip", set.id, kind.short_name());
            write_chip(
                &out_dir.join(&rel),
                &chip,
                &ChipSidecar {
                    modality: kind,
                    value_range: chip.value_range(),
                    geo: chip.geo,
                    source_id: source.clone(),
                },
            )?;
            paths.push(ModalityPath { modality: kind, path: rel });
        }
        Ok(ManifestRecord {
            source_id: source.clone(),
            split: splits[source],
            paths,
            lat: set.lat,
            lon: set.lon,
            id: set.id.clone(),
        })
    })?;
    manifest.samples = records;
    manifest.validate()?;
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok((manifest, summary))
}

/// Reads a GeoTIFF-style raster (any sample type, chunky layout) or a
/// `.chip` file as a raw channel-major chip.
pub fn read_raster(path: &Path) -> Result<RasterChip> {
    if path.extension().is_some_and(|e| e == "chip") {
        let chip = chipio::read_chip(path)?;
        return chip.map_values(ValueRange::Raw, |_, v| v);
    }
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let tiff_err = |e: tiff::TiffError| Error::format("tiff", format!("{}: {e}", path.display()));
    let mut dec = Decoder::new(BufReader::new(file)).map_err(tiff_err)?;
    let (w, h) = dec.dimensions().map_err(tiff_err)?;
    let samples: Vec<f32> = match dec.read_image().map_err(tiff_err)? {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        _ => return Err(Error::format("tiff", format!("{}: unsupported sample type", path.display()))),
    };
    let (h, w) = (h as usize, w as usize);
    if samples.is_empty() || samples.len() % (h * w) != 0 {
        return Err(Error::format("tiff", format!("{}: sample count does not match size", path.display())));
    }
    let c = samples.len() / (h * w);
    let mut data = vec![0.0f32; samples.len()];
    for (i, px) in samples.chunks_exact(c).enumerate() {
        for (k, v) in px.iter().enumerate() {
            data[k * h * w + i] = *v;
        }
    }
    RasterChip::new(c, h, w, data, ValueRange::Raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SarKind {
    DualPol,
    QuadPol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub lat: f64,
    pub lon: f64,
    pub ground_resolution: f64,
    pub sar: SarKind,
    #[serde(default)]
    pub nodata: Option<f32>,
    #[serde(default = "one")]
    pub eo_scale: f32,
}

fn one() -> f32 {
    1.0
}

fn find_band(dir: &Path, stem: &str) -> Option<std::path::PathBuf> {
    ["tif", "tiff", "chip"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.exists())
}

fn band(dir: &Path, stem: &str) -> Result<RasterChip> {
    let p = find_band(dir, stem).ok_or_else(|| Error::MissingTile(format!("{}/{stem}.tif", dir.display())))?;
    read_raster(&p)
}

fn to_unit(chip: RasterChip, scale: f32) -> Result<RasterChip> {
    chip.map_values(ValueRange::Unit, |_, v| (v / scale).clamp(0.0, 1.0))
}

/// Loads one scene directory (see the module docs for the layout).
pub fn read_scene_dir(dir: &Path, ratio_clip: f32) -> Result<SceneInput> {
    let meta_path = dir.join("scene.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneMeta = serde_json::from_str(&text).map_err(|e| Error::format("scene.json", e.to_string()))?;
    crate::raster::validate_latlon(meta.lat, meta.lon)?;
    let (sar, sar_modality) = match meta.sar {
        SarKind::DualPol => (
            compose_dual_pol(&band(dir, "vv")?, &band(dir, "vh")?, ratio_clip, meta.nodata)?,
            ModalityKind::SarDualPol,
        ),
        SarKind::QuadPol => (
            compose_quad_pol(
                &band(dir, "hh")?,
                &band(dir, "hv")?,
                &band(dir, "vh")?,
                &band(dir, "vv")?,
                meta.nodata,
            )?,
            ModalityKind::SarQuadPol,
        ),
    };
    let eo = to_unit(band(dir, "eo")?, meta.eo_scale)?;
    if eo.channels() != 3 {
        return Err(Error::Modality(format!("{}: eo must have 3 bands", dir.display())));
    }
    let ir = match find_band(dir, "ir") {
        Some(p) => Some(to_unit(read_raster(&p)?, meta.eo_scale)?),
        None => None,
    };
    let source_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Validation(format!("{} has no directory name", dir.display())))?;
    Ok(SceneInput {
        source_id,
        sar,
        sar_modality,
        eo,
        ir,
        lat: meta.lat,
        lon: meta.lon,
        ground_resolution: meta.ground_resolution,
    })
}

/// Every subdirectory of `input` holding a `scene.json`, sorted by name.
pub fn read_input_dir(input: &Path, ratio_clip: f32) -> Result<Vec<SceneInput>> {
    let mut dirs: Vec<_> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scene.json").exists())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_scene_dir(d, ratio_clip)).collect()
}
