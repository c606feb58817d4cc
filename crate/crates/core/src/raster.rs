//! Raster chips, modalities and samples shared across the pipeline.
//!
//! Every model-facing chip uses the signed unit range [-1, 1]; ingest and
//! the synthetic generator convert into it, evaluation converts out of it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use sareo_nn::Tensor;

use crate::error::{Error, Result};

/// Declared range of a chip's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// [-1, 1]
    UnitSigned,
    /// [0, 1]
    Unit,
    /// Unconstrained (raw backscatter, reflectance counts, ...).
    Raw,
}

impl ValueRange {
    pub fn bounds(self) -> Option<(f32, f32)> {
        match self {
            ValueRange::UnitSigned => Some((-1.0, 1.0)),
            ValueRange::Unit => Some((0.0, 1.0)),
            ValueRange::Raw => None,
        }
    }

    /// Width of the range, used as the PSNR peak.
    pub fn width(self) -> Option<f32> {
        self.bounds().map(|(lo, hi)| hi - lo)
    }

    pub fn code(self) -> u8 {
        match self {
            ValueRange::UnitSigned => 0,
            ValueRange::Unit => 1,
            ValueRange::Raw => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ValueRange::UnitSigned),
            1 => Some(ValueRange::Unit),
            2 => Some(ValueRange::Raw),
            _ => None,
        }
    }
}

/// Geographic placement of a chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoInfo {
    pub center_lat: f64,
    pub center_lon: f64,
    /// Meters per pixel.
    pub ground_resolution: f64,
}

impl GeoInfo {
    pub fn new(center_lat: f64, center_lon: f64, ground_resolution: f64) -> Result<Self> {
        validate_latlon(center_lat, center_lon)?;
        if !(ground_resolution.is_finite() && ground_resolution > 0.0) {
            return Err(Error::Validation(format!("ground resolution {ground_resolution} must be positive")));
        }
        Ok(GeoInfo {
            center_lat,
            center_lon,
            ground_resolution,
        })
    }
}

pub fn validate_latlon(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Validation(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Validation(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

/// A channel-major `C x H x W` image tile.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterChip {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    value_range: ValueRange,
    pub geo: Option<GeoInfo>,
    nodata_mask: Option<Vec<bool>>,
}

impl RasterChip {
    /// Builds a chip, checking the data length and that every value lies in `value_range`.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>, value_range: ValueRange) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!("empty chip {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{height}x{width} chip",
                data.len()
            )));
        }
        if let Some((lo, hi)) = value_range.bounds() {
            if let Some(bad) = data.iter().find(|v| !(lo..=hi).contains(*v)) {
                return Err(Error::Range(format!("value {bad} outside {value_range:?} [{lo}, {hi}]")));
            }
        }
        Ok(RasterChip {
            channels,
            height,
            width,
            data,
            value_range,
            geo: None,
            nodata_mask: None,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32, value_range: ValueRange) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width], value_range)
    }

    /// Builds a chip from a closure over (channel, row, col).
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        value_range: ValueRange,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data, value_range)
    }

    pub fn with_geo(mut self, geo: GeoInfo) -> Self {
        self.geo = Some(geo);
        self
    }

    pub fn with_nodata_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::Dimension(format!(
                "nodata mask has {} cells for a {}x{} chip",
                mask.len(),
                self.height,
                self.width
            )));
        }
        self.nodata_mask = Some(mask);
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn value_range(&self) -> ValueRange {
        self.value_range
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn nodata_mask(&self) -> Option<&[bool]> {
        self.nodata_mask.as_deref()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Fraction of pixels flagged in the nodata mask (0 without a mask).
    pub fn nodata_fraction(&self) -> f64 {
        match &self.nodata_mask {
            None => 0.0,
            Some(m) => m.iter().filter(|v| **v).count() as f64 / m.len() as f64,
        }
    }

    pub fn same_extent(&self, other: &RasterChip) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Copies out a `size x size` window with top-left corner `(y0, x0)`, mask included.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<RasterChip> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Dimension(format!(
                "window {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in y0..y0 + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        let mask = self.nodata_mask.as_ref().map(|m| {
            let mut out = Vec::with_capacity(h * w);
            for y in y0..y0 + h {
                out.extend_from_slice(&m[y * self.width + x0..y * self.width + x0 + w]);
            }
            out
        });
        Ok(RasterChip {
            channels: self.channels,
            height: h,
            width: w,
            data,
            value_range: self.value_range,
            geo: self.geo,
            nodata_mask: mask,
        })
    }

    /// Reinterprets the values under a new declared range after a pointwise map.
    pub fn map_values(&self, value_range: ValueRange, f: impl Fn(usize, f32) -> f32) -> Result<RasterChip> {
        let n = self.height * self.width;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| f(i / n, *v))
            .collect();
        let mut out = RasterChip::new(self.channels, self.height, self.width, data, value_range)?;
        out.geo = self.geo;
        out.nodata_mask = self.nodata_mask.clone();
        Ok(out)
    }

    /// [-1, 1] → [0, 1].
    pub fn to_unit(&self) -> Result<RasterChip> {
        match self.value_range {
            ValueRange::Unit => Ok(self.clone()),
            ValueRange::UnitSigned => self.map_values(ValueRange::Unit, |_, v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)),
            ValueRange::Raw => Err(Error::Range("raw chip has no unit mapping".into())),
        }
    }

    /// [0, 1] → [-1, 1].
    pub fn to_unit_signed(&self) -> Result<RasterChip> {
        match self.value_range {
            ValueRange::UnitSigned => Ok(self.clone()),
            ValueRange::Unit => self.map_values(ValueRange::UnitSigned, |_, v| (v * 2.0 - 1.0).clamp(-1.0, 1.0)),
            ValueRange::Raw => Err(Error::Range("raw chip must be normalized first".into())),
        }
    }

    /// Model input check: square, `size x size`, signed unit range.
    pub fn ensure_model_input(&self, size: usize) -> Result<()> {
        if self.height != size || self.width != size {
            return Err(Error::Dimension(format!(
                "model expects {size}x{size} chips, got {}x{}",
                self.height, self.width
            )));
        }
        if self.value_range != ValueRange::UnitSigned {
            return Err(Error::Range(format!("model expects unit_signed chips, got {:?}", self.value_range)));
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, self.channels, self.height, self.width], self.data.clone())
            .expect("chip length matches its shape")
    }

    /// Wraps one sample of a model output as a chip.
    pub fn from_tensor_sample(t: &Tensor, n: usize, value_range: ValueRange) -> Result<RasterChip> {
        RasterChip::new(t.channels(), t.height(), t.width(), t.sample(n).to_vec(), value_range)
    }
}

/// Sensor or auxiliary layer kinds, each with a fixed channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    SarDualPol,
    SarQuadPol,
    EoRgb,
    MapRgb,
    IrSingle,
    LatlonPlanes,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 6] = [
        ModalityKind::SarDualPol,
        ModalityKind::SarQuadPol,
        ModalityKind::EoRgb,
        ModalityKind::MapRgb,
        ModalityKind::IrSingle,
        ModalityKind::LatlonPlanes,
    ];

    pub fn channel_count(self) -> usize {
        match self {
            ModalityKind::SarDualPol => 3,
            ModalityKind::SarQuadPol => 4,
            ModalityKind::EoRgb => 3,
            ModalityKind::MapRgb => 3,
            ModalityKind::IrSingle => 1,
            ModalityKind::LatlonPlanes => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::SarDualPol => "sar_dual_pol",
            ModalityKind::SarQuadPol => "sar_quad_pol",
            ModalityKind::EoRgb => "eo_rgb",
            ModalityKind::MapRgb => "map_rgb",
            ModalityKind::IrSingle => "ir_single",
            ModalityKind::LatlonPlanes => "latlon_planes",
        }
    }

    /// Short name used by the `--conditioning` flag.
    pub fn short_name(self) -> &'static str {
        match self {
            ModalityKind::SarDualPol | ModalityKind::SarQuadPol => "sar",
            ModalityKind::EoRgb => "eo",
            ModalityKind::MapRgb => "map",
            ModalityKind::IrSingle => "ir",
            ModalityKind::LatlonPlanes => "latlon",
        }
    }

    pub fn is_sar(self) -> bool {
        matches!(self, ModalityKind::SarDualPol | ModalityKind::SarQuadPol)
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Modality(format!("unknown modality `{s}`")))
    }
}

/// A modality together with its channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Modality {
    pub kind: ModalityKind,
    pub channel_count: usize,
}

impl From<ModalityKind> for Modality {
    fn from(kind: ModalityKind) -> Self {
        Modality {
            kind,
            channel_count: kind.channel_count(),
        }
    }
}

/// Extra conditioning beyond the SAR input, in channel order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Conditioning(pub Vec<ModalityKind>);

impl Conditioning {
    pub fn baseline() -> Self {
        Conditioning(vec![])
    }

    pub fn is_baseline(&self) -> bool {
        self.0.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.0.iter().map(|k| k.channel_count()).sum()
    }

    pub fn kinds(&self) -> &[ModalityKind] {
        &self.0
    }
}

impl fmt::Display for Conditioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sar")?;
        for k in &self.0 {
            write!(f, "+{}", k.short_name())?;
        }
        Ok(())
    }
}

impl FromStr for Conditioning {
    type Err = Error;

    /// Parses `sar`, `sar+map`, `sar+ir`, `sar+latlon`, `sar+map+ir`, ...
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+').map(str::trim);
        if parts.next() != Some("sar") {
            return Err(Error::Config(format!("conditioning `{s}` must start with `sar`")));
        }
        let mut kinds = Vec::new();
        for p in parts {
            let k = match p {
                "map" => ModalityKind::MapRgb,
                "ir" => ModalityKind::IrSingle,
                "latlon" => ModalityKind::LatlonPlanes,
                other => return Err(Error::Config(format!("unknown conditioning modality `{other}`"))),
            };
            if kinds.contains(&k) {
                return Err(Error::Config(format!("conditioning `{s}` repeats `{p}`")));
            }
            kinds.push(k);
        }
        Ok(Conditioning(kinds))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// An aligned (SAR, conditioning, EO target) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub sar: RasterChip,
    pub target_eo: RasterChip,
    pub conditions: Vec<(Modality, RasterChip)>,
    pub source_id: String,
    pub split: Split,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        sar: RasterChip,
        target_eo: RasterChip,
        conditions: Vec<(Modality, RasterChip)>,
        source_id: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        for chip in std::iter::once(&target_eo).chain(conditions.iter().map(|(_, c)| c)) {
            if !chip.same_extent(&sar) {
                return Err(Error::Dimension(format!(
                    "sample chips disagree on extent: {}x{} vs {}x{}",
                    sar.height(),
                    sar.width(),
                    chip.height(),
                    chip.width()
                )));
            }
        }
        for (m, c) in &conditions {
            if m.channel_count != c.channels() {
                return Err(Error::Modality(format!(
                    "{} expects {} channels, chip has {}",
                    m.kind,
                    m.channel_count,
                    c.channels()
                )));
            }
        }
        Ok(Sample {
            id: id.into(),
            sar,
            target_eo,
            conditions,
            source_id: source_id.into(),
            split,
        })
    }

    /// Generator input: SAR followed by the conditions in order.
    pub fn generator_input(&self) -> Result<RasterChip> {
        let conds: Vec<RasterChip> = self.conditions.iter().map(|(_, c)| c.clone()).collect();
        concat_conditioning(&self.sar, &conds)
    }

    pub fn conditioning(&self) -> Conditioning {
        Conditioning(self.conditions.iter().map(|(m, _)| m.kind).collect())
    }
}

/// Channel-wise concatenation: SAR channels first, then each condition in order.
pub fn concat_conditioning(sar: &RasterChip, conditions: &[RasterChip]) -> Result<RasterChip> {
    for c in conditions {
        if !c.same_extent(sar) {
            return Err(Error::Dimension(format!(
                "condition is {}x{}, SAR is {}x{}",
                c.height(),
                c.width(),
                sar.height(),
                sar.width()
            )));
        }
    }
    for c in std::iter::once(sar).chain(conditions) {
        if c.value_range() != ValueRange::UnitSigned {
            return Err(Error::Range(format!(
                "conditioning inputs must be unit_signed, found {:?}",
                c.value_range()
            )));
        }
    }
    let channels = sar.channels() + conditions.iter().map(|c| c.channels()).sum::<usize>();
    let mut data = Vec::with_capacity(channels * sar.height() * sar.width());
    data.extend_from_slice(sar.data());
    for c in conditions {
        data.extend_from_slice(c.data());
    }
    let mut out = RasterChip::new(channels, sar.height(), sar.width(), data, ValueRange::UnitSigned)?;
    out.geo = sar.geo;
    Ok(out)
}

/// Constant planes `lat / 90` and `lon / 180`.
pub fn latlon_to_planes(lat: f64, lon: f64, h: usize, w: usize) -> Result<RasterChip> {
    validate_latlon(lat, lon)?;
    let a = (lat / 90.0) as f32;
    let b = (lon / 180.0) as f32;
    let mut data = vec![a; h * w];
    data.extend(std::iter::repeat_n(b, h * w));
    RasterChip::new(2, h, w, data, ValueRange::UnitSigned)
}
