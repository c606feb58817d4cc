//! Full-reference image metrics (PSNR, SSIM, LPIPS) and run evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sareo_nn::exec;
use sareo_nn::ops::{mix_seed, relu};
use sareo_nn::{Conv2d, PadMode, Tensor};

use crate::bundle::ModelBundle;
use crate::chipio::{write_atomic, write_chip, ChipSidecar};
use crate::error::{Error, Result};
use crate::imageio::{panel_grid, write_png};
use crate::manifest::{root_of, Manifest};
use crate::raster::{Conditioning, ModalityKind, RasterChip, Sample, Split, ValueRange};
use crate::train::load_split;

pub const PSNR_CAP_DB: f64 = 100.0;

fn same_shape(a: &RasterChip, b: &RasterChip) -> Result<()> {
    if a.channels() != b.channels() || !a.same_extent(b) {
        return Err(Error::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)`, capped at 100 dB.
pub fn psnr(a: &RasterChip, b: &RasterChip, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    if a.value_range() != b.value_range() {
        return Err(Error::Range("psnr operands differ in value range".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Peak for a declared range (its width).
pub fn peak_of(range: ValueRange) -> Result<f64> {
    range
        .width()
        .map(f64::from)
        .ok_or_else(|| Error::Range("raw chips have no peak".into()))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Windowed SSIM (11x11 Gaussian, sigma 1.5) averaged over windows and
/// channels, clipped to [0, 1]. Signed-range inputs are mapped to [0, 1].
pub fn ssim(a: &RasterChip, b: &RasterChip) -> Result<f64> {
    same_shape(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.height(),
            a.width()
        )));
    }
    let (a, b) = (a.to_unit()?, b.to_unit()?);
    let (h, w) = (a.height(), a.width());
    let g = gaussian_window();
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa: Vec<f64> = a.plane(c).iter().map(|v| *v as f64).collect();
        let pb: Vec<f64> = b.plane(c).iter().map(|v| *v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let aa = filter_valid(&prod(&pa, &pa), h, w, &g);
        let bb = filter_valid(&prod(&pb, &pb), h, w, &g);
        let ab = filter_valid(&prod(&pa, &pb), h, w, &g);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok((total / a.channels() as f64).clamp(0.0, 1.0))
}

/// Feature network for LPIPS.
pub trait FeatureExtractor: Sync {
    /// Per-layer activations for an image in [-1, 1] (`[1, C, H, W]`).
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>>;
    /// Non-negative per-channel weights for each layer.
    fn layer_weights(&self) -> &[Vec<f32>];
}

/// Unit-normalize each feature vector across channels, square the
/// difference, weight channels, average spatially and sum over layers.
pub fn lpips(a: &RasterChip, b: &RasterChip, backbone: &dyn FeatureExtractor) -> Result<f64> {
    same_shape(a, b)?;
    let fa = backbone.features(&a.to_unit_signed()?.to_tensor())?;
    let fb = backbone.features(&b.to_unit_signed()?.to_tensor())?;
    let weights = backbone.layer_weights();
    if fa.len() != weights.len() || fb.len() != weights.len() {
        return Err(Error::Config("backbone layer count differs from its weights".into()));
    }
    let mut total = 0.0;
    for ((ta, tb), wl) in fa.iter().zip(&fb).zip(weights) {
        let [_, c, h, w] = ta.shape();
        if wl.len() != c {
            return Err(Error::Config(format!("{} lin weights for {c} channels", wl.len())));
        }
        let hw = h * w;
        let (da, db) = (ta.data(), tb.data());
        let mut layer = 0.0;
        for p in 0..hw {
            let norm = |d: &[f32]| (0..c).map(|k| (d[k * hw + p] as f64).powi(2)).sum::<f64>().sqrt() + 1e-10;
            let (na, nb) = (norm(da), norm(db));
            for k in 0..c {
                let diff = da[k * hw + p] as f64 / na - db[k * hw + p] as f64 / nb;
                layer += wl[k] as f64 * diff * diff;
            }
        }
        total += layer / hw as f64;
    }
    Ok(total)
}

/// Small fixed-weight conv stack used when no pretrained backbone is available.
#[derive(Debug, Clone, PartialEq)]
pub struct TestBackbone {
    convs: Vec<Conv2d>,
    lin: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BackboneLayer {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
    lin: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BackboneFile {
    format: String,
    layers: Vec<BackboneLayer>,
}

const BACKBONE_FORMAT: &str = "sareo-lpips-backbone";

/// The committed test backbone.
pub const TEST_BACKBONE_JSON: &str = include_str!("../assets/lpips_test_backbone.json");
/// Name accepted in place of a weights path.
pub const TEST_BACKBONE: &str = "test-backbone";
/// Seed of the committed test backbone.
pub const LPIPS_TEST_SEED: u64 = 20_240_917;

impl TestBackbone {
    /// Three 3x3 convs (3→8 stride 1, 8→16 stride 2, 16→32 stride 2) with
    /// seeded weights and uniform lin weights `1 / (4 L)` so values stay in [0, 1].
    pub fn generate(seed: u64) -> Self {
        let plan = [(3, 8, 1), (8, 16, 2), (16, 32, 2)];
        let n_layers = plan.len();
        let mut convs = Vec::new();
        let mut lin = Vec::new();
        for (i, &(cin, cout, stride)) in plan.iter().enumerate() {
            let mut conv = Conv2d::new(cin, cout, 3, stride, 1, PadMode::Zero);
            let std = (2.0 / (cin * 9) as f32).sqrt();
            sareo_nn::init::normal(&mut conv.weight, std, mix_seed(seed, i as u64));
            sareo_nn::init::normal(&mut conv.bias, 0.1, mix_seed(seed, 100 + i as u64));
            convs.push(conv);
            lin.push(vec![1.0 / (4 * n_layers) as f32; cout]);
        }
        TestBackbone { convs, lin }
    }

    pub fn to_json(&self) -> String {
        let file = BackboneFile {
            format: BACKBONE_FORMAT.into(),
            layers: self
                .convs
                .iter()
                .zip(&self.lin)
                .map(|(c, l)| BackboneLayer {
                    in_channels: c.in_ch,
                    out_channels: c.out_ch,
                    stride: c.stride,
                    weight: c.weight.clone(),
                    bias: c.bias.clone(),
                    lin: l.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("backbone serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BackboneFile =
            serde_json::from_str(text).map_err(|e| Error::format("backbone weights", e.to_string()))?;
        if file.format != BACKBONE_FORMAT {
            return Err(Error::format("backbone weights", format!("unknown format {}", file.format)));
        }
        let mut convs = Vec::new();
        let mut lin = Vec::new();
        for l in file.layers {
            let mut conv = Conv2d::new(l.in_channels, l.out_channels, 3, l.stride, 1, PadMode::Zero);
            if l.weight.len() != conv.weight.len() || l.bias.len() != conv.bias.len() || l.lin.len() != l.out_channels {
                return Err(Error::format("backbone weights", "tensor sizes do not match layer shapes"));
            }
            if l.lin.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::format("backbone weights", "lin weights must be non-negative"));
            }
            conv.weight = l.weight;
            conv.bias = l.bias;
            convs.push(conv);
            lin.push(l.lin);
        }
        Ok(TestBackbone { convs, lin })
    }

    /// Loads `test-backbone` (the committed weights) or a weights file.
    pub fn load(spec: &str) -> Result<Self> {
        if spec == TEST_BACKBONE {
            return TestBackbone::from_json(TEST_BACKBONE_JSON);
        }
        let path = PathBuf::from(spec);
        if !path.exists() {
            return Err(Error::Config(format!("LPIPS weights file not found: {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        TestBackbone::from_json(&text)
    }
}

impl FeatureExtractor for TestBackbone {
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut x = image.clone();
        let mut out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            x = relu(&conv.forward(&x)?);
            out.push(x.clone());
        }
        Ok(out)
    }

    fn layer_weights(&self) -> &[Vec<f32>] {
        &self.lin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    /// Mean absolute error in [-1, 1] units.
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_label: String,
    pub per_sample: Vec<SampleMetrics>,
    pub aggregate: Aggregate,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl MetricReport {
    /// Sorts samples by id and computes the aggregate means.
    pub fn new(run_label: impl Into<String>, mut per_sample: Vec<SampleMetrics>) -> Self {
        per_sample.sort_by(|a, b| a.id.cmp(&b.id));
        let aggregate = Aggregate {
            psnr: mean(per_sample.iter().map(|s| s.psnr)),
            ssim: mean(per_sample.iter().map(|s| s.ssim)),
            lpips: mean(per_sample.iter().map(|s| s.lpips)),
            l1: mean(per_sample.iter().map(|s| s.l1)),
        };
        MetricReport {
            run_label: run_label.into(),
            per_sample,
            aggregate,
        }
    }

    pub fn median_l1(&self) -> f64 {
        median(self.per_sample.iter().map(|s| s.l1).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("metric report", e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MetricReport::parse(&text)
    }
}

pub fn l1(a: &RasterChip, b: &RasterChip) -> Result<f64> {
    same_shape(a, b)?;
    let (a, b) = (a.to_unit_signed()?, b.to_unit_signed()?);
    Ok(mean(a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).abs())))
}

/// All metrics for one generated/reference pair.
pub fn score(id: &str, generated: &RasterChip, reference: &RasterChip, backbone: &dyn FeatureExtractor) -> Result<SampleMetrics> {
    let (g, r) = (generated.to_unit()?, reference.to_unit()?);
    Ok(SampleMetrics {
        id: id.to_string(),
        psnr: psnr(&g, &r, 1.0)?,
        ssim: ssim(&g, &r)?,
        lpips: lpips(&g, &r, backbone)?,
        l1: l1(generated, reference)?,
    })
}

/// Maps a conditioned sample to a generated EO chip.
pub trait Translator: Sync {
    /// Fails when the model cannot serve `conditioning`.
    fn check(&self, _conditioning: &Conditioning) -> Result<()> {
        Ok(())
    }

    fn translate(&self, sample: &Sample) -> Result<RasterChip>;
}

impl Translator for ModelBundle {
    fn check(&self, conditioning: &Conditioning) -> Result<()> {
        self.check_conditioning(conditioning)
    }

    fn translate(&self, sample: &Sample) -> Result<RasterChip> {
        let conds: Vec<RasterChip> = sample.conditions.iter().map(|(_, c)| c.clone()).collect();
        self.translate_chips(&sample.sar, &conds)
    }
}

pub const REPORT_FILE: &str = "report.json";

/// Generates EO for every test sample, scores it and writes
/// `report.json`, `generated/*.chip` and `figures/*.png` under `out_dir`.
pub fn evaluate_run(
    model: &dyn Translator,
    manifest: &Manifest,
    manifest_path: &Path,
    conditioning: &Conditioning,
    backbone: &dyn FeatureExtractor,
    run_label: &str,
    out_dir: Option<&Path>,
) -> Result<MetricReport> {
    model.check(conditioning)?;
    let samples = load_split(manifest, &root_of(manifest_path), conditioning, Split::Test)?;
    if samples.is_empty() {
        return Err(Error::EmptyCorpus("manifest has no test samples".into()));
    }
    let per_sample = exec::try_map_indexed(samples.len(), |i| -> Result<SampleMetrics> {
        let s = &samples[i];
        let generated = model.translate(s)?;
        if let Some(dir) = out_dir {
            write_chip(
                &dir.join("generated").join(format!("{}.chip", s.id)),
                &generated,
                &ChipSidecar {
                    modality: ModalityKind::EoRgb,
                    value_range: generated.value_range(),
                    geo: generated.geo,
                    source_id: s.source_id.clone(),
                },
            )?;
            let grid = panel_grid(&[vec![&s.sar, &s.target_eo, &generated]])?;
            write_png(&dir.join("figures").join(format!("{}.png", s.id)), &grid)?;
        }
        score(&s.id, &generated, &s.target_eo, backbone)
    })?;
    let report = MetricReport::new(run_label, per_sample);
    if let Some(dir) = out_dir {
        report.write(&dir.join(REPORT_FILE))?;
    }
    Ok(report)
}

/// Comparison table with one row per run.
pub fn report_markdown(reports: &[MetricReport]) -> String {
    let mut s = String::from("| Run | PSNR (dB) ↑ | SSIM ↑ | LPIPS ↓ | L1 ↓ |\n|---|---|---|---|---|\n");
    for r in reports {
        let a = &r.aggregate;
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.4} | {:.4} | {:.4} |",
            r.run_label, a.psnr, a.ssim, a.lpips, a.l1
        );
    }
    s
}

pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("run,psnr,ssim,lpips,l1\n");
    for r in reports {
        let a = &r.aggregate;
        let _ = writeln!(s, "{},{},{},{},{}", r.run_label, a.psnr, a.ssim, a.lpips, a.l1);
    }
    s
}
