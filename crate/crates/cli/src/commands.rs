use std::fs;
use std::path::{Path, PathBuf};

use sareo_core::chipio::{read_chip, read_sidecar, write_atomic};
use sareo_core::config::RunConfig;
use sareo_core::eval::{self, MetricReport, TestBackbone};
use sareo_core::imageio::{chip_to_rgb, panel_grid, write_png};
use sareo_core::ingest::{build_manifest, read_input_dir};
use sareo_core::manifest::root_of;
use sareo_core::osm::{scrape_maps, HttpTileSource, LocalTileSource, TileCache, TileSource};
use sareo_core::synthgen::{generate_corpus, SceneSpec};
use sareo_core::train::fit;
use sareo_core::{latlon_to_planes, Conditioning, Error, Manifest, ModalityKind, ModelBundle, RasterChip, Result, Split};

use crate::{Cli, Command, EvaluateArgs, PrepareArgs, ReportArgs, ScrapeArgs, SynthArgs, TrainArgs, TranslateArgs};

type Overrides = Vec<(String, String)>;

fn push<T: ToString>(o: &mut Overrides, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.to_string()));
    }
}

/// Creates `dir`, clearing it first under `--force`; refuses a non-empty directory otherwise.
fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                return Err(Error::Config(format!(
                    "output directory {} already exists; pass --force to replace it",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<u8> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Prepare(a) => prepare(a, config, cli.force),
        Command::ScrapeMaps(a) => scrape(a, config),
        Command::Synthgen(a) => synthgen(a, config, cli.force),
        Command::Train(a) => train(a, config, cli.force),
        Command::Translate(a) => translate(a, config, cli.force),
        Command::Evaluate(a) => evaluate(a, config, cli.force),
        Command::Report(a) => report(a),
    }
}

fn prepare(a: PrepareArgs, config: Option<&Path>, force: bool) -> Result<u8> {
    let mut o = Overrides::new();
    push(&mut o, "ingest.seed", a.seed);
    push(&mut o, "ingest.chip_size", a.chip_size);
    push(&mut o, "ingest.chip_stride", a.stride.or(a.chip_size));
    push(&mut o, "ingest.v_threshold", a.v_threshold);
    push(&mut o, "ingest.occlusion_max", a.occlusion_max);
    push(&mut o, "ingest.split", a.split);
    let cfg = RunConfig::resolve(config, &o)?;
    let scenes = read_input_dir(&a.input, cfg.ingest.ratio_clip)?;
    fresh_dir(&a.output, force)?;
    cfg.write_resolved(&a.output)?;
    let (manifest, summary) = build_manifest(&scenes, &cfg.ingest, &a.dataset, &a.output)?;
    log::info!(
        "{} scenes in, {} cloud-rejected, {} without chips; {} train / {} test chips",
        summary.scenes_in,
        summary.cloud_rejected.len(),
        summary.chipless.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Test)
    );
    Ok(0)
}

fn scrape(a: ScrapeArgs, config: Option<&Path>) -> Result<u8> {
    let mut o = Overrides::new();
    push(&mut o, "osm.server", a.server.clone());
    push(&mut o, "osm.user_agent", a.user_agent.clone());
    if a.blank_fill {
        push(&mut o, "osm.blank_fill", Some(true));
    }
    let cfg = RunConfig::resolve(config, &o)?;
    let source: Box<dyn TileSource> = match &a.offline_tiles {
        Some(root) => Box::new(LocalTileSource { root: root.clone() }),
        None => Box::new(HttpTileSource::new(&cfg.osm.server, &cfg.osm.user_agent)?),
    };
    let cache = TileCache::new(&a.cache, source)?;
    let mut manifest = Manifest::read(&a.manifest)?;
    let summary = scrape_maps(
        &mut manifest,
        &a.manifest,
        &cache,
        cfg.osm.default_resolution,
        cfg.osm.blank_fill,
    )?;
    cfg.write_resolved(&root_of(&a.manifest))?;
    log::info!(
        "{} map chips written, {} tile requests",
        summary.written,
        cache.source_fetches()
    );
    if summary.failures.is_empty() {
        return Ok(0);
    }
    write_failures(&root_of(&a.manifest).join("scrape_failures.txt"), &summary.failures)?;
    Ok(3)
}

fn write_failures(path: &Path, failures: &[(String, String)]) -> Result<()> {
    let text: String = failures.iter().map(|(id, e)| format!("{id}\t{e}\n")).collect();
    log::error!("{} failures listed in {}", failures.len(), path.display());
    write_atomic(path, text.as_bytes())
}

fn synthgen(a: SynthArgs, config: Option<&Path>, force: bool) -> Result<u8> {
    let mut o = Overrides::new();
    push(&mut o, "synth.n", a.n);
    push(&mut o, "synth.size", a.size);
    push(&mut o, "synth.seed", a.seed);
    push(&mut o, "synth.misalign", a.misalign);
    push(&mut o, "synth.speckle", a.speckle);
    let cfg = RunConfig::resolve(config, &o)?;
    let s = &cfg.synth;
    let spec = SceneSpec {
        seed: s.seed,
        size: s.size,
        n_shapes: s.n_shapes,
        speckle_strength: s.speckle,
        misalignment: s.misalign,
    };
    fresh_dir(&a.out, force)?;
    cfg.write_resolved(&a.out)?;
    let m = generate_corpus(s.n, &spec, s.split, &a.out)?;
    log::info!("{} train / {} test scenes", m.count(Split::Train), m.count(Split::Test));
    Ok(0)
}

fn train(a: TrainArgs, config: Option<&Path>, force: bool) -> Result<u8> {
    let mut o = Overrides::new();
    push(&mut o, "train.preset", a.preset.clone());
    push(&mut o, "train.conditioning", a.conditioning.clone());
    push(&mut o, "train.seed", a.seed);
    push(&mut o, "train.epochs", a.epochs);
    push(&mut o, "train.batch", a.batch);
    push(&mut o, "train.lr", a.lr);
    push(&mut o, "train.max_steps", a.max_steps);
    let cfg = RunConfig::resolve(config, &o)?;
    cfg.train.validate()?;
    let manifest = Manifest::read(&a.manifest)?;
    if a.resume.is_none() {
        fresh_dir(&a.out, force)?;
    }
    cfg.write_resolved(&a.out)?;
    let bundle = fit(&manifest, &a.manifest, &cfg.train, &a.out, a.resume.as_deref())?;
    log::info!("trained {} epochs, {} steps", bundle.epoch, bundle.step);
    Ok(0)
}

/// `<dir>/<id>_sar.chip` → `<id>`.
fn sample_id(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Validation(format!("{} has no file name", path.display())))?;
    Ok(stem.strip_suffix("_sar").unwrap_or(&stem).to_string())
}

fn load_conditions(sar_path: &Path, id: &str, sar: &RasterChip, conditioning: &Conditioning) -> Result<Vec<RasterChip>> {
    let dir = sar_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    conditioning
        .kinds()
        .iter()
        .map(|&kind| match kind {
            ModalityKind::LatlonPlanes => {
                let geo = read_sidecar(sar_path)?
                    .and_then(|s| s.geo)
                    .ok_or_else(|| Error::Modality(format!("{id}: no coordinates for latlon conditioning")))?;
                latlon_to_planes(geo.center_lat, geo.center_lon, sar.height(), sar.width())
            }
            _ => {
                let p = dir.join(format!("{id}_{}.chip", kind.short_name()));
                if !p.exists() {
                    return Err(Error::Modality(format!("{id}: missing {} conditioning file {}", kind, p.display())));
                }
                read_chip(&p)
            }
        })
        .collect()
}

fn translate(a: TranslateArgs, config: Option<&Path>, force: bool) -> Result<u8> {
    let mut o = Overrides::new();
    push(&mut o, "train.conditioning", Some(a.conditioning.clone()));
    let cfg = RunConfig::resolve(config, &o)?;
    let conditioning = cfg.train.conditioning.clone();
    let bundle = ModelBundle::load(&a.bundle)?;
    bundle.check_conditioning(&conditioning)?;
    fresh_dir(&a.out, force)?;
    cfg.write_resolved(&a.out)?;
    if a.inputs.is_empty() {
        log::warn!("no input chips given; nothing to translate");
        return Ok(0);
    }
    let mut failures = Vec::new();
    for path in &a.inputs {
        let id = sample_id(path)?;
        let result = (|| -> Result<()> {
            if !path.exists() {
                return Err(Error::Validation(format!("input {} does not exist", path.display())));
            }
            let sar = read_chip(path)?;
            let conds = load_conditions(path, &id, &sar, &conditioning)?;
            let eo = bundle.translate_chips(&sar, &conds)?;
            write_png(&a.out.join(format!("{id}.png")), &chip_to_rgb(&eo)?)?;
            let mut row: Vec<&RasterChip> = vec![&sar];
            row.extend(conds.iter().filter(|c| c.channels() != 2));
            row.push(&eo);
            write_png(&a.out.join(format!("{id}_panel.png")), &panel_grid(&[row])?)
        })();
        match result {
            Ok(()) => {}
            Err(e @ (Error::Io { .. } | Error::Numeric(_))) => return Err(e),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    if failures.is_empty() {
        return Ok(0);
    }
    write_failures(&a.out.join("failures.txt"), &failures)?;
    Ok(3)
}

fn evaluate(a: EvaluateArgs, config: Option<&Path>, force: bool) -> Result<u8> {
    let mut o = Overrides::new();
    push(&mut o, "train.conditioning", Some(a.conditioning.clone()));
    push(&mut o, "eval.lpips_weights", a.lpips_weights.clone());
    let cfg = RunConfig::resolve(config, &o)?;
    let conditioning = cfg.train.conditioning.clone();
    let bundle = ModelBundle::load(&a.bundle)?;
    bundle.check_conditioning(&conditioning)?;
    let backbone = TestBackbone::load(&cfg.lpips_weights)?;
    let manifest = Manifest::read(&a.manifest)?;
    fresh_dir(&a.out, force)?;
    cfg.write_resolved(&a.out)?;
    let label = a.label.unwrap_or_else(|| conditioning.to_string());
    let report = eval::evaluate_run(
        &bundle,
        &manifest,
        &a.manifest,
        &conditioning,
        &backbone,
        &label,
        Some(&a.out),
    )?;
    let g = &report.aggregate;
    log::info!(
        "{label}: PSNR {:.2} dB, SSIM {:.4}, LPIPS {:.4}, L1 {:.4} over {} samples",
        g.psnr,
        g.ssim,
        g.lpips,
        g.l1,
        report.per_sample.len()
    );
    Ok(0)
}

const GRID_ROWS: usize = 8;

fn report(a: ReportArgs) -> Result<u8> {
    let reports = a
        .runs
        .iter()
        .map(|d| MetricReport::read(&d.join(eval::REPORT_FILE)))
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&a.out, eval::report_markdown(&reports).as_bytes())?;
    write_atomic(&a.out.with_extension("csv"), eval::report_csv(&reports).as_bytes())?;
    if let Some(mp) = &a.manifest {
        let manifest = Manifest::read(mp)?;
        let root = root_of(mp);
        let mut rows = Vec::new();
        for rec in manifest.split(Split::Test).take(GRID_ROWS) {
            let sar = read_chip(&root.join(rec.path_for(manifest.header.sar_modality).unwrap_or_default()))?;
            let eo = read_chip(&root.join(rec.path_for(ModalityKind::EoRgb).unwrap_or_default()))?;
            let mut row = vec![sar, eo];
            for run in &a.runs {
                row.push(read_chip(&run.join("generated").join(format!("{}.chip", rec.id)))?);
            }
            rows.push(row);
        }
        let refs: Vec<Vec<&RasterChip>> = rows.iter().map(|r| r.iter().collect()).collect();
        if !refs.is_empty() {
            write_png(&a.out.with_extension("png"), &panel_grid(&refs)?)?;
        }
    }
    print!("{}", eval::report_markdown(&reports));
    Ok(0)
}
