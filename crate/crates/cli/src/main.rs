//! `sareo`: prepare data, scrape maps, train, translate, evaluate and report.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sareo", version, about = "Multi-conditional SAR-to-EO translation toolkit")]
struct Cli {
    /// Flat `section.key = value` config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Run on one thread (bit-identical to the parallel path, slower).
    #[arg(long, global = true)]
    single_worker: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compose SAR channels, filter clouds, chip scenes and write a manifest.
    Prepare(PrepareArgs),
    /// Attach map chips from a slippy-map tile server to every manifest sample.
    ScrapeMaps(ScrapeArgs),
    /// Write a synthetic paired corpus in the prepare output format.
    Synthgen(SynthArgs),
    /// Train a generator/discriminator bundle on a manifest's train split.
    Train(TrainArgs),
    /// Generate EO images for SAR chips with a trained bundle.
    Translate(TranslateArgs),
    /// Score a bundle on a manifest's test split (PSNR, SSIM, LPIPS, L1).
    Evaluate(EvaluateArgs),
    /// Tabulate metric reports from several evaluation runs.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Dataset label stored in the manifest header.
    #[arg(long)]
    dataset: String,
    /// Directory of scene folders (each with scene.json and band rasters).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Seed for the scene-level train/test shuffle.
    #[arg(long)]
    seed: Option<u64>,
    /// Chip edge in pixels [default: 256].
    #[arg(long)]
    chip_size: Option<usize>,
    /// Chip stride in pixels [default: chip size, i.e. non-overlapping].
    #[arg(long)]
    stride: Option<usize>,
    /// Keep an EO scene only if the mean of HSV V = max(R, G, B) exceeds this [default: 0.2].
    #[arg(long)]
    v_threshold: Option<f64>,
    /// Drop chips whose occluded/masked fraction exceeds this [default: 0.10].
    #[arg(long)]
    occlusion_max: Option<f64>,
    /// Fraction of scenes assigned to train [default: 0.8].
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Args, Debug)]
struct ScrapeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Tile server base URL; tiles are fetched from `{server}/{z}/{x}/{y}.png`.
    #[arg(long)]
    server: Option<String>,
    /// Tile cache directory.
    #[arg(long, env = "SAREO_CACHE_DIR")]
    cache: PathBuf,
    /// Read tiles from a local `{z}/{x}/{y}.png` tree instead of the network.
    #[arg(long)]
    offline_tiles: Option<PathBuf>,
    /// User-agent sent with tile requests (required for network access).
    #[arg(long)]
    user_agent: Option<String>,
    /// Fill missing tiles with a blank map color instead of failing.
    #[arg(long)]
    blank_fill: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of scenes.
    #[arg(long)]
    n: Option<usize>,
    /// Scene edge in pixels (>= 64).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Shift the map layer by this many pixels.
    #[arg(long)]
    misalign: Option<usize>,
    /// Multiplicative speckle strength in [0, 1].
    #[arg(long)]
    speckle: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// sar, sar+map, sar+ir, sar+latlon or combinations such as sar+map+ir.
    #[arg(long)]
    conditioning: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs [default: 400].
    #[arg(long)]
    epochs: Option<u64>,
    /// Mini-batch size [default: 4].
    #[arg(long)]
    batch: Option<usize>,
    /// Adam learning rate [default: 2e-4; betas 0.5 / 0.999].
    #[arg(long)]
    lr: Option<f64>,
    /// `full` (full-size networks, 400 epochs) or `desk` (small networks, 5 epochs).
    #[arg(long)]
    preset: Option<String>,
    /// Stop after this many optimization steps.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TranslateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// SAR chip files named `<id>_sar.chip`; conditioning chips are looked up as `<id>_<modality>.chip`.
    #[arg(long, num_args = 0..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    conditioning: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    conditioning: String,
    /// LPIPS backbone weights file, or `test-backbone` for the bundled fixed-seed network.
    #[arg(long)]
    lpips_weights: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Row label in reports [default: the conditioning].
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Evaluation output directories (each holding report.json).
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Markdown table path; a CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Manifest for the side-by-side figure grid (SAR | reference | each run).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.single_worker {
        sareo_nn::exec::set_sequential(true);
    }
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_parse_after_the_subcommand() {
        let cli = Cli::try_parse_from(["sareo", "synthgen", "--out", "x", "--force", "--single-worker"]).unwrap();
        assert!(cli.force && cli.single_worker);
        assert!(matches!(cli.command, Command::Synthgen(SynthArgs { ref out, .. }) if out == std::path::Path::new("x")));
    }
}
