//! Web Mercator tile math, tile sources (HTTP or a local directory), an
//! on-disk tile cache and map-chip stitching.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::chipio::{read_sidecar, write_atomic, write_chip, ChipSidecar};
use crate::error::{Error, Result};
use crate::imageio::decode_png;
use crate::manifest::{resolve, root_of, Manifest, ModalityPath};
use crate::raster::{GeoInfo, ModalityKind, RasterChip, ValueRange};

pub const TILE_SIZE: usize = 256;
/// Latitude where the Mercator square ends.
pub const MAX_LATITUDE: f64 = 85.051_128_779_806_59;
/// Ground resolution (m/px) of zoom 0 at the equator.
pub const EQUATOR_RESOLUTION: f64 = 156_543.03;
pub const MAX_ZOOM: u8 = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileCoord {
    pub zoom: u8,
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub fn new(zoom: u8, x: u32, y: u32) -> Result<Self> {
        let n = 1u64 << zoom;
        if zoom > 30 || x as u64 >= n || y as u64 >= n {
            return Err(Error::Projection(format!("tile {zoom}/{x}/{y} is outside the zoom-{zoom} grid")));
        }
        Ok(TileCoord { zoom, x, y })
    }
}

fn check_latlon(lat: f64, lon: f64) -> Result<()> {
    if !(lat.abs() <= MAX_LATITUDE) {
        return Err(Error::Projection(format!("latitude {lat} is beyond the Web Mercator bound")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Projection(format!("longitude {lon} outside [-180, 180]")));
    }
    Ok(())
}

/// Fractional tile coordinates of a point.
fn tile_fraction(lat: f64, lon: f64, zoom: u8) -> (f64, f64) {
    let n = (1u64 << zoom) as f64;
    let phi = lat.to_radians();
    let x = (lon + 180.0) / 360.0 * n;
    let y = (1.0 - (phi.tan() + 1.0 / phi.cos()).ln() / std::f64::consts::PI) / 2.0 * n;
    (x, y)
}

pub fn latlon_to_tile(lat: f64, lon: f64, zoom: u8) -> Result<TileCoord> {
    check_latlon(lat, lon)?;
    let max = (1u64 << zoom) - 1;
    let (x, y) = tile_fraction(lat, lon, zoom);
    let clamp = |v: f64| (v.floor().max(0.0) as u64).min(max) as u32;
    TileCoord::new(zoom, clamp(x), clamp(y))
}

/// North-west corner of a tile.
pub fn tile_to_latlon(tile: TileCoord) -> (f64, f64) {
    let n = (1u64 << tile.zoom) as f64;
    let lon = tile.x as f64 / n * 360.0 - 180.0;
    let lat = (std::f64::consts::PI * (1.0 - 2.0 * tile.y as f64 / n)).sinh().atan().to_degrees();
    (lat, lon)
}

/// Ground resolution (m/px) of `zoom` at `lat`.
pub fn tile_resolution(lat: f64, zoom: u8) -> f64 {
    EQUATOR_RESOLUTION * lat.to_radians().cos() / (1u64 << zoom) as f64
}

/// Zoom whose resolution at `lat` is closest to `ground_resolution`.
pub fn choose_zoom(lat: f64, ground_resolution: f64) -> u8 {
    (0..=MAX_ZOOM)
        .min_by(|a, b| {
            let da = (tile_resolution(lat, *a) - ground_resolution).abs();
            let db = (tile_resolution(lat, *b) - ground_resolution).abs();
            da.total_cmp(&db)
        })
        .expect("non-empty zoom range")
}

/// Anything that can produce PNG bytes for a tile.
pub trait TileSource: Send + Sync {
    /// Identifies the server in the cache.
    fn key(&self) -> String;
    fn fetch(&self, tile: TileCoord) -> Result<Vec<u8>>;
}

/// `{base}/{z}/{x}/{y}.png` over HTTP with a minimum request interval
/// and bounded retries.
pub struct HttpTileSource {
    base: String,
    agent: ureq::Agent,
    min_interval: Duration,
    max_attempts: u32,
    last: Mutex<Option<Instant>>,
}

impl HttpTileSource {
    pub fn new(base: &str, user_agent: &str) -> Result<Self> {
        if user_agent.trim().is_empty() {
            return Err(Error::Config("a user-agent string is required for tile requests".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .user_agent(user_agent)
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTileSource {
            base: base.trim_end_matches('/').to_string(),
            agent,
            min_interval: Duration::from_millis(250),
            max_attempts: 3,
            last: Mutex::new(None),
        })
    }

    pub fn url(&self, tile: TileCoord) -> String {
        format!("{}/{}/{}/{}.png", self.base, tile.zoom, tile.x, tile.y)
    }

    fn wait_turn(&self) {
        let mut last = self.last.lock().expect("rate limiter lock");
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.min_interval {
                thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl TileSource for HttpTileSource {
    fn key(&self) -> String {
        self.base.clone()
    }

    fn fetch(&self, tile: TileCoord) -> Result<Vec<u8>> {
        let url = self.url(tile);
        let mut message = String::new();
        for attempt in 1..=self.max_attempts {
            self.wait_turn();
            match self.agent.get(&url).call() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 404 {
                        return Err(Error::MissingTile(url));
                    }
                    if status == 200 {
                        return resp
                            .body_mut()
                            .read_to_vec()
                            .map_err(|e| Error::Fetch {
                                attempts: attempt,
                                message: e.to_string(),
                            });
                    }
                    message = format!("{url}: HTTP {status}");
                }
                Err(e) => message = format!("{url}: {e}"),
            }
            thread::sleep(Duration::from_millis(500 * attempt as u64));
        }
        Err(Error::Fetch {
            attempts: self.max_attempts,
            message,
        })
    }
}

/// Offline tiles laid out as `{root}/{z}/{x}/{y}.png`.
pub struct LocalTileSource {
    pub root: PathBuf,
}

impl TileSource for LocalTileSource {
    fn key(&self) -> String {
        format!("file://{}", self.root.display())
    }

    fn fetch(&self, tile: TileCoord) -> Result<Vec<u8>> {
        let p = tile_path(&self.root, tile);
        if !p.exists() {
            return Err(Error::MissingTile(p.display().to_string()));
        }
        fs::read(&p).map_err(|e| Error::io(&p, e))
    }
}

pub fn tile_path(root: &Path, tile: TileCoord) -> PathBuf {
    root.join(tile.zoom.to_string())
        .join(tile.x.to_string())
        .join(format!("{}.png", tile.y))
}

const SOURCE_MARKER: &str = "source.txt";

/// Disk cache in front of a [`TileSource`]; one cache directory per server.
pub struct TileCache {
    dir: PathBuf,
    source: Box<dyn TileSource>,
    fetches: AtomicUsize,
}

impl TileCache {
    pub fn new(dir: &Path, source: Box<dyn TileSource>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let marker = dir.join(SOURCE_MARKER);
        let key = source.key();
        if marker.exists() {
            let existing = fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?;
            if existing.trim() != key {
                return Err(Error::Config(format!(
                    "cache {} belongs to {}, not {key}",
                    dir.display(),
                    existing.trim()
                )));
            }
        } else {
            write_atomic(&marker, key.as_bytes())?;
        }
        Ok(TileCache {
            dir: dir.to_path_buf(),
            source,
            fetches: AtomicUsize::new(0),
        })
    }

    /// Number of requests that reached the source.
    pub fn source_fetches(&self) -> usize {
        self.fetches.load(Ordering::SeqCst)
    }

    pub fn get(&self, tile: TileCoord) -> Result<Vec<u8>> {
        let p = tile_path(&self.dir, tile);
        if p.exists() {
            return fs::read(&p).map_err(|e| Error::io(&p, e));
        }
        self.fetches.fetch_add(1, Ordering::SeqCst);
        let bytes = self.source.fetch(tile)?;
        write_atomic(&p, &bytes)?;
        Ok(bytes)
    }

    pub fn get_chip(&self, tile: TileCoord) -> Result<RasterChip> {
        let chip = decode_png(&self.get(tile)?)?;
        if chip.height() != TILE_SIZE || chip.width() != TILE_SIZE {
            return Err(Error::format("tile", format!("{}x{} tile", chip.height(), chip.width())));
        }
        Ok(chip)
    }
}

/// Fill color for missing tiles when blank filling is enabled.
pub const BLANK_FILL: [f32; 3] = [0.93, 0.93, 0.90];

/// Map chip centered on `(lat, lon)` at `ground_resolution`, stitched from
/// the covering tiles with nearest-neighbour resampling.
pub fn fetch_map_chip(
    lat: f64,
    lon: f64,
    ground_resolution: f64,
    chip_size: usize,
    cache: &TileCache,
    blank_fill: bool,
) -> Result<RasterChip> {
    check_latlon(lat, lon)?;
    if !(ground_resolution > 0.0) {
        return Err(Error::Validation("ground_resolution must be positive".into()));
    }
    let zoom = choose_zoom(lat, ground_resolution);
    let step = ground_resolution / tile_resolution(lat, zoom);
    let (tx, ty) = tile_fraction(lat, lon, zoom);
    let world = (1u64 << zoom) as i64 * TILE_SIZE as i64;
    let (cx, cy) = (tx * TILE_SIZE as f64, ty * TILE_SIZE as f64);
    let half = chip_size as f64 / 2.0;
    let coord = |i: usize, c: f64| -> f64 { c + (i as f64 + 0.5 - half) * step };
    let gx: Vec<i64> = (0..chip_size).map(|j| (coord(j, cx).floor() as i64).rem_euclid(world)).collect();
    let gy: Vec<i64> = (0..chip_size).map(|i| (coord(i, cy).floor() as i64).clamp(0, world - 1)).collect();

    let mut tiles: std::collections::BTreeMap<(u32, u32), Option<RasterChip>> = Default::default();
    for &y in &gy {
        for &x in &gx {
            let key = ((x / TILE_SIZE as i64) as u32, (y / TILE_SIZE as i64) as u32);
            if tiles.contains_key(&key) {
                continue;
            }
            let tile = TileCoord::new(zoom, key.0, key.1)?;
            let chip = match cache.get_chip(tile) {
                Ok(c) => Some(c),
                Err(Error::MissingTile(_)) if blank_fill => None,
                Err(e) => return Err(e),
            };
            tiles.insert(key, chip);
        }
    }
    let t = TILE_SIZE as i64;
    let geo = GeoInfo::new(lat, lon, ground_resolution)?;
    Ok(RasterChip::from_fn(3, chip_size, chip_size, ValueRange::Unit, |c, i, j| {
        let (x, y) = (gx[j], gy[i]);
        match &tiles[&((x / t) as u32, (y / t) as u32)] {
            Some(tile) => tile.get(c, (y % t) as usize, (x % t) as usize),
            None => BLANK_FILL[c],
        }
    })?
    .with_geo(geo))
}

/// Per-record scrape failures.
#[derive(Debug, Default)]
pub struct ScrapeSummary {
    pub written: usize,
    pub failures: Vec<(String, String)>,
}

/// Adds a `map_rgb` chip to every manifest record and rewrites the manifest.
/// Chip size and ground resolution come from each record's SAR chip.
pub fn scrape_maps(
    manifest: &mut Manifest,
    manifest_path: &Path,
    cache: &TileCache,
    default_resolution: f64,
    blank_fill: bool,
) -> Result<ScrapeSummary> {
    let root = root_of(manifest_path);
    let sar_kind = manifest.header.sar_modality;
    let mut summary = ScrapeSummary::default();
    for record in manifest.samples.iter_mut() {
        let result = (|| -> Result<ModalityPath> {
            let sar_rel = record
                .path_for(sar_kind)
                .ok_or_else(|| Error::Modality(format!("{} has no SAR chip", record.id)))?;
            let sar_path = resolve(&root, sar_rel);
            let sidecar = read_sidecar(&sar_path)?;
            let sar = crate::chipio::read_chip(&sar_path)?;
            let res = sidecar
                .as_ref()
                .and_then(|s| s.geo)
                .map(|g| g.ground_resolution)
                .unwrap_or(default_resolution);
            let chip = fetch_map_chip(record.lat, record.lon, res, sar.height(), cache, blank_fill)?;
            let rel = format!("chips/{}_map.chip", record.id);
            write_chip(
                &resolve(&root, &rel),
                &chip,
                &ChipSidecar {
                    modality: ModalityKind::MapRgb,
                    value_range: ValueRange::Unit,
                    geo: chip.geo,
                    source_id: record.source_id.clone(),
                },
            )?;
            Ok(ModalityPath {
                modality: ModalityKind::MapRgb,
                path: rel,
            })
        })();
        match result {
            Ok(mp) => {
                record.paths.retain(|p| p.modality != ModalityKind::MapRgb);
                record.paths.push(mp);
                summary.written += 1;
            }
            Err(e @ (Error::Fetch { .. } | Error::Io { .. })) => return Err(e),
            Err(e) => summary.failures.push((record.id.clone(), e.to_string())),
        }
    }
    manifest.write(manifest_path)?;
    Ok(summary)
}
