//! Multi-conditional adversarial SAR-to-EO translation.
//!
//! Pipeline: [`ingest`] (or [`synthgen`]) writes chips and a [`manifest`];
//! [`osm`] adds map conditioning; [`train`] fits a [`model`] bundle with the
//! objectives in [`losses`]; [`eval`] scores generated EO against references.

pub mod bundle;
pub mod chipio;
pub mod config;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod ingest;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod osm;
pub mod raster;
pub mod synthgen;
pub mod train;

pub use bundle::{ArchConfig, BundleMeta, ModelBundle};
pub use error::{Error, Result};
pub use manifest::Manifest;
pub use raster::{concat_conditioning, latlon_to_planes, Conditioning, ModalityKind, RasterChip, Sample, Split, ValueRange};
