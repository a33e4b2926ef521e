//! Labeled point clouds: OFF ingestion, the synthetic shape family, and the
//! on-disk dataset format.

mod augment;
mod cloud;
mod off;
mod store;
mod synthetic;

pub use augment::augment;
pub use cloud::{normalize_unit_sphere, PointCloud};
pub use off::{parse_off, parse_off_mesh, serialize_off, OffMesh};
pub use store::{
    decode_sample, encode_sample, make_manifest, Dataset, DatasetManifest, Splits,
    SyntheticConfig, SAMPLE_MAGIC, SAMPLE_VERSION,
};
pub use synthetic::{generate_synthetic, ShapeClass};
