//! Synthetic shapes, background composition, normalization and the xyz/OFF
//! file formats.

mod compose;
mod dataset;
mod io;
mod shapes;

pub use compose::{compose_background, normalize, SHELL_GAP};
pub use dataset::{
    build_dataset, generate_dataset, load_dataset, load_split, Dataset, DatasetConfig, DatasetManifest, ManifestEntry,
    Split, Splits, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use io::{load_off, load_xyz, parse_off, parse_xyz, to_xyz, write_xyz};
pub use shapes::{generate_shape, ShapeClass, JITTER};
