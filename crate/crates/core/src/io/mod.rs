//! Image decoding, dataset manifests and model persistence.

mod archive;
mod manifest;
mod pgm;

pub use archive::{archive_paths, load_model, save_model, FORMAT_VERSION};
pub use manifest::{load_manifest, DatasetManifest, ManifestRow};
pub use pgm::{decode_pgm, encode_pgm, load_image, load_pgm, save_pgm, Pgm};
