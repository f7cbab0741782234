//! Data plumbing: the binary tensor file format, synthetic dataset
//! generation with ground-truth sub-cluster structure, manifest ingestion,
//! and image augmentation.

pub mod augment;
pub mod manifest;
pub mod synth;
pub mod tensor_file;

pub use augment::{augment, AugmentConfig};
pub use manifest::{load_split, read_manifest, write_manifest, LoadedSplit, ManifestRecord, Split};
pub use synth::{generate_dataset, generate_synthetic, DataKind, SynthConfig, SynthDataset};
pub use tensor_file::{read_tensor_file, write_tensor_file, write_tensor_file_f64};
