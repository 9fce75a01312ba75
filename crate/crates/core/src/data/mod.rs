//! Synthetic multi-domain shape benchmark and single-domain batch sampling.
//!
//! Each domain renders one shape per 3×32×32 image in its own visual style;
//! labels index the domain's class list.

mod container;
mod domain;
pub mod presets;
mod registry;

pub use container::{
    decode_dataset, encode_dataset, load_dataset, save_dataset, sidecar_path, write_ppm,
    DATASET_EXTENSION, DATASET_MAGIC, DATASET_VERSION,
};
pub use domain::{
    generate_domain, most_distant_pair, render_sample, BoundingBox, ColorRange, DomainDataset,
    DomainSpec, Sample, ShapeClass, Split, SplitSizes, Style, Texture, IMAGE_CHANNELS, IMAGE_SIZE,
};
pub use registry::{Batch, DatasetRegistry};
