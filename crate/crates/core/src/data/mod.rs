//! Dataset ingestion, augmentation, normalization and the synthetic
//! two-domain generator.

mod augment;
mod dataset;
mod image_io;
mod synth;

pub use augment::{augment, hflip, load_size, resize, AugmentParams};
pub use dataset::{
    domain_dir, list_images, load_folder, load_unpaired, mask_dir, Domain, Sample, Split, UnpairedDataset,
};
pub use image_io::{
    batch_image_to_rgb, decode_mask, decode_rgb, denormalize, images_to_batch, mask_to_tensor, normalize,
    rgb_to_chw,
};
pub use synth::{reference_dir, synth_generate, Scene, SynthSpec, SynthSummary};
