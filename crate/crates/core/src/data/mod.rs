//! Image I/O, bicubic degradation, patch sampling and augmentation.

pub mod augment;
pub mod dataset;
pub mod image;
pub mod resize;

pub use augment::Aug;
pub use dataset::{
    crop, list_pngs, make_batches, sample_patch, BatchConfig, Batches, Dataset, PairBatch, Prefetcher, Provenance,
    Sample,
};
pub use image::{load_png, save_gray_png, save_png, ImageBuffer};
pub use resize::{bicubic_resize, resize_image};
