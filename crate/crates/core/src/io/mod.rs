//! File formats: checkpoints, images and run configs.

mod attn;
mod checkpoint;
mod config;
mod image;

pub use attn::{block_maps, capture_attention, dump_attention, normalize_u8};
pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Checkpoint, ManifestEntry, BLOB, MANIFEST};
pub use config::{seed_from_env, DataConfig, RunConfig, SEED_ENV};
pub use image::{
    decode_pnm, decode_raw, encode_pgm, encode_ppm, encode_raw, load_image, to_model_input, Planar, INPUT_HEIGHT,
    RAW_MAGIC,
};
