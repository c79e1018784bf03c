//! Patch embedding, the four attention stages with height reductions, the
//! variant registry and parameter/FLOP accounting.

mod config;
mod flops;
mod model;
mod permutation;

pub use config::{VariantConfig, APE_GRID, ENGLISH_CLASSES, VARIANTS};
pub use flops::{count_flops, FlopReport};
pub use model::{build_model, count_params, CountScope, HdrConv, HdrPool, Model, PatchEmbed, HEAD_PREFIX};
pub use permutation::{parse_permutation, MiddleMode, PermutationSpec};
