//! Attention-map export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::autograd::Tape;
use crate::backbone::Model;
use crate::ctx::{AttnRecord, Ctx, Mode};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

use super::image::encode_pgm;

/// Min-max scales values to 0..=255; a constant map becomes all zeros.
pub fn normalize_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

/// Runs one eval-mode forward pass of a `[3, 32, W]` image and returns the
/// attention captured in every block, one record per head.
pub fn capture_attention(model: &Model, store: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Vec<AttnRecord>> {
    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, store, Mode::Eval, 0).with_attention_capture();
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let x = tape.constant(image.clone().reshape(&shape)?);
    model.logits(&ctx, &x)?;
    Ok(ctx.take_attention())
}

/// Head-averaged map per block, keyed by block name.
pub fn block_maps(records: &[AttnRecord]) -> BTreeMap<String, ((usize, usize), Vec<f64>)> {
    let mut out: BTreeMap<String, ((usize, usize), Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let e = out
            .entry(r.block.clone())
            .or_insert_with(|| (r.grid, vec![0.0; r.map.len()], 0));
        for (a, v) in e.1.iter_mut().zip(&r.map) {
            *a += v;
        }
        e.2 += 1;
    }
    out.into_iter()
        .map(|(k, (grid, sum, n))| (k, (grid, sum.into_iter().map(|v| v / n as f64).collect())))
        .collect()
}

/// Writes `<block>.pgm` for every block whose name contains `filter`, plus
/// `<block>.head<h>.pgm` per head when `per_head` is set. Returns the files
/// written.
pub fn dump_attention(
    records: &[AttnRecord],
    out: &Path,
    filter: Option<&str>,
    per_head: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let keep = |name: &str| filter.is_none_or(|f| name.contains(f));
    let mut written = Vec::new();
    let mut write = |name: String, grid: (usize, usize), map: &[f64]| -> Result<()> {
        let path = out.join(name);
        let bytes = encode_pgm(grid.1, grid.0, &normalize_u8(map));
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for (block, (grid, map)) in block_maps(records) {
        if keep(&block) {
            write(format!("{block}.pgm"), grid, &map)?;
        }
    }
    if per_head {
        for r in records.iter().filter(|r| keep(&r.block)) {
            write(format!("{}.head{}.pgm", r.block, r.head), r.grid, &r.map)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_spans_full_range() {
        assert_eq!(normalize_u8(&[2.0, 3.0, 4.0]), vec![0, 128, 255]);
        assert_eq!(normalize_u8(&[1.5, 1.5]), vec![0, 0]);
    }
}
