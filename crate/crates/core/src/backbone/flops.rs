//! Analytic multiply-accumulate counts.
//!
//! Counted: convolutions (`Cout·Cin/g·kh·kw·H'·W'`), linear layers, and the
//! two attention matrix products at their actual token counts. Norms,
//! activations, softmax and elementwise ops are not counted. One MAC counts
//! once. The formulas mirror the ops the model executes, so they agree
//! exactly with [`crate::ops::mac_count`] after a batch-1 forward.

use crate::attention::{cswin_head_split, osra_reduced_grid, AttnConfig, AttnKind, PeKind, FFN_RATIO};
use crate::error::{shape_err, Result};

use super::config::VariantConfig;

/// MACs of one forward pass at batch size 1, broken down by section.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub input: (usize, usize),
    /// `(section, MACs)` in execution order, ending with `ctc_head`.
    pub sections: Vec<(&'static str, u64)>,
}

impl FlopReport {
    pub fn get(&self, section: &str) -> Option<u64> {
        self.sections.iter().find(|(s, _)| *s == section).map(|(_, v)| *v)
    }

    /// Everything except the CTC classifier.
    pub fn backbone(&self) -> u64 {
        self.sections.iter().filter(|(s, _)| *s != "ctc_head").map(|(_, v)| v).sum()
    }

    pub fn total(&self) -> u64 {
        self.sections.iter().map(|(_, v)| v).sum()
    }
}

fn cswin_half(h: usize, w: usize, sw: usize, heads: usize, d: usize, horizontal: bool) -> u64 {
    let (groups, tokens) = if horizontal {
        let s = if h.is_multiple_of(sw) { sw } else { 1 };
        (h / s, s * w)
    } else {
        let s = if w.is_multiple_of(sw) { sw } else { 1 };
        (w / s, h * s)
    };
    (2 * groups * heads * tokens * tokens * d) as u64
}

/// MACs of one attention mixer on an `h x w` token grid.
pub fn attention_macs(cfg: &AttnConfig, h: usize, w: usize) -> u64 {
    let c = cfg.dim;
    let l = h * w;
    let lepe = |tokens: usize| (9 * tokens * c) as u64;
    let proj = (l * c * c) as u64;
    match cfg.kind {
        AttnKind::Mhsa => {
            let v_conv = if cfg.lepe { lepe(l) } else { 0 };
            (3 * l * c * c + 2 * l * l * c) as u64 + v_conv + proj
        }
        AttnKind::Osra => {
            let sr = cfg.reduction_ratio;
            let k = 2 * sr - 1;
            let (rh, rw) = osra_reduced_grid(h, w, sr);
            let rl = rh * rw;
            let v_conv = if cfg.lepe { lepe(rl) } else { 0 };
            (l * c * c + rl * c * k * k + 2 * rl * c * c + 2 * l * rl * c) as u64 + v_conv + proj
        }
        AttnKind::CsWin => {
            let (nh, nv, d) = cswin_head_split(c, cfg.heads);
            let sw = cfg.split_window;
            (3 * l * c * c) as u64
                + cswin_half(h, w, sw, nh, d, true)
                + cswin_half(h, w, sw, nv, d, false)
                + lepe(l)
                + proj
        }
        AttnKind::Masa => (3 * l * c * c + 2 * h * w * w * c + 2 * w * h * h * c) as u64 + lepe(l) + proj,
    }
}

fn ffn_macs(l: usize, c: usize) -> u64 {
    (2 * l * c * FFN_RATIO * c) as u64
}

fn stage_macs(cfg: &VariantConfig, s: usize, h: usize, w: usize) -> u64 {
    let c = cfg.channels[s];
    let l = h * w;
    let cpe = if cfg.pe_kind == PeKind::Cpe { (9 * l * c) as u64 } else { 0 };
    if cfg.is_parallel_stage(s) {
        let (local, global) = cfg.parallel_attn(s);
        let per = cpe + attention_macs(&local, h, w) + attention_macs(&global, h, w) + ffn_macs(l, c);
        per * cfg.depths[s] as u64
    } else {
        cfg.series_kinds(s)
            .into_iter()
            .map(|kind| cpe + attention_macs(&cfg.block_attn(s, kind), h, w) + ffn_macs(l, c))
            .sum()
    }
}

/// Analytic MAC count for a `height x width` input.
pub fn count_flops(cfg: &VariantConfig, height: usize, width: usize) -> Result<FlopReport> {
    cfg.validate()?;
    if !height.is_multiple_of(16) || !width.is_multiple_of(4) || width == 0 || height == 0 {
        return Err(shape_err!("input must be a positive multiple of 16 high and 4 wide, got {height}x{width}"));
    }
    let c = cfg.channels;
    let mid = c[0] / 2;
    let (h1, w1) = (height / 2, width / 2);
    let (mut h, w) = (height / 4, width / 4);
    let mut sections = vec![("patch_embed", (mid * 3 * 9 * h1 * w1 + c[0] * mid * 9 * h * w) as u64)];
    sections.push(("stage1", stage_macs(cfg, 0, h, w)));
    h /= 2;
    sections.push(("hdr1", (c[1] * c[0] * 9 * h * w) as u64));
    sections.push(("stage2", stage_macs(cfg, 1, h, w)));
    h /= 2;
    sections.push(("hdr2", (c[2] * c[1] * 9 * h * w) as u64));
    sections.push(("stage3", stage_macs(cfg, 2, h, w)));
    sections.push(("hdr_pool", (w * c[2] * c[3]) as u64));
    sections.push(("stage4", stage_macs(cfg, 3, 1, w)));
    sections.push(("ctc_head", (w * c[3] * cfg.num_classes) as u64));
    Ok(FlopReport {
        input: (height, width),
        sections,
    })
}
