//! Procedural text images built from random 8×8 glyph bitmaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctc::Alphabet;
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub const GLYPH: usize = 8;
pub const IMAGE_HEIGHT: usize = 32;
const MIN_HAMMING: u32 = 12;

/// Rendering settings of the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub width: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Integer upscaling factors drawn uniformly per sample.
    pub scales: (usize, usize),
    /// Largest extra gap in pixels between neighbouring glyphs.
    pub jitter: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub glyph_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 96,
            min_len: 1,
            max_len: 5,
            scales: (2, 3),
            jitter: 4,
            noise: 0.2,
            glyph_seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || !self.width.is_multiple_of(4) {
            return Err(config_err!("synthetic width {} must be a positive multiple of 4", self.width));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(config_err!("label lengths need 1 <= min_len <= max_len"));
        }
        let (lo, hi) = self.scales;
        if lo == 0 || lo > hi || GLYPH * hi > IMAGE_HEIGHT {
            return Err(config_err!("glyph scales {lo}..={hi} must be positive and fit a height of {IMAGE_HEIGHT}"));
        }
        if self.min_len * GLYPH * lo > self.width {
            return Err(config_err!("{} glyphs at scale {lo} do not fit width {}", self.min_len, self.width));
        }
        if !(self.noise >= 0.0) {
            return Err(config_err!("noise must be non-negative"));
        }
        Ok(())
    }
}

/// One 8×8 binary bitmap per symbol, pairwise at least `MIN_HAMMING` bits apart.
#[derive(Clone, Debug)]
pub struct GlyphBank {
    glyphs: Vec<u64>,
}

impl GlyphBank {
    pub fn new(symbols: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glyphs: Vec<u64> = Vec::with_capacity(symbols);
        let mut tries = 0;
        while glyphs.len() < symbols {
            tries += 1;
            if tries > 100_000 {
                return Err(config_err!("could not draw {symbols} distinct glyphs"));
            }
            let g: u64 = rng.random();
            let ones = g.count_ones();
            if !(20..=44).contains(&ones) || !fills_box(g) {
                continue;
            }
            if glyphs.iter().all(|&o| (o ^ g).count_ones() >= MIN_HAMMING) {
                glyphs.push(g);
            }
        }
        Ok(Self { glyphs })
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }

    pub fn pixel(&self, symbol: usize, row: usize, col: usize) -> bool {
        self.glyphs[symbol] >> (row * GLYPH + col) & 1 == 1
    }

    /// Number of set pixels of a symbol's bitmap.
    pub fn mass(&self, symbol: usize) -> usize {
        self.glyphs[symbol].count_ones() as usize
    }
}

// Every edge row and column has a set pixel, so glyph extents are all 8×8.
fn fills_box(g: u64) -> bool {
    let row = |r: usize| (g >> (r * GLYPH)) & 0xff != 0;
    let col = |c: usize| (0..GLYPH).any(|r| g >> (r * GLYPH + c) & 1 == 1);
    row(0) && row(GLYPH - 1) && col(0) && col(GLYPH - 1)
}

/// Draws a label and renders it. Returns a `[3, 32, width]` image in
/// `[-1, 1]` (background −1, ink +1) and the label text.
pub fn synth_sample<R: Rng + ?Sized>(
    spec: &SynthSpec,
    glyphs: &GlyphBank,
    alphabet: &Alphabet,
    rng: &mut R,
) -> (Tensor<f32>, String) {
    let n_sym = alphabet.symbols().len().min(glyphs.len());
    let (classes, scale) = loop {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let scale = rng.random_range(spec.scales.0..=spec.scales.1);
        if len * GLYPH * scale <= spec.width {
            break ((0..len).map(|_| rng.random_range(0..n_sym)).collect::<Vec<_>>(), scale);
        }
    };
    let label: String = classes.iter().map(|&c| alphabet.symbols()[c].as_str()).collect();
    let img = render(spec, glyphs, &classes, scale, rng);
    (img, label)
}

/// Renders glyph indices left to right at a fixed scale with random gaps,
/// vertical offsets and noise.
pub fn render<R: Rng + ?Sized>(
    spec: &SynthSpec,
    glyphs: &GlyphBank,
    classes: &[usize],
    scale: usize,
    rng: &mut R,
) -> Tensor<f32> {
    let (h, w) = (IMAGE_HEIGHT, spec.width);
    let side = GLYPH * scale;
    let mut gray = vec![-1.0f32; h * w];
    let ink = classes.len() * side;
    let mut gaps: Vec<usize> = (0..classes.len().saturating_sub(1))
        .map(|_| rng.random_range(0..=spec.jitter))
        .collect();
    while ink + gaps.iter().sum::<usize>() > w {
        let widest = gaps.iter_mut().max().expect("overflow implies gaps");
        *widest -= 1;
    }
    let slack = w - ink - gaps.iter().sum::<usize>();
    let mut x0 = rng.random_range(0..=slack);
    for (i, &c) in classes.iter().enumerate() {
        let y0 = rng.random_range(0..=h - side);
        for r in 0..side {
            for col in 0..side {
                if glyphs.pixel(c, r / scale, col / scale) {
                    gray[(y0 + r) * w + x0 + col] = 1.0;
                }
            }
        }
        x0 += side + gaps.get(i).copied().unwrap_or(0);
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("valid std");
        for p in &mut gray {
            *p = (*p + normal.sample(rng) as f32).clamp(-1.0, 1.0);
        }
    }
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(&gray);
    }
    Tensor::new(&[3, h, w], data).expect("consistent image shape")
}

/// A fixed-size set of synthetic samples, each regenerated on demand from
/// its own RNG stream so any item can be produced independently.
#[derive(Clone, Debug)]
pub struct SynthSet {
    pub spec: SynthSpec,
    pub glyphs: GlyphBank,
    pub alphabet: Alphabet,
    pub seed: u64,
    pub len: usize,
}

impl SynthSet {
    pub fn new(spec: &SynthSpec, alphabet: &Alphabet, seed: u64, len: usize) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            glyphs: GlyphBank::new(alphabet.symbols().len(), spec.glyph_seed)?,
            alphabet: alphabet.clone(),
            seed,
            len,
        })
    }

    pub fn sample(&self, index: usize) -> (Tensor<f32>, String) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        synth_sample(&self.spec, &self.glyphs, &self.alphabet, &mut rng)
    }

    /// Stacks the listed items into a `[B, 3, 32, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<String>) {
        use rayon::prelude::*;
        let items: Vec<_> = indices.par_iter().map(|&i| self.sample(i)).collect();
        let mut data = Vec::with_capacity(indices.len() * 3 * IMAGE_HEIGHT * self.spec.width);
        let mut labels = Vec::with_capacity(indices.len());
        for (img, label) in items {
            data.extend_from_slice(img.data());
            labels.push(label);
        }
        let shape = [indices.len(), 3, IMAGE_HEIGHT, self.spec.width];
        (Tensor::new(&shape, data).expect("consistent batch shape"), labels)
    }
}
