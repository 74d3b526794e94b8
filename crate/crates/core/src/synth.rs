//! The 8x8 cross/square benchmark.
//!
//! Images are built in HSV: saturation 0.75, value 1.0 on a 12-pixel shape and
//! 0.2 elsewhere, hue 0.3 (green) or 0.9 (violet) everywhere, then hue and
//! value receive independent `U[-0.1, 0.1]` noise per pixel before conversion
//! to RGB. In training data the shape and the hue are perfectly coupled
//! (crosses are green, squares violet); validation and test data have all
//! four combinations in equal numbers.
//!
//! Setup I uses the shape as label and the mean hue as bias variable.
//! Setup II uses the hue as label and the difference between the mean value
//! on the square mask and on the cross mask as bias variable.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::nn::{CHANNELS, IMAGE_SIZE};
use crate::rng::{seeded, stream, streams};
use crate::{Error, Result, Tensor};

pub const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE;
/// Length of one image record, row-major `8 x 8 x 3` RGB.
pub const IMAGE_VALUES: usize = PIXELS * CHANNELS;
pub const MASK_PIXELS: usize = 12;
pub const SHAPE_VALUE: f64 = 1.0;
pub const BACKGROUND_VALUE: f64 = 0.2;
pub const GREEN_HUE: f64 = 0.3;
pub const VIOLET_HUE: f64 = 0.9;
pub const NOISE: f64 = 0.1;
pub const SATURATION: f64 = 0.75;

/// `(row, column)` cells of the outline of the centred 4x4 block.
pub const SQUARE_MASK: [(usize, usize); MASK_PIXELS] = [
    (2, 2),
    (2, 3),
    (2, 4),
    (2, 5),
    (3, 2),
    (3, 5),
    (4, 2),
    (4, 5),
    (5, 2),
    (5, 3),
    (5, 4),
    (5, 5),
];

/// `(row, column)` cells of the cross: column 3 rows 1-6, row 3 columns 1-6,
/// and the cell (4, 4) that mirrors the shared centre cell.
pub const CROSS_MASK: [(usize, usize); MASK_PIXELS] = [
    (1, 3),
    (2, 3),
    (3, 1),
    (3, 2),
    (3, 3),
    (3, 4),
    (3, 5),
    (3, 6),
    (4, 3),
    (4, 4),
    (5, 3),
    (6, 3),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setup {
    I,
    II,
}

impl Setup {
    pub fn tag(self) -> u8 {
        match self {
            Setup::I => 1,
            Setup::II => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Setup> {
        match tag {
            1 => Some(Setup::I),
            2 => Some(Setup::II),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setup::I => "setup1",
            Setup::II => "setup2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeTag {
    Cross,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HueTag {
    Green,
    Violet,
}

impl ShapeTag {
    pub fn mask(self) -> &'static [(usize, usize); MASK_PIXELS] {
        match self {
            ShapeTag::Cross => &CROSS_MASK,
            ShapeTag::Square => &SQUARE_MASK,
        }
    }
}

impl HueTag {
    pub fn hue(self) -> f64 {
        match self {
            HueTag::Green => GREEN_HUE,
            HueTag::Violet => VIOLET_HUE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    /// Row-major `8 x 8 x 3` RGB values in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub shape_tag: ShapeTag,
    pub hue_tag: HueTag,
    /// Post-noise hue per pixel (not wrapped).
    pub hue: Vec<f64>,
    /// Post-noise value per pixel (not clamped).
    pub value: Vec<f64>,
}

/// Standard piecewise HSV to RGB conversion; the hue is taken modulo 1.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h - libm::floor(h);
    let h6 = h * 6.0;
    let sector = libm::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Inverse of [`hsv_to_rgb`] for values in `[0, 1]`; hue in `[0, 1)`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return [0.0, s, max];
    }
    let h = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    } / 6.0;
    [h - libm::floor(h), s, max]
}

fn mask_contains(mask: &[(usize, usize)], row: usize, col: usize) -> bool {
    mask.iter().any(|&(r, c)| r == row && c == col)
}

/// Rendering constants. The defaults are the documented benchmark values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub saturation: f64,
    pub shape_value: f64,
    pub background_value: f64,
    pub noise: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            saturation: SATURATION,
            shape_value: SHAPE_VALUE,
            background_value: BACKGROUND_VALUE,
            noise: NOISE,
        }
    }
}

fn render_with(shape_tag: ShapeTag, hue_tag: HueTag, params: &RenderParams, rng: &mut impl Rng) -> SynthImage {
    let mask = shape_tag.mask();
    let noise = params.noise;
    let mut pixels = Vec::with_capacity(IMAGE_VALUES);
    let mut hue = Vec::with_capacity(PIXELS);
    let mut value = Vec::with_capacity(PIXELS);
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let base = if mask_contains(mask, row, col) {
                params.shape_value
            } else {
                params.background_value
            };
            let (dh, dv) = if noise > 0.0 {
                (rng.random_range(-noise..=noise), rng.random_range(-noise..=noise))
            } else {
                (0.0, 0.0)
            };
            let (h, v) = (hue_tag.hue() + dh, base + dv);
            hue.push(h);
            value.push(v);
            pixels.extend(hsv_to_rgb(h, params.saturation, v).iter().map(|c| c.clamp(0.0, 1.0)));
        }
    }
    SynthImage {
        pixels,
        shape_tag,
        hue_tag,
        hue,
        value,
    }
}

pub fn render_image(shape_tag: ShapeTag, hue_tag: HueTag, seed: u64) -> SynthImage {
    render_image_with(shape_tag, hue_tag, &RenderParams::default(), seed)
}

pub fn render_image_with(shape_tag: ShapeTag, hue_tag: HueTag, params: &RenderParams, seed: u64) -> SynthImage {
    render_with(shape_tag, hue_tag, params, &mut seeded(seed))
}

pub fn render_noiseless(shape_tag: ShapeTag, hue_tag: HueTag) -> SynthImage {
    let params = RenderParams {
        noise: 0.0,
        ..RenderParams::default()
    };
    render_with(shape_tag, hue_tag, &params, &mut seeded(0))
}

impl SynthImage {
    /// Rebuilds an image from stored RGB values; hue and value planes are
    /// recovered from the (clamped) colours.
    pub fn from_rgb(pixels: Vec<f64>, shape_tag: ShapeTag, hue_tag: HueTag) -> Result<Self> {
        if pixels.len() != IMAGE_VALUES {
            return Err(Error::InvalidTensor(alloc::format!(
                "image needs {IMAGE_VALUES} values, got {}",
                pixels.len()
            )));
        }
        let mut hue = Vec::with_capacity(PIXELS);
        let mut value = Vec::with_capacity(PIXELS);
        for p in pixels.chunks_exact(3) {
            let [h, _, v] = rgb_to_hsv([p[0], p[1], p[2]]);
            hue.push(h);
            value.push(v);
        }
        Ok(SynthImage {
            pixels,
            shape_tag,
            hue_tag,
            hue,
            value,
        })
    }
}

fn mask_mean(plane: &[f64], mask: &[(usize, usize)]) -> f64 {
    mask.iter().map(|&(r, c)| plane[r * IMAGE_SIZE + c]).sum::<f64>() / mask.len() as f64
}

pub fn compute_bias_variable(image: &SynthImage, setup: Setup) -> f64 {
    match setup {
        Setup::I => image.hue.iter().sum::<f64>() / PIXELS as f64,
        Setup::II => mask_mean(&image.value, &SQUARE_MASK) - mask_mean(&image.value, &CROSS_MASK),
    }
}

pub fn label_of(setup: Setup, shape_tag: ShapeTag, hue_tag: HueTag) -> usize {
    match setup {
        Setup::I => usize::from(shape_tag == ShapeTag::Square),
        Setup::II => usize::from(hue_tag == HueTag::Violet),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: SynthImage,
    pub label: usize,
    pub bias_value: f64,
}

/// A list of examples that counts how often it has been read.
#[derive(Debug)]
pub struct Split {
    examples: Vec<LabeledExample>,
    reads: AtomicUsize,
}

impl Clone for Split {
    fn clone(&self) -> Self {
        Split {
            examples: self.examples.clone(),
            reads: AtomicUsize::new(self.reads.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Split {
    fn eq(&self, other: &Self) -> bool {
        self.examples == other.examples
    }
}

impl Split {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        Split {
            examples,
            reads: AtomicUsize::new(0),
        }
    }

    /// The examples; every call is counted.
    pub fn examples(&self) -> &[LabeledExample] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.examples
    }

    /// Number of examples (not counted as a read).
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    /// Cells `[shape][hue]` with cross/green as index 0.
    pub fn contingency(&self) -> [[usize; 2]; 2] {
        let mut t = [[0; 2]; 2];
        for e in &self.examples {
            t[(e.image.shape_tag == ShapeTag::Square) as usize][(e.image.hue_tag == HueTag::Violet) as usize] += 1;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub setup: Setup,
    pub seed: u64,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            train: 600,
            val: 400,
            test: 400,
        }
    }
}

fn example(setup: Setup, shape: ShapeTag, hue: HueTag, params: &RenderParams, rng: &mut impl RngCore) -> LabeledExample {
    let image = render_image_with(shape, hue, params, rng.next_u64());
    LabeledExample {
        label: label_of(setup, shape, hue),
        bias_value: compute_bias_variable(&image, setup),
        image,
    }
}

fn coupled_split(setup: Setup, n: usize, params: &RenderParams, rng: &mut impl Rng) -> Vec<LabeledExample> {
    let mut cells: Vec<(ShapeTag, HueTag)> = Vec::with_capacity(n);
    cells.extend((0..n / 2).map(|_| (ShapeTag::Cross, HueTag::Green)));
    cells.extend((0..n / 2).map(|_| (ShapeTag::Square, HueTag::Violet)));
    cells.shuffle(rng);
    cells.into_iter().map(|(s, h)| example(setup, s, h, params, rng)).collect()
}

fn independent_split(setup: Setup, n: usize, params: &RenderParams, rng: &mut impl Rng) -> Vec<LabeledExample> {
    // Each label class gets n/2 examples, split as evenly as possible over
    // the nuisance attribute (hue in Setup I, shape in Setup II).
    let half = n / 2;
    let mut cells: Vec<(ShapeTag, HueTag)> = Vec::with_capacity(n);
    for label in [false, true] {
        for (nuisance, count) in [(false, half.div_ceil(2)), (true, half / 2)] {
            let (square, violet) = match setup {
                Setup::I => (label, nuisance),
                Setup::II => (nuisance, label),
            };
            let shape = if square { ShapeTag::Square } else { ShapeTag::Cross };
            let hue = if violet { HueTag::Violet } else { HueTag::Green };
            cells.extend((0..count).map(|_| (shape, hue)));
        }
    }
    cells.shuffle(rng);
    cells.into_iter().map(|(s, h)| example(setup, s, h, params, rng)).collect()
}

/// Builds the biased training split and the unbiased validation and test
/// splits. All counts must be positive and even.
pub fn generate_dataset(setup: Setup, counts: SplitCounts, seed: u64) -> Result<SplitDataset> {
    generate_dataset_with(setup, counts, &RenderParams::default(), seed)
}

pub fn generate_dataset_with(setup: Setup, counts: SplitCounts, params: &RenderParams, seed: u64) -> Result<SplitDataset> {
    for (name, n) in [("train", counts.train), ("val", counts.val), ("test", counts.test)] {
        if n == 0 || n % 2 == 1 {
            return Err(Error::Config(alloc::format!(
                "{name} count must be positive and even, got {n}"
            )));
        }
    }
    Ok(SplitDataset {
        setup,
        seed,
        train: Split::new(coupled_split(setup, counts.train, params, &mut stream(seed, streams::DATA_TRAIN))),
        val: Split::new(independent_split(setup, counts.val, params, &mut stream(seed, streams::DATA_VAL))),
        test: Split::new(independent_split(setup, counts.test, params, &mut stream(seed, streams::DATA_TEST))),
    })
}

/// Shuffled mini-batches of indices into `labels`. The trailing remainder is
/// dropped; with `balanced` every batch holds `batch_size / 2` of each of
/// the two labels.
pub fn make_batches(labels: &[usize], batch_size: usize, balanced: bool, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size < 8 {
        return Err(Error::Config(alloc::format!("batch size must be at least 8, got {batch_size}")));
    }
    if !balanced {
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(rng);
        return Ok(idx.chunks_exact(batch_size).map(<[usize]>::to_vec).collect());
    }
    if batch_size % 2 == 1 {
        return Err(Error::Config(alloc::format!(
            "balanced batches need an even batch size, got {batch_size}"
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::LabelOutOfRange { label: l, classes: 2 });
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for c in by_class.iter_mut() {
        c.shuffle(rng);
    }
    let half = batch_size / 2;
    let n = by_class[0].len().min(by_class[1].len()) / half;
    let mut batches: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            let mut b = Vec::with_capacity(batch_size);
            b.extend_from_slice(&by_class[0][k * half..(k + 1) * half]);
            b.extend_from_slice(&by_class[1][k * half..(k + 1) * half]);
            b.shuffle(rng);
            b
        })
        .collect();
    batches.shuffle(rng);
    Ok(batches)
}

/// Images of the selected examples as a `batch x 3 x 8 x 8` tensor.
pub fn image_batch(examples: &[LabeledExample], idx: &[usize]) -> Tensor {
    let mut data = vec![0.0; idx.len() * IMAGE_VALUES];
    for (k, &i) in idx.iter().enumerate() {
        let px = &examples[i].image.pixels;
        let out = &mut data[k * IMAGE_VALUES..(k + 1) * IMAGE_VALUES];
        for p in 0..PIXELS {
            for c in 0..CHANNELS {
                out[c * PIXELS + p] = px[p * CHANNELS + c];
            }
        }
    }
    Tensor::new(vec![idx.len(), CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data).expect("non-empty batch")
}

pub fn bias_batch(examples: &[LabeledExample], idx: &[usize]) -> Tensor {
    Tensor::column(idx.iter().map(|&i| examples[i].bias_value).collect())
}

pub fn label_batch(examples: &[LabeledExample], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| examples[i].label).collect()
}
