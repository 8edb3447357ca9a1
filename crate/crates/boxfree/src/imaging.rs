//! Image representation, synthetic paired datasets, watermark patterns,
//! channel concatenation, and lossless grayscale PNG I/O.
//!
//! Everything in this module is a pure function of its seed: generators use
//! a counter-derived ChaCha stream per image so datasets are reproducible
//! and order-independent.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Mixes a label into a seed so every sub-generator gets its own stream.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix-style finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    let mut z = master ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// H×W grayscale image with pixels in [0,1]. Dimensions are multiples of 8.
///
/// Constructors validate the range; clamping only ever happens through the
/// explicitly named `*_clamped` entry points.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0 {
        return Err(Error::Dimension(format!(
            "image dimensions must be positive multiples of 8, got {height}x{width}"
        )));
    }
    Ok(())
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!(
                "pixel value {p} outside [0,1]; use a clamped constructor for out-of-range data"
            )));
        }
        Ok(Image { height, width, pixels })
    }

    /// Builds an image from possibly out-of-range data, clamping to [0,1].
    pub fn from_clamped(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width
            )));
        }
        let pixels = pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();
        Ok(Image { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Image::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Image::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Applies `f` per pixel and clamps the result back into [0,1].
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Image {
        let pixels = self.pixels.iter().map(|&p| f(p).clamp(0.0, 1.0)).collect();
        Image { height: self.height, width: self.width, pixels }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// C×H×W stack of real-valued channels. Unlike [`Image`] it carries no range
/// or divisibility invariants: it is the working container for network
/// inputs, feature maps, and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ChannelStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ChannelStack { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "stack buffer has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(ChannelStack { channels, height, width, data })
    }

    pub fn from_image(image: &Image) -> Self {
        ChannelStack {
            channels: 1,
            height: image.height(),
            width: image.width(),
            data: image.pixels().to_vec(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Extracts one channel as an [`Image`], clamping to [0,1].
    pub fn channel_image_clamped(&self, c: usize) -> Result<Image> {
        Image::from_clamped(self.height, self.width, self.channel(c).to_vec())
    }

    /// Converts a single-channel stack into an [`Image`], clamping to [0,1].
    pub fn into_image_clamped(self) -> Result<Image> {
        if self.channels != 1 {
            return Err(Error::Shape(format!(
                "expected 1 channel for image conversion, got {}",
                self.channels
            )));
        }
        Image::from_clamped(self.height, self.width, self.data)
    }
}

/// Channel-wise concatenation of an image with a watermark pattern.
///
/// Channel 0 is always the image, channel 1 the pattern; both are
/// recoverable bit-exactly via [`ChannelStack::channel`].
pub fn concat_channels(image: &Image, pattern: &WatermarkPattern) -> Result<ChannelStack> {
    concat_images(image, pattern.image())
}

/// Concatenation with an arbitrary second image (ablation test path).
pub fn concat_images(image: &Image, second: &Image) -> Result<ChannelStack> {
    if !image.same_dims(second) {
        return Err(Error::Dimension(format!(
            "cannot concatenate {}x{} with {}x{}",
            image.height(),
            image.width(),
            second.height(),
            second.width()
        )));
    }
    let mut data = Vec::with_capacity(2 * image.pixel_count());
    data.extend_from_slice(image.pixels());
    data.extend_from_slice(second.pixels());
    ChannelStack::from_data(2, image.height(), image.width(), data)
}

/// What a pattern is used for. `Null` is the all-white "no watermark" image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Mark,
    Null,
    Overwrite,
}

impl PatternKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::Mark => "mark",
            PatternKind::Null => "null",
            PatternKind::Overwrite => "overwrite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mark" => Ok(PatternKind::Mark),
            "null" => Ok(PatternKind::Null),
            "overwrite" => Ok(PatternKind::Overwrite),
            other => Err(Error::InvalidParameter(format!("unknown pattern kind '{other}'"))),
        }
    }
}

/// A watermark pattern: the embedded mark, the all-white null pattern, or an
/// overwrite mark.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkPattern {
    image: Image,
    kind: PatternKind,
}

impl WatermarkPattern {
    pub fn new(image: Image, kind: PatternKind) -> Result<Self> {
        match kind {
            PatternKind::Null => {
                if image.pixels().iter().any(|&p| p != 1.0) {
                    return Err(Error::Pattern("null pattern must be exactly all-white".into()));
                }
            }
            PatternKind::Mark | PatternKind::Overwrite => {
                let dark = image.pixels().iter().filter(|&&p| p < 0.5).count();
                let frac = dark as f64 / image.pixel_count() as f64;
                if !(0.05..=0.95).contains(&frac) {
                    return Err(Error::Pattern(format!(
                        "degenerate pattern: {:.1}% of pixels below 0.5 (need 5%..95%)",
                        frac * 100.0
                    )));
                }
            }
        }
        Ok(WatermarkPattern { image, kind })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// The all-white pattern signifying "no watermark present".
pub fn null_watermark(size: (usize, usize)) -> Result<WatermarkPattern> {
    let image = Image::constant(size.0, size.1, 1.0)?;
    WatermarkPattern::new(image, PatternKind::Null)
}

/// Visual style for generated watermark patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WatermarkStyle {
    /// Emblem of nested discs and satellite blocks; roughly balanced density.
    Logo,
    /// Light glyphs on a dark field; mostly dark.
    Text,
    /// 8-pixel checkerboard; exactly balanced when the cell grid is even.
    Checker,
}

impl WatermarkStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            WatermarkStyle::Logo => "logo",
            WatermarkStyle::Text => "text",
            WatermarkStyle::Checker => "checker",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logo" => Ok(WatermarkStyle::Logo),
            "text" => Ok(WatermarkStyle::Text),
            "checker" => Ok(WatermarkStyle::Checker),
            other => Err(Error::InvalidParameter(format!("unknown watermark style '{other}'"))),
        }
    }
}

// 5x7 glyph rows, LSB = leftmost of 5 columns.
const GLYPHS: [[u8; 7]; 8] = [
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001], // A
    [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110], // C
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111], // E
    [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001], // H
    [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001], // K
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110], // O
    [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100], // T
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100], // V
];

fn render_checker(height: usize, width: usize) -> Vec<f64> {
    let mut px = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            if ((y / 8) + (x / 8)) % 2 == 0 {
                px[y * width + x] = 1.0;
            }
        }
    }
    px
}

fn render_text(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Dark background, white glyphs arranged in two rows of two.
    let mut px = vec![0.0; height * width];
    let scale = (height / 20).max(1);
    let gw = 5 * scale;
    let gh = 7 * scale;
    let gap = scale;
    let total_w = 2 * gw + gap;
    let total_h = 2 * gh + gap;
    let x0 = (width.saturating_sub(total_w)) / 2;
    let y0 = (height.saturating_sub(total_h)) / 2;
    for slot in 0..4 {
        let glyph = &GLYPHS[rng.random_range(0..GLYPHS.len())];
        let gx = x0 + (slot % 2) * (gw + gap);
        let gy = y0 + (slot / 2) * (gh + gap);
        for (r, bits) in glyph.iter().enumerate() {
            for c in 0..5 {
                if bits >> c & 1 == 1 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let y = gy + r * scale + dy;
                            let x = gx + c * scale + dx;
                            if y < height && x < width {
                                px[y * width + x] = 1.0;
                            }
                        }
                    }
                }
            }
        }
    }
    px
}

fn render_logo(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut px = vec![0.0; height * width];
    let cy = height as f64 / 2.0;
    let cx = width as f64 / 2.0;
    let r_outer = height.min(width) as f64 * rng.random_range(0.30..0.38);
    let r_inner = r_outer * rng.random_range(0.35..0.55);
    for y in 0..height {
        for x in 0..width {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let d = (dy * dy + dx * dx).sqrt();
            if d <= r_outer && d > r_inner {
                px[y * width + x] = 1.0;
            }
        }
    }
    // Satellite blocks in the corners keep the density away from extremes.
    let block = height.min(width) / 6;
    let margin = block / 2;
    for (by, bx) in [
        (margin, margin),
        (margin, width - margin - block),
        (height - margin - block, margin),
        (height - margin - block, width - margin - block),
    ] {
        if rng.random_range(0..4) < 3 {
            for y in by..by + block {
                for x in bx..bx + block {
                    px[y * width + x] = 1.0;
                }
            }
        }
    }
    px
}

/// Renders a binary watermark pattern of the requested style.
pub fn render_watermark(
    style: WatermarkStyle,
    seed: u64,
    size: (usize, usize),
) -> Result<WatermarkPattern> {
    let (height, width) = size;
    check_dims(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "watermark"));
    let pixels = match style {
        WatermarkStyle::Checker => render_checker(height, width),
        WatermarkStyle::Text => render_text(height, width, &mut rng),
        WatermarkStyle::Logo => render_logo(height, width, &mut rng),
    };
    WatermarkPattern::new(Image::new(height, width, pixels)?, PatternKind::Mark)
}

/// Same rendering, tagged for overwriting instead of embedding.
pub fn render_overwrite_watermark(
    style: WatermarkStyle,
    seed: u64,
    size: (usize, usize),
) -> Result<WatermarkPattern> {
    let mark = render_watermark(style, seed, size)?;
    WatermarkPattern::new(mark.image().clone(), PatternKind::Overwrite)
}

/// Where a dataset sits in the victim/attacker split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataTag {
    Full,
    VictimHalf,
    AttackerHalf,
}

impl DataTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataTag::Full => "full",
            DataTag::VictimHalf => "victim-half",
            DataTag::AttackerHalf => "attacker-half",
        }
    }
}

/// Ordered list of (degraded, clean) image pairs, reproducible from its seed.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pairs: Vec<(Image, Image)>,
    seed: u64,
    tag: DataTag,
}

impl PairedDataset {
    pub fn pairs(&self) -> &[(Image, Image)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tag(&self) -> DataTag {
        self.tag
    }

    pub fn degraded(&self, i: usize) -> &Image {
        &self.pairs[i].0
    }

    pub fn clean(&self, i: usize) -> &Image {
        &self.pairs[i].1
    }

    pub fn clean_images(&self) -> Vec<Image> {
        self.pairs.iter().map(|(_, b)| b.clone()).collect()
    }
}

/// Degrades a clean image with additive Gaussian noise, clamped to [0,1].
pub fn degrade(clean: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(format!("bad noise sigma: {e}")))?;
    let pixels = clean
        .pixels()
        .iter()
        .map(|&p| if sigma == 0.0 { p } else { p + normal.sample(rng) })
        .collect();
    Image::from_clamped(clean.height(), clean.width(), pixels)
}

/// One synthetic clean image: smooth gradient base, a few rectangles, and
/// band-limited sinusoid texture, squeezed into [0.15, 0.85] so that the
/// additive degradation is only mildly clipped.
fn synth_clean(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Image {
    let h = height as f64;
    let w = width as f64;
    let c0: f64 = rng.random_range(0.3..0.7);
    let cy: f64 = rng.random_range(-0.4..0.4);
    let cx: f64 = rng.random_range(-0.4..0.4);
    let mut px = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            px[y * width + x] = c0 + cy * (y as f64 / h - 0.5) + cx * (x as f64 / w - 0.5);
        }
    }
    let n_rects = rng.random_range(2..=3);
    for _ in 0..n_rects {
        let ry = rng.random_range(0..height);
        let rx = rng.random_range(0..width);
        let rh = rng.random_range(height / 8..height / 2);
        let rw = rng.random_range(width / 8..width / 2);
        let shift: f64 = rng.random_range(-0.35..0.35);
        for y in ry..(ry + rh).min(height) {
            for x in rx..(rx + rw).min(width) {
                px[y * width + x] += shift;
            }
        }
    }
    let n_waves = rng.random_range(2..=4);
    for _ in 0..n_waves {
        let fy: f64 = rng.random_range(-4.0..4.0);
        let fx: f64 = rng.random_range(-4.0..4.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.random_range(0.02..0.08);
        for y in 0..height {
            for x in 0..width {
                let arg = std::f64::consts::TAU * (fy * y as f64 / h + fx * x as f64 / w) + phase;
                px[y * width + x] += amp * arg.sin();
            }
        }
    }
    let pixels = px.into_iter().map(|p| 0.15 + 0.7 * sigmoid_squash(p)).collect();
    Image::new(height, width, pixels).expect("synth output is in range by construction")
}

// Smoothly maps the accumulated signal into (0,1) without hard clipping.
fn sigmoid_squash(p: f64) -> f64 {
    1.0 / (1.0 + (-(p - 0.5) * 3.0).exp())
}

/// Generates `count` (degraded, clean) pairs. Per-image noise sigma is drawn
/// uniformly from [0.1, 0.3]. Deterministic in `seed` and independent of
/// `count` per index.
pub fn synth_dataset(seed: u64, count: usize, size: (usize, usize)) -> Result<PairedDataset> {
    let (height, width) = size;
    check_dims(height, width)?;
    if height < 32 || width < 32 {
        return Err(Error::Dimension(format!(
            "dataset images must be at least 32x32, got {height}x{width}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("dataset count must be >= 1".into()));
    }
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("pair/{i}")));
        let clean = synth_clean(height, width, &mut rng);
        let sigma = rng.random_range(0.1..0.3);
        let degraded = degrade(&clean, sigma, &mut rng)?;
        pairs.push((degraded, clean));
    }
    Ok(PairedDataset { pairs, seed, tag: DataTag::Full })
}

/// Splits a dataset into disjoint victim and attacker halves.
pub fn split_disjoint(dataset: &PairedDataset) -> Result<(PairedDataset, PairedDataset)> {
    if dataset.len() % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "split requires an even pair count, got {}",
            dataset.len()
        )));
    }
    let half = dataset.len() / 2;
    let victim = PairedDataset {
        pairs: dataset.pairs[..half].to_vec(),
        seed: dataset.seed,
        tag: DataTag::VictimHalf,
    };
    let attacker = PairedDataset {
        pairs: dataset.pairs[half..].to_vec(),
        seed: dataset.seed,
        tag: DataTag::AttackerHalf,
    };
    Ok((victim, attacker))
}

/// Writes an image as an 8-bit grayscale PNG.
pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> =
        image.pixels().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let buf = image::GrayImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .ok_or_else(|| Error::ImageFile("failed to assemble grayscale buffer".into()))?;
    buf.save(path).map_err(|e| Error::ImageFile(format!("{}: {e}", path.display())))
}

/// Reads an 8-bit grayscale PNG back into an [`Image`].
pub fn read_image(path: &Path) -> Result<Image> {
    let dynimg =
        image::open(path).map_err(|e| Error::ImageFile(format!("{}: {e}", path.display())))?;
    let gray = match dynimg {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::ImageFile(format!(
                "{}: expected 8-bit grayscale, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let pixels = gray.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Image::new(h, w, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    #[test]
    fn image_rejects_bad_dims() {
        assert!(Image::constant(47, 48, 0.5).is_err());
        assert!(Image::constant(48, 20, 0.5).is_err());
        assert!(Image::constant(0, 0, 0.5).is_err());
        assert!(Image::constant(48, 48, 0.5).is_ok());
    }

    #[test]
    fn image_rejects_out_of_range_unless_clamped() {
        let mut px = vec![0.5; 48 * 48];
        px[7] = 1.2;
        assert!(Image::new(48, 48, px.clone()).is_err());
        let img = Image::from_clamped(48, 48, px).unwrap();
        assert_eq!(img.pixels()[7], 1.0);
    }

    #[test]
    fn synth_is_deterministic_across_runs() {
        let a = synth_dataset(0, 4, (48, 48)).unwrap();
        let b = synth_dataset(0, 4, (48, 48)).unwrap();
        for i in 0..4 {
            assert_eq!(a.degraded(i), b.degraded(i), "pair {i} degraded differs");
            assert_eq!(a.clean(i), b.clean(i), "pair {i} clean differs");
        }
    }

    #[test]
    fn synth_different_seeds_differ() {
        let a = synth_dataset(0, 1, (48, 48)).unwrap();
        let b = synth_dataset(1, 1, (48, 48)).unwrap();
        let differing = a
            .clean(0)
            .pixels()
            .iter()
            .zip(b.clean(0).pixels())
            .filter(|(x, y)| (*x - *y).abs() > 1e-12)
            .count();
        assert!(
            differing >= a.clean(0).pixel_count() / 100,
            "only {differing} pixels differ between seeds"
        );
    }

    #[test]
    fn synth_rejects_invalid_size() {
        assert!(synth_dataset(0, 1, (24, 24)).is_err(), "below 32 minimum");
        assert!(synth_dataset(0, 1, (50, 48)).is_err(), "not multiple of 8");
        assert!(synth_dataset(0, 0, (48, 48)).is_err(), "zero count");
    }

    #[test]
    fn degradation_psnr_matches_noise_level() {
        // Closed form for sigma=0.2 is ~20*log10(1/0.2) = 13.98 dB; clamping
        // at the [0,1] rails trims the noise tails and lifts it slightly.
        let mut total = 0.0;
        let count = 100;
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(42, &format!("psnr/{i}")));
            let clean = synth_clean(48, 48, &mut rng);
            let noisy = degrade(&clean, 0.2, &mut rng).unwrap();
            total += metrics::psnr(&noisy, &clean).unwrap().db();
        }
        let mean = total / count as f64;
        assert!((13.0..=15.0).contains(&mean), "mean degradation PSNR {mean:.2} dB not near 14");
    }

    #[test]
    fn split_is_a_partition() {
        let ds = synth_dataset(3, 10, (48, 48)).unwrap();
        let (v, a) = split_disjoint(&ds).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(a.len(), 5);
        assert_eq!(v.tag(), DataTag::VictimHalf);
        assert_eq!(a.tag(), DataTag::AttackerHalf);
        // No pair appears in both halves, and together they cover the set.
        for i in 0..5 {
            assert_eq!(v.clean(i), ds.clean(i));
            assert_eq!(a.clean(i), ds.clean(i + 5));
            for j in 0..5 {
                assert_ne!(v.clean(i), a.clean(j), "pair leaked across the split");
            }
        }
        let (v2, a2) = split_disjoint(&ds).unwrap();
        assert_eq!(v.pairs(), v2.pairs());
        assert_eq!(a.pairs(), a2.pairs());
    }

    #[test]
    fn split_rejects_odd_count() {
        let ds = synth_dataset(0, 3, (48, 48)).unwrap();
        assert!(split_disjoint(&ds).is_err());
    }

    #[test]
    fn checker_is_exactly_half_dark() {
        let p = render_watermark(WatermarkStyle::Checker, 0, (48, 48)).unwrap();
        let dark = p.image().pixels().iter().filter(|&&v| v < 0.5).count();
        assert_eq!(dark, 48 * 48 / 2);
    }

    #[test]
    fn text_pattern_density_in_range() {
        for seed in [3, 7, 11] {
            let p = render_watermark(WatermarkStyle::Text, seed, (48, 48)).unwrap();
            let dark = p.image().pixels().iter().filter(|&&v| v < 0.5).count();
            let frac = dark as f64 / (48.0 * 48.0);
            assert!((0.05..=0.95).contains(&frac), "seed {seed}: dark fraction {frac}");
        }
    }

    #[test]
    fn styles_are_mutually_dissimilar() {
        let size = (48, 48);
        let styles =
            [WatermarkStyle::Logo, WatermarkStyle::Text, WatermarkStyle::Checker];
        for (i, a) in styles.iter().enumerate() {
            for b in &styles[i + 1..] {
                let pa = render_watermark(*a, 0, size).unwrap();
                let pb = render_watermark(*b, 0, size).unwrap();
                let nc = metrics::ncc(pa.image(), pb.image()).unwrap();
                assert!(nc < 0.9, "{}/{} NC = {nc:.3}", a.as_str(), b.as_str());
            }
        }
    }

    #[test]
    fn null_watermark_is_all_white() {
        let p = null_watermark((48, 48)).unwrap();
        assert!(p.image().pixels().iter().all(|&v| v == 1.0));
        assert_eq!(p.kind(), PatternKind::Null);
        assert_eq!(p.image().mean(), 1.0);
        assert_eq!(metrics::ncc(p.image(), p.image()).unwrap(), 1.0);
    }

    #[test]
    fn pattern_invariants_enforced() {
        let all_dark = Image::constant(48, 48, 0.0).unwrap();
        assert!(WatermarkPattern::new(all_dark, PatternKind::Mark).is_err());
        let not_white = Image::constant(48, 48, 0.9).unwrap();
        assert!(WatermarkPattern::new(not_white, PatternKind::Null).is_err());
    }

    #[test]
    fn concat_is_lossless() {
        let ds = synth_dataset(5, 1, (48, 48)).unwrap();
        let mark = render_watermark(WatermarkStyle::Logo, 1, (48, 48)).unwrap();
        let stack = concat_channels(ds.clean(0), &mark).unwrap();
        assert_eq!(stack.channels(), 2);
        assert_eq!(stack.channel(0), ds.clean(0).pixels());
        assert_eq!(stack.channel(1), mark.image().pixels());
    }

    #[test]
    fn concat_rejects_dimension_mismatch() {
        let a = Image::constant(48, 48, 0.5).unwrap();
        let m = render_watermark(WatermarkStyle::Checker, 0, (40, 48)).unwrap();
        assert!(concat_channels(&a, &m).is_err());
    }

    #[test]
    fn png_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let ds = synth_dataset(9, 1, (48, 48)).unwrap();
        write_image(ds.clean(0), &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.dims(), (48, 48));
        let max_err = ds
            .clean(0)
            .pixels()
            .iter()
            .zip(back.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-12, "max roundtrip error {max_err}");
    }

    #[test]
    fn png_roundtrip_exact_for_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.png");
        let img = Image::constant(48, 48, 0.0).unwrap();
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn read_rejects_missing_file() {
        assert!(read_image(Path::new("/nonexistent/file.png")).is_err());
    }
}
