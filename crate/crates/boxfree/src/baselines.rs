//! Classical removal baselines: JPEG-like compression (self-contained 8x8
//! DCT with the standard luminance quantization table, no entropy coding),
//! additive Gaussian noise, and the lattice attack that replaces pixels on a
//! regular grid with random values.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{degrade, derive_seed, Image};
use crate::metrics::{self, QueryCost, ReportRow, SuccessCriteria};
use crate::victim::VictimBundle;

/// Standard luminance quantization table (quality 50 base).
#[rustfmt::skip]
const LUMA_QUANT: [f64; 64] = [
    16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0,
    12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0,
    14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0,
    14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0,
    18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0,
    24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0,
    49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0,
    72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0,
];

/// Quality-scaled table, libjpeg convention, entries clamped to [1, 255].
fn scaled_quant_table(quality: u8) -> [f64; 64] {
    let q = quality as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut t = [0.0; 64];
    for i in 0..64 {
        t[i] = ((LUMA_QUANT[i] * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
    }
    t
}

/// Orthonormal 8x8 DCT-II basis: `basis[u][i] = alpha(u) cos((2i+1)u pi/16)`.
fn dct_basis() -> [[f64; 8]; 8] {
    let mut basis = [[0.0; 8]; 8];
    for (u, row) in basis.iter_mut().enumerate() {
        let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = alpha * ((2 * i + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    basis
}

/// JPEG-style lossy round trip: per 8x8 block, DCT, quantize with the
/// quality-scaled table, dequantize, inverse DCT. Deterministic.
pub fn jpeg_like(image: &Image, quality: u8) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidParameter(format!(
            "jpeg quality must be in 1..=100, got {quality}"
        )));
    }
    let table = scaled_quant_table(quality);
    let basis = dct_basis();
    let (h, w) = image.dims();
    let mut out = vec![0.0; h * w];
    let mut block = [[0.0f64; 8]; 8];
    let mut coef = [[0.0f64; 8]; 8];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y][x] = image.get(by + y, bx + x) * 255.0 - 128.0;
                }
            }
            // 2-D DCT via two 1-D passes.
            let mut tmp = [[0.0f64; 8]; 8];
            for u in 0..8 {
                for x in 0..8 {
                    let mut acc = 0.0;
                    for y in 0..8 {
                        acc += basis[u][y] * block[y][x];
                    }
                    tmp[u][x] = acc;
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for x in 0..8 {
                        acc += basis[v][x] * tmp[u][x];
                    }
                    coef[u][v] = acc;
                }
            }
            for u in 0..8 {
                for v in 0..8 {
                    let q = table[u * 8 + v];
                    coef[u][v] = (coef[u][v] / q).round() * q;
                }
            }
            // Inverse: transpose applications of the orthonormal basis.
            for y in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for u in 0..8 {
                        acc += basis[u][y] * coef[u][v];
                    }
                    tmp[y][v] = acc;
                }
            }
            for y in 0..8 {
                for x in 0..8 {
                    let mut acc = 0.0;
                    for v in 0..8 {
                        acc += basis[v][x] * tmp[y][v];
                    }
                    out[(by + y) * w + bx + x] = (acc + 128.0) / 255.0;
                }
            }
        }
    }
    Image::from_clamped(h, w, out)
}

/// Additive Gaussian noise, clamped to [0,1], deterministic in the seed.
pub fn add_noise(image: &Image, sigma: f64, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "noise-attack"));
    degrade(image, sigma, &mut rng)
}

/// Noise level that lands an unclamped image at the target PSNR.
pub fn sigma_for_target_psnr(psnr_db: f64) -> f64 {
    10.0f64.powf(-psnr_db / 20.0)
}

/// Lattice attack configuration: grid interval and randomness seed.
#[derive(Debug, Clone, Copy)]
pub struct LatticeConfig {
    pub interval: usize,
    pub seed: u64,
}

impl LatticeConfig {
    pub fn new(interval: usize, seed: u64) -> Result<Self> {
        if interval < 2 {
            return Err(Error::InvalidParameter(format!(
                "lattice interval must be >= 2, got {interval}"
            )));
        }
        Ok(LatticeConfig { interval, seed })
    }
}

/// Replaces pixels at positions (i, j) with `i % q == 0 && j % q == 0` by
/// uniform random values; all other pixels are untouched.
pub fn lattice_attack(image: &Image, cfg: &LatticeConfig) -> Result<Image> {
    if cfg.interval < 2 {
        return Err(Error::InvalidParameter("lattice interval must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "lattice-attack"));
    let (h, w) = image.dims();
    let mut px = image.pixels().to_vec();
    for y in (0..h).step_by(cfg.interval) {
        for x in (0..w).step_by(cfg.interval) {
            px[y * w + x] = rng.random_range(0.0..1.0);
        }
    }
    Image::new(h, w, px)
}

/// Which baseline distortion a sweep applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineAttack {
    /// Level is the JPEG quality factor (1..=100).
    Jpeg,
    /// Level is the target PSNR in dB for the added noise.
    Noise,
    /// Level is the lattice interval q.
    Lattice,
}

impl BaselineAttack {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineAttack::Jpeg => "jpeg",
            BaselineAttack::Noise => "noise",
            BaselineAttack::Lattice => "lattice",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "jpeg" => Ok(BaselineAttack::Jpeg),
            "noise" => Ok(BaselineAttack::Noise),
            "lattice" => Ok(BaselineAttack::Lattice),
            other => Err(Error::InvalidParameter(format!("unknown baseline attack '{other}'"))),
        }
    }
}

/// Applies one baseline attack at each level to the victim's marked outputs
/// and reports quality (distorted marked image vs the processed image) plus
/// extraction success through the victim's own extractor.
pub fn robustness_sweep(
    bundle: &VictimBundle,
    attack: BaselineAttack,
    levels: &[f64],
    eval_clean: &[Image],
    criteria: &SuccessCriteria,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    if eval_clean.is_empty() {
        return Err(Error::EmptyInput("robustness sweep needs evaluation images".into()));
    }
    let marked: Vec<(Image, Image)> = eval_clean
        .iter()
        .map(|b| Ok((b.clone(), bundle.mark(b)?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(levels.len());
    for (li, &level) in levels.iter().enumerate() {
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        let mut extracted = Vec::with_capacity(marked.len());
        for (i, (b, b_prime)) in marked.iter().enumerate() {
            let item_seed = derive_seed(seed, &format!("sweep/{li}/{i}"));
            let distorted = match attack {
                BaselineAttack::Jpeg => jpeg_like(b_prime, level.round() as u8)?,
                BaselineAttack::Noise => {
                    add_noise(b_prime, sigma_for_target_psnr(level), item_seed)?
                }
                BaselineAttack::Lattice => {
                    lattice_attack(b_prime, &LatticeConfig::new(level.round() as usize, item_seed)?)?
                }
            };
            psnr_sum += metrics::psnr(&distorted, b)?.db();
            ssim_sum += metrics::ms_ssim(&distorted, b)?;
            extracted.push(bundle.extract_own(&distorted)?);
        }
        let n = marked.len() as f64;
        let mut row = ReportRow::new(format!("{} level={level}", attack.as_str()));
        row.psnr = Some(metrics::Psnr::Db(psnr_sum / n));
        row.ms_ssim = Some(ssim_sum / n);
        row.sr_e = Some(metrics::success_rate(&extracted, &bundle.watermark, criteria)?);
        row.queries = QueryCost::default();
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth_dataset;

    fn sample(seed: u64) -> Image {
        synth_dataset(seed, 1, (48, 48)).unwrap().clean(0).clone()
    }

    #[test]
    fn quality_100_is_near_lossless() {
        let img = sample(0);
        let out = jpeg_like(&img, 100).unwrap();
        let p = metrics::psnr(&out, &img).unwrap().db();
        assert!(p >= 40.0, "quality 100 PSNR {p:.2}");
    }

    #[test]
    fn lower_quality_is_worse_on_every_image() {
        for seed in 0..5 {
            let img = sample(seed);
            let p50 = metrics::psnr(&jpeg_like(&img, 50).unwrap(), &img).unwrap().db();
            let p90 = metrics::psnr(&jpeg_like(&img, 90).unwrap(), &img).unwrap().db();
            assert!(p50 < p90, "seed {seed}: q50 {p50:.2} vs q90 {p90:.2}");
        }
    }

    #[test]
    fn jpeg_psnr_monotone_in_quality() {
        let images: Vec<Image> = (0..4).map(sample).collect();
        let mut prev = f64::NEG_INFINITY;
        for q in [30u8, 50, 70, 90] {
            let mean: f64 = images
                .iter()
                .map(|img| metrics::psnr(&jpeg_like(img, q).unwrap(), img).unwrap().db())
                .sum::<f64>()
                / images.len() as f64;
            assert!(mean >= prev, "mean PSNR dropped from {prev:.2} to {mean:.2} at q={q}");
            prev = mean;
        }
    }

    #[test]
    fn constant_image_error_bounded_by_dc_quantization() {
        let img = Image::constant(48, 48, 0.4).unwrap();
        let out = jpeg_like(&img, 50).unwrap();
        let table = scaled_quant_table(50);
        let bound = table[0] / 2.0 / 255.0;
        let max_err = img
            .pixels()
            .iter()
            .zip(out.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= bound + 1e-12, "max error {max_err} vs DC bound {bound}");
    }

    #[test]
    fn jpeg_rejects_bad_quality() {
        let img = sample(1);
        assert!(jpeg_like(&img, 0).is_err());
        assert!(jpeg_like(&img, 101).is_err());
    }

    #[test]
    fn jpeg_is_deterministic() {
        let img = sample(2);
        assert_eq!(jpeg_like(&img, 60).unwrap(), jpeg_like(&img, 60).unwrap());
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let img = sample(3);
        let out = add_noise(&img, 0.0, 7).unwrap();
        assert_eq!(out.pixels(), img.pixels());
    }

    #[test]
    fn noise_hits_target_psnr() {
        // sigma = 10^(-PSNR/20); clamping at the rails biases it slightly.
        let sigma = sigma_for_target_psnr(25.0);
        let mut sum = 0.0;
        let n = 20;
        for seed in 0..n {
            let img = sample(seed + 100);
            let out = add_noise(&img, sigma, seed).unwrap();
            sum += metrics::psnr(&out, &img).unwrap().db();
        }
        let mean = sum / n as f64;
        assert!((mean - 25.0).abs() <= 1.5, "mean PSNR {mean:.2} vs target 25");
    }

    #[test]
    fn different_seeds_give_different_noise() {
        let img = sample(4);
        let a = add_noise(&img, 0.1, 1).unwrap();
        let b = add_noise(&img, 0.1, 2).unwrap();
        assert_ne!(a.pixels(), b.pixels());
    }

    #[test]
    fn lattice_replaces_exact_count() {
        let img = sample(5);
        let cfg = LatticeConfig::new(2, 0).unwrap();
        let out = lattice_attack(&img, &cfg).unwrap();
        let changed = img
            .pixels()
            .iter()
            .zip(out.pixels())
            .filter(|(a, b)| a != b)
            .count();
        // 24x24 lattice positions; a random draw colliding with the original
        // value has probability zero in practice.
        assert_eq!(changed, 576);
        for y in 0..48 {
            for x in 0..48 {
                if y % 2 != 0 || x % 2 != 0 {
                    assert_eq!(img.get(y, x), out.get(y, x), "({y},{x}) touched off-lattice");
                }
            }
        }
    }

    #[test]
    fn lattice_interval_48_touches_one_pixel() {
        let img = sample(6);
        let cfg = LatticeConfig::new(48, 0).unwrap();
        let out = lattice_attack(&img, &cfg).unwrap();
        let changed = img.pixels().iter().zip(out.pixels()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 1);
    }

    #[test]
    fn lattice_psnr_increases_with_interval() {
        let img = sample(7);
        let mut prev = f64::NEG_INFINITY;
        for q in [2usize, 4, 8, 16] {
            let out = lattice_attack(&img, &LatticeConfig::new(q, 3).unwrap()).unwrap();
            let p = metrics::psnr(&out, &img).unwrap().db();
            assert!(p > prev, "PSNR {p:.2} at q={q} not above {prev:.2}");
            prev = p;
        }
    }

    #[test]
    fn lattice_rejects_small_interval() {
        assert!(LatticeConfig::new(1, 0).is_err());
    }
}
