//! Image-quality and verification metrics: PSNR, multi-scale structural
//! similarity, normalized correlation, and extraction success rates.
//!
//! Normalized correlation is the cosine of the raw pixel vectors rather than
//! Pearson correlation: the all-white null pattern has zero variance, which
//! would leave Pearson undefined for the most common verification target. A
//! Pearson variant with an epsilon guard is available for comparison.

use std::fmt;

use crate::error::{Error, Result};
use crate::imaging::{Image, WatermarkPattern};

/// PSNR result. Identical inputs yield a sentinel rather than a division by
/// zero; it renders as infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    /// Numeric value in dB; infinite for the identical sentinel.
    pub fn db(&self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => *v,
        }
    }

    pub fn is_identical(&self) -> bool {
        matches!(self, Psnr::Identical)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => write!(f, "inf"),
            Psnr::Db(v) => write!(f, "{v:.4}"),
        }
    }
}

/// Peak signal-to-noise ratio for [0,1]-range images: `10*log10(1/MSE)`.
pub fn psnr(x: &Image, y: &Image) -> Result<Psnr> {
    if !x.same_dims(y) {
        return Err(Error::Dimension(format!(
            "psnr dims {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let n = x.pixel_count() as f64;
    let mse: f64 =
        x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if mse == 0.0 {
        Ok(Psnr::Identical)
    } else {
        Ok(Psnr::Db(10.0 * (1.0 / mse).log10()))
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Canonical five-scale exponents; the first `scales` entries are
/// renormalized to sum to one when the image is too small for all five.
const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            w.push((-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_image(img: &Image) -> Plane {
        Plane { h: img.height(), w: img.width(), data: img.pixels().to_vec() }
    }

    /// 2x2 average pooling, truncating odd edges.
    fn downsample(&self) -> Plane {
        let h = self.h / 2;
        let w = self.w / 2;
        let mut data = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let base = 2 * y * self.w + 2 * x;
                data[y * w + x] = 0.25
                    * (self.data[base]
                        + self.data[base + 1]
                        + self.data[base + self.w]
                        + self.data[base + self.w + 1]);
            }
        }
        Plane { h, w, data }
    }
}

/// Mean luminance and contrast/structure terms over valid window positions.
fn ssim_terms(x: &Plane, y: &Plane, window: &[f64]) -> (f64, f64) {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let oh = x.h - SSIM_WINDOW + 1;
    let ow = x.w - SSIM_WINDOW + 1;
    let mut lum_sum = 0.0;
    let mut cs_sum = 0.0;
    for wy in 0..oh {
        for wx in 0..ow {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut mxx = 0.0;
            let mut myy = 0.0;
            let mut mxy = 0.0;
            let mut wi = 0;
            for ky in 0..SSIM_WINDOW {
                let row = (wy + ky) * x.w + wx;
                for kx in 0..SSIM_WINDOW {
                    let wv = window[wi];
                    wi += 1;
                    let xv = x.data[row + kx];
                    let yv = y.data[row + kx];
                    mx += wv * xv;
                    my += wv * yv;
                    mxx += wv * xv * xv;
                    myy += wv * yv * yv;
                    mxy += wv * xv * yv;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cxy = mxy - mx * my;
            lum_sum += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            cs_sum += (2.0 * cxy + c2) / (vx + vy + c2);
        }
    }
    let n = (oh * ow) as f64;
    (lum_sum / n, cs_sum / n)
}

/// Multi-scale structural similarity. The scale count adapts to the image:
/// three scales at 48x48, up to the canonical five for large images.
pub fn ms_ssim(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_dims(y) {
        return Err(Error::Dimension(format!(
            "ms_ssim dims {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let min_dim = x.height().min(x.width());
    if min_dim < 32 {
        return Err(Error::Dimension(format!(
            "ms_ssim needs at least 32x32 images, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    let mut scales = 1;
    while scales < 5 && (min_dim >> scales) >= SSIM_WINDOW {
        scales += 1;
    }
    let weight_sum: f64 = MSSSIM_WEIGHTS[..scales].iter().sum();
    let window = gaussian_window();
    let mut px = Plane::from_image(x);
    let mut py = Plane::from_image(y);
    let mut score = 1.0;
    for s in 0..scales {
        let (lum, cs) = ssim_terms(&px, &py, &window);
        let w = MSSSIM_WEIGHTS[s] / weight_sum;
        let term = if s + 1 == scales { (lum * cs).max(0.0) } else { cs.max(0.0) };
        score *= term.powf(w);
        if s + 1 < scales {
            px = px.downsample();
            py = py.downsample();
        }
    }
    Ok(score)
}

/// Normalized correlation as the cosine of the raw pixel vectors.
pub fn ncc(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_dims(y) {
        return Err(Error::Dimension(format!(
            "ncc dims {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (a, b) in x.pixels().iter().zip(y.pixels()) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "cosine correlation of a zero-norm image".into(),
        ));
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

/// Pearson correlation with an epsilon-guarded denominator, kept for
/// comparison against the cosine form. Not used by acceptance thresholds.
pub fn ncc_pearson_eps(x: &Image, y: &Image, eps: f64) -> Result<f64> {
    if !x.same_dims(y) {
        return Err(Error::Dimension("ncc_pearson dims differ".into()));
    }
    let n = x.pixel_count() as f64;
    let mx = x.mean();
    let my = y.mean();
    let mut dot = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.pixels().iter().zip(y.pixels()) {
        dot += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    Ok(dot / n / ((vx / n).sqrt() * (vy / n).sqrt() + eps))
}

/// Success threshold on normalized correlation.
#[derive(Debug, Clone, Copy)]
pub struct SuccessCriteria {
    pub nc_threshold: f64,
}

impl SuccessCriteria {
    pub fn new(nc_threshold: f64) -> Result<Self> {
        if !(0.0 < nc_threshold && nc_threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nc threshold must be in (0,1), got {nc_threshold}"
            )));
        }
        Ok(SuccessCriteria { nc_threshold })
    }
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria { nc_threshold: 0.96 }
    }
}

/// Fraction of extractions whose NC against the target exceeds the
/// threshold. The same routine computes extraction, removal, and overwrite
/// success rates depending on the target pattern. A zero-norm extraction
/// counts as a failure rather than an error.
pub fn success_rate(
    extracted: &[Image],
    target: &WatermarkPattern,
    criteria: &SuccessCriteria,
) -> Result<f64> {
    if extracted.is_empty() {
        return Err(Error::EmptyInput("success rate over an empty extraction list".into()));
    }
    let hits = extracted
        .iter()
        .filter(|e| ncc(e, target.image()).map(|v| v > criteria.nc_threshold).unwrap_or(false))
        .count();
    Ok(hits as f64 / extracted.len() as f64)
}

/// Accumulated query costs of a training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueryCost {
    pub onet: u64,
    pub enet: u64,
    pub estimator_calls: u64,
    pub optimizer_steps: u64,
}

impl fmt::Display for QueryCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "onet={} enet={} est_calls={} steps={}",
            self.onet, self.enet, self.estimator_calls, self.optimizer_steps
        )
    }
}

/// One evaluation row, mirroring the quantitative result tables.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub label: String,
    pub psnr: Option<Psnr>,
    pub ms_ssim: Option<f64>,
    pub sr_e: Option<f64>,
    pub sr_r: Option<f64>,
    pub sr_o: Option<f64>,
    pub queries: QueryCost,
    pub config_hash: String,
}

impl ReportRow {
    pub fn new(label: impl Into<String>) -> ReportRow {
        ReportRow {
            label: label.into(),
            psnr: None,
            ms_ssim: None,
            sr_e: None,
            sr_r: None,
            sr_o: None,
            queries: QueryCost::default(),
            config_hash: String::new(),
        }
    }

    pub const CSV_HEADER: &'static str =
        "label,psnr_db,ms_ssim,sr_e,sr_r,sr_o,onet_queries,enet_queries,estimator_calls,optimizer_steps,config_hash";

    pub fn to_csv(&self) -> String {
        fn opt(v: &Option<f64>) -> String {
            v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.psnr.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            opt(&self.ms_ssim),
            opt(&self.sr_e),
            opt(&self.sr_r),
            opt(&self.sr_o),
            self.queries.onet,
            self.queries.enet,
            self.queries.estimator_calls,
            self.queries.optimizer_steps,
            self.config_hash,
        )
    }

    pub fn from_csv(line: &str) -> Result<ReportRow> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 11 {
            return Err(Error::Checkpoint(format!(
                "report row has {} fields, expected 11: {line}",
                parts.len()
            )));
        }
        fn opt(s: &str) -> Result<Option<f64>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::Checkpoint(format!("bad report number '{s}': {e}")))
            }
        }
        let psnr = match parts[1] {
            "-" => None,
            "inf" => Some(Psnr::Identical),
            s => Some(Psnr::Db(s.parse::<f64>().map_err(|e| {
                Error::Checkpoint(format!("bad psnr '{s}': {e}"))
            })?)),
        };
        fn int(s: &str) -> Result<u64> {
            s.parse::<u64>().map_err(|e| Error::Checkpoint(format!("bad count '{s}': {e}")))
        }
        Ok(ReportRow {
            label: parts[0].to_string(),
            psnr,
            ms_ssim: opt(parts[2])?,
            sr_e: opt(parts[3])?,
            sr_r: opt(parts[4])?,
            sr_o: opt(parts[5])?,
            queries: QueryCost {
                onet: int(parts[6])?,
                enet: int(parts[7])?,
                estimator_calls: int(parts[8])?,
                optimizer_steps: int(parts[9])?,
            },
            config_hash: parts[10].to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{null_watermark, render_watermark, synth_dataset, WatermarkStyle};
    use proptest::prelude::*;

    fn sample_image(seed: u64) -> Image {
        synth_dataset(seed, 1, (48, 48)).unwrap().clean(0).clone()
    }

    #[test]
    fn psnr_identical_sentinel() {
        let x = sample_image(0);
        let p = psnr(&x, &x).unwrap();
        assert!(p.is_identical());
        assert!(p.db().is_infinite());
        assert_eq!(p.to_string(), "inf");
    }

    #[test]
    fn psnr_uniform_offset_is_exact() {
        let x = Image::constant(48, 48, 0.4).unwrap();
        let y = Image::constant(48, 48, 0.5).unwrap();
        let p = psnr(&x, &y).unwrap().db();
        assert!((p - 20.0).abs() < 1e-9, "expected 20 dB for 0.1 offset, got {p}");
    }

    #[test]
    fn psnr_matches_brute_force_mse() {
        let x = sample_image(1);
        let y = sample_image(2);
        let mut mse = 0.0;
        for yy in 0..48 {
            for xx in 0..48 {
                let d = x.get(yy, xx) - y.get(yy, xx);
                mse += d * d;
            }
        }
        mse /= 48.0 * 48.0;
        let expect = 10.0 * (1.0 / mse).log10();
        let got = psnr(&x, &y).unwrap().db();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn psnr_rejects_dim_mismatch() {
        let x = Image::constant(48, 48, 0.5).unwrap();
        let y = Image::constant(40, 48, 0.5).unwrap();
        assert!(psnr(&x, &y).is_err());
    }

    #[test]
    fn ms_ssim_self_is_one() {
        let x = sample_image(3);
        let v = ms_ssim(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "self similarity {v}");
    }

    #[test]
    fn ms_ssim_inverted_is_low() {
        let x = sample_image(4);
        let inv = x.map_clamped(|p| 1.0 - p);
        let v = ms_ssim(&x, &inv).unwrap();
        assert!(v < 0.2, "inverted similarity {v}");
    }

    #[test]
    fn ms_ssim_rejects_small_images() {
        let x = Image::constant(24, 24, 0.5).unwrap();
        assert!(ms_ssim(&x, &x).is_err());
    }

    #[test]
    fn ms_ssim_close_images_score_high() {
        let x = sample_image(5);
        let y = x.map_clamped(|p| p + 0.01);
        let v = ms_ssim(&x, &y).unwrap();
        assert!(v > 0.95, "near-identical similarity {v}");
    }

    #[test]
    fn ncc_identity_and_scale_invariance() {
        let x = sample_image(6);
        assert!((ncc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let half = x.map_clamped(|p| 0.5 * p);
        let v = ncc(&x, &half).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "cosine is scale invariant, got {v}");
    }

    #[test]
    fn ncc_constant_white_target_is_well_defined() {
        let white = null_watermark((48, 48)).unwrap();
        assert_eq!(ncc(white.image(), white.image()).unwrap(), 1.0);
    }

    #[test]
    fn ncc_zero_norm_errors() {
        let zero = Image::constant(48, 48, 0.0).unwrap();
        let x = sample_image(7);
        assert!(ncc(&zero, &x).is_err());
    }

    #[test]
    fn pearson_variant_available_behind_switch() {
        let x = sample_image(8);
        let y = sample_image(9);
        let v = ncc_pearson_eps(&x, &y, 1e-9).unwrap();
        assert!(v.abs() <= 1.0 + 1e-9);
        // Defined even against the constant target thanks to the epsilon.
        let white = null_watermark((48, 48)).unwrap();
        let w = ncc_pearson_eps(&x, white.image(), 1e-9).unwrap();
        assert!(w.abs() < 1.0);
    }

    #[test]
    fn success_rate_counts_exactly() {
        let target = render_watermark(WatermarkStyle::Logo, 0, (48, 48)).unwrap();
        let criteria = SuccessCriteria::default();
        let hit = target.image().clone();
        let miss = target.image().map_clamped(|p| 1.0 - p);
        assert_eq!(success_rate(&[hit.clone()], &target, &criteria).unwrap(), 1.0);
        // Inverted patterns fall well under the threshold.
        let inv_nc = ncc(&miss, target.image()).unwrap();
        assert!(inv_nc < 0.96, "inverted NC {inv_nc}");
        assert_eq!(success_rate(&[miss.clone()], &target, &criteria).unwrap(), 0.0);
        let mixed = vec![hit.clone(), hit.clone(), miss.clone(), hit];
        assert_eq!(success_rate(&mixed, &target, &criteria).unwrap(), 0.75);
        assert!(success_rate(&[], &target, &criteria).is_err());
    }

    #[test]
    fn criteria_validation() {
        assert!(SuccessCriteria::new(0.96).is_ok());
        assert!(SuccessCriteria::new(0.0).is_err());
        assert!(SuccessCriteria::new(1.0).is_err());
    }

    #[test]
    fn report_row_csv_roundtrip() {
        let mut row = ReportRow::new("egg blank");
        row.psnr = Some(Psnr::Db(31.25));
        row.ms_ssim = Some(0.9931);
        row.sr_r = Some(1.0);
        row.queries = QueryCost { onet: 10, enet: 650, estimator_calls: 10, optimizer_steps: 3 };
        row.config_hash = "deadbeef".into();
        let line = row.to_csv();
        let back = ReportRow::from_csv(&line).unwrap();
        assert_eq!(back.label, "egg blank");
        assert_eq!(back.queries, row.queries);
        assert_eq!(back.to_csv(), line, "serialization is stable");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn psnr_and_ncc_are_symmetric(seed_a in 0u64..500, seed_b in 0u64..500) {
            let x = sample_image(seed_a);
            let y = sample_image(seed_b);
            prop_assert_eq!(psnr(&x, &y).unwrap().db(), psnr(&y, &x).unwrap().db());
            let f = ncc(&x, &y).unwrap();
            let g = ncc(&y, &x).unwrap();
            prop_assert!((f - g).abs() < 1e-12);
            let ms_f = ms_ssim(&x, &y).unwrap();
            let ms_g = ms_ssim(&y, &x).unwrap();
            prop_assert!((ms_f - ms_g).abs() < 1e-12);
        }

        #[test]
        fn success_rate_monotone_in_threshold(seed in 0u64..100) {
            let target = render_watermark(WatermarkStyle::Logo, 1, (48, 48)).unwrap();
            let images: Vec<Image> = (0..6)
                .map(|i| {
                    let noise = sample_image(seed * 7 + i);
                    Image::from_clamped(
                        48,
                        48,
                        target
                            .image()
                            .pixels()
                            .iter()
                            .zip(noise.pixels())
                            .map(|(t, n)| 0.7 * t + 0.3 * n)
                            .collect(),
                    )
                    .unwrap()
                })
                .collect();
            let mut prev = 1.0_f64;
            for t in [0.5, 0.7, 0.9, 0.96, 0.99] {
                let c = SuccessCriteria::new(t).unwrap();
                let r = success_rate(&images, &target, &c).unwrap();
                prop_assert!(r <= prev + 1e-12, "rate rose from {prev} to {r} at threshold {t}");
                prev = r;
            }
        }
    }
}
