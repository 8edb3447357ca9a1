//! Black-box watermark removal attacks: the extractor-gradient-guided
//! remover (estimated gradients through the oracle), the transferable
//! remover (proxy-trained, zero victim queries), watermark overwriting, and
//! the concatenation ablation.

pub mod egg;
pub mod estimator;
pub mod remover;
mod trainer;
pub mod transfer;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::{derive_seed, Image};
use crate::metrics::{self, ReportRow, SuccessCriteria};
use crate::netcore::ScalarReluChain;
use crate::victim::VictimBundle;

pub use egg::{train_egg_remover, train_egg_remover_no_concat, train_overwriter, OverwriteSource};
pub use estimator::{
    estimate_input_gradient, estimate_loss_gradient, FlatGradientEstimate, GradientEstimate,
    ZOConfig,
};
pub use remover::{apply_remover, apply_remover_with_channel, RemoverBundle, RemoverMode};
pub use trainer::RemoverTrainConfig;
pub use transfer::{train_proxies, train_transferable_remover, ProxySet};

/// Outcome of checking the closed-form ReLU-chain gradient against exact
/// reverse-mode differentiation over random chains.
#[derive(Debug, Clone, Copy)]
pub struct S1Report {
    pub trials: u64,
    pub active_branches: u64,
    pub inactive_branches: u64,
    pub max_rel_err_active: f64,
    pub max_abs_err_inactive: f64,
}

impl S1Report {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err_active <= tol && self.max_abs_err_inactive == 0.0
    }
}

/// Samples random scalar ReLU chains (weights, input, and upstream loss
/// gradient) and compares the closed-form input gradient against exact
/// reverse-mode. A quarter of the chains use positive-only weights so the
/// active branch is well represented at every depth.
pub fn verify_s1_analytic(max_depth: usize, trials: usize, seed: u64) -> Result<S1Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "s1-verify"));
    let mut report = S1Report {
        trials: trials as u64,
        active_branches: 0,
        inactive_branches: 0,
        max_rel_err_active: 0.0,
        max_abs_err_inactive: 0.0,
    };
    for trial in 0..trials {
        let depth = rng.random_range(1..=max_depth.max(1));
        let weights: Vec<f64> = if trial % 4 == 0 {
            (0..depth).map(|_| rng.random_range(0.05..2.0)).collect()
        } else {
            (0..depth).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let chain = ScalarReluChain::new(weights)?;
        let x: f64 = rng.random_range(-2.0..2.0);
        let dldz: f64 = rng.random_range(-2.0..2.0);
        let analytic = chain.gradient_analytic(x, dldz);
        let reverse = chain.gradient_reverse(x, dldz);
        if chain.branch_active(x) {
            report.active_branches += 1;
            let denom = reverse.abs().max(analytic.abs()).max(f64::MIN_POSITIVE);
            let rel = (analytic - reverse).abs() / denom;
            report.max_rel_err_active = report.max_rel_err_active.max(rel);
        } else {
            report.inactive_branches += 1;
            report.max_abs_err_inactive =
                report.max_abs_err_inactive.max(analytic.abs()).max(reverse.abs());
        }
    }
    Ok(report)
}

/// Attack-quality evaluation of a remover against a victim: image quality
/// is measured between the remover's output and its marked input.
#[derive(Debug, Clone, Copy)]
pub struct RemoverEval {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    /// Fraction of outputs whose extraction is blank.
    pub sr_r: f64,
    /// Fraction whose extraction matches the overwrite mark (overwrite mode).
    pub sr_o: Option<f64>,
    /// Fraction whose extraction still matches the victim's mark.
    pub sr_e_residual: f64,
}

/// Runs the attack end to end on evaluation sources: marked outputs from
/// the victim, remover applied, extraction judged against blank, the
/// victim's mark, and (for overwriters) the overwrite mark.
pub fn evaluate_remover(
    victim: &VictimBundle,
    remover: &RemoverBundle,
    eval_sources: &[Image],
    criteria: &SuccessCriteria,
) -> Result<RemoverEval> {
    if eval_sources.is_empty() {
        return Err(crate::error::Error::EmptyInput("remover evaluation needs images".into()));
    }
    let null = crate::imaging::null_watermark(victim.watermark.dims())?;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut extracted = Vec::with_capacity(eval_sources.len());
    for a in eval_sources {
        let b_prime = victim.onet(a)?;
        let b_second = apply_remover(remover, &b_prime)?;
        psnr_sum += metrics::psnr(&b_second, &b_prime)?.db();
        ssim_sum += metrics::ms_ssim(&b_second, &b_prime)?;
        extracted.push(victim.extract_own(&b_second)?);
    }
    let n = eval_sources.len() as f64;
    let sr_o = match (&remover.mode, &remover.concat_pattern) {
        (RemoverMode::Overwrite, Some(p)) => Some(metrics::success_rate(&extracted, p, criteria)?),
        _ => None,
    };
    Ok(RemoverEval {
        psnr_db: psnr_sum / n,
        ms_ssim: ssim_sum / n,
        sr_r: metrics::success_rate(&extracted, &null, criteria)?,
        sr_o,
        sr_e_residual: metrics::success_rate(&extracted, &victim.watermark, criteria)?,
    })
}

/// Fraction of clean (non-watermarked) images whose extraction stays blank
/// after the remover processes them; the false-positive control.
pub fn remover_clean_blank_rate(
    victim: &VictimBundle,
    remover: &RemoverBundle,
    clean: &[Image],
    criteria: &SuccessCriteria,
) -> Result<f64> {
    if clean.is_empty() {
        return Err(crate::error::Error::EmptyInput("blank-rate needs images".into()));
    }
    let null = crate::imaging::null_watermark(victim.watermark.dims())?;
    let mut hits = 0usize;
    for b in clean {
        let out = apply_remover(remover, b)?;
        let ex = victim.extract_own(&out)?;
        if metrics::ncc(&ex, null.image()).map(|v| v > criteria.nc_threshold).unwrap_or(false) {
            hits += 1;
        }
    }
    Ok(hits as f64 / clean.len() as f64)
}

/// Pattern-channel substitution for the concatenation ablation.
pub enum AblationChannel<'a> {
    /// Evaluate with the pattern the bundle was trained with.
    Trained,
    /// Substitute a fixed image into the pattern channel.
    Fixed(&'a Image),
    /// Substitute a different image per evaluation sample.
    PerSample(&'a [Image]),
}

/// Evaluates a trained remover with the concatenated channel substituted,
/// reporting output quality against the marked inputs and the removal rate
/// through the victim's extractor.
pub fn ablation_concat(
    bundle: &RemoverBundle,
    channel: AblationChannel<'_>,
    marked_eval: &[Image],
    victim: &VictimBundle,
    criteria: &SuccessCriteria,
    label: &str,
) -> Result<ReportRow> {
    let null = crate::imaging::null_watermark(victim.watermark.dims())?;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut extracted = Vec::with_capacity(marked_eval.len());
    for (i, b_prime) in marked_eval.iter().enumerate() {
        let override_img = match &channel {
            AblationChannel::Trained => None,
            AblationChannel::Fixed(img) => Some(*img),
            AblationChannel::PerSample(list) => Some(&list[i]),
        };
        let b_second = apply_remover_with_channel(bundle, b_prime, override_img)?;
        psnr_sum += metrics::psnr(&b_second, b_prime)?.db();
        ssim_sum += metrics::ms_ssim(&b_second, b_prime)?;
        extracted.push(victim.extract_own(&b_second)?);
    }
    let n = marked_eval.len() as f64;
    let mut row = ReportRow::new(label);
    row.psnr = Some(metrics::Psnr::Db(psnr_sum / n));
    row.ms_ssim = Some(ssim_sum / n);
    row.sr_r = Some(metrics::success_rate(&extracted, &null, criteria)?);
    row.queries = bundle.training_cost;
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s1_verification_over_random_chains() {
        let report = verify_s1_analytic(8, 10_000, 0).unwrap();
        assert_eq!(report.trials, 10_000);
        assert!(report.active_branches > 500, "{} active", report.active_branches);
        assert!(report.inactive_branches > 500, "{} inactive", report.inactive_branches);
        assert!(
            report.max_rel_err_active <= 1e-9,
            "max relative error {}",
            report.max_rel_err_active
        );
        assert_eq!(report.max_abs_err_inactive, 0.0, "inactive branches must be exactly zero");
        assert!(report.passed(1e-9));
    }

    #[test]
    fn s1_verification_is_deterministic() {
        let a = verify_s1_analytic(6, 500, 4).unwrap();
        let b = verify_s1_analytic(6, 500, 4).unwrap();
        assert_eq!(a.active_branches, b.active_branches);
        assert_eq!(a.max_rel_err_active, b.max_rel_err_active);
    }
}
