//! Shared remover training loop.
//!
//! The quality loss gradient is exact reverse-mode through the remover. The
//! removal/overwrite loss contributes a gradient at the remover's output
//! that arrives either from zeroth-order estimation through a black-box
//! extraction query, or exactly through a frozen local extractor net; it is
//! summed with the quality gradient and injected into the same reverse pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{concat_channels, derive_seed, ChannelStack, Image, WatermarkPattern};
use crate::netcore::{adam_step, build_net, Activation, NetHandle, NetSpec, OptimState};
use crate::removal::estimator::{estimate_input_gradient, ZOConfig};
use crate::victim::{OracleHandle, TrainOptions};

/// Where the removal-loss gradient comes from.
pub(crate) enum RemoveGradRoute<'a> {
    /// Zeroth-order estimation through the oracle's extraction query.
    Estimated { oracle: &'a OracleHandle, zo: &'a ZOConfig },
    /// Exact reverse-mode through a frozen proxy extractor.
    Exact { extractor_net: &'a NetHandle },
}

/// Remover training knobs beyond the generic loop options.
#[derive(Debug, Clone, Copy)]
pub struct RemoverTrainConfig {
    pub beta: (f64, f64),
    pub opts: TrainOptions,
    /// Optimizer-step budget; bounds the query cost of estimated training.
    pub max_steps: Option<usize>,
}

impl Default for RemoverTrainConfig {
    fn default() -> Self {
        RemoverTrainConfig {
            beta: (1e4, 1e4),
            opts: TrainOptions { batch_size: 4, ..Default::default() },
            max_steps: None,
        }
    }
}

pub(crate) struct CoreOutcome {
    pub rnet: NetHandle,
    pub estimator_calls: u64,
    pub optimizer_steps: u64,
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

pub(crate) fn train_remover_core(
    marked: &[Image],
    concat: Option<&WatermarkPattern>,
    target: &WatermarkPattern,
    rnet_spec: &NetSpec,
    cfg: &RemoverTrainConfig,
    route: RemoveGradRoute<'_>,
) -> Result<CoreOutcome> {
    if marked.is_empty() {
        return Err(Error::EmptyInput("remover training needs marked images".into()));
    }
    let expected_in = if concat.is_some() { 2 } else { 1 };
    if rnet_spec.input_channels != expected_in {
        return Err(Error::Spec(format!(
            "remover spec has {} input channels, this training needs {expected_in}",
            rnet_spec.input_channels
        )));
    }
    if rnet_spec.final_activation() != Some(Activation::Sigmoid)
        || rnet_spec.output_channels() != 1
    {
        return Err(Error::Spec("remover net must emit one sigmoid channel".into()));
    }
    let dims = marked[0].dims();
    if target.dims() != dims {
        return Err(Error::Dimension("loss target dims must match the images".into()));
    }
    let n = (dims.0 * dims.1) as f64;
    let target_px = target.image().pixels();
    let mut rnet = build_net(rnet_spec, derive_seed(cfg.opts.seed, "rnet"))?;
    let mut optim = OptimState::new(rnet.param_count(), cfg.opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.opts.seed, "rnet-shuffle"));
    let mut estimator_calls: u64 = 0;
    let mut steps: u64 = 0;
    'training: for epoch in 0..cfg.opts.epochs {
        let order = shuffled_indices(marked.len(), &mut rng);
        for batch in order.chunks(cfg.opts.batch_size) {
            if let Some(max) = cfg.max_steps {
                if steps as usize >= max {
                    break 'training;
                }
            }
            let step_id = steps;
            let per_sample: Vec<(Vec<f64>, f64, u64)> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let m = &marked[i];
                    let input = match concat {
                        Some(p) => concat_channels(m, p)?,
                        None => ChannelStack::from_image(m),
                    };
                    let (out, tape) = rnet.forward_cached(&input)?;
                    let quality_loss = out
                        .data()
                        .iter()
                        .zip(m.pixels())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / n;
                    let mut gout = out.clone();
                    for (g, b) in gout.data_mut().iter_mut().zip(m.pixels()) {
                        *g = cfg.beta.0 * 2.0 * (*g - b) / n;
                    }
                    let (remove_loss, est_calls) = match &route {
                        RemoveGradRoute::Exact { extractor_net } => {
                            let (eout, etape) = extractor_net.forward_cached(&out)?;
                            let remove_loss = eout
                                .data()
                                .iter()
                                .zip(target_px)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                / n;
                            let mut ge = eout.clone();
                            for (g, t) in ge.data_mut().iter_mut().zip(target_px) {
                                *g = cfg.beta.1 * 2.0 * (*g - t) / n;
                            }
                            let (_, din) = extractor_net.backward(&etape, &ge)?;
                            for (g, d) in gout.data_mut().iter_mut().zip(din.data()) {
                                *g += d;
                            }
                            (remove_loss, 0u64)
                        }
                        RemoveGradRoute::Estimated { oracle, zo } => {
                            let out_img = out.clone().into_image_clamped()?;
                            let call_seed =
                                derive_seed(zo.seed, &format!("call/{step_id}/{slot}"));
                            let est = estimate_input_gradient(
                                |x| oracle.enet(x),
                                &out_img,
                                target,
                                &zo.with_seed(call_seed),
                            )?;
                            for (g, d) in gout.data_mut().iter_mut().zip(est.gradient.data()) {
                                *g += cfg.beta.1 * d;
                            }
                            (est.base_loss, 1u64)
                        }
                    };
                    let (pg, _) = rnet.backward(&tape, &gout)?;
                    let loss = cfg.beta.0 * quality_loss + cfg.beta.1 * remove_loss;
                    Ok((pg, loss, est_calls))
                })
                .collect::<Result<_>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; rnet.param_count()];
            let mut batch_loss = 0.0;
            for (pg, loss, est_calls) in &per_sample {
                for (g, p) in grads.iter_mut().zip(pg) {
                    *g += inv * p;
                }
                batch_loss += inv * loss;
                estimator_calls += est_calls;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "remover loss became {batch_loss} at epoch {epoch}"
                )));
            }
            adam_step(&mut optim, rnet.params_mut(), &grads)?;
            steps += 1;
        }
    }
    Ok(CoreOutcome { rnet, estimator_calls, optimizer_steps: steps })
}
