//! Zeroth-order input-gradient estimation through a black-box query.
//!
//! The estimator evaluates the scalar loss `||query(x) - target||^2 / N` at
//! the base point and at points perturbed along random unit directions, and
//! assembles `(1/k) * sum_i [(L(x + delta v_i) - L(x)) / delta] * v_i`.
//!
//! Directions are Gaussian draws orthonormalized in blocks of up to `d`
//! vectors. Within a full block the direction matrix is a complete
//! orthonormal basis, which removes the direction-sampling variance that
//! otherwise caps the achievable cosine alignment; for `k <= d` (the usual
//! training regime) it behaves like plain unit-norm Gaussian sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{derive_seed, ChannelStack, Image, WatermarkPattern};

/// Estimator configuration: perturbation size, direction count, antithetic
/// (central-difference) sampling, and the direction seed.
#[derive(Debug, Clone, Copy)]
pub struct ZOConfig {
    pub delta: f64,
    pub num_directions: usize,
    pub antithetic: bool,
    pub seed: u64,
}

impl ZOConfig {
    pub fn new(delta: f64, num_directions: usize, antithetic: bool, seed: u64) -> Result<Self> {
        let cfg = ZOConfig { delta, num_directions, antithetic, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-4..=1e-1).contains(&self.delta) {
            return Err(Error::InvalidParameter(format!(
                "perturbation delta must be in [1e-4, 1e-1], got {}",
                self.delta
            )));
        }
        if self.num_directions == 0 {
            return Err(Error::InvalidParameter("direction count must be >= 1".into()));
        }
        Ok(())
    }

    /// Oracle queries consumed per estimate: k+1, or 2k+1 antithetic.
    pub fn queries_per_call(&self) -> u64 {
        if self.antithetic {
            2 * self.num_directions as u64 + 1
        } else {
            self.num_directions as u64 + 1
        }
    }

    pub(crate) fn with_seed(&self, seed: u64) -> ZOConfig {
        ZOConfig { seed, ..*self }
    }
}

/// Flat-vector gradient estimate with its query accounting.
#[derive(Debug, Clone)]
pub struct FlatGradientEstimate {
    pub gradient: Vec<f64>,
    pub queries: u64,
    pub clamped_values: u64,
    pub base_loss: f64,
}

/// Image-shaped gradient estimate.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub gradient: ChannelStack,
    pub queries: u64,
    pub clamped_values: u64,
    pub base_loss: f64,
}

/// Unit-norm Gaussian directions, orthonormalized within blocks of up to
/// `d` vectors.
fn sample_directions(d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    };
    while dirs.len() < k {
        let block_n = d.min(k - dirs.len());
        let mut block: Vec<Vec<f64>> = (0..block_n).map(|_| gaussian(rng)).collect();
        for i in 0..block_n {
            loop {
                let (done, rest) = block.split_at_mut(i);
                let v = &mut rest[0];
                for u in done.iter() {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    for (vv, uu) in v.iter_mut().zip(u) {
                        *vv -= dot * uu;
                    }
                }
                let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-10 {
                    for vv in v.iter_mut() {
                        *vv /= norm;
                    }
                    break;
                }
                // A Gaussian draw collapsed under projection; redraw it.
                *v = gaussian(rng);
            }
        }
        dirs.append(&mut block);
    }
    dirs
}

fn clamp_unit(values: &mut [f64]) -> u64 {
    let mut clamped = 0;
    for v in values.iter_mut() {
        let c = v.clamp(0.0, 1.0);
        if c != *v {
            clamped += 1;
            *v = c;
        }
    }
    clamped
}

/// Core estimator over flat vectors. The loss closure is only ever handed
/// points inside [0,1]; perturbations are clamped there and the clamp count
/// recorded. Directional evaluations may run concurrently; assembly is a
/// deterministic reduction ordered by direction index.
pub fn estimate_loss_gradient<F>(
    loss: F,
    point: &[f64],
    cfg: &ZOConfig,
) -> Result<FlatGradientEstimate>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let d = point.len();
    if d == 0 {
        return Err(Error::EmptyInput("estimator needs a nonempty point".into()));
    }
    let k = cfg.num_directions;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "zo-directions"));
    let directions = sample_directions(d, k, &mut rng);
    let mut base = point.to_vec();
    let mut clamped_values = clamp_unit(&mut base);
    let base_loss = loss(&base)?;
    let mut queries = 1u64;
    let perturbed = |dir: &[f64], sign: f64| -> (Vec<f64>, u64) {
        let mut p: Vec<f64> = base.iter().zip(dir).map(|(b, v)| b + sign * cfg.delta * v).collect();
        let c = clamp_unit(&mut p);
        (p, c)
    };
    // (coefficient, clamp count) per direction, in index order.
    let evals: Vec<(f64, u64)> = directions
        .par_iter()
        .map(|dir| {
            if cfg.antithetic {
                let (plus, c_plus) = perturbed(dir, 1.0);
                let (minus, c_minus) = perturbed(dir, -1.0);
                let lp = loss(&plus)?;
                let lm = loss(&minus)?;
                Ok(((lp - lm) / (2.0 * cfg.delta), c_plus + c_minus))
            } else {
                let (plus, c_plus) = perturbed(dir, 1.0);
                let lp = loss(&plus)?;
                Ok(((lp - base_loss) / cfg.delta, c_plus))
            }
        })
        .collect::<Result<_>>()?;
    queries += if cfg.antithetic { 2 * k as u64 } else { k as u64 };
    let mut gradient = vec![0.0; d];
    for (dir, (coef, clamps)) in directions.iter().zip(&evals) {
        clamped_values += clamps;
        let scaled = coef / k as f64;
        for (g, v) in gradient.iter_mut().zip(dir) {
            *g += scaled * v;
        }
    }
    Ok(FlatGradientEstimate { gradient, queries, clamped_values, base_loss })
}

/// Estimates the input gradient of `||enet_query(x) - target||^2 / N` at an
/// image, through a black-box extraction query.
pub fn estimate_input_gradient<F>(
    enet_query: F,
    point: &Image,
    loss_target: &WatermarkPattern,
    cfg: &ZOConfig,
) -> Result<GradientEstimate>
where
    F: Fn(&Image) -> Result<Image> + Sync,
{
    if point.dims() != loss_target.dims() {
        return Err(Error::Dimension(format!(
            "estimation point {}x{} vs target {}x{}",
            point.height(),
            point.width(),
            loss_target.dims().0,
            loss_target.dims().1
        )));
    }
    let (h, w) = point.dims();
    let n = (h * w) as f64;
    let target = loss_target.image().pixels();
    let loss = |x: &[f64]| -> Result<f64> {
        let img = Image::new(h, w, x.to_vec())?;
        let out = enet_query(&img)?;
        Ok(out.pixels().iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    };
    let flat = estimate_loss_gradient(loss, point.pixels(), cfg)?;
    Ok(GradientEstimate {
        gradient: ChannelStack::from_data(1, h, w, flat.gradient)?,
        queries: flat.queries,
        clamped_values: flat.clamped_values,
        base_loss: flat.base_loss,
    })
}
