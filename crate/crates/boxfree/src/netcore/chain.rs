//! Scalar chain of weight/ReLU stages with a closed-form input gradient.
//!
//! The chain is `x -> relu -> *w1 -> relu -> *w2 -> ... -> relu = z`. On the
//! active branch (`x > 0` and every logit positive) the output is the plain
//! product `w1*...*wL*x`, and the input gradient collapses to
//! `dLoss/dz * z / x` — computable from observable values alone. Everywhere
//! else both the output and the gradient are exactly zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarReluChain {
    weights: Vec<f64>,
}

impl ScalarReluChain {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("chain depth must be at least 1".into()));
        }
        Ok(ScalarReluChain { weights })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Forward pass with ReLU semantics layer by layer.
    pub fn forward(&self, x: f64) -> f64 {
        let mut a = x.max(0.0);
        for &w in &self.weights {
            a = (w * a).max(0.0);
        }
        a
    }

    /// Whether `x` and every logit are strictly positive.
    pub fn branch_active(&self, x: f64) -> bool {
        if x <= 0.0 {
            return false;
        }
        let mut a = x;
        for &w in &self.weights {
            let h = w * a;
            if h <= 0.0 {
                return false;
            }
            a = h;
        }
        true
    }

    /// Closed-form input gradient from observable values: on the active
    /// branch `dLoss/dx = dLoss/dz * z / x`, otherwise exactly 0.
    pub fn gradient_analytic(&self, x: f64, dloss_dz: f64) -> f64 {
        if !self.branch_active(x) {
            return 0.0;
        }
        let z = self.forward(x);
        dloss_dz * z / x
    }

    /// Reverse-mode input gradient through the explicit ReLU gates.
    pub fn gradient_reverse(&self, x: f64, dloss_dz: f64) -> f64 {
        // Forward, recording logits.
        let mut logits = Vec::with_capacity(self.weights.len());
        let mut a = x.max(0.0);
        for &w in &self.weights {
            let h = w * a;
            logits.push(h);
            a = h.max(0.0);
        }
        // Reverse.
        let mut g = dloss_dz;
        for (&w, &h) in self.weights.iter().zip(&logits).rev() {
            if h <= 0.0 {
                return 0.0;
            }
            g *= w;
        }
        if x <= 0.0 {
            return 0.0;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_positive_chain_multiplies() {
        let chain = ScalarReluChain::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(chain.forward(1.0), 6.0);
    }

    #[test]
    fn negative_logit_kills_output() {
        let chain = ScalarReluChain::new(vec![2.0, -3.0]).unwrap();
        assert_eq!(chain.forward(1.0), 0.0);
    }

    #[test]
    fn negative_input_kills_output() {
        let chain = ScalarReluChain::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(chain.forward(-1.0), 0.0);
    }

    #[test]
    fn analytic_gradient_on_active_branch() {
        let chain = ScalarReluChain::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(chain.gradient_analytic(1.0, 1.0), 6.0);
    }

    #[test]
    fn inactive_branch_gradient_is_zero() {
        let chain = ScalarReluChain::new(vec![2.0, -3.0]).unwrap();
        assert_eq!(chain.gradient_analytic(1.0, 1.0), 0.0);
        assert_eq!(chain.gradient_reverse(1.0, 1.0), 0.0);
        let chain2 = ScalarReluChain::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(chain2.gradient_analytic(-0.5, 1.0), 0.0);
        assert_eq!(chain2.gradient_reverse(-0.5, 1.0), 0.0);
    }

    #[test]
    fn analytic_matches_weight_product_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut active_seen = 0;
        for trial in 0..1200 {
            let depth = rng.random_range(1..=8);
            // Signed weights rarely keep every logit positive at depth 8, so
            // a block of positive-weight chains exercises the active branch.
            let weights: Vec<f64> = if trial % 4 == 0 {
                (0..depth).map(|_| rng.random_range(0.1..2.0)).collect()
            } else {
                (0..depth).map(|_| rng.random_range(-2.0..2.0)).collect()
            };
            let chain = ScalarReluChain::new(weights.clone()).unwrap();
            let x: f64 = rng.random_range(-2.0..2.0);
            let dldz: f64 = rng.random_range(-2.0..2.0);
            let analytic = chain.gradient_analytic(x, dldz);
            if chain.branch_active(x) {
                active_seen += 1;
                let product: f64 = weights.iter().product::<f64>() * dldz;
                let denom = product.abs().max(1e-12);
                assert!(
                    (analytic - product).abs() / denom <= 1e-9,
                    "analytic {analytic} vs direct product {product}"
                );
            } else {
                assert_eq!(analytic, 0.0);
            }
        }
        assert!(active_seen > 50, "only {active_seen} active branches sampled");
    }
}
