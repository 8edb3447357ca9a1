//! Query-counting black-box wrapper around a trained victim.
//!
//! The handle exposes exactly two entry points: `onet` (process-and-mark)
//! and `enet` (extraction, scenarios 1 and 2 only). No parameters,
//! gradients, or intermediate processed images are reachable through it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::victim::{extract, VictimBundle};

/// Threat-model tier for the extractor API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Extractor queryable; all activations before its head are ReLU.
    S1ReluOnly,
    /// Extractor queryable; activations unknown to the attacker.
    S2UnknownEnet,
    /// Extractor inaccessible.
    S3NoEnet,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::S1ReluOnly => "s1",
            Scenario::S2UnknownEnet => "s2",
            Scenario::S3NoEnet => "s3",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "s1" => Ok(Scenario::S1ReluOnly),
            "s2" => Ok(Scenario::S2UnknownEnet),
            "s3" => Ok(Scenario::S3NoEnet),
            other => Err(Error::InvalidParameter(format!("unknown scenario '{other}'"))),
        }
    }

    pub fn enet_available(&self) -> bool {
        !matches!(self, Scenario::S3NoEnet)
    }
}

/// Black-box victim access with exact, monotone query counters. Safe for
/// concurrent read-only use.
///
/// The `Debug` output deliberately shows only the scenario and counters.
pub struct OracleHandle {
    bundle: Arc<VictimBundle>,
    scenario: Scenario,
    onet_queries: AtomicU64,
    enet_queries: AtomicU64,
}

impl std::fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleHandle")
            .field("scenario", &self.scenario)
            .field("onet_queries", &self.onet_queries())
            .field("enet_queries", &self.enet_queries())
            .finish_non_exhaustive()
    }
}

impl OracleHandle {
    /// The only query entry points this handle exposes.
    pub const QUERY_SURFACE: [&'static str; 2] = ["onet", "enet"];

    /// Deployed model API: to-be-processed image in, processed-and-marked
    /// image out. The intermediate processed image never leaves the handle.
    pub fn onet(&self, a: &Image) -> Result<Image> {
        self.onet_queries.fetch_add(1, Ordering::Relaxed);
        self.bundle.onet(a)
    }

    /// Extraction API. Keyed victims apply their own key internally, the way
    /// a verification service would. Denied under scenario 3.
    pub fn enet(&self, x: &Image) -> Result<Image> {
        if !self.scenario.enet_available() {
            return Err(Error::AccessDenied(
                "extractor API is inaccessible under scenario s3".into(),
            ));
        }
        self.enet_queries.fetch_add(1, Ordering::Relaxed);
        extract(&self.bundle.enet, x, self.bundle.key.as_ref())
    }

    pub fn onet_queries(&self) -> u64 {
        self.onet_queries.load(Ordering::Relaxed)
    }

    pub fn enet_queries(&self) -> u64 {
        self.enet_queries.load(Ordering::Relaxed)
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    /// Image dimensions the oracle operates on (public deployment metadata).
    pub fn image_dims(&self) -> (usize, usize) {
        self.bundle.watermark.dims()
    }
}

/// Wraps a bundle in a scenario-tagged oracle. Scenario 1 is validated
/// against the extractor's activations.
pub fn make_oracle(bundle: Arc<VictimBundle>, scenario: Scenario) -> Result<OracleHandle> {
    if scenario == Scenario::S1ReluOnly && !bundle.enet.hidden_activations_all_relu() {
        return Err(Error::Scenario(
            "scenario s1 requires a ReLU-only extractor, but the bundle's extractor \
             uses other activations"
                .into(),
        ));
    }
    Ok(OracleHandle {
        bundle,
        scenario,
        onet_queries: AtomicU64::new(0),
        enet_queries: AtomicU64::new(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{render_watermark, synth_dataset, WatermarkStyle};
    use crate::netcore::{build_net, Activation, NetSpec, SkipFrom};
    use crate::victim::{train_ipnet, train_victim_joint, TrainOptions};

    fn tiny_bundle(enet_hidden: Activation) -> VictimBundle {
        let ds = synth_dataset(21, 6, (32, 32)).unwrap();
        let ipnet_spec = NetSpec::conv_stack(1, &[6], 1, 3, Activation::Relu, Activation::Sigmoid);
        let hnet_spec =
            NetSpec::conv_stack(2, &[8, 8], 1, 3, Activation::LeakyRelu, Activation::Sigmoid)
                .with_skip(SkipFrom::Input, 2);
        let enet_spec = NetSpec::conv_stack(1, &[8], 1, 3, enet_hidden, Activation::Sigmoid);
        let opts = TrainOptions { epochs: 1, batch_size: 4, seed: 8, ..Default::default() };
        let (ipnet, _) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let mark = render_watermark(WatermarkStyle::Checker, 2, (32, 32)).unwrap();
        train_victim_joint(&ipnet, &ds, &mark, &hnet_spec, &enet_spec, (1e4, 1e4, 1e4), &opts)
            .unwrap()
    }

    #[test]
    fn s3_denies_extractor_queries() {
        let bundle = Arc::new(tiny_bundle(Activation::Relu));
        let oracle = make_oracle(bundle, Scenario::S3NoEnet).unwrap();
        let img = Image::constant(32, 32, 0.5).unwrap();
        let err = oracle.enet(&img).unwrap_err();
        assert!(matches!(err, Error::AccessDenied(_)), "got {err}");
        assert_eq!(oracle.enet_queries(), 0, "denied queries are not counted");
    }

    #[test]
    fn counters_are_exact() {
        let bundle = Arc::new(tiny_bundle(Activation::Relu));
        let oracle = make_oracle(bundle, Scenario::S2UnknownEnet).unwrap();
        let ds = synth_dataset(3, 1, (32, 32)).unwrap();
        for _ in 0..10 {
            oracle.onet(ds.degraded(0)).unwrap();
        }
        for _ in 0..4 {
            oracle.enet(ds.clean(0)).unwrap();
        }
        assert_eq!(oracle.onet_queries(), 10);
        assert_eq!(oracle.enet_queries(), 4);
    }

    #[test]
    fn onet_matches_whitebox_composition() {
        // White-box cross-check, test-only: the sealed query equals the
        // direct composition of the bundle's nets.
        let bundle = Arc::new(tiny_bundle(Activation::Relu));
        let oracle = make_oracle(bundle.clone(), Scenario::S2UnknownEnet).unwrap();
        let a = synth_dataset(4, 1, (32, 32)).unwrap().degraded(0).clone();
        let via_oracle = oracle.onet(&a).unwrap();
        let direct = bundle.mark(&bundle.process(&a).unwrap()).unwrap();
        assert_eq!(via_oracle.pixels(), direct.pixels());
    }

    #[test]
    fn s1_rejects_non_relu_extractor() {
        let bundle = Arc::new(tiny_bundle(Activation::LeakyRelu));
        let err = make_oracle(bundle, Scenario::S1ReluOnly).unwrap_err();
        assert!(matches!(err, Error::Scenario(_)), "got {err}");
    }

    #[test]
    fn s1_accepts_relu_extractor() {
        let bundle = Arc::new(tiny_bundle(Activation::Relu));
        assert!(make_oracle(bundle, Scenario::S1ReluOnly).is_ok());
    }

    #[test]
    fn query_surface_is_two_entry_points() {
        assert_eq!(OracleHandle::QUERY_SURFACE, ["onet", "enet"]);
    }

    #[test]
    fn concurrent_queries_are_safe_and_counted() {
        use rayon::prelude::*;
        let bundle = Arc::new(tiny_bundle(Activation::Relu));
        let oracle = make_oracle(bundle, Scenario::S2UnknownEnet).unwrap();
        let img = Image::constant(32, 32, 0.5).unwrap();
        (0..32).into_par_iter().for_each(|_| {
            oracle.enet(&img).unwrap();
        });
        assert_eq!(oracle.enet_queries(), 32);
    }

    #[test]
    fn zero_weight_sigmoid_net_build_sanity() {
        // Keeps the oracle test file self-contained for non-ReLU spec data.
        let spec = NetSpec::conv_stack(1, &[4], 1, 3, Activation::Tanh, Activation::Sigmoid);
        assert!(build_net(&spec, 0).is_ok());
    }
}
