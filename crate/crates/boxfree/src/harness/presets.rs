//! Named network architecture presets used by experiment configs.
//!
//! Names encode structure: `proc`/`hide`/`solo`/`ext` role, layer count,
//! channel width. Hiders and removers take image+pattern (2 channels) and
//! carry an input skip into their head so identity-like mappings train
//! quickly; `solo*` is the single-channel remover for the no-concatenation
//! ablation.

use crate::error::{Error, Result};
use crate::netcore::{Activation, NetSpec, SkipFrom};

pub const PRESET_NAMES: [&str; 12] = [
    "proc2w8", "proc3w12", "hide2w6", "hide3w10", "hide4w12", "hide5w8", "solo3w10", "solo4w12",
    "ext2w6", "ext3w8", "ext3w10", "ext4w12",
];

pub fn net_preset(name: &str) -> Result<NetSpec> {
    use Activation::{LeakyRelu, Relu, Sigmoid};
    let spec = match name {
        // Image-processing nets: 1 channel in, sigmoid image out.
        "proc2w8" => NetSpec::conv_stack(1, &[8], 1, 3, Relu, Sigmoid),
        "proc3w12" => NetSpec::conv_stack(1, &[12, 12], 1, 3, Relu, Sigmoid),
        // Hiders / removers: image+pattern in, input skip into the head.
        "hide2w6" => {
            NetSpec::conv_stack(2, &[6], 1, 3, LeakyRelu, Sigmoid).with_skip(SkipFrom::Input, 1)
        }
        "hide3w10" => NetSpec::conv_stack(2, &[10, 10], 1, 3, LeakyRelu, Sigmoid)
            .with_skip(SkipFrom::Input, 2),
        "hide4w12" => NetSpec::conv_stack(2, &[12, 12, 12], 1, 3, LeakyRelu, Sigmoid)
            .with_skip(SkipFrom::Input, 3),
        "hide5w8" => NetSpec::conv_stack(2, &[8, 8, 8, 8], 1, 3, LeakyRelu, Sigmoid)
            .with_skip(SkipFrom::Input, 4),
        // Single-channel removers for the no-concatenation ablation.
        "solo3w10" => NetSpec::conv_stack(1, &[10, 10], 1, 3, LeakyRelu, Sigmoid)
            .with_skip(SkipFrom::Input, 2),
        "solo4w12" => NetSpec::conv_stack(1, &[12, 12, 12], 1, 3, LeakyRelu, Sigmoid)
            .with_skip(SkipFrom::Input, 3),
        // Extractors: ReLU-hidden ones satisfy the scenario-1 constraint.
        "ext2w6" => NetSpec::conv_stack(1, &[6], 1, 3, Relu, Sigmoid),
        "ext3w8" => NetSpec::conv_stack(1, &[8, 8], 1, 3, Relu, Sigmoid),
        "ext3w10" => NetSpec::conv_stack(1, &[10, 10], 1, 3, Relu, Sigmoid),
        "ext4w12" => NetSpec::conv_stack(1, &[12, 12, 12], 1, 3, LeakyRelu, Sigmoid),
        other => {
            return Err(Error::config(format!(
                "unknown architecture preset '{other}' (available: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(spec)
}

/// Subnet trio for the keyed extractor: image branch, key branch (both
/// emitting `width` feature channels), and the summing head.
pub fn keyed_extractor_presets(width: usize) -> (NetSpec, NetSpec, NetSpec) {
    use Activation::{Relu, Sigmoid};
    let e_a = NetSpec::conv_stack(1, &[width], width, 3, Relu, Relu);
    let e_b = NetSpec::conv_stack(1, &[width], width, 3, Relu, Relu);
    let e_c = NetSpec::conv_stack(width, &[width], 1, 3, Relu, Sigmoid);
    (e_a, e_b, e_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate() {
        for name in PRESET_NAMES {
            let spec = net_preset(name).unwrap();
            spec.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_preset_names_available_ones() {
        let err = net_preset("resnet900").unwrap_err().to_string();
        assert!(err.contains("hide4w12"), "error should list presets: {err}");
    }

    #[test]
    fn preset_families_have_expected_channels() {
        assert_eq!(net_preset("hide4w12").unwrap().input_channels, 2);
        assert_eq!(net_preset("solo4w12").unwrap().input_channels, 1);
        assert_eq!(net_preset("ext3w10").unwrap().input_channels, 1);
        assert!(net_preset("ext3w10").unwrap().hidden_activations_all_relu());
        assert!(!net_preset("ext4w12").unwrap().hidden_activations_all_relu());
    }

    #[test]
    fn keyed_presets_chain() {
        let (a, b, c) = keyed_extractor_presets(8);
        assert_eq!(a.output_channels(), 8);
        assert_eq!(b.output_channels(), 8);
        assert_eq!(c.input_channels, 8);
        a.validate().unwrap();
        b.validate().unwrap();
        c.validate().unwrap();
    }
}
