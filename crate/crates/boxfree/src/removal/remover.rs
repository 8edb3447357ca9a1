//! Trained remover bundles and their inference path.

use crate::error::{Error, Result};
use crate::imaging::{concat_images, ChannelStack, Image, PatternKind, WatermarkPattern};
use crate::metrics::QueryCost;
use crate::netcore::NetHandle;

/// Whether a remover blanks the watermark or replaces it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemoverMode {
    Remove,
    Overwrite,
}

impl RemoverMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RemoverMode::Remove => "remove",
            RemoverMode::Overwrite => "overwrite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "remove" => Ok(RemoverMode::Remove),
            "overwrite" => Ok(RemoverMode::Overwrite),
            other => Err(Error::InvalidParameter(format!("unknown remover mode '{other}'"))),
        }
    }

    fn expected_kind(&self) -> PatternKind {
        match self {
            RemoverMode::Remove => PatternKind::Null,
            RemoverMode::Overwrite => PatternKind::Overwrite,
        }
    }
}

/// A trained removal network plus the pattern it concatenates at inference.
/// `concat_pattern` is `None` for the no-concatenation ablation variant.
#[derive(Debug, Clone)]
pub struct RemoverBundle {
    pub rnet: NetHandle,
    pub concat_pattern: Option<WatermarkPattern>,
    pub beta: (f64, f64),
    pub mode: RemoverMode,
    pub training_cost: QueryCost,
    pub provenance: String,
}

impl RemoverBundle {
    pub fn new(
        rnet: NetHandle,
        concat_pattern: Option<WatermarkPattern>,
        beta: (f64, f64),
        mode: RemoverMode,
        training_cost: QueryCost,
        provenance: String,
    ) -> Result<Self> {
        let bundle =
            RemoverBundle { rnet, concat_pattern, beta, mode, training_cost, provenance };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Type invariants, re-asserted whenever a bundle is loaded from disk.
    pub fn validate(&self) -> Result<()> {
        let expected_in = if self.concat_pattern.is_some() { 2 } else { 1 };
        if self.rnet.spec().input_channels != expected_in {
            return Err(Error::Spec(format!(
                "remover net has {} input channels, expected {expected_in}",
                self.rnet.spec().input_channels
            )));
        }
        if self.rnet.spec().output_channels() != 1 {
            return Err(Error::Spec("remover net must emit one channel".into()));
        }
        if let Some(p) = &self.concat_pattern {
            if p.kind() != self.mode.expected_kind() {
                return Err(Error::Pattern(format!(
                    "remover mode '{}' paired with a '{}' pattern",
                    self.mode.as_str(),
                    p.kind().as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Runs the remover on an image with its trained concatenation pattern.
pub fn apply_remover(bundle: &RemoverBundle, image: &Image) -> Result<Image> {
    apply_remover_with_channel(bundle, image, None)
}

/// Inference with the pattern channel substituted (ablation path). `None`
/// uses the bundle's trained pattern.
pub fn apply_remover_with_channel(
    bundle: &RemoverBundle,
    image: &Image,
    channel: Option<&Image>,
) -> Result<Image> {
    let input = match (&bundle.concat_pattern, channel) {
        (Some(p), None) => concat_images(image, p.image())?,
        (Some(_), Some(c)) => concat_images(image, c)?,
        (None, None) => ChannelStack::from_image(image),
        (None, Some(_)) => {
            return Err(Error::InvalidParameter(
                "this remover was trained without a pattern channel".into(),
            ))
        }
    };
    bundle.rnet.forward(&input)?.into_image_clamped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{null_watermark, render_overwrite_watermark, WatermarkStyle};
    use crate::netcore::{build_net, Activation, NetSpec};

    fn rnet(in_channels: usize) -> NetHandle {
        let spec =
            NetSpec::conv_stack(in_channels, &[6], 1, 3, Activation::LeakyRelu, Activation::Sigmoid);
        build_net(&spec, 0).unwrap()
    }

    #[test]
    fn mode_and_pattern_kind_must_agree() {
        let null = null_watermark((32, 32)).unwrap();
        let over = render_overwrite_watermark(WatermarkStyle::Text, 0, (32, 32)).unwrap();
        assert!(RemoverBundle::new(
            rnet(2),
            Some(null.clone()),
            (1e4, 1e4),
            RemoverMode::Remove,
            QueryCost::default(),
            String::new(),
        )
        .is_ok());
        assert!(RemoverBundle::new(
            rnet(2),
            Some(null),
            (1e4, 1e4),
            RemoverMode::Overwrite,
            QueryCost::default(),
            String::new(),
        )
        .is_err());
        assert!(RemoverBundle::new(
            rnet(2),
            Some(over),
            (1e4, 1e4),
            RemoverMode::Overwrite,
            QueryCost::default(),
            String::new(),
        )
        .is_ok());
    }

    #[test]
    fn channel_count_must_match_pattern_presence() {
        let null = null_watermark((32, 32)).unwrap();
        assert!(RemoverBundle::new(
            rnet(1),
            Some(null),
            (1e4, 1e4),
            RemoverMode::Remove,
            QueryCost::default(),
            String::new(),
        )
        .is_err());
        assert!(RemoverBundle::new(
            rnet(1),
            None,
            (1e4, 1e4),
            RemoverMode::Remove,
            QueryCost::default(),
            String::new(),
        )
        .is_ok());
    }

    #[test]
    fn apply_preserves_dimensions() {
        let null = null_watermark((32, 32)).unwrap();
        let bundle = RemoverBundle::new(
            rnet(2),
            Some(null),
            (1e4, 1e4),
            RemoverMode::Remove,
            QueryCost::default(),
            String::new(),
        )
        .unwrap();
        let img = Image::constant(32, 32, 0.5).unwrap();
        let out = apply_remover(&bundle, &img).unwrap();
        assert_eq!(out.dims(), (32, 32));
        assert!(out.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn no_concat_bundle_rejects_channel_override() {
        let bundle = RemoverBundle::new(
            rnet(1),
            None,
            (1e4, 1e4),
            RemoverMode::Remove,
            QueryCost::default(),
            String::new(),
        )
        .unwrap();
        let img = Image::constant(32, 32, 0.5).unwrap();
        assert!(apply_remover_with_channel(&bundle, &img, Some(&img)).is_err());
        assert!(apply_remover(&bundle, &img).is_ok());
    }
}
