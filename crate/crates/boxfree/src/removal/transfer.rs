//! Transferable removal: proxy hider/extractor pairs trained on the
//! attacker's private data, then a remover trained white-box against the
//! frozen proxies and deployed against the real victim with zero queries.

use crate::error::{Error, Result};
use crate::imaging::{
    concat_channels, null_watermark, ChannelStack, DataTag, Image, PairedDataset,
    WatermarkPattern,
};
use crate::metrics::{self, QueryCost, SuccessCriteria};
use crate::netcore::{NetHandle, NetSpec};
use crate::removal::remover::{RemoverBundle, RemoverMode};
use crate::removal::trainer::{train_remover_core, RemoveGradRoute, RemoverTrainConfig};
use crate::victim::{train_embedder_extractor, Extractor, ExtractorSpecs, TrainOptions};

/// Privately trained hider/extractor pair standing in for the victim's.
#[derive(Debug, Clone)]
pub struct ProxySet {
    pub hnet: NetHandle,
    pub enet: NetHandle,
    pub watermark: WatermarkPattern,
    pub arch_tag: String,
    pub provenance: String,
}

impl ProxySet {
    pub fn param_hash(&self) -> u64 {
        self.hnet.param_hash() ^ self.enet.param_hash().rotate_left(27)
    }

    /// Embeds the proxy watermark: the private stand-in for marked outputs.
    pub fn mark(&self, clean: &Image) -> Result<Image> {
        let stacked = concat_channels(clean, &self.watermark)?;
        self.hnet.forward(&stacked)?.into_image_clamped()
    }

    pub fn extract(&self, image: &Image) -> Result<Image> {
        self.enet.forward(&ChannelStack::from_image(image))?.into_image_clamped()
    }
}

/// Trains a proxy hider/extractor pair on the attacker half, exactly the
/// joint recipe the victim uses but over the attacker's clean images.
/// Returns the set and its held-out extraction success rate.
pub fn train_proxies(
    attacker_data: &PairedDataset,
    proxy_watermark: &WatermarkPattern,
    hnet_spec: &NetSpec,
    enet_spec: &NetSpec,
    alpha: (f64, f64, f64),
    opts: &TrainOptions,
    arch_tag: &str,
) -> Result<(ProxySet, f64)> {
    if attacker_data.tag() == DataTag::VictimHalf {
        return Err(Error::Scenario(
            "proxies must be trained on the attacker's private data".into(),
        ));
    }
    let clean = attacker_data.clean_images();
    if clean.len() < 2 {
        return Err(Error::EmptyInput("proxy training needs at least two images".into()));
    }
    let holdout_n = (clean.len() / 8).clamp(1, 64);
    let (train, holdout) = clean.split_at(clean.len() - holdout_n);
    let (hnet, extractor, _losses) = train_embedder_extractor(
        train,
        proxy_watermark,
        hnet_spec,
        ExtractorSpecs::Plain(enet_spec.clone()),
        alpha,
        opts,
    )?;
    let enet = match extractor {
        Extractor::Plain(net) => net,
        Extractor::Keyed { .. } => unreachable!("plain specs produce a plain extractor"),
    };
    let set = ProxySet {
        hnet,
        enet,
        watermark: proxy_watermark.clone(),
        arch_tag: arch_tag.to_string(),
        provenance: format!(
            "proxies on {} (seed {})",
            attacker_data.tag().as_str(),
            attacker_data.seed()
        ),
    };
    let extracted: Vec<Image> = holdout
        .iter()
        .map(|b| set.mark(b).and_then(|s| set.extract(&s)))
        .collect::<Result<_>>()?;
    let sr_e =
        metrics::success_rate(&extracted, proxy_watermark, &SuccessCriteria::default())?;
    Ok((set, sr_e))
}

/// Trains a remover against the frozen proxies with exact gradients. The
/// victim is never queried; the bundle's query cost records zero.
pub fn train_transferable_remover(
    proxies: &ProxySet,
    attacker_data: &PairedDataset,
    rnet_spec: &NetSpec,
    cfg: &RemoverTrainConfig,
) -> Result<RemoverBundle> {
    if attacker_data.tag() == DataTag::VictimHalf {
        return Err(Error::Scenario(
            "the transferable remover trains on the attacker's private data".into(),
        ));
    }
    let hash_before = proxies.param_hash();
    let marked: Vec<Image> = attacker_data
        .pairs()
        .iter()
        .map(|(_, b)| proxies.mark(b))
        .collect::<Result<_>>()?;
    let null = null_watermark(marked[0].dims())?;
    let outcome = train_remover_core(
        &marked,
        Some(&null),
        &null,
        rnet_spec,
        cfg,
        RemoveGradRoute::Exact { extractor_net: &proxies.enet },
    )?;
    if proxies.param_hash() != hash_before {
        return Err(Error::Optimizer(
            "frozen proxy parameters changed during remover training".into(),
        ));
    }
    let cost = QueryCost {
        onet: 0,
        enet: 0,
        estimator_calls: 0,
        optimizer_steps: outcome.optimizer_steps,
    };
    RemoverBundle::new(
        outcome.rnet,
        Some(null),
        cfg.beta,
        RemoverMode::Remove,
        cost,
        format!("transferable remover via {} ({})", proxies.arch_tag, proxies.provenance),
    )
}
