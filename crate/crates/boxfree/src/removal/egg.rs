//! Extractor-gradient-guided removers: trained against the victim oracle
//! with zeroth-order estimated gradients for the removal loss.

use crate::error::{Error, Result};
use crate::imaging::{null_watermark, DataTag, Image, PairedDataset, PatternKind, WatermarkPattern};
use crate::metrics::QueryCost;
use crate::netcore::NetSpec;
use crate::removal::estimator::ZOConfig;
use crate::removal::remover::{RemoverBundle, RemoverMode};
use crate::removal::trainer::{train_remover_core, RemoveGradRoute, RemoverTrainConfig};
use crate::removal::transfer::ProxySet;
use crate::victim::{OracleHandle, Scenario};

fn check_attacker_data(data: &PairedDataset) -> Result<()> {
    if data.tag() == DataTag::VictimHalf {
        return Err(Error::Scenario(
            "attacker-side training must not touch the victim's data half".into(),
        ));
    }
    Ok(())
}

fn check_egg_scenario(oracle: &OracleHandle) -> Result<()> {
    if oracle.scenario() == Scenario::S3NoEnet {
        return Err(Error::Scenario(
            "the extractor-gradient-guided attack needs an extraction API (scenarios s1/s2)"
                .into(),
        ));
    }
    Ok(())
}

/// Queries the deployed model once per attacker image and caches the marked
/// outputs; the attacker owns these responses.
fn query_marked_outputs(oracle: &OracleHandle, data: &PairedDataset) -> Result<Vec<Image>> {
    data.pairs().iter().map(|(a, _)| oracle.onet(a)).collect()
}

fn provenance(data: &PairedDataset, what: &str) -> String {
    format!("{what} on {} (seed {})", data.tag().as_str(), data.seed())
}

/// Trains a removal network against the oracle. All victim-side access goes
/// through the handle's two query entry points; the removal-loss gradient at
/// the remover's output is estimated per sample.
pub fn train_egg_remover(
    oracle: &OracleHandle,
    attacker_data: &PairedDataset,
    rnet_spec: &NetSpec,
    zo: &ZOConfig,
    cfg: &RemoverTrainConfig,
) -> Result<RemoverBundle> {
    check_egg_scenario(oracle)?;
    check_attacker_data(attacker_data)?;
    zo.validate()?;
    let null = null_watermark(oracle.image_dims())?;
    let onet_before = oracle.onet_queries();
    let enet_before = oracle.enet_queries();
    let marked = query_marked_outputs(oracle, attacker_data)?;
    let outcome = train_remover_core(
        &marked,
        Some(&null),
        &null,
        rnet_spec,
        cfg,
        RemoveGradRoute::Estimated { oracle, zo },
    )?;
    let cost = QueryCost {
        onet: oracle.onet_queries() - onet_before,
        enet: oracle.enet_queries() - enet_before,
        estimator_calls: outcome.estimator_calls,
        optimizer_steps: outcome.optimizer_steps,
    };
    RemoverBundle::new(
        outcome.rnet,
        Some(null),
        cfg.beta,
        RemoverMode::Remove,
        cost,
        provenance(attacker_data, "egg remover"),
    )
}

/// No-concatenation ablation variant: a single-channel remover trained with
/// the same oracle supervision but no pattern channel.
pub fn train_egg_remover_no_concat(
    oracle: &OracleHandle,
    attacker_data: &PairedDataset,
    rnet_spec: &NetSpec,
    zo: &ZOConfig,
    cfg: &RemoverTrainConfig,
) -> Result<RemoverBundle> {
    check_egg_scenario(oracle)?;
    check_attacker_data(attacker_data)?;
    zo.validate()?;
    let null = null_watermark(oracle.image_dims())?;
    let onet_before = oracle.onet_queries();
    let enet_before = oracle.enet_queries();
    let marked = query_marked_outputs(oracle, attacker_data)?;
    let outcome = train_remover_core(
        &marked,
        None,
        &null,
        rnet_spec,
        cfg,
        RemoveGradRoute::Estimated { oracle, zo },
    )?;
    let cost = QueryCost {
        onet: oracle.onet_queries() - onet_before,
        enet: oracle.enet_queries() - enet_before,
        estimator_calls: outcome.estimator_calls,
        optimizer_steps: outcome.optimizer_steps,
    };
    RemoverBundle::new(
        outcome.rnet,
        None,
        cfg.beta,
        RemoverMode::Remove,
        cost,
        provenance(attacker_data, "egg remover (no concatenation)"),
    )
}

/// What supervises an overwriter: the victim oracle (estimated gradients) or
/// a private proxy set (exact gradients, zero victim queries).
pub enum OverwriteSource<'a> {
    Oracle(&'a OracleHandle, &'a ZOConfig),
    Proxies(&'a ProxySet),
}

/// Retargets the remover so extraction yields an attacker-chosen watermark:
/// the concatenated pattern and the loss target both become the overwrite
/// mark.
pub fn train_overwriter(
    source: OverwriteSource<'_>,
    attacker_data: &PairedDataset,
    overwrite_mark: &WatermarkPattern,
    rnet_spec: &NetSpec,
    cfg: &RemoverTrainConfig,
) -> Result<RemoverBundle> {
    check_attacker_data(attacker_data)?;
    if overwrite_mark.kind() != PatternKind::Overwrite {
        return Err(Error::Pattern("overwriting needs an overwrite-kind pattern".into()));
    }
    match source {
        OverwriteSource::Oracle(oracle, zo) => {
            check_egg_scenario(oracle)?;
            zo.validate()?;
            let onet_before = oracle.onet_queries();
            let enet_before = oracle.enet_queries();
            let marked = query_marked_outputs(oracle, attacker_data)?;
            let outcome = train_remover_core(
                &marked,
                Some(overwrite_mark),
                overwrite_mark,
                rnet_spec,
                cfg,
                RemoveGradRoute::Estimated { oracle, zo },
            )?;
            let cost = QueryCost {
                onet: oracle.onet_queries() - onet_before,
                enet: oracle.enet_queries() - enet_before,
                estimator_calls: outcome.estimator_calls,
                optimizer_steps: outcome.optimizer_steps,
            };
            RemoverBundle::new(
                outcome.rnet,
                Some(overwrite_mark.clone()),
                cfg.beta,
                RemoverMode::Overwrite,
                cost,
                provenance(attacker_data, "egg overwriter"),
            )
        }
        OverwriteSource::Proxies(proxies) => {
            let hash_before = proxies.param_hash();
            let marked: Vec<Image> = attacker_data
                .pairs()
                .iter()
                .map(|(_, b)| proxies.mark(b))
                .collect::<Result<_>>()?;
            let outcome = train_remover_core(
                &marked,
                Some(overwrite_mark),
                overwrite_mark,
                rnet_spec,
                cfg,
                RemoveGradRoute::Exact { extractor_net: &proxies.enet },
            )?;
            if proxies.param_hash() != hash_before {
                return Err(Error::Optimizer(
                    "frozen proxy parameters changed during overwriter training".into(),
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
                Some(overwrite_mark.clone()),
                cfg.beta,
                RemoverMode::Overwrite,
                cost,
                provenance(attacker_data, "transferable overwriter"),
            )
        }
    }
}
