//! On-disk layout for trained victim and remover bundles: network
//! checkpoints, pattern/key images, and a key=value manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{read_image, write_image, PatternKind, WatermarkPattern};
use crate::metrics::QueryCost;
use crate::netcore::{load_params, save_params};
use crate::removal::{RemoverBundle, RemoverMode};
use crate::victim::{Extractor, ExtractorKey, TrainingLog, VictimBundle};

fn write_kv(path: &Path, pairs: &[(&str, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in pairs {
        let _ = writeln!(text, "{k} = {v}");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

fn kv_req<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("{}: missing field '{key}'", path.display())))
}

fn parse_field<T: std::str::FromStr>(s: &str, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| Error::Checkpoint(format!("bad value for '{key}': {e}")))
}

pub fn save_victim_bundle(bundle: &VictimBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_params(&bundle.ipnet, &dir.join("ipnet.net"))?;
    save_params(&bundle.hnet, &dir.join("hnet.net"))?;
    match &bundle.enet {
        Extractor::Plain(net) => save_params(net, &dir.join("enet.net"))?,
        Extractor::Keyed { e_a, e_b, e_c } => {
            save_params(e_a, &dir.join("enet_a.net"))?;
            save_params(e_b, &dir.join("enet_b.net"))?;
            save_params(e_c, &dir.join("enet_c.net"))?;
        }
    }
    write_image(bundle.watermark.image(), &dir.join("watermark.png"))?;
    let mut pairs = vec![
        ("kind", "victim".to_string()),
        ("alpha1", bundle.alpha.0.to_string()),
        ("alpha2", bundle.alpha.1.to_string()),
        ("alpha3", bundle.alpha.2.to_string()),
        ("watermark_kind", bundle.watermark.kind().as_str().to_string()),
        ("keyed", bundle.enet.is_keyed().to_string()),
    ];
    if let Some(key) = &bundle.key {
        write_image(key.image(), &dir.join("key.png"))?;
        pairs.push(("key_id", key.id().to_string()));
    }
    if let Some(v) = bundle.training_log.holdout_sr_e {
        pairs.push(("holdout_sr_e", format!("{v:.6}")));
    }
    if let Some(v) = bundle.training_log.fidelity_psnr {
        pairs.push(("fidelity_psnr", format!("{v:.6}")));
    }
    if let Some(v) = bundle.training_log.blank_rate {
        pairs.push(("blank_rate", format!("{v:.6}")));
    }
    if let Some(v) = bundle.training_log.ipnet_holdout_psnr {
        pairs.push(("ipnet_holdout_psnr", format!("{v:.6}")));
    }
    write_kv(&dir.join("bundle.txt"), &pairs)
}

pub fn load_victim_bundle(dir: &Path) -> Result<VictimBundle> {
    let meta_path = dir.join("bundle.txt");
    let meta = read_kv(&meta_path)?;
    if kv_req(&meta, "kind", &meta_path)? != "victim" {
        return Err(Error::Checkpoint(format!("{}: not a victim bundle", dir.display())));
    }
    let ipnet = load_params(&dir.join("ipnet.net"))?;
    let hnet = load_params(&dir.join("hnet.net"))?;
    let keyed: bool = parse_field(kv_req(&meta, "keyed", &meta_path)?, "keyed")?;
    let enet = if keyed {
        Extractor::Keyed {
            e_a: load_params(&dir.join("enet_a.net"))?,
            e_b: load_params(&dir.join("enet_b.net"))?,
            e_c: load_params(&dir.join("enet_c.net"))?,
        }
    } else {
        Extractor::Plain(load_params(&dir.join("enet.net"))?)
    };
    let kind = PatternKind::parse(kv_req(&meta, "watermark_kind", &meta_path)?)?;
    let watermark = WatermarkPattern::new(read_image(&dir.join("watermark.png"))?, kind)?;
    let key = if keyed {
        let id: u64 = parse_field(kv_req(&meta, "key_id", &meta_path)?, "key_id")?;
        Some(ExtractorKey::from_image(read_image(&dir.join("key.png"))?, id))
    } else {
        None
    };
    let alpha = (
        parse_field(kv_req(&meta, "alpha1", &meta_path)?, "alpha1")?,
        parse_field(kv_req(&meta, "alpha2", &meta_path)?, "alpha2")?,
        parse_field(kv_req(&meta, "alpha3", &meta_path)?, "alpha3")?,
    );
    let get_f64 = |key: &str| -> Result<Option<f64>> {
        meta.get(key).map(|s| parse_field(s, key)).transpose()
    };
    let training_log = TrainingLog {
        ipnet_holdout_psnr: get_f64("ipnet_holdout_psnr")?,
        joint_epoch_losses: Vec::new(),
        holdout_sr_e: get_f64("holdout_sr_e")?,
        fidelity_psnr: get_f64("fidelity_psnr")?,
        blank_rate: get_f64("blank_rate")?,
    };
    Ok(VictimBundle { ipnet, hnet, enet, watermark, key, alpha, training_log })
}

pub fn save_remover_bundle(bundle: &RemoverBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_params(&bundle.rnet, &dir.join("rnet.net"))?;
    let mut pairs = vec![
        ("kind", "remover".to_string()),
        ("mode", bundle.mode.as_str().to_string()),
        ("beta1", bundle.beta.0.to_string()),
        ("beta2", bundle.beta.1.to_string()),
        ("concat", bundle.concat_pattern.is_some().to_string()),
        ("onet_queries", bundle.training_cost.onet.to_string()),
        ("enet_queries", bundle.training_cost.enet.to_string()),
        ("estimator_calls", bundle.training_cost.estimator_calls.to_string()),
        ("optimizer_steps", bundle.training_cost.optimizer_steps.to_string()),
        ("provenance", bundle.provenance.clone()),
    ];
    if let Some(p) = &bundle.concat_pattern {
        write_image(p.image(), &dir.join("pattern.png"))?;
        pairs.push(("pattern_kind", p.kind().as_str().to_string()));
    }
    write_kv(&dir.join("remover.txt"), &pairs)
}

pub fn load_remover_bundle(dir: &Path) -> Result<RemoverBundle> {
    let meta_path = dir.join("remover.txt");
    let meta = read_kv(&meta_path)?;
    if kv_req(&meta, "kind", &meta_path)? != "remover" {
        return Err(Error::Checkpoint(format!("{}: not a remover bundle", dir.display())));
    }
    let rnet = load_params(&dir.join("rnet.net"))?;
    let concat: bool = parse_field(kv_req(&meta, "concat", &meta_path)?, "concat")?;
    let pattern = if concat {
        let kind = PatternKind::parse(kv_req(&meta, "pattern_kind", &meta_path)?)?;
        Some(WatermarkPattern::new(read_image(&dir.join("pattern.png"))?, kind)?)
    } else {
        None
    };
    let mode = RemoverMode::parse(kv_req(&meta, "mode", &meta_path)?)?;
    let beta = (
        parse_field(kv_req(&meta, "beta1", &meta_path)?, "beta1")?,
        parse_field(kv_req(&meta, "beta2", &meta_path)?, "beta2")?,
    );
    let cost = QueryCost {
        onet: parse_field(kv_req(&meta, "onet_queries", &meta_path)?, "onet_queries")?,
        enet: parse_field(kv_req(&meta, "enet_queries", &meta_path)?, "enet_queries")?,
        estimator_calls: parse_field(
            kv_req(&meta, "estimator_calls", &meta_path)?,
            "estimator_calls",
        )?,
        optimizer_steps: parse_field(
            kv_req(&meta, "optimizer_steps", &meta_path)?,
            "optimizer_steps",
        )?,
    };
    let provenance = meta.get("provenance").cloned().unwrap_or_default();
    // Re-asserts the mode/pattern and channel-count invariants on load.
    RemoverBundle::new(rnet, pattern, beta, mode, cost, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{null_watermark, render_watermark, synth_dataset, WatermarkStyle};
    use crate::netcore::{build_net, Activation, NetSpec};
    use crate::victim::{train_ipnet, train_victim_joint, TrainOptions};

    fn quick_victim() -> VictimBundle {
        let ds = synth_dataset(31, 6, (32, 32)).unwrap();
        let ipnet_spec = NetSpec::conv_stack(1, &[6], 1, 3, Activation::Relu, Activation::Sigmoid);
        let hnet_spec = NetSpec::conv_stack(2, &[8], 1, 3, Activation::LeakyRelu, Activation::Sigmoid);
        let enet_spec = NetSpec::conv_stack(1, &[8], 1, 3, Activation::Relu, Activation::Sigmoid);
        let opts = TrainOptions { epochs: 1, batch_size: 4, seed: 6, ..Default::default() };
        let (ipnet, _) = train_ipnet(&ds, &ipnet_spec, &opts).unwrap();
        let mark = render_watermark(WatermarkStyle::Checker, 1, (32, 32)).unwrap();
        train_victim_joint(&ipnet, &ds, &mark, &hnet_spec, &enet_spec, (1e4, 1e4, 1e4), &opts)
            .unwrap()
    }

    #[test]
    fn victim_bundle_roundtrip_preserves_forward() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = quick_victim();
        save_victim_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_victim_bundle(dir.path()).unwrap();
        let a = synth_dataset(32, 1, (32, 32)).unwrap().degraded(0).clone();
        assert_eq!(
            bundle.onet(&a).unwrap().pixels(),
            loaded.onet(&a).unwrap().pixels(),
            "reloaded bundle must reproduce the deployed composition"
        );
        assert_eq!(loaded.alpha, bundle.alpha);
        // The checker pattern is binary, so the PNG round trip is exact.
        assert_eq!(loaded.watermark.image().pixels(), bundle.watermark.image().pixels());
        assert_eq!(loaded.training_log.holdout_sr_e, bundle.training_log.holdout_sr_e);
    }

    #[test]
    fn remover_bundle_roundtrip_checks_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let rnet_spec =
            NetSpec::conv_stack(2, &[6], 1, 3, Activation::LeakyRelu, Activation::Sigmoid);
        let bundle = RemoverBundle::new(
            build_net(&rnet_spec, 0).unwrap(),
            Some(null_watermark((32, 32)).unwrap()),
            (1e4, 1e4),
            crate::removal::RemoverMode::Remove,
            QueryCost { onet: 5, enet: 650, estimator_calls: 10, optimizer_steps: 3 },
            "unit test".into(),
        )
        .unwrap();
        save_remover_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_remover_bundle(dir.path()).unwrap();
        assert_eq!(loaded.rnet.params(), bundle.rnet.params());
        assert_eq!(loaded.training_cost, bundle.training_cost);
        assert_eq!(loaded.provenance, "unit test");

        // Corrupt the mode so the kind invariant trips on load.
        let meta = dir.path().join("remover.txt");
        let text = std::fs::read_to_string(&meta).unwrap().replace("mode = remove", "mode = overwrite");
        std::fs::write(&meta, text).unwrap();
        assert!(load_remover_bundle(dir.path()).is_err(), "mode/pattern mismatch must fail");
    }

    #[test]
    fn missing_bundle_files_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_victim_bundle(dir.path()).is_err());
        assert!(load_remover_bundle(dir.path()).is_err());
    }
}
