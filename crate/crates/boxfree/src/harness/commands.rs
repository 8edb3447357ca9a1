//! Pipeline orchestration: train the victim, run attacks and sweeps, and
//! emit manifests under `out/<config_hash>/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::baselines::{robustness_sweep, BaselineAttack};
use crate::error::{Error, Result};
use crate::harness::bundles::{
    load_remover_bundle, load_victim_bundle, save_remover_bundle, save_victim_bundle,
};
use crate::harness::config::{AttackKind, ExperimentConfig};
use crate::harness::manifest::RunManifest;
use crate::harness::presets::{keyed_extractor_presets, net_preset};
use crate::imaging::{
    render_overwrite_watermark, render_watermark, split_disjoint, synth_dataset, DataTag, Image,
    PairedDataset,
};
use crate::metrics::{Psnr, QueryCost, ReportRow, SuccessCriteria};
use crate::removal::{
    ablation_concat, evaluate_remover, train_egg_remover, train_egg_remover_no_concat,
    train_overwriter, train_proxies, train_transferable_remover, AblationChannel, OverwriteSource,
    RemoverBundle, RemoverTrainConfig, ZOConfig,
};
use crate::victim::{
    evaluate_victim, make_oracle, train_ipnet, train_victim_joint, train_victim_keyed,
    ExtractorKey, TrainOptions, VictimBundle,
};

/// Output directories for one configuration.
pub struct RunPaths {
    pub root: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    pub images: PathBuf,
    pub config_file: PathBuf,
}

pub fn prepare_out(cfg: &ExperimentConfig) -> Result<RunPaths> {
    let root = cfg.out_dir.join(cfg.config_hash());
    let paths = RunPaths {
        checkpoints: root.join("checkpoints"),
        reports: root.join("reports"),
        images: root.join("images"),
        config_file: root.join("config.cfg"),
        root,
    };
    std::fs::create_dir_all(&paths.checkpoints)?;
    std::fs::create_dir_all(&paths.reports)?;
    std::fs::create_dir_all(&paths.images)?;
    std::fs::write(&paths.config_file, cfg.canonical())?;
    Ok(paths)
}

fn victim_train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        epochs: cfg.victim.joint_epochs,
        batch_size: cfg.victim.batch_size,
        lr: cfg.victim.lr,
        seed: cfg.seed_for("victim-train"),
        mark_warmup_epochs: cfg.victim.warmup_epochs,
        extractor_lr: None,
    }
}

fn attack_train_config(cfg: &ExperimentConfig) -> RemoverTrainConfig {
    RemoverTrainConfig {
        beta: cfg.attack.beta,
        opts: TrainOptions {
            epochs: cfg.attack.epochs,
            batch_size: cfg.attack.batch_size,
            lr: cfg.attack.lr,
            seed: cfg.seed_for("attack-train"),
            mark_warmup_epochs: 0,
            extractor_lr: None,
        },
        max_steps: cfg.attack.max_steps,
    }
}

fn zo_config(cfg: &ExperimentConfig) -> Result<ZOConfig> {
    ZOConfig::new(
        cfg.attack.zo_delta,
        cfg.attack.zo_k,
        cfg.attack.zo_antithetic,
        cfg.seed_for("zo"),
    )
}

/// Training data halves plus independent evaluation sources.
pub struct RunData {
    pub victim_half: PairedDataset,
    pub attacker_half: PairedDataset,
    pub eval: PairedDataset,
}

pub fn load_run_data(cfg: &ExperimentConfig) -> Result<RunData> {
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let full = synth_dataset(cfg.seed_for("dataset"), cfg.dataset.count, dims)?;
    let (victim_half, attacker_half) = split_disjoint(&full)?;
    // Structural guard: the halves come from a disjoint split.
    if victim_half.tag() != DataTag::VictimHalf || attacker_half.tag() != DataTag::AttackerHalf {
        return Err(Error::config("victim and attacker data halves must be disjoint"));
    }
    let eval = synth_dataset(cfg.seed_for("eval-data"), cfg.attack.eval_count, dims)?;
    Ok(RunData { victim_half, attacker_half, eval })
}

fn criteria(cfg: &ExperimentConfig) -> Result<SuccessCriteria> {
    SuccessCriteria::new(cfg.nc_threshold)
}

/// Trains the full victim stack and writes its bundle and manifest.
pub fn cmd_train_victim(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let paths = prepare_out(cfg)?;
    let data = load_run_data(cfg)?;
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let criteria = criteria(cfg)?;
    let watermark = render_watermark(cfg.victim.watermark_style, cfg.victim.watermark_seed, dims)?;
    let ipnet_spec = net_preset(&cfg.victim.ipnet_arch)?;
    let hnet_spec = net_preset(&cfg.victim.hnet_arch)?;
    let ipnet_opts = TrainOptions {
        epochs: cfg.victim.ipnet_epochs,
        batch_size: cfg.victim.batch_size,
        lr: cfg.victim.lr,
        seed: cfg.seed_for("ipnet-train"),
        mark_warmup_epochs: 0,
        extractor_lr: None,
    };
    let (ipnet, ipnet_psnr) = train_ipnet(&data.victim_half, &ipnet_spec, &ipnet_opts)?;
    let joint_opts = victim_train_options(cfg);
    let mut bundle = if cfg.victim.keyed {
        let (ea, eb, ec) = keyed_extractor_presets(8);
        let key = ExtractorKey::generate(cfg.victim.key_seed, dims)?;
        train_victim_keyed(
            &ipnet,
            &data.victim_half,
            &watermark,
            &hnet_spec,
            &ea,
            &eb,
            &ec,
            key,
            cfg.victim.alpha,
            &joint_opts,
        )?
    } else {
        let enet_spec = net_preset(&cfg.victim.enet_arch)?;
        train_victim_joint(
            &ipnet,
            &data.victim_half,
            &watermark,
            &hnet_spec,
            &enet_spec,
            cfg.victim.alpha,
            &joint_opts,
        )?
    };
    bundle.training_log.ipnet_holdout_psnr = Some(ipnet_psnr);
    let victim_dir = paths.checkpoints.join("victim");
    save_victim_bundle(&bundle, &victim_dir)?;

    // Independent evaluation on processed eval images.
    let eval_clean: Vec<Image> =
        data.eval.pairs().iter().map(|(a, _)| bundle.process(a)).collect::<Result<_>>()?;
    let eval = evaluate_victim(&bundle, &eval_clean, &criteria)?;
    let mut manifest = RunManifest::new("train-victim", &cfg.config_hash());
    manifest.config_file = Some(paths.config_file.clone());
    manifest.victim_checkpoint = Some(victim_dir);
    let hash = cfg.config_hash();
    let mut row = ReportRow::new("victim eval");
    row.psnr = Some(Psnr::Db(eval.fidelity_psnr_db));
    row.sr_e = Some(eval.sr_e);
    row.sr_r = Some(eval.blank_rate);
    row.config_hash = hash.clone();
    manifest.rows.push(row);
    if let (Some(sr), Some(psnr), Some(blank)) = (
        bundle.training_log.holdout_sr_e,
        bundle.training_log.fidelity_psnr,
        bundle.training_log.blank_rate,
    ) {
        let mut row = ReportRow::new("victim holdout");
        row.psnr = Some(Psnr::Db(psnr));
        row.sr_e = Some(sr);
        row.sr_r = Some(blank);
        row.config_hash = hash.clone();
        manifest.rows.push(row);
    }
    manifest.notes.push(format!("ipnet holdout psnr db = {ipnet_psnr:.4}"));
    manifest.notes.push("victim rows: sr_e = extraction rate, sr_r column = clean blank rate".into());
    manifest.write_to(&paths.root.join("manifest-train-victim.txt"))?;
    Ok(manifest)
}

fn load_victim_from_manifest(manifest_path: &Path) -> Result<(RunManifest, VictimBundle)> {
    let manifest = RunManifest::read_from(manifest_path)?;
    let dir = manifest.victim_checkpoint.clone().ok_or_else(|| {
        Error::Checkpoint(format!(
            "{}: manifest has no victim checkpoint",
            manifest_path.display()
        ))
    })?;
    let bundle = load_victim_bundle(&dir)?;
    Ok((manifest, bundle))
}

fn remover_row(
    label: &str,
    victim: &VictimBundle,
    remover: &RemoverBundle,
    eval_sources: &[Image],
    crit: &SuccessCriteria,
    hash: &str,
) -> Result<ReportRow> {
    let eval = evaluate_remover(victim, remover, eval_sources, crit)?;
    let mut row = ReportRow::new(label);
    row.psnr = Some(Psnr::Db(eval.psnr_db));
    row.ms_ssim = Some(eval.ms_ssim);
    row.sr_r = Some(eval.sr_r);
    row.sr_o = eval.sr_o;
    row.sr_e = Some(eval.sr_e_residual);
    row.queries = remover.training_cost;
    row.config_hash = hash.to_string();
    Ok(row)
}

/// Runs the configured attack against a trained victim.
pub fn cmd_attack(cfg: &ExperimentConfig, victim_manifest: &Path) -> Result<RunManifest> {
    let paths = prepare_out(cfg)?;
    let (_victim_manifest, bundle) = load_victim_from_manifest(victim_manifest)?;
    let data = load_run_data(cfg)?;
    let crit = criteria(cfg)?;
    let hash = cfg.config_hash();
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let eval_sources: Vec<Image> = data.eval.pairs().iter().map(|(a, _)| a.clone()).collect();
    let bundle = Arc::new(bundle);
    let mut manifest = RunManifest::new(cfg.attack.kind.as_str(), &hash);
    manifest.config_file = Some(paths.config_file.clone());
    manifest.victim_checkpoint = Some(paths.checkpoints.join("victim"));
    let train_cfg = attack_train_config(cfg);
    let rnet_spec = net_preset(&cfg.attack.rnet_arch)?;

    match cfg.attack.kind {
        AttackKind::Egg => {
            let oracle = make_oracle(bundle.clone(), cfg.victim.scenario)?;
            let zo = zo_config(cfg)?;
            let remover =
                train_egg_remover(&oracle, &data.attacker_half, &rnet_spec, &zo, &train_cfg)?;
            let dir = paths.checkpoints.join("remover-egg");
            save_remover_bundle(&remover, &dir)?;
            manifest.remover_checkpoints.push(dir);
            manifest.rows.push(remover_row(
                "egg blank",
                &bundle,
                &remover,
                &eval_sources,
                &crit,
                &hash,
            )?);
        }
        AttackKind::OverwriteEgg => {
            let oracle = make_oracle(bundle.clone(), cfg.victim.scenario)?;
            let zo = zo_config(cfg)?;
            let overwrite = render_overwrite_watermark(
                cfg.attack.overwrite_style,
                cfg.attack.overwrite_seed,
                dims,
            )?;
            let remover = train_overwriter(
                OverwriteSource::Oracle(&oracle, &zo),
                &data.attacker_half,
                &overwrite,
                &rnet_spec,
                &train_cfg,
            )?;
            let dir = paths.checkpoints.join("overwriter-egg");
            save_remover_bundle(&remover, &dir)?;
            manifest.remover_checkpoints.push(dir);
            manifest.rows.push(remover_row(
                &format!("egg overwrite {}", cfg.attack.overwrite_style.as_str()),
                &bundle,
                &remover,
                &eval_sources,
                &crit,
                &hash,
            )?);
        }
        AttackKind::Transferable => {
            let proxy_mark =
                render_watermark(cfg.attack.overwrite_style, cfg.seed_for("proxy-mark"), dims)?;
            for (i, (h_arch, e_arch)) in cfg.attack.proxy_matrix.iter().enumerate() {
                let tag = format!("{h_arch}+{e_arch}");
                let proxy_opts = TrainOptions {
                    epochs: cfg.attack.proxy_epochs,
                    batch_size: cfg.victim.batch_size,
                    lr: cfg.victim.lr,
                    seed: cfg.seed_for(&format!("proxy-train/{i}")),
                    mark_warmup_epochs: cfg.victim.warmup_epochs,
                    extractor_lr: None,
                };
                let (proxies, proxy_sr_e) = train_proxies(
                    &data.attacker_half,
                    &proxy_mark,
                    &net_preset(h_arch)?,
                    &net_preset(e_arch)?,
                    cfg.victim.alpha,
                    &proxy_opts,
                    &tag,
                )?;
                let mut combo_cfg = train_cfg;
                combo_cfg.opts.seed = cfg.seed_for(&format!("transfer-train/{i}"));
                let remover = train_transferable_remover(
                    &proxies,
                    &data.attacker_half,
                    &rnet_spec,
                    &combo_cfg,
                )?;
                if remover.training_cost.onet != 0 || remover.training_cost.enet != 0 {
                    return Err(Error::Scenario(
                        "transferable training must issue zero victim queries".into(),
                    ));
                }
                let dir = paths.checkpoints.join(format!("remover-transfer-{i}"));
                save_remover_bundle(&remover, &dir)?;
                manifest.remover_checkpoints.push(dir);
                manifest.notes.push(format!("proxy {tag} holdout sr_e = {proxy_sr_e:.4}"));
                manifest.rows.push(remover_row(
                    &format!("transferable {tag}"),
                    &bundle,
                    &remover,
                    &eval_sources,
                    &crit,
                    &hash,
                )?);
            }
        }
        AttackKind::OverwriteTransferable => {
            let proxy_mark =
                render_watermark(cfg.attack.overwrite_style, cfg.seed_for("proxy-mark"), dims)?;
            let overwrite = render_overwrite_watermark(
                cfg.attack.overwrite_style,
                cfg.attack.overwrite_seed,
                dims,
            )?;
            let (h_arch, e_arch) = &cfg.attack.proxy_matrix[0];
            let tag = format!("{h_arch}+{e_arch}");
            let proxy_opts = TrainOptions {
                epochs: cfg.attack.proxy_epochs,
                batch_size: cfg.victim.batch_size,
                lr: cfg.victim.lr,
                seed: cfg.seed_for("proxy-train/0"),
                mark_warmup_epochs: cfg.victim.warmup_epochs,
                extractor_lr: None,
            };
            let (proxies, proxy_sr_e) = train_proxies(
                &data.attacker_half,
                &proxy_mark,
                &net_preset(h_arch)?,
                &net_preset(e_arch)?,
                cfg.victim.alpha,
                &proxy_opts,
                &tag,
            )?;
            let remover = train_overwriter(
                OverwriteSource::Proxies(&proxies),
                &data.attacker_half,
                &overwrite,
                &rnet_spec,
                &train_cfg,
            )?;
            let dir = paths.checkpoints.join("overwriter-transfer");
            save_remover_bundle(&remover, &dir)?;
            manifest.remover_checkpoints.push(dir);
            manifest.notes.push(format!("proxy {tag} holdout sr_e = {proxy_sr_e:.4}"));
            manifest.rows.push(remover_row(
                &format!("transferable overwrite {tag}"),
                &bundle,
                &remover,
                &eval_sources,
                &crit,
                &hash,
            )?);
        }
        AttackKind::Jpeg | AttackKind::Noise | AttackKind::Lattice => {
            let rows = sweep_rows(cfg, &bundle, &data)?;
            manifest.rows.extend(rows);
        }
        AttackKind::Ablation => {
            let oracle = make_oracle(bundle.clone(), cfg.victim.scenario)?;
            let zo = zo_config(cfg)?;
            let remover =
                train_egg_remover(&oracle, &data.attacker_half, &rnet_spec, &zo, &train_cfg)?;
            let no_concat_spec = net_preset(&cfg.attack.no_concat_arch)?;
            let mut nc_cfg = train_cfg;
            nc_cfg.opts.seed = cfg.seed_for("attack-train-noconcat");
            let no_concat = train_egg_remover_no_concat(
                &oracle,
                &data.attacker_half,
                &no_concat_spec,
                &zo,
                &nc_cfg,
            )?;
            let marked_eval: Vec<Image> =
                eval_sources.iter().map(|a| bundle.onet(a)).collect::<Result<_>>()?;
            let test_mark = render_watermark(
                cfg.attack.overwrite_style,
                cfg.attack.overwrite_seed,
                dims,
            )?;
            let mut rows = vec![
                ablation_concat(
                    &remover,
                    AblationChannel::Trained,
                    &marked_eval,
                    &bundle,
                    &crit,
                    "ablation train=blank test=blank",
                )?,
                ablation_concat(
                    &remover,
                    AblationChannel::Fixed(test_mark.image()),
                    &marked_eval,
                    &bundle,
                    &crit,
                    "ablation train=blank test=mark",
                )?,
                ablation_concat(
                    &remover,
                    AblationChannel::PerSample(&eval_sources),
                    &marked_eval,
                    &bundle,
                    &crit,
                    "ablation train=blank test=source",
                )?,
                ablation_concat(
                    &no_concat,
                    AblationChannel::Trained,
                    &marked_eval,
                    &bundle,
                    &crit,
                    "ablation no-concat",
                )?,
            ];
            for row in &mut rows {
                row.config_hash = hash.clone();
            }
            manifest.rows.extend(rows);
            let dir = paths.checkpoints.join("remover-egg");
            save_remover_bundle(&remover, &dir)?;
            manifest.remover_checkpoints.push(dir);
            let dir = paths.checkpoints.join("remover-egg-noconcat");
            save_remover_bundle(&no_concat, &dir)?;
            manifest.remover_checkpoints.push(dir);
        }
    }
    let name = format!("manifest-{}.txt", cfg.attack.kind.as_str());
    manifest.write_to(&paths.root.join(name))?;
    Ok(manifest)
}

fn sweep_rows(
    cfg: &ExperimentConfig,
    bundle: &VictimBundle,
    data: &RunData,
) -> Result<Vec<ReportRow>> {
    let attack = match cfg.attack.kind {
        AttackKind::Jpeg => BaselineAttack::Jpeg,
        AttackKind::Noise => BaselineAttack::Noise,
        AttackKind::Lattice => BaselineAttack::Lattice,
        other => {
            return Err(Error::config(format!(
                "sweep requires a baseline attack kind (jpeg, noise, lattice), got {}",
                other.as_str()
            )))
        }
    };
    let crit = criteria(cfg)?;
    let eval_clean: Vec<Image> =
        data.eval.pairs().iter().map(|(a, _)| bundle.process(a)).collect::<Result<_>>()?;
    let mut rows = robustness_sweep(
        bundle,
        attack,
        &cfg.attack.levels,
        &eval_clean,
        &crit,
        cfg.seed_for("sweep"),
    )?;
    for row in &mut rows {
        row.config_hash = cfg.config_hash();
    }
    Ok(rows)
}

/// Robustness sweep against a trained victim (baseline attack kinds only).
pub fn cmd_sweep(cfg: &ExperimentConfig, victim_manifest: &Path) -> Result<RunManifest> {
    let paths = prepare_out(cfg)?;
    let (_m, bundle) = load_victim_from_manifest(victim_manifest)?;
    let data = load_run_data(cfg)?;
    let mut manifest = RunManifest::new("sweep", &cfg.config_hash());
    manifest.config_file = Some(paths.config_file.clone());
    manifest.rows = sweep_rows(cfg, &bundle, &data)?;
    manifest
        .write_to(&paths.root.join(format!("manifest-sweep-{}.txt", cfg.attack.kind.as_str())))?;
    Ok(manifest)
}

/// Feeds non-watermarked images to extraction, directly and through each
/// remover, reporting blank rates.
pub fn cmd_false_positive_suite(
    victim_manifest: &Path,
    remover_manifests: &[PathBuf],
) -> Result<RunManifest> {
    let (vm, bundle) = load_victim_from_manifest(victim_manifest)?;
    let config_path = vm.config_file.clone().ok_or_else(|| {
        Error::Checkpoint("victim manifest does not reference its config".into())
    })?;
    let cfg = ExperimentConfig::from_file(&config_path)?;
    let data = load_run_data(&cfg)?;
    let crit = criteria(&cfg)?;
    let hash = cfg.config_hash();
    let eval_clean: Vec<Image> =
        data.eval.pairs().iter().map(|(a, _)| bundle.process(a)).collect::<Result<_>>()?;
    let mut manifest = RunManifest::new("fp-suite", &hash);
    manifest.config_file = Some(config_path);
    let eval = evaluate_victim(&bundle, &eval_clean, &crit)?;
    let mut row = ReportRow::new("false-positive victim clean");
    row.sr_r = Some(eval.blank_rate);
    row.queries = QueryCost::default();
    row.config_hash = hash.clone();
    manifest.rows.push(row);
    for path in remover_manifests {
        let rm = RunManifest::read_from(path)?;
        for (i, dir) in rm.remover_checkpoints.iter().enumerate() {
            let remover = load_remover_bundle(dir)?;
            let blank =
                crate::removal::remover_clean_blank_rate(&bundle, &remover, &eval_clean, &crit)?;
            let mut row =
                ReportRow::new(format!("false-positive {} remover {i} clean", rm.command));
            row.sr_r = Some(blank);
            row.queries = remover.training_cost;
            row.config_hash = hash.clone();
            manifest.rows.push(row);
        }
    }
    let out = victim_manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("manifest-fp-suite.txt");
    manifest.write_to(&out)?;
    Ok(manifest)
}
