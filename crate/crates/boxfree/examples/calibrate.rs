//! Stage-by-stage calibration driver: trains each pipeline component at the
//! desk configuration and prints the numbers the acceptance thresholds are
//! pinned against. Not part of the test suite; run with
//! `cargo run --example calibrate [stage...]`.

use std::sync::Arc;
use std::time::Instant;

use boxfree::harness::{keyed_extractor_presets, net_preset, ExperimentConfig};
use boxfree::imaging::{
    render_overwrite_watermark, render_watermark, split_disjoint, synth_dataset, Image,
};
use boxfree::metrics::SuccessCriteria;
use boxfree::removal::{
    ablation_concat, evaluate_remover, train_egg_remover, train_egg_remover_no_concat,
    train_overwriter, train_proxies, train_transferable_remover, AblationChannel,
    OverwriteSource, RemoverTrainConfig, ZOConfig,
};
use boxfree::victim::{
    evaluate_victim, extract, make_oracle, train_ipnet, train_victim_joint, train_victim_keyed,
    ExtractorKey, Scenario, TrainOptions,
};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let all = args.is_empty();
    let want = |s: &str| all || args.iter().any(|a| a == s);

    let cfg = ExperimentConfig::desk_default();
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let crit = SuccessCriteria::new(cfg.nc_threshold).unwrap();
    let t0 = Instant::now();

    let full = synth_dataset(cfg.seed_for("dataset"), cfg.dataset.count, dims).unwrap();
    let (victim_half, attacker_half) = split_disjoint(&full).unwrap();
    let eval = synth_dataset(cfg.seed_for("eval-data"), cfg.attack.eval_count, dims).unwrap();
    let eval_sources: Vec<Image> = eval.pairs().iter().map(|(a, _)| a.clone()).collect();
    eprintln!("[{:6.1?}] data ready: {} victim / {} attacker", t0.elapsed(), victim_half.len(), attacker_half.len());

    let watermark =
        render_watermark(cfg.victim.watermark_style, cfg.victim.watermark_seed, dims).unwrap();
    let ipnet_opts = TrainOptions {
        epochs: cfg.victim.ipnet_epochs,
        batch_size: cfg.victim.batch_size,
        lr: cfg.victim.lr,
        seed: cfg.seed_for("ipnet-train"),
        mark_warmup_epochs: 0,
        extractor_lr: None,
    };
    let (ipnet, ipnet_psnr) =
        train_ipnet(&victim_half, &net_preset(&cfg.victim.ipnet_arch).unwrap(), &ipnet_opts)
            .unwrap();
    eprintln!("[{:6.1?}] ipnet holdout psnr = {ipnet_psnr:.2} dB (target >= 22)", t0.elapsed());

    let joint_opts = TrainOptions {
        epochs: cfg.victim.joint_epochs,
        batch_size: cfg.victim.batch_size,
        lr: cfg.victim.lr,
        seed: cfg.seed_for("victim-train"),
        mark_warmup_epochs: cfg.victim.warmup_epochs,
        extractor_lr: None,
    };
    let bundle = train_victim_joint(
        &ipnet,
        &victim_half,
        &watermark,
        &net_preset(&cfg.victim.hnet_arch).unwrap(),
        &net_preset(&cfg.victim.enet_arch).unwrap(),
        cfg.victim.alpha,
        &joint_opts,
    )
    .unwrap();
    let eval_clean: Vec<Image> =
        eval.pairs().iter().map(|(a, _)| bundle.process(a).unwrap()).collect();
    let veval = evaluate_victim(&bundle, &eval_clean, &crit).unwrap();
    eprintln!(
        "[{:6.1?}] victim: sr_e={:.3} fidelity={:.2} dB blank={:.3} (targets .95 / 30 / .95)",
        t0.elapsed(),
        veval.sr_e,
        veval.fidelity_psnr_db,
        veval.blank_rate
    );
    let bundle = Arc::new(bundle);

    if want("keyed") {
        let (ea, eb, ec) = keyed_extractor_presets(8);
        let key = ExtractorKey::generate(cfg.victim.key_seed, dims).unwrap();
        let keyed = train_victim_keyed(
            &ipnet,
            &victim_half,
            &watermark,
            &net_preset(&cfg.victim.hnet_arch).unwrap(),
            &ea,
            &eb,
            &ec,
            key.clone(),
            cfg.victim.alpha,
            &joint_opts,
        )
        .unwrap();
        let keval = evaluate_victim(&keyed, &eval_clean, &crit).unwrap();
        // Wrong-key extraction on marked images.
        let wrong = ExtractorKey::generate(cfg.victim.key_seed + 999, dims).unwrap();
        let mut wrong_hits = 0;
        for b in &eval_clean {
            let b_prime = keyed.mark(b).unwrap();
            let out = extract(&keyed.enet, &b_prime, Some(&wrong)).unwrap();
            if boxfree::metrics::ncc(&out, keyed.watermark.image())
                .map(|v| v > crit.nc_threshold)
                .unwrap_or(false)
            {
                wrong_hits += 1;
            }
        }
        eprintln!(
            "[{:6.1?}] keyed victim: sr_e={:.3} fidelity={:.2} blank={:.3} wrong-key sr_e={:.3}",
            t0.elapsed(),
            keval.sr_e,
            keval.fidelity_psnr_db,
            keval.blank_rate,
            wrong_hits as f64 / eval_clean.len() as f64
        );
    }

    let train_cfg = RemoverTrainConfig {
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
    };
    let zo = ZOConfig::new(
        cfg.attack.zo_delta,
        cfg.attack.zo_k,
        cfg.attack.zo_antithetic,
        cfg.seed_for("zo"),
    )
    .unwrap();
    let rnet_spec = net_preset(&cfg.attack.rnet_arch).unwrap();

    let egg_remover = if want("egg") || want("ablation") {
        let oracle = make_oracle(bundle.clone(), Scenario::S2UnknownEnet).unwrap();
        let remover =
            train_egg_remover(&oracle, &attacker_half, &rnet_spec, &zo, &train_cfg).unwrap();
        let ev = evaluate_remover(&bundle, &remover, &eval_sources, &crit).unwrap();
        eprintln!(
            "[{:6.1?}] egg: sr_r={:.3} psnr={:.2} dB msssim={:.4} residual sr_e={:.3} cost=({})",
            t0.elapsed(),
            ev.sr_r,
            ev.psnr_db,
            ev.ms_ssim,
            ev.sr_e_residual,
            remover.training_cost
        );
        Some(remover)
    } else {
        None
    };

    if want("overwrite") {
        let oracle = make_oracle(bundle.clone(), Scenario::S2UnknownEnet).unwrap();
        let overwrite = render_overwrite_watermark(
            cfg.attack.overwrite_style,
            cfg.attack.overwrite_seed,
            dims,
        )
        .unwrap();
        let ow = train_overwriter(
            OverwriteSource::Oracle(&oracle, &zo),
            &attacker_half,
            &overwrite,
            &rnet_spec,
            &train_cfg,
        )
        .unwrap();
        let ev = evaluate_remover(&bundle, &ow, &eval_sources, &crit).unwrap();
        eprintln!(
            "[{:6.1?}] egg overwrite: sr_o={:?} psnr={:.2} residual sr_e={:.3} (target sr_o >= .8)",
            t0.elapsed(),
            ev.sr_o,
            ev.psnr_db,
            ev.sr_e_residual
        );
    }

    if want("transfer") {
        let proxy_mark =
            render_watermark(cfg.attack.overwrite_style, cfg.seed_for("proxy-mark"), dims)
                .unwrap();
        let mut first_proxies = None;
        for (i, (h_arch, e_arch)) in cfg.attack.proxy_matrix.iter().enumerate() {
            let proxy_opts = TrainOptions {
                epochs: cfg.attack.proxy_epochs,
                batch_size: cfg.victim.batch_size,
                lr: cfg.victim.lr,
                seed: cfg.seed_for(&format!("proxy-train/{i}")),
                mark_warmup_epochs: cfg.victim.warmup_epochs,
                extractor_lr: None,
            };
            let (proxies, proxy_sr) = train_proxies(
                &attacker_half,
                &proxy_mark,
                &net_preset(h_arch).unwrap(),
                &net_preset(e_arch).unwrap(),
                cfg.victim.alpha,
                &proxy_opts,
                &format!("{h_arch}+{e_arch}"),
            )
            .unwrap();
            let mut combo_cfg = train_cfg;
            combo_cfg.opts.seed = cfg.seed_for(&format!("transfer-train/{i}"));
            let remover =
                train_transferable_remover(&proxies, &attacker_half, &rnet_spec, &combo_cfg)
                    .unwrap();
            let ev = evaluate_remover(&bundle, &remover, &eval_sources, &crit).unwrap();
            eprintln!(
                "[{:6.1?}] transfer {h_arch}+{e_arch}: proxy_sr_e={proxy_sr:.3} sr_r={:.3} psnr={:.2} residual={:.3}",
                t0.elapsed(),
                ev.sr_r,
                ev.psnr_db,
                ev.sr_e_residual
            );
            if i == 0 {
                first_proxies = Some(proxies);
            }
        }
        if let Some(proxies) = first_proxies {
            let overwrite = render_overwrite_watermark(
                cfg.attack.overwrite_style,
                cfg.attack.overwrite_seed,
                dims,
            )
            .unwrap();
            let ow = train_overwriter(
                OverwriteSource::Proxies(&proxies),
                &attacker_half,
                &overwrite,
                &rnet_spec,
                &train_cfg,
            )
            .unwrap();
            let ev = evaluate_remover(&bundle, &ow, &eval_sources, &crit).unwrap();
            eprintln!(
                "[{:6.1?}] transfer overwrite: sr_o={:?} residual sr_e={:.3} (targets <= .2 both)",
                t0.elapsed(),
                ev.sr_o,
                ev.sr_e_residual
            );
        }
    }

    if want("ablation") {
        let remover = egg_remover.expect("ablation needs the egg remover");
        let marked_eval: Vec<Image> =
            eval_sources.iter().map(|a| bundle.onet(a).unwrap()).collect();
        let test_mark =
            render_watermark(cfg.attack.overwrite_style, cfg.attack.overwrite_seed, dims)
                .unwrap();
        let rows = [
            ("blank", AblationChannel::Trained),
            ("mark", AblationChannel::Fixed(test_mark.image())),
            ("source", AblationChannel::PerSample(&eval_sources)),
        ];
        for (name, channel) in rows {
            let row = ablation_concat(&remover, channel, &marked_eval, &bundle, &crit, name)
                .unwrap();
            eprintln!(
                "[{:6.1?}] ablation test={name}: psnr={} sr_r={:?}",
                t0.elapsed(),
                row.psnr.unwrap(),
                row.sr_r
            );
        }
        let oracle = make_oracle(bundle.clone(), Scenario::S2UnknownEnet).unwrap();
        let mut nc_cfg = train_cfg;
        nc_cfg.opts.seed = cfg.seed_for("attack-train-noconcat");
        let no_concat = train_egg_remover_no_concat(
            &oracle,
            &attacker_half,
            &net_preset(&cfg.attack.no_concat_arch).unwrap(),
            &zo,
            &nc_cfg,
        )
        .unwrap();
        let row = ablation_concat(
            &no_concat,
            AblationChannel::Trained,
            &marked_eval,
            &bundle,
            &crit,
            "no-concat",
        )
        .unwrap();
        eprintln!(
            "[{:6.1?}] ablation no-concat: psnr={} sr_r={:?}",
            t0.elapsed(),
            row.psnr.unwrap(),
            row.sr_r
        );
    }

    if want("sweep") {
        let rows = boxfree::baselines::robustness_sweep(
            &bundle,
            boxfree::baselines::BaselineAttack::Jpeg,
            &[90.0, 70.0, 50.0],
            &eval_clean,
            &crit,
            cfg.seed_for("sweep"),
        )
        .unwrap();
        for row in rows {
            eprintln!("[{:6.1?}] {}", t0.elapsed(), row.to_csv());
        }
        let rows = boxfree::baselines::robustness_sweep(
            &bundle,
            boxfree::baselines::BaselineAttack::Noise,
            &[32.0, 25.0, 17.0],
            &eval_clean,
            &crit,
            cfg.seed_for("sweep"),
        )
        .unwrap();
        for row in rows {
            eprintln!("[{:6.1?}] {}", t0.elapsed(), row.to_csv());
        }
        let rows = boxfree::baselines::robustness_sweep(
            &bundle,
            boxfree::baselines::BaselineAttack::Lattice,
            &[2.0, 4.0, 8.0, 16.0],
            &eval_clean,
            &crit,
            cfg.seed_for("sweep"),
        )
        .unwrap();
        for row in rows {
            eprintln!("[{:6.1?}] {}", t0.elapsed(), row.to_csv());
        }
    }

    eprintln!("[{:6.1?}] calibration done", t0.elapsed());
}
