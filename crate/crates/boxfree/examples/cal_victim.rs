//! Victim-only calibration probe: fidelity/extraction as a function of
//! joint epochs and learning rate. Usage: cal_victim <epochs> <lr>

use std::time::Instant;

use boxfree::harness::{net_preset, ExperimentConfig};
use boxfree::imaging::{render_watermark, split_disjoint, synth_dataset, Image};
use boxfree::metrics::SuccessCriteria;
use boxfree::victim::{evaluate_victim, train_ipnet, train_victim_joint, TrainOptions};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(120);
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let alpha2: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e4);
    let alpha3: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e4);
    let cfg = ExperimentConfig::desk_default();
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let crit = SuccessCriteria::new(cfg.nc_threshold).unwrap();
    let t0 = Instant::now();
    let full = synth_dataset(cfg.seed_for("dataset"), cfg.dataset.count, dims).unwrap();
    let (victim_half, _) = split_disjoint(&full).unwrap();
    let eval = synth_dataset(cfg.seed_for("eval-data"), cfg.attack.eval_count, dims).unwrap();
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
    eprintln!("[{:6.1?}] ipnet {ipnet_psnr:.2} dB", t0.elapsed());
    for chunk_epochs in [epochs / 4, epochs / 2, epochs] {
        let joint_opts = TrainOptions {
            epochs: chunk_epochs,
            batch_size: cfg.victim.batch_size,
            lr,
            seed: cfg.seed_for("victim-train"),
            mark_warmup_epochs: args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0),
            extractor_lr: None,
        };
        let bundle = train_victim_joint(
            &ipnet,
            &victim_half,
            &watermark,
            &net_preset(&cfg.victim.hnet_arch).unwrap(),
            &net_preset(&cfg.victim.enet_arch).unwrap(),
            (cfg.victim.alpha.0, alpha2, alpha3),
            &joint_opts,
        )
        .unwrap();
        let eval_clean: Vec<Image> =
            eval.pairs().iter().map(|(a, _)| bundle.process(a).unwrap()).collect();
        let v = evaluate_victim(&bundle, &eval_clean, &crit).unwrap();
        // Saturation diagnostic: fraction of marked pixels at the rails.
        let b = &eval_clean[0];
        let bp = bundle.mark(b).unwrap();
        let sat = bp.pixels().iter().filter(|&&p| p < 0.02 || p > 0.98).count() as f64
            / bp.pixel_count() as f64;
        let mean_abs: f64 = bp
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / bp.pixel_count() as f64;
        eprintln!(
            "[{:6.1?}] epochs={chunk_epochs} lr={lr}: sr_e={:.3} fidelity={:.2} dB blank={:.3} \
             sat={sat:.3} mean|d|={mean_abs:.4}",
            t0.elapsed(),
            v.sr_e,
            v.fidelity_psnr_db,
            v.blank_rate
        );
    }
}
