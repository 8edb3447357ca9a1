//! Probe: joint embedder/extractor training on true clean images (no
//! image-processing net in the loop). Usage: cal_proxy <epochs> <lr>

use std::time::Instant;

use boxfree::harness::{net_preset, ExperimentConfig};
use boxfree::imaging::{render_watermark, split_disjoint, synth_dataset};
use boxfree::metrics::{self, SuccessCriteria};
use boxfree::removal::train_proxies;
use boxfree::victim::TrainOptions;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(24);
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let style = args.get(2).cloned().unwrap_or_else(|| "logo".into());
    let ext = args.get(3).cloned().unwrap_or_else(|| "ext3w10".into());
    let warmup: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ex_lr: Option<f64> = args.get(5).and_then(|s| s.parse().ok());
    let style = boxfree::imaging::WatermarkStyle::parse(&style).unwrap();
    let cfg = ExperimentConfig::desk_default();
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let crit = SuccessCriteria::new(cfg.nc_threshold).unwrap();
    let t0 = Instant::now();
    let full = synth_dataset(cfg.seed_for("dataset"), cfg.dataset.count, dims).unwrap();
    let (_, attacker_half) = split_disjoint(&full).unwrap();
    let eval = synth_dataset(cfg.seed_for("eval-data"), 32, dims).unwrap();
    let mark = render_watermark(style, cfg.victim.watermark_seed, dims).unwrap();
    for e in [epochs / 4, epochs / 2, epochs] {
        let opts = TrainOptions {
            epochs: e,
            batch_size: 8,
            lr,
            seed: cfg.seed_for("proxy-train/probe"),
            mark_warmup_epochs: warmup,
            extractor_lr: ex_lr,
        };
        let (set, sr_e) = train_proxies(
            &attacker_half,
            &mark,
            &net_preset("hide4w12").unwrap(),
            &net_preset(&ext).unwrap(),
            (1e4, 1e4, 1e4),
            &opts,
            "probe",
        )
        .unwrap();
        let mut psnr = 0.0;
        let mut blank = 0;
        for (_, b) in eval.pairs() {
            let s = set.mark(b).unwrap();
            psnr += metrics::psnr(&s, b).unwrap().db();
            let out = set.extract(b).unwrap();
            let white = boxfree::imaging::null_watermark(dims).unwrap();
            if metrics::ncc(&out, white.image()).map(|v| v > crit.nc_threshold).unwrap_or(false) {
                blank += 1;
            }
        }
        eprintln!(
            "[{:6.1?}] epochs={e}: sr_e={sr_e:.3} fidelity={:.2} dB blank={:.3}",
            t0.elapsed(),
            psnr / eval.len() as f64,
            blank as f64 / eval.len() as f64
        );
    }
}
