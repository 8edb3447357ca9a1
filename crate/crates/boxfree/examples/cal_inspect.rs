//! Dumps a diagnostic grid of the joint-training state:
//! clean | marked | residual x4 | extraction(marked) | extraction(clean).

use boxfree::harness::{net_preset, ExperimentConfig};
use boxfree::imaging::{render_watermark, split_disjoint, synth_dataset, Image};
use boxfree::removal::train_proxies;
use boxfree::victim::TrainOptions;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(24);
    let cfg = ExperimentConfig::desk_default();
    let dims = (cfg.dataset.height, cfg.dataset.width);
    let full = synth_dataset(cfg.seed_for("dataset"), cfg.dataset.count, dims).unwrap();
    let (_, attacker_half) = split_disjoint(&full).unwrap();
    let mark = render_watermark(cfg.victim.watermark_style, cfg.victim.watermark_seed, dims)
        .unwrap();
    let opts = TrainOptions {
        epochs,
        batch_size: 8,
        lr: 1e-3,
        seed: cfg.seed_for("proxy-train/probe"),
        mark_warmup_epochs: 8,
        extractor_lr: None,
    };
    let (set, sr_e) = train_proxies(
        &attacker_half,
        &mark,
        &net_preset("hide4w12").unwrap(),
        &net_preset("ext3w10").unwrap(),
        (1e4, 1e4, 1e4),
        &opts,
        "probe",
    )
    .unwrap();
    eprintln!("proxy sr_e = {sr_e}");
    let eval = synth_dataset(cfg.seed_for("eval-data"), 2, dims).unwrap();
    for (i, (_, b)) in eval.pairs().iter().enumerate() {
        let s = set.mark(b).unwrap();
        let resid = Image::from_clamped(
            dims.0,
            dims.1,
            b.pixels()
                .iter()
                .zip(s.pixels())
                .map(|(x, y)| 0.5 + 4.0 * (y - x))
                .collect(),
        )
        .unwrap();
        let em = set.extract(&s).unwrap();
        let ec = set.extract(b).unwrap();
        let cols = [b, &s, &resid, &em, &ec, mark.image()];
        boxfree::harness::report::write_image_grid(
            &cols,
            std::path::Path::new(&format!("/tmp/inspect-{i}.png")),
        )
        .unwrap();
        let p = boxfree::metrics::psnr(&s, b).unwrap();
        eprintln!("sample {i}: psnr={p}");
    }
}
