//! Report rendering: merged CSV tables, plain-text summaries, and
//! qualitative image grids (source | processed | marked | removed | mark |
//! extraction). Regeneration is byte-idempotent for the same inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::bundles::{load_remover_bundle, load_victim_bundle};
use crate::harness::config::ExperimentConfig;
use crate::harness::manifest::RunManifest;
use crate::imaging::Image;
use crate::metrics::ReportRow;
use crate::removal::apply_remover;

pub const GRID_COLUMNS: usize = 6;
const GRID_SEPARATOR: usize = 2;

/// Composes one row of images into a single grayscale PNG with white
/// separators. All images must share dimensions.
pub fn write_image_grid(columns: &[&Image], path: &Path) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::EmptyInput("image grid needs at least one column".into()));
    }
    let (h, w) = columns[0].dims();
    if columns.iter().any(|img| img.dims() != (h, w)) {
        return Err(Error::Dimension("grid columns must share dimensions".into()));
    }
    let total_w = columns.len() * w + (columns.len() - 1) * GRID_SEPARATOR;
    let mut buf = vec![255u8; h * total_w];
    for (c, img) in columns.iter().enumerate() {
        let x0 = c * (w + GRID_SEPARATOR);
        for y in 0..h {
            for x in 0..w {
                buf[y * total_w + x0 + x] =
                    (img.get(y, x) * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let gray = image::GrayImage::from_raw(total_w as u32, h as u32, buf)
        .ok_or_else(|| Error::ImageFile("failed to assemble grid buffer".into()))?;
    gray.save(path).map_err(|e| Error::ImageFile(format!("{}: {e}", path.display())))
}

fn summary_text(manifests: &[(PathBuf, RunManifest)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment summary");
    let _ = writeln!(
        s,
        "psnr convention: attack rows compare remover output with its marked input; \
         sweep rows compare the distorted marked image with the processed image."
    );
    for (path, m) in manifests {
        let _ = writeln!(s, "\n[{}] {} (config {})", path.display(), m.command, m.config_hash);
        for note in &m.notes {
            let _ = writeln!(s, "  note: {note}");
        }
        for row in &m.rows {
            let _ = writeln!(s, "  {}", row.to_csv());
        }
    }
    s
}

/// Merges manifests into `table.csv` and `summary.txt`, and emits image
/// grids for every manifest pair that provides both a victim and a remover
/// checkpoint. Returns the list of files written.
pub fn cmd_report(manifest_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if manifest_paths.is_empty() {
        return Err(Error::EmptyInput("report needs at least one manifest".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut manifests = Vec::new();
    for path in manifest_paths {
        manifests.push((path.clone(), RunManifest::read_from(path)?));
    }
    let mut written = Vec::new();

    let mut csv = String::new();
    let _ = writeln!(csv, "index,{}", ReportRow::CSV_HEADER);
    let mut index = 0usize;
    for (_, m) in &manifests {
        for row in &m.rows {
            let _ = writeln!(csv, "{index},{}", row.to_csv());
            index += 1;
        }
    }
    let table = out_dir.join("table.csv");
    std::fs::write(&table, csv)?;
    written.push(table);

    let summary = out_dir.join("summary.txt");
    std::fs::write(&summary, summary_text(&manifests))?;
    written.push(summary);

    // Qualitative grids for runs that trained a remover on a known victim.
    let mut grid_idx = 0usize;
    for (_, m) in &manifests {
        let (Some(victim_dir), Some(remover_dir)) =
            (&m.victim_checkpoint, m.remover_checkpoints.first())
        else {
            continue;
        };
        let Some(config_file) = &m.config_file else { continue };
        let cfg = ExperimentConfig::from_file(config_file)?;
        let victim = load_victim_bundle(victim_dir)?;
        let remover = load_remover_bundle(remover_dir)?;
        let eval = crate::imaging::synth_dataset(
            cfg.seed_for("eval-data"),
            2.min(cfg.attack.eval_count),
            (cfg.dataset.height, cfg.dataset.width),
        )?;
        for (a, _) in eval.pairs() {
            let b = victim.process(a)?;
            let b_prime = victim.mark(&b)?;
            let b_second = apply_remover(&remover, &b_prime)?;
            let extraction = victim.extract_own(&b_second)?;
            let columns =
                [a, &b, &b_prime, &b_second, victim.watermark.image(), &extraction];
            let path = out_dir.join(format!("grid-{grid_idx}.png"));
            write_image_grid(&columns, &path)?;
            written.push(path);
            grid_idx += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth_dataset;

    #[test]
    fn grid_has_six_columns_worth_of_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(0, 6, (48, 48)).unwrap();
        let imgs: Vec<&Image> = ds.pairs().iter().map(|(_, b)| b).collect();
        let path = dir.path().join("grid.png");
        write_image_grid(&imgs, &path).unwrap();
        let loaded = image::open(&path).unwrap();
        assert_eq!(loaded.width() as usize, 6 * 48 + 5 * GRID_SEPARATOR);
        assert_eq!(loaded.height() as usize, 48);
        assert_eq!(GRID_COLUMNS, 6);
    }

    #[test]
    fn grid_rejects_mismatched_dims() {
        let dir = tempfile::tempdir().unwrap();
        let a = Image::constant(48, 48, 0.5).unwrap();
        let b = Image::constant(40, 48, 0.5).unwrap();
        assert!(write_image_grid(&[&a, &b], &dir.path().join("g.png")).is_err());
    }
}
