//! Run manifests: everything needed to trace and re-run an experiment.
//! Checkpoint and config paths are stored relative to the manifest file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::metrics::ReportRow;

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub software_version: String,
    pub created_unix: u64,
    pub config_file: Option<PathBuf>,
    pub victim_checkpoint: Option<PathBuf>,
    pub remover_checkpoints: Vec<PathBuf>,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            software_version: SOFTWARE_VERSION.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config_file: None,
            victim_checkpoint: None,
            remover_checkpoints: Vec::new(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// The deterministic payload: metric rows only, byte-stable across
    /// reruns with the same master seed.
    pub fn rows_text(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "row.{i} = {}", row.to_csv());
        }
        s
    }

    fn rel(path: &Path, base: &Path) -> String {
        path.strip_prefix(base).unwrap_or(path).display().to_string()
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut s = String::new();
        let _ = writeln!(s, "manifest_version = 1");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "software_version = {}", self.software_version);
        let _ = writeln!(s, "created_unix = {}", self.created_unix);
        if let Some(cfg) = &self.config_file {
            let _ = writeln!(s, "config_file = {}", Self::rel(cfg, base));
        }
        if let Some(v) = &self.victim_checkpoint {
            let _ = writeln!(s, "victim_checkpoint = {}", Self::rel(v, base));
        }
        for (i, r) in self.remover_checkpoints.iter().enumerate() {
            let _ = writeln!(s, "remover_checkpoint.{i} = {}", Self::rel(r, base));
        }
        for (i, note) in self.notes.iter().enumerate() {
            let _ = writeln!(s, "note.{i} = {note}");
        }
        s.push_str(&self.rows_text());
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<RunManifest> {
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut manifest = RunManifest::new("", "");
        manifest.software_version.clear();
        let mut rows: Vec<(usize, ReportRow)> = Vec::new();
        let mut removers: Vec<(usize, PathBuf)> = Vec::new();
        let mut notes: Vec<(usize, String)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Checkpoint(format!("{}: bad manifest line {}", path.display(), idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "manifest_version" => {
                    if value != "1" {
                        return Err(Error::Checkpoint(format!(
                            "{}: unsupported manifest version {value}",
                            path.display()
                        )));
                    }
                }
                "command" => manifest.command = value.to_string(),
                "config_hash" => manifest.config_hash = value.to_string(),
                "software_version" => manifest.software_version = value.to_string(),
                "created_unix" => {
                    manifest.created_unix = value.parse().map_err(|e| {
                        Error::Checkpoint(format!("{}: bad created_unix: {e}", path.display()))
                    })?
                }
                "config_file" => manifest.config_file = Some(base.join(value)),
                "victim_checkpoint" => manifest.victim_checkpoint = Some(base.join(value)),
                _ => {
                    if let Some(n) = key.strip_prefix("remover_checkpoint.") {
                        let n: usize = n.parse().map_err(|e| {
                            Error::Checkpoint(format!("{}: bad checkpoint index: {e}", path.display()))
                        })?;
                        removers.push((n, base.join(value)));
                    } else if let Some(n) = key.strip_prefix("row.") {
                        let n: usize = n.parse().map_err(|e| {
                            Error::Checkpoint(format!("{}: bad row index: {e}", path.display()))
                        })?;
                        rows.push((n, ReportRow::from_csv(value)?));
                    } else if let Some(n) = key.strip_prefix("note.") {
                        let n: usize = n.parse().map_err(|e| {
                            Error::Checkpoint(format!("{}: bad note index: {e}", path.display()))
                        })?;
                        notes.push((n, value.to_string()));
                    } else {
                        return Err(Error::Checkpoint(format!(
                            "{}: unknown manifest key '{key}'",
                            path.display()
                        )));
                    }
                }
            }
        }
        rows.sort_by_key(|(n, _)| *n);
        removers.sort_by_key(|(n, _)| *n);
        notes.sort_by_key(|(n, _)| *n);
        manifest.rows = rows.into_iter().map(|(_, r)| r).collect();
        manifest.remover_checkpoints = removers.into_iter().map(|(_, p)| p).collect();
        manifest.notes = notes.into_iter().map(|(_, n)| n).collect();
        if manifest.command.is_empty() {
            return Err(Error::Checkpoint(format!("{}: missing command", path.display())));
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{Psnr, QueryCost};

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest-train-victim.txt");
        let mut m = RunManifest::new("train-victim", "abcd1234abcd1234");
        m.victim_checkpoint = Some(dir.path().join("checkpoints/victim"));
        m.config_file = Some(dir.path().join("config.cfg"));
        let mut row = ReportRow::new("victim eval");
        row.psnr = Some(Psnr::Db(31.5));
        row.sr_e = Some(0.97);
        row.queries = QueryCost::default();
        row.config_hash = "abcd1234abcd1234".into();
        m.rows.push(row);
        m.notes.push("ipnet holdout psnr = 23.1".into());
        m.write_to(&path).unwrap();
        let back = RunManifest::read_from(&path).unwrap();
        assert_eq!(back.command, "train-victim");
        assert_eq!(back.config_hash, "abcd1234abcd1234");
        assert_eq!(back.victim_checkpoint, Some(dir.path().join("checkpoints/victim")));
        assert_eq!(back.rows.len(), 1);
        assert_eq!(back.rows[0].label, "victim eval");
        assert_eq!(back.notes.len(), 1);
        assert_eq!(back.rows_text(), m.rows_text());
    }

    #[test]
    fn unreadable_manifest_errors() {
        assert!(RunManifest::read_from(Path::new("/nonexistent/manifest.txt")).is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        std::fs::write(&path, "command = x\nconfig_hash = y\nbogus_key = 1\n").unwrap();
        assert!(RunManifest::read_from(&path).is_err());
    }
}
