//! Plain-text experiment configuration: `key = value` lines grouped under
//! `[section]` headers, `#` comments. Every sub-seed used by the pipeline
//! derives deterministically from `master_seed`, and the hash of the
//! canonical serialization is stamped into every output artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::presets::net_preset;
use crate::imaging::{derive_seed, WatermarkStyle};
use crate::victim::Scenario;

/// Parsed but untyped config: section -> key -> (line, value).
#[derive(Debug, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

pub fn parse_config_str(text: &str) -> Result<RawConfig> {
    let mut raw = RawConfig::default();
    let mut section = String::new(); // global section
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::config_at(lineno, "unterminated section header"))?;
            section = name.trim().to_string();
            raw.sections.entry(section.clone()).or_default();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config_at(lineno, format!("expected 'key = value': {line}")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::config_at(lineno, "empty key"));
        }
        let entry = raw.sections.entry(section.clone()).or_default();
        if entry.insert(key.clone(), (lineno, value.trim().to_string())).is_some() {
            return Err(Error::config_at(lineno, format!("duplicate key '{key}'")));
        }
    }
    Ok(raw)
}

impl RawConfig {
    fn get(&self, section: &str, key: &str) -> Option<&(usize, String)> {
        self.sections.get(section).and_then(|s| s.get(key))
    }

    fn req<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Err(Error::config(format!("missing required field {section}.{key}"))),
            Some((line, v)) => v.parse::<T>().map_err(|e| {
                Error::config_at(*line, format!("invalid value for {section}.{key}: {e}"))
            }),
        }
    }

    fn opt<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some((line, v)) => v.parse::<T>().map_err(|e| {
                Error::config_at(*line, format!("invalid value for {section}.{key}: {e}"))
            }),
        }
    }

    fn opt_str(&self, section: &str, key: &str, default: &str) -> String {
        self.get(section, key).map(|(_, v)| v.clone()).unwrap_or_else(|| default.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetCfg {
    pub count: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct VictimCfg {
    pub ipnet_epochs: usize,
    pub joint_epochs: usize,
    pub warmup_epochs: usize,
    pub alpha: (f64, f64, f64),
    pub lr: f64,
    pub batch_size: usize,
    pub scenario: Scenario,
    pub keyed: bool,
    pub key_seed: u64,
    pub watermark_style: WatermarkStyle,
    pub watermark_seed: u64,
    pub ipnet_arch: String,
    pub hnet_arch: String,
    pub enet_arch: String,
}

/// Which attack an `attack` run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Egg,
    Transferable,
    OverwriteEgg,
    OverwriteTransferable,
    Jpeg,
    Noise,
    Lattice,
    Ablation,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Egg => "egg",
            AttackKind::Transferable => "transferable",
            AttackKind::OverwriteEgg => "overwrite-egg",
            AttackKind::OverwriteTransferable => "overwrite-transferable",
            AttackKind::Jpeg => "jpeg",
            AttackKind::Noise => "noise",
            AttackKind::Lattice => "lattice",
            AttackKind::Ablation => "ablation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "egg" => AttackKind::Egg,
            "transferable" => AttackKind::Transferable,
            "overwrite-egg" => AttackKind::OverwriteEgg,
            "overwrite-transferable" => AttackKind::OverwriteTransferable,
            "jpeg" => AttackKind::Jpeg,
            "noise" => AttackKind::Noise,
            "lattice" => AttackKind::Lattice,
            "ablation" => AttackKind::Ablation,
            other => {
                return Err(Error::config(format!(
                    "unknown attack kind '{other}' (egg, transferable, overwrite-egg, \
                     overwrite-transferable, jpeg, noise, lattice, ablation)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttackCfg {
    pub kind: AttackKind,
    pub beta: (f64, f64),
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub rnet_arch: String,
    pub no_concat_arch: String,
    pub zo_delta: f64,
    pub zo_k: usize,
    pub zo_antithetic: bool,
    pub overwrite_style: WatermarkStyle,
    pub overwrite_seed: u64,
    pub proxy_matrix: Vec<(String, String)>,
    pub proxy_epochs: usize,
    pub levels: Vec<f64>,
    pub eval_count: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub dataset: DatasetCfg,
    pub victim: VictimCfg,
    pub attack: AttackCfg,
    pub nc_threshold: f64,
    pub out_dir: PathBuf,
}

fn parse_proxy_matrix(s: &str) -> Result<Vec<(String, String)>> {
    let mut combos = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (h, e) = part.split_once('+').ok_or_else(|| {
            Error::config(format!("proxy combo '{part}' must be 'hider+extractor'"))
        })?;
        combos.push((h.trim().to_string(), e.trim().to_string()));
    }
    if combos.is_empty() {
        return Err(Error::config("attack.proxy_matrix must list at least one combo"));
    }
    Ok(combos)
}

fn parse_levels(s: &str) -> Result<Vec<f64>> {
    let mut levels = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        levels.push(
            part.parse::<f64>()
                .map_err(|e| Error::config(format!("bad sweep level '{part}': {e}")))?,
        );
    }
    if levels.is_empty() {
        return Err(Error::config("attack.levels must list at least one level"));
    }
    Ok(levels)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_config_text(&text)
    }

    pub fn from_config_text(text: &str) -> Result<Self> {
        let raw = parse_config_str(text)?;
        let master_seed: u64 = raw.req("", "master_seed")?;
        let dataset = DatasetCfg {
            count: raw.req("dataset", "count")?,
            height: raw.req("dataset", "height")?,
            width: raw.req("dataset", "width")?,
        };
        if dataset.count % 2 != 0 {
            return Err(Error::config(
                "dataset.count must be even so the victim/attacker split is exact".to_string(),
            ));
        }
        let victim = VictimCfg {
            ipnet_epochs: raw.opt("victim", "ipnet_epochs", 15)?,
            joint_epochs: raw.opt("victim", "joint_epochs", 40)?,
            warmup_epochs: raw.opt("victim", "warmup_epochs", 10)?,
            alpha: (
                raw.opt("victim", "alpha1", 1e4)?,
                raw.opt("victim", "alpha2", 1e4)?,
                raw.opt("victim", "alpha3", 1e4)?,
            ),
            lr: raw.opt("victim", "lr", 2e-4)?,
            batch_size: raw.opt("victim", "batch_size", 8)?,
            scenario: Scenario::parse(&raw.opt_str("victim", "scenario", "s2"))?,
            keyed: raw.opt("victim", "keyed", false)?,
            key_seed: raw.opt("victim", "key_seed", 1)?,
            watermark_style: WatermarkStyle::parse(&raw.opt_str("victim", "watermark_style", "logo"))?,
            watermark_seed: raw.opt("victim", "watermark_seed", 7)?,
            ipnet_arch: raw.opt_str("victim", "ipnet_arch", "proc3w12"),
            hnet_arch: raw.opt_str("victim", "hnet_arch", "hide4w12"),
            enet_arch: raw.opt_str("victim", "enet_arch", "ext3w10"),
        };
        let max_steps_raw: i64 = raw.opt("attack", "max_steps", -1)?;
        let attack = AttackCfg {
            kind: AttackKind::parse(&raw.opt_str("attack", "kind", "egg"))?,
            beta: (raw.opt("attack", "beta1", 1e4)?, raw.opt("attack", "beta2", 1e4)?),
            lr: raw.opt("attack", "lr", 1e-3)?,
            batch_size: raw.opt("attack", "batch_size", 4)?,
            epochs: raw.opt("attack", "epochs", 20)?,
            max_steps: if max_steps_raw < 0 { None } else { Some(max_steps_raw as usize) },
            rnet_arch: raw.opt_str("attack", "rnet_arch", "hide4w12"),
            no_concat_arch: raw.opt_str("attack", "no_concat_arch", "solo4w12"),
            zo_delta: raw.opt("attack", "zo_delta", 1e-2)?,
            zo_k: raw.opt("attack", "zo_k", 64)?,
            zo_antithetic: raw.opt("attack", "zo_antithetic", false)?,
            overwrite_style: WatermarkStyle::parse(&raw.opt_str(
                "attack",
                "overwrite_style",
                "text",
            ))?,
            overwrite_seed: raw.opt("attack", "overwrite_seed", 3)?,
            proxy_matrix: parse_proxy_matrix(&raw.opt_str(
                "attack",
                "proxy_matrix",
                "hide3w10+ext3w8,hide3w10+ext4w12,hide5w8+ext3w8,hide2w6+ext2w6",
            ))?,
            proxy_epochs: raw.opt("attack", "proxy_epochs", 30)?,
            levels: parse_levels(&raw.opt_str("attack", "levels", "90,80,70,60,50"))?,
            eval_count: raw.opt("attack", "eval_count", 48)?,
        };
        let nc_threshold: f64 = raw.opt("metrics", "nc_threshold", 0.96)?;
        let out_dir = PathBuf::from(raw.opt_str("output", "dir", "out"));
        let cfg = ExperimentConfig { master_seed, dataset, victim, attack, nc_threshold, out_dir };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, name) in [
            ("victim.ipnet_arch", &self.victim.ipnet_arch),
            ("victim.hnet_arch", &self.victim.hnet_arch),
            ("victim.enet_arch", &self.victim.enet_arch),
            ("attack.rnet_arch", &self.attack.rnet_arch),
            ("attack.no_concat_arch", &self.attack.no_concat_arch),
        ] {
            net_preset(name).map_err(|e| Error::config(format!("{what}: {e}")))?;
        }
        for (h, e) in &self.attack.proxy_matrix {
            net_preset(h).map_err(|er| Error::config(format!("attack.proxy_matrix: {er}")))?;
            net_preset(e).map_err(|er| Error::config(format!("attack.proxy_matrix: {er}")))?;
        }
        if !(0.0 < self.nc_threshold && self.nc_threshold < 1.0) {
            return Err(Error::config(format!(
                "metrics.nc_threshold must be in (0,1), got {}",
                self.nc_threshold
            )));
        }
        if self.attack.eval_count == 0 {
            return Err(Error::config("attack.eval_count must be positive"));
        }
        if self.victim.batch_size == 0 || self.attack.batch_size == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if self.victim.keyed && self.victim.scenario == Scenario::S1ReluOnly {
            // Keyed subnet presets are ReLU-only, so this combination is fine;
            // nothing extra to check here.
        }
        Ok(())
    }

    /// Canonical serialization: stable section and key order. Also a valid
    /// config file, so round-tripping a config through it is lossless.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "\n[dataset]");
        let _ = writeln!(s, "count = {}", self.dataset.count);
        let _ = writeln!(s, "height = {}", self.dataset.height);
        let _ = writeln!(s, "width = {}", self.dataset.width);
        let _ = writeln!(s, "\n[victim]");
        let v = &self.victim;
        let _ = writeln!(s, "alpha1 = {}", v.alpha.0);
        let _ = writeln!(s, "alpha2 = {}", v.alpha.1);
        let _ = writeln!(s, "alpha3 = {}", v.alpha.2);
        let _ = writeln!(s, "batch_size = {}", v.batch_size);
        let _ = writeln!(s, "enet_arch = {}", v.enet_arch);
        let _ = writeln!(s, "hnet_arch = {}", v.hnet_arch);
        let _ = writeln!(s, "ipnet_arch = {}", v.ipnet_arch);
        let _ = writeln!(s, "ipnet_epochs = {}", v.ipnet_epochs);
        let _ = writeln!(s, "joint_epochs = {}", v.joint_epochs);
        let _ = writeln!(s, "key_seed = {}", v.key_seed);
        let _ = writeln!(s, "keyed = {}", v.keyed);
        let _ = writeln!(s, "lr = {}", v.lr);
        let _ = writeln!(s, "scenario = {}", v.scenario.as_str());
        let _ = writeln!(s, "warmup_epochs = {}", v.warmup_epochs);
        let _ = writeln!(s, "watermark_seed = {}", v.watermark_seed);
        let _ = writeln!(s, "watermark_style = {}", v.watermark_style.as_str());
        let _ = writeln!(s, "\n[attack]");
        let a = &self.attack;
        let _ = writeln!(s, "batch_size = {}", a.batch_size);
        let _ = writeln!(s, "beta1 = {}", a.beta.0);
        let _ = writeln!(s, "beta2 = {}", a.beta.1);
        let _ = writeln!(s, "epochs = {}", a.epochs);
        let _ = writeln!(s, "eval_count = {}", a.eval_count);
        let _ = writeln!(s, "kind = {}", a.kind.as_str());
        let _ = writeln!(
            s,
            "levels = {}",
            a.levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(s, "lr = {}", a.lr);
        let _ = writeln!(s, "max_steps = {}", a.max_steps.map(|m| m as i64).unwrap_or(-1));
        let _ = writeln!(s, "no_concat_arch = {}", a.no_concat_arch);
        let _ = writeln!(s, "overwrite_seed = {}", a.overwrite_seed);
        let _ = writeln!(s, "overwrite_style = {}", a.overwrite_style.as_str());
        let _ = writeln!(s, "proxy_epochs = {}", a.proxy_epochs);
        let _ = writeln!(
            s,
            "proxy_matrix = {}",
            a.proxy_matrix
                .iter()
                .map(|(h, e)| format!("{h}+{e}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "rnet_arch = {}", a.rnet_arch);
        let _ = writeln!(s, "zo_antithetic = {}", a.zo_antithetic);
        let _ = writeln!(s, "zo_delta = {}", a.zo_delta);
        let _ = writeln!(s, "zo_k = {}", a.zo_k);
        let _ = writeln!(s, "\n[metrics]");
        let _ = writeln!(s, "nc_threshold = {}", self.nc_threshold);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }

    /// First 16 hex characters of the canonical config's SHA-256.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Deterministic sub-seed for one pipeline role.
    pub fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.master_seed, label)
    }

    /// Desk-scale defaults; the pinned configuration the acceptance suite
    /// trains at.
    pub fn desk_default() -> Self {
        Self::from_config_text(
            "master_seed = 42\n[dataset]\ncount = 384\nheight = 48\nwidth = 48\n",
        )
        .expect("desk default config is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_dataset_field_names_it() {
        let err = ExperimentConfig::from_config_text("master_seed = 1\n[dataset]\ncount = 10\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dataset.height"), "{msg}");
    }

    #[test]
    fn bad_value_reports_line() {
        let text = "master_seed = 1\n[dataset]\ncount = ten\nheight = 48\nwidth = 48\n";
        let err = ExperimentConfig::from_config_text(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("dataset.count"), "{msg}");
    }

    #[test]
    fn canonical_roundtrip_is_stable() {
        let cfg = ExperimentConfig::desk_default();
        let text = cfg.canonical();
        let back = ExperimentConfig::from_config_text(&text).unwrap();
        assert_eq!(back.canonical(), text);
        assert_eq!(back.config_hash(), cfg.config_hash());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = ExperimentConfig::desk_default();
        let mut b = ExperimentConfig::desk_default();
        b.master_seed = 43;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn odd_dataset_count_rejected() {
        let err = ExperimentConfig::from_config_text(
            "master_seed = 1\n[dataset]\ncount = 11\nheight = 48\nwidth = 48\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("even"), "{err}");
    }

    #[test]
    fn unknown_preset_rejected() {
        let text = "master_seed = 1\n[dataset]\ncount = 10\nheight = 48\nwidth = 48\n\
                    [victim]\nenet_arch = gigantonet\n";
        let err = ExperimentConfig::from_config_text(text).unwrap_err();
        assert!(err.to_string().contains("victim.enet_arch"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = parse_config_str("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn sub_seeds_derive_from_master() {
        let a = ExperimentConfig::desk_default();
        assert_eq!(a.seed_for("dataset"), a.seed_for("dataset"));
        assert_ne!(a.seed_for("dataset"), a.seed_for("eval-data"));
        let mut b = ExperimentConfig::desk_default();
        b.master_seed = 7;
        assert_ne!(a.seed_for("dataset"), b.seed_for("dataset"));
    }
}
