//! Experiment configuration: a TOML tree describing the corpus, the encoder,
//! the training regimes, and the list of evaluation setups, plus the four
//! built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{default_profiles, ChannelProfile, FeatureConfig, Language, SynthConfig};
use crate::model::EncoderConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("field {field}: {detail}")]
    Invalid { field: String, detail: String },
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("unknown preset {0}; available: {1}")]
    UnknownPreset(String, String),
}

fn invalid(field: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSettings {
    /// Channel profiles; omitted = the eight built-in profiles.
    #[serde(default)]
    pub channels: Option<Vec<ChannelProfile>>,
    pub train_utts: usize,
    pub dev_utts: usize,
    pub test_utts: usize,
    pub token_len_min: usize,
    pub token_len_max: usize,
    #[serde(default)]
    pub synth: SynthConfigOpt,
}

/// Synth overrides; defaults track [`SynthConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthConfigOpt {
    pub vocab_size: Option<usize>,
}

impl CorpusSettings {
    pub fn profiles(&self) -> Vec<ChannelProfile> {
        self.channels.clone().unwrap_or_else(default_profiles)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut s = SynthConfig::default();
        if let Some(v) = self.synth.vocab_size {
            s.vocab_size = v;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "Van_pre")]
    VanPre,
    #[serde(rename = "Van_adp")]
    VanAdp,
    #[serde(rename = "DEFA")]
    Defa,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::VanPre => "Van_pre",
            Method::VanAdp => "Van_adp",
            Method::Defa => "DEFA",
        }
    }
}

/// One evaluation setup: a decoder identified by its training channel set,
/// used with one of the three inference methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub name: String,
    pub method: Method,
    /// Channel names, or "~X" for all-but-X.
    pub train_channels: Vec<String>,
    pub test_channels: Vec<String>,
    /// Corpus language the decoder is trained and tested on.
    #[serde(default = "lang_a")]
    pub language: Language,
}

fn lang_a() -> Language {
    Language::LangA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub clean_channel: String,
    /// Channels excluded from adapter training (unseen-channel test).
    pub excluded_channels: Vec<String>,
    pub corpus: CorpusSettings,
    pub encoder: EncoderConfig,
    pub pretrain: TrainConfig,
    pub adapters: TrainConfig,
    pub decoder: TrainConfig,
    pub defa: TrainConfig,
    pub experiments: Vec<ExperimentEntry>,
    /// Compute pairwise rank-consistency statistics over all Van_pre setups.
    #[serde(default)]
    pub hierarchy_report: bool,
    /// Emit clean-vs-this-channel embedding difference heatmaps and the
    /// speech-active/inactive summary.
    #[serde(default)]
    pub heatmap_channel: Option<String>,
}

impl ExperimentConfig {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            n_mels: self.encoder.num_mels,
            ..FeatureConfig::default()
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.corpus.profiles().iter().map(|p| p.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let names = self.channel_names();
        let known = |n: &String| names.iter().any(|c| c == n);
        if !known(&self.clean_channel) {
            return Err(invalid(
                "clean_channel",
                format!("{} not in channel set", self.clean_channel),
            ));
        }
        let profiles = self.corpus.profiles();
        let clean = profiles
            .iter()
            .find(|p| p.name == self.clean_channel)
            .expect("checked above");
        if !clean.is_identity() {
            return Err(invalid(
                "clean_channel",
                "clean reference must be the identity profile",
            ));
        }
        for ch in &self.excluded_channels {
            if !known(ch) {
                return Err(invalid("excluded_channels", format!("{ch} unknown")));
            }
        }
        if names.len() < 2 {
            return Err(invalid("corpus.channels", "need at least 2 channels"));
        }
        if self.corpus.train_utts == 0 || self.corpus.dev_utts == 0 || self.corpus.test_utts == 0 {
            return Err(invalid("corpus", "all splits must be non-empty"));
        }
        if self.corpus.token_len_min == 0 || self.corpus.token_len_min > self.corpus.token_len_max
        {
            return Err(invalid("corpus.token_len_min", "bad token length range"));
        }
        self.encoder
            .validate()
            .map_err(|e| invalid("encoder", e.to_string()))?;
        if let Some(ch) = &self.heatmap_channel {
            if !known(ch) {
                return Err(invalid("heatmap_channel", format!("{ch} unknown")));
            }
        }
        for e in &self.experiments {
            expand_channel_set(&e.train_channels, &names)
                .map_err(|err| invalid(&format!("experiments.{}.train_channels", e.name), err.to_string()))?;
            expand_channel_set(&e.test_channels, &names)
                .map_err(|err| invalid(&format!("experiments.{}.test_channels", e.name), err.to_string()))?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Expand a channel-set description: plain names pass through, "~X" expands
/// to every channel except X. Duplicates are rejected.
pub fn expand_channel_set(set: &[String], all: &[String]) -> Result<Vec<String>, ConfigError> {
    let mut out: Vec<String> = Vec::new();
    for entry in set {
        if let Some(excluded) = entry.strip_prefix('~') {
            if !all.iter().any(|c| c == excluded) {
                return Err(ConfigError::UnknownChannel(excluded.to_string()));
            }
            for c in all {
                if c != excluded {
                    out.push(c.clone());
                }
            }
        } else {
            if !all.iter().any(|c| c == entry) {
                return Err(ConfigError::UnknownChannel(entry.clone()));
            }
            out.push(entry.clone());
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in &out {
        if !seen.insert(c) {
            return Err(ConfigError::Parse(format!(
                "channel {c} appears twice after expansion"
            )));
        }
    }
    if out.is_empty() {
        return Err(ConfigError::Parse("empty channel set".into()));
    }
    Ok(out)
}

pub const PRESETS: &[&str] = &["hat-main", "hat-defa", "tat-crosslang", "hierarchy"];

fn base_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        clean_channel: "COND".into(),
        excluded_channels: vec!["WCAM".into()],
        corpus: CorpusSettings {
            channels: None,
            train_utts: 192,
            dev_utts: 24,
            test_utts: 64,
            token_len_min: 2,
            token_len_max: 3,
            synth: SynthConfigOpt::default(),
        },
        encoder: EncoderConfig {
            num_blocks: 2,
            model_dim: 32,
            num_heads: 4,
            ffn_dim: 64,
            max_frames: 160,
            adapter_bottleneck: 24,
            num_mels: 26,
            vocab_size: 8,
            use_positional: true,
            frame_stack: 4,
        },
        pretrain: TrainConfig {
            epochs: 300,
            batch_size: 12,
            lr: 2e-3,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            seed,
        },
        adapters: TrainConfig {
            epochs: 150,
            batch_size: 24,
            lr: 1e-2,
            warmup_frac: 0.1,
            weight_decay: 0.0,
            seed,
        },
        decoder: TrainConfig {
            epochs: 120,
            batch_size: 24,
            lr: 2e-2,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            seed,
        },
        defa: TrainConfig {
            epochs: 40,
            batch_size: 24,
            lr: 5e-3,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            seed,
        },
        experiments: Vec::new(),
        hierarchy_report: false,
        heatmap_channel: None,
    }
}

fn single_channel_sets(names: &[String], clean: &str) -> Vec<Vec<String>> {
    let mut sets: Vec<Vec<String>> = names.iter().map(|c| vec![c.clone()]).collect();
    let _ = clean;
    sets.push(vec!["~WCAM".to_string()]);
    sets
}

fn entries_for(
    sets: &[Vec<String>],
    methods: &[Method],
    language: Language,
) -> Vec<ExperimentEntry> {
    let mut out = Vec::new();
    for set in sets {
        for m in methods {
            out.push(ExperimentEntry {
                name: format!("{}|{}", m.as_str(), set.join("+")),
                method: *m,
                train_channels: set.clone(),
                test_channels: vec!["~COND".into(), "COND".into()],
                language,
            });
        }
    }
    out
}

/// Built-in desk-scale presets covering the four analyses.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = base_config(2025);
    let names = cfg.channel_names();
    match name {
        "hierarchy" => {
            // One decoder per channel, Van_pre only, plus rank consistency.
            let sets: Vec<Vec<String>> = names.iter().map(|c| vec![c.clone()]).collect();
            cfg.experiments = entries_for(&sets, &[Method::VanPre], Language::LangA);
            cfg.hierarchy_report = true;
        }
        "hat-main" => {
            // 8 single-channel decoders + the ~WCAM decoder, Van_pre vs
            // Van_adp, with the clean-vs-ADR heatmap analysis.
            let sets = single_channel_sets(&names, &cfg.clean_channel);
            cfg.experiments =
                entries_for(&sets, &[Method::VanPre, Method::VanAdp], Language::LangA);
            cfg.heatmap_channel = Some("ADR".into());
        }
        "hat-defa" => {
            let sets = vec![vec!["LAV".to_string()], vec!["ZM-X".to_string()]];
            cfg.experiments = entries_for(
                &sets,
                &[Method::VanPre, Method::VanAdp, Method::Defa],
                Language::LangA,
            );
        }
        "tat-crosslang" => {
            // Adapters come from the LangA parallel corpus; the decoder is
            // trained on clean LangB speech and tested on LangB.
            let sets = vec![vec!["COND".to_string()]];
            cfg.experiments =
                entries_for(&sets, &[Method::VanPre, Method::VanAdp], Language::LangB);
        }
        other => {
            return Err(ConfigError::UnknownPreset(
                other.to_string(),
                PRESETS.join(", "),
            ))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_structured() {
        for p in PRESETS {
            let cfg = preset(p).unwrap();
            assert!(!cfg.experiments.is_empty(), "{p}");
        }
        assert!(matches!(
            preset("nope"),
            Err(ConfigError::UnknownPreset(..))
        ));
        let h = preset("hierarchy").unwrap();
        assert_eq!(h.experiments.len(), 8);
        assert!(h.hierarchy_report);
        let m = preset("hat-main").unwrap();
        assert_eq!(m.experiments.len(), 18); // 9 decoders x 2 methods
        let d = preset("hat-defa").unwrap();
        assert_eq!(d.experiments.len(), 6);
        let t = preset("tat-crosslang").unwrap();
        assert!(t
            .experiments
            .iter()
            .all(|e| e.language == Language::LangB));
    }

    #[test]
    fn exclusion_notation_expands() {
        let all: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        let out = expand_channel_set(&["~B".to_string()], &all).unwrap();
        assert_eq!(out, vec!["A", "C", "D"]);
        assert_eq!(out.len(), all.len() - 1);
        assert!(!out.contains(&"B".to_string()));
        // plain names pass through
        let out = expand_channel_set(&["C".to_string(), "A".to_string()], &all).unwrap();
        assert_eq!(out, vec!["C", "A"]);
        // unknown channels rejected, both forms
        assert!(expand_channel_set(&["~Z".to_string()], &all).is_err());
        assert!(expand_channel_set(&["Z".to_string()], &all).is_err());
        // duplicates after expansion rejected
        assert!(expand_channel_set(&["~B".to_string(), "A".to_string()], &all).is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = preset("hat-defa").unwrap();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn validation_names_bad_fields() {
        let mut cfg = base_config(1);
        cfg.experiments.push(ExperimentEntry {
            name: "x".into(),
            method: Method::VanPre,
            train_channels: vec!["NOPE".into()],
            test_channels: vec!["COND".into()],
            language: Language::LangA,
        });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("train_channels"), "{err}");

        let mut cfg = base_config(1);
        cfg.clean_channel = "ADR".into(); // not an identity profile
        assert!(cfg.validate().is_err());

        let mut cfg = base_config(1);
        cfg.corpus.token_len_min = 5; // > max
        assert!(cfg.validate().is_err());
    }
}
