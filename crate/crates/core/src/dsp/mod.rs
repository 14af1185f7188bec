//! Synthetic parallel multi-channel speech: waveform synthesis, simulated
//! recording channels, log-mel features and corpus assembly.

mod channel;
mod corpus;
mod features;
mod synth;
pub mod wav;

pub use channel::{apply_channel, default_profiles, ChannelProfile};
pub use corpus::{
    build_parallel_corpus, load_corpus, write_corpus, CorpusBundle, CorpusSpec, ParallelCorpus,
    Split, Utterance,
};
pub use features::{
    log_mel, mel_center_freqs, speech_activity_mask, stack_mask, FeatureConfig, FeatureMatrix,
};
pub use synth::{expected_num_samples, fundamental_hz, synth_utterance, SynthConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("empty token list")]
    EmptyTokens,
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("waveform too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("corpus config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad wav file {path}: {reason}")]
    BadWav { path: String, reason: String },
    #[error("bad manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
}

/// Mono audio at a fixed sample rate, amplitude within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// Which synthetic vocabulary/acoustic mapping an utterance uses. The two
/// languages have disjoint fundamental-frequency tables, so transferring
/// between them is a genuine distribution shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Language {
    LangA,
    LangB,
}

impl Language {
    pub fn as_str(&self) -> &'static str {
        match self {
            Language::LangA => "LangA",
            Language::LangB => "LangB",
        }
    }

    pub fn parse(s: &str) -> Option<Language> {
        match s {
            "LangA" => Some(Language::LangA),
            "LangB" => Some(Language::LangB),
            _ => None,
        }
    }
}

/// splitmix64, used to derive independent sub-seeds deterministically.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a string, for name-derived seed salts.
pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}
