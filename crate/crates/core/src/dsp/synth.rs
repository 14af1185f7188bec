//! Deterministic utterance synthesis: each token renders a fixed-duration
//! multi-harmonic segment whose fundamental depends on (token, language),
//! with seed-controlled jitter in amplitude and micro-timing. Segment and
//! gap lengths are fixed so the total duration is a pure function of the
//! token count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DspError, Language, Waveform};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub sample_rate: u32,
    pub token_ms: u32,
    pub gap_ms: u32,
    /// Leading and trailing silence, each.
    pub pad_ms: u32,
    /// Peak amplitude of a token segment before jitter.
    pub amplitude: f64,
    /// Raised-cosine attack/release length.
    pub ramp_ms: u32,
    pub vocab_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate: 16_000,
            token_ms: 200,
            gap_ms: 50,
            pad_ms: 50,
            amplitude: 0.25,
            ramp_ms: 10,
            vocab_size: 8,
        }
    }
}

impl SynthConfig {
    fn ms_to_samples(&self, ms: u32) -> usize {
        (self.sample_rate as usize * ms as usize) / 1000
    }
}

/// Fundamental frequency for a token. The two language tables are disjoint,
/// and the geometric spacing keeps adjacent tokens more than one mel filter
/// width apart so they stay separable after the filterbank.
pub fn fundamental_hz(token: usize, language: Language) -> f64 {
    match language {
        Language::LangA => 220.0 * 1.40f64.powi(token as i32),
        Language::LangB => 250.0 * 1.33f64.powi(token as i32),
    }
}

/// Relative harmonic amplitudes; the fundamental dominates in both tables.
fn harmonics(language: Language) -> &'static [f64] {
    match language {
        Language::LangA => &[1.0, 0.4, 0.2],
        Language::LangB => &[1.0, 0.2, 0.45, 0.25],
    }
}

/// Total sample count for an utterance of `num_tokens` tokens:
/// `2*pad + num_tokens*token + (num_tokens-1)*gap`.
pub fn expected_num_samples(cfg: &SynthConfig, num_tokens: usize) -> usize {
    2 * cfg.ms_to_samples(cfg.pad_ms)
        + num_tokens * cfg.ms_to_samples(cfg.token_ms)
        + num_tokens.saturating_sub(1) * cfg.ms_to_samples(cfg.gap_ms)
}

pub fn synth_utterance(
    tokens: &[usize],
    language: Language,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Waveform, DspError> {
    if tokens.is_empty() {
        return Err(DspError::EmptyTokens);
    }
    for &t in tokens {
        if t >= cfg.vocab_size {
            return Err(DspError::TokenOutOfRange {
                token: t,
                vocab: cfg.vocab_size,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate as f64;
    let pad = cfg.ms_to_samples(cfg.pad_ms);
    let seg_len = cfg.ms_to_samples(cfg.token_ms);
    let gap = cfg.ms_to_samples(cfg.gap_ms);
    let ramp = cfg.ms_to_samples(cfg.ramp_ms);
    let max_onset = cfg.ms_to_samples(5);

    let mut samples = vec![0.0; expected_num_samples(cfg, tokens.len())];
    let mut cursor = pad;
    for (ti, &tok) in tokens.iter().enumerate() {
        if ti > 0 {
            cursor += gap;
        }
        let amp_jitter: f64 = rng.random_range(0.85..1.0);
        let onset: usize = rng.random_range(0..=max_onset);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let f0 = fundamental_hz(tok, language);
        let harm = harmonics(language);
        let norm: f64 = harm.iter().sum();
        let tone_len = seg_len - onset;
        for n in 0..tone_len {
            let t = n as f64 / sr;
            let mut v = 0.0;
            for (h, a) in harm.iter().enumerate() {
                v += a * (std::f64::consts::TAU * f0 * (h + 1) as f64 * t + phase).sin();
            }
            v *= cfg.amplitude * amp_jitter / norm;
            // Raised-cosine attack and release inside the segment.
            let env = envelope(n, tone_len, ramp);
            samples[cursor + onset + n] = v * env;
        }
        cursor += seg_len;
    }
    Ok(Waveform::new(samples, cfg.sample_rate))
}

fn envelope(n: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let up = if n < ramp {
        0.5 - 0.5 * (std::f64::consts::PI * n as f64 / ramp as f64).cos()
    } else {
        1.0
    };
    let from_end = len - 1 - n;
    let down = if from_end < ramp {
        0.5 - 0.5 * (std::f64::consts::PI * from_end as f64 / ramp as f64).cos()
    } else {
        1.0
    };
    up.min(down)
}

/// Frame layout of the token segments: (start_sample, end_sample) per token.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn token_spans(cfg: &SynthConfig, num_tokens: usize) -> Vec<(usize, usize)> {
    let pad = cfg.ms_to_samples(cfg.pad_ms);
    let seg = cfg.ms_to_samples(cfg.token_ms);
    let gap = cfg.ms_to_samples(cfg.gap_ms);
    let mut out = Vec::with_capacity(num_tokens);
    let mut cursor = pad;
    for i in 0..num_tokens {
        if i > 0 {
            cursor += gap;
        }
        out.push((cursor, cursor + seg));
        cursor += seg;
    }
    out
}
