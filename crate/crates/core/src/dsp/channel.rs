//! Simulated recording channels: a linear-phase FIR coloration, additive
//! Gaussian noise at a target SNR, gain, and hard clipping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{fnv1a, mix_seed, Waveform};

/// Deterministic description of one simulated recording channel.
///
/// `fir_taps` must be symmetric (linear phase) with odd length so the group
/// delay is exactly (len-1)/2 samples; `apply_channel` compensates it and
/// parallel-channel waveforms stay sample-aligned.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelProfile {
    pub name: String,
    pub fir_taps: Vec<f64>,
    /// Additive Gaussian noise level; `f64::INFINITY` means no noise.
    #[serde(default = "inf")]
    pub noise_snr_db: f64,
    #[serde(default)]
    pub gain_db: f64,
    #[serde(default = "one")]
    pub clip_threshold: f64,
    /// A-priori distortion ordering, used only by tests and reports.
    pub severity_rank: u32,
}

fn inf() -> f64 {
    f64::INFINITY
}
fn one() -> f64 {
    1.0
}

impl ChannelProfile {
    pub fn identity(name: &str) -> Self {
        ChannelProfile {
            name: name.to_string(),
            fir_taps: vec![1.0],
            noise_snr_db: f64::INFINITY,
            gain_db: 0.0,
            clip_threshold: 1.0,
            severity_rank: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.fir_taps == [1.0]
            && self.noise_snr_db.is_infinite()
            && self.gain_db == 0.0
            && self.clip_threshold == 1.0
    }
}

/// The eight simulated profiles. COND is the identity (clean reference);
/// severity grows mainly with noise level, plus coloration and clipping,
/// up to WCAM as the most distorted channel.
pub fn default_profiles() -> Vec<ChannelProfile> {
    let mk = |name: &str, taps: &[f64], snr: f64, gain: f64, clip: f64, rank: u32| {
        ChannelProfile {
            name: name.to_string(),
            fir_taps: taps.to_vec(),
            noise_snr_db: snr,
            gain_db: gain,
            clip_threshold: clip,
            severity_rank: rank,
        }
    };
    vec![
        ChannelProfile::identity("COND"),
        mk("ADR", &[0.25, 0.5, 0.25], 30.0, 0.0, 1.0, 1),
        mk("ZM-X", &[0.2, 0.6, 0.2], 26.0, -2.0, 1.0, 2),
        mk("ZM-Y", &[0.18, 0.64, 0.18], 23.0, -3.0, 1.0, 3),
        mk("IPH", &[-0.2, 1.0, -0.2], 20.0, 0.0, 1.0, 4),
        mk("LAV", &[0.1, 0.2, 0.4, 0.2, 0.1], 16.0, 2.0, 0.9, 5),
        mk("PCM", &[0.15, 0.2, 0.3, 0.2, 0.15], 11.0, -1.0, 1.0, 6),
        mk("WCAM", &[0.05, 0.25, 0.4, 0.25, 0.05], 8.0, 4.0, 0.6, 7),
    ]
}

/// Centered FIR: output[n] = sum_k taps[k] * x[n - k + delay], zero-padded at
/// the edges. With symmetric taps this cancels the group delay exactly.
fn fir_centered(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let delay = (taps.len() - 1) / 2;
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, h) in taps.iter().enumerate() {
            let idx = n as isize - k as isize + delay as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += h * x[idx as usize];
            }
        }
        *out = acc;
    }
    y
}

/// Pass a waveform through a simulated channel:
/// `clip(gain * (fir (*) w) + noise(snr, seed), threshold)`.
///
/// The noise stream is derived from the seed and the channel name, so
/// different channels of the same utterance get independent noise. The
/// generated noise is rescaled so the achieved SNR equals the requested one
/// exactly (measured against the post-gain signal, before clipping).
pub fn apply_channel(w: &Waveform, profile: &ChannelProfile, seed: u64) -> Waveform {
    if profile.is_identity() {
        return w.clone();
    }
    let mut samples = if profile.fir_taps == [1.0] {
        w.samples.clone()
    } else {
        fir_centered(&w.samples, &profile.fir_taps)
    };
    if profile.gain_db != 0.0 {
        let g = 10f64.powf(profile.gain_db / 20.0);
        for s in &mut samples {
            *s *= g;
        }
    }
    if profile.noise_snr_db.is_finite() && !samples.is_empty() {
        let sig_power =
            samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
        if sig_power > 0.0 {
            let target_power = sig_power / 10f64.powf(profile.noise_snr_db / 10.0);
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(&profile.name)));
            let normal = Normal::new(0.0, 1.0).unwrap();
            let raw: Vec<f64> = (0..samples.len()).map(|_| normal.sample(&mut rng)).collect();
            let raw_power = raw.iter().map(|s| s * s).sum::<f64>() / raw.len() as f64;
            let scale = (target_power / raw_power).sqrt();
            for (s, n) in samples.iter_mut().zip(&raw) {
                *s += n * scale;
            }
        }
    }
    let clip = profile.clip_threshold;
    for s in &mut samples {
        *s = s.clamp(-clip, clip);
    }
    Waveform::new(samples, w.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{synth_utterance, Language, SynthConfig};

    fn test_wave() -> Waveform {
        synth_utterance(&[1, 4, 6], Language::LangA, 123, &SynthConfig::default()).unwrap()
    }

    #[test]
    fn identity_profile_is_bitwise_identity() {
        let w = test_wave();
        let out = apply_channel(&w, &ChannelProfile::identity("COND"), 42);
        assert!(w
            .samples
            .iter()
            .zip(&out.samples)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn pure_gain_halves_amplitude() {
        let w = test_wave();
        let profile = ChannelProfile {
            name: "G".into(),
            fir_taps: vec![1.0],
            noise_snr_db: f64::INFINITY,
            gain_db: -6.020_599_913_279_624,
            clip_threshold: 1.0,
            severity_rank: 0,
        };
        let out = apply_channel(&w, &profile, 0);
        for (a, b) in w.samples.iter().zip(&out.samples) {
            assert!((b - a / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn achieved_snr_matches_request() {
        let w = test_wave();
        let profile = ChannelProfile {
            name: "N".into(),
            fir_taps: vec![1.0],
            noise_snr_db: 15.0,
            gain_db: 0.0,
            clip_threshold: 1.0,
            severity_rank: 1,
        };
        let out = apply_channel(&w, &profile, 7);
        // Noise is the difference of the two known components.
        let noise_power = w
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            / w.len() as f64;
        let snr = 10.0 * (w.power() / noise_power).log10();
        assert!((snr - 15.0).abs() < 0.5, "snr = {snr}");
    }

    #[test]
    fn deterministic_per_seed_and_channel_name() {
        let w = test_wave();
        let p = default_profiles().remove(4);
        let a = apply_channel(&w, &p, 9);
        let b = apply_channel(&w, &p, 9);
        assert_eq!(a.samples, b.samples);
        let c = apply_channel(&w, &p, 10);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn output_length_preserved_and_aligned() {
        let w = test_wave();
        for p in default_profiles() {
            let out = apply_channel(&w, &p, 3);
            assert_eq!(out.len(), w.len(), "{}", p.name);
            // Cross-correlation peak must sit at lag 0.
            let mut best_lag = 0isize;
            let mut best = f64::NEG_INFINITY;
            for lag in -8isize..=8 {
                let mut s = 0.0;
                for i in 0..w.len() {
                    let j = i as isize + lag;
                    if j >= 0 && (j as usize) < w.len() {
                        s += w.samples[i] * out.samples[j as usize];
                    }
                }
                if s > best {
                    best = s;
                    best_lag = lag;
                }
            }
            assert_eq!(best_lag, 0, "channel {} misaligned", p.name);
        }
    }

    #[test]
    fn clipping_bounds_output() {
        let w = test_wave();
        let p = default_profiles().into_iter().last().unwrap(); // WCAM
        let out = apply_channel(&w, &p, 1);
        assert!(out.samples.iter().all(|s| s.abs() <= p.clip_threshold));
    }

    #[test]
    fn default_profiles_are_well_formed() {
        let ps = default_profiles();
        assert_eq!(ps.len(), 8);
        assert!(ps[0].is_identity());
        for p in &ps {
            assert!(!p.fir_taps.is_empty());
            assert!(p.fir_taps.len() % 2 == 1, "{} taps not odd", p.name);
            // symmetric taps => linear phase
            let n = p.fir_taps.len();
            for i in 0..n / 2 {
                assert_eq!(p.fir_taps[i], p.fir_taps[n - 1 - i], "{}", p.name);
            }
            assert!(p.clip_threshold > 0.0 && p.clip_threshold <= 1.0);
        }
        let mut ranks: Vec<u32> = ps.iter().map(|p| p.severity_rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (0..8).collect::<Vec<_>>());
    }
}
