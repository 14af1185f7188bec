//! Log-mel feature extraction and a frame-energy speech activity mask.

use rustfft::{num_complex::Complex, FftPlanner};

use super::{DspError, Waveform};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureConfig {
    pub n_mels: usize,
    /// Analysis window, samples (25 ms at 16 kHz).
    pub win_len: usize,
    /// Hop, samples (10 ms at 16 kHz).
    pub hop_len: usize,
    pub n_fft: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 26,
            win_len: 400,
            hop_len: 160,
            n_fft: 512,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    /// T = 1 + floor((num_samples - win_len) / hop_len)
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        if num_samples < self.win_len {
            None
        } else {
            Some(1 + (num_samples - self.win_len) / self.hop_len)
        }
    }
}

/// Time-by-mel-bin log features, row-major [T, F].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub t: usize,
    pub f: usize,
    pub data: Vec<f64>,
    pub hop_ms: f64,
}

impl FeatureMatrix {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.t, self.f], self.data.clone()).unwrap()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.f..(t + 1) * self.f]
    }

    /// Per-utterance cepstral mean/variance normalization: each mel bin is
    /// standardized over time, which removes the channel's static gain and
    /// spectral tilt before the encoder sees the features.
    pub fn normalized_tensor(&self) -> Tensor {
        let mut out = self.data.clone();
        let t = self.t as f64;
        for bin in 0..self.f {
            let col = || (0..self.t).map(|ti| self.data[ti * self.f + bin]);
            let mean = col().sum::<f64>() / t;
            let var = col().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
            let inv = 1.0 / var.sqrt().max(1e-8);
            for ti in 0..self.t {
                out[ti * self.f + bin] = (self.data[ti * self.f + bin] - mean) * inv;
            }
        }
        Tensor::new(vec![self.t, self.f], out).unwrap()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular mel filters.
pub fn mel_center_freqs(cfg: &FeatureConfig, sample_rate: u32) -> Vec<f64> {
    let fmax = sample_rate as f64 / 2.0;
    let mmax = hz_to_mel(fmax);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(mmax * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Dense triangular filterbank over the positive-frequency FFT bins.
fn mel_filterbank(cfg: &FeatureConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let fmax = sample_rate as f64 / 2.0;
    let mmax = hz_to_mel(fmax);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mmax * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let mut filters = vec![vec![0.0; n_bins]; cfg.n_mels];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for (k, w) in filters[m].iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f > lo && f < center {
                *w = (f - lo) / (center - lo);
            } else if f >= center && f < hi {
                *w = (hi - f) / (hi - center);
            }
        }
    }
    filters
}

fn hann(win_len: usize) -> Vec<f64> {
    (0..win_len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / win_len as f64).cos())
        .collect()
}

/// Magnitude STFT -> triangular mel filterbank -> log with floor.
pub fn log_mel(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix, DspError> {
    let t = cfg.num_frames(w.len()).ok_or(DspError::TooShort {
        samples: w.len(),
        needed: cfg.win_len,
    })?;
    let filters = mel_filterbank(cfg, w.sample_rate);
    let window = hann(cfg.win_len);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;
    let mut data = vec![0.0; t * cfg.n_mels];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for ti in 0..t {
        let start = ti * cfg.hop_len;
        for b in buf.iter_mut() {
            *b = Complex::new(0.0, 0.0);
        }
        for n in 0..cfg.win_len {
            buf[n] = Complex::new(w.samples[start + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for (m, filter) in filters.iter().enumerate() {
            let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            data[ti * cfg.n_mels + m] = e.max(cfg.log_floor).ln();
        }
    }
    Ok(FeatureMatrix {
        t,
        f: cfg.n_mels,
        data,
        hop_ms: cfg.hop_len as f64 / w.sample_rate as f64 * 1000.0,
    })
}

/// Downsample a per-frame boolean mask by `stack`: a group counts as active
/// when any member frame is active. Matches the encoder's frame stacking
/// (trailing remainder frames are dropped).
pub fn stack_mask(mask: &[bool], stack: usize) -> Vec<bool> {
    if stack <= 1 {
        return mask.to_vec();
    }
    mask.chunks_exact(stack).map(|c| c.iter().any(|m| *m)).collect()
}

/// Per-frame speech/silence flags from frame energy, thresholded relative to
/// the utterance's noise floor (mean of the quietest 20% of frames).
pub fn speech_activity_mask(w: &Waveform, cfg: &FeatureConfig) -> Vec<bool> {
    let t = match cfg.num_frames(w.len()) {
        Some(t) => t,
        None => return Vec::new(),
    };
    let energies: Vec<f64> = (0..t)
        .map(|ti| {
            let start = ti * cfg.hop_len;
            w.samples[start..start + cfg.win_len]
                .iter()
                .map(|s| s * s)
                .sum::<f64>()
                / cfg.win_len as f64
        })
        .collect();
    let mut sorted = energies.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (t / 5).max(1);
    let floor = sorted[..k].iter().sum::<f64>() / k as f64;
    let max_e = *sorted.last().unwrap();
    if max_e < 1e-7 {
        return vec![false; t];
    }
    // A noise floor close to the peak means there are no silent stretches.
    if floor >= 0.25 * max_e {
        return vec![true; t];
    }
    let thresh = (4.0 * floor).max(0.02 * max_e).max(1e-7);
    energies.iter().map(|e| *e >= thresh).collect()
}
