//! Minimal 16-bit PCM mono WAV read/write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DspError, Waveform};

fn io_err(path: &Path, source: std::io::Error) -> DspError {
    DspError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), DspError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let n = w.samples.len() as u32;
    let data_len = n * 2;
    let sr = w.sample_rate;
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| io_err(path, e));
    write(b"RIFF")?;
    write(&(36 + data_len).to_le_bytes())?;
    write(b"WAVE")?;
    write(b"fmt ")?;
    write(&16u32.to_le_bytes())?;
    write(&1u16.to_le_bytes())?; // PCM
    write(&1u16.to_le_bytes())?; // mono
    write(&sr.to_le_bytes())?;
    write(&(sr * 2).to_le_bytes())?; // byte rate
    write(&2u16.to_le_bytes())?; // block align
    write(&16u16.to_le_bytes())?; // bits per sample
    write(b"data")?;
    write(&data_len.to_le_bytes())?;
    for s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        write(&q.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Waveform, DspError> {
    let mut file = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    let bad = |reason: &str| DspError::BadWav {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    // Walk chunks; accept only PCM16 mono.
    let mut pos = 12;
    let mut sample_rate = 0u32;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + len).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(bad("only 16-bit PCM mono is supported"));
                }
                sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (len % 2);
    }
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if sample_rate == 0 {
        return Err(bad("missing fmt chunk"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok(Waveform::new(samples, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{synth_utterance, Language, SynthConfig};

    #[test]
    fn roundtrip_within_quantization() {
        let w = synth_utterance(&[0, 5], Language::LangB, 3, &SynthConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, w.sample_rate);
        assert_eq!(back.len(), w.len());
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn quantization_is_idempotent() {
        let w = synth_utterance(&[2], Language::LangA, 9, &SynthConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.wav");
        let p2 = dir.path().join("b.wav");
        write_wav(&p1, &w).unwrap();
        let once = read_wav(&p1).unwrap();
        write_wav(&p2, &once).unwrap();
        let twice = read_wav(&p2).unwrap();
        assert!(once
            .samples
            .iter()
            .zip(&twice.samples)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
