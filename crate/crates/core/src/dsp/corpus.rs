//! Parallel multi-channel corpus: every utterance is one clean synthetic
//! source passed through every channel profile, so speaker and linguistic
//! content are identical across channels by construction.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wav::{read_wav, write_wav};
use super::{
    apply_channel, fnv1a, mix_seed, synth_utterance, ChannelProfile, DspError, Language,
    SynthConfig, Waveform,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<usize>,
    pub language: Language,
    /// One waveform per channel, in channel_set order.
    pub waveforms: Vec<(String, Waveform)>,
    /// The clean source signal; present for generated corpora, absent after
    /// reload from disk.
    pub source: Option<Waveform>,
}

impl Utterance {
    pub fn channel(&self, name: &str) -> Option<&Waveform> {
        self.waveforms
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, w)| w)
    }
}

/// One split of utterances, all carrying the same channel set.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub utterances: Vec<Utterance>,
    pub split: Split,
    pub channel_set: Vec<ChannelProfile>,
}

#[derive(Debug, Clone)]
pub struct CorpusBundle {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

impl CorpusBundle {
    pub fn channel_names(&self) -> Vec<String> {
        self.train
            .channel_set
            .iter()
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn split(&self, s: Split) -> &ParallelCorpus {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorpusSpec {
    pub channels: Vec<ChannelProfile>,
    pub train_utts: usize,
    pub dev_utts: usize,
    pub test_utts: usize,
    pub token_len_min: usize,
    pub token_len_max: usize,
    pub language: Language,
    pub synth: SynthConfig,
}

impl CorpusSpec {
    fn validate(&self) -> Result<(), DspError> {
        let mut seen = BTreeSet::new();
        for p in &self.channels {
            if !seen.insert(p.name.clone()) {
                return Err(DspError::Config(format!(
                    "duplicate channel name {}",
                    p.name
                )));
            }
        }
        if self.channels.is_empty() {
            return Err(DspError::Config("no channels configured".into()));
        }
        if self.token_len_min == 0 || self.token_len_min > self.token_len_max {
            return Err(DspError::Config(format!(
                "bad token length range [{}, {}]",
                self.token_len_min, self.token_len_max
            )));
        }
        Ok(())
    }
}

/// Deterministic corpus generation: a pure function of (spec, seed).
pub fn build_parallel_corpus(spec: &CorpusSpec, seed: u64) -> Result<CorpusBundle, DspError> {
    spec.validate()?;
    let total = spec.train_utts + spec.dev_utts + spec.test_utts;
    let mut splits = vec![Vec::new(), Vec::new(), Vec::new()];
    for i in 0..total {
        let utt_seed = mix_seed(seed, i as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(utt_seed);
        let len = rng.random_range(spec.token_len_min..=spec.token_len_max);
        let tokens: Vec<usize> = (0..len)
            .map(|_| rng.random_range(0..spec.synth.vocab_size))
            .collect();
        let source = synth_utterance(&tokens, spec.language, utt_seed, &spec.synth)?;
        let waveforms: Vec<(String, Waveform)> = spec
            .channels
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    apply_channel(&source, p, mix_seed(utt_seed, fnv1a(&p.name))),
                )
            })
            .collect();
        let utt = Utterance {
            id: format!("utt{i:04}"),
            tokens,
            language: spec.language,
            waveforms,
            source: Some(source),
        };
        let slot = if i < spec.train_utts {
            0
        } else if i < spec.train_utts + spec.dev_utts {
            1
        } else {
            2
        };
        splits[slot].push(utt);
    }
    let mut it = splits.into_iter();
    let mk = |utts, split| ParallelCorpus {
        utterances: utts,
        split,
        channel_set: spec.channels.clone(),
    };
    Ok(CorpusBundle {
        train: mk(it.next().unwrap(), Split::Train),
        dev: mk(it.next().unwrap(), Split::Dev),
        test: mk(it.next().unwrap(), Split::Test),
    })
}

/// Write WAVs plus a manifest to `dir`.
///
/// Manifest format (`manifest.tsv`): one line per utterance, tab-separated:
/// `id  language  tokens(comma-joined)  split  name=relpath;name=relpath;...`
/// with channels listed in channel-set order.
pub fn write_corpus(bundle: &CorpusBundle, dir: &Path) -> Result<(), DspError> {
    let io = |p: &Path, e: std::io::Error| DspError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| io(&wav_dir, e))?;
    let mut manifest = String::new();
    for split in [&bundle.train, &bundle.dev, &bundle.test] {
        for utt in &split.utterances {
            let mut paths = Vec::new();
            for (name, w) in &utt.waveforms {
                let rel = format!("wav/{}_{}.wav", utt.id, name);
                write_wav(&dir.join(&rel), w)?;
                paths.push(format!("{name}={rel}"));
            }
            let tokens: Vec<String> = utt.tokens.iter().map(|t| t.to_string()).collect();
            manifest.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                utt.id,
                utt.language.as_str(),
                tokens.join(","),
                split.split.as_str(),
                paths.join(";")
            ));
        }
    }
    let mpath = dir.join("manifest.tsv");
    std::fs::write(&mpath, manifest).map_err(|e| io(&mpath, e))
}

/// Reload a corpus written by [`write_corpus`]. Channel profiles are not
/// stored with the audio, so the caller supplies them (they must match the
/// names in the manifest).
pub fn load_corpus(dir: &Path, channels: &[ChannelProfile]) -> Result<CorpusBundle, DspError> {
    let mpath = dir.join("manifest.tsv");
    let text = std::fs::read_to_string(&mpath).map_err(|e| DspError::Io {
        path: mpath.display().to_string(),
        source: e,
    })?;
    let mut splits: [Vec<Utterance>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| DspError::BadManifest {
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", fields.len())));
        }
        let id = fields[0].to_string();
        let language =
            Language::parse(fields[1]).ok_or_else(|| bad(format!("bad language {}", fields[1])))?;
        let tokens: Vec<usize> = fields[2]
            .split(',')
            .map(|t| t.parse().map_err(|_| bad(format!("bad token {t}"))))
            .collect::<Result<_, _>>()?;
        let split =
            Split::parse(fields[3]).ok_or_else(|| bad(format!("bad split {}", fields[3])))?;
        let mut waveforms = Vec::new();
        for part in fields[4].split(';') {
            let (name, rel) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("bad channel entry {part}")))?;
            waveforms.push((name.to_string(), read_wav(&dir.join(rel))?));
        }
        let expected: Vec<&str> = channels.iter().map(|p| p.name.as_str()).collect();
        let got: Vec<&str> = waveforms.iter().map(|(n, _)| n.as_str()).collect();
        if expected != got {
            return Err(bad(format!(
                "channel set mismatch: manifest has {got:?}, config has {expected:?}"
            )));
        }
        let utt = Utterance {
            id,
            tokens,
            language,
            waveforms,
            source: None,
        };
        let slot = match split {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        };
        splits[slot].push(utt);
    }
    let [train, dev, test] = splits;
    let mk = |utterances, split| ParallelCorpus {
        utterances,
        split,
        channel_set: channels.to_vec(),
    };
    Ok(CorpusBundle {
        train: mk(train, Split::Train),
        dev: mk(dev, Split::Dev),
        test: mk(test, Split::Test),
    })
}
