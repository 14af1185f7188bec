//! End-to-end experiment orchestration: corpus generation, encoder
//! pretraining, adapter alignment, per-channel decoder training, DEFA
//! fine-tuning, and report emission. Each stage is usable on its own (the
//! CLI composes them) and `run` chains the whole pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{expand_channel_set, ConfigError, ExperimentConfig, ExperimentEntry, Method};
use crate::dsp::{
    build_parallel_corpus, log_mel, speech_activity_mask, CorpusBundle, CorpusSpec, DspError,
    Language, ParallelCorpus, Split,
};
use crate::eval::{
    channel_matrix_eval, embed_corpus, feature_diff_heatmap, hierarchy_consistency,
    relative_improvement, write_csv, write_heatmap, CerReport, EmbeddingTable, EvalError,
    HierarchyStats,
};
use crate::model::{
    encode_adp, encode_pre, save_checkpoint, AdapterEncoder, AdapterStack, CkptError, CtcHead,
    Encoder, TrainMeta,
};
use crate::training::{
    pretrain, train_adapters, train_decoder, write_train_log, AlignSample, CtcSample,
    DecodeSample, TrainError, TrainReport,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ExpError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
}

impl ExpError {
    /// Process exit code contract: 2 config/usage, 3 IO, 4 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config(ConfigError::Io { .. }) => 3,
            ExpError::Config(_) => 2,
            ExpError::Dsp(DspError::Io { .. }) => 3,
            ExpError::Dsp(_) => 2,
            ExpError::Train(TrainError::NonFiniteGrad { .. })
            | ExpError::Train(TrainError::NonFiniteLoss { .. }) => 4,
            ExpError::Train(TrainError::Io(DspError::Io { .. })) => 3,
            ExpError::Train(_) => 2,
            ExpError::Eval(EvalError::Dsp(DspError::Io { .. })) => 3,
            ExpError::Eval(_) => 2,
            ExpError::Model(_) => 2,
            ExpError::Ckpt(CkptError::Io { .. }) => 3,
            ExpError::Ckpt(_) => 2,
            ExpError::MissingPrerequisite(_) => 2,
        }
    }
}

fn mix(seed: u64, s: &str) -> u64 {
    crate::dsp::mix_seed(seed, crate::dsp::fnv1a(s))
}

fn mkdir(d: &Path) -> Result<(), ExpError> {
    std::fs::create_dir_all(d).map_err(|e| {
        DspError::Io {
            path: d.display().to_string(),
            source: e,
        }
        .into()
    })
}

/// Stable file-name form of a (language, channel set) decoder identity.
pub fn file_key(language: Language, set: &[String]) -> String {
    let set = set
        .join("_")
        .replace('~', "not-")
        .replace(['/', ' '], "-");
    format!("{}-{}", language.as_str(), set)
}

/// Deterministic corpus for one language of the config.
pub fn build_corpus(cfg: &ExperimentConfig, language: Language) -> Result<CorpusBundle, ExpError> {
    let mut synth = cfg.corpus.synth_config();
    synth.vocab_size = cfg.encoder.vocab_size;
    let spec = CorpusSpec {
        channels: cfg.corpus.profiles(),
        train_utts: cfg.corpus.train_utts,
        dev_utts: cfg.corpus.dev_utts,
        test_utts: cfg.corpus.test_utts,
        token_len_min: cfg.corpus.token_len_min,
        token_len_max: cfg.corpus.token_len_max,
        language,
        synth,
    };
    let seed = mix(cfg.seed, &format!("corpus-{}", language.as_str()));
    Ok(build_parallel_corpus(&spec, seed)?)
}

fn clean_ctc_samples(
    part: &ParallelCorpus,
    clean: &str,
    fcfg: &crate::dsp::FeatureConfig,
) -> Result<Vec<CtcSample>, ExpError> {
    let mut out = Vec::with_capacity(part.utterances.len());
    for utt in &part.utterances {
        let w = utt
            .channel(clean)
            .ok_or_else(|| EvalError::MissingChannel(clean.to_string()))?;
        out.push((log_mel(w, fcfg)?, utt.tokens.clone()));
    }
    Ok(out)
}

/// Jointly train the base encoder and a CTC head on clean speech; the
/// resulting encoder is the frozen teacher for everything downstream.
pub fn stage_pretrain(
    cfg: &ExperimentConfig,
    corpus_a: &CorpusBundle,
) -> Result<(Encoder, CtcHead, TrainReport), ExpError> {
    let fcfg = cfg.features();
    let train = clean_ctc_samples(corpus_a.split(Split::Train), &cfg.clean_channel, &fcfg)?;
    let dev = clean_ctc_samples(corpus_a.split(Split::Dev), &cfg.clean_channel, &fcfg)?;
    let mut pre_cfg = cfg.pretrain.clone();
    pre_cfg.seed = mix(cfg.seed, "pretrain");
    Ok(pretrain(&cfg.encoder, &train, &dev, &pre_cfg)?)
}

/// Alignment pairs: (channel features, clean teacher embedding) for every
/// utterance and every non-excluded channel, clean included.
fn align_samples(
    enc: &Encoder,
    part: &ParallelCorpus,
    clean: &str,
    excluded: &[String],
    fcfg: &crate::dsp::FeatureConfig,
) -> Result<Vec<AlignSample>, ExpError> {
    let mut out = Vec::new();
    for utt in &part.utterances {
        let clean_w = utt
            .channel(clean)
            .ok_or_else(|| EvalError::MissingChannel(clean.to_string()))?;
        let teacher = encode_pre(enc, &log_mel(clean_w, fcfg)?)?;
        for (name, w) in &utt.waveforms {
            if excluded.iter().any(|e| e == name) {
                continue;
            }
            out.push((log_mel(w, fcfg)?, teacher.clone()));
        }
    }
    Ok(out)
}

/// Train the bottleneck adapters on the LangA parallel corpus against the
/// frozen teacher.
pub fn stage_adapters(
    cfg: &ExperimentConfig,
    corpus_a: &CorpusBundle,
    enc: &Encoder,
) -> Result<(AdapterStack, TrainReport), ExpError> {
    let fcfg = cfg.features();
    let train = align_samples(
        enc,
        corpus_a.split(Split::Train),
        &cfg.clean_channel,
        &cfg.excluded_channels,
        &fcfg,
    )?;
    let dev = align_samples(
        enc,
        corpus_a.split(Split::Dev),
        &cfg.clean_channel,
        &cfg.excluded_channels,
        &fcfg,
    )?;
    let mut a_cfg = cfg.adapters.clone();
    a_cfg.seed = mix(cfg.seed, "adapters");
    Ok(train_adapters(enc, &train, &dev, &a_cfg)?)
}

/// Decoder samples over a channel subset: embeddings from the teacher, or
/// from the adapted student when `adapters` is given.
fn subset_samples(
    enc: &Encoder,
    adapters: Option<&AdapterStack>,
    part: &ParallelCorpus,
    channels: &[String],
    fcfg: &crate::dsp::FeatureConfig,
) -> Result<Vec<DecodeSample>, ExpError> {
    let student = adapters.map(|a| AdapterEncoder {
        base: enc.clone(),
        adapters: a.clone(),
    });
    let mut out = Vec::new();
    for utt in &part.utterances {
        for ch in channels {
            let w = utt
                .channel(ch)
                .ok_or_else(|| EvalError::MissingChannel(ch.clone()))?;
            let feats = log_mel(w, fcfg)?;
            let emb = match &student {
                Some(s) => encode_adp(s, &feats)?,
                None => encode_pre(enc, &feats)?,
            };
            out.push((emb, utt.tokens.clone()));
        }
    }
    Ok(out)
}

/// Train a CTC decoder on teacher embeddings of the given channel set
/// ("~X" notation allowed).
pub fn stage_decoder(
    cfg: &ExperimentConfig,
    enc: &Encoder,
    bundle: &CorpusBundle,
    language: Language,
    train_channels: &[String],
) -> Result<(CtcHead, TrainReport), ExpError> {
    let fcfg = cfg.features();
    let set = expand_channel_set(train_channels, &cfg.channel_names())?;
    let train = subset_samples(enc, None, bundle.split(Split::Train), &set, &fcfg)?;
    let dev = subset_samples(enc, None, bundle.split(Split::Dev), &set, &fcfg)?;
    let mut d_cfg = cfg.decoder.clone();
    d_cfg.seed = mix(cfg.seed, &format!("decoder-{}", file_key(language, train_channels)));
    Ok(train_decoder(&cfg.encoder, None, &train, &dev, &d_cfg)?)
}

/// DEFA: fine-tune an existing decoder on the adapted student's embeddings
/// of the same channel set.
pub fn stage_defa(
    cfg: &ExperimentConfig,
    enc: &Encoder,
    stack: &AdapterStack,
    init: &CtcHead,
    bundle: &CorpusBundle,
    language: Language,
    train_channels: &[String],
) -> Result<(CtcHead, TrainReport), ExpError> {
    let fcfg = cfg.features();
    let set = expand_channel_set(train_channels, &cfg.channel_names())?;
    let train = subset_samples(enc, Some(stack), bundle.split(Split::Train), &set, &fcfg)?;
    let dev = subset_samples(enc, Some(stack), bundle.split(Split::Dev), &set, &fcfg)?;
    let mut f_cfg = cfg.defa.clone();
    f_cfg.seed = mix(cfg.seed, &format!("defa-{}", file_key(language, train_channels)));
    Ok(train_decoder(&cfg.encoder, Some(init), &train, &dev, &f_cfg)?)
}

#[derive(Debug, Clone)]
pub struct EntryResult {
    pub entry: ExperimentEntry,
    pub train_set: Vec<String>,
    pub test_set: Vec<String>,
    pub report: CerReport,
    /// Dev CER of the decoder used (post-DEFA for DEFA entries).
    pub dev_cer: f64,
}

impl EntryResult {
    /// Mean CER over the entry's distorted (non-clean) test channels.
    pub fn avg_distorted(&self, clean: &str) -> f64 {
        let chans: Vec<String> = self
            .test_set
            .iter()
            .filter(|c| c.as_str() != clean)
            .cloned()
            .collect();
        self.report.average_over(&chans)
    }

    pub fn avg_all(&self) -> f64 {
        self.report.average_over(&self.test_set)
    }
}

#[derive(Debug, Clone)]
pub struct HeatmapSummary {
    /// (utterance id, student/active, teacher/active, student/inactive,
    /// teacher/inactive) mean absolute embedding differences against the
    /// clean teacher embedding.
    pub per_utt: Vec<(String, f64, f64, f64, f64)>,
    /// Utterances where the student is strictly closer in BOTH frame sets.
    pub both_better: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

pub struct RunResult {
    pub cfg: ExperimentConfig,
    pub enc_pre: Encoder,
    pub pre_head: CtcHead,
    pub pretrain_report: TrainReport,
    pub adapters: Option<AdapterStack>,
    pub adapter_report: Option<TrainReport>,
    pub entries: Vec<EntryResult>,
    pub hierarchy: Option<HierarchyStats>,
    pub heatmap: Option<HeatmapSummary>,
    pub decoders: BTreeMap<String, CtcHead>,
    pub defa_decoders: BTreeMap<String, CtcHead>,
}

/// Languages referenced by the config's experiments (LangA always included
/// because adapters and the teacher train on it).
pub fn languages_of(cfg: &ExperimentConfig) -> Vec<Language> {
    let mut l = vec![Language::LangA];
    if cfg.experiments.iter().any(|e| e.language == Language::LangB) {
        l.push(Language::LangB);
    }
    l
}

/// Evaluate all config entries given trained components; emits reports and
/// heatmaps when `out_dir` is set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &ExperimentConfig,
    enc: &Encoder,
    adapters: Option<&AdapterStack>,
    decoders: &BTreeMap<String, CtcHead>,
    defa_decoders: &BTreeMap<String, CtcHead>,
    corpora: &BTreeMap<String, CorpusBundle>,
    out_dir: Option<&Path>,
    artifacts: &mut Vec<String>,
) -> Result<(Vec<EntryResult>, Option<HierarchyStats>, Option<HeatmapSummary>), ExpError> {
    let fcfg = cfg.features();
    let names = cfg.channel_names();

    // Test-split embedding tables per language, teacher and student.
    let mut pre_test: BTreeMap<String, EmbeddingTable> = BTreeMap::new();
    let mut adp_test: BTreeMap<String, EmbeddingTable> = BTreeMap::new();
    let needs_adp = cfg
        .experiments
        .iter()
        .any(|e| matches!(e.method, Method::VanAdp | Method::Defa));
    for (lang, bundle) in corpora {
        pre_test.insert(
            lang.clone(),
            embed_corpus(enc, None, bundle.split(Split::Test), &fcfg)?,
        );
        if needs_adp {
            let stack = adapters.ok_or_else(|| {
                ExpError::MissingPrerequisite("adapter checkpoint for Van_adp/DEFA entries".into())
            })?;
            adp_test.insert(
                lang.clone(),
                embed_corpus(enc, Some(stack), bundle.split(Split::Test), &fcfg)?,
            );
        }
    }

    let mut entries = Vec::new();
    for entry in &cfg.experiments {
        let train_set = expand_channel_set(&entry.train_channels, &names)?;
        let test_set = expand_channel_set(&entry.test_channels, &names)?;
        let key = file_key(entry.language, &entry.train_channels);
        let lang = entry.language.as_str();
        let missing = |what: &str| ExpError::MissingPrerequisite(format!("{what} for {key}"));
        let (head, table) = match entry.method {
            Method::VanPre => (
                decoders.get(&key).ok_or_else(|| missing("decoder"))?,
                pre_test.get(lang).expect("built above"),
            ),
            Method::VanAdp => (
                decoders.get(&key).ok_or_else(|| missing("decoder"))?,
                adp_test.get(lang).expect("built above"),
            ),
            Method::Defa => (
                defa_decoders
                    .get(&key)
                    .ok_or_else(|| missing("DEFA decoder"))?,
                adp_test.get(lang).expect("built above"),
            ),
        };
        let report = channel_matrix_eval(head, &restrict(table, &test_set), &entry.name)?;
        entries.push(EntryResult {
            entry: entry.clone(),
            train_set,
            test_set,
            report,
            dev_cer: f64::NAN, // filled by `run`, unknown when re-evaluating
        });
    }

    let hierarchy = if cfg.hierarchy_report {
        let reports: Vec<CerReport> = entries
            .iter()
            .filter(|e| e.entry.method == Method::VanPre)
            .map(|e| e.report.clone())
            .collect();
        Some(hierarchy_consistency(&reports, &cfg.clean_channel)?)
    } else {
        None
    };

    let heatmap = match (&cfg.heatmap_channel, adapters) {
        (Some(ch), Some(stack)) => {
            let corpus_a = corpora
                .get(Language::LangA.as_str())
                .ok_or_else(|| ExpError::MissingPrerequisite("LangA corpus".into()))?;
            Some(heatmap_summary(
                cfg,
                enc,
                stack,
                corpus_a.split(Split::Test),
                ch,
                &fcfg,
                out_dir,
                artifacts,
            )?)
        }
        _ => None,
    };

    if let Some(out) = out_dir {
        let rp_dir = out.join("reports");
        mkdir(&rp_dir)?;
        write_reports(&entries, &hierarchy, &heatmap, &rp_dir, artifacts)?;
    }

    Ok((entries, hierarchy, heatmap))
}

/// Restrict an embedding table to a channel subset.
fn restrict(table: &EmbeddingTable, channels: &[String]) -> EmbeddingTable {
    EmbeddingTable {
        channels: channels.to_vec(),
        utts: table
            .utts
            .iter()
            .map(|(id, tokens, embs)| {
                let kept: BTreeMap<String, _> = embs
                    .iter()
                    .filter(|(c, _)| channels.contains(c))
                    .map(|(c, t)| (c.clone(), t.clone()))
                    .collect();
                (id.clone(), tokens.clone(), kept)
            })
            .collect(),
    }
}

/// Run a full experiment config; if `out_dir` is given, write checkpoints,
/// logs, CSV reports, heatmaps, and the run manifest there.
pub fn run(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    quiet: bool,
) -> Result<RunResult, ExpError> {
    cfg.validate()?;
    let say = |msg: &str| {
        if !quiet {
            eprintln!("[run] {msg}");
        }
    };
    let mut artifacts: Vec<String> = Vec::new();

    say("building corpora");
    let mut corpora: BTreeMap<String, CorpusBundle> = BTreeMap::new();
    for lang in languages_of(cfg) {
        corpora.insert(lang.as_str().to_string(), build_corpus(cfg, lang)?);
    }
    let corpus_a = &corpora[Language::LangA.as_str()];

    say("pretraining base encoder");
    let (enc_pre, pre_head, pretrain_report) = stage_pretrain(cfg, corpus_a)?;
    say(&format!(
        "pretrain dev loss {:.4} -> {:.4}",
        pretrain_report.initial_dev, pretrain_report.best_dev
    ));

    let needs_adapters = cfg
        .experiments
        .iter()
        .any(|e| matches!(e.method, Method::VanAdp | Method::Defa))
        || cfg.heatmap_channel.is_some();
    let (adapters, adapter_report) = if needs_adapters {
        say("training adapters");
        let (stack, report) = stage_adapters(cfg, corpus_a, &enc_pre)?;
        say(&format!(
            "adapter dev MSE {:.5} -> {:.5}",
            report.initial_dev, report.best_dev
        ));
        (Some(stack), Some(report))
    } else {
        (None, None)
    };

    let mut decoders: BTreeMap<String, (CtcHead, TrainReport)> = BTreeMap::new();
    for entry in &cfg.experiments {
        let key = file_key(entry.language, &entry.train_channels);
        if decoders.contains_key(&key) {
            continue;
        }
        say(&format!("training decoder {key}"));
        let bundle = &corpora[entry.language.as_str()];
        let (head, report) =
            stage_decoder(cfg, &enc_pre, bundle, entry.language, &entry.train_channels)?;
        say(&format!("decoder {key} dev CER {:.2}", report.best_dev));
        decoders.insert(key, (head, report));
    }

    let mut defa_decoders: BTreeMap<String, (CtcHead, TrainReport)> = BTreeMap::new();
    for entry in &cfg.experiments {
        if entry.method != Method::Defa {
            continue;
        }
        let key = file_key(entry.language, &entry.train_channels);
        if defa_decoders.contains_key(&key) {
            continue;
        }
        say(&format!("DEFA fine-tuning {key}"));
        let stack = adapters.as_ref().expect("adapters trained above");
        let bundle = &corpora[entry.language.as_str()];
        let (head, report) = stage_defa(
            cfg,
            &enc_pre,
            stack,
            &decoders[&key].0,
            bundle,
            entry.language,
            &entry.train_channels,
        )?;
        say(&format!("DEFA {key} dev CER {:.2}", report.best_dev));
        defa_decoders.insert(key, (head, report));
    }

    let plain_decoders: BTreeMap<String, CtcHead> = decoders
        .iter()
        .map(|(k, (h, _))| (k.clone(), h.clone()))
        .collect();
    let plain_defa: BTreeMap<String, CtcHead> = defa_decoders
        .iter()
        .map(|(k, (h, _))| (k.clone(), h.clone()))
        .collect();
    say("evaluating");
    let (mut entries, hierarchy, heatmap) = evaluate(
        cfg,
        &enc_pre,
        adapters.as_ref(),
        &plain_decoders,
        &plain_defa,
        &corpora,
        out_dir,
        &mut artifacts,
    )?;
    // Fill in the dev metrics `evaluate` has no access to.
    for e in &mut entries {
        let key = file_key(e.entry.language, &e.entry.train_channels);
        e.dev_cer = match e.entry.method {
            Method::Defa => defa_decoders[&key].1.best_dev,
            _ => decoders[&key].1.best_dev,
        };
    }

    if let Some(out) = out_dir {
        let ck_dir = out.join("checkpoints");
        let log_dir = out.join("logs");
        mkdir(&ck_dir)?;
        mkdir(&log_dir)?;
        let meta = |report: &TrainReport| TrainMeta {
            step: report.best_step,
            dev_metric: report.best_dev,
            seed: cfg.seed,
        };
        let mut save = |path: PathBuf, ckpt: &crate::model::Checkpoint| -> Result<(), ExpError> {
            save_checkpoint(&path, ckpt)?;
            artifacts.push(path.display().to_string());
            Ok(())
        };
        save(
            ck_dir.join("enc_pre.ck"),
            &enc_pre.to_checkpoint(meta(&pretrain_report)),
        )?;
        save(
            ck_dir.join("pre_head.ck"),
            &pre_head.to_checkpoint(&cfg.encoder, meta(&pretrain_report)),
        )?;
        if let (Some(stack), Some(rep)) = (&adapters, &adapter_report) {
            save(
                ck_dir.join("adapters.ck"),
                &stack.to_checkpoint(&cfg.encoder, meta(rep)),
            )?;
        }
        for (key, (head, rep)) in &decoders {
            save(
                ck_dir.join(format!("decoder_{key}.ck")),
                &head.to_checkpoint(&cfg.encoder, meta(rep)),
            )?;
        }
        for (key, (head, rep)) in &defa_decoders {
            save(
                ck_dir.join(format!("defa_{key}.ck")),
                &head.to_checkpoint(&cfg.encoder, meta(rep)),
            )?;
        }

        let mut log = |path: PathBuf, report: &TrainReport| -> Result<(), ExpError> {
            write_train_log(&path, &report.log)?;
            artifacts.push(path.display().to_string());
            Ok(())
        };
        log(log_dir.join("pretrain.tsv"), &pretrain_report)?;
        if let Some(rep) = &adapter_report {
            log(log_dir.join("adapters.tsv"), rep)?;
        }
        for (key, (_, rep)) in &decoders {
            log(log_dir.join(format!("decoder_{key}.tsv")), rep)?;
        }
        for (key, (_, rep)) in &defa_decoders {
            log(log_dir.join(format!("defa_{key}.tsv")), rep)?;
        }

        let manifest = RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            artifacts: artifacts.clone(),
            config: cfg.clone(),
        };
        write_manifest(&out.join("manifest.toml"), &manifest)?;
    }

    Ok(RunResult {
        cfg: cfg.clone(),
        enc_pre,
        pre_head,
        pretrain_report,
        adapters,
        adapter_report,
        entries,
        hierarchy,
        heatmap,
        decoders: plain_decoders,
        defa_decoders: plain_defa,
    })
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), ExpError> {
    let text = toml::to_string_pretty(manifest).map_err(|e| ConfigError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| {
        DspError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, ExpError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let m: RunManifest = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    m.config.validate()?;
    Ok(m)
}

#[allow(clippy::too_many_arguments)]
fn heatmap_summary(
    cfg: &ExperimentConfig,
    enc: &Encoder,
    stack: &AdapterStack,
    test: &ParallelCorpus,
    channel: &str,
    fcfg: &crate::dsp::FeatureConfig,
    out_dir: Option<&Path>,
    artifacts: &mut Vec<String>,
) -> Result<HeatmapSummary, ExpError> {
    let student = AdapterEncoder {
        base: enc.clone(),
        adapters: stack.clone(),
    };
    let mut per_utt = Vec::new();
    let mut both_better = 0usize;
    let heat_dir = out_dir.map(|d| d.join("reports").join("heatmaps"));
    if let Some(d) = &heat_dir {
        mkdir(d)?;
    }
    for utt in &test.utterances {
        let clean_w = utt
            .channel(&cfg.clean_channel)
            .ok_or_else(|| EvalError::MissingChannel(cfg.clean_channel.clone()))?;
        let dist_w = utt
            .channel(channel)
            .ok_or_else(|| EvalError::MissingChannel(channel.to_string()))?;
        let clean_f = log_mel(clean_w, fcfg)?;
        let dist_f = log_mel(dist_w, fcfg)?;
        let teacher_clean = encode_pre(enc, &clean_f)?;
        let teacher_dist = encode_pre(enc, &dist_f)?;
        let student_dist = encode_adp(&student, &dist_f)?;
        let mask = crate::dsp::stack_mask(
            &speech_activity_mask(clean_w, fcfg),
            enc.cfg.frame_stack,
        );
        let hm_teacher = feature_diff_heatmap(
            &teacher_clean,
            &teacher_dist,
            &mask,
            &format!("{}_pre_{}", utt.id, channel),
        )?;
        let hm_student = feature_diff_heatmap(
            &teacher_clean,
            &student_dist,
            &mask,
            &format!("{}_adp_{}", utt.id, channel),
        )?;
        let row = (
            utt.id.clone(),
            hm_student.mean_over(true),
            hm_teacher.mean_over(true),
            hm_student.mean_over(false),
            hm_teacher.mean_over(false),
        );
        if row.1 < row.2 && row.3 < row.4 {
            both_better += 1;
        }
        per_utt.push(row);
        if let Some(d) = &heat_dir {
            write_heatmap(d, &hm_teacher)?;
            write_heatmap(d, &hm_student)?;
            for label in [&hm_teacher.label, &hm_student.label] {
                artifacts.push(d.join(format!("{label}.pgm")).display().to_string());
                artifacts.push(d.join(format!("{label}.csv")).display().to_string());
            }
        }
    }
    Ok(HeatmapSummary {
        total: per_utt.len(),
        per_utt,
        both_better,
    })
}

fn write_reports(
    entries: &[EntryResult],
    hierarchy: &Option<HierarchyStats>,
    heatmap: &Option<HeatmapSummary>,
    rp_dir: &Path,
    artifacts: &mut Vec<String>,
) -> Result<(), ExpError> {
    // Per-channel CER matrix across all entries.
    let mut rows = Vec::new();
    for e in entries {
        for (ch, v) in &e.report.per_channel {
            rows.push(vec![
                e.entry.name.clone(),
                e.entry.method.as_str().to_string(),
                e.entry.train_channels.join("+"),
                e.entry.language.as_str().to_string(),
                ch.clone(),
                format!("{v:.4}"),
            ]);
        }
        rows.push(vec![
            e.entry.name.clone(),
            e.entry.method.as_str().to_string(),
            e.entry.train_channels.join("+"),
            e.entry.language.as_str().to_string(),
            "AVG".into(),
            format!("{:.4}", e.avg_all()),
        ]);
    }
    let p = rp_dir.join("cer_matrix.csv");
    write_csv(
        &p,
        &["model", "method", "train_set", "language", "channel", "cer"],
        &rows,
    )?;
    artifacts.push(p.display().to_string());

    // Improvement table: each non-baseline entry against the Van_pre entry
    // with the same decoder.
    let baseline = |e: &EntryResult| -> Option<&EntryResult> {
        entries.iter().find(|b| {
            b.entry.method == Method::VanPre
                && b.entry.language == e.entry.language
                && b.entry.train_channels == e.entry.train_channels
                && b.entry.test_channels == e.entry.test_channels
        })
    };
    let fmt_rel = |rel: Option<f64>| rel.map(|r| format!("{r:.1}")).unwrap_or_default();
    let mut rows = Vec::new();
    for e in entries {
        if e.entry.method == Method::VanPre {
            continue;
        }
        let Some(b) = baseline(e) else { continue };
        for (ch, v) in &e.report.per_channel {
            let bv = b.report.per_channel[ch];
            rows.push(vec![
                e.entry.method.as_str().to_string(),
                e.entry.train_channels.join("+"),
                e.entry.language.as_str().to_string(),
                ch.clone(),
                format!("{bv:.4}"),
                format!("{v:.4}"),
                fmt_rel(relative_improvement(bv, *v)),
            ]);
        }
        let (ba, ma) = (b.avg_all(), e.avg_all());
        rows.push(vec![
            e.entry.method.as_str().to_string(),
            e.entry.train_channels.join("+"),
            e.entry.language.as_str().to_string(),
            "AVG".into(),
            format!("{ba:.4}"),
            format!("{ma:.4}"),
            fmt_rel(relative_improvement(ba, ma)),
        ]);
    }
    if !rows.is_empty() {
        let p = rp_dir.join("improvement.csv");
        write_csv(
            &p,
            &["method", "train_set", "language", "channel", "cer_van_pre", "cer_method", "rel"],
            &rows,
        )?;
        artifacts.push(p.display().to_string());
    }

    if let Some(h) = hierarchy {
        let mut rows: Vec<Vec<String>> = h
            .pairs
            .iter()
            .map(|(a, b, rho)| vec![a.clone(), b.clone(), format!("{rho:.4}")])
            .collect();
        rows.push(vec!["MEAN".into(), String::new(), format!("{:.4}", h.mean_rho)]);
        rows.push(vec!["MIN".into(), String::new(), format!("{:.4}", h.min_rho)]);
        rows.push(vec![
            "CLEAN_BEST".into(),
            String::new(),
            format!("{}/{}", h.clean_best, h.models),
        ]);
        let p = rp_dir.join("hierarchy.csv");
        write_csv(&p, &["model_a", "model_b", "spearman_rho"], &rows)?;
        artifacts.push(p.display().to_string());
    }

    if let Some(hm) = heatmap {
        let mut rows: Vec<Vec<String>> = hm
            .per_utt
            .iter()
            .map(|(id, sa, ta, si, ti)| {
                vec![
                    id.clone(),
                    format!("{sa:.6}"),
                    format!("{ta:.6}"),
                    format!("{si:.6}"),
                    format!("{ti:.6}"),
                    u8::from(sa < ta && si < ti).to_string(),
                ]
            })
            .collect();
        rows.push(vec![
            "TOTAL".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("{}/{}", hm.both_better, hm.total),
        ]);
        let p = rp_dir.join("heatmap_summary.csv");
        write_csv(
            &p,
            &[
                "utt",
                "student_active",
                "teacher_active",
                "student_inactive",
                "teacher_inactive",
                "both_better",
            ],
            &rows,
        )?;
        artifacts.push(p.display().to_string());
    }

    Ok(())
}
