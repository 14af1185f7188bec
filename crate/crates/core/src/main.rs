//! Command-line front end: corpus generation, stage-wise training,
//! evaluation from checkpoints, and one-command preset reproduction.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use channorm::config::{expand_channel_set, ExperimentConfig, Method, PRESETS};
use channorm::dsp::{write_corpus, DspError, Language};
use channorm::exper::{
    self, build_corpus, file_key, languages_of, load_manifest, stage_adapters, stage_decoder,
    stage_defa, stage_pretrain, ExpError,
};
use channorm::model::{
    load_checkpoint, save_checkpoint, AdapterStack, Checkpoint, CtcHead, Encoder, TrainMeta,
};
use channorm::training::{write_train_log, TrainReport};

#[derive(Parser)]
#[command(name = "channorm", version, about = "Channel-normalizing adapter experiments")]
struct Cli {
    /// Experiment config (TOML); required by corpus/train/eval.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory (checkpoints/, logs/, reports/, corpus/).
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the parallel WAV corpus and its manifest.
    Corpus,
    /// Train one regime; later regimes need earlier checkpoints in out-dir.
    Train(TrainArgs),
    /// Evaluate all config experiments from checkpoints in out-dir.
    Eval,
    /// Run a full preset (or a saved manifest) end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training regime.
    #[arg(long, value_enum)]
    regime: Regime,
    /// Decoder training channel set, comma-separated; "~X" excludes X.
    /// Required for decoder/defa regimes.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<String>>,
    /// Corpus language for decoder/defa regimes.
    #[arg(long, default_value = "LangA")]
    language: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    /// Joint clean-speech CTC training of the base encoder (the teacher).
    Pretrain,
    /// Bottleneck adapters aligned to the frozen teacher.
    Adapters,
    /// CTC decoder on teacher embeddings of a channel set.
    Decoder,
    /// Fine-tune an existing decoder on adapted embeddings.
    Defa,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Preset name: hat-main, hat-defa, tat-crosslang, hierarchy.
    preset: Option<String>,
    /// Re-run from a previously written manifest.toml instead of a preset.
    #[arg(long, conflicts_with = "preset")]
    manifest: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), ExpError> {
    match &cli.cmd {
        Cmd::Corpus => cmd_corpus(cli),
        Cmd::Train(args) => cmd_train(cli, args),
        Cmd::Eval => cmd_eval(cli),
        Cmd::Reproduce(args) => cmd_reproduce(cli, args),
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExpError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ExpError::MissingPrerequisite("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn say(cli: &Cli, msg: &str) {
    if !cli.quiet {
        eprintln!("[channorm] {msg}");
    }
}

fn cmd_corpus(cli: &Cli) -> Result<(), ExpError> {
    let cfg = load_config(cli)?;
    for lang in languages_of(&cfg) {
        let bundle = build_corpus(&cfg, lang)?;
        let dir = cli.out_dir.join("corpus").join(lang.as_str());
        write_corpus(&bundle, &dir)?;
        say(cli, &format!("wrote {} corpus to {}", lang.as_str(), dir.display()));
    }
    Ok(())
}

fn ck_path(cli: &Cli, name: &str) -> PathBuf {
    cli.out_dir.join("checkpoints").join(name)
}

fn require_checkpoint(path: &Path) -> Result<Checkpoint, ExpError> {
    if !path.exists() {
        return Err(ExpError::MissingPrerequisite(format!(
            "checkpoint {} (run the earlier regime first)",
            path.display()
        )));
    }
    Ok(load_checkpoint(path)?)
}

fn load_teacher(cli: &Cli) -> Result<Encoder, ExpError> {
    Ok(Encoder::from_checkpoint(&require_checkpoint(
        &ck_path(cli, "enc_pre.ck"),
    )?)?)
}

fn save_stage(
    cli: &Cli,
    cfg: &ExperimentConfig,
    name: &str,
    ckpt: Checkpoint,
    report: &TrainReport,
) -> Result<(), ExpError> {
    let ck = ck_path(cli, name);
    let logs = cli.out_dir.join("logs");
    for d in [ck.parent().unwrap(), logs.as_path()] {
        std::fs::create_dir_all(d).map_err(|e| DspError::Io {
            path: d.display().to_string(),
            source: e,
        })?;
    }
    save_checkpoint(&ck, &ckpt)?;
    let log = logs.join(format!("{}.tsv", name.trim_end_matches(".ck")));
    write_train_log(&log, &report.log)?;
    say(
        cli,
        &format!(
            "{name}: dev {:.5} -> {:.5} at step {} (seed {})",
            report.initial_dev, report.best_dev, report.best_step, cfg.seed
        ),
    );
    Ok(())
}

fn meta(cfg: &ExperimentConfig, report: &TrainReport) -> TrainMeta {
    TrainMeta {
        step: report.best_step,
        dev_metric: report.best_dev,
        seed: cfg.seed,
    }
}

fn parse_language(s: &str) -> Result<Language, ExpError> {
    Language::parse(s)
        .ok_or_else(|| ExpError::MissingPrerequisite(format!("unknown language {s:?}")))
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<(), ExpError> {
    let cfg = load_config(cli)?;
    let decoder_set = || -> Result<(Language, Vec<String>), ExpError> {
        let channels = args.channels.clone().ok_or_else(|| {
            ExpError::MissingPrerequisite("--channels is required for this regime".into())
        })?;
        expand_channel_set(&channels, &cfg.channel_names())?;
        Ok((parse_language(&args.language)?, channels))
    };
    match args.regime {
        Regime::Pretrain => {
            let corpus = build_corpus(&cfg, Language::LangA)?;
            let (enc, head, report) = stage_pretrain(&cfg, &corpus)?;
            save_stage(cli, &cfg, "enc_pre.ck", enc.to_checkpoint(meta(&cfg, &report)), &report)?;
            save_checkpoint(
                &ck_path(cli, "pre_head.ck"),
                &head.to_checkpoint(&cfg.encoder, meta(&cfg, &report)),
            )?;
        }
        Regime::Adapters => {
            let enc = load_teacher(cli)?;
            let corpus = build_corpus(&cfg, Language::LangA)?;
            let (stack, report) = stage_adapters(&cfg, &corpus, &enc)?;
            save_stage(
                cli,
                &cfg,
                "adapters.ck",
                stack.to_checkpoint(&cfg.encoder, meta(&cfg, &report)),
                &report,
            )?;
        }
        Regime::Decoder => {
            let (language, channels) = decoder_set()?;
            let enc = load_teacher(cli)?;
            let corpus = build_corpus(&cfg, language)?;
            let (head, report) = stage_decoder(&cfg, &enc, &corpus, language, &channels)?;
            let key = file_key(language, &channels);
            save_stage(
                cli,
                &cfg,
                &format!("decoder_{key}.ck"),
                head.to_checkpoint(&cfg.encoder, meta(&cfg, &report)),
                &report,
            )?;
        }
        Regime::Defa => {
            let (language, channels) = decoder_set()?;
            let enc = load_teacher(cli)?;
            let stack = AdapterStack::from_checkpoint(
                &require_checkpoint(&ck_path(cli, "adapters.ck"))?,
                &cfg.encoder,
            )?;
            let key = file_key(language, &channels);
            let init = CtcHead::from_checkpoint(
                &require_checkpoint(&ck_path(cli, &format!("decoder_{key}.ck")))?,
                &cfg.encoder,
            )?;
            let corpus = build_corpus(&cfg, language)?;
            let (head, report) =
                stage_defa(&cfg, &enc, &stack, &init, &corpus, language, &channels)?;
            save_stage(
                cli,
                &cfg,
                &format!("defa_{key}.ck"),
                head.to_checkpoint(&cfg.encoder, meta(&cfg, &report)),
                &report,
            )?;
        }
    }
    Ok(())
}

fn cmd_eval(cli: &Cli) -> Result<(), ExpError> {
    let cfg = load_config(cli)?;
    let enc = load_teacher(cli)?;
    let needs_adp = cfg
        .experiments
        .iter()
        .any(|e| matches!(e.method, Method::VanAdp | Method::Defa))
        || cfg.heatmap_channel.is_some();
    let adapters = if needs_adp {
        Some(AdapterStack::from_checkpoint(
            &require_checkpoint(&ck_path(cli, "adapters.ck"))?,
            &cfg.encoder,
        )?)
    } else {
        None
    };
    let mut decoders = std::collections::BTreeMap::new();
    let mut defa_decoders = std::collections::BTreeMap::new();
    for entry in &cfg.experiments {
        let key = file_key(entry.language, &entry.train_channels);
        let (map, file) = match entry.method {
            Method::Defa => (&mut defa_decoders, format!("defa_{key}.ck")),
            _ => (&mut decoders, format!("decoder_{key}.ck")),
        };
        if !map.contains_key(&key) {
            let head =
                CtcHead::from_checkpoint(&require_checkpoint(&ck_path(cli, &file))?, &cfg.encoder)?;
            map.insert(key, head);
        }
    }
    let mut corpora = std::collections::BTreeMap::new();
    for lang in languages_of(&cfg) {
        corpora.insert(lang.as_str().to_string(), build_corpus(&cfg, lang)?);
    }
    let mut artifacts = Vec::new();
    let (entries, hierarchy, heatmap) = exper::evaluate(
        &cfg,
        &enc,
        adapters.as_ref(),
        &decoders,
        &defa_decoders,
        &corpora,
        Some(&cli.out_dir),
        &mut artifacts,
    )?;
    say(cli, &format!("evaluated {} experiment entries", entries.len()));
    if let Some(h) = hierarchy {
        say(
            cli,
            &format!(
                "hierarchy: mean rho {:.3}, clean best on {}/{}",
                h.mean_rho, h.clean_best, h.models
            ),
        );
    }
    if let Some(hm) = heatmap {
        say(
            cli,
            &format!("heatmap: student closer on {}/{} utterances", hm.both_better, hm.total),
        );
    }
    for a in &artifacts {
        say(cli, &format!("wrote {a}"));
    }
    Ok(())
}

fn cmd_reproduce(cli: &Cli, args: &ReproduceArgs) -> Result<(), ExpError> {
    let mut cfg = match (&args.preset, &args.manifest) {
        (Some(name), None) => channorm::config::preset(name).map_err(|_| {
            ExpError::MissingPrerequisite(format!(
                "unknown preset {name:?}; available presets: {}",
                PRESETS.join(", ")
            ))
        })?,
        (None, Some(path)) => load_manifest(path)?.config,
        _ => {
            return Err(ExpError::MissingPrerequisite(
                "reproduce needs a preset name or --manifest".into(),
            ))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let result = exper::run(&cfg, Some(&cli.out_dir), cli.quiet)?;
    say(
        cli,
        &format!(
            "done: {} entries evaluated; artifacts under {}",
            result.entries.len(),
            cli.out_dir.display()
        ),
    );
    Ok(())
}
