//! Command-line front end: data generation, training, evaluation,
//! decoding, bank-size sweeps and speaker-attention diagnostics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sast::decoding::{format_decodes, format_nbest};
use sast::experiment::{
    diag_attention, evaluate, decode_utterances, load_data_dir, preset, resources_for, run_experiment, sweep_csv, sweep_skb,
    write_data_dir, DecodeConfig, ExperimentConfig, Prepared, PRESET_NAMES,
};
use sast::training::{Checkpoint, SpeakerResources};
use sast::transformer::SpeechTransformer;
use sast::{Error, Result};

#[derive(Parser)]
#[command(name = "sast", version, about = "Speaker-aware speech transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long)]
    preset: Option<String>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Dev,
    Test,
}

#[derive(Args)]
struct ModelInput {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Data directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Experiment config; defaults to `config.toml` next to the checkpoint's run directory.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into a data directory.
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per seed and write checkpoints and metrics logs.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Beam-decode a split and report the token error rate.
    Eval {
        #[command(flatten)]
        input: ModelInput,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beam-decode a split into `<utt_id>\t<tokens>` lines.
    Decode {
        #[command(flatten)]
        input: ModelInput,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Write every surviving hypothesis with its score.
        #[arg(long)]
        nbest: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per bank size and write a CSV of dev/test error.
    SweepSkb {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated bank sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-utterance speaker-attention entropy, top-1 slots and hull coefficients.
    DiagAttn {
        #[command(flatten)]
        input: ModelInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets, or print one as TOML.
    Presets {
        name: Option<String>,
    },
}

fn load_config(src: &ConfigSource) -> Result<ExperimentConfig> {
    let mut cfg = match (&src.config, &src.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Contract("pass --config <file> or --preset <name>".into())),
    };
    if let Some(seed) = src.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

struct Loaded {
    cfg: ExperimentConfig,
    model: SpeechTransformer,
    ckpt: Checkpoint,
    data: Prepared,
    res: SpeakerResources,
}

fn load_model_input(input: &ModelInput) -> Result<Loaded> {
    let ckpt = Checkpoint::load(&input.checkpoint)?;
    let cfg_path = match &input.config {
        Some(p) => p.clone(),
        None => {
            let run_dir = input.checkpoint.parent().and_then(Path::parent).unwrap_or(Path::new("."));
            run_dir.join("config.toml")
        }
    };
    let mut cfg = ExperimentConfig::load(&cfg_path)?;
    if ckpt.config.vocab_size != cfg.model.vocab_size || ckpt.config.input_dim != cfg.model.input_dim {
        return Err(Error::Contract(format!(
            "checkpoint expects V={} and {} input features, config has V={} and {}",
            ckpt.config.vocab_size, ckpt.config.input_dim, cfg.model.vocab_size, cfg.model.input_dim
        )));
    }
    cfg.model = ckpt.config.clone();
    let data = load_data_dir(&cfg.data, &input.data)?;
    let mut res = resources_for(&cfg, &data)?;
    res.skb = ckpt.skb.clone();
    let model = SpeechTransformer::new(ckpt.config.clone())?;
    Ok(Loaded { cfg, model, ckpt, data, res })
}

fn split_of(l: &Loaded, s: SplitArg) -> &[sast::data::Utterance] {
    match s {
        SplitArg::Dev => &l.data.dev,
        SplitArg::Test => &l.data.test,
    }
}

fn decode_cfg(base: &DecodeConfig, beam: Option<usize>, alpha: Option<f64>) -> Result<DecodeConfig> {
    let d = DecodeConfig { beam: beam.unwrap_or(base.beam), alpha: alpha.unwrap_or(base.alpha), max_len: base.max_len };
    if d.beam == 0 {
        return Err(Error::Contract("--beam must be at least 1".into()));
    }
    Ok(d)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { source, out } => {
            let cfg = load_config(&source)?;
            write_data_dir(&cfg.data, &out)?;
            eprintln!("wrote corpus to {} (config_hash={})", out.display(), cfg.hash());
        }
        Command::Train { source, data, out } => {
            let cfg = load_config(&source)?;
            let prepared = load_data_dir(&cfg.data, &data)?;
            create_dir(&out)?;
            cfg.save(&out.join("config.toml"))?;
            let res = resources_for(&cfg, &prepared)?;
            for &seed in &cfg.seeds {
                let report = run_experiment(&cfg, seed, &prepared)?;
                let dir = out.join(format!("seed-{seed}"));
                create_dir(&dir)?;
                let best = report.outcome.checkpoints.iter().find(|(e, _)| *e == report.outcome.best_epoch).expect("best is kept");
                let ckpt = |params| Checkpoint { config: cfg.model.clone(), params, skb: res.skb.clone() };
                ckpt(best.1.clone()).save(&dir.join("best.ckpt"))?;
                ckpt(report.outcome.params.clone()).save(&dir.join("model.ckpt"))?;
                emit(Some(&dir.join("metrics.jsonl")), &report.outcome.log_text())?;
                emit(Some(&dir.join("test_report.tsv")), &report.test.to_text(&report.config_hash))?;
                println!(
                    "seed {seed}: best epoch {} dev_err {:.4} test_err {:.4} config_hash={}",
                    report.outcome.best_epoch, report.dev.token_error_rate, report.test.token_error_rate, report.config_hash
                );
            }
        }
        Command::Eval { input, beam, alpha, out } => {
            let l = load_model_input(&input)?;
            let d = decode_cfg(&l.cfg.decode, beam, alpha)?;
            let report = evaluate(&l.model, &l.ckpt.params, split_of(&l, input.split), &l.res, &d)?;
            emit(out.as_deref(), &report.to_text(&l.cfg.hash()))?;
            eprintln!("token_error_rate={:.6}", report.token_error_rate);
        }
        Command::Decode { input, beam, alpha, nbest, out } => {
            let l = load_model_input(&input)?;
            let d = decode_cfg(&l.cfg.decode, beam, alpha)?;
            let decoded = decode_utterances(&l.model, &l.ckpt.params, split_of(&l, input.split), &l.res, &d)?;
            let text = if nbest {
                format_nbest(decoded.iter().map(|u| (u.utt_id.as_str(), u.nbest.iter().map(|(s, t)| (*s, &t[..])).collect())))
            } else {
                format_decodes(decoded.iter().map(|u| (u.utt_id.as_str(), &u.hypothesis[..])))
            };
            emit(out.as_deref(), &text)?;
        }
        Command::SweepSkb { source, data, sizes, out } => {
            let cfg = load_config(&source)?;
            let prepared = load_data_dir(&cfg.data, &data)?;
            let rows = sweep_skb(&cfg, &sizes, &prepared)?;
            emit(out.as_deref(), &sweep_csv(&rows, &cfg.hash()))?;
        }
        Command::DiagAttn { input, out } => {
            let l = load_model_input(&input)?;
            let skb = l.res.skb.as_ref().ok_or_else(|| Error::Contract("checkpoint carries no speaker bank (not a sast model)".into()))?;
            let report = diag_attention(&l.model, &l.ckpt.params, split_of(&l, input.split), skb)?;
            emit(out.as_deref(), &report.to_text(&l.cfg.hash()))?;
        }
        Command::Presets { name } => match name {
            Some(n) => print!("{}", preset(&n)?.to_toml()),
            None => PRESET_NAMES.iter().for_each(|n| println!("{n}")),
        },
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) => 3,
        Error::Dimension(_) => 4,
        Error::Format(_) => 5,
        Error::Io { .. } => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
