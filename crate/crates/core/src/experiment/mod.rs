//! Config-driven experiments: data preparation, training runs, evaluation,
//! bank-size sweeps and speaker-attention diagnostics.

mod config;
mod presets;
mod run;

pub use config::{DataConfig, DecodeConfig, ExperimentConfig, SkbConfig, SkbSource};
pub use presets::{preset, PRESET_NAMES};
pub use run::{
    decode_utterances, diag_attention, evaluate, load_data_dir, prepare_data, resources_for, run_experiment, sweep_csv,
    sweep_skb, write_data_dir, DecodedUtterance, DiagRecord, DiagReport, EvalReport, Prepared, RunReport, SpeakerInfo,
    SweepRow,
};
