use super::config::{DataConfig, DecodeConfig, ExperimentConfig, SkbConfig, SkbSource};
use crate::data::CorpusConfig;
use crate::error::{contract_err, Result};
use crate::training::TrainConfig;
use crate::transformer::{EmbeddingLevel, ModelConfig, Variant};

pub const PRESET_NAMES: &[&str] = &[
    "st_baseline",
    "sast_frame_top",
    "sast_utterance_top",
    "sast_frame_block1",
    "sast_external",
    "hard_input",
    "hard_encoder_output",
    "sast_n100_frame_block6",
];

/// Desk-scale setting: 34/4/2 speakers plus 10 external ones, strong
/// per-speaker channel distortion, a 10-slot bank.
fn desk(name: &str) -> ExperimentConfig {
    let corpus = CorpusConfig {
        utts_per_speaker: 32,
        offset_std: 1.5,
        log_scale_std: 0.5,
        reference_noise: 0.5,
        ..CorpusConfig::default()
    };
    let data = DataConfig { seed: 1000, stack_left: 3, downsample: 3, speaker_norm: false, corpus };
    let model = ModelConfig {
        input_dim: data.feature_dim(),
        d_model: 32,
        heads: 2,
        d_ff: 64,
        enc_layers: 2,
        dec_layers: 2,
        vocab_size: data.corpus.vocab_size(),
        dropout: 0.1,
        variant: Variant::Sast,
        sam_heads: 2,
        sam_d_head: 4,
        d_iv: data.corpus.d_iv,
        embedding_level: EmbeddingLevel::Frame,
        attach_block: 2,
    };
    let train = TrainConfig {
        batch_size: 16,
        epochs: 60,
        eval_every: 2,
        label_smoothing: 0.1,
        average_last_k: 5,
        warmup_steps: 200,
        lr_scale: 0.3,
        seed: 0,
    };
    ExperimentConfig {
        name: name.to_string(),
        seeds: vec![1, 2, 3],
        output_dir: format!("runs/{name}"),
        data,
        model,
        train,
        skb: SkbConfig { source: SkbSource::InCorpus, size: 10 },
        decode: DecodeConfig { beam: 5, alpha: 0.6, max_len: None },
    }
}

/// Full-size setting: 340/40/20 speakers, 80-dim features stacked to 320,
/// 100-dim speaker vectors, a 100-slot bank queried from the top block.
fn full_size(name: &str) -> ExperimentConfig {
    let corpus = CorpusConfig {
        train_speakers: 340,
        dev_speakers: 40,
        test_speakers: 20,
        external_speakers: 100,
        utts_per_speaker: 300,
        min_tokens: 5,
        max_tokens: 25,
        content_tokens: 4230,
        feature_dim: 80,
        min_frames_per_token: 15,
        max_frames_per_token: 30,
        d_iv: 100,
        ..CorpusConfig::default()
    };
    let data = DataConfig { seed: 1000, stack_left: 3, downsample: 3, speaker_norm: true, corpus };
    ExperimentConfig {
        name: name.to_string(),
        seeds: vec![1],
        output_dir: format!("runs/{name}"),
        data,
        model: ModelConfig::full_size(),
        train: TrainConfig::full_size(),
        skb: SkbConfig { source: SkbSource::InCorpus, size: 100 },
        decode: DecodeConfig { beam: 5, alpha: 0.6, max_len: None },
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = desk(name);
    match name {
        "st_baseline" => cfg.model.variant = Variant::St,
        "sast_frame_top" => {}
        "sast_utterance_top" => cfg.model.embedding_level = EmbeddingLevel::Utterance,
        "sast_frame_block1" => cfg.model.attach_block = 1,
        "sast_external" => cfg.skb.source = SkbSource::External,
        "hard_input" => cfg.model.variant = Variant::HardInput,
        "hard_encoder_output" => cfg.model.variant = Variant::HardEncoderOutput,
        "sast_n100_frame_block6" => cfg = full_size(name),
        _ => return Err(contract_err!("unknown preset `{name}`; known: {}", PRESET_NAMES.join(", "))),
    }
    cfg.validate()?;
    Ok(cfg)
}
