//! Synthetic multi-speaker sequence corpus.
//!
//! Each content token has a fixed random signature vector. An utterance is
//! a token sequence rendered as a few noisy frames per token, then passed
//! through its speaker's channel `y = scale * x + offset`. Every speaker
//! also carries a reference vector, a fixed nonlinear map of its channel
//! parameters plus noise, which plays the role of an i-vector.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Utterance, FIRST_CONTENT};
use crate::error::{contract_err, Result};
use crate::numerics::Tensor;
use crate::speaker::SpeakerKnowledgeBlock;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub train_speakers: usize,
    pub dev_speakers: usize,
    pub test_speakers: usize,
    /// Speakers outside every split, available only as bank material.
    pub external_speakers: usize,
    pub utts_per_speaker: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub content_tokens: usize,
    pub feature_dim: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub frame_noise: f64,
    /// Standard deviation of the per-speaker channel offset.
    pub offset_std: f64,
    /// Standard deviation of the log channel scale.
    pub log_scale_std: f64,
    /// Mean offset shift separating the two attribute groups.
    pub attribute_shift: f64,
    pub d_iv: usize,
    pub reference_noise: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_speakers: 34,
            dev_speakers: 4,
            test_speakers: 2,
            external_speakers: 10,
            utts_per_speaker: 16,
            min_tokens: 3,
            max_tokens: 6,
            content_tokens: 8,
            feature_dim: 8,
            min_frames_per_token: 3,
            max_frames_per_token: 5,
            frame_noise: 0.3,
            offset_std: 1.0,
            log_scale_std: 0.4,
            attribute_shift: 0.5,
            d_iv: 16,
            reference_noise: 0.05,
        }
    }
}

impl CorpusConfig {
    pub fn vocab_size(&self) -> usize {
        FIRST_CONTENT + self.content_tokens
    }

    pub fn total_speakers(&self) -> usize {
        self.train_speakers + self.dev_speakers + self.test_speakers + self.external_speakers
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_speakers == 0 || self.dev_speakers == 0 || self.test_speakers == 0 {
            return Err(contract_err!("every split needs at least one speaker (speaker-disjoint splits need >= 3)"));
        }
        if self.utts_per_speaker == 0 {
            return Err(contract_err!("utts_per_speaker must be positive"));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(contract_err!("token range {}..={} is empty", self.min_tokens, self.max_tokens));
        }
        if self.content_tokens < 2 {
            return Err(contract_err!("need at least 2 content tokens"));
        }
        if self.min_frames_per_token == 0 || self.min_frames_per_token > self.max_frames_per_token {
            return Err(contract_err!("frames-per-token range is empty"));
        }
        if self.feature_dim == 0 || self.d_iv == 0 {
            return Err(contract_err!("feature_dim and d_iv must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Dev,
    Test,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpeaker {
    pub speaker_id: String,
    pub split: Split,
    pub attribute: u8,
    pub channel_offset: Vec<f64>,
    pub channel_scale: Vec<f64>,
    pub reference_vector: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub speakers: Vec<SyntheticSpeaker>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_corpus(cfg: &CorpusConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = cfg.feature_dim;
    let signatures: Vec<Vec<f64>> = (0..cfg.content_tokens).map(|_| (0..f).map(|_| normal(&mut rng)).collect()).collect();
    // Fixed map from channel parameters to reference vectors.
    let proj: Vec<Vec<f64>> =
        (0..cfg.d_iv).map(|_| (0..2 * f).map(|_| normal(&mut rng) / (2.0 * f as f64).sqrt() * 1.5).collect()).collect();

    let splits = [
        (Split::Train, cfg.train_speakers),
        (Split::Dev, cfg.dev_speakers),
        (Split::Test, cfg.test_speakers),
        (Split::External, cfg.external_speakers),
    ];
    let mut speakers = Vec::with_capacity(cfg.total_speakers());
    for (split, count) in splits {
        for k in 0..count {
            // alternate attributes within a split so both groups are present
            let attribute = ((k + rng.random_range(0..2)) % 2) as u8;
            let sign = if attribute == 1 { 1.0 } else { -1.0 };
            let channel_offset: Vec<f64> =
                (0..f).map(|_| cfg.offset_std * normal(&mut rng) + sign * cfg.attribute_shift).collect();
            let channel_scale: Vec<f64> = (0..f).map(|_| (cfg.log_scale_std * normal(&mut rng)).exp()).collect();
            let params: Vec<f64> = channel_offset.iter().copied().chain(channel_scale.iter().map(|s| s.ln())).collect();
            let reference_vector = proj
                .iter()
                .map(|row| row.iter().zip(&params).map(|(a, b)| a * b).sum::<f64>().tanh() + cfg.reference_noise * normal(&mut rng))
                .collect();
            speakers.push(SyntheticSpeaker {
                speaker_id: format!("spk{:03}", speakers.len()),
                split,
                attribute,
                channel_offset,
                channel_scale,
                reference_vector,
            });
        }
    }

    let mut corpus = Corpus { config: cfg.clone(), speakers: Vec::new(), train: Vec::new(), dev: Vec::new(), test: Vec::new() };
    for spk in &speakers {
        let target = match spk.split {
            Split::Train => &mut corpus.train,
            Split::Dev => &mut corpus.dev,
            Split::Test => &mut corpus.test,
            Split::External => continue,
        };
        for u in 0..cfg.utts_per_speaker {
            let n_tok = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
            let mut tokens = Vec::with_capacity(n_tok);
            while tokens.len() < n_tok {
                let t = FIRST_CONTENT + rng.random_range(0..cfg.content_tokens);
                if tokens.last() != Some(&t) {
                    tokens.push(t);
                }
            }
            let mut data = Vec::new();
            for &t in &tokens {
                let dur = rng.random_range(cfg.min_frames_per_token..=cfg.max_frames_per_token);
                for _ in 0..dur {
                    for j in 0..f {
                        let clean = signatures[t - FIRST_CONTENT][j] + cfg.frame_noise * normal(&mut rng);
                        data.push(spk.channel_scale[j] * clean + spk.channel_offset[j]);
                    }
                }
            }
            let frames = Tensor::new(&[data.len() / f, f], data)?;
            target.push(Utterance {
                utt_id: format!("{}-{u:03}", spk.speaker_id),
                speaker_id: spk.speaker_id.clone(),
                attribute: spk.attribute,
                frames,
                tokens,
            });
        }
    }
    corpus.speakers = speakers;
    corpus.check_disjoint()?;
    Ok(corpus)
}

/// Picks `n` ids from `pool`, alternating between the two attribute groups
/// while both have members left. Order within a group is preserved.
pub fn balanced_selection(pool: &[(String, u8)], n: usize) -> Result<Vec<String>> {
    if n == 0 || n > pool.len() {
        return Err(contract_err!("cannot select {n} speakers from a pool of {}", pool.len()));
    }
    let mut groups: [Vec<&String>; 2] = [Vec::new(), Vec::new()];
    for (id, a) in pool {
        groups[(*a as usize).min(1)].push(id);
    }
    let mut idx = [0usize; 2];
    let mut out = Vec::with_capacity(n);
    let mut turn = 0;
    while out.len() < n {
        let g = if idx[turn] < groups[turn].len() { turn } else { 1 - turn };
        out.push(groups[g][idx[g]].clone());
        idx[g] += 1;
        turn = 1 - turn;
    }
    Ok(out)
}

impl Corpus {
    pub fn speakers_in(&self, split: Split) -> impl Iterator<Item = &SyntheticSpeaker> {
        self.speakers.iter().filter(move |s| s.split == split)
    }

    /// Reference vectors of every speaker.
    pub fn all_vectors(&self) -> Result<SpeakerKnowledgeBlock> {
        let ids = self.speakers.iter().map(|s| s.speaker_id.clone()).collect();
        let vecs = self.speakers.iter().map(|s| s.reference_vector.clone()).collect();
        SpeakerKnowledgeBlock::new(ids, vecs, "all")
    }

    /// Attribute-balanced bank of `n` speakers drawn from `split`.
    pub fn speaker_bank(&self, split: Split, n: usize, source: &str) -> Result<SpeakerKnowledgeBlock> {
        let pool: Vec<(String, u8)> = self.speakers_in(split).map(|s| (s.speaker_id.clone(), s.attribute)).collect();
        let ids = balanced_selection(&pool, n)?;
        self.all_vectors()?.select(&ids, source)
    }

    /// Fails if any speaker appears in more than one utterance split.
    pub fn check_disjoint(&self) -> Result<()> {
        let sets: Vec<BTreeSet<&str>> = [&self.train, &self.dev, &self.test]
            .iter()
            .map(|utts| utts.iter().map(|u| u.speaker_id.as_str()).collect())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                if let Some(s) = sets[i].intersection(&sets[j]).next() {
                    return Err(contract_err!("speaker `{s}` occurs in two splits"));
                }
            }
        }
        Ok(())
    }

    pub fn split_of(&self) -> BTreeMap<&str, Split> {
        self.speakers.iter().map(|s| (s.speaker_id.as_str(), s.split)).collect()
    }
}
