use std::cmp::Ordering;

use crate::data::{BOS, EOS, PAD};
use crate::error::{contract_err, dim_err, Result};
use crate::numerics::Tensor;
use crate::params::ParamStore;
use crate::transformer::SpeechTransformer;

/// Next-token log-probabilities for a prefix that starts with the start token.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn next_logp(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Scores prefixes with the decoder over a fixed encoder memory.
pub struct ModelScorer<'a> {
    pub model: &'a SpeechTransformer,
    pub params: &'a ParamStore,
    pub memory: Tensor,
    pub memory_valid: usize,
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn next_logp(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.model.decode_step(self.params, &self.memory, self.memory_valid, prefix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub alpha: f64,
    /// Most tokens generated after the start token, end token included.
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
    /// Tokens never proposed.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(beam: usize, alpha: f64, max_len: usize) -> Self {
        BeamConfig { beam, alpha, max_len, bos: BOS, eos: EOS, banned: vec![PAD, BOS] }
    }
}

/// Twice the memory length plus ten.
pub fn default_max_len(memory_len: usize) -> usize {
    2 * memory_len + 10
}

/// `((5 + len) / 6)^alpha`
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Starts with the start token.
    pub tokens: Vec<usize>,
    pub logp_sum: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated length: tokens after the start token.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score(&self, alpha: f64) -> f64 {
        self.logp_sum / length_penalty(self.len(), alpha)
    }

    /// Generated tokens without the start and end markers.
    pub fn content(&self) -> &[usize] {
        let end = if self.finished { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }
}

/// Total order used for the final ranking: higher score, then shorter,
/// then lexicographically smaller tokens.
fn rank(a: &Hypothesis, b: &Hypothesis, alpha: f64) -> Ordering {
    b.score(alpha)
        .total_cmp(&a.score(alpha))
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Clone, Debug)]
pub struct BeamResult {
    pub best: Hypothesis,
    pub score: f64,
    /// Every hypothesis still standing at termination, best first.
    pub nbest: Vec<Hypothesis>,
}

impl BeamResult {
    /// False when no hypothesis reached the end token within `max_len`.
    pub fn finished(&self) -> bool {
        self.best.finished
    }
}

fn check(cfg: &BeamConfig, vocab: usize) -> Result<()> {
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(contract_err!("beam ({}) and max_len ({}) must be at least 1", cfg.beam, cfg.max_len));
    }
    if cfg.eos >= vocab || cfg.bos >= vocab || cfg.banned.contains(&cfg.eos) {
        return Err(contract_err!("start/end tokens invalid for V={vocab}"));
    }
    Ok(())
}

/// Keeps the `beam` best expansions by accumulated log-probability at every
/// step; expansions ending in the end token are set aside as finished.
/// At termination finished and still-active hypotheses are ranked together
/// by length-penalized score.
pub fn beam_search(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<BeamResult> {
    let vocab = scorer.vocab_size();
    check(cfg, vocab)?;
    let mut active = vec![Hypothesis { tokens: vec![cfg.bos], logp_sum: 0.0, finished: false }];
    let mut finished = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<Hypothesis> = Vec::with_capacity(active.len() * vocab);
        for h in &active {
            let logp = scorer.next_logp(&h.tokens)?;
            if logp.len() != vocab {
                return Err(dim_err!("scorer returned {} log-probabilities for V={vocab}", logp.len()));
            }
            for (tok, &lp) in logp.iter().enumerate() {
                if cfg.banned.contains(&tok) {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                cands.push(Hypothesis { tokens, logp_sum: h.logp_sum + lp, finished: tok == cfg.eos });
            }
        }
        cands.sort_by(|a, b| b.logp_sum.total_cmp(&a.logp_sum).then_with(|| a.tokens.cmp(&b.tokens)));
        cands.truncate(cfg.beam);
        let (done, open): (Vec<_>, Vec<_>) = cands.into_iter().partition(|h| h.finished);
        finished.extend(done);
        active = open;
        if active.is_empty() {
            break;
        }
    }
    let mut all = finished;
    all.extend(active);
    all.sort_by(|a, b| rank(a, b, cfg.alpha));
    let best = all.first().cloned().ok_or_else(|| contract_err!("every token is banned"))?;
    Ok(BeamResult { score: best.score(cfg.alpha), best, nbest: all })
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy(scorer: &dyn StepScorer, cfg: &BeamConfig) -> Result<Hypothesis> {
    let vocab = scorer.vocab_size();
    check(cfg, vocab)?;
    let mut h = Hypothesis { tokens: vec![cfg.bos], logp_sum: 0.0, finished: false };
    while h.len() < cfg.max_len && !h.finished {
        let logp = scorer.next_logp(&h.tokens)?;
        let tok = (0..vocab)
            .filter(|t| !cfg.banned.contains(t))
            .fold(None, |b: Option<usize>, t| match b {
                Some(b) if logp[b] >= logp[t] => Some(b),
                _ => Some(t),
            })
            .ok_or_else(|| contract_err!("every token is banned"))?;
        h.logp_sum += logp[tok];
        h.tokens.push(tok);
        h.finished = tok == cfg.eos;
    }
    Ok(h)
}
