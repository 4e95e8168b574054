use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::average_params;
use super::loss::smoothed_loss_terms;
use super::optim::{Adam, LrSchedule};
use crate::data::{Utterance, BOS, EOS, PAD};
use crate::error::{contract_err, Result};
use crate::params::{Ctx, ParamStore};
use crate::speaker::SpeakerKnowledgeBlock;
use crate::transformer::{SpeakerContext, SpeechTransformer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Utterances per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate on dev (and keep a checkpoint) every this many epochs.
    pub eval_every: usize,
    pub label_smoothing: f64,
    /// Checkpoints averaged into the final model, ending at the best one.
    pub average_last_k: usize,
    pub warmup_steps: usize,
    /// Multiplier on the warmup schedule.
    pub lr_scale: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full_size() -> Self {
        TrainConfig {
            batch_size: 256,
            epochs: 60,
            eval_every: 2,
            label_smoothing: 0.1,
            average_last_k: 5,
            warmup_steps: 4000,
            lr_scale: 1.0,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        TrainConfig { batch_size: 8, epochs: 20, warmup_steps: 400, ..Self::full_size() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 || self.average_last_k == 0 || self.warmup_steps == 0 {
            return Err(contract_err!("batch_size, epochs, eval_every, average_last_k and warmup_steps must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(contract_err!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(self.lr_scale > 0.0) {
            return Err(contract_err!("lr_scale must be positive"));
        }
        Ok(())
    }
}

/// Speaker information available to the model: the bank for soft
/// embeddings and a per-speaker vector table for the hard variants.
#[derive(Clone, Debug, Default)]
pub struct SpeakerResources {
    pub skb: Option<SpeakerKnowledgeBlock>,
    pub vectors: Option<SpeakerKnowledgeBlock>,
}

impl SpeakerResources {
    pub fn context(&self, model: &SpeechTransformer, speaker_id: &str) -> Result<SpeakerContext<'_>> {
        let vector = if model.config().variant.needs_speaker_vector() {
            let table = self.vectors.as_ref().ok_or_else(|| contract_err!("hard-embedding model needs a speaker vector table"))?;
            Some(table.get(speaker_id).ok_or_else(|| contract_err!("no speaker vector for `{speaker_id}`"))?)
        } else {
            None
        };
        Ok(SpeakerContext { skb: self.skb.as_ref(), vector })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_token_err: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The averaged final parameters.
    pub params: ParamStore,
    pub best_epoch: usize,
    pub best_dev_err: f64,
    pub averaged_dev_err: f64,
    pub averaged_epochs: Vec<usize>,
    /// Every evaluated checkpoint, by epoch.
    pub checkpoints: Vec<(usize, ParamStore)>,
    pub log: Vec<MetricsRecord>,
}

impl TrainOutcome {
    /// One JSON record per line.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

/// Batches of utterance indices with similar lengths; batch order is shuffled.
pub fn length_buckets<R: Rng + ?Sized>(lengths: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let keys: Vec<u64> = lengths.iter().map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], keys[i]));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn decoder_io(tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(tokens.len() + 1);
    input.push(BOS);
    input.extend_from_slice(tokens);
    let mut target = tokens.to_vec();
    target.push(EOS);
    (input, target)
}

/// Teacher-forced argmax mistakes and scored positions (end marker included).
pub fn teacher_forced_errors(model: &SpeechTransformer, params: &ParamStore, utt: &Utterance, res: &SpeakerResources) -> Result<(usize, usize)> {
    let mut ctx = Ctx::eval(params);
    let enc = model.encode_memory(&mut ctx, &utt.frames, utt.num_frames(), res.context(model, &utt.speaker_id)?)?;
    let (input, target) = decoder_io(&utt.tokens);
    let logp = model.decode(&mut ctx, enc.memory, enc.valid_len, &input)?;
    let logp = ctx.value(logp);
    let errors = target
        .iter()
        .enumerate()
        .filter(|&(u, &t)| {
            let row = logp.row(u);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best != t
        })
        .count();
    Ok((errors, target.len()))
}

pub fn token_error(model: &SpeechTransformer, params: &ParamStore, utts: &[Utterance], res: &SpeakerResources) -> Result<f64> {
    let (mut e, mut n) = (0, 0);
    for u in utts {
        let (ue, un) = teacher_forced_errors(model, params, u, res)?;
        e += ue;
        n += un;
    }
    Ok(e as f64 / n as f64)
}

/// Trains from `init`, evaluating on `dev` every `eval_every` epochs (and
/// after the last one). The final model averages the `average_last_k`
/// evaluated checkpoints ending at the one with the lowest dev error.
pub fn train(
    model: &SpeechTransformer,
    init: ParamStore,
    train: &[Utterance],
    dev: &[Utterance],
    res: &SpeakerResources,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(contract_err!("training needs non-empty train and dev sets ({} / {})", train.len(), dev.len()));
    }
    let mcfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(LrSchedule::Noam { d_model: mcfg.d_model, warmup: cfg.warmup_steps, scale: cfg.lr_scale })?;
    let mut params = init;
    let zero_grads: BTreeMap<String, Vec<f64>> = params.iter().map(|(n, t)| (n.clone(), vec![0.0; t.numel()])).collect();
    let lengths: Vec<usize> = train.iter().map(Utterance::num_frames).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut dev_errs = Vec::new();

    for epoch in 1..=cfg.epochs {
        let (mut epoch_loss, mut epoch_tokens) = (0.0, 0usize);
        let mut lr = 0.0;
        for batch in length_buckets(&lengths, cfg.batch_size, &mut rng) {
            let mut grads = zero_grads.clone();
            let mut tokens = 0usize;
            for &i in &batch {
                let utt = &train[i];
                let spk = res.context(model, &utt.speaker_id)?;
                let mut ctx = Ctx::train(&params, mcfg.dropout, &mut rng);
                let enc = model.encode_memory(&mut ctx, &utt.frames, utt.num_frames(), spk)?;
                let (input, target) = decoder_io(&utt.tokens);
                let logp = model.decode(&mut ctx, enc.memory, enc.valid_len, &input)?;
                let (loss, n) = smoothed_loss_terms(&mut ctx.tape, logp, &target, cfg.label_smoothing, Some(PAD))?;
                ctx.backward(loss)?;
                epoch_loss += ctx.value(loss).data()[0];
                tokens += n;
                for (name, g) in ctx.param_grads() {
                    let acc = grads.get_mut(&name).expect("every bound parameter is in the store");
                    acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
            }
            let norm = 1.0 / tokens as f64;
            grads.values_mut().flatten().for_each(|g| *g *= norm);
            lr = adam.step(&mut params, &grads)?;
            epoch_tokens += tokens;
        }
        let evaluate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let dev_token_err = if evaluate {
            let err = token_error(model, &params, dev, res)?;
            checkpoints.push((epoch, params.clone()));
            dev_errs.push(err);
            Some(err)
        } else {
            None
        };
        log.push(MetricsRecord { step: adam.steps_taken(), epoch, train_loss: epoch_loss / epoch_tokens as f64, dev_token_err, lr });
    }

    let best = (0..dev_errs.len()).fold(0, |b, i| if dev_errs[i] < dev_errs[b] { i } else { b });
    let start = (best + 1).saturating_sub(cfg.average_last_k);
    let window: Vec<&ParamStore> = checkpoints[start..=best].iter().map(|(_, p)| p).collect();
    let averaged = average_params(&window)?;
    let averaged_dev_err = token_error(model, &averaged, dev, res)?;
    Ok(TrainOutcome {
        params: averaged,
        best_epoch: checkpoints[best].0,
        best_dev_err: dev_errs[best],
        averaged_dev_err,
        averaged_epochs: checkpoints[start..=best].iter().map(|(e, _)| *e).collect(),
        checkpoints,
        log,
    })
}
