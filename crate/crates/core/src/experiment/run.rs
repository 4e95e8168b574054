use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use super::config::{DataConfig, DecodeConfig, ExperimentConfig, SkbSource};
use crate::data::{
    balanced_selection, generate_corpus, parse_utterances, speaker_normalize, stack_and_downsample, write_utterances, Split,
    Utterance,
};
use crate::decoding::{beam_search, default_max_len, BeamConfig, ModelScorer};
use crate::error::{contract_err, read_file, write_file, Error, Result};
use crate::metrics::{edit_distance, entropy};
use crate::params::{Ctx, ParamStore};
use crate::speaker::SpeakerKnowledgeBlock;
use crate::training::{train, SpeakerResources, TrainConfig, TrainOutcome};
use crate::transformer::{SpeechTransformer, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerInfo {
    pub speaker_id: String,
    pub split: Split,
    pub attribute: u8,
}

/// Model-ready splits plus every speaker's reference vector.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub vectors: SpeakerKnowledgeBlock,
    pub speakers: Vec<SpeakerInfo>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
        Split::External => "external",
    }
}

fn featurize(utts: &[Utterance], cfg: &DataConfig) -> Result<Vec<Utterance>> {
    let stacked = utts
        .iter()
        .map(|u| Ok(Utterance { frames: stack_and_downsample(&u.frames, cfg.stack_left, cfg.downsample)?, ..u.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Ok(if cfg.speaker_norm { speaker_normalize(&stacked) } else { stacked })
}

fn check_disjoint(splits: [&[Utterance]; 3]) -> Result<()> {
    let sets: Vec<BTreeSet<&str>> = splits.iter().map(|s| s.iter().map(|u| u.speaker_id.as_str()).collect()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            if let Some(s) = sets[i].intersection(&sets[j]).next() {
                return Err(contract_err!("speaker `{s}` occurs in two splits"));
            }
        }
    }
    Ok(())
}

impl Prepared {
    fn build(raw: [Vec<Utterance>; 3], vectors: SpeakerKnowledgeBlock, speakers: Vec<SpeakerInfo>, cfg: &DataConfig) -> Result<Self> {
        check_disjoint([&raw[0], &raw[1], &raw[2]])?;
        let [train, dev, test] = raw;
        Ok(Prepared { train: featurize(&train, cfg)?, dev: featurize(&dev, cfg)?, test: featurize(&test, cfg)?, vectors, speakers })
    }

    /// Attribute-balanced bank drawn from the configured source.
    pub fn bank(&self, source: SkbSource, size: usize) -> Result<SpeakerKnowledgeBlock> {
        let (split, tag) = match source {
            SkbSource::InCorpus => (Split::Train, "in-corpus"),
            SkbSource::External => (Split::External, "external"),
        };
        let pool: Vec<(String, u8)> =
            self.speakers.iter().filter(|s| s.split == split).map(|s| (s.speaker_id.clone(), s.attribute)).collect();
        let ids = balanced_selection(&pool, size)?;
        self.vectors.select(&ids, tag)
    }
}

/// Generates the configured corpus in memory and featurizes it.
pub fn prepare_data(cfg: &DataConfig) -> Result<Prepared> {
    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    let speakers = corpus
        .speakers
        .iter()
        .map(|s| SpeakerInfo { speaker_id: s.speaker_id.clone(), split: s.split, attribute: s.attribute })
        .collect();
    let vectors = corpus.all_vectors()?;
    Prepared::build([corpus.train, corpus.dev, corpus.test], vectors, speakers, cfg)
}

/// Writes the raw corpus as `train.utts`, `dev.utts`, `test.utts`,
/// `vectors.skb` (every speaker) and `speakers.tsv`.
pub fn write_data_dir(cfg: &DataConfig, dir: &Path) -> Result<()> {
    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let f = cfg.corpus.feature_dim;
    for (name, utts) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        write_file(&dir.join(format!("{name}.utts")), &write_utterances(utts, f)?)?;
    }
    corpus.all_vectors()?.save(&dir.join("vectors.skb"))?;
    let mut tsv = String::from("speaker_id\tsplit\tattribute\n");
    for s in &corpus.speakers {
        tsv.push_str(&format!("{}\t{}\t{}\n", s.speaker_id, split_name(s.split), s.attribute));
    }
    write_file(&dir.join("speakers.tsv"), &tsv)
}

/// Reads a directory written by [`write_data_dir`] and featurizes it.
pub fn load_data_dir(cfg: &DataConfig, dir: &Path) -> Result<Prepared> {
    let mut raw: [Vec<Utterance>; 3] = Default::default();
    for (slot, name) in raw.iter_mut().zip(["train", "dev", "test"]) {
        let path = dir.join(format!("{name}.utts"));
        let (dim, utts) = parse_utterances(&read_file(&path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if dim != cfg.corpus.feature_dim {
            return Err(contract_err!("{} holds {dim}-dim frames, config expects {}", path.display(), cfg.corpus.feature_dim));
        }
        *slot = utts;
    }
    let vectors = SpeakerKnowledgeBlock::load(&dir.join("vectors.skb"))?;
    let tsv_path = dir.join("speakers.tsv");
    let mut speakers = Vec::new();
    for (i, line) in read_file(&tsv_path)?.lines().enumerate().skip(1) {
        let bad = || Error::Format(format!("{} line {}: expected `<id>\\t<split>\\t<attribute>`", tsv_path.display(), i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let split = match f[1] {
            "train" => Split::Train,
            "dev" => Split::Dev,
            "test" => Split::Test,
            "external" => Split::External,
            _ => return Err(bad()),
        };
        speakers.push(SpeakerInfo { speaker_id: f[0].to_string(), split, attribute: f[2].parse().map_err(|_| bad())? });
    }
    Prepared::build(raw, vectors, speakers, cfg)
}

pub fn resources_for(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<SpeakerResources> {
    let skb = if cfg.model.variant == Variant::Sast { Some(prepared.bank(cfg.skb.source, cfg.skb.size)?) } else { None };
    Ok(SpeakerResources { skb, vectors: Some(prepared.vectors.clone()) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecodedUtterance {
    pub utt_id: String,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub finished: bool,
    pub score: f64,
    /// Up to `beam` alternatives as (score, content tokens), best first.
    pub nbest: Vec<(f64, Vec<usize>)>,
}

pub fn decode_utterances(
    model: &SpeechTransformer,
    params: &ParamStore,
    utts: &[Utterance],
    res: &SpeakerResources,
    dcfg: &DecodeConfig,
) -> Result<Vec<DecodedUtterance>> {
    let vocab = model.config().vocab_size;
    utts.iter()
        .map(|u| {
            if let Some(t) = u.tokens.iter().find(|&&t| t >= vocab) {
                return Err(contract_err!("utterance `{}` has token {t}, model vocabulary is {vocab}", u.utt_id));
            }
            let mut ctx = Ctx::eval(params);
            let enc = model.encode_memory(&mut ctx, &u.frames, u.num_frames(), res.context(model, &u.speaker_id)?)?;
            let memory = ctx.value(enc.memory).clone();
            let max_len = dcfg.max_len.unwrap_or_else(|| default_max_len(memory.rows()));
            let scorer = ModelScorer { model, params, memory, memory_valid: enc.valid_len };
            let r = beam_search(&scorer, &BeamConfig::new(dcfg.beam, dcfg.alpha, max_len))?;
            let nbest = r.nbest.iter().take(dcfg.beam).map(|h| (h.score(dcfg.alpha), h.content().to_vec())).collect();
            Ok(DecodedUtterance {
                utt_id: u.utt_id.clone(),
                reference: u.tokens.clone(),
                hypothesis: r.best.content().to_vec(),
                finished: r.finished(),
                score: r.score,
                nbest,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub utterances: Vec<DecodedUtterance>,
    pub errors: usize,
    pub reference_tokens: usize,
    pub token_error_rate: f64,
}

impl EvalReport {
    pub fn from_decoded(utterances: Vec<DecodedUtterance>) -> Self {
        let errors = utterances.iter().map(|d| edit_distance(&d.reference, &d.hypothesis)).sum();
        let reference_tokens = utterances.iter().map(|d| d.reference.len()).sum();
        let token_error_rate = crate::metrics::token_error_rate(utterances.iter().map(|d| (&d.reference[..], &d.hypothesis[..])));
        EvalReport { utterances, errors, reference_tokens, token_error_rate }
    }

    /// Tab-separated per-utterance lines followed by the aggregate.
    pub fn to_text(&self, config_hash: &str) -> String {
        let join = |t: &[usize]| t.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let mut s = format!("# config_hash={config_hash}\nutt_id\terrors\tref_len\treference\thypothesis\n");
        for d in &self.utterances {
            let e = edit_distance(&d.reference, &d.hypothesis);
            s.push_str(&format!("{}\t{e}\t{}\t{}\t{}\n", d.utt_id, d.reference.len(), join(&d.reference), join(&d.hypothesis)));
        }
        s.push_str(&format!(
            "# total errors={} ref_tokens={} token_error_rate={:.6}\n",
            self.errors, self.reference_tokens, self.token_error_rate
        ));
        s
    }
}

pub fn evaluate(
    model: &SpeechTransformer,
    params: &ParamStore,
    utts: &[Utterance],
    res: &SpeakerResources,
    dcfg: &DecodeConfig,
) -> Result<EvalReport> {
    Ok(EvalReport::from_decoded(decode_utterances(model, params, utts, res, dcfg)?))
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub dev: EvalReport,
    pub test: EvalReport,
}

/// Trains one model with `seed` and beam-decodes dev and test.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, prepared: &Prepared) -> Result<RunReport> {
    cfg.validate()?;
    let model = SpeechTransformer::new(cfg.model.clone())?;
    let res = resources_for(cfg, prepared)?;
    let tcfg = TrainConfig { seed, ..cfg.train.clone() };
    let outcome = train(&model, model.init_params(seed), &prepared.train, &prepared.dev, &res, &tcfg)?;
    let dev = evaluate(&model, &outcome.params, &prepared.dev, &res, &cfg.decode)?;
    let test = evaluate(&model, &outcome.params, &prepared.test, &res, &cfg.decode)?;
    Ok(RunReport { name: cfg.name.clone(), config_hash: cfg.with_seed(seed).hash(), seed, outcome, dev, test })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub dev_err: f64,
    pub test_err: f64,
}

/// One training run per bank size and seed; errors are averaged over seeds.
pub fn sweep_skb(cfg: &ExperimentConfig, sizes: &[usize], prepared: &Prepared) -> Result<Vec<SweepRow>> {
    if cfg.model.variant != Variant::Sast {
        return Err(contract_err!("bank-size sweep needs a sast model, config is {:?}", cfg.model.variant));
    }
    if sizes.is_empty() {
        return Err(contract_err!("no bank sizes given"));
    }
    let configs = sizes
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.skb.size = n;
            c.validate().map(|_| c)
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .map(|c| {
            let (mut dev, mut test) = (0.0, 0.0);
            for &seed in &c.seeds {
                let r = run_experiment(c, seed, prepared)?;
                dev += r.dev.token_error_rate;
                test += r.test.token_error_rate;
            }
            let k = c.seeds.len() as f64;
            Ok(SweepRow { n: c.skb.size, dev_err: dev / k, test_err: test / k })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow], config_hash: &str) -> String {
    let mut s = format!("# config_hash={config_hash}\nn,dev_err,test_err\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.n, r.dev_err, r.test_err));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagRecord {
    pub utt_id: String,
    pub head: usize,
    pub mean_entropy: f64,
    pub min_entropy: f64,
    pub max_entropy: f64,
    /// How often each slot had the largest weight.
    pub top1_histogram: Vec<usize>,
    /// Time-averaged weights: the hull coefficients of the mean embedding.
    pub mean_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DiagReport {
    pub slots: Vec<String>,
    pub records: Vec<DiagRecord>,
}

impl DiagReport {
    /// One JSON record per line after a header naming the slots.
    pub fn to_text(&self, config_hash: &str) -> String {
        let mut s = format!("# config_hash={config_hash} slots={}\n", self.slots.join(","));
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

/// Speaker-attention weight statistics per utterance and head.
pub fn diag_attention(model: &SpeechTransformer, params: &ParamStore, utts: &[Utterance], skb: &SpeakerKnowledgeBlock) -> Result<DiagReport> {
    if model.config().variant != Variant::Sast {
        return Err(contract_err!("attention diagnostics need a sast model, got {:?}", model.config().variant));
    }
    let res = SpeakerResources { skb: Some(skb.clone()), vectors: None };
    let mut records = Vec::new();
    for u in utts {
        let mut ctx = Ctx::eval(params);
        let enc = model.encode_memory(&mut ctx, &u.frames, u.num_frames(), res.context(model, &u.speaker_id)?)?;
        let sam = enc.sam.expect("sast models produce attention weights");
        for (head, w) in sam.weights.iter().enumerate() {
            let w = ctx.value(*w);
            let n = w.cols();
            let rows = w.rows().min(enc.valid_len);
            let ents: Vec<f64> = (0..rows).map(|r| entropy(w.row(r))).collect();
            let mut top1_histogram = vec![0; n];
            let mut mean_weights = vec![0.0; n];
            for r in 0..rows {
                let row = w.row(r);
                top1_histogram[(0..n).fold(0, |b, j| if row[j] > row[b] { j } else { b })] += 1;
                mean_weights.iter_mut().zip(row).for_each(|(m, v)| *m += v / rows as f64);
            }
            records.push(DiagRecord {
                utt_id: u.utt_id.clone(),
                head,
                mean_entropy: ents.iter().sum::<f64>() / rows as f64,
                min_entropy: ents.iter().copied().fold(f64::INFINITY, f64::min),
                max_entropy: ents.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                top1_histogram,
                mean_weights,
            });
        }
    }
    Ok(DiagReport { slots: skb.ids().to_vec(), records })
}
