//! Speech-Transformer encoder/decoder with optional speaker conditioning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMask, MultiHeadAttention};
use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{Tensor, Var};
use crate::params::{xavier_uniform, Ctx, ParamStore};
use crate::speaker::{attach, splice_vector, SamOutput, SpeakerAttention, SpeakerKnowledgeBlock};

/// How (if at all) speaker information reaches the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain speaker-independent model.
    St,
    /// Soft speaker embedding from attention over the speaker bank.
    Sast,
    /// The speaker's own vector spliced onto every input frame.
    HardInput,
    /// The speaker's own vector spliced onto every top encoder state.
    HardEncoderOutput,
}

impl Variant {
    pub fn needs_speaker_vector(self) -> bool {
        matches!(self, Variant::HardInput | Variant::HardEncoderOutput)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingLevel {
    Frame,
    Utterance,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of one (stacked) input feature frame.
    pub input_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Post-GLU inner width of the feed-forward sublayers.
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub sam_heads: usize,
    /// Per-head query/key/value width of the speaker attention (`d_q = d_kv`).
    pub sam_d_head: usize,
    /// Speaker vector width.
    pub d_iv: usize,
    pub embedding_level: EmbeddingLevel,
    /// 1-based encoder block whose output queries the speaker bank.
    pub attach_block: usize,
}

impl ModelConfig {
    /// The full-size configuration: 6+6 blocks of width 512 with 16 heads,
    /// 2048 inner units, 4234 outputs and a 16x32 speaker attention over
    /// 100-dimensional speaker vectors. Inputs are 80-dim filter banks
    /// stacked with 3 left frames.
    pub fn full_size() -> Self {
        ModelConfig {
            input_dim: 80 * 4,
            d_model: 512,
            heads: 16,
            d_ff: 2048,
            enc_layers: 6,
            dec_layers: 6,
            vocab_size: 4234,
            dropout: 0.1,
            variant: Variant::Sast,
            sam_heads: 16,
            sam_d_head: 32,
            d_iv: 100,
            embedding_level: EmbeddingLevel::Frame,
            attach_block: 6,
        }
    }

    /// Tiny model used for gradient checks.
    pub fn toy() -> Self {
        ModelConfig {
            input_dim: 6,
            d_model: 8,
            heads: 2,
            d_ff: 8,
            enc_layers: 2,
            dec_layers: 2,
            vocab_size: 7,
            dropout: 0.0,
            variant: Variant::Sast,
            sam_heads: 2,
            sam_d_head: 3,
            d_iv: 5,
            embedding_level: EmbeddingLevel::Frame,
            attach_block: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("sam_heads", self.sam_heads),
            ("sam_d_head", self.sam_d_head),
            ("d_iv", self.d_iv),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(contract_err!("model config: {name} must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(contract_err!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.vocab_size < 5 {
            return Err(contract_err!("vocabulary of {} leaves no room past the 4 reserved tokens", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(contract_err!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.attach_block == 0 || self.attach_block > self.enc_layers {
            return Err(contract_err!("attach_block {} outside 1..={}", self.attach_block, self.enc_layers));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Width of the speaker embedding appended by the soft path.
    pub fn sam_width(&self) -> usize {
        self.sam_heads * self.sam_d_head
    }

    pub fn encoder_input_dim(&self) -> usize {
        match self.variant {
            Variant::HardInput => self.input_dim + self.d_iv,
            _ => self.input_dim,
        }
    }

    /// Width of the memory the decoder cross-attends over.
    pub fn memory_dim(&self) -> usize {
        match self.variant {
            Variant::St | Variant::HardInput => self.d_model,
            Variant::Sast => self.d_model + self.sam_width(),
            Variant::HardEncoderOutput => self.d_model + self.d_iv,
        }
    }
}

/// Sinusoidal position table: `sin(t / 10000^(2i/d))` on even columns and
/// the matching cosine on odd columns.
pub fn positional_encoding(length: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(length * d_model);
    for t in 0..length {
        for j in 0..d_model {
            let i2 = (j - j % 2) as f64;
            let angle = t as f64 / 10000f64.powf(i2 / d_model as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[length, d_model], data).expect("positive length and width")
}

/// `GLU(x W1 + b1) W2 + b2`, with `W1` producing `2 d_ff` pre-activations.
#[derive(Clone, Debug)]
pub struct FeedForward {
    prefix: String,
    d_model: usize,
    d_ff: usize,
}

impl FeedForward {
    pub fn new(prefix: impl Into<String>, d_model: usize, d_ff: usize) -> Self {
        FeedForward { prefix: prefix.into(), d_model, d_ff }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let p = &self.prefix;
        store.insert(format!("{p}.w1"), xavier_uniform(self.d_model, 2 * self.d_ff, rng));
        store.insert(format!("{p}.b1"), Tensor::zeros(&[2 * self.d_ff]));
        store.insert(format!("{p}.w2"), xavier_uniform(self.d_ff, self.d_model, rng));
        store.insert(format!("{p}.b2"), Tensor::zeros(&[self.d_model]));
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let p = &self.prefix;
        let (w1, b1) = (ctx.param(&format!("{p}.w1"))?, ctx.param(&format!("{p}.b1"))?);
        let (w2, b2) = (ctx.param(&format!("{p}.w2"))?, ctx.param(&format!("{p}.b2"))?);
        let h = ctx.tape.matmul(x, w1)?;
        let h = ctx.tape.add_row(h, b1)?;
        let h = ctx.tape.glu(h)?;
        let y = ctx.tape.matmul(h, w2)?;
        ctx.tape.add_row(y, b2)
    }
}

fn init_norm(store: &mut ParamStore, name: &str, d: usize) {
    store.insert(format!("{name}.g"), Tensor::ones(&[d]));
    store.insert(format!("{name}.b"), Tensor::zeros(&[d]));
}

/// `layer_norm(x + dropout(sublayer_out))`.
fn residual_norm(ctx: &mut Ctx, x: Var, sub: Var, name: &str) -> Result<Var> {
    let sub = ctx.dropout(sub)?;
    let sum = ctx.tape.add(x, sub)?;
    let g = ctx.param(&format!("{name}.g"))?;
    let b = ctx.param(&format!("{name}.b"))?;
    ctx.tape.layer_norm(sum, g, b)
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    prefix: String,
    pub self_attn: MultiHeadAttention,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    fn new(prefix: String, cfg: &ModelConfig) -> Self {
        EncoderBlock {
            self_attn: MultiHeadAttention::new(format!("{prefix}.self_attn"), cfg.d_model, cfg.d_model, cfg.heads, cfg.d_head()),
            ffn: FeedForward::new(format!("{prefix}.ffn"), cfg.d_model, cfg.d_ff),
            prefix,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, d_model: usize) {
        self.self_attn.init(store, rng);
        self.ffn.init(store, rng);
        init_norm(store, &format!("{}.ln1", self.prefix), d_model);
        init_norm(store, &format!("{}.ln2", self.prefix), d_model);
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: &AttentionMask) -> Result<Var> {
        let a = self.self_attn.forward(ctx, x, x, Some(mask))?.out;
        let h = residual_norm(ctx, x, a, &format!("{}.ln1", self.prefix))?;
        let f = self.ffn.forward(ctx, h)?;
        residual_norm(ctx, h, f, &format!("{}.ln2", self.prefix))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    prefix: String,
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    fn new(prefix: String, cfg: &ModelConfig) -> Self {
        let (d, h, dh) = (cfg.d_model, cfg.heads, cfg.d_head());
        DecoderBlock {
            self_attn: MultiHeadAttention::new(format!("{prefix}.self_attn"), d, d, h, dh),
            cross_attn: MultiHeadAttention::new(format!("{prefix}.cross_attn"), d, cfg.memory_dim(), h, dh),
            ffn: FeedForward::new(format!("{prefix}.ffn"), d, cfg.d_ff),
            prefix,
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng, d_model: usize) {
        self.self_attn.init(store, rng);
        self.cross_attn.init(store, rng);
        self.ffn.init(store, rng);
        for k in 1..=3 {
            init_norm(store, &format!("{}.ln{k}", self.prefix), d_model);
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, y: Var, memory: Var, self_mask: &AttentionMask, mem_mask: &AttentionMask) -> Result<Var> {
        let a = self.self_attn.forward(ctx, y, y, Some(self_mask))?.out;
        let h = residual_norm(ctx, y, a, &format!("{}.ln1", self.prefix))?;
        let c = self.cross_attn.forward(ctx, h, memory, Some(mem_mask))?.out;
        let h = residual_norm(ctx, h, c, &format!("{}.ln2", self.prefix))?;
        let f = self.ffn.forward(ctx, h)?;
        residual_norm(ctx, h, f, &format!("{}.ln3", self.prefix))
    }
}

/// Speaker information available for one utterance.
#[derive(Clone, Copy, Debug, Default)]
pub struct SpeakerContext<'a> {
    pub skb: Option<&'a SpeakerKnowledgeBlock>,
    /// The utterance speaker's own vector, for the hard-embedding variants.
    pub vector: Option<&'a [f64]>,
}

/// Result of running the encoder side.
pub struct Encoded {
    /// Output of every encoder block, bottom to top.
    pub blocks: Vec<Var>,
    /// What the decoder attends over.
    pub memory: Var,
    pub sam: Option<SamOutput>,
    pub valid_len: usize,
}

/// The full model description; parameters live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct SpeechTransformer {
    cfg: ModelConfig,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    pub sam: Option<SpeakerAttention>,
}

impl SpeechTransformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = (0..cfg.enc_layers).map(|i| EncoderBlock::new(format!("enc.{i}"), &cfg)).collect();
        let decoder = (0..cfg.dec_layers).map(|i| DecoderBlock::new(format!("dec.{i}"), &cfg)).collect();
        let sam = (cfg.variant == Variant::Sast).then(|| SpeakerAttention::from_config(&cfg));
        Ok(SpeechTransformer { cfg, encoder, decoder, sam })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Fresh parameters: Xavier-uniform weights, zero biases, unit norm gains.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = &self.cfg;
        let mut store = ParamStore::new();
        store.insert("input.w", xavier_uniform(cfg.encoder_input_dim(), cfg.d_model, &mut rng));
        store.insert("input.b", Tensor::zeros(&[cfg.d_model]));
        store.insert("embed.tokens", xavier_uniform(cfg.vocab_size, cfg.d_model, &mut rng));
        store.insert("out.w", xavier_uniform(cfg.d_model, cfg.vocab_size, &mut rng));
        store.insert("out.b", Tensor::zeros(&[cfg.vocab_size]));
        for b in &self.encoder {
            b.init(&mut store, &mut rng, cfg.d_model);
        }
        for b in &self.decoder {
            b.init(&mut store, &mut rng, cfg.d_model);
        }
        if let Some(sam) = &self.sam {
            sam.init(&mut store, &mut rng);
        }
        store
    }

    /// Runs the encoder stack on `features` (`[T, encoder_input_dim]`), of
    /// which only the first `valid_len` rows are real frames. Returns every
    /// block's output.
    pub fn encode(&self, ctx: &mut Ctx, features: Var, valid_len: usize) -> Result<Vec<Var>> {
        let shape = ctx.tape.shape(features).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(contract_err!("encode needs a non-empty [T, F] feature matrix, got {shape:?}"));
        }
        if shape[1] != self.cfg.encoder_input_dim() {
            return Err(dim_err!("features {shape:?} do not match encoder input width {}", self.cfg.encoder_input_dim()));
        }
        let t = shape[0];
        let mask = AttentionMask::key_padding(t, t, valid_len)?;
        let (w, b) = (ctx.param("input.w")?, ctx.param("input.b")?);
        let x = ctx.tape.matmul(features, w)?;
        let x = ctx.tape.add_row(x, b)?;
        let x = ctx.tape.add_const(x, &positional_encoding(t, self.cfg.d_model))?;
        let mut x = ctx.dropout(x)?;
        let mut outs = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            x = block.forward(ctx, x, &mask)?;
            outs.push(x);
        }
        Ok(outs)
    }

    /// Encoder plus the variant's speaker conditioning. `features` holds the
    /// raw (stacked) frames; the hard-input splice happens here.
    pub fn encode_memory(&self, ctx: &mut Ctx, features: &Tensor, valid_len: usize, spk: SpeakerContext) -> Result<Encoded> {
        if features.shape().len() != 2 || features.cols() != self.cfg.input_dim {
            return Err(dim_err!("features {:?} do not match input width {}", features.shape(), self.cfg.input_dim));
        }
        if valid_len == 0 || valid_len > features.rows() {
            return Err(contract_err!("{valid_len} valid frames out of {}", features.rows()));
        }
        let speaker_vector = || {
            spk.vector.ok_or_else(|| contract_err!("{:?} model needs the speaker's vector", self.cfg.variant))
        };
        let mut x = ctx.tape.constant(features.clone());
        if self.cfg.variant == Variant::HardInput {
            x = splice_vector(&mut ctx.tape, x, speaker_vector()?)?;
        }
        let blocks = self.encode(ctx, x, valid_len)?;
        let top = *blocks.last().expect("at least one encoder block");
        let (memory, sam) = match self.cfg.variant {
            Variant::St | Variant::HardInput => (top, None),
            Variant::HardEncoderOutput => (splice_vector(&mut ctx.tape, top, speaker_vector()?)?, None),
            Variant::Sast => {
                let sam = self.sam.as_ref().expect("sast model has a speaker attention");
                let skb = spk.skb.ok_or_else(|| contract_err!("sast model needs a speaker knowledge block"))?;
                let query = blocks[self.cfg.attach_block - 1];
                let out = sam.embed(ctx, skb, query, valid_len)?;
                (attach(&mut ctx.tape, top, out.embedding)?, Some(out))
            }
        };
        Ok(Encoded { blocks, memory, sam, valid_len })
    }

    /// Log-probabilities `[U, V]` for each position of `tokens` predicting the next token.
    pub fn decode(&self, ctx: &mut Ctx, memory: Var, memory_valid: usize, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(contract_err!("decoder needs at least the start token"));
        }
        let mem_shape = ctx.tape.shape(memory).to_vec();
        if mem_shape.len() != 2 || mem_shape[1] != self.cfg.memory_dim() {
            return Err(dim_err!("memory {mem_shape:?} does not match width {}", self.cfg.memory_dim()));
        }
        let u = tokens.len();
        let emb = ctx.param("embed.tokens")?;
        let y = ctx.tape.embedding_lookup(emb, tokens)?;
        let y = ctx.tape.add_const(y, &positional_encoding(u, self.cfg.d_model))?;
        let mut y = ctx.dropout(y)?;
        let self_mask = AttentionMask::causal(u);
        let mem_mask = AttentionMask::key_padding(u, mem_shape[0], memory_valid)?;
        for block in &self.decoder {
            y = block.forward(ctx, y, memory, &self_mask, &mem_mask)?;
        }
        let (w, b) = (ctx.param("out.w")?, ctx.param("out.b")?);
        let logits = ctx.tape.matmul(y, w)?;
        let logits = ctx.tape.add_row(logits, b)?;
        ctx.tape.log_softmax(logits)
    }

    /// Next-token log-probabilities after `tokens`, given a precomputed memory.
    pub fn decode_step(&self, params: &ParamStore, memory: &Tensor, memory_valid: usize, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut ctx = Ctx::eval(params);
        let m = ctx.tape.constant(memory.clone());
        let logp = self.decode(&mut ctx, m, memory_valid, tokens)?;
        Ok(ctx.value(logp).row(tokens.len() - 1).to_vec())
    }
}
