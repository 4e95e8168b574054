//! Speaker knowledge block, speaker attention and hard speaker embeddings.
//!
//! The speaker attention turns encoder states into a *soft* speaker
//! embedding: for every head it projects the query state and each bank
//! vector, scores them by scaled dot product, normalizes over the bank
//! slots and returns the weighted sum of projected bank vectors. Heads are
//! concatenated as they are, without an output projection.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::attention::scaled_dot_attention;
use crate::error::{contract_err, dim_err, read_file, write_file, Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{xavier_uniform, Ctx, ParamStore};
use crate::transformer::{EmbeddingLevel, ModelConfig};

/// Immutable, ordered bank of speaker vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerKnowledgeBlock {
    ids: Vec<String>,
    vectors: Tensor,
    source: String,
}

impl SpeakerKnowledgeBlock {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self> {
        if ids.is_empty() || ids.len() != vectors.len() {
            return Err(contract_err!("speaker bank needs N >= 1 ids matching {} vectors", vectors.len()));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(dim_err!("speaker vectors must be non-empty"));
        }
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(dim_err!("speaker `{}` has dimension {}, expected {dim}", ids[i], v.len()));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(contract_err!("speaker id {id:?} must be a non-empty token"));
            }
            if !seen.insert(id.as_str()) {
                return Err(contract_err!("duplicate speaker id `{id}`"));
            }
        }
        let source = source.into();
        if source.contains('\n') {
            return Err(contract_err!("source tag must be a single line"));
        }
        let vectors = Tensor::from_rows(&vectors)?;
        Ok(SpeakerKnowledgeBlock { ids, vectors, source })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `[N, d_iv]` matrix of the bank vectors.
    pub fn matrix(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|s| s == id).map(|i| self.vectors.row(i))
    }

    /// Sub-bank with the given speakers, in the given order.
    pub fn select(&self, ids: &[String], source: impl Into<String>) -> Result<Self> {
        let vectors = ids
            .iter()
            .map(|id| self.get(id).map(<[f64]>::to_vec).ok_or_else(|| contract_err!("speaker `{id}` not in bank")))
            .collect::<Result<Vec<_>>>()?;
        SpeakerKnowledgeBlock::new(ids.to_vec(), vectors, source)
    }

    /// Text form: a `#skb v1 n=<N> dim=<D> source=<tag>` header, then one
    /// `<id> <D> <v_1> ... <v_D>` line per speaker.
    pub fn to_text(&self) -> String {
        let mut s = format!("#skb v1 n={} dim={} source={}\n", self.len(), self.dim(), self.source);
        for (i, id) in self.ids.iter().enumerate() {
            write!(s, "{id} {}", self.dim()).unwrap();
            for v in self.vector(i) {
                write!(s, " {v:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty speaker bank file".into()))?;
        let (n, dim, source) = parse_skb_header(header)?;
        let mut ids = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut fields = line.split_whitespace();
            let id = fields.next().unwrap().to_string();
            let d: usize = parse_num(fields.next(), lineno + 2, "dimension")?;
            let v = fields.map(|f| parse_num(Some(f), lineno + 2, "value")).collect::<Result<Vec<f64>>>()?;
            if d != dim || v.len() != dim {
                return Err(dim_err!("line {}: speaker `{id}` declares {d} values, has {}, header says {dim}", lineno + 2, v.len()));
            }
            ids.push(id);
            vectors.push(v);
        }
        if ids.len() != n {
            return Err(Error::Format(format!("header promises {n} speakers, found {}", ids.len())));
        }
        SpeakerKnowledgeBlock::new(ids, vectors, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_text())
    }
}

fn parse_num<T: std::str::FromStr>(field: Option<&str>, line: usize, what: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Format(format!("line {line}: bad or missing {what}")))
}

fn parse_skb_header(line: &str) -> Result<(usize, usize, String)> {
    let bad = || Error::Format(format!("bad speaker bank header {line:?}"));
    let rest = line.strip_prefix("#skb v1 ").ok_or_else(bad)?;
    let rest = rest.strip_prefix("n=").ok_or_else(bad)?;
    let (n, rest) = rest.split_once(' ').ok_or_else(bad)?;
    let rest = rest.strip_prefix("dim=").ok_or_else(bad)?;
    let (dim, rest) = rest.split_once(' ').ok_or_else(bad)?;
    let source = rest.strip_prefix("source=").ok_or_else(bad)?;
    Ok((n.parse().map_err(|_| bad())?, dim.parse().map_err(|_| bad())?, source.to_string()))
}

/// Output of the speaker attention for one utterance.
#[derive(Clone, Debug)]
pub struct SamOutput {
    /// `[T, h*d_kv]` for frame level, `[1, h*d_kv]` for utterance level.
    pub embedding: Var,
    /// Per head, `[T or 1, N]` weights over bank slots.
    pub weights: Vec<Var>,
    /// The bank as it sits on the tape (a constant).
    pub bank: Var,
    /// Per head, `[N, d_kv]` projected bank vectors.
    pub projected_bank: Vec<Var>,
}

impl SamOutput {
    /// Stacks the per-head weights into an `[h, rows, N]` tensor.
    pub fn weights_tensor(&self, tape: &Tape) -> Tensor {
        let first = tape.value(self.weights[0]);
        let data = self.weights.iter().flat_map(|w| tape.value(*w).data().iter().copied()).collect();
        Tensor::new(&[self.weights.len(), first.rows(), first.cols()], data).unwrap()
    }
}

/// Speaker attention: per-head query projections `W_q^i` on encoder
/// states and shared key/value projections `W_kv^i` on bank vectors,
/// stored as column blocks of `sam.w_q` and `sam.w_kv`. No biases.
#[derive(Clone, Debug)]
pub struct SpeakerAttention {
    pub heads: usize,
    pub d_head: usize,
    pub d_model: usize,
    pub d_iv: usize,
    pub level: EmbeddingLevel,
}

impl SpeakerAttention {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        SpeakerAttention {
            heads: cfg.sam_heads,
            d_head: cfg.sam_d_head,
            d_model: cfg.d_model,
            d_iv: cfg.d_iv,
            level: cfg.embedding_level,
        }
    }

    pub fn width(&self) -> usize {
        self.heads * self.d_head
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        store.insert("sam.w_q", xavier_uniform(self.d_model, self.width(), rng));
        store.insert("sam.w_kv", xavier_uniform(self.d_iv, self.width(), rng));
    }

    /// Frame- or utterance-level embedding depending on the configured level.
    pub fn embed(&self, ctx: &mut Ctx, skb: &SpeakerKnowledgeBlock, z: Var, valid_len: usize) -> Result<SamOutput> {
        match self.level {
            EmbeddingLevel::Frame => self.soft_embed_frame(ctx, skb, z),
            EmbeddingLevel::Utterance => self.soft_embed_utterance(ctx, skb, z, valid_len),
        }
    }

    /// One embedding per row of `z` (`[T, d_model]`).
    pub fn soft_embed_frame(&self, ctx: &mut Ctx, skb: &SpeakerKnowledgeBlock, z: Var) -> Result<SamOutput> {
        if skb.dim() != self.d_iv {
            return Err(dim_err!("speaker bank dimension {} does not match W_kv input {}", skb.dim(), self.d_iv));
        }
        let zs = ctx.tape.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != self.d_model {
            return Err(dim_err!("speaker attention query {zs:?} must be [T, {}]", self.d_model));
        }
        let wq = ctx.param("sam.w_q")?;
        let wkv = ctx.param("sam.w_kv")?;
        let tape = &mut ctx.tape;
        let bank = tape.constant(skb.matrix().clone());
        let q = tape.matmul(z, wq)?;
        let m = tape.matmul(bank, wkv)?;
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        let mut projected_bank = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * self.d_head;
            let qh = tape.slice_last(q, off, self.d_head)?;
            let mh = tape.slice_last(m, off, self.d_head)?;
            let (e, u) = scaled_dot_attention(tape, qh, mh, mh, None)?;
            heads.push(e);
            weights.push(u);
            projected_bank.push(mh);
        }
        let embedding = if heads.len() == 1 { heads[0] } else { tape.concat_last(&heads)? };
        Ok(SamOutput { embedding, weights, bank, projected_bank })
    }

    /// A single embedding from the time-average of the first `valid_len` rows of `z`.
    pub fn soft_embed_utterance(&self, ctx: &mut Ctx, skb: &SpeakerKnowledgeBlock, z: Var, valid_len: usize) -> Result<SamOutput> {
        let t = ctx.tape.shape(z)[0];
        if valid_len == 0 || valid_len > t {
            return Err(contract_err!("utterance pooling over {valid_len} of {t} frames"));
        }
        let pooled = if valid_len == t {
            let m = ctx.tape.mean_over_axis(z, 0)?;
            let d = ctx.tape.shape(m)[0];
            ctx.tape.reshape(m, &[1, d])?
        } else {
            let mut avg = vec![0.0; t];
            avg[..valid_len].fill(1.0 / valid_len as f64);
            let a = ctx.tape.constant(Tensor::new(&[1, t], avg)?);
            ctx.tape.matmul(a, z)?
        };
        self.soft_embed_frame(ctx, skb, pooled)
    }
}

/// `[z_t ; e_t]` per frame. An `[1, w]` (utterance-level) embedding is
/// broadcast to every frame.
pub fn attach(tape: &mut Tape, z_top: Var, e: Var) -> Result<Var> {
    let t = tape.shape(z_top)[0];
    let rows = tape.shape(e)[0];
    let e = match rows {
        r if r == t => e,
        1 => tape.repeat_rows(e, t)?,
        r => return Err(dim_err!("cannot attach a {r}-row embedding to {t} frames")),
    };
    tape.concat_last(&[z_top, e])
}

/// Appends the same constant vector to every row of `x`.
pub fn splice_vector(tape: &mut Tape, x: Var, v: &[f64]) -> Result<Var> {
    if v.is_empty() {
        return Err(dim_err!("cannot splice an empty vector"));
    }
    let rows = tape.shape(x)[0];
    let tiled = Tensor::new(&[rows, v.len()], v.repeat(rows))?;
    let c = tape.constant(tiled);
    tape.concat_last(&[x, c])
}

/// Input-side hard embedding: the speaker's vector on every feature frame.
pub fn hard_embed_input(features: &Tensor, ivec: &[f64]) -> Result<Tensor> {
    splice_plain(features, ivec)
}

/// Output-side hard embedding: the speaker's vector on every top encoder state.
pub fn hard_embed_encoder_output(z_top: &Tensor, ivec: &[f64]) -> Result<Tensor> {
    splice_plain(z_top, ivec)
}

fn splice_plain(x: &Tensor, v: &[f64]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = splice_vector(&mut tape, xv, v)?;
    Ok(tape.value(y).clone())
}
