//! Scaled dot-product and multi-head attention.

use rand::Rng;

use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{xavier_uniform, Ctx, ParamStore};

/// Additive logit for disallowed positions.
pub const MASK_VALUE: f64 = -1e9;

/// Which keys each query may look at. `true` means allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask { rows, cols, allowed: vec![true; rows * cols] }
    }

    /// Query `i` may see keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n * n).map(|k| k % n <= k / n).collect();
        AttentionMask { rows: n, cols: n, allowed }
    }

    /// Every query may see the first `valid` keys only.
    pub fn key_padding(rows: usize, cols: usize, valid: usize) -> Result<Self> {
        if valid == 0 || valid > cols {
            return Err(contract_err!("{valid} valid keys out of {cols}"));
        }
        let allowed = (0..rows * cols).map(|k| k % cols < valid).collect();
        Ok(AttentionMask { rows, cols, allowed })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        AttentionMask { rows, cols, allowed }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    /// 0 where allowed, [`MASK_VALUE`] elsewhere; fails if a row is fully masked.
    pub fn additive(&self) -> Result<Tensor> {
        for r in 0..self.rows {
            if !self.allowed[r * self.cols..(r + 1) * self.cols].iter().any(|&a| a) {
                return Err(contract_err!("query row {r} has no allowed key"));
            }
        }
        let data = self.allowed.iter().map(|&a| if a { 0.0 } else { MASK_VALUE }).collect();
        Tensor::new(&[self.rows, self.cols], data)
    }
}

/// `softmax(q kᵀ / √d) v`. Returns the output and the attention weights.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(dim_err!("attention shapes q {qs:?}, k {ks:?}, v {vs:?} are incompatible"));
    }
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let mut logits = tape.scale(logits, 1.0 / (qs[1] as f64).sqrt())?;
    if let Some(m) = mask {
        if m.shape() != (qs[0], ks[0]) {
            return Err(dim_err!("mask {:?} does not match logits {:?}", m.shape(), [qs[0], ks[0]]));
        }
        logits = tape.add_const(logits, &m.additive()?)?;
    }
    let weights = tape.softmax(logits, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Parameter layout of one multi-head attention layer.
///
/// The per-head projections `W_i^Q`, `W_i^K`, `W_i^V` are stored side by
/// side as column blocks of `w_q`, `w_k`, `w_v`; head `i` owns columns
/// `i*d_head..(i+1)*d_head`. No projection carries a bias.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub prefix: String,
    pub d_model: usize,
    /// Width of key/value inputs; differs from `d_model` for cross-attention
    /// over an enlarged memory.
    pub d_kv_in: usize,
    pub heads: usize,
    pub d_head: usize,
}

pub struct MhaOutput {
    pub out: Var,
    /// One `[Tq, Tk]` weight matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(prefix: impl Into<String>, d_model: usize, d_kv_in: usize, heads: usize, d_head: usize) -> Self {
        MultiHeadAttention { prefix: prefix.into(), d_model, d_kv_in, heads, d_head }
    }

    fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let hd = self.heads * self.d_head;
        store.insert(self.name("w_q"), xavier_uniform(self.d_model, hd, rng));
        store.insert(self.name("w_k"), xavier_uniform(self.d_kv_in, hd, rng));
        store.insert(self.name("w_v"), xavier_uniform(self.d_kv_in, hd, rng));
        store.insert(self.name("w_o"), xavier_uniform(hd, self.d_model, rng));
    }

    pub fn forward(&self, ctx: &mut Ctx, q_in: Var, kv_in: Var, mask: Option<&AttentionMask>) -> Result<MhaOutput> {
        let wq = ctx.param(&self.name("w_q"))?;
        let wk = ctx.param(&self.name("w_k"))?;
        let wv = ctx.param(&self.name("w_v"))?;
        let wo = ctx.param(&self.name("w_o"))?;
        let tape = &mut ctx.tape;
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * self.d_head;
            let qh = tape.slice_last(q, off, self.d_head)?;
            let kh = tape.slice_last(k, off, self.d_head)?;
            let vh = tape.slice_last(v, off, self.d_head)?;
            let (o, w) = scaled_dot_attention(tape, qh, kh, vh, mask)?;
            heads.push(o);
            weights.push(w);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_last(&heads)? };
        let out = tape.matmul(cat, wo)?;
        Ok(MhaOutput { out, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn attend(q: Tensor, k: Tensor, v: Tensor, mask: Option<&AttentionMask>) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let (q, k, v) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let (o, w) = scaled_dot_attention(&mut tape, q, k, v, mask).unwrap();
        (tape.value(o).clone(), tape.value(w).clone())
    }

    #[test]
    fn single_key_takes_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = rand_t(&[1, 3], &mut rng);
        let (o, w) = attend(rand_t(&[2, 4], &mut rng), rand_t(&[1, 4], &mut rng), v.clone(), None);
        assert_eq!(w.data(), &[1.0, 1.0]);
        assert!(o.row(0).iter().zip(v.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn identical_keys_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key = rand_t(&[1, 4], &mut rng).into_data();
        let k = Tensor::new(&[2, 4], [key.clone(), key].concat()).unwrap();
        let (_, w) = attend(rand_t(&[3, 4], &mut rng), k, rand_t(&[2, 2], &mut rng), None);
        assert!(w.data().iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn scalar_oracle() {
        let q = Tensor::new(&[1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(&[2, 1], vec![1.0, -1.0]).unwrap();
        let v = Tensor::new(&[2, 1], vec![1.0, 0.0]).unwrap();
        let (o, w) = attend(q, k, v, None);
        // softmax([2, -2])_0 = 1 / (1 + e^-4)
        let expected = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((w.data()[0] - 0.98201).abs() < 1e-5);
        assert!((w.data()[0] - expected).abs() < 1e-15);
        assert!((o.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn logits_are_scaled_by_root_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 32;
        let (q, k, v) = (rand_t(&[3, d], &mut rng), rand_t(&[5, d], &mut rng), rand_t(&[5, 2], &mut rng));
        let (_, w) = attend(q.clone(), k.clone(), v, None);
        // Unscaled reference: scaling q by 1/√32 and using d=1 semantics by hand.
        for i in 0..3 {
            let logits: Vec<f64> =
                (0..5).map(|j| q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() / 32f64.sqrt()).collect();
            let max = logits.iter().copied().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for j in 0..5 {
                assert!((w.at(i, j) - (logits[j] - max).exp() / z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fully_masked_row_is_a_contract_error() {
        let mask = AttentionMask::from_fn(2, 2, |i, _| i == 0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, 2]));
        let err = scaled_dot_attention(&mut tape, x, x, x, Some(&mask)).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn masked_rows_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, mut v) = (rand_t(&[3, 4], &mut rng), rand_t(&[3, 4], &mut rng), rand_t(&[3, 2], &mut rng));
        let mask = AttentionMask::causal(3);
        let (o1, _) = attend(q.clone(), k.clone(), v.clone(), Some(&mask));
        v.data_mut()[4] = 1e3;
        v.data_mut()[5] = -1e3;
        let (o2, _) = attend(q, k, v, Some(&mask));
        for i in 0..2 {
            for j in 0..2 {
                assert!((o1.at(i, j) - o2.at(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn key_value_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, k, v) = (rand_t(&[2, 3], &mut rng), rand_t(&[4, 3], &mut rng), rand_t(&[4, 2], &mut rng));
        let perm = [2, 0, 3, 1];
        let permute = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&p| t.row(p).to_vec()).collect::<Vec<_>>()).unwrap();
        let (o1, w1) = attend(q.clone(), k.clone(), v.clone(), None);
        let (o2, w2) = attend(q, permute(&k), permute(&v), None);
        assert!(o1.max_abs_diff(&o2) < 1e-12);
        for i in 0..2 {
            for (jn, &jo) in perm.iter().enumerate() {
                assert!((w2.at(i, jn) - w1.at(i, jo)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_head_with_identity_projections_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 4;
        let mha = MultiHeadAttention::new("a", d, d, 1, d);
        let mut store = ParamStore::new();
        for p in ["w_q", "w_k", "w_v", "w_o"] {
            store.insert(format!("a.{p}"), Tensor::identity(d));
        }
        let (x, m) = (rand_t(&[3, d], &mut rng), rand_t(&[5, d], &mut rng));
        let mut ctx = Ctx::eval(&store);
        let (xv, mv) = (ctx.tape.constant(x.clone()), ctx.tape.constant(m.clone()));
        let out = mha.forward(&mut ctx, xv, mv, None).unwrap();
        let (reference, _) = attend(x, m.clone(), m, None);
        assert!(ctx.value(out.out).max_abs_diff(&reference) < 1e-12);
    }

    #[test]
    fn full_sized_shapes_and_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mha = MultiHeadAttention::new("a", 512, 512, 16, 32);
        let mut store = ParamStore::new();
        mha.init(&mut store, &mut rng);
        let x = rand_t(&[7, 512], &mut rng);
        let mut ctx = Ctx::eval(&store);
        let xv = ctx.tape.constant(x.clone());
        let out = mha.forward(&mut ctx, xv, xv, None).unwrap();
        assert_eq!(ctx.tape.shape(out.out), &[7, 512]);
        assert_eq!(out.weights.len(), 16);
        for w in &out.weights {
            let w = ctx.value(*w);
            for r in 0..w.rows() {
                assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(w.row(r).iter().all(|&p| p >= 0.0));
            }
        }

        *store.get_mut("a.w_v").unwrap() = Tensor::zeros(&[512, 512]);
        let mut ctx = Ctx::eval(&store);
        let xv = ctx.tape.constant(x);
        let out = mha.forward(&mut ctx, xv, xv, None).unwrap();
        assert!(ctx.value(out.out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_mask_layout() {
        let m = AttentionMask::causal(3);
        assert!(m.is_allowed(0, 0) && !m.is_allowed(0, 1) && m.is_allowed(2, 1) && m.is_allowed(2, 2));
        let p = AttentionMask::key_padding(2, 4, 3).unwrap();
        assert!(p.is_allowed(1, 2) && !p.is_allowed(1, 3));
        assert!(AttentionMask::key_padding(2, 4, 0).is_err());
    }
}
