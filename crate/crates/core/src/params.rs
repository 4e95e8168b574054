//! Named parameter storage and the per-pass forward context.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{dropout, Tape, Tensor, Var};

/// Every trainable tensor of a model, keyed by a dotted path such as
/// `enc.0.self_attn.w_q`. Iteration order is the lexical key order, which
/// fixes gradient accumulation and checkpoint record order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor) {
        t.requires_grad = true;
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| contract_err!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| contract_err!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn clear_grads(&mut self) {
        for t in self.params.values_mut() {
            t.grad = None;
        }
    }

    /// Installs accumulated gradients; parameters absent from `grads` get zeros.
    pub fn set_grads(&mut self, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let g = match grads.get(name) {
                Some(g) if g.len() == t.numel() => g.clone(),
                Some(g) => return Err(dim_err!("gradient for `{name}` has {} values, want {}", g.len(), t.numel())),
                None => vec![0.0; t.numel()],
            };
            t.grad = Some(g);
        }
        Ok(())
    }

    /// Same names and shapes as `other`.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }
}

/// Glorot/Xavier uniform initializer in ±√(6/(fan_in+fan_out)).
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(&[rows, cols], data).expect("positive dims")
}

/// One forward pass: a fresh tape, lazily bound parameters and optional dropout.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: BTreeMap<String, Var>,
    dropout: Option<(f64, &'a mut dyn RngCore)>,
}

impl<'a> Ctx<'a> {
    /// Inference pass, dropout disabled.
    pub fn eval(store: &'a ParamStore) -> Self {
        Ctx { tape: Tape::new(), store, bound: BTreeMap::new(), dropout: None }
    }

    pub fn train(store: &'a ParamStore, rate: f64, rng: &'a mut dyn RngCore) -> Self {
        Ctx { tape: Tape::new(), store, bound: BTreeMap::new(), dropout: Some((rate, rng)) }
    }

    /// Binds a parameter onto the tape the first time it is used.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let v = self.tape.param(self.store.get(name)?.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        match &mut self.dropout {
            Some((rate, rng)) => dropout(&mut self.tape, x, *rate, &mut **rng),
            None => Ok(x),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients of every parameter used in this pass, after `backward`.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .map(|(name, v)| {
                let g = self.tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.tape.value(*v).numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}
