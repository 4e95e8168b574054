//! Dense `f64` tensors and a tape for reverse-mode differentiation.

mod tape;
mod tensor;

pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::{dim_err, Result};

/// Seeded inverted dropout. A rate of zero records nothing.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(dim_err!("dropout rate {rate} outside [0, 1)"));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..tape.value(x).numel())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.dropout_with_mask(x, mask)
}

/// Row-wise softmax of a plain tensor, without keeping a tape around.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(t.clone());
    let y = tape.softmax(x, axis)?;
    Ok(tape.value(y).clone())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let z = tape.matmul(x, y)?;
    Ok(tape.value(z).clone())
}
