use crate::error::{contract_err, dim_err, Result};
use crate::numerics::{Tape, Tensor, Var};

fn smoothing_mass(vocab: usize, eps: f64, pad: Option<usize>) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(contract_err!("label smoothing {eps} outside [0, 1)"));
    }
    let others = vocab - 1 - usize::from(pad.is_some());
    if eps > 0.0 && others == 0 {
        return Err(contract_err!("no token left to receive smoothing mass with V={vocab}"));
    }
    Ok(if eps == 0.0 { 0.0 } else { eps / others as f64 })
}

/// Summed smoothed cross-entropy over the non-pad positions of `targets`,
/// and the number of such positions. Row `u` of `logp` predicts
/// `targets[u]`. The gold token gets `1 - eps`; the remaining mass is
/// spread evenly over every other token except `pad`.
pub fn smoothed_loss_terms(tape: &mut Tape, logp: Var, targets: &[usize], eps: f64, pad: Option<usize>) -> Result<(Var, usize)> {
    let shape = tape.shape(logp).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(dim_err!("log-probabilities {shape:?} for {} targets", targets.len()));
    }
    let v = shape[1];
    let off = smoothing_mass(v, eps, pad)?;
    let mut q = vec![0.0; targets.len() * v];
    let mut count = 0;
    for (u, &t) in targets.iter().enumerate() {
        if t >= v {
            return Err(contract_err!("target {t} out of range for V={v}"));
        }
        if Some(t) == pad {
            continue;
        }
        count += 1;
        let row = &mut q[u * v..(u + 1) * v];
        row.fill(off);
        if let Some(p) = pad {
            row[p] = 0.0;
        }
        row[t] = 1.0 - eps;
    }
    let q = tape.constant(Tensor::new(&[targets.len(), v], q)?);
    let weighted = tape.mul(logp, q)?;
    let total = tape.sum(weighted)?;
    Ok((tape.scale(total, -1.0)?, count))
}

/// Mean smoothed cross-entropy over the non-pad positions.
pub fn smoothed_loss(tape: &mut Tape, logp: Var, targets: &[usize], eps: f64, pad: Option<usize>) -> Result<Var> {
    let (total, count) = smoothed_loss_terms(tape, logp, targets, eps, pad)?;
    if count == 0 {
        return Err(contract_err!("every target position is padding"));
    }
    tape.scale(total, 1.0 / count as f64)
}

/// Entropy of one smoothed target row; a lower bound on the per-position loss.
pub fn smoothed_target_entropy(vocab: usize, eps: f64, pad: Option<usize>) -> Result<f64> {
    let off = smoothing_mass(vocab, eps, pad)?;
    let others = (vocab - 1 - usize::from(pad.is_some())) as f64;
    let xlogx = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    Ok(-(xlogx(1.0 - eps) + others * xlogx(off)))
}
