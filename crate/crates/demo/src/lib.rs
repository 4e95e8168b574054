//! Browser bindings for three small views onto the model: speaker
//! attention over a 2-D bank, the positional-encoding table, and
//! length-penalized hypothesis ranking. Build with `wasm-pack build
//! --target web` and open `www/index.html`.

use sast::attention::scaled_dot_attention;
use sast::decoding::length_penalty;
use sast::numerics::{Tape, Tensor};
use sast::transformer::positional_encoding;
use wasm_bindgen::prelude::*;

/// Single-head speaker attention with identity projections. `bank` holds
/// `N` points as `[x0, y0, x1, y1, ...]`; the query is scaled by
/// `sharpness` before scoring. Returns the `N` slot weights followed by the
/// 2-D embedding (the weighted mean of the bank points).
#[wasm_bindgen]
pub fn speaker_attention(bank: &[f64], query: &[f64], sharpness: f64) -> Result<Vec<f64>, String> {
    if bank.is_empty() || !bank.len().is_multiple_of(2) || query.len() != 2 {
        return Err("bank must hold 2-D points and the query must be 2-D".into());
    }
    let n = bank.len() / 2;
    let mut tape = Tape::new();
    let q = Tensor::new(&[1, 2], query.iter().map(|v| v * sharpness).collect()).map_err(|e| e.to_string())?;
    let m = Tensor::new(&[n, 2], bank.to_vec()).map_err(|e| e.to_string())?;
    let q = tape.constant(q);
    let m = tape.constant(m);
    let (e, w) = scaled_dot_attention(&mut tape, q, m, m, None).map_err(|e| e.to_string())?;
    let mut out = tape.value(w).data().to_vec();
    out.extend_from_slice(tape.value(e).data());
    Ok(out)
}

/// Row-major `[length, d_model]` sinusoidal table.
#[wasm_bindgen]
pub fn positional_table(length: usize, d_model: usize) -> Vec<f64> {
    if length == 0 || d_model == 0 {
        return Vec::new();
    }
    positional_encoding(length, d_model).into_data()
}

/// Length-penalized scores `logp / ((5 + len) / 6)^alpha` for each
/// (log-probability, length) pair.
#[wasm_bindgen]
pub fn penalized_scores(logp_sums: &[f64], lengths: &[u32], alpha: f64) -> Result<Vec<f64>, String> {
    if logp_sums.len() != lengths.len() {
        return Err("one length per hypothesis".into());
    }
    Ok(logp_sums.iter().zip(lengths).map(|(l, &n)| l / length_penalty(n as usize, alpha)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_weights_form_a_convex_combination() {
        let bank = [1.0, 0.0, 0.0, 1.0, -1.0, -1.0];
        let out = speaker_attention(&bank, &[0.8, 0.3], 2.0).unwrap();
        let (w, e) = out.split_at(3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for d in 0..2 {
            let hull: f64 = (0..3).map(|i| w[i] * bank[2 * i + d]).sum();
            assert!((hull - e[d]).abs() < 1e-12);
        }
        assert!(w[0] > w[1] && w[1] > w[2]);
        let flat = speaker_attention(&bank, &[0.8, 0.3], 0.0).unwrap();
        assert!(flat[..3].iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(speaker_attention(&bank[..3], &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn table_and_scores() {
        let t = positional_table(2, 4);
        assert_eq!(t.len(), 8);
        assert_eq!(&t[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!(positional_table(0, 4).is_empty());
        let s = penalized_scores(&[-1.0, -1.2], &[1, 7], 0.6).unwrap();
        assert_eq!(s[0], -1.0);
        assert!(s[1] > s[0]);
        assert!(penalized_scores(&[-1.0], &[], 0.6).is_err());
    }
}
