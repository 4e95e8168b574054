use std::collections::BTreeMap;

use super::Utterance;
use crate::error::{contract_err, Result};
use crate::numerics::Tensor;

pub const NORM_EPS: f64 = 1e-8;

/// Appends the `left` preceding frames to each frame (frame 0 stands in
/// for frames before the start), then keeps every `factor`-th stacked
/// frame starting at 0. Output is `[ceil(T/factor), (left+1)*F]` with the
/// oldest frame first in each row.
pub fn stack_and_downsample(frames: &Tensor, left: usize, factor: usize) -> Result<Tensor> {
    if frames.shape().len() != 2 {
        return Err(contract_err!("stacking needs a [T, F] matrix, got {:?}", frames.shape()));
    }
    if factor == 0 {
        return Err(contract_err!("downsampling factor must be at least 1"));
    }
    let (t, f) = (frames.rows(), frames.cols());
    let kept: Vec<usize> = (0..t).step_by(factor).collect();
    let mut out = Vec::with_capacity(kept.len() * (left + 1) * f);
    for &i in &kept {
        for back in (0..=left).rev() {
            out.extend_from_slice(frames.row(i.saturating_sub(back)));
        }
    }
    Tensor::new(&[kept.len(), (left + 1) * f], out)
}

/// Per-speaker mean subtraction and variance normalization, with
/// statistics pooled over every frame of that speaker.
pub fn speaker_normalize(utts: &[Utterance]) -> Vec<Utterance> {
    let mut stats: BTreeMap<&str, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for u in utts {
        let f = u.frames.cols();
        let entry = stats.entry(&u.speaker_id).or_insert_with(|| (0, vec![0.0; f], vec![0.0; f]));
        for r in 0..u.frames.rows() {
            entry.0 += 1;
            for (s, v) in entry.1.iter_mut().zip(u.frames.row(r)) {
                *s += v;
            }
        }
    }
    for u in utts {
        let entry = stats.get_mut(u.speaker_id.as_str()).unwrap();
        let n = entry.0 as f64;
        for r in 0..u.frames.rows() {
            for (j, v) in u.frames.row(r).iter().enumerate() {
                let d = v - entry.1[j] / n;
                entry.2[j] += d * d;
            }
        }
    }
    utts.iter()
        .map(|u| {
            let (n, sum, sq) = &stats[u.speaker_id.as_str()];
            let n = *n as f64;
            let f = u.frames.cols();
            let mut out = u.clone();
            for (k, v) in out.frames.data_mut().iter_mut().enumerate() {
                let j = k % f;
                *v = (*v - sum[j] / n) / (sq[j] / n + NORM_EPS).sqrt();
            }
            out
        })
        .collect()
}
