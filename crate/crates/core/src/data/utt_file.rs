//! Line-oriented utterance files.
//!
//! ```text
//! #utts v1 dim=<F>
//! <utt_id> <speaker_id> <attr> <T> <token> <token> ...
//! <F values of frame 0>
//! ...
//! <F values of frame T-1>
//! ```

use std::fmt::Write as _;

use super::Utterance;
use crate::error::{dim_err, Error, Result};
use crate::numerics::Tensor;

pub fn write_utterances(utts: &[Utterance], dim: usize) -> Result<String> {
    let mut s = format!("#utts v1 dim={dim}\n");
    for u in utts {
        u.validate()?;
        if u.frames.cols() != dim {
            return Err(dim_err!("utterance `{}` has {} features, file has {dim}", u.utt_id, u.frames.cols()));
        }
        write!(s, "{} {} {} {}", u.utt_id, u.speaker_id, u.attribute, u.num_frames()).unwrap();
        for t in &u.tokens {
            write!(s, " {t}").unwrap();
        }
        s.push('\n');
        for r in 0..u.num_frames() {
            let row: Vec<String> = u.frames.row(r).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
    }
    Ok(s)
}

/// Returns the feature dimension and the records.
pub fn parse_utterances(text: &str) -> Result<(usize, Vec<Utterance>)> {
    let fmt = |line: usize, msg: &str| Error::Format(format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| fmt(1, "empty utterance file"))?;
    let dim: usize = header
        .strip_prefix("#utts v1 dim=")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| fmt(1, "expected `#utts v1 dim=<F>` header"))?;
    let mut utts = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(fmt(lineno, "record needs `<utt_id> <speaker_id> <attr> <T>`"));
        }
        let attribute: u8 = fields[2].parse().map_err(|_| fmt(lineno, "bad attribute"))?;
        let t: usize = fields[3].parse().map_err(|_| fmt(lineno, "bad frame count"))?;
        if t == 0 {
            return Err(fmt(lineno, "utterance has no frames"));
        }
        let tokens = fields[4..]
            .iter()
            .map(|f| f.parse().map_err(|_| fmt(lineno, "bad token id")))
            .collect::<Result<Vec<usize>>>()?;
        let mut data = Vec::with_capacity(t * dim);
        for _ in 0..t {
            let (ln, row) = lines.next().ok_or_else(|| fmt(lineno, "file ends inside an utterance"))?;
            let before = data.len();
            for v in row.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| fmt(ln, "bad feature value"))?);
            }
            if data.len() - before != dim {
                return Err(dim_err!("line {ln}: frame has {} values, header says {dim}", data.len() - before));
            }
        }
        let u = Utterance {
            utt_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            attribute,
            frames: Tensor::new(&[t, dim], data)?,
            tokens,
        };
        u.validate()?;
        utts.push(u);
    }
    Ok((dim, utts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Utterance> {
        vec![
            Utterance {
                utt_id: "u1".into(),
                speaker_id: "spk001".into(),
                attribute: 1,
                frames: Tensor::new(&[2, 3], vec![0.1, -2.5, 1e-12, 3.0, 4.25, -0.0]).unwrap(),
                tokens: vec![4, 9, 5],
            },
            Utterance {
                utt_id: "u2".into(),
                speaker_id: "spk002".into(),
                attribute: 0,
                frames: Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap(),
                tokens: vec![],
            },
        ]
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let text = write_utterances(&sample(), 3).unwrap();
        assert!(text.starts_with("#utts v1 dim=3\nu1 spk001 1 2 4 9 5\n"));
        let (dim, back) = parse_utterances(&text).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(back, sample());
        assert_eq!(write_utterances(&back, 3).unwrap(), text);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse_utterances("").is_err());
        assert!(parse_utterances("#utts v1 dim=2\nu s 0 2 4\n1 2\n").is_err());
        assert!(matches!(parse_utterances("#utts v1 dim=2\nu s 0 1 4\n1 2 3\n"), Err(Error::Dimension(_))));
        assert!(matches!(parse_utterances("#utts v1 dim=1\nu s 0 1 0\n1\n"), Err(Error::Contract(_))));
        assert!(parse_utterances("#utts v1 dim=1\nu s 0 1 4\nnan\n").is_err());
        let mut bad = sample();
        bad[0].tokens.push(0);
        assert!(write_utterances(&bad, 3).is_err());
        assert!(write_utterances(&sample(), 4).is_err());
    }
}
