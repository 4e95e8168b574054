//! Decode files: `<utt_id>\t<tokens>` per line, and an n-best variant
//! `<utt_id>\t<rank>\t<score>\t<tokens>`.

use crate::error::{Error, Result};

fn join(tokens: &[usize]) -> String {
    tokens.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

pub fn format_decodes<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [usize])>) -> String {
    rows.into_iter().map(|(id, toks)| format!("{id}\t{}\n", join(toks))).collect()
}

pub fn format_nbest<'a>(rows: impl IntoIterator<Item = (&'a str, Vec<(f64, &'a [usize])>)>) -> String {
    let mut s = String::new();
    for (id, list) in rows {
        for (rank, (score, toks)) in list.into_iter().enumerate() {
            s.push_str(&format!("{id}\t{}\t{score:?}\t{}\n", rank + 1, join(toks)));
        }
    }
    s
}

pub fn parse_decodes(text: &str) -> Result<Vec<(String, Vec<usize>)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::Format(format!("decode line {}: expected `<utt_id>\\t<tokens>`", i + 1));
            let (id, toks) = line.split_once('\t').ok_or_else(bad)?;
            let toks = toks.split_whitespace().map(|t| t.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
            Ok((id.to_string(), toks))
        })
        .collect()
}
