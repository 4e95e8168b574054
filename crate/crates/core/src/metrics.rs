//! Error rates and attention statistics.

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Total edit distance over total reference length.
pub fn token_error_rate<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> f64 {
    let (mut errs, mut len) = (0usize, 0usize);
    for (reference, hyp) in pairs {
        errs += edit_distance(reference, hyp);
        len += reference.len();
    }
    if len == 0 {
        return if errs == 0 { 0.0 } else { f64::INFINITY };
    }
    errs as f64 / len as f64
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}
