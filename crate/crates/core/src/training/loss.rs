use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::float::Float;

/// Mean negative log-likelihood over masked rows of `logits`
/// (`targets.len() x vocab`), with its gradient w.r.t. the logits. Rows
/// outside the mask get exactly zero gradient.
pub fn next_token_loss<T: Float>(
    logits: &[T],
    vocab: usize,
    targets: &[TokenId],
    mask: &[bool],
) -> Result<(T, Vec<T>)> {
    let rows = targets.len();
    if mask.len() != rows || logits.len() < rows * vocab {
        return Err(Error::Invalid(format!(
            "loss shapes disagree: {} logits, {rows} targets, {} mask entries",
            logits.len() / vocab.max(1),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Invalid("no supervised positions".into()));
    }
    let inv = T::one() / T::of(count as f64);
    let mut grad = vec![T::zero(); rows * vocab];
    let mut total = T::zero();
    for (r, (&t, _)) in targets.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m) {
        let t = t as usize;
        if t >= vocab {
            return Err(Error::Invalid(format!("target {t} outside vocabulary")));
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[t];
        let g = &mut grad[r * vocab..(r + 1) * vocab];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp() * inv;
        }
        g[t] -= inv;
    }
    Ok((total * inv, grad))
}
