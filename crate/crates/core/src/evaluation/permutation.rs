use serde::Serialize;

use crate::error::{Error, Result};
use crate::selection::SelectionResult;

/// Largest class count handled by exhaustive permutation search (8! = 40320).
pub const MAX_CLASSES: usize = 8;

/// Rearranges `perm` into the next permutation in lexicographic order.
/// Returns `false` (leaving `perm` untouched) after the last one.
pub fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Maximizes `Σ_p score[p][σ(p)]` over all permutations of `0..q` by exhaustive
/// search. `score` is row-major `q × q`. Ties resolve to the lexicographically
/// smallest `σ`.
pub fn best_assignment(score: &[f64], q: usize) -> Result<(Vec<usize>, f64)> {
    if q > MAX_CLASSES {
        return Err(Error::TooManyClasses(q));
    }
    debug_assert_eq!(score.len(), q * q);
    let mut perm: Vec<usize> = (0..q).collect();
    let value = |p: &[usize]| p.iter().enumerate().map(|(r, &c)| score[r * q + c]).sum::<f64>();
    let mut best = perm.clone();
    let mut best_value = value(&perm);
    while next_permutation(&mut perm) {
        let v = value(&perm);
        if v > best_value {
            best_value = v;
            best.copy_from_slice(&perm);
        }
    }
    Ok((best, best_value))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FcrReport {
    pub sample_fcr: f64,
    pub selection_frequency: f64,
    /// `best_perm[p]` is the true class matched to predicted class `p`.
    pub best_perm: Vec<usize>,
    pub n_selected: usize,
    pub n_errors_at_best_perm: usize,
}

fn check_labels(labels: &[usize], q: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= q) {
        Some(&label) => Err(Error::LabelOutOfRange { label, q }),
        None => Ok(()),
    }
}

/// Permutation `σ` minimizing `Σ_{i∈S} 1{Z_i ≠ σ(Ẑ_i)}` and the minimal count.
pub fn best_permutation(
    true_labels: &[usize],
    pred_labels: &[usize],
    selected: &[usize],
    q: usize,
) -> Result<(Vec<usize>, usize)> {
    if q > MAX_CLASSES {
        return Err(Error::TooManyClasses(q));
    }
    if true_labels.len() != pred_labels.len() {
        return Err(Error::DimensionMismatch { expected: true_labels.len(), got: pred_labels.len() });
    }
    check_labels(true_labels, q)?;
    check_labels(pred_labels, q)?;
    let mut confusion = vec![0.0; q * q];
    for &i in selected {
        if i >= true_labels.len() {
            return Err(Error::DimensionMismatch { expected: true_labels.len(), got: i + 1 });
        }
        confusion[pred_labels[i] * q + true_labels[i]] += 1.0;
    }
    let (perm, agreements) = best_assignment(&confusion, q)?;
    Ok((perm, selected.len() - agreements.round() as usize))
}

/// Realized false clustering proportion on the selection, minimized over label
/// permutations, with the `max(|S|, 1)` denominator.
pub fn sample_fcr(true_labels: &[usize], pred_labels: &[usize], selected: &[usize], q: usize) -> Result<FcrReport> {
    let (best_perm, errors) = best_permutation(true_labels, pred_labels, selected, q)?;
    let n = true_labels.len();
    Ok(FcrReport {
        sample_fcr: errors as f64 / selected.len().max(1) as f64,
        selection_frequency: if n == 0 { 0.0 } else { selected.len() as f64 / n as f64 },
        best_perm,
        n_selected: selected.len(),
        n_errors_at_best_perm: errors,
    })
}

pub fn score_selection(
    true_labels: &[usize],
    pred_labels: &[usize],
    selection: &SelectionResult,
    q: usize,
) -> Result<FcrReport> {
    sample_fcr(true_labels, pred_labels, &selection.selected, q)
}
