//! Abstention rules.
//!
//! Both rules act on the per-item risk statistics `T_i`. The fixed rule keeps
//! every item with `T_i <= alpha`. The cumulative rule sorts the `T_i` and keeps
//! the longest prefix whose running mean stays at or below `alpha`, which is the
//! largest selection whose average posterior misclassification probability is
//! controlled.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{map_labels, PosteriorMatrix};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionResult {
    /// Selected item indices, ascending.
    pub selected: Vec<usize>,
    pub k_star: usize,
    /// Realized threshold: items with `T_i < threshold` are selected (for the
    /// cumulative rule with distinct values).
    pub threshold: f64,
    /// Mean of `T_i` over the selection, `0` when nothing is selected.
    pub achieved_bound: f64,
}

impl SelectionResult {
    pub fn is_selected_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.selected {
            mask[i] = true;
        }
        mask
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Cumulative,
    Fixed,
}

/// A labelling together with the subset of items the labels are reported for.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectiveClustering {
    /// MAP labels, 0-based, for every item (selected or not).
    pub labels: Vec<usize>,
    pub selection: SelectionResult,
    pub alpha: f64,
}

impl SelectiveClustering {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn selection_frequency(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.selection.k_star as f64 / self.labels.len() as f64
        }
    }

    /// CSV with columns `item_index, map_label, selected, t_value`.
    /// Item indices and labels are 1-based.
    pub fn write_csv<W: std::io::Write>(&self, t_values: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["item_index", "map_label", "selected", "t_value"])?;
        let mask = self.selection.is_selected_mask(self.labels.len());
        for (i, (&label, &t)) in self.labels.iter().zip(t_values).enumerate() {
            w.write_record([
                (i + 1).to_string(),
                (label + 1).to_string(),
                u8::from(mask[i]).to_string(),
                t.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<selection csv>", e))
    }
}

fn check_inputs(t_values: &[f64], alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidLevel(alpha));
    }
    if let Some(t) = t_values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidParams(format!("risk statistic {t} outside [0, 1]")));
    }
    Ok(())
}

/// Items sorted by `T` (ties by index) with running sums, so that the
/// cumulative rule can be evaluated at many levels after one sort.
#[derive(Clone, Debug)]
pub struct CumulativeOrder {
    order: Vec<usize>,
    sorted: Vec<f64>,
    /// `prefix[k]` is the sum of the `k` smallest values.
    prefix: Vec<f64>,
}

impl CumulativeOrder {
    pub fn new(t_values: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..t_values.len()).collect();
        order.sort_by(|&a, &b| t_values[a].total_cmp(&t_values[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| t_values[i]).collect();
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &t in &sorted {
            acc += t;
            prefix.push(acc);
        }
        Self { order, sorted, prefix }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Item indices in increasing order of `T`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    /// Largest `k` with `prefix[k] / max(k, 1) <= alpha`.
    pub fn k_star(&self, alpha: f64) -> usize {
        // Prefix means of a sorted sequence are non-decreasing, so the
        // admissible k form an initial segment; binary search its end.
        let admissible = |k: usize| self.prefix[k] / k.max(1) as f64 <= alpha;
        let (mut lo, mut hi) = (0, self.n());
        if admissible(hi) {
            return hi;
        }
        // invariant: admissible(lo) and !admissible(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if admissible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Items at or below alpha always form an admissible prefix; guard the
        // rounding of long running sums so the fixed rule stays dominated.
        lo.max(self.sorted.partition_point(|&t| t <= alpha))
    }

    pub fn select(&self, alpha: f64) -> SelectionResult {
        let n = self.n();
        let k = self.k_star(alpha);
        let mut selected = self.order[..k].to_vec();
        selected.sort_unstable();
        let threshold = if k < n { self.sorted[k] } else { 1.0 };
        let achieved_bound = self.prefix[k] / k.max(1) as f64;
        SelectionResult { selected, k_star: k, threshold, achieved_bound }
    }
}

/// Largest prefix of the sorted `T` values whose mean is at most `alpha`.
pub fn cumulative_select(t_values: &[f64], alpha: f64) -> Result<SelectionResult> {
    check_inputs(t_values, alpha)?;
    Ok(CumulativeOrder::new(t_values).select(alpha))
}

/// Every item with `T_i <= alpha`.
pub fn fixed_threshold_select(t_values: &[f64], alpha: f64) -> Result<SelectionResult> {
    check_inputs(t_values, alpha)?;
    let selected: Vec<usize> = (0..t_values.len()).filter(|&i| t_values[i] <= alpha).collect();
    let k = selected.len();
    let sum: f64 = selected.iter().map(|&i| t_values[i]).sum();
    Ok(SelectionResult { selected, k_star: k, threshold: alpha, achieved_bound: sum / k.max(1) as f64 })
}

pub fn select(t_values: &[f64], alpha: f64, rule: SelectionRule) -> Result<SelectionResult> {
    match rule {
        SelectionRule::Cumulative => cumulative_select(t_values, alpha),
        SelectionRule::Fixed => fixed_threshold_select(t_values, alpha),
    }
}

/// MAP labels plus the chosen abstention rule applied to the posterior's `T` values.
pub fn select_and_label(post: &PosteriorMatrix, alpha: f64, rule: SelectionRule) -> Result<SelectiveClustering> {
    let selection = select(post.t_values(), alpha, rule)?;
    Ok(SelectiveClustering { labels: map_labels(post), selection, alpha })
}

/// MAP labels with nothing selected.
pub fn abstain_all(post: &PosteriorMatrix, alpha: f64) -> SelectiveClustering {
    let threshold = post.t_values().iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    SelectiveClustering {
        labels: map_labels(post),
        selection: SelectionResult { selected: Vec::new(), k_star: 0, threshold, achieved_bound: 0.0 },
        alpha,
    }
}
