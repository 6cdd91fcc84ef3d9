//! Optimal one-to-one matching and average precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major cost matrix. `f64::INFINITY` marks a forbidden pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("cost matrix rows have different lengths"));
        }
        Ok(CostMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn transposed(&self) -> CostMatrix {
        CostMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// (row, col) pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Minimum-cost one-to-one assignment.
///
/// Among assignments using only finite entries, the result has the largest
/// possible number of pairs and, among those, the smallest total cost.
/// Rows or columns that cannot be paired are left out.
pub fn hungarian_min_cost(m: &CostMatrix) -> Result<Assignment> {
    if m.data.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::precondition("costs must be non-negative (or +inf)"));
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(Assignment::default());
    }

    let finite_sum: f64 = m.data.iter().filter(|v| v.is_finite()).sum();
    let any_inf = m.data.iter().any(|v| v.is_infinite());
    // A forbidden pair costs more than every feasible pair together, so the
    // solver first maximizes the number of feasible pairs.
    let big = 2.0 * finite_sum + 1.0;
    let work = if any_inf {
        CostMatrix {
            data: m.data.iter().map(|&v| if v.is_finite() { v } else { big }).collect(),
            ..m.clone()
        }
    } else {
        m.clone()
    };

    let raw = if work.rows <= work.cols {
        solve_rect(&work).into_iter().enumerate().collect::<Vec<_>>()
    } else {
        let t = work.transposed();
        let mut pairs: Vec<_> = solve_rect(&t).into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        pairs
    };

    let pairs: Vec<_> = raw.into_iter().filter(|&(i, j)| m.get(i, j).is_finite()).collect();
    let cost = pairs.iter().map(|&(i, j)| m.get(i, j)).sum();
    Ok(Assignment { pairs, cost })
}

/// Shortest augmenting path Hungarian method for rows <= cols, all entries
/// finite. Returns the column assigned to each row.
fn solve_rect(m: &CostMatrix) -> Vec<usize> {
    let (n, w) = (m.rows, m.cols);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; w + 1];
    // p[j] = row (1-based) matched to column j; 0 = free.
    let mut p = vec![0usize; w + 1];
    let mut way = vec![0usize; w + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; w + 1];
        let mut used = vec![false; w + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=w {
                if used[j] {
                    continue;
                }
                let cur = m.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=w {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=w {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Optimal matching restricted to finite entries, solved independently on
/// each connected component of the feasibility graph. Equivalent in total
/// cost and cardinality to [`hungarian_min_cost`] on the whole matrix, but
/// cheap when the matrix is sparse.
pub fn match_sparse(m: &CostMatrix) -> Vec<(usize, usize)> {
    let (rows, cols) = (m.rows, m.cols);
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut has_edge = vec![false; rows];
    for (i, edge) in has_edge.iter_mut().enumerate() {
        for j in 0..cols {
            if m.get(i, j).is_finite() {
                *edge = true;
                let (a, b) = (find(&mut parent, i), find(&mut parent, rows + j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    // Group rows and columns by component root, in index order.
    let mut comp_rows: Vec<Vec<usize>> = vec![Vec::new(); rows + cols];
    let mut comp_cols: Vec<Vec<usize>> = vec![Vec::new(); rows + cols];
    for i in (0..rows).filter(|&i| has_edge[i]) {
        let r = find(&mut parent, i);
        comp_rows[r].push(i);
    }
    for j in 0..cols {
        let r = find(&mut parent, rows + j);
        comp_cols[r].push(j);
    }

    let mut out = Vec::new();
    for (rs, cs) in comp_rows.iter().zip(&comp_cols) {
        if rs.is_empty() || cs.is_empty() {
            continue;
        }
        let sub = CostMatrix::from_fn(rs.len(), cs.len(), |a, b| m.get(rs[a], cs[b]));
        let solved = hungarian_min_cost(&sub).expect("sub-matrix of a validated matrix");
        out.extend(solved.pairs.into_iter().map(|(a, b)| (rs[a], cs[b])));
    }
    out.sort_unstable();
    out
}

/// Gated same-class matching: pairs of different class or with distance
/// above `threshold` are forbidden, the rest are matched optimally.
pub fn match_at_threshold(
    n_pred: usize,
    n_gt: usize,
    same_class: impl Fn(usize, usize) -> bool,
    distance: impl Fn(usize, usize) -> f64,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let cost = CostMatrix::from_fn(n_pred, n_gt, |i, j| {
        if !same_class(i, j) {
            return f64::INFINITY;
        }
        let d = distance(i, j);
        if d <= threshold {
            d
        } else {
            f64::INFINITY
        }
    });
    match_sparse(&cost)
}

/// Precision-recall integration rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoint,
    ElevenPoint,
    HundredOnePoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub confidence: f64,
    pub true_positive: bool,
}

impl Detection {
    pub fn new(confidence: f64, true_positive: bool) -> Self {
        Detection {
            confidence,
            true_positive,
        }
    }
}

/// Scored detections and the ground-truth count they are measured against.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApInput {
    detections: Vec<Detection>,
    num_ground_truth: usize,
}

impl ApInput {
    pub fn new(detections: Vec<Detection>, num_ground_truth: usize) -> Result<Self> {
        let tps = detections.iter().filter(|d| d.true_positive).count();
        if tps > num_ground_truth {
            return Err(Error::precondition(format!(
                "{tps} true positives exceed {num_ground_truth} ground-truth instances"
            )));
        }
        Ok(ApInput {
            detections,
            num_ground_truth,
        })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn num_ground_truth(&self) -> usize {
        self.num_ground_truth
    }

    pub fn extend(&mut self, other: ApInput) {
        self.detections.extend(other.detections);
        self.num_ground_truth += other.num_ground_truth;
    }
}

/// Average precision. Detections are ranked by confidence, ties keeping
/// list order. With no ground truth the result is 1.0 if there are also no
/// detections and 0.0 otherwise.
pub fn average_precision(input: &ApInput, interpolation: Interpolation) -> f64 {
    let n_gt = input.num_ground_truth;
    if n_gt == 0 {
        return if input.detections.is_empty() { 1.0 } else { 0.0 };
    }
    let mut ranked: Vec<&Detection> = input.detections.iter().collect();
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, d) in ranked.iter().enumerate() {
        if d.true_positive {
            tp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // Monotone envelope: precision at recall r is the best precision at any recall >= r.
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }

    match interpolation {
        Interpolation::AllPoint => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                if *r > prev_recall {
                    ap += (r - prev_recall) * p;
                    prev_recall = *r;
                }
            }
            ap
        }
        Interpolation::ElevenPoint => sampled_ap(&recall, &precision, 11),
        Interpolation::HundredOnePoint => sampled_ap(&recall, &precision, 101),
    }
}

fn sampled_ap(recall: &[f64], envelope: &[f64], samples: usize) -> f64 {
    let total: f64 = (0..samples)
        .map(|s| {
            let r = s as f64 / (samples - 1) as f64;
            // first ranked position reaching recall r carries the envelope max
            recall.iter().position(|&x| x >= r - 1e-12).map_or(0.0, |k| envelope[k])
        })
        .sum();
    total / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn costs(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian_min_cost(&costs(&[&[1.0, 2.0], &[2.0, 4.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.cost, 4.0);

        let a = hungarian_min_cost(&costs(&[&[0.0, 9.0], &[9.0, 0.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.cost, 0.0);

        let a = hungarian_min_cost(&costs(&[&[5.0, 2.0, 7.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.cost, 2.0);
    }

    #[test]
    fn hungarian_tall_matrix_and_ties() {
        let a = hungarian_min_cost(&costs(&[&[5.0], &[2.0], &[7.0]])).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        let a = hungarian_min_cost(&costs(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn infinite_rows_are_left_unassigned() {
        let inf = f64::INFINITY;
        let a = hungarian_min_cost(&costs(&[&[inf, inf], &[3.0, 1.0]])).unwrap();
        assert_eq!(a.pairs, vec![(1, 1)]);
        assert_eq!(a.cost, 1.0);
        // cardinality beats cost: (0,0)+(1,1) is the only full matching
        let a = hungarian_min_cost(&costs(&[&[2.0, 0.5], &[inf, 3.0]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!(hungarian_min_cost(&costs(&[&[-1.0]])).is_err());
        assert!(hungarian_min_cost(&CostMatrix::filled(0, 3, 0.0))
            .unwrap()
            .pairs
            .is_empty());
    }

    #[test]
    fn sparse_matching_agrees_with_dense() {
        let inf = f64::INFINITY;
        let m = costs(&[
            &[0.3, inf, inf, inf],
            &[0.1, 0.2, inf, inf],
            &[inf, inf, inf, 0.5],
            &[inf, inf, inf, 0.4],
        ]);
        let dense = hungarian_min_cost(&m).unwrap();
        let sparse = match_sparse(&m);
        assert_eq!(sparse.len(), dense.pairs.len());
        let cost: f64 = sparse.iter().map(|&(i, j)| m.get(i, j)).sum();
        assert!((cost - dense.cost).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        let one = ApInput::new(vec![Detection::new(0.9, true)], 1).unwrap();
        assert_eq!(average_precision(&one, Interpolation::AllPoint), 1.0);

        let mixed = ApInput::new(
            vec![
                Detection::new(0.9, true),
                Detection::new(0.8, false),
                Detection::new(0.7, true),
            ],
            2,
        )
        .unwrap();
        assert!((average_precision(&mixed, Interpolation::AllPoint) - 5.0 / 6.0).abs() < 1e-12);

        let partial = ApInput::new(
            (0..8).map(|i| Detection::new(1.0 - i as f64 * 0.01, true)).collect(),
            10,
        )
        .unwrap();
        assert!((average_precision(&partial, Interpolation::AllPoint) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ap_vacuous_cases() {
        assert_eq!(
            average_precision(&ApInput::new(vec![], 0).unwrap(), Interpolation::AllPoint),
            1.0
        );
        let fp = ApInput::new(vec![Detection::new(0.5, false)], 0).unwrap();
        assert_eq!(average_precision(&fp, Interpolation::AllPoint), 0.0);
        assert_eq!(
            average_precision(&ApInput::new(vec![], 3).unwrap(), Interpolation::AllPoint),
            0.0
        );
        assert!(ApInput::new(vec![Detection::new(0.5, true)], 0).is_err());
    }

    #[test]
    fn ap_ties_keep_list_order() {
        let a = ApInput::new(vec![Detection::new(0.5, false), Detection::new(0.5, true)], 1).unwrap();
        assert_eq!(average_precision(&a, Interpolation::AllPoint), 0.5);
    }

    #[test]
    fn sampled_interpolations() {
        let perfect = ApInput::new(vec![Detection::new(1.0, true)], 1).unwrap();
        assert_eq!(average_precision(&perfect, Interpolation::ElevenPoint), 1.0);
        assert_eq!(average_precision(&perfect, Interpolation::HundredOnePoint), 1.0);
        let half = ApInput::new(vec![Detection::new(1.0, true)], 2).unwrap();
        assert!((average_precision(&half, Interpolation::ElevenPoint) - 6.0 / 11.0).abs() < 1e-12);
        assert!((average_precision(&half, Interpolation::HundredOnePoint) - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn gated_matching_examples() {
        let m = match_at_threshold(1, 1, |_, _| true, |_, _| 2.5, 1.0);
        assert!(m.is_empty());
        let d = [0.4, 0.2];
        let m = match_at_threshold(2, 1, |_, _| true, |i, _| d[i], 0.5);
        assert_eq!(m, vec![(1, 0)]);
        let m = match_at_threshold(3, 3, |i, j| i == j, |i, j| if i == j { 0.0 } else { 0.1 }, 1.0);
        assert_eq!(m, vec![(0, 0), (1, 1), (2, 2)]);
    }
}
