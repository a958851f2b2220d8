//! One-to-one point matching within a radius.
//!
//! The assignment maximizes the number of matched pairs and, among those,
//! minimizes the summed distance. The candidate graph is split into
//! connected components first, so each Hungarian solve only sees points
//! that can actually compete with each other.

use std::collections::HashMap;

use crate::model::{DetectionRecord, LabelRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    pub prediction: usize,
    pub label: usize,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// Sorted by `(label, prediction)`.
    pub pairs: Vec<MatchPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_labels: Vec<usize>,
}

impl MatchResult {
    pub fn total_distance_m(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance_m).sum()
    }
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is `rows x cols` with `rows <= cols`. Returns the column chosen
/// for each row. O(rows² · cols).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols, got {n}x{m}");
    // 1-based potentials; p[j] is the row assigned to column j (0 = none)
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Prediction ids, label ids and candidate edges of one connected group.
type Component = (Vec<usize>, Vec<usize>, Vec<(usize, usize, f64)>);

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Match points given in pixel coordinates. Distances are converted to
/// meters with `pixel_spacing_m`; pairs farther apart than `radius_m`
/// are never matched.
pub fn match_points(
    predictions: &[(f64, f64)],
    labels: &[(f64, f64)],
    pixel_spacing_m: f64,
    radius_m: f64,
) -> MatchResult {
    let np = predictions.len();
    let nl = labels.len();
    let radius_px = radius_m / pixel_spacing_m;

    // candidate edges through a uniform grid over the labels
    let cell = radius_px.max(1e-9);
    let key = |(r, c): (f64, f64)| ((r / cell).floor() as i64, (c / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (li, &pt) in labels.iter().enumerate() {
        grid.entry(key(pt)).or_default().push(li);
    }
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, &pt) in predictions.iter().enumerate() {
        let (gr, gc) = key(pt);
        for r in gr - 1..=gr + 1 {
            for c in gc - 1..=gc + 1 {
                if let Some(ids) = grid.get(&(r, c)) {
                    for &li in ids {
                        let (lr, lc) = labels[li];
                        let d = (pt.0 - lr).hypot(pt.1 - lc) * pixel_spacing_m;
                        if d <= radius_m {
                            edges.push((pi, li, d));
                        }
                    }
                }
            }
        }
    }

    // components over nodes [0, np) predictions and [np, np + nl) labels
    let mut parent: Vec<usize> = (0..np + nl).collect();
    for &(pi, li, _) in &edges {
        let a = find(&mut parent, pi);
        let b = find(&mut parent, np + li);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut components: HashMap<usize, Component> = HashMap::new();
    for &(pi, li, d) in &edges {
        let root = find(&mut parent, pi);
        components.entry(root).or_default().2.push((pi, li, d));
    }
    for comp in components.values_mut() {
        comp.0 = comp.2.iter().map(|e| e.0).collect();
        comp.1 = comp.2.iter().map(|e| e.1).collect();
        comp.0.sort_unstable();
        comp.0.dedup();
        comp.1.sort_unstable();
        comp.1.dedup();
    }
    let mut roots: Vec<usize> = components.keys().copied().collect();
    roots.sort_unstable();

    let mut pairs = Vec::new();
    for root in roots {
        let (preds, labs, comp_edges) = &components[&root];
        let k = preds.len().min(labs.len());
        let forbidden = (k as f64 + 1.0) * radius_m + 1.0;
        let p_index: HashMap<usize, usize> = preds.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let l_index: HashMap<usize, usize> = labs.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut dist = vec![vec![None; labs.len()]; preds.len()];
        for &(pi, li, d) in comp_edges {
            dist[p_index[&pi]][l_index[&li]] = Some(d);
        }
        let rows_are_preds = preds.len() <= labs.len();
        let (nr, nc) = if rows_are_preds {
            (preds.len(), labs.len())
        } else {
            (labs.len(), preds.len())
        };
        let cell_at = |r: usize, c: usize| if rows_are_preds { dist[r][c] } else { dist[c][r] };
        let cost: Vec<Vec<f64>> = (0..nr)
            .map(|r| (0..nc).map(|c| cell_at(r, c).unwrap_or(forbidden)).collect())
            .collect();
        for (r, c) in hungarian(&cost).into_iter().enumerate() {
            if let Some(d) = cell_at(r, c) {
                let (pi, li) = if rows_are_preds {
                    (preds[r], labs[c])
                } else {
                    (preds[c], labs[r])
                };
                pairs.push(MatchPair {
                    prediction: pi,
                    label: li,
                    distance_m: d,
                });
            }
        }
    }
    pairs.sort_by_key(|p| (p.label, p.prediction));

    let mut pred_used = vec![false; np];
    let mut label_used = vec![false; nl];
    for p in &pairs {
        pred_used[p.prediction] = true;
        label_used[p.label] = true;
    }
    MatchResult {
        pairs,
        unmatched_predictions: (0..np).filter(|&i| !pred_used[i]).collect(),
        unmatched_labels: (0..nl).filter(|&i| !label_used[i]).collect(),
    }
}

/// Match predictions to labels of one scene.
pub fn match_detections(
    predictions: &[DetectionRecord],
    labels: &[LabelRecord],
    pixel_spacing_m: f64,
    radius_m: f64,
) -> MatchResult {
    let p: Vec<(f64, f64)> = predictions.iter().map(|d| (d.row, d.col)).collect();
    let l: Vec<(f64, f64)> = labels.iter().map(|l| (l.row as f64, l.col as f64)).collect();
    match_points(&p, &l, pixel_spacing_m, radius_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Search<'a> {
        p: &'a [(f64, f64)],
        l: &'a [(f64, f64)],
        spacing: f64,
        radius: f64,
        used: Vec<bool>,
        best: (usize, f64),
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, count: usize, dist: f64) {
            if i == self.p.len() {
                if count > self.best.0 || (count == self.best.0 && dist < self.best.1) {
                    self.best = (count, dist);
                }
                return;
            }
            self.go(i + 1, count, dist);
            for j in 0..self.l.len() {
                if self.used[j] {
                    continue;
                }
                let (a, b) = (self.p[i], self.l[j]);
                let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() * self.spacing;
                if d <= self.radius {
                    self.used[j] = true;
                    self.go(i + 1, count + 1, dist + d);
                    self.used[j] = false;
                }
            }
        }
    }

    /// Exhaustive oracle: best (pair count, total distance) over every
    /// partial injection from predictions to labels.
    fn brute_force(p: &[(f64, f64)], l: &[(f64, f64)], spacing: f64, radius: f64) -> (usize, f64) {
        let mut s = Search {
            p,
            l,
            spacing,
            radius,
            used: vec![false; l.len()],
            best: (0, 0.0),
        };
        s.go(0, 0, 0.0);
        s.best
    }

    #[test]
    fn no_predictions_leaves_labels_unmatched() {
        let m = match_points(&[], &[(1.0, 1.0), (5.0, 5.0), (9.0, 9.0)], 10.0, 200.0);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_labels, vec![0, 1, 2]);
    }

    #[test]
    fn coincident_point_matches_at_zero() {
        let m = match_points(&[(3.0, 4.0)], &[(3.0, 4.0)], 10.0, 200.0);
        assert_eq!(
            m.pairs,
            vec![MatchPair {
                prediction: 0,
                label: 0,
                distance_m: 0.0
            }]
        );
    }

    #[test]
    fn out_of_radius_is_unmatched() {
        let m = match_points(&[(0.0, 0.0)], &[(0.0, 21.0)], 10.0, 200.0);
        assert!(m.pairs.is_empty());
        let m = match_points(&[(0.0, 0.0)], &[(0.0, 20.0)], 10.0, 200.0);
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn crossing_configuration_prefers_global_optimum() {
        // greedy nearest-first would pair (0,a) and leave b stranded
        let preds = [(0.0, 0.0), (0.0, 10.0), (10.0, 0.0), (10.0, 10.0)];
        let labels = [(0.0, 5.0), (0.0, 14.5), (10.0, 5.0), (10.0, -4.5)];
        let m = match_points(&preds, &labels, 10.0, 100.0);
        let (count, dist) = brute_force(&preds, &labels, 10.0, 100.0);
        assert_eq!(m.pairs.len(), count);
        assert!((m.total_distance_m() - dist).abs() < 1e-9);
        assert_eq!(count, 4);
    }

    #[test]
    fn cardinality_beats_distance() {
        // one prediction sits between two labels; the other can only reach label 1
        let preds = [(0.0, 5.0), (0.0, 14.0)];
        let labels = [(0.0, 0.0), (0.0, 6.0)];
        let m = match_points(&preds, &labels, 1.0, 9.0);
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(
            m.pairs[0],
            MatchPair {
                prediction: 0,
                label: 0,
                distance_m: 5.0
            }
        );
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let np = rng.random_range(0..=6);
            let nl = rng.random_range(0..=6);
            let p: Vec<_> = (0..np)
                .map(|_| (rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)))
                .collect();
            let l: Vec<_> = (0..nl)
                .map(|_| (rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)))
                .collect();
            let radius = rng.random_range(10.0..200.0);
            let m = match_points(&p, &l, 10.0, radius);
            let (count, dist) = brute_force(&p, &l, 10.0, radius);
            assert_eq!(m.pairs.len(), count);
            assert!((m.total_distance_m() - dist).abs() < 1e-6);
            assert_eq!(m.pairs.len() + m.unmatched_predictions.len(), np);
            assert_eq!(m.pairs.len() + m.unmatched_labels.len(), nl);
        }
    }

    #[test]
    fn hungarian_square_and_rectangular() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        assert_eq!(total, 5.0);
        let rect = vec![vec![10.0, 1.0, 7.0, 3.0]];
        assert_eq!(hungarian(&rect), vec![1]);
    }
}
