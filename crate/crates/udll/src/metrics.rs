//! Clustering accuracy under the optimal label matching.
//!
//! Predicted cluster ids carry no inherent names, so accuracy is computed
//! after finding the label permutation that maximizes agreement; the
//! matching is a minimum-cost assignment on the negated confusion matrix.

use crate::error::UdllError;
use crate::Result;

/// Integer labels in `0..class_count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    class_count: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(UdllError::Data(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(LabelVector {
            labels,
            class_count,
        })
    }

    /// Infers the class count as `max(label) + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let class_count = labels.iter().max().map_or(0, |&m| m + 1);
        LabelVector {
            labels,
            class_count,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `counts[a][b]` = number of samples predicted `a` with ground truth `b`.
/// Padded with zero rows/columns to a square of side
/// `max(pred classes, truth classes)`.
pub fn confusion_matrix(truth: &LabelVector, pred: &LabelVector) -> Result<Vec<Vec<usize>>> {
    if truth.len() != pred.len() {
        return Err(UdllError::Shape {
            op: "confusion_matrix",
            detail: format!("{} truth labels vs {} predictions", truth.len(), pred.len()),
        });
    }
    let side = truth.class_count.max(pred.class_count).max(1);
    let mut counts = vec![vec![0usize; side]; side];
    for (&t, &p) in truth.labels.iter().zip(pred.labels.iter()) {
        counts[p][t] += 1;
    }
    Ok(counts)
}

/// Minimum-cost assignment on a square cost matrix (Kuhn-Munkres family,
/// shortest augmenting paths with potentials). Returns `perm` with row `r`
/// assigned to column `perm[r]`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    for row in cost {
        if row.len() != n {
            return Err(UdllError::Shape {
                op: "hungarian",
                detail: format!(
                    "matrix must be square, row has {} of {n} entries",
                    row.len()
                ),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(UdllError::NonFinite("hungarian cost matrix".into()));
        }
    }
    // 1-based arrays; p[j] is the row matched to column j, p[0] the row
    // currently being placed
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
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
            for j in 0..=n {
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
        // unwind the augmenting path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    Ok(perm)
}

/// Accuracy plus the optimal predicted-to-truth label mapping.
#[derive(Clone, Debug)]
pub struct AccuracyReport {
    pub acc: f64,
    /// `mapping[a]` is the ground-truth class matched to predicted label `a`.
    pub mapping: Vec<usize>,
}

/// Fraction of samples whose optimally remapped prediction matches the truth.
pub fn clustering_accuracy(truth: &LabelVector, pred: &LabelVector) -> Result<AccuracyReport> {
    let counts = confusion_matrix(truth, pred)?;
    let n = truth.len();
    if n == 0 {
        return Err(UdllError::Data("cannot score an empty labeling".into()));
    }
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let mapping = hungarian(&cost)?;
    let matched: usize = mapping.iter().enumerate().map(|(a, &b)| counts[a][b]).sum();
    Ok(AccuracyReport {
        acc: matched as f64 / n as f64,
        mapping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_permutations(k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..k).collect();
        fn heap(n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if n <= 1 {
                out.push(cur.clone());
                return;
            }
            for i in 0..n {
                heap(n - 1, cur, out);
                if n % 2 == 0 {
                    cur.swap(i, n - 1);
                } else {
                    cur.swap(0, n - 1);
                }
            }
        }
        heap(k, &mut cur, &mut out);
        out
    }

    fn brute_force_acc(truth: &LabelVector, pred: &LabelVector) -> f64 {
        let k = truth.class_count().max(pred.class_count());
        let mut best = 0usize;
        for perm in all_permutations(k) {
            let matched = truth
                .labels()
                .iter()
                .zip(pred.labels())
                .filter(|&(&t, &p)| perm[p] == t)
                .count();
            best = best.max(matched);
        }
        best as f64 / truth.len() as f64
    }

    #[test]
    fn label_vector_validates_range() {
        assert!(LabelVector::new(vec![0, 1, 2], 3).is_ok());
        assert!(LabelVector::new(vec![0, 3], 3).is_err());
    }

    #[test]
    fn confusion_diagonal_for_perfect_prediction() {
        let t = LabelVector::from_labels(vec![0, 0, 1, 2, 2, 2]);
        let c = confusion_matrix(&t, &t).unwrap();
        assert_eq!(c[0][0], 2);
        assert_eq!(c[1][1], 1);
        assert_eq!(c[2][2], 3);
        assert_eq!(c[0][1] + c[0][2] + c[1][0] + c[1][2] + c[2][0] + c[2][1], 0);
    }

    #[test]
    fn confusion_single_sample() {
        let t = LabelVector::new(vec![1], 3).unwrap();
        let p = LabelVector::new(vec![2], 3).unwrap();
        let c = confusion_matrix(&t, &p).unwrap();
        let total: usize = c.iter().flatten().sum();
        assert_eq!(total, 1);
        assert_eq!(c[2][1], 1);
    }

    #[test]
    fn confusion_matches_per_sample_loop() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<usize> = (0..40).map(|_| r.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..40).map(|_| r.gen_range(0..4)).collect();
        let t = LabelVector::new(truth.clone(), 4).unwrap();
        let p = LabelVector::new(pred.clone(), 4).unwrap();
        let c = confusion_matrix(&t, &p).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let count = truth
                    .iter()
                    .zip(&pred)
                    .filter(|&(&tb, &pa)| pa == a && tb == b)
                    .count();
                assert_eq!(c[a][b], count);
            }
        }
    }

    #[test]
    fn confusion_length_mismatch_rejected() {
        let t = LabelVector::from_labels(vec![0, 1]);
        let p = LabelVector::from_labels(vec![0]);
        assert!(confusion_matrix(&t, &p).is_err());
    }

    #[test]
    fn hungarian_identity_and_swap() {
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1]);
        let cost = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        assert_eq!(hungarian(&cost).unwrap(), vec![1, 0]);
    }

    #[test]
    fn hungarian_rejects_non_finite() {
        let cost = vec![vec![0.0, f64::NAN], vec![1.0, 0.0]];
        assert!(hungarian(&cost).is_err());
    }

    #[test]
    fn hungarian_matches_exhaustive_search() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let k = r.gen_range(2..=6);
            let cost: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| r.gen_range(-5.0..5.0)).collect())
                .collect();
            let perm = hungarian(&cost).unwrap();
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            let mut best = f64::INFINITY;
            for p in all_permutations(k) {
                let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                best = best.min(c);
            }
            assert!(
                (total - best).abs() < 1e-9,
                "got {total}, brute force {best}"
            );
        }
    }

    #[test]
    fn accuracy_absorbs_pure_relabeling() {
        let t = LabelVector::from_labels(vec![0, 0, 1, 1, 2, 2]);
        let p = LabelVector::from_labels(vec![2, 2, 0, 0, 1, 1]);
        let rep = clustering_accuracy(&t, &p).unwrap();
        assert_eq!(rep.acc, 1.0);
        assert_eq!(rep.mapping[2], 0);
        assert_eq!(rep.mapping[0], 1);
        assert_eq!(rep.mapping[1], 2);
    }

    #[test]
    fn accuracy_worked_example() {
        let t = LabelVector::from_labels(vec![0, 0, 1, 1]);
        let p = LabelVector::from_labels(vec![1, 1, 1, 0]);
        let rep = clustering_accuracy(&t, &p).unwrap();
        assert_eq!(rep.acc, 0.75);
    }

    #[test]
    fn accuracy_equals_brute_force_on_random_labelings() {
        let mut r = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let k = r.gen_range(2..=5);
            let n = r.gen_range(2..=12);
            let t = LabelVector::new((0..n).map(|_| r.gen_range(0..k)).collect(), k).unwrap();
            let p = LabelVector::new((0..n).map(|_| r.gen_range(0..k)).collect(), k).unwrap();
            let rep = clustering_accuracy(&t, &p).unwrap();
            let brute = brute_force_acc(&t, &p);
            assert!(
                (rep.acc - brute).abs() < 1e-12,
                "hungarian {} vs brute {brute}",
                rep.acc
            );
        }
    }

    #[test]
    fn accuracy_invariant_under_prediction_renaming() {
        let mut r = ChaCha8Rng::seed_from_u64(31);
        let truth: Vec<usize> = (0..30).map(|_| r.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..30).map(|_| r.gen_range(0..4)).collect();
        let t = LabelVector::new(truth, 4).unwrap();
        let base = clustering_accuracy(&t, &LabelVector::new(pred.clone(), 4).unwrap())
            .unwrap()
            .acc;
        for perm in all_permutations(4).into_iter().take(10) {
            let renamed: Vec<usize> = pred.iter().map(|&l| perm[l]).collect();
            let acc = clustering_accuracy(&t, &LabelVector::new(renamed, 4).unwrap())
                .unwrap()
                .acc;
            assert!((acc - base).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_pads_mismatched_class_counts() {
        let t = LabelVector::new(vec![0, 1, 2, 2], 3).unwrap();
        let p = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let rep = clustering_accuracy(&t, &p).unwrap();
        assert!((rep.acc - 0.75).abs() < 1e-12);
    }
}
