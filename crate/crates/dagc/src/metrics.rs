//! External clustering evaluation: ACC (optimal matching), NMI, ARI, and
//! macro-F1, computed from a shared contingency table.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Joint label counts between two partitions, with cached marginals.
/// Distinct labels are indexed in sorted order, so the table layout is
/// deterministic for arbitrary integer labels.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    counts: Vec<Vec<usize>>, // true classes x predicted clusters
    row_marginals: Vec<usize>,
    col_marginals: Vec<usize>,
    n: usize,
}

impl ContingencyTable {
    pub fn new(truth: &[i64], pred: &[i64]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Contract {
                op: "contingency",
                msg: format!(
                    "label length mismatch: truth={}, pred={}",
                    truth.len(),
                    pred.len()
                ),
            });
        }
        if truth.is_empty() {
            return Err(Error::Contract {
                op: "contingency",
                msg: "empty label vectors".into(),
            });
        }
        let index = |labels: &[i64]| -> BTreeMap<i64, usize> {
            let mut m = BTreeMap::new();
            for &l in labels {
                let next = m.len();
                m.entry(l).or_insert(next);
            }
            m
        };
        let ti = index(truth);
        let pi = index(pred);
        let mut counts = vec![vec![0usize; pi.len()]; ti.len()];
        for (&t, &p) in truth.iter().zip(pred) {
            counts[ti[&t]][pi[&p]] += 1;
        }
        let row_marginals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_marginals: Vec<usize> = (0..pi.len())
            .map(|j| counts.iter().map(|r| r[j]).sum())
            .collect();
        Ok(ContingencyTable {
            counts,
            row_marginals,
            col_marginals,
            n: truth.len(),
        })
    }

    pub fn true_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn pred_clusters(&self) -> usize {
        self.col_marginals.len()
    }

    pub fn total(&self) -> usize {
        self.n
    }

    /// Optimal class-to-cluster matching: for each true class index, the
    /// matched predicted cluster index (or one of the zero-padded phantom
    /// columns when cluster counts differ).
    fn optimal_matching(&self) -> Result<Vec<usize>> {
        let m = self.true_classes().max(self.pred_clusters());
        let mut cost = vec![vec![0.0; m]; m];
        for (c, row) in self.counts.iter().enumerate() {
            for (p, &cnt) in row.iter().enumerate() {
                cost[c][p] = -(cnt as f64);
            }
        }
        hungarian(&cost)
    }
}

/// Fraction of samples matched under the optimal cluster-to-class
/// assignment.
pub fn clustering_accuracy(truth: &[i64], pred: &[i64]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    let assign = table.optimal_matching()?;
    let matched: usize = (0..table.true_classes())
        .map(|c| {
            let p = assign[c];
            if p < table.pred_clusters() {
                table.counts[c][p]
            } else {
                0
            }
        })
        .sum();
    Ok(matched as f64 / table.n as f64)
}

/// Normalized mutual information with geometric-mean normalization and
/// natural logs. When either partition is trivial the ratio is 0/0; it is
/// defined as 1 when the partitions are identical and 0 otherwise.
pub fn nmi(truth: &[i64], pred: &[i64]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    let n = table.n as f64;
    let entropy = |marginals: &[usize]| -> f64 {
        marginals
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let ht = entropy(&table.row_marginals);
    let hp = entropy(&table.col_marginals);
    if ht == 0.0 || hp == 0.0 {
        // trivial partition on at least one side: identical iff both trivial
        return Ok(if ht == 0.0 && hp == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (c, row) in table.counts.iter().enumerate() {
        for (p, &cnt) in row.iter().enumerate() {
            if cnt == 0 {
                continue;
            }
            let joint = cnt as f64 / n;
            let marg = (table.row_marginals[c] as f64 / n) * (table.col_marginals[p] as f64 / n);
            mi += joint * (joint / marg).ln();
        }
    }
    // mutual information is nonnegative; rounding of the mixed-sign sum can
    // land a hair below zero for independent partitions
    Ok((mi / (ht * hp).sqrt()).max(0.0))
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index via pair counting with the expected-index
/// correction.
pub fn ari(truth: &[i64], pred: &[i64]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    let sum_cells: f64 = table
        .counts
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| comb2(c))
        .sum();
    let sum_rows: f64 = table.row_marginals.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = table.col_marginals.iter().map(|&c| comb2(c)).sum();
    let total = comb2(table.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / denom)
}

/// Macro F1 after mapping predicted clusters to classes with the same
/// Hungarian assignment ACC uses. True classes matched to a phantom
/// (zero-support) cluster contribute F1 = 0.
pub fn macro_f1(truth: &[i64], pred: &[i64]) -> Result<f64> {
    let table = ContingencyTable::new(truth, pred)?;
    let assign = table.optimal_matching()?;
    let mut total = 0.0;
    for c in 0..table.true_classes() {
        let p = assign[c];
        if p >= table.pred_clusters() {
            continue; // phantom cluster, zero predicted support
        }
        let tp = table.counts[c][p] as f64;
        let support_pred = table.col_marginals[p] as f64;
        let support_true = table.row_marginals[c] as f64;
        if tp == 0.0 {
            continue;
        }
        let precision = tp / support_pred;
        let recall = tp / support_true;
        total += 2.0 * precision * recall / (precision + recall);
    }
    Ok(total / table.true_classes() as f64)
}

/// All four metrics at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
}

pub fn evaluate_all(truth: &[i64], pred: &[i64]) -> Result<MetricSet> {
    Ok(MetricSet {
        acc: clustering_accuracy(truth, pred)?,
        nmi: nmi(truth, pred)?,
        ari: ari(truth, pred)?,
        f1: macro_f1(truth, pred)?,
    })
}

/// Minimum-cost assignment on a square matrix via potentials and
/// augmenting paths, O(m^3). Rows are processed in order and columns
/// scanned ascending with strict improvement, so ties resolve to the
/// lexicographically first optimal assignment.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let m = cost.len();
    if m == 0 {
        return Err(Error::Contract {
            op: "hungarian",
            msg: "empty cost matrix".into(),
        });
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Contract {
                op: "hungarian",
                msg: format!("matrix not square: row {i} has {} of {m} columns", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract {
                op: "hungarian",
                msg: format!("non-finite cost in row {i}"),
            });
        }
    }

    const NONE: usize = usize::MAX;
    let mut row_pot = vec![0.0; m];
    let mut col_pot = vec![0.0; m + 1]; // index m is the virtual start column
    let mut assigned_row = vec![NONE; m + 1];

    for i in 0..m {
        assigned_row[m] = i;
        let mut j0 = m;
        let mut min_reduced = vec![f64::INFINITY; m + 1];
        let mut prev_col = vec![m; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = m;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0][j] - row_pot[i0] - col_pot[j];
                if reduced < min_reduced[j] {
                    min_reduced[j] = reduced;
                    prev_col[j] = j0;
                }
                if min_reduced[j] < delta {
                    delta = min_reduced[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    row_pot[assigned_row[j]] += delta;
                    col_pot[j] -= delta;
                } else {
                    min_reduced[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == NONE {
                break;
            }
        }
        while j0 != m {
            let j1 = prev_col[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![0usize; m];
    for (j, &i) in assigned_row.iter().take(m).enumerate() {
        assignment[i] = j;
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_assignment_cost(cost: &[Vec<f64>]) -> f64 {
        let m = cost.len();
        let mut cols: Vec<usize> = (0..m).collect();
        let mut best = f64::INFINITY;
        permute(&mut cols, 0, &mut |perm| {
            let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if total < best {
                best = total;
            }
        });
        best
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn hungarian_identity_on_diagonal_dominant() {
        let cost = vec![
            vec![0.0, 5.0, 5.0],
            vec![5.0, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
        ];
        assert_eq!(hungarian(&cost).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn hungarian_all_equal_costs_gives_first_assignment() {
        for m in 1..=6 {
            let cost = vec![vec![3.5; m]; m];
            let expect: Vec<usize> = (0..m).collect();
            assert_eq!(hungarian(&cost).unwrap(), expect, "m={m}");
        }
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let m = rng.gen_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let assign = hungarian(&cost).unwrap();
            // output is a permutation
            let mut seen = vec![false; m];
            for &j in &assign {
                assert!(!seen[j]);
                seen[j] = true;
            }
            let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            let best = brute_force_assignment_cost(&cost);
            assert!(
                (total - best).abs() <= 1e-9,
                "trial {trial}: {total} vs brute force {best}"
            );
        }
    }

    #[test]
    fn hungarian_rejects_non_square() {
        let cost = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(hungarian(&cost).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(),
            1.0
        );
        assert_eq!(clustering_accuracy(&[0, 1], &[0, 0]).unwrap(), 0.5);
    }

    fn brute_force_accuracy(truth: &[i64], pred: &[i64]) -> f64 {
        let t = ContingencyTable::new(truth, pred).unwrap();
        let m = t.true_classes().max(t.pred_clusters());
        let mut cols: Vec<usize> = (0..m).collect();
        let mut best = 0usize;
        permute(&mut cols, 0, &mut |perm| {
            let matched: usize = (0..t.true_classes())
                .map(|c| {
                    let p = perm[c];
                    if p < t.pred_clusters() {
                        t.counts[c][p]
                    } else {
                        0
                    }
                })
                .sum();
            best = best.max(matched);
        });
        best as f64 / truth.len() as f64
    }

    #[test]
    fn accuracy_matches_permutation_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..60 {
            let n = rng.gen_range(2..=25);
            let kt = rng.gen_range(1..=5);
            let kp = rng.gen_range(1..=5);
            let truth: Vec<i64> = (0..n).map(|_| rng.gen_range(0..kt)).collect();
            let pred: Vec<i64> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
            let fast = clustering_accuracy(&truth, &pred).unwrap();
            let slow = brute_force_accuracy(&truth, &pred);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 1, 0, 1], &[2, 2, 2, 2]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3], &[5, 5]).unwrap(), 1.0);
    }

    #[test]
    fn nmi_matches_direct_entropy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let n = 30;
            let truth: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let pred: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();

            // independent recomputation from raw label frequencies
            let freq = |labels: &[i64]| {
                let mut m = std::collections::HashMap::new();
                for &l in labels {
                    *m.entry(l).or_insert(0usize) += 1;
                }
                m
            };
            let ft = freq(&truth);
            let fp = freq(&pred);
            let mut joint = std::collections::HashMap::new();
            for (&t, &p) in truth.iter().zip(&pred) {
                *joint.entry((t, p)).or_insert(0usize) += 1;
            }
            let nf = n as f64;
            let h = |f: &std::collections::HashMap<i64, usize>| -> f64 {
                f.values()
                    .map(|&c| {
                        let p = c as f64 / nf;
                        -p * p.ln()
                    })
                    .sum()
            };
            let mut mi = 0.0;
            for (&(t, p), &c) in &joint {
                let pj = c as f64 / nf;
                mi += pj * (pj / ((ft[&t] as f64 / nf) * (fp[&p] as f64 / nf))).ln();
            }
            let expected = if h(&ft) == 0.0 || h(&fp) == 0.0 {
                1.0
            } else {
                mi / (h(&ft) * h(&fp)).sqrt()
            };
            let got = nmi(&truth, &pred).unwrap();
            assert!((got - expected).abs() <= 1e-10);
        }
    }

    fn pair_counting_ari(truth: &[i64], pred: &[i64]) -> f64 {
        let n = truth.len();
        let (mut ss, mut sd, mut ds, mut dd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_t = truth[i] == truth[j];
                let same_p = pred[i] == pred[j];
                match (same_t, same_p) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
        if denom == 0.0 {
            1.0
        } else {
            2.0 * (ss * dd - sd * ds) / denom
        }
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1], &[5, 5, 9, 9]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..40 {
            let n = rng.gen_range(2..=40);
            let truth: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let pred: Vec<i64> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let fast = ari(&truth, &pred).unwrap();
            let slow = pair_counting_ari(&truth, &pred);
            assert!((fast - slow).abs() <= 1e-10, "{fast} vs {slow}");
        }
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let got = macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_to_relabeling_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let n = rng.gen_range(4..=30);
            let truth: Vec<i64> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let pred: Vec<i64> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            // bijective relabeling of pred: 0->7, 1->-2, 2->100
            let relabel = |l: i64| match l {
                0 => 7,
                1 => -2,
                _ => 100,
            };
            let pred2: Vec<i64> = pred.iter().map(|&l| relabel(l)).collect();
            for f in [clustering_accuracy, nmi, ari, macro_f1] {
                let a = f(&truth, &pred).unwrap();
                let b = f(&truth, &pred2).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
            assert!((ari(&truth, &pred).unwrap() - ari(&pred, &truth).unwrap()).abs() < 1e-12);
            assert!((nmi(&truth, &pred).unwrap() - nmi(&pred, &truth).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_equal_one_on_self() {
        let x = vec![0, 1, 2, 0, 1, 2, 1];
        assert_eq!(clustering_accuracy(&x, &x).unwrap(), 1.0);
        assert_eq!(nmi(&x, &x).unwrap(), 1.0);
        assert_eq!(ari(&x, &x).unwrap(), 1.0);
        assert_eq!(macro_f1(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
        assert!(nmi(&[0], &[]).is_err());
    }
}
