//! Agreement between two hard partitions of the same items.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// A hard partition with labels renumbered densely from 0 in order of first
/// appearance. Any label type that hashes will do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new<T: std::hash::Hash + Eq>(labels: &[T]) -> Self {
        let mut seen: HashMap<&T, usize> = HashMap::new();
        let dense = labels
            .iter()
            .map(|l| {
                let next = seen.len();
                *seen.entry(l).or_insert(next)
            })
            .collect();
        Self {
            labels: dense,
            k: seen.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct blocks.
    pub fn n_blocks(&self) -> usize {
        self.k
    }
}

/// Contingency counts `table[i][j]` of items in block `i` of `a` and `j` of `b`.
pub fn contingency(a: &Partition, b: &Partition) -> Result<Vec<Vec<u64>>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "partitions have {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let mut table = vec![vec![0u64; b.k]; a.k];
    for (&i, &j) in a.labels.iter().zip(&b.labels) {
        table[i][j] += 1;
    }
    Ok(table)
}

fn pairs(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

struct PairCounts {
    together_both: f64,
    together_a: f64,
    together_b: f64,
    total: f64,
}

fn pair_counts(a: &Partition, b: &Partition) -> Result<PairCounts> {
    let table = contingency(a, b)?;
    let together_both = table.iter().flatten().map(|&c| pairs(c)).sum();
    let together_a = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let together_b = (0..b.k)
        .map(|j| pairs(table.iter().map(|r| r[j]).sum()))
        .sum();
    Ok(PairCounts {
        together_both,
        together_a,
        together_b,
        total: pairs(a.len() as u64),
    })
}

/// Fraction of unordered pairs on which the partitions agree.
pub fn rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    let c = pair_counts(a, b)?;
    if c.total == 0.0 {
        return Err(Error::Invalid("Rand index needs at least two items".into()));
    }
    let agree = c.total - c.together_a - c.together_b + 2.0 * c.together_both;
    Ok(agree / c.total)
}

/// Hubert-Arabie adjusted Rand index. When both partitions are a single
/// block the index is undefined; 1 is returned.
pub fn adjusted_rand(a: &Partition, b: &Partition) -> Result<f64> {
    let c = pair_counts(a, b)?;
    if c.total == 0.0 {
        return Err(Error::Invalid("adjusted Rand index needs at least two items".into()));
    }
    let expected = c.together_a * c.together_b / c.total;
    let max = 0.5 * (c.together_a + c.together_b);
    let denom = max - expected;
    if denom == 0.0 {
        // Both partitions trivial (all together or all apart) in the same way.
        return Ok(if c.together_both == expected { 1.0 } else { 0.0 });
    }
    Ok((c.together_both - expected) / denom)
}

/// Maximum-weight matching of rows to columns of a square matrix. Returns
/// `assign[row] = column`.
pub fn max_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n <= 8 {
        return best_permutation(weights);
    }
    hungarian(weights)
}

fn best_permutation(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_score = f64::NEG_INFINITY;
    let score = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| weights[i][j]).sum::<f64>();
    // Heap's algorithm.
    let mut c = vec![0usize; n];
    let s = score(&perm);
    if s > best_score {
        best_score = s;
        best = perm.clone();
    }
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best_score {
                best_score = s;
                best = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Kuhn-Munkres with potentials, O(n^3), on costs `-weights`.
fn hungarian(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Optimal one-to-one matching of predicted blocks onto reference blocks.
/// `mapping[k]` is the reference block matched to predicted block `k`, or
/// `None` when there are more predicted than reference blocks.
pub fn align(pred: &Partition, truth: &Partition) -> Result<Vec<Option<usize>>> {
    let table = contingency(pred, truth)?;
    let size = pred.k.max(truth.k);
    let mut weights = vec![vec![0.0; size]; size];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            weights[i][j] = c as f64;
        }
    }
    let assign = max_assignment(&weights);
    Ok((0..pred.k)
        .map(|i| (assign[i] < truth.k).then_some(assign[i]))
        .collect())
}

/// Matching of `g` fitted components onto `g` true components that
/// maximizes agreement of hard labels; `map[fitted] = true`.
pub fn match_components(pred: &[usize], truth: &[usize], g: usize) -> Result<Vec<usize>> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension("label vectors differ in length".into()));
    }
    let mut weights = vec![vec![0.0; g]; g];
    for (&a, &b) in pred.iter().zip(truth) {
        if a >= g || b >= g {
            return Err(Error::Invalid(format!("label out of range for g = {g}")));
        }
        weights[a][b] += 1.0;
    }
    Ok(max_assignment(&weights))
}

/// Smallest misclassification fraction over one-to-one relabelings of the
/// predicted blocks.
pub fn error_rate(pred: &Partition, truth: &Partition) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Invalid("error rate of an empty partition".into()));
    }
    let table = contingency(pred, truth)?;
    let mapping = align(pred, truth)?;
    let matched: u64 = mapping
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| table[i][j]))
        .sum();
    Ok(1.0 - matched as f64 / pred.len() as f64)
}

/// Error rate, Rand and adjusted Rand in one call.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Agreement {
    pub error: f64,
    pub rand: f64,
    pub adjusted: f64,
}

pub fn agreement(pred: &Partition, truth: &Partition) -> Result<Agreement> {
    Ok(Agreement {
        error: error_rate(pred, truth)?,
        rand: rand_index(pred, truth)?,
        adjusted: adjusted_rand(pred, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(l: &[usize]) -> Partition {
        Partition::new(l)
    }

    #[test]
    fn rand_of_three_items() {
        let r = rand_index(&p(&[1, 1, 2]), &p(&[1, 2, 2])).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn adjusted_rand_two_by_two() {
        // table [[1,1],[1,1]]: index 0, expected (2*2)/6, max 2.
        let got = adjusted_rand(&p(&[1, 1, 2, 2]), &p(&[1, 2, 1, 2])).unwrap();
        let expected = 4.0 / 6.0;
        let want = (0.0 - expected) / (2.0 - expected);
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn single_blocks_give_one() {
        assert_eq!(adjusted_rand(&p(&[0, 0, 0]), &p(&[5, 5, 5])).unwrap(), 1.0);
        assert_eq!(rand_index(&p(&[0, 0, 0]), &p(&[5, 5, 5])).unwrap(), 1.0);
    }

    #[test]
    fn swapped_labels_have_zero_error() {
        let a = p(&[0, 0, 1, 1, 2]);
        let b = p(&[2, 2, 0, 0, 1]);
        assert_eq!(error_rate(&a, &b).unwrap(), 0.0);
        assert_eq!(adjusted_rand(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(rand_index(&p(&[0, 1]), &p(&[0])).is_err());
    }

    #[test]
    fn more_predicted_than_true_blocks() {
        let e = error_rate(&p(&[0, 1, 2, 2]), &p(&[0, 0, 1, 1])).unwrap();
        assert!((e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hungarian_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..=7 {
            for _ in 0..20 {
                let w: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.random_range(0..20) as f64).collect())
                    .collect();
                let score = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| w[i][j]).sum::<f64>();
                assert_eq!(score(&hungarian(&w)), score(&best_permutation(&w)));
            }
        }
    }
}
