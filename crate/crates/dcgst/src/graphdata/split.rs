//! Labeled/validation/test splits, random or PPR-biased.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{ppr_scores, Graph};
use crate::error::{DcgstError, Result};

/// Round-half-up, used for every set-size computation.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Random,
    PprBias,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Labeled-node count per class.
    pub labels_per_class: Vec<usize>,
}

impl Split {
    pub fn from_sets(
        g: &Graph,
        mut labeled: Vec<usize>,
        mut validation: Vec<usize>,
        mut test: Vec<usize>,
    ) -> Result<Self> {
        labeled.sort_unstable();
        validation.sort_unstable();
        test.sort_unstable();
        let mut seen = vec![false; g.n];
        for set in [&labeled, &validation, &test] {
            for &v in set.iter() {
                if v >= g.n {
                    return Err(DcgstError::Split(format!("node {v} out of range")));
                }
                if seen[v] {
                    return Err(DcgstError::Split(format!("node {v} appears in two sets")));
                }
                seen[v] = true;
            }
        }
        let mut labels_per_class = vec![0usize; g.class_count];
        for &v in &labeled {
            labels_per_class[g.labels[v]] += 1;
        }
        Ok(Split {
            labeled,
            validation,
            test,
            labels_per_class,
        })
    }

    /// Initial per-class candidate cap: the (maximum) labeled count per class.
    pub fn initial_k(&self) -> usize {
        self.labels_per_class.iter().copied().max().unwrap_or(1).max(1)
    }
}

/// Per-class labeled quota: floor(budget / C) each, remainder to the
/// lowest-index classes.
fn class_quotas(budget: usize, class_count: usize) -> Vec<usize> {
    let base = budget / class_count;
    let rem = budget % class_count;
    (0..class_count)
        .map(|c| base + usize::from(c < rem))
        .collect()
}

pub fn make_split(g: &Graph, label_rate: f64, mode: SplitMode, seed: u64) -> Result<Split> {
    let budget = round_half_up(label_rate * g.n as f64);
    if budget < g.class_count {
        return Err(DcgstError::Split(format!(
            "label budget {budget} is below class count {}",
            g.class_count
        )));
    }
    let quotas = class_quotas(budget, g.class_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let labeled = match mode {
        SplitMode::Random => {
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.class_count];
            for v in 0..g.n {
                by_class[g.labels[v]].push(v);
            }
            let mut labeled = Vec::with_capacity(budget);
            for (c, quota) in quotas.iter().enumerate() {
                if by_class[c].len() < *quota {
                    return Err(DcgstError::Split(format!(
                        "class {c} has {} nodes, quota {quota}",
                        by_class[c].len()
                    )));
                }
                by_class[c].shuffle(&mut rng);
                labeled.extend_from_slice(&by_class[c][..*quota]);
            }
            labeled
        }
        SplitMode::PprBias => ppr_biased_labels(g, &quotas, &mut rng)?,
    };

    let is_labeled = {
        let mut mask = vec![false; g.n];
        for &v in &labeled {
            mask[v] = true;
        }
        mask
    };
    let mut remainder: Vec<usize> = (0..g.n).filter(|&v| !is_labeled[v]).collect();
    remainder.shuffle(&mut rng);
    let val_size = round_half_up(0.005 * g.n as f64).min(remainder.len());
    let validation: Vec<usize> = remainder[..val_size].to_vec();
    let test: Vec<usize> = remainder[val_size..].to_vec();

    Split::from_sets(g, labeled, validation, test)
}

/// Concentrate labels in a high-PPR neighborhood: draw a uniform seed node,
/// walk nodes in descending PPR order, and fill each class quota greedily.
/// A fresh seed is drawn whenever a full pass over n candidates leaves
/// quotas unfilled without progress.
fn ppr_biased_labels(
    g: &Graph,
    quotas: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut remaining = quotas.to_vec();
    let mut taken = vec![false; g.n];
    let mut labeled = Vec::new();
    let target: usize = quotas.iter().sum();

    while labeled.len() < target {
        let seed = rng.gen_range(0..g.n);
        let pi = ppr_scores(g, seed, 0.15, 50);
        let mut order: Vec<usize> = (0..g.n).collect();
        order.sort_by(|&a, &b| pi[b].partial_cmp(&pi[a]).unwrap().then(a.cmp(&b)));
        let mut progressed = false;
        for &v in &order {
            if taken[v] {
                continue;
            }
            let c = g.labels[v];
            if remaining[c] > 0 {
                taken[v] = true;
                labeled.push(v);
                remaining[c] -= 1;
                progressed = true;
                if labeled.len() == target {
                    break;
                }
            }
        }
        if !progressed {
            // A full pass inspected every node; some class has no nodes left.
            let missing: Vec<usize> = (0..quotas.len()).filter(|&c| remaining[c] > 0).collect();
            return Err(DcgstError::Split(format!(
                "classes {missing:?} have no available nodes"
            )));
        }
    }
    Ok(labeled)
}
