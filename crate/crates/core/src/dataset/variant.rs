use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::McqItem;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VariantMode {
    Fixed {
        target_count: usize,
    },
    /// Option count → fraction of the dataset.
    Mixed {
        proportions: BTreeMap<usize, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    #[serde(flatten)]
    pub mode: VariantMode,
    pub seed: u64,
}

impl VariantSpec {
    pub fn fixed(target_count: usize, seed: u64) -> Self {
        VariantSpec {
            mode: VariantMode::Fixed { target_count },
            seed,
        }
    }

    /// Equal shares of every listed count.
    pub fn mixed_equal(counts: &[usize], seed: u64) -> Self {
        let share = 1.0 / counts.len() as f64;
        VariantSpec {
            mode: VariantMode::Mixed {
                proportions: counts.iter().map(|&c| (c, share)).collect(),
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mode {
            VariantMode::Fixed { target_count } => check_count(*target_count),
            VariantMode::Mixed { proportions } => {
                if proportions.is_empty() {
                    return Err(Error::InvalidArgument("mixed variant needs at least one count".into()));
                }
                for (&count, &p) in proportions {
                    check_count(count)?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidArgument(format!(
                            "proportion for {count} out of range: {p}"
                        )));
                    }
                }
                let total: f64 = proportions.values().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "mixed proportions sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn check_count(n: usize) -> Result<()> {
    if (2..=10).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "variant option count must be in 2..=10, got {n}"
        )))
    }
}

/// Keeps the correct option and a seeded uniform subset of `target_count - 1`
/// distractors. Survivors keep their original relative order and are
/// relettered from `A`.
pub fn make_variant(item: &McqItem, target_count: usize, rng_seed: u64) -> Result<McqItem> {
    let n = item.n_options();
    if target_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "target count must be at least 2, got {target_count}"
        )));
    }
    if target_count > n {
        return Err(Error::InvalidArgument(format!(
            "item {} has {n} options, cannot build a {target_count}-option variant",
            item.id
        )));
    }
    let distractors: Vec<usize> = item.distractor_labels().iter().map(|l| l.index()).collect();
    let mut rng = seed::rng(rng_seed);
    let mut keep: Vec<usize> = index::sample(&mut rng, distractors.len(), target_count - 1)
        .into_iter()
        .map(|i| distractors[i])
        .collect();
    keep.push(item.correct.index());
    keep.sort_unstable();

    let correct_position = keep
        .iter()
        .position(|&i| i == item.correct.index())
        .expect("correct kept");
    let kept_distractors: Vec<String> = keep
        .iter()
        .filter(|&&i| i != item.correct.index())
        .map(|&i| item.options[i].clone())
        .collect();
    McqItem::assemble(item, item.correct_text(), &kept_distractors, correct_position)
}

/// Dataset-level variant construction. Mixed mode assigns counts by
/// largest-remainder quotas, so each count's share is within one item of its
/// exact proportion, then shuffles the assignment.
pub fn make_variants(items: &[McqItem], spec: &VariantSpec) -> Result<Vec<McqItem>> {
    spec.validate()?;
    let counts: Vec<usize> = match &spec.mode {
        VariantMode::Fixed { target_count } => vec![*target_count; items.len()],
        VariantMode::Mixed { proportions } => {
            let mut assignment = apportion(proportions, items.len());
            assignment.shuffle(&mut seed::derived_rng(spec.seed, &["mixed-assignment"]));
            assignment
        }
    };
    items
        .par_iter()
        .zip(counts.par_iter())
        .enumerate()
        .map(|(pos, (item, &count))| {
            make_variant(
                item,
                count,
                seed::derive(spec.seed, &["variant", &item.id, &pos.to_string()]),
            )
        })
        .collect()
}

fn apportion(proportions: &BTreeMap<usize, f64>, total: usize) -> Vec<usize> {
    let quotas: Vec<(usize, f64)> = proportions.iter().map(|(&c, &p)| (c, p * total as f64)).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|(_, q)| q.floor() as usize).collect();
    let mut remaining = total - sizes.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let fa = quotas[a].1 - quotas[a].1.floor();
        let fb = quotas[b].1 - quotas[b].1.floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    quotas
        .iter()
        .zip(sizes)
        .flat_map(|(&(count, _), size)| std::iter::repeat_n(count, size))
        .collect()
}

/// Moves each item's correct answer to a uniformly drawn label, keeping the
/// distractors' relative order.
pub fn permute_correct_label(items: &[McqItem], rng_seed: u64) -> Result<Vec<McqItem>> {
    let Some(first) = items.first() else {
        return Ok(Vec::new());
    };
    let n = first.n_options();
    if let Some(bad) = items.iter().find(|i| i.n_options() != n) {
        return Err(Error::HeterogeneousOptionCount {
            id: bad.id.clone(),
            expected: n,
            found: bad.n_options(),
        });
    }
    items
        .par_iter()
        .enumerate()
        .map(|(pos, item)| {
            let mut rng = seed::derived_rng(rng_seed, &["permute", &item.id, &pos.to_string()]);
            let position = rng.gen_range(0..n);
            let distractors: Vec<String> = item.distractors().map(|(_, t)| t.to_string()).collect();
            McqItem::assemble(item, item.correct_text(), &distractors, position)
        })
        .collect()
}
