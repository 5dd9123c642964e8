//! Option-count gap analysis, label-selection histograms, and the
//! reasoning/guessing mixture model of spurious rewards.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::dataset::{Label, McqItem};
use crate::error::{Error, Result};
use crate::seed;

/// Training option count minus testing option count.
pub fn option_gap(m: usize, n: usize) -> i64 {
    m as i64 - n as i64
}

/// Accuracy (percent) of a model trained with `train_counts[i]` options and
/// tested with `test_counts[j]` options, stored as `accuracies[i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalTable {
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub accuracies: Vec<Vec<f64>>,
}

impl CrossEvalTable {
    pub fn new(train_counts: Vec<usize>, test_counts: Vec<usize>, accuracies: Vec<Vec<f64>>) -> Result<Self> {
        let table = CrossEvalTable {
            train_counts,
            test_counts,
            accuracies,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.accuracies.len() != self.train_counts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows for {} train counts",
                self.accuracies.len(),
                self.train_counts.len()
            )));
        }
        for (row, m) in self.accuracies.iter().zip(&self.train_counts) {
            if row.len() != self.test_counts.len() {
                return Err(Error::InvalidArgument(format!(
                    "row for train count {m} has {} cells, expected {}",
                    row.len(),
                    self.test_counts.len()
                )));
            }
            if let Some(bad) = row.iter().find(|a| !(0.0..=100.0).contains(*a)) {
                return Err(Error::InvalidArgument(format!("accuracy {bad} outside [0, 100]")));
            }
        }
        if self.train_counts.iter().chain(&self.test_counts).any(|c| *c < 2) {
            return Err(Error::InvalidArgument("option counts must be at least 2".into()));
        }
        Ok(())
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.accuracies.iter().map(move |row| row[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZMatrix {
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub z: Vec<Vec<f64>>,
    pub column_means: Vec<f64>,
    /// Population standard deviations.
    pub column_sds: Vec<f64>,
    /// Test counts whose column had zero spread; their z values are 0.
    pub flagged_columns: Vec<usize>,
}

/// Standardizes each test column over the training counts using the
/// population standard deviation.
pub fn normalize_scores(table: &CrossEvalTable) -> Result<ZMatrix> {
    table.validate()?;
    if table.train_counts.len() < 2 {
        return Err(Error::InvalidArgument(
            "each test column needs at least 2 entries".into(),
        ));
    }
    let rows = table.train_counts.len();
    let mut z = vec![vec![0.0; table.test_counts.len()]; rows];
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut flagged = Vec::new();
    for (j, &n) in table.test_counts.iter().enumerate() {
        let mean = table.column(j).sum::<f64>() / rows as f64;
        let var = table.column(j).map(|a| (a - mean).powi(2)).sum::<f64>() / rows as f64;
        let sd = var.sqrt();
        if sd == 0.0 {
            flagged.push(n);
        } else {
            for (i, row) in z.iter_mut().enumerate() {
                row[j] = (table.accuracies[i][j] - mean) / sd;
            }
        }
        means.push(mean);
        sds.push(sd);
    }
    Ok(ZMatrix {
        train_counts: table.train_counts.clone(),
        test_counts: table.test_counts.clone(),
        z,
        column_means: means,
        column_sds: sds,
        flagged_columns: flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub mean_z: f64,
    pub cells: usize,
}

/// Mean z per option-count gap, each cell weighted equally.
pub fn gap_curve(z: &ZMatrix) -> BTreeMap<i64, GapPoint> {
    let mut sums: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (i, &m) in z.train_counts.iter().enumerate() {
        for (j, &n) in z.test_counts.iter().enumerate() {
            let entry = sums.entry(option_gap(m, n)).or_default();
            entry.0 += z.z[i][j];
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(delta, (sum, cells))| {
            (
                delta,
                GapPoint {
                    mean_z: sum / cells as f64,
                    cells,
                },
            )
        })
        .collect()
}

/// Gap with the highest mean z; the smallest gap wins ties.
pub fn gap_peak(curve: &BTreeMap<i64, GapPoint>) -> Option<i64> {
    curve
        .iter()
        .fold(None, |best: Option<(i64, f64)>, (d, p)| match best {
            Some((_, z)) if z >= p.mean_z => best,
            _ => Some((*d, p.mean_z)),
        })
        .map(|(d, _)| d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardMixtureParams {
    pub n: usize,
    pub lambda: f64,
    /// Systematic preference for the correct option under invalid reasoning.
    pub s: f64,
    /// Probability that the reasoning is valid.
    pub p_correct_reasoning: f64,
    /// Probability of a wrong final answer despite valid reasoning.
    pub p_slip: f64,
}

impl RewardMixtureParams {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("n must be at least 2".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("s", self.s),
            ("p_correct_reasoning", self.p_correct_reasoning),
            ("p_slip", self.p_slip),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Probability of a correct answer when the reasoning is invalid.
    pub fn p_correct_given_invalid(&self) -> f64 {
        (1.0 - self.lambda) * self.s + self.lambda / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRates {
    pub p_reward: f64,
    pub p_spurious: f64,
}

pub fn closed_form_rewards(params: &RewardMixtureParams) -> RewardRates {
    let valid = params.p_correct_reasoning;
    let spurious = (1.0 - valid) * params.p_correct_given_invalid();
    RewardRates {
        p_reward: valid * (1.0 - params.p_slip) + spurious,
        p_spurious: spurious,
    }
}

const SHARD_TRIALS: u64 = 16_384;

/// Monte Carlo estimate of the reward and spurious-reward rates.
///
/// Each trial draws three uniforms (reasoning validity, slip, guess) from
/// shard streams that depend only on `seed`, so runs that differ only in
/// `n` share their random numbers and are directly comparable.
pub fn simulate_rewards(params: &RewardMixtureParams, trials: u64, seed: u64) -> Result<RewardRates> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let shards = trials.div_ceil(SHARD_TRIALS);
    let p_guess = params.p_correct_given_invalid();
    let (rewards, spurious) = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = seed::derived_rng(seed, &["reward-sim", &shard.to_string()]);
            let count = SHARD_TRIALS.min(trials - shard * SHARD_TRIALS);
            let mut rewards = 0u64;
            let mut spurious = 0u64;
            for _ in 0..count {
                let (u_valid, u_slip, u_guess): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
                if u_valid < params.p_correct_reasoning {
                    if u_slip >= params.p_slip {
                        rewards += 1;
                    }
                } else if u_guess < p_guess {
                    rewards += 1;
                    spurious += 1;
                }
            }
            (rewards, spurious)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(RewardRates {
        p_reward: rewards as f64 / trials as f64,
        p_spurious: spurious as f64 / trials as f64,
    })
}

/// Half-width of the concentration band used to compare a Monte Carlo rate
/// against its exact value.
pub fn binomial_tolerance(p: f64, trials: u64, sigmas: f64) -> f64 {
    sigmas * (p * (1.0 - p) / trials as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub counts: BTreeMap<Label, usize>,
    /// Parsed answers; equals the sum of `counts`.
    pub total: usize,
    pub parse_failures: usize,
    pub source: String,
}

impl LabelHistogram {
    pub fn fraction(&self, label: Label) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.counts.get(&label).copied().unwrap_or(0) as f64 / self.total as f64
        }
    }
}

/// Histogram of the correct-answer labels themselves.
pub fn correct_label_histogram(items: &[McqItem], source: impl Into<String>) -> LabelHistogram {
    let n = items.iter().map(McqItem::n_options).max().unwrap_or(0);
    let mut counts: BTreeMap<Label, usize> = Label::range(n).map(|l| (l, 0)).collect();
    for item in items {
        *counts.entry(item.correct).or_default() += 1;
    }
    LabelHistogram {
        counts,
        total: items.len(),
        parse_failures: 0,
        source: source.into(),
    }
}

/// Pools the labels a model picks over `k` samples per item.
pub fn label_distribution(
    items: &[McqItem],
    backend: &Backend,
    k: usize,
    seed: u64,
    source: impl Into<String>,
) -> Result<LabelHistogram> {
    let per_item: Vec<Result<Vec<Option<Label>>>> = items
        .par_iter()
        .map(|item| {
            let samples = backend.sample_answers(item, k, seed::derive(seed, &["labels", &item.id]))?;
            Ok(samples.into_iter().map(|s| s.parsed_label).collect())
        })
        .collect();
    let n = items.iter().map(McqItem::n_options).max().unwrap_or(0);
    let mut counts: BTreeMap<Label, usize> = Label::range(n).map(|l| (l, 0)).collect();
    let mut total = 0;
    let mut parse_failures = 0;
    for labels in per_item {
        for label in labels? {
            match label {
                Some(l) => {
                    *counts.entry(l).or_default() += 1;
                    total += 1;
                }
                None => parse_failures += 1,
            }
        }
    }
    Ok(LabelHistogram {
        counts,
        total,
        parse_failures,
        source: source.into(),
    })
}
