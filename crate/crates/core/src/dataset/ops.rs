use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{normalize_ws, McqItem};
use crate::error::{Error, Result};
use crate::seed;

/// Removes items whose normalized stem and normalized option multiset match an
/// earlier item. First occurrence wins; input order is otherwise preserved.
pub fn dedupe(items: Vec<McqItem>) -> Vec<McqItem> {
    let mut seen = HashSet::with_capacity(items.len());
    items
        .into_iter()
        .filter(|item| {
            let mut opts: Vec<String> = item.options.iter().map(|o| normalize_ws(o)).collect();
            opts.sort_unstable();
            seen.insert((normalize_ws(&item.stem), opts))
        })
        .collect()
}

pub fn filter_option_count(items: Vec<McqItem>, n: usize) -> Vec<McqItem> {
    items.into_iter().filter(|i| i.n_options() == n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<McqItem>,
    pub test: Vec<McqItem>,
    pub seed: u64,
    /// Requested train fraction.
    pub ratio: f64,
}

/// Seeded shuffle, then `floor(ratio * N)` items to train and the rest to test.
pub fn split(items: Vec<McqItem>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if items.is_empty() {
        return Err(Error::EmptyInput("split requires at least one item"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n_train = (ratio * items.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seed::derived_rng(seed, &["split"]));

    let mut slots: Vec<Option<McqItem>> = items.into_iter().map(Some).collect();
    let mut take = |i: &usize| slots[*i].take().expect("each index drawn once");
    let train = order[..n_train].iter().map(&mut take).collect();
    let test = order[n_train..].iter().map(&mut take).collect();
    Ok(DatasetSplit {
        train,
        test,
        seed,
        ratio,
    })
}
