//! Comparison methods: plain MF, inverse-propensity weighted MF, and the
//! popularity-deconfounded PD / PDA pair.

use serde::{Deserialize, Serialize};

use crate::dataset::{part_of, InteractionLog, Timestamp};
use crate::error::Result;
use crate::eval::Scorer;
use crate::model::{dot, matching, TideParams};

/// Item popularity over the training data, globally and per time part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityTable {
    pub global: Vec<u64>,
    /// `parts x n_items`; parts without training data are all zero.
    pub per_period: Vec<Vec<u64>>,
    pub boundaries: Vec<f64>,
    /// Last part that holds training clicks.
    pub last_train_period: usize,
}

impl PopularityTable {
    /// Counts `train` clicks into the parts delimited by `boundaries`.
    pub fn new(train: &InteractionLog, boundaries: &[f64]) -> Self {
        let parts = boundaries.len() - 1;
        let mut per_period = vec![vec![0u64; train.n_items()]; parts];
        let mut last_train_period = 0;
        for r in train.records() {
            let p = part_of(boundaries, r.time);
            per_period[p][r.item] += 1;
            last_train_period = last_train_period.max(p);
        }
        PopularityTable {
            global: train.item_counts(),
            per_period,
            boundaries: boundaries.to_vec(),
            last_train_period,
        }
    }

    pub fn period_of(&self, t: Timestamp) -> usize {
        part_of(&self.boundaries, t)
    }

    pub fn total(&self) -> u64 {
        self.global.iter().sum()
    }

    /// Popularity of `item` in `period` divided by that period's maximum.
    pub fn normalized(&self, period: usize, item: usize) -> f64 {
        let row = &self.per_period[period];
        let max = row.iter().copied().max().unwrap_or(0);
        if max == 0 {
            0.0
        } else {
            row[item] as f64 / max as f64
        }
    }

    /// Normalised popularity of every item in `period`.
    pub fn normalized_row(&self, period: usize) -> Vec<f64> {
        let row = &self.per_period[period];
        let max = row.iter().copied().max().unwrap_or(0);
        row.iter()
            .map(|&c| if max == 0 { 0.0 } else { c as f64 / max as f64 })
            .collect()
    }
}

/// MF prediction: the matching score itself.
pub fn mf_predict(params: &TideParams, user: usize, item: usize) -> Result<f64> {
    matching(params, user, item)
}

/// Capped inverse propensity `min(N / max(P_i, 1), cap)` before normalisation.
pub fn ips_weight(item: usize, table: &PopularityTable, cap: f64) -> f64 {
    let n = table.total() as f64;
    (n / table.global[item].max(1) as f64).min(cap)
}

/// Per-item IPS weights scaled so their mean over training clicks is 1.
pub fn ips_weights(table: &PopularityTable, cap: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..table.global.len()).map(|i| ips_weight(i, table, cap)).collect();
    let n = table.total() as f64;
    if n == 0.0 {
        return raw;
    }
    let mean = raw.iter().zip(&table.global).map(|(w, &p)| w * p as f64).sum::<f64>() / n;
    raw.iter().map(|w| w / mean).collect()
}

/// `e^x` below zero, `x + 1` above: a strictly positive ELU.
#[inline]
pub fn elu1(x: f64) -> f64 {
    if x < 0.0 {
        x.exp()
    } else {
        x + 1.0
    }
}

#[inline]
pub(crate) fn elu1_grad(x: f64) -> f64 {
    if x < 0.0 {
        x.exp()
    } else {
        1.0
    }
}

/// Training-time PDA score `p_hat^gamma * elu1(m)` with the item's
/// popularity in the click's own period.
pub fn pda_train_score(
    params: &TideParams,
    user: usize,
    item: usize,
    period: usize,
    table: &PopularityTable,
    gamma: f64,
) -> Result<f64> {
    let m = matching(params, user, item)?;
    Ok(table.normalized(period, item).powf(gamma) * elu1(m))
}

/// PD: the deconfounded matching score alone.
pub fn pd_infer(params: &TideParams, user: usize, item: usize) -> Result<f64> {
    Ok(elu1(matching(params, user, item)?))
}

/// PDA: matching score re-weighted by predicted popularity, taken as the
/// last training period's normalised popularity.
pub fn pda_infer(
    params: &TideParams,
    user: usize,
    item: usize,
    table: &PopularityTable,
    gamma: f64,
) -> Result<f64> {
    let p = table.normalized(table.last_train_period, item);
    Ok(p.powf(gamma) * pd_infer(params, user, item)?)
}

/// Ranks by `m`, `elu1(m)` or `p^gamma * elu1(m)`.
pub struct BaselineScorer<'a> {
    params: &'a TideParams,
    kind: BaselineKind,
}

#[derive(Clone, Debug)]
enum BaselineKind {
    Mf,
    Pd,
    Pda(Vec<f64>),
}

impl<'a> BaselineScorer<'a> {
    pub fn mf(params: &'a TideParams) -> Self {
        BaselineScorer { params, kind: BaselineKind::Mf }
    }

    pub fn pd(params: &'a TideParams) -> Self {
        BaselineScorer { params, kind: BaselineKind::Pd }
    }

    pub fn pda(params: &'a TideParams, table: &PopularityTable, gamma: f64) -> Self {
        let weights = table
            .normalized_row(table.last_train_period)
            .into_iter()
            .map(|p| p.powf(gamma))
            .collect();
        BaselineScorer { params, kind: BaselineKind::Pda(weights) }
    }
}

impl Scorer for BaselineScorer<'_> {
    fn n_items(&self) -> usize {
        self.params.n_items
    }

    fn score_into(&self, user: usize, out: &mut [f64]) {
        let u = self.params.user_row(user);
        for (item, slot) in out.iter_mut().enumerate() {
            let m = dot(u, self.params.item_row(item));
            *slot = match &self.kind {
                BaselineKind::Mf => m,
                BaselineKind::Pd => elu1(m),
                BaselineKind::Pda(w) => w[item] * elu1(m),
            };
        }
    }
}
