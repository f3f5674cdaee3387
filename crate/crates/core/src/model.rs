//! The disentangled click model: static item quality, time-decayed
//! conformity and a matrix-factorisation matching score, plus the inference
//! modes used to switch terms on and off.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionLog, Timestamp};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::trainer::Method;

/// Largest `(t - anchor) / tau` the prefix sums may hold.
pub const MAX_EXPONENT: f64 = 700.0;

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trainable state: embeddings behind the matching score, raw (pre-softplus)
/// quality and conformity scale per item, and the fixed decay temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TideParams {
    pub dim: usize,
    pub n_users: usize,
    pub n_items: usize,
    /// Row-major `n_users x dim`.
    pub user_emb: Vec<f64>,
    /// Row-major `n_items x dim`.
    pub item_emb: Vec<f64>,
    pub q_raw: Vec<f64>,
    pub beta_raw: Vec<f64>,
    pub tau: f64,
}

impl TideParams {
    pub fn zeros(n_users: usize, n_items: usize, dim: usize, tau: f64) -> Self {
        TideParams {
            dim,
            n_users,
            n_items,
            user_emb: vec![0.0; n_users * dim],
            item_emb: vec![0.0; n_items * dim],
            q_raw: vec![0.0; n_items],
            beta_raw: vec![0.0; n_items],
            tau,
        }
    }

    /// Embeddings ~ N(0, std); raw quality and scale set to `init_qb`.
    pub fn init<R: Rng>(
        n_users: usize,
        n_items: usize,
        dim: usize,
        tau: f64,
        emb_std: f64,
        init_qb: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, emb_std).expect("finite std");
        let mut p = Self::zeros(n_users, n_items, dim, tau);
        p.user_emb.iter_mut().for_each(|x| *x = normal.sample(rng));
        p.item_emb.iter_mut().for_each(|x| *x = normal.sample(rng));
        p.q_raw.fill(init_qb);
        p.beta_raw.fill(init_qb);
        p
    }

    #[inline]
    pub fn user_row(&self, user: usize) -> &[f64] {
        &self.user_emb[user * self.dim..(user + 1) * self.dim]
    }

    #[inline]
    pub fn item_row(&self, item: usize) -> &[f64] {
        &self.item_emb[item * self.dim..(item + 1) * self.dim]
    }

    /// Effective quality `softplus(q_raw)`.
    #[inline]
    pub fn quality(&self, item: usize) -> f64 {
        softplus(self.q_raw[item])
    }

    /// Effective conformity scale `softplus(beta_raw)`.
    #[inline]
    pub fn beta(&self, item: usize) -> f64 {
        softplus(self.beta_raw[item])
    }

    pub fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n_users {
            return Err(Error::IdOutOfRange { kind: "user", id: user, n: self.n_users });
        }
        Ok(())
    }

    pub fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.n_items {
            return Err(Error::IdOutOfRange { kind: "item", id: item, n: self.n_items });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Matching score `m_ui`: the dot product of user and item embeddings.
pub fn matching(params: &TideParams, user: usize, item: usize) -> Result<f64> {
    params.check_user(user)?;
    params.check_item(item)?;
    Ok(dot(params.user_row(user), params.item_row(item)))
}

/// Per-item click history with anchored prefix sums, so that
/// `sum_{t_l < t} exp(-(t - t_l) / tau)` costs one binary search.
///
/// The factorisation `exp(-(t - t_l)/tau) = exp(-(t - a)/tau) * exp((t_l - a)/tau)`
/// is anchored at the earliest training click `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformityIndex {
    anchor: Timestamp,
    tau: f64,
    /// CSR offsets into `times` / `prefix`, length `n_items + 1`.
    offsets: Vec<usize>,
    times: Vec<Timestamp>,
    prefix: Vec<f64>,
}

/// Builds the index over the clicks in `train`.
pub fn build_conformity_index(train: &InteractionLog, tau: f64) -> Result<ConformityIndex> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let anchor = train.t_min();
    let exponent = (train.t_max() - anchor) as f64 / tau;
    if exponent > MAX_EXPONENT {
        return Err(Error::IndexOverflow { exponent });
    }

    let n_items = train.n_items();
    let mut offsets = vec![0usize; n_items + 1];
    for r in train.records() {
        offsets[r.item + 1] += 1;
    }
    for i in 0..n_items {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut times = vec![0; train.len()];
    // records are time-ordered, so each item's slice comes out sorted
    for r in train.records() {
        times[cursor[r.item]] = r.time;
        cursor[r.item] += 1;
    }
    let mut prefix = vec![0.0; times.len()];
    for i in 0..n_items {
        let mut acc = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            acc += ((times[k] - anchor) as f64 / tau).exp();
            prefix[k] = acc;
        }
    }
    Ok(ConformityIndex { anchor, tau, offsets, times, prefix })
}

impl ConformityIndex {
    pub fn anchor(&self) -> Timestamp {
        self.anchor
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_items(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn timestamps(&self, item: usize) -> &[Timestamp] {
        &self.times[self.offsets[item]..self.offsets[item + 1]]
    }

    pub fn prefix_sums(&self, item: usize) -> &[f64] {
        &self.prefix[self.offsets[item]..self.offsets[item + 1]]
    }

    /// Number of stored clicks on `item` strictly before `t`.
    pub fn count_before(&self, item: usize, t: Timestamp) -> usize {
        self.timestamps(item).partition_point(|&tl| tl < t)
    }

    /// `sum_{t_l < t} exp(-(t - t_l) / tau)` over the item's clicks.
    pub fn decayed_sum(&self, item: usize, t: Timestamp) -> f64 {
        let k = self.count_before(item, t);
        if k == 0 {
            return 0.0;
        }
        let s = self.prefix_sums(item)[k - 1];
        let shift = (t - self.anchor) as f64 / self.tau;
        if shift <= MAX_EXPONENT {
            (-shift).exp() * s
        } else {
            // exp(-shift) underflows; combine in log space
            (s.ln() - shift).exp()
        }
    }
}

/// Conformity strength `c_i^t = beta_i * sum_{t_l < t} exp(-(t - t_l) / tau)`.
pub fn conformity(index: &ConformityIndex, params: &TideParams, item: usize, t: Timestamp) -> f64 {
    params.beta(item) * index.decayed_sum(item, t)
}

/// Which terms of the score participate at prediction time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// `tanh(q + c^t) * softplus(m)`.
    Full,
    /// Conformity replaced by `c* = 0`: `tanh(q) * softplus(m)`.
    Intervened,
    /// Raw matching score `m`.
    MatchingOnly,
    /// `tanh(c^t) * softplus(m)`.
    NoQuality,
    /// `tanh(q) * softplus(m)`.
    NoConformity,
    /// Every item shares quality `v`: `tanh(v) * softplus(m)`.
    FixedQuality(f64),
}

impl InferenceMode {
    pub fn needs_index(&self) -> bool {
        matches!(self, InferenceMode::Full | InferenceMode::NoQuality)
    }

    pub fn label(&self) -> String {
        match self {
            InferenceMode::Full => "full".into(),
            InferenceMode::Intervened => "int".into(),
            InferenceMode::MatchingOnly => "e".into(),
            InferenceMode::NoQuality => "noq".into(),
            InferenceMode::NoConformity => "noc".into(),
            InferenceMode::FixedQuality(v) => format!("fixq={v}"),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            InferenceMode::Full => "full",
            InferenceMode::Intervened => "int",
            InferenceMode::MatchingOnly => "e",
            InferenceMode::NoQuality => "noq",
            InferenceMode::NoConformity => "noc",
            InferenceMode::FixedQuality(_) => "fixq",
        }
    }

    /// Multiplier on `softplus(m)` for `item` at `t`; `None` for [`InferenceMode::MatchingOnly`].
    fn item_factor(
        &self,
        params: &TideParams,
        index: Option<&ConformityIndex>,
        item: usize,
        t: Timestamp,
    ) -> Result<Option<f64>> {
        let c = || -> Result<f64> {
            let index = index.ok_or(Error::MissingIndex(self.name()))?;
            Ok(conformity(index, params, item, t))
        };
        Ok(match *self {
            InferenceMode::Full => Some(tanh(params.quality(item) + c()?)),
            InferenceMode::Intervened | InferenceMode::NoConformity => Some(tanh(params.quality(item))),
            InferenceMode::MatchingOnly => None,
            InferenceMode::NoQuality => Some(tanh(c()?)),
            InferenceMode::FixedQuality(v) => Some(tanh(v)),
        })
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "full" => InferenceMode::Full,
            "int" | "intervened" => InferenceMode::Intervened,
            "e" | "matching" | "matching-only" => InferenceMode::MatchingOnly,
            "noq" => InferenceMode::NoQuality,
            "noc" => InferenceMode::NoConformity,
            other => {
                let value = other
                    .strip_prefix("fixq=")
                    .or_else(|| other.strip_prefix("fixq:"))
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown inference mode {other:?}")))?;
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad fixq value {value:?}")))?;
                InferenceMode::FixedQuality(v)
            }
        };
        Ok(mode)
    }
}

/// Score of `item` for `user` at time `t` under `mode`.
pub fn predict(
    params: &TideParams,
    index: Option<&ConformityIndex>,
    user: usize,
    item: usize,
    t: Timestamp,
    mode: InferenceMode,
) -> Result<f64> {
    let m = matching(params, user, item)?;
    Ok(match mode.item_factor(params, index, item, t)? {
        Some(factor) => factor * softplus(m),
        None => m,
    })
}

/// Ranks every item for a user at a fixed query time; item factors are
/// computed once up front.
pub struct TideScorer<'a> {
    params: &'a TideParams,
    factors: Option<Vec<f64>>,
}

impl<'a> TideScorer<'a> {
    pub fn new(
        params: &'a TideParams,
        index: Option<&ConformityIndex>,
        mode: InferenceMode,
        t: Timestamp,
    ) -> Result<Self> {
        let factors = match mode {
            InferenceMode::MatchingOnly => None,
            _ => Some(
                (0..params.n_items)
                    .map(|i| mode.item_factor(params, index, i, t).map(|f| f.unwrap_or(1.0)))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(TideScorer { params, factors })
    }
}

impl Scorer for TideScorer<'_> {
    fn n_items(&self) -> usize {
        self.params.n_items
    }

    fn score_into(&self, user: usize, out: &mut [f64]) {
        let u = self.params.user_row(user);
        for (item, slot) in out.iter_mut().enumerate() {
            let m = dot(u, self.params.item_row(item));
            *slot = match &self.factors {
                Some(f) => f[item] * softplus(m),
                None => m,
            };
        }
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk model state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub method: Method,
    /// Earliest training timestamp; the conformity index anchor.
    pub anchor: Timestamp,
    #[serde(flatten)]
    pub params: TideParams,
}

impl Checkpoint {
    pub fn new(method: Method, anchor: Timestamp, params: TideParams) -> Self {
        Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, method, anchor, params }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        let p = &ckpt.params;
        if p.user_emb.len() != p.n_users * p.dim
            || p.item_emb.len() != p.n_items * p.dim
            || p.q_raw.len() != p.n_items
            || p.beta_raw.len() != p.n_items
        {
            return Err(Error::InvalidArgument("checkpoint tensor shapes disagree".into()));
        }
        Ok(ckpt)
    }
}
