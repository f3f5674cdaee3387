//! Synthetic click logs drawn from the disentangled click model with planted
//! quality and conformity, so recovery can be checked against ground truth.
//!
//! Each event picks a user uniformly and an item with probability
//! proportional to `tanh(q*_i + c_i^t) * softplus(m*_ui)`, where `c_i^t`
//! is driven by the clicks generated so far. Ratings depend on planted
//! quality plus noise only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, InteractionLog, Timestamp};
use crate::error::{Error, Result};
use crate::model::softplus;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Zero gives all-zero embeddings (no personalisation).
    pub embed_dim: usize,
    /// Planted quality is `quality_scale * (1 - spread + spread * U(0,1))`.
    pub quality_scale: f64,
    /// Fraction of `quality_scale` over which quality varies; 0 makes all items equal.
    pub quality_spread: f64,
    /// Planted conformity scale is `beta_scale * U(0,1)`.
    pub beta_scale: f64,
    pub tau: f64,
    pub horizon: f64,
    pub n_events: usize,
    pub rating_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_items: 500,
            embed_dim: 8,
            quality_scale: 2.0,
            quality_spread: 1.0,
            beta_scale: 0.5,
            tau: 1.0e6,
            horizon: 1.0e8,
            n_events: 200_000,
            rating_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_users == 0 || self.n_items == 0 || self.n_events == 0 {
            return bad("n_users, n_items and n_events must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.horizon >= 1.0) {
            return bad(format!("tau ({}) and horizon ({}) must be positive", self.tau, self.horizon));
        }
        if !(self.quality_scale >= 0.0 && self.beta_scale >= 0.0 && self.rating_noise >= 0.0) {
            return bad("scales and noise must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.quality_spread) {
            return bad(format!("quality_spread {} outside [0, 1]", self.quality_spread));
        }
        Ok(())
    }
}

/// The planted parameters behind a synthetic log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub true_quality: Vec<f64>,
    pub true_beta: Vec<f64>,
    pub embed_dim: usize,
    /// Row-major `n_users x embed_dim`.
    pub true_user_emb: Vec<f64>,
    /// Row-major `n_items x embed_dim`.
    pub true_item_emb: Vec<f64>,
}

/// Contents of the truth file written next to a synthetic log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(rename = "q*")]
    pub quality: Vec<f64>,
    #[serde(rename = "β*")]
    pub beta: Vec<f64>,
    pub seed: u64,
    pub config: SynthConfig,
}

impl SynthTruth {
    pub fn to_file(&self, config: &SynthConfig) -> TruthFile {
        TruthFile {
            quality: self.true_quality.clone(),
            beta: self.true_beta.clone(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// Running per-item decayed click sums, all referenced to one time so a
/// single `exp` per event brings them up to date.
struct DecayState {
    tau: f64,
    reference: f64,
    sums: Vec<f64>,
}

impl DecayState {
    fn advance_to(&mut self, t: f64) {
        // keep the shared factor comfortably inside double range
        if (t - self.reference) / self.tau > 30.0 {
            let f = (-(t - self.reference) / self.tau).exp();
            self.sums.iter_mut().for_each(|s| *s *= f);
            self.reference = t;
        }
    }

    fn add_click(&mut self, item: usize, t: f64) {
        self.sums[item] += ((t - self.reference) / self.tau).exp();
    }

    /// `exp(-(t - reference) / tau)`, the factor turning sums into decayed sums at `t`.
    fn factor(&self, t: f64) -> f64 {
        (-(t - self.reference) / self.tau).exp()
    }
}

pub fn generate(config: &SynthConfig) -> Result<(InteractionLog, SynthTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_items = config.n_items;
    let d = config.embed_dim;

    let true_quality: Vec<f64> = (0..n_items)
        .map(|_| config.quality_scale * (1.0 - config.quality_spread + config.quality_spread * rng.random::<f64>()))
        .collect();
    let true_beta: Vec<f64> = (0..n_items).map(|_| config.beta_scale * rng.random::<f64>()).collect();
    // entries ~ N(0, d^{-1/4}) give matching scores with unit variance
    let emb_std = if d > 0 { (d as f64).powf(-0.25) } else { 0.0 };
    let normal = Normal::new(0.0, emb_std).expect("finite std");
    let true_user_emb: Vec<f64> = (0..config.n_users * d).map(|_| normal.sample(&mut rng)).collect();
    let true_item_emb: Vec<f64> = (0..n_items * d).map(|_| normal.sample(&mut rng)).collect();

    let mut times: Vec<Timestamp> =
        (0..config.n_events).map(|_| (rng.random::<f64>() * config.horizon).floor() as Timestamp).collect();
    times.sort_unstable();

    let mean_quality = true_quality.iter().sum::<f64>() / n_items as f64;
    let mut state = DecayState { tau: config.tau, reference: 0.0, sums: vec![0.0; n_items] };
    let mut pending: Vec<usize> = Vec::new();
    let mut pending_time = Timestamp::MIN;
    let mut cumulative = vec![0.0; n_items];
    let mut affinity = vec![0.0; n_items];
    let mut records = Vec::with_capacity(config.n_events);

    for &t in &times {
        if t != pending_time {
            // clicks only influence strictly later events
            for &item in &pending {
                state.add_click(item, pending_time as f64);
            }
            pending.clear();
            pending_time = t;
        }
        let tf = t as f64;
        state.advance_to(tf);
        let decay = state.factor(tf);

        let user = rng.random_range(0..config.n_users);
        let u_row = &true_user_emb[user * d..(user + 1) * d];
        for (i, a) in affinity.iter_mut().enumerate() {
            let i_row = &true_item_emb[i * d..(i + 1) * d];
            *a = softplus(u_row.iter().zip(i_row).map(|(x, y)| x * y).sum());
        }
        let mut total = 0.0;
        for i in 0..n_items {
            let c = true_beta[i] * state.sums[i] * decay;
            total += (true_quality[i] + c).tanh() * affinity[i];
            cumulative[i] = total;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("all click scores are zero at t = {t}")));
        }
        let draw = rng.random::<f64>() * total;
        let item = cumulative.partition_point(|&c| c <= draw).min(n_items - 1);

        let noise: f64 = StandardNormal.sample(&mut rng);
        let raw = 3.0 + config.quality_scale * (true_quality[item] - mean_quality) + config.rating_noise * noise;
        let rating = raw.round().clamp(1.0, 5.0) as u8;
        records.push(Interaction { user, item, time: t, rating: Some(rating) });
        pending.push(item);
    }

    let log = InteractionLog::new(records, config.n_users, n_items)?;
    Ok((
        log,
        SynthTruth { true_quality, true_beta, embed_dim: d, true_user_emb, true_item_emb },
    ))
}
