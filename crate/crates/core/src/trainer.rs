//! BPR training with uniform negative sampling and Adam, for TIDE and the
//! baselines. Gradients are derived by hand.


use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{elu1, elu1_grad, ips_weights, BaselineScorer, PopularityTable};
use crate::dataset::{ChronoSplit, Timestamp};
use crate::error::{Error, Result};
use crate::eval::{click_prediction_eval, Scorer};
use crate::model::{
    build_conformity_index, dot, sigmoid, softplus, softplus_inv, ConformityIndex, InferenceMode,
    TideParams, TideScorer,
};

/// Which TIDE terms are present during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TideVariant {
    Full,
    /// Quality removed: `tanh(c) * softplus(m)`.
    NoQuality,
    /// Conformity removed: `tanh(q) * softplus(m)`.
    NoConformity,
    /// Every item shares a frozen quality `value > 0`.
    FixedQuality { value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    Mf,
    MfIps { cap: f64 },
    /// PD and PDA share this training objective and differ at inference.
    Pd { gamma: f64 },
    Tide { variant: TideVariant },
}

impl Method {
    pub const TIDE: Method = Method::Tide { variant: TideVariant::Full };

    pub fn name(&self) -> String {
        match self {
            Method::Mf => "mf".into(),
            Method::MfIps { .. } => "mf-ips".into(),
            Method::Pd { .. } => "pd".into(),
            Method::Tide { variant: TideVariant::Full } => "tide".into(),
            Method::Tide { variant: TideVariant::NoQuality } => "tide-noq".into(),
            Method::Tide { variant: TideVariant::NoConformity } => "tide-noc".into(),
            Method::Tide { variant: TideVariant::FixedQuality { .. } } => "tide-fixq".into(),
        }
    }

    pub fn is_tide(&self) -> bool {
        matches!(self, Method::Tide { .. })
    }

    fn uses_conformity(&self) -> bool {
        matches!(
            self,
            Method::Tide { variant: TideVariant::Full | TideVariant::NoQuality | TideVariant::FixedQuality { .. } }
        )
    }

    fn trains_quality(&self) -> bool {
        matches!(self, Method::Tide { variant: TideVariant::Full | TideVariant::NoConformity })
    }

    /// The inference mode matching this method's training forward pass, used
    /// for validation-time model selection.
    pub fn training_mode(&self) -> Option<InferenceMode> {
        match self {
            Method::Tide { variant } => Some(match variant {
                TideVariant::Full | TideVariant::FixedQuality { .. } => InferenceMode::Full,
                TideVariant::NoQuality => InferenceMode::NoQuality,
                TideVariant::NoConformity => InferenceMode::NoConformity,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_emb: f64,
    pub lr_qb: f64,
    /// Decoupled decay on embedding rows touched by a batch; quality and
    /// conformity scale are never decayed.
    pub weight_decay_emb: f64,
    pub init_qb: f64,
    pub embed_dim: usize,
    pub emb_init_std: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Conformity temperature in seconds; fixed, not learned.
    pub tau: f64,
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_emb: 1e-3,
            lr_qb: 1e-3,
            weight_decay_emb: 1e-3,
            init_qb: -2.0,
            embed_dim: 32,
            emb_init_std: 0.1,
            batch_size: 8192,
            epochs: 100,
            seed: 0,
            early_stop_patience: 10,
            tau: 1e7,
            eval_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.lr_emb >= 0.0 && self.lr_qb >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad("tau must be positive");
        }
        if self.eval_k == 0 {
            return bad("eval_k must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: [Vec<f64>; 4],
    v: [Vec<f64>; 4],
}

impl AdamState {
    pub fn new(params: &TideParams) -> Self {
        let sizes = [params.user_emb.len(), params.item_emb.len(), params.q_raw.len(), params.beta_raw.len()];
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.map(|n| vec![0.0; n]),
            v: sizes.map(|n| vec![0.0; n]),
        }
    }

    fn update(&mut self, params: &mut TideParams, grads: &Gradients, lrs: [f64; 4], active: [bool; 4]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let targets: [&mut Vec<f64>; 4] =
            [&mut params.user_emb, &mut params.item_emb, &mut params.q_raw, &mut params.beta_raw];
        let sources = [&grads.user_emb, &grads.item_emb, &grads.q_raw, &grads.beta_raw];
        for (g, (theta, grad)) in targets.into_iter().zip(sources).enumerate() {
            if !active[g] {
                continue;
            }
            let (m, v) = (&mut self.m[g], &mut self.v[g]);
            for k in 0..theta.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] -= lrs[g] * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// `-log sigmoid(pos - neg)`, computed as `softplus(neg - pos)`.
pub fn bpr_loss(pos_score: f64, neg_score: f64) -> f64 {
    softplus(neg_score - pos_score)
}

/// Uniform draw among items outside `positives` (sorted) by rejection.
pub fn sample_negative<R: Rng>(user: usize, positives: &[usize], n_items: usize, rng: &mut R) -> Result<usize> {
    if positives.len() >= n_items {
        return Err(Error::NoNegative(user));
    }
    loop {
        let j = rng.random_range(0..n_items);
        if positives.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
}

/// One BPR triple with its click time, time part and loss weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BprSample {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
    pub time: Timestamp,
    pub period: usize,
    pub weight: f64,
}

/// Read-only inputs to the forward pass besides the parameters.
#[derive(Clone, Copy, Default)]
pub struct TrainContext<'a> {
    pub index: Option<&'a ConformityIndex>,
    pub popularity: Option<&'a PopularityTable>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub user_emb: Vec<f64>,
    pub item_emb: Vec<f64>,
    pub q_raw: Vec<f64>,
    pub beta_raw: Vec<f64>,
    touched_users: Vec<usize>,
    touched_items: Vec<usize>,
}

impl Gradients {
    fn zeros(params: &TideParams) -> Self {
        Gradients {
            user_emb: vec![0.0; params.user_emb.len()],
            item_emb: vec![0.0; params.item_emb.len()],
            q_raw: vec![0.0; params.q_raw.len()],
            beta_raw: vec![0.0; params.beta_raw.len()],
            touched_users: Vec::new(),
            touched_items: Vec::new(),
        }
    }

    fn all_finite(&self) -> Option<&'static str> {
        let groups = [
            ("user_emb", &self.user_emb),
            ("item_emb", &self.item_emb),
            ("q_raw", &self.q_raw),
            ("beta_raw", &self.beta_raw),
        ];
        groups.into_iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())).map(|(n, _)| n)
    }
}

/// Score of one (user, item) pair under the method's training objective,
/// with the partials needed for backprop.
struct Forward {
    score: f64,
    /// d score / d m
    d_m: f64,
    /// d score / d q_raw
    d_q: f64,
    /// d score / d beta_raw
    d_beta: f64,
}

fn forward(
    method: &Method,
    params: &TideParams,
    ctx: &TrainContext<'_>,
    user: usize,
    item: usize,
    time: Timestamp,
    period: usize,
) -> Result<Forward> {
    let m = dot(params.user_row(user), params.item_row(item));
    Ok(match *method {
        Method::Mf | Method::MfIps { .. } => Forward { score: m, d_m: 1.0, d_q: 0.0, d_beta: 0.0 },
        Method::Pd { gamma } => {
            let table = ctx
                .popularity
                .ok_or_else(|| Error::InvalidArgument("PD training needs a popularity table".into()))?;
            let w = table.normalized(period, item).powf(gamma);
            Forward { score: w * elu1(m), d_m: w * elu1_grad(m), d_q: 0.0, d_beta: 0.0 }
        }
        Method::Tide { variant } => {
            let (quality, d_quality) = match variant {
                TideVariant::NoQuality => (0.0, 0.0),
                TideVariant::FixedQuality { .. } => (params.quality(item), 0.0),
                _ => (params.quality(item), sigmoid(params.q_raw[item])),
            };
            let (conf, d_conf) = if method.uses_conformity() {
                let index = ctx.index.ok_or(Error::MissingIndex("training"))?;
                let decayed = index.decayed_sum(item, time);
                (params.beta(item) * decayed, decayed * sigmoid(params.beta_raw[item]))
            } else {
                (0.0, 0.0)
            };
            let bias = (quality + conf).tanh();
            let sp = softplus(m);
            let d_bias = (1.0 - bias * bias) * sp;
            Forward { score: bias * sp, d_m: bias * sigmoid(m), d_q: d_bias * d_quality, d_beta: d_bias * d_conf }
        }
    })
}

/// Mean weighted BPR loss over `batch` and its gradient.
pub fn compute_gradients(
    method: &Method,
    params: &TideParams,
    ctx: &TrainContext<'_>,
    batch: &[BprSample],
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(params);
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let dim = params.dim;
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let pos = forward(method, params, ctx, s.user, s.pos, s.time, s.period)?;
        let neg = forward(method, params, ctx, s.user, s.neg, s.time, s.period)?;
        loss += s.weight * bpr_loss(pos.score, neg.score);
        // d loss / d pos = -g, d loss / d neg = +g
        let g = s.weight * scale * sigmoid(neg.score - pos.score);

        let u_row = params.user_row(s.user);
        for (item, fwd, sign) in [(s.pos, &pos, -1.0), (s.neg, &neg, 1.0)] {
            let coef = sign * g * fwd.d_m;
            let i_row = params.item_row(item);
            let gu = &mut grads.user_emb[s.user * dim..(s.user + 1) * dim];
            for k in 0..dim {
                gu[k] += coef * i_row[k];
            }
            let gi = &mut grads.item_emb[item * dim..(item + 1) * dim];
            for k in 0..dim {
                gi[k] += coef * u_row[k];
            }
            grads.q_raw[item] += sign * g * fwd.d_q;
            grads.beta_raw[item] += sign * g * fwd.d_beta;
            grads.touched_items.push(item);
        }
        grads.touched_users.push(s.user);
    }
    grads.touched_users.sort_unstable();
    grads.touched_users.dedup();
    grads.touched_items.sort_unstable();
    grads.touched_items.dedup();
    Ok((loss * scale, grads))
}

/// One Adam step on `batch`; returns the mean batch loss before the update.
pub fn grad_step(
    method: &Method,
    batch: &[BprSample],
    params: &mut TideParams,
    ctx: &TrainContext<'_>,
    config: &TrainConfig,
    adam: &mut AdamState,
) -> Result<f64> {
    let (loss, grads) = compute_gradients(method, params, ctx, batch)?;
    if let Some(group) = grads.all_finite() {
        return Err(Error::NonFiniteGradient(format!(
            "{group} gradient at Adam step {} (loss {loss})",
            adam.step + 1
        )));
    }
    let lrs = [config.lr_emb, config.lr_emb, config.lr_qb, config.lr_qb];
    let active = [true, true, method.trains_quality(), method.uses_conformity()];
    adam.update(params, &grads, lrs, active);

    let shrink = 1.0 - config.lr_emb * config.weight_decay_emb;
    if shrink != 1.0 {
        let dim = params.dim;
        for &u in &grads.touched_users {
            params.user_emb[u * dim..(u + 1) * dim].iter_mut().for_each(|x| *x *= shrink);
        }
        for &i in &grads.touched_items {
            params.item_emb[i * dim..(i + 1) * dim].iter_mut().for_each(|x| *x *= shrink);
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_cp_rec: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation CP-Rec@K.
    pub params: TideParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub anchor: Timestamp,
}

impl FitResult {
    pub fn history_csv(&self, k: usize) -> String {
        let mut out = format!("epoch,loss,val_CP-Rec@{k},wall_time\n");
        for h in &self.history {
            let val = h.val_cp_rec.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{:.3}\n", h.epoch, h.loss, val, h.wall_time));
        }
        out
    }
}

/// Shared read-only state derived from a split for one method.
pub struct Prepared {
    pub index: Option<ConformityIndex>,
    pub popularity: PopularityTable,
    pub ips: Option<Vec<f64>>,
    pub positives: Vec<Vec<usize>>,
}

impl Prepared {
    pub fn new(split: &ChronoSplit, method: &Method, tau: f64) -> Result<Self> {
        let index = if method.is_tide() { Some(build_conformity_index(&split.train, tau)?) } else { None };
        let popularity = PopularityTable::new(&split.train, &split.boundaries);
        let ips = match method {
            Method::MfIps { cap } => Some(ips_weights(&popularity, *cap)),
            _ => None,
        };
        Ok(Prepared { index, popularity, ips, positives: split.train.user_items() })
    }

    pub fn context(&self) -> TrainContext<'_> {
        TrainContext { index: self.index.as_ref(), popularity: Some(&self.popularity) }
    }
}

/// The scorer used for validation-time model selection.
pub fn selection_scorer<'a>(
    method: &Method,
    params: &'a TideParams,
    prepared: &Prepared,
    query_time: Timestamp,
) -> Result<Box<dyn Scorer + 'a>> {
    Ok(match method {
        Method::Mf | Method::MfIps { .. } => Box::new(BaselineScorer::mf(params)),
        Method::Pd { .. } => Box::new(BaselineScorer::pd(params)),
        Method::Tide { .. } => {
            let mode = method.training_mode().expect("tide method");
            Box::new(TideScorer::new(params, prepared.index.as_ref(), mode, query_time)?)
        }
    })
}

/// Fresh parameters for `method`: embeddings ~ N(0, std), raw quality and
/// scale at `init_qb`, or the frozen shared quality for the fixed variant.
pub fn init_params(method: &Method, split: &ChronoSplit, config: &TrainConfig) -> Result<TideParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = TideParams::init(
        split.n_users(),
        split.n_items(),
        config.embed_dim,
        config.tau,
        config.emb_init_std,
        config.init_qb,
        &mut rng,
    );
    if let Method::Tide { variant: TideVariant::FixedQuality { value } } = method {
        if value.is_nan() || *value <= 0.0 {
            return Err(Error::InvalidArgument(format!("fixed quality must be positive, got {value}")));
        }
        params.q_raw.fill(softplus_inv(*value));
    }
    Ok(params)
}

/// Seconds since the call; always 0 in the browser, where there is no monotonic clock in std.
#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

/// Trains `method` on `split.train`, selecting the epoch with the best
/// validation CP-Rec@K and stopping after `early_stop_patience` epochs
/// without improvement.
pub fn fit(split: &ChronoSplit, method: &Method, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyInput);
    }
    let prepared = Prepared::new(split, method, config.tau)?;
    let ctx = prepared.context();
    let mut params = init_params(method, split, config)?;
    let anchor = split.train.t_min();
    let query_time = split.train.t_max();
    // a separate stream so that initialisation and sampling do not interact
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = AdamState::new(&params);

    let mut best = FitResult {
        params: params.clone(),
        history: Vec::new(),
        best_epoch: None,
        best_val: None,
        anchor,
    };
    let elapsed = stopwatch();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut stale = 0;
    let mut samples = Vec::with_capacity(split.train.len());

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        samples.clear();
        for &k in &order {
            let r = split.train.records()[k];
            let neg = sample_negative(r.user, &prepared.positives[r.user], split.n_items(), &mut rng)?;
            samples.push(BprSample {
                user: r.user,
                pos: r.item,
                neg,
                time: r.time,
                period: prepared.popularity.period_of(r.time),
                weight: prepared.ips.as_ref().map_or(1.0, |w| w[r.item]),
            });
        }
        let mut total = 0.0;
        for batch in samples.chunks(config.batch_size) {
            total += grad_step(method, batch, &mut params, &ctx, config, &mut adam)? * batch.len() as f64;
        }
        let loss = total / samples.len() as f64;

        let val = if split.validation.is_empty() {
            None
        } else {
            let scorer = selection_scorer(method, &params, &prepared, query_time)?;
            let report = click_prediction_eval(scorer.as_ref(), &split.train, &split.validation, config.eval_k);
            (report.n_users > 0).then_some(report.recall)
        };
        best.history.push(EpochRecord { epoch, loss, val_cp_rec: val, wall_time: elapsed() });
        log::debug!("epoch {epoch}: loss {loss:.6} val {val:?}");

        match val {
            Some(v) if best.best_val.is_none_or(|b| v > b) => {
                best.best_val = Some(v);
                best.best_epoch = Some(epoch);
                best.params = params.clone();
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= config.early_stop_patience {
                    break;
                }
            }
            None => {
                best.params = params.clone();
                best.best_epoch = Some(epoch);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::dataset::{chrono_split, Interaction, InteractionLog};

    #[test]
    fn bpr_loss_values() {
        assert_relative_eq!(bpr_loss(0.3, 0.3), std::f64::consts::LN_2, max_relative = 1e-15);
        assert_relative_eq!(bpr_loss(1.0, 0.0), 0.313_261_687_518_222_8, max_relative = 1e-12);
        assert!(bpr_loss(800.0, 0.0) < 1e-300);
        assert!(bpr_loss(-5.0, 5.0) > 0.0);
    }

    #[test]
    fn negative_sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_negative(3, &[0], 1, &mut rng), Err(Error::NoNegative(3))));
        for _ in 0..50 {
            assert_eq!(sample_negative(0, &[0], 2, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn negative_sampling_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n_items = 10_000;
        let positives: Vec<usize> = (0..10).map(|k| k * 997).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = vec![0u64; n_items];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_negative(0, &positives, n_items, &mut rng).unwrap()] += 1;
        }
        assert!(positives.iter().all(|&p| counts[p] == 0));
        let cells = n_items - positives.len();
        let expected = draws as f64 / cells as f64;
        let chi2: f64 = (0..n_items)
            .filter(|i| positives.binary_search(i).is_err())
            .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi-square p = {p}");
    }

    fn toy_split() -> ChronoSplit {
        let mut records = Vec::new();
        for t in 0..200i64 {
            let user = (t % 4) as usize;
            let item = ((t * 7 + user as i64) % 6) as usize;
            records.push(Interaction { user, item, time: t * 10, rating: Some(((t % 5) + 1) as u8) });
        }
        chrono_split(&InteractionLog::new(records, 4, 6).unwrap(), 10, 0).unwrap()
    }

    #[test]
    fn zero_learning_rates_leave_params_unchanged() {
        let split = toy_split();
        let cfg = TrainConfig { lr_emb: 0.0, lr_qb: 0.0, embed_dim: 3, tau: 100.0, ..Default::default() };
        let prepared = Prepared::new(&split, &Method::TIDE, cfg.tau).unwrap();
        let mut params = init_params(&Method::TIDE, &split, &cfg).unwrap();
        let before = params.clone();
        let mut adam = AdamState::new(&params);
        let batch = [BprSample { user: 0, pos: 1, neg: 2, time: 500, period: 2, weight: 1.0 }];
        let loss = grad_step(&Method::TIDE, &batch, &mut params, &prepared.context(), &cfg, &mut adam).unwrap();
        assert!(loss > 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn identical_items_give_zero_embedding_gradient() {
        let split = toy_split();
        let cfg = TrainConfig { embed_dim: 3, tau: 100.0, init_qb: -800.0, ..Default::default() };
        let prepared = Prepared::new(&split, &Method::TIDE, cfg.tau).unwrap();
        let params = init_params(&Method::TIDE, &split, &cfg).unwrap();
        let batch = [BprSample { user: 1, pos: 4, neg: 4, time: 900, period: 4, weight: 1.0 }];
        let (loss, g) = compute_gradients(&Method::TIDE, &params, &prepared.context(), &batch).unwrap();
        assert_relative_eq!(loss, std::f64::consts::LN_2);
        assert!(g.user_emb.iter().chain(&g.item_emb).all(|&x| x == 0.0));
    }

    #[test]
    fn no_conformity_variant_never_touches_beta() {
        let split = toy_split();
        let method = Method::Tide { variant: TideVariant::NoConformity };
        let cfg = TrainConfig { embed_dim: 3, tau: 100.0, epochs: 3, lr_qb: 0.05, batch_size: 16, ..Default::default() };
        let prepared = Prepared::new(&split, &method, cfg.tau).unwrap();
        let params = init_params(&method, &split, &cfg).unwrap();
        let batch: Vec<_> = (0..6)
            .map(|k| BprSample { user: k % 4, pos: k, neg: (k + 1) % 6, time: 100 * k as i64, period: 0, weight: 1.0 })
            .collect();
        // a context without an index: the forward pass must not ask for one
        let ctx = TrainContext { index: None, popularity: Some(&prepared.popularity) };
        let (_, g) = compute_gradients(&method, &params, &ctx, &batch).unwrap();
        assert!(g.beta_raw.iter().all(|&x| x == 0.0));
        let fitted = fit(&split, &method, &cfg).unwrap();
        assert_eq!(fitted.params.beta_raw, params.beta_raw);
        assert_ne!(fitted.params.q_raw, params.q_raw);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let split = toy_split();
        let cfg = TrainConfig { embed_dim: 4, tau: 100.0, epochs: 0, ..Default::default() };
        let out = fit(&split, &Method::Mf, &cfg).unwrap();
        assert_eq!(out.params, init_params(&Method::Mf, &split, &cfg).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn fit_is_deterministic() {
        let split = toy_split();
        let cfg = TrainConfig { embed_dim: 4, tau: 100.0, epochs: 4, batch_size: 32, lr_emb: 0.01, lr_qb: 0.01, ..Default::default() };
        for method in [Method::TIDE, Method::Pd { gamma: 0.1 }, Method::MfIps { cap: 10.0 }] {
            let a = fit(&split, &method, &cfg).unwrap();
            let b = fit(&split, &method, &cfg).unwrap();
            assert_eq!(a.params, b.params);
            assert!(a.params.q_raw.iter().chain(&a.params.beta_raw).all(|x| softplus(*x).is_finite() && softplus(*x) > 0.0));
        }
    }

    #[test]
    fn fixed_quality_needs_positive_value() {
        let split = toy_split();
        let cfg = TrainConfig { embed_dim: 2, tau: 100.0, ..Default::default() };
        let bad = Method::Tide { variant: TideVariant::FixedQuality { value: 0.0 } };
        assert!(init_params(&bad, &split, &cfg).is_err());
        let good = Method::Tide { variant: TideVariant::FixedQuality { value: 0.5 } };
        let p = init_params(&good, &split, &cfg).unwrap();
        assert_relative_eq!(p.quality(3), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn method_serde_shape() {
        let json = serde_json::to_string(&Method::Tide { variant: TideVariant::FixedQuality { value: 0.5 } }).unwrap();
        assert_eq!(json, r#"{"kind":"tide","variant":{"fixed-quality":{"value":0.5}}}"#);
        let back: Method = serde_json::from_str(r#"{"kind":"mf-ips","cap":30.0}"#).unwrap();
        assert_eq!(back, Method::MfIps { cap: 30.0 });
    }
}
