//! Browser demo. Three operations, each a plain function returning a
//! serialisable result plus a `wasm_bindgen` wrapper that hands JSON to the
//! page:
//!
//! - [`conformity_curve`]: the decayed conformity term of one item over time;
//! - [`score_by_mode`]: one user-item score under every inference mode;
//! - [`simulate_and_train`]: a small synthetic run comparing learned
//!   quality and raw popularity against the planted quality.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use tide_core::analysis::kendall_tau;
use tide_core::dataset::{chrono_split, Interaction, InteractionLog, Timestamp};
use tide_core::eval::preference_prediction_eval;
use tide_core::model::{build_conformity_index, predict, softplus_inv, InferenceMode, TideParams, TideScorer};
use tide_core::synthgen::{generate, SynthConfig};
use tide_core::trainer::{fit, Method, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: Timestamp,
    pub conformity: f64,
    pub clicks_before: usize,
}

fn single_item_log(click_times: &[Timestamp]) -> Result<InteractionLog, String> {
    if click_times.iter().any(|&t| t < 0) {
        return Err("click times must be non-negative".into());
    }
    let records = click_times.iter().map(|&time| Interaction { user: 0, item: 0, time, rating: None }).collect();
    InteractionLog::new(records, 1, 1).map_err(|e| e.to_string())
}

/// `beta * sum_{t_l < t} exp(-(t - t_l) / tau)` sampled at `n_points` times
/// evenly spaced over `[0, t_end]`.
pub fn conformity_curve(
    click_times: &[Timestamp],
    beta: f64,
    tau: f64,
    t_end: Timestamp,
    n_points: usize,
) -> Result<Vec<CurvePoint>, String> {
    if beta.is_nan() || beta < 0.0 || n_points < 2 || t_end <= 0 {
        return Err("need beta >= 0, at least 2 points and a positive end time".into());
    }
    let index = build_conformity_index(&single_item_log(click_times)?, tau).map_err(|e| e.to_string())?;
    Ok((0..n_points)
        .map(|k| {
            let t = (t_end as f64 * k as f64 / (n_points - 1) as f64).round() as Timestamp;
            CurvePoint { t, conformity: beta * index.decayed_sum(0, t), clicks_before: index.count_before(0, t) }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeScore {
    pub mode: String,
    pub score: f64,
}

/// Scores one user-item pair with quality `quality`, conformity scale
/// `beta` and matching score `matching` under each inference mode.
pub fn score_by_mode(
    quality: f64,
    beta: f64,
    matching: f64,
    click_times: &[Timestamp],
    tau: f64,
    t: Timestamp,
) -> Result<Vec<ModeScore>, String> {
    if !(quality > 0.0 && beta > 0.0) {
        return Err("quality and beta must be positive".into());
    }
    let mut params = TideParams::zeros(1, 1, 1, tau);
    params.user_emb[0] = matching;
    params.item_emb[0] = 1.0;
    params.q_raw[0] = softplus_inv(quality);
    params.beta_raw[0] = softplus_inv(beta);
    let index = if click_times.is_empty() {
        None
    } else {
        Some(build_conformity_index(&single_item_log(click_times)?, tau).map_err(|e| e.to_string())?)
    };
    let modes = [
        InferenceMode::Full,
        InferenceMode::Intervened,
        InferenceMode::MatchingOnly,
        InferenceMode::NoQuality,
        InferenceMode::NoConformity,
    ];
    modes
        .into_iter()
        .map(|mode| {
            let score = match (&index, mode) {
                // an item nobody clicked has no conformity at all
                (None, InferenceMode::Full) => predict(&params, None, 0, 0, t, InferenceMode::Intervened),
                (None, InferenceMode::NoQuality) => Ok(0.0),
                _ => predict(&params, index.as_ref(), 0, 0, t, mode),
            }
            .map_err(|e| e.to_string())?;
            Ok(ModeScore { mode: mode.label(), score })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub true_quality: Vec<f64>,
    pub learned_quality: Vec<f64>,
    pub popularity: Vec<f64>,
    pub kendall_learned: Option<f64>,
    pub kendall_popularity: Option<f64>,
    pub epochs_run: usize,
    /// PP-Pre@3 on the test users per inference mode.
    pub preference_precision: Vec<ModeScore>,
}

/// Generates a small log with planted quality and conformity, trains TIDE
/// on it, and reports how well learned quality ranks items.
pub fn simulate_and_train(
    n_users: usize,
    n_items: usize,
    n_events: usize,
    beta_scale: f64,
    epochs: usize,
    seed: u64,
) -> Result<SimulationResult, String> {
    let synth = SynthConfig {
        n_users,
        n_items,
        n_events,
        beta_scale,
        horizon: 2.5e7,
        seed,
        ..Default::default()
    };
    let (log, truth) = generate(&synth).map_err(|e| e.to_string())?;
    let split = chrono_split(&log, 10, seed).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        lr_emb: 5e-3,
        lr_qb: 5e-2,
        batch_size: 512,
        embed_dim: 8,
        epochs,
        early_stop_patience: 5,
        tau: synth.tau,
        seed,
        ..Default::default()
    };
    let fitted = fit(&split, &Method::TIDE, &config).map_err(|e| e.to_string())?;
    let learned_quality: Vec<f64> = (0..n_items).map(|i| fitted.params.quality(i)).collect();
    let popularity: Vec<f64> = log.item_counts().iter().map(|&c| c as f64).collect();

    let index = build_conformity_index(&split.train, synth.tau).map_err(|e| e.to_string())?;
    let t = split.train.t_max();
    let preference_precision = [InferenceMode::Full, InferenceMode::Intervened, InferenceMode::MatchingOnly]
        .into_iter()
        .map(|mode| {
            let scorer = TideScorer::new(&fitted.params, Some(&index), mode, t).map_err(|e| e.to_string())?;
            let report = preference_prediction_eval(&scorer, &split.test, 3, 5);
            Ok(ModeScore { mode: mode.label(), score: report.precision })
        })
        .collect::<Result<Vec<_>, String>>()?;

    Ok(SimulationResult {
        kendall_learned: kendall_tau(&learned_quality, &truth.true_quality),
        kendall_popularity: kendall_tau(&popularity, &truth.true_quality),
        true_quality: truth.true_quality,
        learned_quality,
        popularity,
        epochs_run: fitted.history.len(),
        preference_precision,
    })
}

fn to_json<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(value) => serde_json::to_string(&value).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(message) => error_json(&message),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

fn times(values: &[f64]) -> Vec<Timestamp> {
    values.iter().map(|&t| t.round() as Timestamp).collect()
}

#[wasm_bindgen(js_name = conformityCurve)]
pub fn conformity_curve_json(click_times: &[f64], beta: f64, tau: f64, t_end: f64, n_points: usize) -> String {
    to_json(conformity_curve(&times(click_times), beta, tau, t_end.round() as Timestamp, n_points))
}

#[wasm_bindgen(js_name = scoreByMode)]
pub fn score_by_mode_json(quality: f64, beta: f64, matching: f64, click_times: &[f64], tau: f64, t: f64) -> String {
    to_json(score_by_mode(quality, beta, matching, &times(click_times), tau, t.round() as Timestamp))
}

#[wasm_bindgen(js_name = simulateAndTrain)]
pub fn simulate_and_train_json(
    n_users: usize,
    n_items: usize,
    n_events: usize,
    beta_scale: f64,
    epochs: usize,
    seed: u32,
) -> String {
    to_json(simulate_and_train(n_users, n_items, n_events, beta_scale, epochs, u64::from(seed)))
}
