//! Pipeline commands behind the `tide` binary. Every command resolves a
//! [`RunConfig`], writes it to `<outdir>/<run-id>/config.json`, and puts its
//! artifacts next to it.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use tide_core::analysis::{
    per_item_rating_instant_pop_corr, popularity_buckets, quality_buckets, quality_rating_rcc, BucketReport,
    CorrelationReport, RccReport, HALF_YEAR_SECS,
};
use tide_core::baselines::{BaselineScorer, PopularityTable};
use tide_core::dataset::{load_interactions, n_core_filter, ChronoSplit, ColumnFormat, InteractionLog};
use tide_core::eval::{click_prediction_eval, preference_prediction_eval, EvalReport, Scorer, REPORT_SCHEMA_VERSION};
use tide_core::model::{build_conformity_index, Checkpoint, InferenceMode, TideScorer};
use tide_core::synthgen::{generate, SynthConfig};
use tide_core::trainer::{fit, FitResult, Method, TideVariant, TrainConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Hyperparameter lists for `grid`; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lr_emb: Vec<f64>,
    pub weight_decay_emb: Vec<f64>,
    pub lr_qb: Vec<f64>,
    pub init_qb: Vec<f64>,
    pub gamma: Vec<f64>,
    pub ips_cap: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Raw interaction file; alternatives are `split_dir` and `synth`.
    pub input: Option<PathBuf>,
    pub format: ColumnFormat,
    /// A directory written by `prepare`.
    pub split_dir: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    /// n-core filter threshold; 0 or 1 disables filtering.
    pub core_n: usize,
    pub parts: usize,
    /// Master seed: split, synthesis and training seeds all follow it.
    pub seed: u64,
    /// One of mf, mf-ips, pd, pda, tide, tide-noq, tide-noc, tide-fixq.
    pub method: String,
    pub gamma: f64,
    pub ips_cap: f64,
    pub fixed_quality: f64,
    /// Inference modes to evaluate; empty picks the method's defaults.
    pub modes: Vec<String>,
    pub train: TrainConfig,
    pub k: usize,
    pub pref_k: usize,
    pub positive_rating: u8,
    /// Instant-popularity window for `analyze`, in seconds.
    pub window: i64,
    pub p_threshold: f64,
    pub weekly: bool,
    pub n_buckets: usize,
    pub grid: GridSpec,
    pub outdir: PathBuf,
    /// Defaults to `<method>-s<seed>`.
    pub run_id: Option<String>,
    /// Checkpoint for `evaluate` / `analyze`; defaults to the run's own.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            input: None,
            format: ColumnFormat::default(),
            split_dir: None,
            synth: None,
            core_n: 0,
            parts: 10,
            seed: 0,
            method: "tide".into(),
            gamma: 0.1,
            ips_cap: 100.0,
            fixed_quality: 1.0,
            modes: Vec::new(),
            train: TrainConfig::default(),
            k: 20,
            pref_k: 3,
            positive_rating: 5,
            window: HALF_YEAR_SECS,
            p_threshold: 0.2,
            weekly: false,
            n_buckets: 30,
            grid: GridSpec::default(),
            outdir: PathBuf::from("runs"),
            run_id: None,
            checkpoint: None,
        }
    }
}

/// How a checkpoint is turned into scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    Tide(InferenceMode),
    Matching,
    Pd,
    Pda,
}

impl EvalMode {
    pub fn label(&self) -> String {
        match self {
            EvalMode::Tide(m) => m.label(),
            EvalMode::Matching => "e".into(),
            EvalMode::Pd => "pd".into(),
            EvalMode::Pda => "pda".into(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Pushes the master seed into the nested configs and checks the method.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        if let Some(s) = self.synth.as_mut() {
            s.seed = self.seed;
        }
        self.trainer_method()?;
        self.eval_modes()?;
        self.train.validate()?;
        ensure!(self.k >= 1 && self.pref_k >= 1, "k and pref_k must be >= 1");
        Ok(self)
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| format!("{}-s{}", self.method, self.seed))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.outdir.join(self.run_id())
    }

    pub fn trainer_method(&self) -> Result<Method> {
        Ok(match self.method.as_str() {
            "mf" => Method::Mf,
            "mf-ips" => Method::MfIps { cap: self.ips_cap },
            "pd" | "pda" => Method::Pd { gamma: self.gamma },
            "tide" => Method::TIDE,
            "tide-noq" => Method::Tide { variant: TideVariant::NoQuality },
            "tide-noc" => Method::Tide { variant: TideVariant::NoConformity },
            "tide-fixq" => Method::Tide { variant: TideVariant::FixedQuality { value: self.fixed_quality } },
            other => bail!("unknown method {other:?} (expected mf, mf-ips, pd, pda, tide, tide-noq, tide-noc, tide-fixq)"),
        })
    }

    /// Requested modes, checked against the method: TIDE modes need a TIDE
    /// checkpoint, PD/PDA scoring needs a PD checkpoint.
    pub fn eval_modes(&self) -> Result<Vec<EvalMode>> {
        let method = self.trainer_method()?;
        if self.modes.is_empty() {
            return Ok(match method {
                Method::Tide { .. } => vec![
                    EvalMode::Tide(InferenceMode::Full),
                    EvalMode::Tide(InferenceMode::Intervened),
                    EvalMode::Tide(InferenceMode::MatchingOnly),
                ],
                Method::Pd { .. } if self.method == "pda" => vec![EvalMode::Pda],
                Method::Pd { .. } => vec![EvalMode::Pd],
                _ => vec![EvalMode::Matching],
            });
        }
        self.modes
            .iter()
            .map(|m| {
                let mode = match (m.as_str(), &method) {
                    ("pd", Method::Pd { .. }) => EvalMode::Pd,
                    ("pda", Method::Pd { .. }) => EvalMode::Pda,
                    ("e", Method::Mf | Method::MfIps { .. }) => EvalMode::Matching,
                    (_, Method::Tide { .. }) => EvalMode::Tide(InferenceMode::from_str(m)?),
                    _ => bail!("mode {m:?} is not available for method {}", self.method),
                };
                Ok(mode)
            })
            .collect()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_run_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.run_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), config)?;
    Ok(dir)
}

/// The full interaction log named by the config, n-core filtered.
pub fn load_log(config: &RunConfig) -> Result<InteractionLog> {
    let log = match (&config.input, &config.synth) {
        (Some(path), None) => load_interactions(path, &config.format)?,
        (None, Some(synth)) => generate(synth)?.0,
        (Some(_), Some(_)) => bail!("config names both an input file and a synth config"),
        (None, None) => bail!("no data source: set input, synth or split_dir"),
    };
    Ok(if config.core_n > 1 { n_core_filter(&log, config.core_n)? } else { log })
}

/// The split named by the config: loaded from `split_dir`, or built fresh.
pub fn load_split(config: &RunConfig) -> Result<ChronoSplit> {
    match &config.split_dir {
        Some(dir) => Ok(ChronoSplit::load(dir)?),
        None => Ok(tide_core::chrono_split(&load_log(config)?, config.parts, config.seed)?),
    }
}

/// Load, filter, split and persist under `<run>/split`.
pub fn cmd_prepare(config: &RunConfig) -> Result<ChronoSplit> {
    let dir = create_run_dir(config)?;
    let split = tide_core::chrono_split(&load_log(config)?, config.parts, config.seed)?;
    split.save(dir.join("split"))?;
    let m = split.manifest();
    log::info!(
        "split: {} train / {} validation / {} test over {} users, {} items",
        m.counts.train,
        m.counts.validation,
        m.counts.test,
        m.n_users,
        m.n_items
    );
    Ok(split)
}

/// Synthesize a log; writes `interactions.tsv` and `truth.json`.
pub fn cmd_synth(config: &RunConfig) -> Result<PathBuf> {
    let mut config = config.clone();
    let synth = config.synth.get_or_insert_with(|| SynthConfig { seed: config.seed, ..Default::default() }).clone();
    let dir = create_run_dir(&config)?;
    let (log, truth) = generate(&synth)?;
    let path = dir.join("interactions.tsv");
    let mut out = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    log.write_labelled(&mut out)?;
    std::io::Write::flush(&mut out)?;
    write_json(&dir.join("truth.json"), &truth.to_file(&synth))?;
    log::info!("wrote {} events to {}", log.len(), path.display());
    Ok(path)
}

/// Trains the configured method; writes `checkpoint.json` and `history.csv`.
pub fn cmd_train(config: &RunConfig) -> Result<FitResult> {
    let dir = create_run_dir(config)?;
    let split = load_split(config)?;
    let method = config.trainer_method()?;
    let result = fit(&split, &method, &config.train)?;
    Checkpoint::new(method, result.anchor, result.params.clone()).save(dir.join("checkpoint.json"))?;
    write_text(&dir.join("history.csv"), &result.history_csv(config.train.eval_k))?;
    log::info!("best epoch {:?}, validation CP-Rec@{} {:?}", result.best_epoch, config.train.eval_k, result.best_val);
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub schema_version: u32,
    pub config: RunConfig,
    pub reports: Vec<EvalReport>,
}

fn checkpoint_path(config: &RunConfig) -> PathBuf {
    config.checkpoint.clone().unwrap_or_else(|| config.run_dir().join("checkpoint.json"))
}

/// Scores every requested mode on the test partition.
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Checkpoint, split: &ChronoSplit) -> Result<Vec<EvalReport>> {
    let params = &checkpoint.params;
    ensure!(
        params.n_users == split.n_users() && params.n_items == split.n_items(),
        "checkpoint shape {}x{} does not match the split {}x{}",
        params.n_users,
        params.n_items,
        split.n_users(),
        split.n_items()
    );
    let modes = config.eval_modes()?;
    let is_tide = checkpoint.method.is_tide();
    let index = if is_tide && modes.iter().any(|m| matches!(m, EvalMode::Tide(i) if i.needs_index())) {
        Some(build_conformity_index(&split.train, params.tau)?)
    } else {
        None
    };
    let popularity = PopularityTable::new(&split.train, &split.boundaries);
    // scores are taken at the end of the training window
    let query_time = split.train.t_max();
    let mut reports = Vec::new();
    for mode in modes {
        let scorer: Box<dyn Scorer + '_> = match mode {
            EvalMode::Tide(m) => {
                ensure!(is_tide, "mode {} needs a tide checkpoint", m.label());
                Box::new(TideScorer::new(params, index.as_ref(), m, query_time)?)
            }
            EvalMode::Matching => Box::new(BaselineScorer::mf(params)),
            EvalMode::Pd => Box::new(BaselineScorer::pd(params)),
            EvalMode::Pda => {
                let gamma = match checkpoint.method {
                    Method::Pd { gamma } => gamma,
                    _ => bail!("pda scoring needs a pd checkpoint"),
                };
                Box::new(BaselineScorer::pda(params, &popularity, gamma))
            }
        };
        let click = click_prediction_eval(scorer.as_ref(), &split.train, &split.test, config.k);
        let preference = preference_prediction_eval(scorer.as_ref(), &split.test, config.pref_k, config.positive_rating);
        reports.push(EvalReport { method: config.method.clone(), mode: mode.label(), click, preference });
    }
    Ok(reports)
}

/// Writes `eval.json` and `eval.csv` with one row per mode.
pub fn cmd_evaluate(config: &RunConfig) -> Result<Vec<EvalReport>> {
    let dir = create_run_dir(config)?;
    let path = checkpoint_path(config);
    let checkpoint = Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ensure!(
        checkpoint.method.name() == config.trainer_method()?.name(),
        "checkpoint was trained with {} but the config names {}",
        checkpoint.method.name(),
        config.method
    );
    let split = load_split(config)?;
    let reports = evaluate_checkpoint(config, &checkpoint, &split)?;
    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_json(
        &dir.join("eval.json"),
        &EvalFile { schema_version: REPORT_SCHEMA_VERSION, config: config.clone(), reports: reports.clone() },
    )?;
    write_text(&dir.join("eval.csv"), &csv)?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub schema_version: u32,
    pub popularity_rating_pearson: Option<f64>,
    pub n_correlated_items: usize,
    pub n_retained: usize,
    pub negative_fraction: Option<f64>,
    pub quality: Option<RccReport>,
    pub quality_rating_pearson: Option<f64>,
}

pub struct Analysis {
    pub popularity: BucketReport,
    pub correlation: CorrelationReport,
    pub quality: Option<(BucketReport, RccReport)>,
    pub summary: AnalysisSummary,
}

/// Popularity/rating diagnostics on the full log, plus learned-quality
/// diagnostics when a TIDE checkpoint is available.
pub fn cmd_analyze(config: &RunConfig) -> Result<Analysis> {
    let dir = create_run_dir(config)?;
    let out = dir.join("analysis");
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let log = match &config.split_dir {
        Some(_) => {
            let split = load_split(config)?;
            let mut records = split.train.records().to_vec();
            records.extend_from_slice(split.validation.records());
            records.extend_from_slice(split.test.records());
            InteractionLog::new(records, split.n_users(), split.n_items())?
        }
        None => load_log(config)?,
    };

    let popularity = popularity_buckets(&log, config.n_buckets);
    let correlation = per_item_rating_instant_pop_corr(&log, config.window, config.p_threshold, config.weekly);
    write_text(&out.join("popularity_buckets.csv"), &popularity.to_csv())?;
    write_text(&out.join("rating_pop_corr_hist.csv"), &correlation.histogram.to_csv())?;
    let mut items = String::from("item,n,r,p,retained\n");
    for c in &correlation.items {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        items.push_str(&format!("{},{},{},{},{}\n", c.item, c.n, opt(c.r), opt(c.p), c.retained));
    }
    write_text(&out.join("rating_pop_corr_items.csv"), &items)?;

    let path = checkpoint_path(config);
    let quality = if path.exists() {
        let checkpoint = Checkpoint::load(&path)?;
        if checkpoint.method.is_tide() && checkpoint.params.n_items == log.n_items() {
            let buckets = quality_buckets(&checkpoint.params, &log, config.n_buckets);
            write_text(&out.join("quality_buckets.csv"), &buckets.to_csv())?;
            Some((buckets, quality_rating_rcc(&checkpoint.params, &log)))
        } else {
            None
        }
    } else {
        None
    };

    let summary = AnalysisSummary {
        schema_version: REPORT_SCHEMA_VERSION,
        popularity_rating_pearson: popularity.key_rating_pearson(),
        n_correlated_items: correlation.items.len(),
        n_retained: correlation.n_retained,
        negative_fraction: correlation.negative_fraction(),
        quality: quality.as_ref().map(|q| q.1.clone()),
        quality_rating_pearson: quality.as_ref().and_then(|q| q.0.key_rating_pearson()),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(Analysis { popularity, correlation, quality, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr_emb: f64,
    pub weight_decay_emb: f64,
    pub lr_qb: f64,
    pub init_qb: f64,
    pub gamma: f64,
    pub ips_cap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub point: GridPoint,
    pub best_epoch: Option<usize>,
    pub val_cp_rec: Option<f64>,
}

fn axis(values: &[f64], base: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// The cartesian product of the grid, in declaration order.
pub fn grid_points(config: &RunConfig) -> Vec<GridPoint> {
    let g = &config.grid;
    let t = &config.train;
    let mut points = Vec::new();
    for &lr_emb in &axis(&g.lr_emb, t.lr_emb) {
        for &weight_decay_emb in &axis(&g.weight_decay_emb, t.weight_decay_emb) {
            for &lr_qb in &axis(&g.lr_qb, t.lr_qb) {
                for &init_qb in &axis(&g.init_qb, t.init_qb) {
                    for &gamma in &axis(&g.gamma, config.gamma) {
                        for &ips_cap in &axis(&g.ips_cap, config.ips_cap) {
                            points.push(GridPoint { lr_emb, weight_decay_emb, lr_qb, init_qb, gamma, ips_cap });
                        }
                    }
                }
            }
        }
    }
    points
}

impl RunConfig {
    pub fn with_point(&self, p: &GridPoint) -> RunConfig {
        let mut c = self.clone();
        c.train.lr_emb = p.lr_emb;
        c.train.weight_decay_emb = p.weight_decay_emb;
        c.train.lr_qb = p.lr_qb;
        c.train.init_qb = p.init_qb;
        c.gamma = p.gamma;
        c.ips_cap = p.ips_cap;
        c.grid = GridSpec::default();
        c
    }
}

/// Trains every grid point and ranks them by validation CP-Rec. The best
/// point's config and checkpoint are written to the run directory.
pub fn cmd_grid(config: &RunConfig) -> Result<Vec<LeaderboardEntry>> {
    let dir = create_run_dir(config)?;
    let split = load_split(config)?;
    let mut board = Vec::new();
    let mut best: Option<(f64, RunConfig, FitResult)> = None;
    for point in grid_points(config) {
        let run = config.with_point(&point).resolve()?;
        let result = fit(&split, &run.trainer_method()?, &run.train)?;
        log::info!("{point:?}: {:?}", result.best_val);
        let score = result.best_val.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, run, result.clone()));
        }
        board.push(LeaderboardEntry { point, best_epoch: result.best_epoch, val_cp_rec: result.best_val });
    }
    // stable sort keeps declaration order among ties
    board.sort_by(|a, b| {
        let key = |e: &LeaderboardEntry| e.val_cp_rec.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });

    let mut csv = String::from("rank,lr_emb,weight_decay_emb,lr_qb,init_qb,gamma,ips_cap,best_epoch,val_cp_rec\n");
    for (rank, e) in board.iter().enumerate() {
        let p = &e.point;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            p.lr_emb,
            p.weight_decay_emb,
            p.lr_qb,
            p.init_qb,
            p.gamma,
            p.ips_cap,
            e.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            e.val_cp_rec.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    write_text(&dir.join("leaderboard.csv"), &csv)?;
    write_json(&dir.join("leaderboard.json"), &board)?;
    if let Some((_, run, result)) = best {
        write_json(&dir.join("best_config.json"), &run)?;
        Checkpoint::new(run.trainer_method()?, result.anchor, result.params.clone())
            .save(dir.join("checkpoint.json"))?;
        write_text(&dir.join("history.csv"), &result.history_csv(run.train.eval_k))?;
    }
    Ok(board)
}
