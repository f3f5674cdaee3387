//! Popularity-bias diagnostics: rating vs popularity buckets, correlation
//! coefficients, instant popularity, and how well learned quality tracks
//! average ratings.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{InteractionLog, Timestamp};
use crate::model::{softplus, TideParams};

/// 182.5 days in seconds.
pub const HALF_YEAR_SECS: Timestamp = 15_768_000;

/// Sample Pearson correlation; `None` for mismatched or short input or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pair counts behind Kendall's tau-b.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TauCounts {
    pub n_pairs: u64,
    /// Pairs tied in the first argument.
    pub ties_a: u64,
    /// Pairs tied in the second argument.
    pub ties_b: u64,
    /// Pairs tied in both.
    pub ties_both: u64,
    /// Concordant minus discordant pairs.
    pub balance: i64,
}

impl TauCounts {
    pub fn tau_b(&self) -> Option<f64> {
        let da = self.n_pairs - self.ties_a;
        let db = self.n_pairs - self.ties_b;
        if da == 0 || db == 0 {
            return None;
        }
        Some(self.balance as f64 / ((da as f64) * (db as f64)).sqrt())
    }
}

fn tied_pairs(run: u64) -> u64 {
    run * run.saturating_sub(1) / 2
}

/// Knight's O(n log n) pair counting: sort by (a, b), then count the
/// inversions of b with a merge sort.
pub fn kendall_counts(a: &[f64], b: &[f64]) -> TauCounts {
    assert_eq!(a.len(), b.len(), "kendall_tau needs equal lengths");
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));

    let mut ties_a = 0;
    let mut ties_both = 0;
    let mut run_a = 1u64;
    let mut run_ab = 1u64;
    for w in 1..n {
        let (p, q) = (idx[w - 1], idx[w]);
        if a[p] == a[q] {
            run_a += 1;
            if b[p] == b[q] {
                run_ab += 1;
            } else {
                ties_both += tied_pairs(run_ab);
                run_ab = 1;
            }
        } else {
            ties_a += tied_pairs(run_a);
            ties_both += tied_pairs(run_ab);
            run_a = 1;
            run_ab = 1;
        }
    }
    ties_a += tied_pairs(run_a);
    ties_both += tied_pairs(run_ab);

    let mut seq: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let swaps = merge_count(&mut seq);

    let mut ties_b = 0;
    let mut run_b = 1u64;
    for w in 1..n {
        if seq[w - 1] == seq[w] {
            run_b += 1;
        } else {
            ties_b += tied_pairs(run_b);
            run_b = 1;
        }
    }
    ties_b += tied_pairs(run_b);

    let n_pairs = tied_pairs(n as u64);
    // concordant - discordant = pairs untied in both minus twice the discordant ones
    let untied = n_pairs as i64 - ties_a as i64 - ties_b as i64 + ties_both as i64;
    TauCounts { n_pairs, ties_a, ties_b, ties_both, balance: untied - 2 * swaps as i64 }
}

/// Sorts ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..]);
    v.copy_from_slice(&merged);
    swaps
}

/// Tie-corrected Kendall tau-b; `None` if either input is constant or shorter than 2.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || a.len() != b.len() {
        return None;
    }
    kendall_counts(a, b).tau_b()
}

/// Two-sided p-value of a Pearson `r` over `n` points via the t statistic
/// with `n - 2` degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let dof = (n - 2) as f64;
    let t = r * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Items' click times (and ratings), sorted per item.
#[derive(Clone, Debug)]
pub struct ItemTimeline {
    clicks: Vec<Vec<(Timestamp, Option<u8>)>>,
}

impl ItemTimeline {
    pub fn new(log: &InteractionLog) -> Self {
        let mut clicks = vec![Vec::new(); log.n_items()];
        for r in log.records() {
            clicks[r.item].push((r.time, r.rating));
        }
        ItemTimeline { clicks }
    }

    /// Clicks on `item` in the window `[t - window, t)`.
    pub fn instant_popularity(&self, item: usize, t: Timestamp, window: Timestamp) -> usize {
        let c = &self.clicks[item];
        let end = c.partition_point(|&(tl, _)| tl < t);
        let start = c.partition_point(|&(tl, _)| tl < t - window);
        end - start
    }

    pub fn clicks(&self, item: usize) -> &[(Timestamp, Option<u8>)] {
        &self.clicks[item]
    }
}

/// Convenience wrapper; build an [`ItemTimeline`] once for repeated queries.
pub fn instant_popularity(log: &InteractionLog, item: usize, t: Timestamp, window: Timestamp) -> usize {
    log.records()
        .iter()
        .filter(|r| r.item == item && r.time < t && r.time >= t - window)
        .count()
}

/// Per-bucket average of item mean ratings, with items bucketed by a key
/// (popularity, learned quality) over uniform intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub n_buckets: usize,
    /// `n_buckets + 1` cut points.
    pub bucket_bounds: Vec<f64>,
    /// `None` for empty buckets.
    pub avg_rating: Vec<Option<f64>>,
    pub item_counts: Vec<usize>,
}

impl BucketReport {
    /// Pearson r between bucket midpoints and bucket average ratings over
    /// occupied buckets.
    pub fn key_rating_pearson(&self) -> Option<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .avg_rating
            .iter()
            .enumerate()
            .filter_map(|(b, avg)| avg.map(|v| ((self.bucket_bounds[b] + self.bucket_bounds[b + 1]) / 2.0, v)))
            .unzip();
        pearson(&xs, &ys)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,lower,upper,items,avg_rating\n");
        for b in 0..self.n_buckets {
            let avg = self.avg_rating[b].map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{b},{},{},{},{avg}\n",
                self.bucket_bounds[b],
                self.bucket_bounds[b + 1],
                self.item_counts[b]
            ));
        }
        out
    }
}

/// Buckets `(key, value)` pairs uniformly over `[min key, max key]`.
pub fn bucketize(keys: &[f64], values: &[f64], n_buckets: usize) -> BucketReport {
    let n_buckets = n_buckets.max(1);
    let lo = keys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if keys.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let width = (hi - lo) / n_buckets as f64;
    let bucket_bounds: Vec<f64> = (0..=n_buckets)
        .map(|b| if b == n_buckets { hi } else { lo + width * b as f64 })
        .collect();
    let mut sums = vec![0.0; n_buckets];
    let mut item_counts = vec![0usize; n_buckets];
    for (&k, &v) in keys.iter().zip(values) {
        let b = if width > 0.0 { (((k - lo) / width) as usize).min(n_buckets - 1) } else { 0 };
        sums[b] += v;
        item_counts[b] += 1;
    }
    let avg_rating = sums
        .iter()
        .zip(&item_counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    BucketReport { n_buckets, bucket_bounds, avg_rating, item_counts }
}

/// Popularity (all clicks) and mean rating of every item with at least one rating.
pub fn item_rating_stats(log: &InteractionLog) -> Vec<(usize, f64, f64)> {
    let counts = log.item_counts();
    let mut sums = vec![0.0; log.n_items()];
    let mut rated = vec![0usize; log.n_items()];
    for r in log.records() {
        if let Some(rating) = r.rating {
            sums[r.item] += rating as f64;
            rated[r.item] += 1;
        }
    }
    (0..log.n_items())
        .filter(|&i| rated[i] > 0)
        .map(|i| (i, counts[i] as f64, sums[i] / rated[i] as f64))
        .collect()
}

pub fn popularity_buckets(log: &InteractionLog, n_buckets: usize) -> BucketReport {
    let stats = item_rating_stats(log);
    let keys: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let values: Vec<f64> = stats.iter().map(|s| s.2).collect();
    bucketize(&keys, &values, n_buckets)
}

/// As [`popularity_buckets`], keyed by learned quality `softplus(q_raw)`.
pub fn quality_buckets(params: &TideParams, log: &InteractionLog, n_buckets: usize) -> BucketReport {
    let stats = item_rating_stats(log);
    let keys: Vec<f64> = stats.iter().map(|s| softplus(params.q_raw[s.0])).collect();
    let values: Vec<f64> = stats.iter().map(|s| s.2).collect();
    bucketize(&keys, &values, n_buckets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemCorrelation {
    pub item: usize,
    pub n: usize,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub retained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{c}\n", self.edges[b], self.edges[b + 1]));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub window: Timestamp,
    pub p_threshold: f64,
    pub items: Vec<ItemCorrelation>,
    /// Retained coefficients over 20 equal bins on [-1, 1].
    pub histogram: Histogram,
    pub n_retained: usize,
    pub n_negative: usize,
}

impl CorrelationReport {
    /// Share of retained items whose coefficient is negative.
    pub fn negative_fraction(&self) -> Option<f64> {
        (self.n_retained > 0).then(|| self.n_negative as f64 / self.n_retained as f64)
    }
}

/// Per item, Pearson r between each rated click's rating and the item's
/// instant popularity at that moment. Items need at least 3 rated clicks;
/// items with `p <= p_threshold` are retained. With `weekly`, points are
/// per-week averages instead of single clicks.
pub fn per_item_rating_instant_pop_corr(
    log: &InteractionLog,
    window: Timestamp,
    p_threshold: f64,
    weekly: bool,
) -> CorrelationReport {
    const WEEK: Timestamp = 7 * 86_400;
    let timeline = ItemTimeline::new(log);
    let mut items = Vec::new();
    for item in 0..log.n_items() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &(t, rating) in timeline.clicks(item) {
            if let Some(rating) = rating {
                xs.push(timeline.instant_popularity(item, t, window) as f64);
                ys.push(rating as f64);
            }
        }
        if xs.len() < 3 {
            continue;
        }
        if weekly {
            let rated: Vec<Timestamp> = timeline.clicks(item).iter().filter(|c| c.1.is_some()).map(|c| c.0).collect();
            (xs, ys) = weekly_means(&rated, &xs, &ys, WEEK);
            if xs.len() < 3 {
                continue;
            }
        }
        let n = xs.len();
        let r = pearson(&xs, &ys);
        let p = r.and_then(|r| pearson_p_value(r, n));
        let retained = p.is_some_and(|p| p <= p_threshold);
        items.push(ItemCorrelation { item, n, r, p, retained });
    }

    let bins = 20;
    let edges: Vec<f64> = (0..=bins).map(|b| -1.0 + 2.0 * b as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    let mut n_retained = 0;
    let mut n_negative = 0;
    for c in items.iter().filter(|c| c.retained) {
        let r = c.r.expect("retained items have r");
        counts[(((r + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1)] += 1;
        n_retained += 1;
        if r < 0.0 {
            n_negative += 1;
        }
    }
    CorrelationReport {
        window,
        p_threshold,
        items,
        histogram: Histogram { edges, counts },
        n_retained,
        n_negative,
    }
}

fn weekly_means(times: &[Timestamp], xs: &[f64], ys: &[f64], week: Timestamp) -> (Vec<f64>, Vec<f64>) {
    let mut out_x = Vec::new();
    let mut out_y = Vec::new();
    let mut k = 0;
    while k < times.len() {
        let w = times[k].div_euclid(week);
        let start = k;
        while k < times.len() && times[k].div_euclid(week) == w {
            k += 1;
        }
        let n = (k - start) as f64;
        out_x.push(xs[start..k].iter().sum::<f64>() / n);
        out_y.push(ys[start..k].iter().sum::<f64>() / n);
    }
    (out_x, out_y)
}

/// Kendall tau of learned quality and of raw popularity against average
/// rating, over items with at least one rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RccReport {
    pub rcc_q_ar: Option<f64>,
    pub rcc_p_ar: Option<f64>,
    pub n_items: usize,
}

pub fn quality_rating_rcc(params: &TideParams, log: &InteractionLog) -> RccReport {
    let stats = item_rating_stats(log);
    let quality: Vec<f64> = stats.iter().map(|s| softplus(params.q_raw[s.0])).collect();
    let popularity: Vec<f64> = stats.iter().map(|s| s.1).collect();
    let avg: Vec<f64> = stats.iter().map(|s| s.2).collect();
    RccReport {
        rcc_q_ar: kendall_tau(&quality, &avg),
        rcc_p_ar: kendall_tau(&popularity, &avg),
        n_items: stats.len(),
    }
}
