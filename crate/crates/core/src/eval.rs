//! Top-K ranking metrics and the click / preference prediction protocols.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionLog;

/// Anything that can score the full item catalogue for a user.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;

    /// Fills `out[i]` with the score of item `i`; `out.len() == n_items()`.
    fn score_into(&self, user: usize, out: &mut [f64]);
}

/// Adapts a closure `(user, item) -> score`.
pub struct FnScorer<F> {
    n_items: usize,
    f: F,
}

impl<F: Fn(usize, usize) -> f64 + Sync> FnScorer<F> {
    pub fn new(n_items: usize, f: F) -> Self {
        FnScorer { n_items, f }
    }
}

impl<F: Fn(usize, usize) -> f64 + Sync> Scorer for FnScorer<F> {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn score_into(&self, user: usize, out: &mut [f64]) {
        for (item, slot) in out.iter_mut().enumerate() {
            *slot = (self.f)(user, item);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Descending score, ties by ascending item id.
fn by_score_then_id(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn top_k_of(user: usize, mut scored: Vec<(f64, usize)>, k: usize) -> Option<RankedList> {
    if scored.is_empty() {
        return None;
    }
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_score_then_id);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_score_then_id);
    Some(RankedList {
        user,
        items: scored.iter().map(|&(_, i)| i).collect(),
        scores: scored.iter().map(|&(s, _)| s).collect(),
    })
}

/// Top-`k` items for `user` among all items not in `exclusions` (sorted).
/// `None` when nothing is left to rank.
pub fn rank_topk<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    k: usize,
    exclusions: &[usize],
) -> Option<RankedList> {
    let mut scores = vec![0.0; scorer.n_items()];
    scorer.score_into(user, &mut scores);
    rank_scores(user, &scores, k, exclusions)
}

pub fn rank_scores(user: usize, scores: &[f64], k: usize, exclusions: &[usize]) -> Option<RankedList> {
    let scored: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| exclusions.binary_search(i).is_err())
        .map(|(i, &s)| (s, i))
        .collect();
    top_k_of(user, scored, k.max(1))
}

/// Top-`k` restricted to `candidates`.
pub fn rank_candidates(user: usize, scores: &[f64], k: usize, candidates: &[usize]) -> Option<RankedList> {
    let scored = candidates.iter().map(|&i| (scores[i], i)).collect();
    top_k_of(user, scored, k.max(1))
}

fn hits(top: &RankedList, relevant: &[usize], k: usize) -> usize {
    top.items.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count()
}

/// `|top_k ∩ relevant| / |relevant|`; `relevant` sorted. `None` if nothing is relevant.
pub fn recall_at_k(top: &RankedList, relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(hits(top, relevant, k) as f64 / relevant.len() as f64)
}

/// `|top_k ∩ relevant| / k`.
pub fn precision_at_k(top: &RankedList, relevant: &[usize], k: usize) -> f64 {
    hits(top, relevant, k) as f64 / k as f64
}

/// Binary-gain NDCG with the ideal list truncated at `min(k, |relevant|)`.
pub fn ndcg_at_k(top: &RankedList, relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = top
        .items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(rank, _)| 1.0 / ((rank + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(|rank| 1.0 / ((rank + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClickReport {
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub n_users: usize,
    /// Target users with no relevant unseen item or no candidates.
    pub n_skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceReport {
    pub k: usize,
    pub positive_rating: u8,
    pub recall: f64,
    pub precision: f64,
    pub n_users: usize,
    pub n_skipped: usize,
}

/// Click prediction: rank every item the user has not clicked in `train`
/// and score against the user's clicks in `target`. Relevant items are the
/// target items outside the user's training positives, since those are the
/// only ones that can be ranked.
pub fn click_prediction_eval<S: Scorer + ?Sized>(
    scorer: &S,
    train: &InteractionLog,
    target: &InteractionLog,
    k: usize,
) -> ClickReport {
    let seen = train.user_items();
    let wanted = target.user_items();
    let users = target.users();
    let per_user: Vec<Option<(f64, f64, f64)>> = users
        .par_iter()
        .map_init(
            || vec![0.0; scorer.n_items()],
            |scores, &user| {
                let relevant: Vec<usize> = wanted[user]
                    .iter()
                    .copied()
                    .filter(|i| seen[user].binary_search(i).is_err())
                    .collect();
                if relevant.is_empty() {
                    return None;
                }
                scorer.score_into(user, scores);
                let top = rank_scores(user, scores, k, &seen[user])?;
                Some((
                    recall_at_k(&top, &relevant, k)?,
                    precision_at_k(&top, &relevant, k),
                    ndcg_at_k(&top, &relevant, k)?,
                ))
            },
        )
        .collect();
    let mut report = ClickReport { k, ..Default::default() };
    for metrics in &per_user {
        match metrics {
            Some((r, p, n)) => {
                report.recall += r;
                report.precision += p;
                report.ndcg += n;
                report.n_users += 1;
            }
            None => report.n_skipped += 1,
        }
    }
    if report.n_users > 0 {
        let n = report.n_users as f64;
        report.recall /= n;
        report.precision /= n;
        report.ndcg /= n;
    }
    report
}

/// Preference prediction: rank each user's rated `target` items and count
/// those rated `positive_rating` in the top `k`. Users whose rated items are
/// all positive or all negative are skipped. When an item was rated more than
/// once the latest rating counts.
pub fn preference_prediction_eval<S: Scorer + ?Sized>(
    scorer: &S,
    target: &InteractionLog,
    k: usize,
    positive_rating: u8,
) -> PreferenceReport {
    let mut rated: BTreeMap<usize, BTreeMap<usize, u8>> = BTreeMap::new();
    for r in target.records() {
        if let Some(rating) = r.rating {
            rated.entry(r.user).or_default().insert(r.item, rating);
        }
    }
    let rated: Vec<(usize, BTreeMap<usize, u8>)> = rated.into_iter().collect();
    let per_user: Vec<Option<(f64, f64)>> = rated
        .par_iter()
        .map_init(
            || vec![0.0; scorer.n_items()],
            |scores, (user, items)| {
                let candidates: Vec<usize> = items.keys().copied().collect();
                let relevant: Vec<usize> = items
                    .iter()
                    .filter(|(_, &r)| r == positive_rating)
                    .map(|(&i, _)| i)
                    .collect();
                if relevant.is_empty() || relevant.len() == candidates.len() {
                    return None;
                }
                scorer.score_into(*user, scores);
                let top = rank_candidates(*user, scores, k, &candidates)?;
                Some((recall_at_k(&top, &relevant, k)?, precision_at_k(&top, &relevant, k)))
            },
        )
        .collect();
    let mut report = PreferenceReport { k, positive_rating, ..Default::default() };
    for metrics in &per_user {
        match metrics {
            Some((r, p)) => {
                report.recall += r;
                report.precision += p;
                report.n_users += 1;
            }
            None => report.n_skipped += 1,
        }
    }
    if report.n_users > 0 {
        report.recall /= report.n_users as f64;
        report.precision /= report.n_users as f64;
    }
    report
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Both tasks for one method under one inference mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mode: String,
    pub click: ClickReport,
    pub preference: PreferenceReport,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,mode,cp_k,cp_rec,cp_pre,cp_ndcg,cp_users,pp_k,pp_rec,pp_pre,pp_users";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.mode,
            self.click.k,
            self.click.recall,
            self.click.precision,
            self.click.ndcg,
            self.click.n_users,
            self.preference.k,
            self.preference.recall,
            self.preference.precision,
            self.preference.n_users
        )
    }
}
