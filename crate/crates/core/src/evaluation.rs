//! Full-rank top-K evaluation with Recall@K and NDCG@K.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::objectives::predict_score;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Val,
    Test,
}

impl Phase {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "val" | "validation" => Ok(Phase::Val),
            "test" => Ok(Phase::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown phase {other:?} (expected val or test)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Val => "val",
            Phase::Test => "test",
        }
    }
}

/// Indices of the `k` highest-scoring items not in `exclude`, best first.
/// Equal scores rank the smaller item index first.
pub fn rank_items(user: &[f64], items: &Matrix, exclude: &BTreeSet<usize>, k: usize) -> Result<Vec<usize>> {
    let available = items.rows() - exclude.iter().filter(|&&i| i < items.rows()).count();
    if k > available {
        return Err(Error::InvalidArgument(format!(
            "K = {k} exceeds the {available} rankable items"
        )));
    }
    let mut scored: Vec<(f64, usize)> = (0..items.rows())
        .filter(|i| !exclude.contains(i))
        .map(|i| (predict_score(user, items.row(i)), i))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// `|topk ∩ relevant| / |relevant|`.
pub fn recall_at_k(topk: &[usize], relevant: &BTreeSet<usize>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG with `K = topk.len()`.
pub fn ndcg_at_k(topk: &[usize], relevant: &BTreeSet<usize>) -> f64 {
    let ideal = relevant.len().min(topk.len());
    if ideal == 0 {
        return 0.0;
    }
    let dcg: f64 = topk
        .iter()
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..ideal).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    /// Top-`max(K)` ranking.
    pub topk: Vec<usize>,
    /// `(recall, ndcg)` per entry of `RankingResult::ks`.
    pub metrics: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub ks: Vec<usize>,
    pub users: Vec<UserMetrics>,
    pub mean_recall: Vec<f64>,
    pub mean_ndcg: Vec<f64>,
}

impl RankingResult {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.mean_recall[p])
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.mean_ndcg[p])
    }

    /// `k,recall,ndcg` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,recall,ndcg\n");
        for (p, k) in self.ks.iter().enumerate() {
            let _ = writeln!(s, "{k},{:.6},{:.6}", self.mean_recall[p], self.mean_ndcg[p]);
        }
        s
    }

    pub fn per_user_csv(&self) -> String {
        let mut s = String::from("user");
        for k in &self.ks {
            let _ = write!(s, ",recall@{k},ndcg@{k}");
        }
        s.push('\n');
        for u in &self.users {
            let _ = write!(s, "{}", u.user);
            for (r, n) in &u.metrics {
                let _ = write!(s, ",{r:.6},{n:.6}");
            }
            s.push('\n');
        }
        s
    }
}

/// Ranks every item for each user holding interactions in `phase`.
///
/// Training items are excluded; test-phase ranking also excludes
/// validation items. Users without phase interactions are skipped.
pub fn evaluate(
    user_emb: &Matrix,
    item_emb: &Matrix,
    data: &SplitDataset,
    ks: &[usize],
    phase: Phase,
) -> Result<RankingResult> {
    if user_emb.rows() != data.n_users || item_emb.rows() != data.m_items {
        return Err(Error::Incompatible(format!(
            "embeddings for {} users / {} items, dataset has {} / {}",
            user_emb.rows(),
            item_emb.rows(),
            data.n_users,
            data.m_items
        )));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let kmax = *ks
        .last()
        .ok_or_else(|| Error::InvalidArgument("no K requested".into()))?;

    let mut exclude = SplitDataset::items_by_user(&data.train, data.n_users);
    let target = match phase {
        Phase::Val => &data.val,
        Phase::Test => {
            for &(u, i) in &data.val {
                exclude[u].insert(i);
            }
            &data.test
        }
    };
    let relevant = SplitDataset::items_by_user(target, data.n_users);
    let evaluated: Vec<usize> = (0..data.n_users).filter(|&u| !relevant[u].is_empty()).collect();

    let users: Vec<UserMetrics> = evaluated
        .par_iter()
        .map(|&u| {
            let k = kmax.min(data.m_items - exclude[u].len());
            let topk = rank_items(user_emb.row(u), item_emb, &exclude[u], k)?;
            let metrics = ks
                .iter()
                .map(|&k| {
                    let cut = &topk[..k.min(topk.len())];
                    (recall_at_k(cut, &relevant[u]), ndcg_at_k(cut, &relevant[u]))
                })
                .collect();
            Ok(UserMetrics {
                user: u,
                topk,
                metrics,
            })
        })
        .collect::<Result<_>>()?;

    let count = users.len().max(1) as f64;
    let mean = |pick: fn(&(f64, f64)) -> f64, p: usize| {
        users.iter().map(|u| pick(&u.metrics[p])).sum::<f64>() / count
    };
    let mean_recall = (0..ks.len()).map(|p| mean(|m| m.0, p)).collect();
    let mean_ndcg = (0..ks.len()).map(|p| mean(|m| m.1, p)).collect();
    Ok(RankingResult {
        ks,
        users,
        mean_recall,
        mean_ndcg,
    })
}
