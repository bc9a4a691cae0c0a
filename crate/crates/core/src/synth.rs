//! Seeded homophilous rating/trust generator with planted preference
//! clusters.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{RatingRecord, SocialEdge};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_users: usize,
    pub m_items: usize,
    pub clusters: usize,
    /// Positive ratings drawn per user.
    pub items_per_user: usize,
    /// Outgoing trust edges drawn per user.
    pub friends_per_user: usize,
    /// Probability that a trust edge stays inside the user's cluster.
    pub intra_cluster: f64,
    /// Probability that a positive item comes from the user's cluster.
    pub preference: f64,
    /// Extra ratings of 1..=3 per user, dropped by preprocessing.
    pub low_ratings_per_user: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_users: 500,
            m_items: 300,
            clusters: 5,
            items_per_user: 20,
            friends_per_user: 5,
            intra_cluster: 0.9,
            preference: 0.8,
            low_ratings_per_user: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub ratings: Vec<RatingRecord>,
    pub trust: Vec<SocialEdge>,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
}

fn user_id(u: usize) -> String {
    format!("u{u:05}")
}

fn item_id(i: usize) -> String {
    format!("i{i:05}")
}

fn pick_in<R: Rng>(rng: &mut R, members: &[Vec<usize>], cluster: usize, all: usize) -> usize {
    let m = &members[cluster];
    if m.is_empty() {
        rng.random_range(0..all)
    } else {
        m[rng.random_range(0..m.len())]
    }
}

fn draw_unseen<R: Rng>(rng: &mut R, seen: &BTreeSet<usize>, m: usize) -> usize {
    loop {
        let i = rng.random_range(0..m);
        if !seen.contains(&i) {
            return i;
        }
    }
}

/// Users and items are assigned clusters round-robin. Each user rates
/// `items_per_user` distinct items with 4 or 5 and `low_ratings_per_user`
/// further items with 1 to 3.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.clusters == 0 || spec.n_users < 2 || spec.m_items == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs users, items and clusters".into(),
        ));
    }
    if spec.items_per_user + spec.low_ratings_per_user > spec.m_items {
        return Err(Error::InvalidArgument(format!(
            "{} ratings per user exceed {} items",
            spec.items_per_user + spec.low_ratings_per_user,
            spec.m_items
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let user_cluster: Vec<usize> = (0..spec.n_users).map(|u| u % spec.clusters).collect();
    let item_cluster: Vec<usize> = (0..spec.m_items).map(|i| i % spec.clusters).collect();
    let mut users_of = vec![Vec::new(); spec.clusters];
    user_cluster
        .iter()
        .enumerate()
        .for_each(|(u, &c)| users_of[c].push(u));
    let mut items_of = vec![Vec::new(); spec.clusters];
    item_cluster
        .iter()
        .enumerate()
        .for_each(|(i, &c)| items_of[c].push(i));

    let mut ratings = Vec::new();
    for (u, &home) in user_cluster.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for _ in 0..spec.items_per_user {
            let fresh: Vec<usize> = items_of[home]
                .iter()
                .copied()
                .filter(|i| !seen.contains(i))
                .collect();
            let i = if !fresh.is_empty() && rng.random::<f64>() < spec.preference {
                fresh[rng.random_range(0..fresh.len())]
            } else {
                draw_unseen(&mut rng, &seen, spec.m_items)
            };
            seen.insert(i);
            ratings.push(RatingRecord {
                user: user_id(u),
                item: item_id(i),
                rating: rng.random_range(4..=5),
            });
        }
        for _ in 0..spec.low_ratings_per_user {
            let i = draw_unseen(&mut rng, &seen, spec.m_items);
            seen.insert(i);
            ratings.push(RatingRecord {
                user: user_id(u),
                item: item_id(i),
                rating: rng.random_range(1..=3),
            });
        }
    }

    let mut edges = BTreeSet::new();
    for (u, &home) in user_cluster.iter().enumerate() {
        for _ in 0..spec.friends_per_user {
            let intra = rng.random::<f64>() < spec.intra_cluster;
            let v = if intra {
                pick_in(&mut rng, &users_of, home, spec.n_users)
            } else {
                rng.random_range(0..spec.n_users)
            };
            if v != u {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    let trust = edges
        .into_iter()
        .map(|(a, b)| SocialEdge {
            source: user_id(a),
            target: user_id(b),
        })
        .collect();
    Ok(SynthData {
        ratings,
        trust,
        user_cluster,
        item_cluster,
    })
}

impl SynthData {
    pub fn ratings_text(&self) -> String {
        let mut s = String::from("# user item rating\n");
        for r in &self.ratings {
            let _ = writeln!(s, "{} {} {}", r.user, r.item, r.rating);
        }
        s
    }

    pub fn trust_text(&self) -> String {
        let mut s = String::from("# source target\n");
        for e in &self.trust {
            let _ = writeln!(s, "{} {}", e.source, e.target);
        }
        s
    }

    /// Writes `ratings.txt` and `trust.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let r = dir.join("ratings.txt");
        let t = dir.join("trust.txt");
        std::fs::write(&r, self.ratings_text()).map_err(|e| Error::io(&r, e))?;
        std::fs::write(&t, self.trust_text()).map_err(|e| Error::io(&t, e))?;
        Ok((r, t))
    }

    /// Fraction of trust edges joining users of the same cluster.
    pub fn intra_fraction(&self) -> f64 {
        let idx = |s: &str| s[1..].parse::<usize>().expect("synthetic id");
        let same = self
            .trust
            .iter()
            .filter(|e| self.user_cluster[idx(&e.source)] == self.user_cluster[idx(&e.target)])
            .count();
        same as f64 / self.trust.len().max(1) as f64
    }
}
