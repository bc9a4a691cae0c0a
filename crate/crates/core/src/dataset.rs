//! Rating/trust ingestion, implicit-feedback preprocessing, splitting and
//! dataset statistics.
//!
//! Input files are whitespace-separated text, one record per line. Blank
//! lines and lines starting with `#` are skipped. Ratings lines carry
//! `<user> <item> <rating> [ignored...]`, trust lines `<source> <target>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRecord {
    pub user: String,
    pub item: String,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialEdge {
    pub source: String,
    pub target: String,
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub line: usize,
    pub reason: String,
}

/// Parsed records plus the lines that failed to parse.
#[derive(Debug, Clone)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub rejected: Vec<Rejected>,
    /// Trust self-loops dropped at ingest.
    pub self_loops: usize,
}

impl<T> Default for Ingested<T> {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            rejected: Vec::new(),
            self_loops: 0,
        }
    }
}

impl<T> Ingested<T> {
    pub fn malformed(&self) -> usize {
        self.rejected.len()
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((i + 1, t))
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_ratings(text: &str) -> Ingested<RatingRecord> {
    let mut out = Ingested::default();
    for (line, l) in content_lines(text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 3 {
            out.rejected.push(Rejected {
                line,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
            continue;
        }
        let rating = match fields[2].parse::<f64>() {
            Ok(r) if r.fract() == 0.0 && (1.0..=5.0).contains(&r) => r as u8,
            Ok(r) => {
                out.rejected.push(Rejected {
                    line,
                    reason: format!("rating {r} outside [1,5]"),
                });
                continue;
            }
            Err(_) => {
                out.rejected.push(Rejected {
                    line,
                    reason: format!("rating {:?} is not a number", fields[2]),
                });
                continue;
            }
        };
        out.records.push(RatingRecord {
            user: fields[0].to_owned(),
            item: fields[1].to_owned(),
            rating,
        });
    }
    out
}

pub fn parse_trust(text: &str) -> Ingested<SocialEdge> {
    let mut out = Ingested::default();
    for (line, l) in content_lines(text) {
        let mut it = l.split_whitespace();
        match (it.next(), it.next()) {
            (Some(s), Some(t)) if s == t => out.self_loops += 1,
            (Some(s), Some(t)) => out.records.push(SocialEdge {
                source: s.to_owned(),
                target: t.to_owned(),
            }),
            _ => out.rejected.push(Rejected {
                line,
                reason: "expected 2 fields".into(),
            }),
        }
    }
    out
}

pub fn ingest_ratings(path: &Path) -> Result<Ingested<RatingRecord>> {
    Ok(parse_ratings(&read(path)?))
}

pub fn ingest_trust(path: &Path) -> Result<Ingested<SocialEdge>> {
    Ok(parse_trust(&read(path)?))
}

/// Filtered, reindexed implicit-feedback dataset prior to splitting.
///
/// External ids are indexed in lexicographic order; interactions are sorted
/// `(user, item)` pairs; social pairs are undirected, stored once as `(lo, hi)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessed {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub interactions: Vec<(usize, usize)>,
    pub social: Vec<(usize, usize)>,
}

impl Preprocessed {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn m_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Back to raw records (every interaction rated 5).
    pub fn to_records(&self) -> (Vec<RatingRecord>, Vec<SocialEdge>) {
        let ratings = self
            .interactions
            .iter()
            .map(|&(u, i)| RatingRecord {
                user: self.user_ids[u].clone(),
                item: self.item_ids[i].clone(),
                rating: 5,
            })
            .collect();
        let edges = self
            .social
            .iter()
            .map(|&(a, b)| SocialEdge {
                source: self.user_ids[a].clone(),
                target: self.user_ids[b].clone(),
            })
            .collect();
        (ratings, edges)
    }
}

/// Keeps ratings strictly above `rating_threshold`, removes users and items
/// with fewer than `min_interactions` until a fixed point, then reindexes.
pub fn preprocess(
    ratings: &[RatingRecord],
    edges: &[SocialEdge],
    rating_threshold: u8,
    min_interactions: usize,
) -> Result<Preprocessed> {
    let mut pairs: BTreeSet<(&str, &str)> = ratings
        .iter()
        .filter(|r| r.rating > rating_threshold)
        .map(|r| (r.user.as_str(), r.item.as_str()))
        .collect();

    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for &(u, i) in &pairs {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let before = pairs.len();
        pairs.retain(|(u, i)| user_deg[u] >= min_interactions && item_deg[i] >= min_interactions);
        if pairs.len() == before {
            break;
        }
    }
    if pairs.is_empty() {
        return Err(Error::DegenerateDataset(
            "no interactions survive rating and degree filtering".into(),
        ));
    }

    let users: BTreeSet<&str> = pairs.iter().map(|&(u, _)| u).collect();
    let items: BTreeSet<&str> = pairs.iter().map(|&(_, i)| i).collect();
    let user_index: HashMap<&str, usize> = users.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    let item_index: HashMap<&str, usize> = items.iter().enumerate().map(|(k, &i)| (i, k)).collect();

    let interactions: Vec<(usize, usize)> = {
        let mut v: Vec<_> = pairs
            .iter()
            .map(|(u, i)| (user_index[u], item_index[i]))
            .collect();
        v.sort_unstable();
        v
    };
    let social: Vec<(usize, usize)> = edges
        .iter()
        .filter_map(|e| {
            let a = *user_index.get(e.source.as_str())?;
            let b = *user_index.get(e.target.as_str())?;
            (a != b).then_some((a.min(b), a.max(b)))
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    Ok(Preprocessed {
        user_ids: users.into_iter().map(str::to_owned).collect(),
        item_ids: items.into_iter().map(str::to_owned).collect(),
        interactions,
        social,
    })
}

/// Implicit interactions partitioned into train/validation/test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub n_users: usize,
    pub m_items: usize,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Undirected social pairs `(lo, hi)`.
    pub social: Vec<(usize, usize)>,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl SplitDataset {
    /// Per-user item sets of one partition.
    pub fn items_by_user(pairs: &[(usize, usize)], n_users: usize) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); n_users];
        for &(u, i) in pairs {
            out[u].insert(i);
        }
        out
    }

    pub fn n_interactions(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.train.iter().chain(&self.val).chain(&self.test);
        let mut seen = BTreeSet::new();
        for &(u, i) in all {
            if u >= self.n_users {
                return Err(Error::IndexOutOfRange {
                    index: u,
                    bound: self.n_users,
                });
            }
            if i >= self.m_items {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    bound: self.m_items,
                });
            }
            if !seen.insert((u, i)) {
                return Err(Error::DegenerateDataset(format!(
                    "pair ({u},{i}) appears in more than one partition"
                )));
            }
        }
        for &(a, b) in &self.social {
            if a >= self.n_users || b >= self.n_users || a == b {
                return Err(Error::DegenerateDataset(format!("bad social pair ({a},{b})")));
            }
        }
        Ok(())
    }
}

/// Seeded global shuffle followed by a contiguous partition.
///
/// Afterwards every user with any interaction keeps at least one training
/// pair: for each violating user (ascending index) the val/test pair with
/// the smallest item index is exchanged with the last training pair whose
/// user has two or more training pairs.
pub fn split(data: &Preprocessed, ratios: (f64, f64, f64), seed: u64) -> Result<SplitDataset> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| *r < 0.0) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be nonnegative and sum to 1"
        )));
    }
    let mut pairs = data.interactions.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let n = pairs.len();
    let n_train = ((rt * n as f64).round() as usize).min(n);
    let n_val = ((rv * n as f64).round() as usize).min(n - n_train);
    let test = pairs.split_off(n_train + n_val);
    let val = pairs.split_off(n_train);
    let train = pairs;

    let (train, val, test) = ensure_train_coverage(train, val, test, data.n_users());
    Ok(SplitDataset {
        n_users: data.n_users(),
        m_items: data.m_items(),
        train,
        val,
        test,
        social: data.social.clone(),
        user_ids: data.user_ids.clone(),
        item_ids: data.item_ids.clone(),
    })
}

type Pairs = Vec<(usize, usize)>;

pub(crate) fn ensure_train_coverage(
    mut train: Pairs,
    mut val: Pairs,
    mut test: Pairs,
    n_users: usize,
) -> (Pairs, Pairs, Pairs) {
    let mut train_deg = vec![0usize; n_users];
    for &(u, _) in &train {
        train_deg[u] += 1;
    }
    let mut held_users: BTreeSet<usize> = val.iter().chain(&test).map(|&(u, _)| u).collect();
    held_users.retain(|&u| train_deg[u] == 0);

    for u in held_users {
        // (partition, position, item) of the user's held-out pair with smallest item
        let pick = val
            .iter()
            .enumerate()
            .map(|(k, p)| (0u8, k, *p))
            .chain(test.iter().enumerate().map(|(k, p)| (1u8, k, *p)))
            .filter(|&(_, _, (pu, _))| pu == u)
            .min_by_key(|&(part, _, (_, item))| (item, part));
        let Some((part, pos, pair)) = pick else { continue };
        let donor = train.iter().rposition(|&(du, _)| train_deg[du] >= 2);
        let held = if part == 0 { &mut val } else { &mut test };
        match donor {
            Some(d) => {
                train_deg[train[d].0] -= 1;
                std::mem::swap(&mut train[d], &mut held[pos]);
            }
            None => {
                held.remove(pos);
                train.push(pair);
            }
        }
        train_deg[u] += 1;
    }
    (train, val, test)
}

/// Summary statistics of a split dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_users: usize,
    pub m_items: usize,
    pub n_interactions: usize,
    pub n_relations: usize,
    pub interaction_density: f64,
    pub relation_density: f64,
    /// Mean Jaccard similarity of training-item sets across social pairs.
    pub substitute_homophily: f64,
}

pub fn stats(data: &SplitDataset) -> DatasetStats {
    let n = data.n_users;
    let m = data.m_items;
    let n_interactions = data.n_interactions();
    let n_relations = data.social.len();
    let items = SplitDataset::items_by_user(&data.train, n);
    let homophily = if data.social.is_empty() {
        0.0
    } else {
        data.social
            .iter()
            .map(|&(a, b)| jaccard(&items[a], &items[b]))
            .sum::<f64>()
            / n_relations as f64
    };
    DatasetStats {
        n_users: n,
        m_items: m,
        n_interactions,
        n_relations,
        interaction_density: ratio(n_interactions, n * m),
        relation_density: ratio(n_relations, n * n),
        substitute_homophily: homophily,
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

/// Percentage truncated (not rounded) to `decimals` places.
pub fn truncated_percent(fraction: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    // nudge guards against 0.0368 * 1e4 landing on 367.9999...
    ((fraction * 100.0 * scale) + 1e-9).floor() / scale
}

impl DatasetStats {
    fn fields(&self) -> [(&'static str, String); 7] {
        [
            ("n_users", self.n_users.to_string()),
            ("m_items", self.m_items.to_string()),
            ("n_interactions", self.n_interactions.to_string()),
            ("n_relations", self.n_relations.to_string()),
            ("interaction_density", format!("{:.10}", self.interaction_density)),
            ("relation_density", format!("{:.10}", self.relation_density)),
            (
                "substitute_homophily",
                format!("{:.10}", self.substitute_homophily),
            ),
        ]
    }

    /// `key=value` lines, plus percentage renderings of both densities.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(
            s,
            "interaction_density_pct={:.4}%",
            truncated_percent(self.interaction_density, 4)
        );
        let _ = writeln!(
            s,
            "relation_density_pct={:.4}%",
            truncated_percent(self.relation_density, 4)
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let f = self.fields();
        let header: Vec<&str> = f.iter().map(|(k, _)| *k).collect();
        let row: Vec<&str> = f.iter().map(|(_, v)| v.as_str()).collect();
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

// ---------------------------------------------------------------------------
// On-disk split layout

fn write_pairs(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let mut s = String::with_capacity(pairs.len() * 12);
    for (a, b) in pairs {
        let _ = writeln!(s, "{a}\t{b}");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let mut it = l.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b))) => out.push((a, b)),
            _ => {
                return Err(Error::DegenerateDataset(format!(
                    "{}:{line}: expected two indices",
                    path.display()
                )))
            }
        }
    }
    Ok(out)
}

/// Writes `train.tsv`, `val.tsv`, `test.tsv`, `social.tsv` and `idmap.tsv`.
pub fn save_split(data: &SplitDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pairs(&dir.join("train.tsv"), &data.train)?;
    write_pairs(&dir.join("val.tsv"), &data.val)?;
    write_pairs(&dir.join("test.tsv"), &data.test)?;
    write_pairs(&dir.join("social.tsv"), &data.social)?;
    let mut s = String::new();
    for (k, id) in data.user_ids.iter().enumerate() {
        let _ = writeln!(s, "user\t{k}\t{id}");
    }
    for (k, id) in data.item_ids.iter().enumerate() {
        let _ = writeln!(s, "item\t{k}\t{id}");
    }
    let path = dir.join("idmap.tsv");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

pub fn load_split(dir: &Path) -> Result<SplitDataset> {
    let idmap = dir.join("idmap.tsv");
    let text = read(&idmap)?;
    let mut users = BTreeMap::new();
    let mut items = BTreeMap::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<&str> = l.split('\t').collect();
        let k = f.get(1).and_then(|k| k.parse::<usize>().ok());
        match (f.first(), k, f.get(2)) {
            (Some(&"user"), Some(k), Some(id)) => {
                users.insert(k, id.to_string());
            }
            (Some(&"item"), Some(k), Some(id)) => {
                items.insert(k, id.to_string());
            }
            _ => {
                return Err(Error::DegenerateDataset(format!(
                    "{}:{line}: malformed id map entry",
                    idmap.display()
                )))
            }
        }
    }
    let dense = |m: &BTreeMap<usize, String>| m.keys().copied().eq(0..m.len());
    if !dense(&users) || !dense(&items) {
        return Err(Error::DegenerateDataset("id map indices are not dense".into()));
    }
    let data = SplitDataset {
        n_users: users.len(),
        m_items: items.len(),
        train: read_pairs(&dir.join("train.tsv"))?,
        val: read_pairs(&dir.join("val.tsv"))?,
        test: read_pairs(&dir.join("test.tsv"))?,
        social: read_pairs(&dir.join("social.tsv"))?,
        user_ids: users.into_values().collect(),
        item_ids: items.into_values().collect(),
    };
    data.validate()?;
    Ok(data)
}
