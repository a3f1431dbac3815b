//! Shrunk, mean-centred cosine similarity and top-N neighbour lists.
//!
//! Item similarity centres each co-rating by the rating user's mean; user
//! similarity centres by the rated item's mean. Either score is damped by
//! `|C| / (|C| + shrink)` where `C` is the co-rating set.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::BiasModel;
use crate::dataset::{IdMap, RatingsTable};
use crate::error::{Error, Result};

pub const DEFAULT_SHRINK: f64 = 100.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    User,
    #[default]
    Item,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub shrink: f64,
    pub top_n: usize,
    pub axis: Axis,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        Self {
            shrink: DEFAULT_SHRINK,
            top_n: 10,
            axis: Axis::Item,
        }
    }
}

impl SimilarityParams {
    pub fn new(axis: Axis, top_n: usize) -> Self {
        Self {
            axis,
            top_n,
            ..Self::default()
        }
    }

    pub fn with_shrink(mut self, shrink: f64) -> Self {
        self.shrink = shrink;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.shrink >= 0.0 && self.shrink.is_finite()) {
            return Err(Error::Usage(format!("shrink must be finite and >= 0, got {}", self.shrink)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborStore {
    neighbors: Vec<Vec<Neighbor>>,
    params: SimilarityParams,
}

impl NeighborStore {
    /// Wraps precomputed lists, checking the store invariants.
    pub fn from_lists(params: SimilarityParams, neighbors: Vec<Vec<Neighbor>>) -> Result<Self> {
        params.validate()?;
        for (e, list) in neighbors.iter().enumerate() {
            if list.len() > params.top_n {
                return Err(Error::Usage(format!("entity {e} has {} neighbours, top_n is {}", list.len(), params.top_n)));
            }
            for (k, nb) in list.iter().enumerate() {
                if nb.index == e || nb.index >= neighbors.len() {
                    return Err(Error::Usage(format!("entity {e} has invalid neighbour {}", nb.index)));
                }
                if !nb.score.is_finite() || nb.score.abs() > 1.0 {
                    return Err(Error::Usage(format!("entity {e} has out-of-range score {}", nb.score)));
                }
                if k > 0 && list[k - 1].score < nb.score {
                    return Err(Error::Usage(format!("entity {e} neighbour list is not sorted")));
                }
            }
        }
        Ok(Self { neighbors, params })
    }

    pub fn params(&self) -> &SimilarityParams {
        &self.params
    }

    pub fn axis(&self) -> Axis {
        self.params.axis
    }

    pub fn num_entities(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, entity: usize) -> &[Neighbor] {
        self.neighbors.get(entity).map_or(&[], Vec::as_slice)
    }

    pub fn lists(&self) -> &[Vec<Neighbor>] {
        &self.neighbors
    }

    /// Total number of stored `(entity, neighbour)` pairs.
    pub fn num_pairs(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// The store a smaller `top_n` would have produced: every list is cut to
    /// its first `top_n` entries.
    pub fn truncated(&self, top_n: usize) -> Self {
        let top_n = top_n.min(self.params.top_n);
        Self {
            neighbors: self
                .neighbors
                .iter()
                .map(|l| l[..l.len().min(top_n)].to_vec())
                .collect(),
            params: SimilarityParams { top_n, ..self.params },
        }
    }
}

/// Running sums over one co-rating set.
#[derive(Debug, Clone, Copy, Default)]
struct CoRating {
    dot: f64,
    norm_a: f64,
    norm_b: f64,
    count: usize,
}

impl CoRating {
    #[inline]
    fn push(&mut self, x: f64, y: f64) {
        self.dot += x * y;
        self.norm_a += x * x;
        self.norm_b += y * y;
        self.count += 1;
    }

    fn score(&self, shrink: f64) -> f64 {
        if self.count == 0 || self.norm_a == 0.0 || self.norm_b == 0.0 {
            return 0.0;
        }
        let cosine = (self.dot / (self.norm_a.sqrt() * self.norm_b.sqrt())).clamp(-1.0, 1.0);
        let n = self.count as f64;
        cosine * (n / (n + shrink))
    }
}

/// Rating lists along the similarity axis and the centring mean for a
/// co-rater on the opposite axis.
struct AxisView<'a> {
    table: &'a RatingsTable,
    bias: &'a BiasModel,
    axis: Axis,
}

impl<'a> AxisView<'a> {
    fn entities(&self) -> usize {
        match self.axis {
            Axis::Item => self.table.num_items(),
            Axis::User => self.table.num_users(),
        }
    }

    fn list(&self, entity: usize) -> &'a [(usize, f64)] {
        match self.axis {
            Axis::Item => self.table.item_ratings(entity),
            Axis::User => self.table.user_ratings(entity),
        }
    }

    fn corater_list(&self, corater: usize) -> &'a [(usize, f64)] {
        match self.axis {
            Axis::Item => self.table.user_ratings(corater),
            Axis::User => self.table.item_ratings(corater),
        }
    }

    #[inline]
    fn center(&self, corater: usize) -> f64 {
        match self.axis {
            Axis::Item => self.bias.user_mean(corater),
            Axis::User => self.bias.item_mean(corater),
        }
    }
}

pub fn pair_similarity(a: usize, b: usize, table: &RatingsTable, bias: &BiasModel, params: &SimilarityParams) -> Result<f64> {
    params.validate()?;
    let view = AxisView {
        table,
        bias,
        axis: params.axis,
    };
    let n = view.entities();
    if a >= n || b >= n {
        return Err(Error::Usage(format!("entity index out of range: ({a}, {b}) with {n} entities")));
    }
    if a == b {
        return Err(Error::Usage(format!("self-similarity requested for entity {a}")));
    }
    let (la, lb) = (view.list(a), view.list(b));
    let mut acc = CoRating::default();
    let (mut p, mut q) = (0, 0);
    while p < la.len() && q < lb.len() {
        let (ca, ra) = la[p];
        let (cb, rb) = lb[q];
        match ca.cmp(&cb) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                let mean = view.center(ca);
                acc.push(ra - mean, rb - mean);
                p += 1;
                q += 1;
            }
        }
    }
    Ok(acc.score(params.shrink))
}

/// Orders by descending score, lower index first on ties.
fn rank(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Computes every entity's top-N list.
///
/// Co-rating sums are accumulated through the opposite-axis index instead of
/// merging every pair of lists, visiting co-raters in ascending index order so
/// the result matches [`pair_similarity`] bit for bit. Zero scores are not
/// stored.
pub fn build_neighbor_store(table: &RatingsTable, bias: &BiasModel, params: &SimilarityParams) -> Result<NeighborStore> {
    params.validate()?;
    let view = AxisView {
        table,
        bias,
        axis: params.axis,
    };
    let n = view.entities();
    let neighbors: Vec<Vec<Neighbor>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![CoRating::default(); n], Vec::<usize>::new()),
            |(acc, touched), a| {
                if params.top_n == 0 {
                    return Vec::new();
                }
                for &(c, ra) in view.list(a) {
                    let mean = view.center(c);
                    let x = ra - mean;
                    for &(b, rb) in view.corater_list(c) {
                        if b == a {
                            continue;
                        }
                        if acc[b].count == 0 {
                            touched.push(b);
                        }
                        acc[b].push(x, rb - mean);
                    }
                }
                let mut list: Vec<Neighbor> = touched
                    .iter()
                    .map(|&b| Neighbor {
                        index: b,
                        score: acc[b].score(params.shrink),
                    })
                    .filter(|nb| nb.score != 0.0)
                    .collect();
                for &b in touched.iter() {
                    acc[b] = CoRating::default();
                }
                touched.clear();
                list.sort_by(rank);
                list.truncate(params.top_n);
                list
            },
        )
        .collect();
    Ok(NeighborStore {
        neighbors,
        params: *params,
    })
}

/// Formats like C's `%.9g`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_owned()
        } else {
            fixed
        }
    } else {
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

/// Serialises a store as `entity<TAB>neighbour<TAB>score` lines using the
/// external ids of the store's axis, preceded by a `#` parameter line.
pub fn write_neighbor_store(store: &NeighborStore, ids: &IdMap) -> String {
    let p = store.params;
    let axis = match p.axis {
        Axis::User => "user",
        Axis::Item => "item",
    };
    let mut out = format!("# axis={axis} shrink={} top_n={}\n", p.shrink, p.top_n);
    for (e, list) in store.neighbors.iter().enumerate() {
        let eid = ids.external_id(e).unwrap_or_default();
        for nb in list {
            let nid = ids.external_id(nb.index).unwrap_or_default();
            let _ = writeln!(out, "{eid}\t{nid}\t{}", format_sig9(nb.score));
        }
    }
    out
}

/// Reads the format produced by [`write_neighbor_store`]. Lines starting with
/// `#` are ignored; `params` must describe the cached store.
pub fn read_neighbor_store(text: &str, ids: &IdMap, params: SimilarityParams) -> Result<NeighborStore> {
    let mut neighbors = vec![Vec::new(); ids.len()];
    for (k, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse { line: k + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let e = ids.index_of(fields[0]).ok_or_else(|| bad(format!("unknown entity `{}`", fields[0])))?;
        let index = ids.index_of(fields[1]).ok_or_else(|| bad(format!("unknown neighbour `{}`", fields[1])))?;
        let score: f64 = fields[2].parse().map_err(|_| bad(format!("bad score `{}`", fields[2])))?;
        neighbors[e].push(Neighbor { index, score });
    }
    NeighborStore::from_lists(params, neighbors)
}
