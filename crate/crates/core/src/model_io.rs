//! Versioned plain-text model files.
//!
//! ```text
//! cfmf-model 1
//! kind <baseline|neighborhood|factor|integrated>
//! ```
//!
//! followed by the sections of the model kind, in this order:
//!
//! * `bias <mode> <global_mean>`, then one line of `M` user offsets and one
//!   line of `N` item offsets (baseline, neighborhood, integrated);
//! * `dims <K> <M> <N>` and `global_mean <value>`, then `M` rows of `P` and
//!   `N` rows of `Q`, `K` values each (factor, integrated);
//! * `version <v1|v2>`, one line each for `bu`, `bi`, `a1`, `a2`, `a3`
//!   (integrated);
//! * `neighbors <axis> <shrink> <top_n> <count>` and `count` lines
//!   `entity neighbour score` (neighborhood) or `item neighbour score weight`
//!   (integrated).
//!
//! Values are space separated; reals use the shortest decimal form that
//! parses back to the same bits.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::als::FactorModel;
use crate::baseline::{BaselineMode, BiasModel};
use crate::error::{Error, Result};
use crate::eval::TrainedModel;
use crate::integrated::{IntegratedModel, ModelVersion};
use crate::similarity::{Axis, Neighbor, NeighborStore, SimilarityParams};
use crate::training::Factors;

pub const MAGIC: &str = "cfmf-model";
pub const FORMAT_VERSION: u32 = 1;

fn write_row(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

fn write_bias(out: &mut String, b: &BiasModel) {
    let mode = match b.mode {
        BaselineMode::Offsets => "offsets",
        BaselineMode::LiteralSum => "literal-sum",
    };
    let _ = writeln!(out, "bias {mode} {:?}", b.global_mean);
    write_row(out, &b.user_offset);
    write_row(out, &b.item_offset);
}

fn write_factors(out: &mut String, global_mean: f64, p: &Factors, q: &Factors) {
    let _ = writeln!(out, "dims {} {} {}", p.k(), p.rows(), q.rows());
    let _ = writeln!(out, "global_mean {global_mean:?}");
    for r in 0..p.rows() {
        write_row(out, p.row(r));
    }
    for r in 0..q.rows() {
        write_row(out, q.row(r));
    }
}

fn write_store_header(out: &mut String, store: &NeighborStore) {
    let p = store.params();
    let axis = match p.axis {
        Axis::User => "user",
        Axis::Item => "item",
    };
    let _ = writeln!(out, "neighbors {axis} {:?} {} {}", p.shrink, p.top_n, store.num_pairs());
}

pub fn write_model(model: &TrainedModel) -> String {
    let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
    match model {
        TrainedModel::Baseline(b) => {
            out.push_str("kind baseline\n");
            write_bias(&mut out, b);
        }
        TrainedModel::Neighborhood { bias, store } => {
            out.push_str("kind neighborhood\n");
            write_bias(&mut out, bias);
            write_store_header(&mut out, store);
            for (e, list) in store.lists().iter().enumerate() {
                for nb in list {
                    let _ = writeln!(out, "{e} {} {:?}", nb.index, nb.score);
                }
            }
        }
        TrainedModel::Factor(m) => {
            out.push_str("kind factor\n");
            write_factors(&mut out, m.global_mean, &m.p, &m.q);
        }
        TrainedModel::Integrated(m) => {
            out.push_str("kind integrated\n");
            write_bias(&mut out, m.bias());
            write_factors(&mut out, m.global_mean, &m.p, &m.q);
            let version = match m.version {
                ModelVersion::V1 => "v1",
                ModelVersion::V2 => "v2",
            };
            let _ = writeln!(out, "version {version}");
            for v in [&m.bu, &m.bi, &m.a1, &m.a2, &m.a3] {
                write_row(&mut out, v);
            }
            write_store_header(&mut out, m.store());
            for (i, list) in m.store().lists().iter().enumerate() {
                for (nb, w) in list.iter().zip(m.weights(i)) {
                    let _ = writeln!(out, "{i} {} {:?} {w:?}", nb.index, nb.score);
                }
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, message: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {message}", self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((k, l)) => {
                self.line = k + 1;
                Ok(l.strip_suffix('\r').unwrap_or(l))
            }
            None => Err(Error::Format(format!("unexpected end of file after line {}", self.line))),
        }
    }

    /// Next line split into fields, the first of which must be `keyword`.
    fn keyword(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut fields = line.split(' ');
        if fields.next() != Some(keyword) {
            return Err(self.err(format!("expected `{keyword}`")));
        }
        Ok(fields.collect())
    }

    fn reals_any(&mut self) -> Result<Vec<f64>> {
        let line = self.next()?;
        if line.is_empty() {
            return Ok(Vec::new());
        }
        line.split(' ')
            .map(|f| f.parse::<f64>().map_err(|_| self.err(format!("bad number `{f}`"))))
            .collect()
    }

    fn reals(&mut self, expected: usize) -> Result<Vec<f64>> {
        let values = self.reals_any()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn parse<T: std::str::FromStr>(&self, field: Option<&&str>) -> Result<T> {
        field
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| self.err("missing or malformed field"))
    }
}

fn read_bias(lines: &mut Lines<'_>) -> Result<BiasModel> {
    let f = lines.keyword("bias")?;
    let mode = match f.first().copied() {
        Some("offsets") => BaselineMode::Offsets,
        Some("literal-sum") => BaselineMode::LiteralSum,
        _ => return Err(lines.err("unknown bias mode")),
    };
    let global_mean: f64 = lines.parse(f.get(1))?;
    let user_offset = lines.reals_any()?;
    let item_offset = lines.reals_any()?;
    Ok(BiasModel {
        global_mean,
        user_offset,
        item_offset,
        mode,
    })
}

fn read_factors(lines: &mut Lines<'_>) -> Result<(f64, Factors, Factors)> {
    let f = lines.keyword("dims")?;
    let (k, m, n): (usize, usize, usize) = (lines.parse(f.first())?, lines.parse(f.get(1))?, lines.parse(f.get(2))?);
    if k == 0 {
        return Err(lines.err("latent dimension must be >= 1"));
    }
    let g = lines.keyword("global_mean")?;
    let global_mean: f64 = lines.parse(g.first())?;
    let mut read_matrix = |rows: usize| -> Result<Factors> {
        let mut data = Vec::with_capacity(rows * k);
        for _ in 0..rows {
            data.extend(lines.reals(k)?);
        }
        Ok(Factors::from_vec(rows, k, data).expect("row lengths checked"))
    };
    let p = read_matrix(m)?;
    let q = read_matrix(n)?;
    Ok((global_mean, p, q))
}

fn read_store_header(lines: &mut Lines<'_>) -> Result<(SimilarityParams, usize)> {
    let f = lines.keyword("neighbors")?;
    let axis = match f.first().copied() {
        Some("user") => Axis::User,
        Some("item") => Axis::Item,
        _ => return Err(lines.err("unknown neighbour axis")),
    };
    let shrink: f64 = lines.parse(f.get(1))?;
    let top_n: usize = lines.parse(f.get(2))?;
    let count: usize = lines.parse(f.get(3))?;
    Ok((SimilarityParams { shrink, top_n, axis }, count))
}

/// Reads `count` neighbour lines; returns per-entity lists and the trailing
/// weight column when `with_weight` is set.
fn read_neighbors(lines: &mut Lines<'_>, entities: usize, count: usize, with_weight: bool) -> Result<(Vec<Vec<Neighbor>>, Vec<f64>)> {
    let mut lists = vec![Vec::new(); entities];
    let mut weights = Vec::new();
    let mut last = 0usize;
    for _ in 0..count {
        let line = lines.next()?;
        let f: Vec<&str> = line.split(' ').collect();
        let expected = if with_weight { 4 } else { 3 };
        if f.len() != expected {
            return Err(lines.err(format!("expected {expected} fields")));
        }
        let e: usize = lines.parse(f.first())?;
        let index: usize = lines.parse(f.get(1))?;
        let score: f64 = lines.parse(f.get(2))?;
        if e >= entities || e < last {
            return Err(lines.err("neighbour entries out of order or range"));
        }
        last = e;
        lists[e].push(Neighbor { index, score });
        if with_weight {
            weights.push(lines.parse(f.get(3))?);
        }
    }
    Ok((lists, weights))
}

pub fn read_model(text: &str) -> Result<TrainedModel> {
    let mut lines = Lines::new(text);
    let header = lines.keyword(MAGIC)?;
    let version: u32 = lines.parse(header.first())?;
    if version != FORMAT_VERSION {
        return Err(lines.err(format!("unsupported format version {version}")));
    }
    let kind = lines.keyword("kind")?;
    let model = match kind.first().copied() {
        Some("baseline") => TrainedModel::Baseline(read_bias(&mut lines)?),
        Some("neighborhood") => {
            let bias = read_bias(&mut lines)?;
            let (params, count) = read_store_header(&mut lines)?;
            let entities = match params.axis {
                Axis::User => bias.user_offset.len(),
                Axis::Item => bias.item_offset.len(),
            };
            let (lists, _) = read_neighbors(&mut lines, entities, count, false)?;
            let store = NeighborStore::from_lists(params, lists).map_err(|e| Error::Format(e.to_string()))?;
            TrainedModel::Neighborhood { bias, store }
        }
        Some("factor") => {
            let (global_mean, p, q) = read_factors(&mut lines)?;
            TrainedModel::Factor(FactorModel { global_mean, p, q })
        }
        Some("integrated") => {
            let bias = read_bias(&mut lines)?;
            let (global_mean, p, q) = read_factors(&mut lines)?;
            let v = lines.keyword("version")?;
            let version = match v.first().copied() {
                Some("v1") => ModelVersion::V1,
                Some("v2") => ModelVersion::V2,
                _ => return Err(lines.err("unknown integrated model version")),
            };
            let (m, n) = (p.rows(), q.rows());
            let bu = lines.reals(m)?;
            let bi = lines.reals(n)?;
            let a1 = lines.reals(m)?;
            let a2 = lines.reals(m)?;
            let a3 = lines.reals(m)?;
            let (params, count) = read_store_header(&mut lines)?;
            let (lists, w) = read_neighbors(&mut lines, n, count, true)?;
            let store = NeighborStore::from_lists(params, lists).map_err(|e| Error::Format(e.to_string()))?;
            TrainedModel::Integrated(IntegratedModel::from_parts(
                version,
                global_mean,
                bu,
                bi,
                p,
                q,
                w,
                [a1, a2, a3],
                Arc::new(store),
                Arc::new(bias),
            )?)
        }
        _ => return Err(lines.err("unknown model kind")),
    };
    Ok(model)
}
