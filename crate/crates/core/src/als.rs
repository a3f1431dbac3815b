//! Matrix factorisation `r̂ = mean + p_u · q_i` fitted by alternating least
//! squares with an L2 penalty on both factor matrices.
//!
//! One iteration solves every user row exactly with the item factors held
//! fixed, then every item row with the user factors fixed. Each row solve is
//! the `K x K` system `(λI + Σ q qᵀ) p = Σ y q`, handled by a Cholesky
//! factorisation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RatingsTable};
use crate::error::{Error, Result};
use crate::eval::mae;
use crate::training::{dot, relative_change, EpochRecord, FactorInit, Factors, SelectBy, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub k: usize,
    pub lambda: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub init: FactorInit,
    /// Regress on raw ratings instead of residuals against the global mean.
    pub raw_targets: bool,
    pub select_by: SelectBy,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            k: 20,
            lambda: 10.0,
            max_iter: 100,
            epsilon: 1e-4,
            init: FactorInit::Constant,
            raw_targets: false,
            select_by: SelectBy::MinTestMae,
        }
    }
}

impl AlsConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Usage("latent dimension k must be >= 1".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Usage(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Usage(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub global_mean: f64,
    pub p: Factors,
    pub q: Factors,
}

impl FactorModel {
    pub fn k(&self) -> usize {
        self.p.k()
    }

    pub fn num_users(&self) -> usize {
        self.p.rows()
    }

    pub fn num_items(&self) -> usize {
        self.q.rows()
    }

    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.num_users() || item >= self.num_items() {
            return Err(Error::Usage(format!(
                "({user}, {item}) outside {}x{} factor model",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(self.global_mean + dot(self.p.row(user), self.q.row(item)))
    }
}

pub fn predict_mf(user: usize, item: usize, model: &FactorModel) -> Result<f64> {
    model.predict(user, item)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsRecord {
    pub iteration: usize,
    /// Objective after the user pass of this iteration.
    pub objective_after_users: f64,
    /// Objective after the item pass.
    pub objective: f64,
    pub test_mae: Option<f64>,
}

impl From<&AlsRecord> for EpochRecord {
    fn from(r: &AlsRecord) -> Self {
        EpochRecord {
            epoch: r.iteration,
            objective: r.objective,
            test_mae: r.test_mae,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsTrace {
    pub initial_objective: f64,
    pub records: Vec<AlsRecord>,
    pub converged: bool,
    /// Iteration whose parameters were returned (0 = initial factors).
    pub selected: usize,
}

/// Value the factors regress on for rating `r`.
fn target_offset(global_mean: f64, cfg: &AlsConfig) -> f64 {
    if cfg.raw_targets {
        0.0
    } else {
        global_mean
    }
}

/// Squared error against the regression targets plus `λ(‖P‖² + ‖Q‖²)`.
/// With residual targets this is exactly `Σ (r - r̂)² + λ(‖P‖² + ‖Q‖²)`.
pub fn als_objective(model: &FactorModel, table: &RatingsTable, cfg: &AlsConfig) -> f64 {
    let offset = target_offset(model.global_mean, cfg);
    let sse: f64 = table
        .triples()
        .iter()
        .map(|t| {
            let e = t.value - offset - dot(model.p.row(t.user), model.q.row(t.item));
            e * e
        })
        .sum();
    sse + cfg.lambda * (model.p.norm_sq() + model.q.norm_sq())
}

/// Runs ALS on `data.train`, recording the objective and test MAE after every
/// iteration. Stops once `|f(t) - f(t-1)| / f(t-1) <= epsilon` or after
/// `max_iter` iterations.
pub fn fit_als(data: &Dataset, cfg: &AlsConfig) -> Result<(FactorModel, AlsTrace)> {
    cfg.validate()?;
    let train = &data.train;
    let global_mean = train
        .mean_rating()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let (p, q) = cfg.init.build(train.num_users(), train.num_items(), cfg.k);
    let mut model = FactorModel { global_mean, p, q };
    let offset = target_offset(global_mean, cfg);

    let by_user = |u: usize| train.user_ratings(u);
    let by_item = |i: usize| train.item_ratings(i);

    let initial_objective = als_objective(&model, train, cfg);
    let mut prev = initial_objective;
    let mut records = Vec::new();
    let mut converged = false;
    let mut selector = Selector::new(cfg.select_by);
    selector.offer(0, test_mae(&model, data), &model);

    for iteration in 1..=cfg.max_iter {
        solve_pass(&mut model.p, &model.q, &by_user, offset, cfg.lambda, "user")?;
        let objective_after_users = als_objective(&model, train, cfg);
        solve_pass(&mut model.q, &model.p, &by_item, offset, cfg.lambda, "item")?;
        let objective = als_objective(&model, train, cfg);
        let mae = test_mae(&model, data);
        records.push(AlsRecord {
            iteration,
            objective_after_users,
            objective,
            test_mae: mae,
        });
        log::debug!("als iteration {iteration}: objective {objective}, test mae {mae:?}");
        selector.offer(iteration, mae, &model);
        if relative_change(prev, objective) <= cfg.epsilon {
            converged = true;
            break;
        }
        prev = objective;
    }

    let last = records.last().map_or(0, |r| r.iteration);
    let (selected, model) = selector.finish(last, model);
    Ok((
        model,
        AlsTrace {
            initial_objective,
            records,
            converged,
            selected,
        },
    ))
}

/// Solves every row of `rows` against the fixed `other` factors.
fn solve_pass<'t>(
    rows: &mut Factors,
    other: &Factors,
    lists: &(impl Fn(usize) -> &'t [(usize, f64)] + Sync),
    offset: f64,
    lambda: f64,
    entity: &'static str,
) -> Result<()> {
    let k = rows.k();
    rows.as_mut_slice()
        .par_chunks_mut(k)
        .enumerate()
        .try_for_each(|(idx, row)| solve_row(row, other, lists(idx), offset, lambda, entity, idx))
}

fn solve_row(
    row: &mut [f64],
    other: &Factors,
    ratings: &[(usize, f64)],
    offset: f64,
    lambda: f64,
    entity: &'static str,
    index: usize,
) -> Result<()> {
    let k = row.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for &(j, r) in ratings {
        let v = other.row(j);
        let y = r - offset;
        for x in 0..k {
            b[x] += y * v[x];
            for z in 0..k {
                a[(x, z)] += v[x] * v[z];
            }
        }
    }
    if b.iter().all(|&x| x == 0.0) {
        // zero is the minimum-norm solution
        row.fill(0.0);
        return Ok(());
    }
    for x in 0..k {
        a[(x, x)] += lambda;
    }
    let chol = a.cholesky().ok_or(Error::Singular { entity, index })?;
    let sol = chol.solve(&b);
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular { entity, index });
    }
    row.copy_from_slice(sol.as_slice());
    Ok(())
}

fn test_mae(model: &FactorModel, data: &Dataset) -> Option<f64> {
    if data.test.is_empty() {
        return None;
    }
    let pairs: Vec<(f64, f64)> = data
        .test
        .triples()
        .iter()
        .map(|t| (model.global_mean + dot(model.p.row(t.user), model.q.row(t.item)), t.value))
        .collect();
    mae(&pairs).ok()
}
