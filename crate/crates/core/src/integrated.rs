//! Integrated CF + MF models trained jointly by stochastic gradient descent.
//!
//! The prediction for `(u, i)` has three terms:
//!
//! ```text
//! r̂ = a1(u)·(mean + bu(u) + bi(i)) + a2(u)·(p_u · q_i) + a3(u)·Σ_j (r(u,j) - b(u,j))·w(i,j)
//! ```
//!
//! where `j` runs over the precomputed top-N neighbours of `i` that `u` has
//! rated, `b(u,j)` is the frozen bias baseline and `w(i,j)` is a learned,
//! user-independent weight initialised to the similarity score. Version 1
//! pins `a1 = a2 = a3 = 1`; version 2 learns them per user.
//!
//! Every parameter touched by a training pair moves along the negative
//! gradient of that pair's regularised squared error, computed once from the
//! pre-update parameters.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::BiasModel;
use crate::dataset::{Dataset, RatingsTable};
use crate::error::{Error, Result};
use crate::eval::mae;
use crate::similarity::{Axis, NeighborStore};
use crate::training::{dot, relative_change, EpochRecord, FactorInit, Factors, SelectBy, Selector};

/// Objective growth over its initial value that counts as divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVersion {
    /// Fixed unit blend weights.
    V1,
    /// Per-user blend weights.
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub k: usize,
    pub top_n: usize,
    /// Bias regularisation.
    pub lambda1: f64,
    /// Factor regularisation.
    pub lambda2: f64,
    /// Neighbour weight regularisation.
    pub lambda3: f64,
    /// Blend weight regularisation (version 2).
    pub lambda4: f64,
    pub lr1: f64,
    pub lr2: f64,
    pub lr3: f64,
    pub lr4: f64,
    pub max_iter: usize,
    pub epsilon: f64,
    pub init: FactorInit,
    /// Shuffle the training pairs every epoch with this seed. `None` keeps
    /// dataset order.
    pub shuffle_seed: Option<u64>,
    pub select_by: SelectBy,
    /// Penalise `‖a - 1‖²` instead of `‖a‖²`.
    pub center_a_reg: bool,
}

impl SgdConfig {
    pub fn default_v1() -> Self {
        Self {
            k: 20,
            top_n: 10,
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda4: 1.0,
            lr1: 0.002,
            lr2: 0.005,
            lr3: 0.002,
            lr4: 0.002,
            max_iter: 100,
            epsilon: 1e-4,
            init: FactorInit::Constant,
            shuffle_seed: None,
            select_by: SelectBy::MinTestMae,
            center_a_reg: false,
        }
    }

    pub fn default_v2() -> Self {
        Self {
            lr2: 0.01,
            ..Self::default_v1()
        }
    }

    pub fn defaults(version: ModelVersion) -> Self {
        match version {
            ModelVersion::V1 => Self::default_v1(),
            ModelVersion::V2 => Self::default_v2(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Usage("latent dimension k must be >= 1".into()));
        }
        let rates = [self.lr1, self.lr2, self.lr3, self.lr4];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || rates[..3].contains(&0.0) {
            return Err(Error::Usage(format!("learning rates must be positive, got {rates:?}")));
        }
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Usage(format!("regularisation weights must be >= 0, got {lambdas:?}")));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Usage(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    fn a_target(&self) -> f64 {
        if self.center_a_reg {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedModel {
    pub version: ModelVersion,
    pub global_mean: f64,
    pub bu: Vec<f64>,
    pub bi: Vec<f64>,
    pub p: Factors,
    pub q: Factors,
    /// Flat neighbour weights; item `i` owns `w[w_offsets[i]..w_offsets[i + 1]]`,
    /// aligned with `store.neighbors(i)`.
    pub w: Vec<f64>,
    w_offsets: Vec<usize>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    store: Arc<NeighborStore>,
    bias: Arc<BiasModel>,
}

/// The three unweighted terms of a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub baseline: f64,
    pub factor: f64,
    pub neighborhood: f64,
}

impl IntegratedModel {
    /// Model in its pre-training state: mean-offset biases, initial factors,
    /// unit blend weights and neighbour weights equal to the similarity
    /// scores.
    pub fn initial(version: ModelVersion, store: Arc<NeighborStore>, bias: Arc<BiasModel>, init: FactorInit, k: usize) -> Result<Self> {
        if store.axis() != Axis::Item {
            return Err(Error::Usage("integrated models need an item-axis neighbour store".into()));
        }
        let m = bias.user_offset.len();
        let n = bias.item_offset.len();
        if store.num_entities() != n {
            return Err(Error::Usage(format!(
                "neighbour store covers {} items, bias model {n}",
                store.num_entities()
            )));
        }
        let (p, q) = init.build(m, n, k);
        let mut w_offsets = Vec::with_capacity(n + 1);
        let mut w = Vec::with_capacity(store.num_pairs());
        w_offsets.push(0);
        for list in store.lists() {
            w.extend(list.iter().map(|nb| nb.score));
            w_offsets.push(w.len());
        }
        Ok(Self {
            version,
            global_mean: bias.global_mean,
            bu: bias.user_offset.clone(),
            bi: bias.item_offset.clone(),
            p,
            q,
            w,
            w_offsets,
            a1: vec![1.0; m],
            a2: vec![1.0; m],
            a3: vec![1.0; m],
            store,
            bias,
        })
    }

    /// Assembles a model from stored parameters. `w` must be laid out item by
    /// item in neighbour-list order.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        version: ModelVersion,
        global_mean: f64,
        bu: Vec<f64>,
        bi: Vec<f64>,
        p: Factors,
        q: Factors,
        w: Vec<f64>,
        a: [Vec<f64>; 3],
        store: Arc<NeighborStore>,
        bias: Arc<BiasModel>,
    ) -> Result<Self> {
        let (m, n) = (bu.len(), bi.len());
        let [a1, a2, a3] = a;
        let shapes_ok = p.rows() == m
            && q.rows() == n
            && p.k() == q.k()
            && a1.len() == m
            && a2.len() == m
            && a3.len() == m
            && store.num_entities() == n
            && store.num_pairs() == w.len()
            && store.axis() == Axis::Item;
        if !shapes_ok {
            return Err(Error::Format("integrated model parts have inconsistent shapes".into()));
        }
        let mut w_offsets = vec![0];
        for list in store.lists() {
            w_offsets.push(w_offsets.last().unwrap() + list.len());
        }
        Ok(Self {
            version,
            global_mean,
            bu,
            bi,
            p,
            q,
            w,
            w_offsets,
            a1,
            a2,
            a3,
            store,
            bias,
        })
    }

    pub fn num_users(&self) -> usize {
        self.bu.len()
    }

    pub fn num_items(&self) -> usize {
        self.bi.len()
    }

    pub fn k(&self) -> usize {
        self.p.k()
    }

    pub fn store(&self) -> &NeighborStore {
        &self.store
    }

    pub fn bias(&self) -> &BiasModel {
        &self.bias
    }

    /// Weights of item `i`'s neighbours, aligned with `store().neighbors(i)`.
    pub fn weights(&self, item: usize) -> &[f64] {
        &self.w[self.w_offsets[item]..self.w_offsets[item + 1]]
    }

    pub fn weights_mut(&mut self, item: usize) -> &mut [f64] {
        let (lo, hi) = (self.w_offsets[item], self.w_offsets[item + 1]);
        &mut self.w[lo..hi]
    }

    /// `(slot, r(u,j) - b(u,j))` for each neighbour `j` of `item` rated by
    /// `user` in `train`.
    pub fn active_neighbors(&self, user: usize, item: usize, train: &RatingsTable) -> Vec<(usize, f64)> {
        self.store
            .neighbors(item)
            .iter()
            .enumerate()
            .filter_map(|(slot, nb)| train.get(user, nb.index).map(|r| (slot, r - self.bias.predict(user, nb.index))))
            .collect()
    }

    fn terms_with(&self, user: usize, item: usize, active: &[(usize, f64)]) -> Terms {
        let w = self.weights(item);
        Terms {
            baseline: self.global_mean + self.bu[user] + self.bi[item],
            factor: dot(self.p.row(user), self.q.row(item)),
            neighborhood: active.iter().map(|&(slot, dev)| dev * w[slot]).sum(),
        }
    }

    fn blend(&self, user: usize, t: &Terms) -> f64 {
        self.a1[user] * t.baseline + self.a2[user] * t.factor + self.a3[user] * t.neighborhood
    }

    pub fn terms(&self, user: usize, item: usize, train: &RatingsTable) -> Terms {
        self.terms_with(user, item, &self.active_neighbors(user, item, train))
    }

    pub fn predict(&self, user: usize, item: usize, train: &RatingsTable) -> Result<f64> {
        if user >= self.num_users() || item >= self.num_items() {
            return Err(Error::Usage(format!(
                "({user}, {item}) outside {}x{} integrated model",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(self.blend(user, &self.terms(user, item, train)))
    }
}

pub fn predict_integrated(user: usize, item: usize, model: &IntegratedModel, train: &RatingsTable) -> Result<f64> {
    model.predict(user, item, train)
}

/// Regularised objective over the training set. Version 2 adds the blend
/// weight penalty.
pub fn objective(model: &IntegratedModel, data: &Dataset, cfg: &SgdConfig) -> f64 {
    let train = &data.train;
    let sse: f64 = train
        .triples()
        .iter()
        .map(|t| {
            let e = t.value - model.blend(t.user, &model.terms(t.user, t.item, train));
            e * e
        })
        .sum();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut f = sse
        + cfg.lambda1 * (sq(&model.bu) + sq(&model.bi))
        + cfg.lambda2 * (model.p.norm_sq() + model.q.norm_sq())
        + cfg.lambda3 * sq(&model.w);
    if model.version == ModelVersion::V2 {
        let c = cfg.a_target();
        let dev = |v: &[f64]| v.iter().map(|x| (x - c) * (x - c)).sum::<f64>();
        f += cfg.lambda4 * (dev(&model.a1) + dev(&model.a2) + dev(&model.a3));
    }
    f
}

/// Half the gradient of one pair's regularised squared error
/// `(r - r̂)² + λ1(bu² + bi²) + λ2(‖p_u‖² + ‖q_i‖²) + λ3 Σ w² + λ4 Σ a²`
/// with respect to every parameter the pair touches. An SGD step subtracts
/// the learning rate times these values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairGradient {
    pub error: f64,
    pub bu: f64,
    pub bi: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// `(slot, gradient)` per active neighbour weight of the item.
    pub w: Vec<(usize, f64)>,
    /// Blend weights; zero for version 1.
    pub a: [f64; 3],
}

impl IntegratedModel {
    /// Fills `g` for the training pair `(user, item, rating)` with the given
    /// active neighbour deviations.
    pub fn pair_gradient(&self, user: usize, item: usize, rating: f64, active: &[(usize, f64)], cfg: &SgdConfig, g: &mut PairGradient) {
        let t = self.terms_with(user, item, active);
        let e = rating - self.blend(user, &t);
        let (a1, a2, a3) = (self.a1[user], self.a2[user], self.a3[user]);
        let (pu, qi) = (self.p.row(user), self.q.row(item));
        let w = self.weights(item);

        g.error = e;
        g.bu = cfg.lambda1 * self.bu[user] - e * a1;
        g.bi = cfg.lambda1 * self.bi[item] - e * a1;
        g.p.clear();
        g.p.extend(pu.iter().zip(qi).map(|(p, q)| cfg.lambda2 * p - e * a2 * q));
        g.q.clear();
        g.q.extend(qi.iter().zip(pu).map(|(q, p)| cfg.lambda2 * q - e * a2 * p));
        g.w.clear();
        g.w.extend(active.iter().map(|&(slot, dev)| (slot, cfg.lambda3 * w[slot] - e * a3 * dev)));
        g.a = match self.version {
            ModelVersion::V1 => [0.0; 3],
            ModelVersion::V2 => {
                let c = cfg.a_target();
                [
                    cfg.lambda4 * (a1 - c) - e * t.baseline,
                    cfg.lambda4 * (a2 - c) - e * t.factor,
                    cfg.lambda4 * (a3 - c) - e * t.neighborhood,
                ]
            }
        };
    }

    /// Applies `g` with the configured learning rates.
    pub fn apply_gradient(&mut self, user: usize, item: usize, g: &PairGradient, cfg: &SgdConfig) {
        self.bu[user] -= cfg.lr1 * g.bu;
        self.bi[item] -= cfg.lr1 * g.bi;
        for (p, d) in self.p.row_mut(user).iter_mut().zip(&g.p) {
            *p -= cfg.lr2 * d;
        }
        for (q, d) in self.q.row_mut(item).iter_mut().zip(&g.q) {
            *q -= cfg.lr2 * d;
        }
        let w = self.weights_mut(item);
        for &(slot, d) in &g.w {
            w[slot] -= cfg.lr3 * d;
        }
        if self.version == ModelVersion::V2 {
            self.a1[user] -= cfg.lr4 * g.a[0];
            self.a2[user] -= cfg.lr4 * g.a[1];
            self.a3[user] -= cfg.lr4 * g.a[2];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdTrace {
    pub initial_objective: f64,
    pub records: Vec<EpochRecord>,
    pub converged: bool,
    /// Epoch whose parameters were returned (0 = initial model).
    pub selected: usize,
}

/// Active neighbour lists for every training pair, in dataset order.
struct ActiveSets {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl ActiveSets {
    fn build(model: &IntegratedModel, train: &RatingsTable) -> Self {
        let mut offsets = Vec::with_capacity(train.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for t in train.triples() {
            entries.extend(model.active_neighbors(t.user, t.item, train));
            offsets.push(entries.len());
        }
        Self { offsets, entries }
    }

    fn get(&self, pair: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[pair]..self.offsets[pair + 1]]
    }
}

fn test_mae(model: &IntegratedModel, data: &Dataset) -> Option<f64> {
    if data.test.is_empty() {
        return None;
    }
    let pairs: Vec<(f64, f64)> = data
        .test
        .triples()
        .par_iter()
        .map(|t| (model.blend(t.user, &model.terms(t.user, t.item, &data.train)), t.value))
        .collect();
    mae(&pairs).ok()
}

pub fn fit_integrated(
    data: &Dataset,
    store: Arc<NeighborStore>,
    bias: Arc<BiasModel>,
    cfg: &SgdConfig,
    version: ModelVersion,
) -> Result<(IntegratedModel, SgdTrace)> {
    fit_integrated_with(data, store, bias, cfg, version, |_, _| {})
}

/// [`fit_integrated`] calling `on_epoch(epoch, model)` after every epoch with
/// the current (not the selected) parameters.
pub fn fit_integrated_with(
    data: &Dataset,
    store: Arc<NeighborStore>,
    bias: Arc<BiasModel>,
    cfg: &SgdConfig,
    version: ModelVersion,
    mut on_epoch: impl FnMut(usize, &IntegratedModel),
) -> Result<(IntegratedModel, SgdTrace)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if store.params().top_n != cfg.top_n {
        return Err(Error::Usage(format!(
            "neighbour store built with top_n {}, config asks for {}",
            store.params().top_n,
            cfg.top_n
        )));
    }
    if bias.user_offset.len() != data.num_users() {
        return Err(Error::Usage("bias model does not match the dataset".into()));
    }
    let mut model = IntegratedModel::initial(version, store, bias, cfg.init, cfg.k)?;
    let train = &data.train;
    let active = ActiveSets::build(&model, train);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = cfg.shuffle_seed.map(ChaCha8Rng::seed_from_u64);

    let initial_objective = objective(&model, data, cfg);
    let mut prev = initial_objective;
    let mut records = Vec::new();
    let mut converged = false;
    let mut selector = Selector::new(cfg.select_by);
    selector.offer(0, test_mae(&model, data), &model);
    let mut g = PairGradient::default();

    for epoch in 1..=cfg.max_iter {
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &pair in &order {
            let t = train.triples()[pair];
            model.pair_gradient(t.user, t.item, t.value, active.get(pair), cfg, &mut g);
            model.apply_gradient(t.user, t.item, &g, cfg);
        }
        let f = objective(&model, data, cfg);
        if !f.is_finite() || f > DIVERGENCE_FACTOR * initial_objective {
            return Err(Error::Diverged { epoch, objective: f });
        }
        let mae = test_mae(&model, data);
        records.push(EpochRecord {
            epoch,
            objective: f,
            test_mae: mae,
        });
        log::debug!("{version:?} epoch {epoch}: objective {f}, test mae {mae:?}");
        on_epoch(epoch, &model);
        selector.offer(epoch, mae, &model);
        if relative_change(prev, f) < cfg.epsilon {
            converged = true;
            break;
        }
        prev = f;
    }

    let last = records.last().map_or(0, |r| r.epoch);
    let (selected, model) = selector.finish(last, model);
    Ok((
        model,
        SgdTrace {
            initial_objective,
            records,
            converged,
            selected,
        },
    ))
}
