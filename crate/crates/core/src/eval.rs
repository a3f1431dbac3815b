//! MAE evaluation, single experiments and parameter sweeps.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{fit_als, AlsConfig, FactorModel};
use crate::baseline::{fit_bias, BaselineMode, BiasModel};
use crate::cf::CfPredictor;
use crate::dataset::{Dataset, RATING_MAX, RATING_MIN};
use crate::error::{Error, Result};
use crate::integrated::{fit_integrated, IntegratedModel, ModelVersion, SgdConfig};
use crate::similarity::{build_neighbor_store, Axis, NeighborStore, SimilarityParams};
use crate::training::{EpochRecord, FactorInit, SelectBy};

/// Mean absolute error over `(predicted, actual)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Usage("MAE of an empty prediction list".into()));
    }
    Ok(pairs.iter().map(|(p, a)| (p - a).abs()).sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Baseline,
    CfUser,
    CfItem,
    MfAls,
    CfMfV1,
    CfMfV2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Baseline,
        Algorithm::CfUser,
        Algorithm::CfItem,
        Algorithm::MfAls,
        Algorithm::CfMfV1,
        Algorithm::CfMfV2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::CfUser => "cf_user",
            Algorithm::CfItem => "cf_item",
            Algorithm::MfAls => "mf_als",
            Algorithm::CfMfV1 => "cf_mf_v1",
            Algorithm::CfMfV2 => "cf_mf_v2",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Constant,
    Uniform,
}

/// Every tunable of every algorithm. Unset regularisation weights and
/// learning rates take the per-model defaults of [`SgdConfig::defaults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    pub top_n: usize,
    pub shrink: f64,
    /// ALS regularisation.
    pub lambda: f64,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub lambda4: Option<f64>,
    pub lr1: Option<f64>,
    pub lr2: Option<f64>,
    pub lr3: Option<f64>,
    pub lr4: Option<f64>,
    pub epsilon: f64,
    pub max_iter: usize,
    pub init: InitKind,
    pub seed: u64,
    pub shuffle: bool,
    pub clamp: bool,
    pub select_by: SelectBy,
    pub baseline_literal_sum: bool,
    pub als_raw_targets: bool,
    pub center_a_reg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 20,
            top_n: 10,
            shrink: crate::similarity::DEFAULT_SHRINK,
            lambda: 10.0,
            lambda1: None,
            lambda2: None,
            lambda3: None,
            lambda4: None,
            lr1: None,
            lr2: None,
            lr3: None,
            lr4: None,
            epsilon: 1e-4,
            max_iter: 100,
            init: InitKind::Constant,
            seed: 0,
            shuffle: false,
            clamp: false,
            select_by: SelectBy::MinTestMae,
            baseline_literal_sum: false,
            als_raw_targets: false,
            center_a_reg: false,
        }
    }
}

impl ExperimentConfig {
    fn factor_init(&self) -> FactorInit {
        match self.init {
            InitKind::Constant => FactorInit::Constant,
            InitKind::Uniform => FactorInit::Uniform { seed: self.seed },
        }
    }

    pub fn baseline_mode(&self) -> BaselineMode {
        if self.baseline_literal_sum {
            BaselineMode::LiteralSum
        } else {
            BaselineMode::Offsets
        }
    }

    pub fn similarity_params(&self, axis: Axis) -> SimilarityParams {
        SimilarityParams::new(axis, self.top_n).with_shrink(self.shrink)
    }

    pub fn als_config(&self) -> AlsConfig {
        AlsConfig {
            k: self.k,
            lambda: self.lambda,
            max_iter: self.max_iter,
            epsilon: self.epsilon,
            init: self.factor_init(),
            raw_targets: self.als_raw_targets,
            select_by: self.select_by,
        }
    }

    pub fn sgd_config(&self, version: ModelVersion) -> SgdConfig {
        let d = SgdConfig::defaults(version);
        SgdConfig {
            k: self.k,
            top_n: self.top_n,
            lambda1: self.lambda1.unwrap_or(d.lambda1),
            lambda2: self.lambda2.unwrap_or(d.lambda2),
            lambda3: self.lambda3.unwrap_or(d.lambda3),
            lambda4: self.lambda4.unwrap_or(d.lambda4),
            lr1: self.lr1.unwrap_or(d.lr1),
            lr2: self.lr2.unwrap_or(d.lr2),
            lr3: self.lr3.unwrap_or(d.lr3),
            lr4: self.lr4.unwrap_or(d.lr4),
            max_iter: self.max_iter,
            epsilon: self.epsilon,
            init: self.factor_init(),
            shuffle_seed: self.shuffle.then_some(self.seed),
            select_by: self.select_by,
            center_a_reg: self.center_a_reg,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// A fitted predictor of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Baseline(BiasModel),
    Neighborhood { bias: BiasModel, store: NeighborStore },
    Factor(FactorModel),
    Integrated(IntegratedModel),
}

impl TrainedModel {
    fn dims(&self) -> (usize, usize) {
        match self {
            TrainedModel::Baseline(b) | TrainedModel::Neighborhood { bias: b, .. } => (b.user_offset.len(), b.item_offset.len()),
            TrainedModel::Factor(m) => (m.num_users(), m.num_items()),
            TrainedModel::Integrated(m) => (m.num_users(), m.num_items()),
        }
    }
}

/// Scores every test pair. Returns `(mae, coverage)`, where coverage is the
/// fraction of pairs predicted without falling back to the baseline.
pub fn evaluate_model(model: &TrainedModel, data: &Dataset, clamp: bool) -> Result<(f64, f64)> {
    if data.test.is_empty() {
        return Err(Error::Usage("test set is empty".into()));
    }
    if model.dims() != (data.num_users(), data.num_items()) {
        return Err(Error::Usage(format!(
            "model covers {:?} users x items, dataset {:?}",
            model.dims(),
            (data.num_users(), data.num_items())
        )));
    }
    let cf = match model {
        TrainedModel::Neighborhood { bias, store } => Some(CfPredictor::new(store, bias, &data.train)?),
        _ => None,
    };
    let scored: Vec<(f64, f64, bool)> = data
        .test
        .triples()
        .par_iter()
        .map(|t| -> Result<(f64, f64, bool)> {
            let (pred, fallback) = match model {
                TrainedModel::Baseline(b) => (b.predict(t.user, t.item), false),
                TrainedModel::Neighborhood { .. } => {
                    let p = cf.as_ref().expect("predictor").predict(t.user, t.item);
                    (p.value, p.fallback)
                }
                TrainedModel::Factor(m) => (m.predict(t.user, t.item)?, false),
                TrainedModel::Integrated(m) => (m.predict(t.user, t.item, &data.train)?, false),
            };
            let pred = if clamp { pred.clamp(RATING_MIN, RATING_MAX) } else { pred };
            Ok((pred, t.value, fallback))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = scored.iter().map(|&(p, a, _)| (p, a)).collect();
    let covered = scored.iter().filter(|s| !s.2).count();
    Ok((mae(&pairs)?, covered as f64 / scored.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: Algorithm,
    pub params: ExperimentConfig,
    pub mae: f64,
    pub coverage: f64,
    pub test_pairs: usize,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_epoch: Option<Vec<EpochRecord>>,
}

impl EvalReport {
    /// Pretty JSON. Without `timing` the wall-clock field is omitted so
    /// repeated runs produce identical bytes.
    pub fn to_json(&self, timing: bool) -> String {
        let mut value = serde_json::to_value(self).expect("report serialises");
        if !timing {
            if let Some(obj) = value.as_object_mut() {
                obj.remove("wall_time");
            }
        }
        let mut s = serde_json::to_string_pretty(&value).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Fits `algorithm` on `data.train` without evaluating.
pub fn train_model(data: &Dataset, algorithm: Algorithm, cfg: &ExperimentConfig) -> Result<(TrainedModel, TrainingInfo)> {
    let bias = fit_bias(&data.train)?.with_mode(cfg.baseline_mode());
    Ok(match algorithm {
        Algorithm::Baseline => (TrainedModel::Baseline(bias), TrainingInfo::default()),
        Algorithm::CfUser | Algorithm::CfItem => {
            let axis = if algorithm == Algorithm::CfUser { Axis::User } else { Axis::Item };
            let store = build_neighbor_store(&data.train, &bias, &cfg.similarity_params(axis))?;
            (TrainedModel::Neighborhood { bias, store }, TrainingInfo::default())
        }
        Algorithm::MfAls => {
            let (model, trace) = fit_als(data, &cfg.als_config())?;
            let info = TrainingInfo {
                selected_epoch: Some(trace.selected),
                converged: Some(trace.converged),
                per_epoch: Some(trace.records.iter().map(EpochRecord::from).collect()),
            };
            (TrainedModel::Factor(model), info)
        }
        Algorithm::CfMfV1 | Algorithm::CfMfV2 => {
            let version = if algorithm == Algorithm::CfMfV1 { ModelVersion::V1 } else { ModelVersion::V2 };
            let store = build_neighbor_store(&data.train, &bias, &cfg.similarity_params(Axis::Item))?;
            let (model, trace) = fit_integrated(data, Arc::new(store), Arc::new(bias), &cfg.sgd_config(version), version)?;
            let info = TrainingInfo {
                selected_epoch: Some(trace.selected),
                converged: Some(trace.converged),
                per_epoch: Some(trace.records),
            };
            (TrainedModel::Integrated(model), info)
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingInfo {
    pub selected_epoch: Option<usize>,
    pub converged: Option<bool>,
    pub per_epoch: Option<Vec<EpochRecord>>,
}

/// Trains `algorithm`, predicts every test pair and reports the MAE.
pub fn run_experiment(data: &Dataset, algorithm: Algorithm, cfg: &ExperimentConfig) -> Result<(EvalReport, TrainedModel)> {
    let start = Instant::now();
    if data.test.is_empty() {
        return Err(Error::Usage("test set is empty".into()));
    }
    let (model, info) = train_model(data, algorithm, cfg)?;
    let (mae, coverage) = evaluate_model(&model, data, cfg.clamp)?;
    let report = EvalReport {
        algorithm,
        params: cfg.clone(),
        mae,
        coverage,
        test_pairs: data.test.len(),
        wall_time: start.elapsed().as_secs_f64(),
        selected_epoch: info.selected_epoch,
        converged: info.converged,
        per_epoch: info.per_epoch,
    };
    Ok((report, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Neighbour count.
    N,
    /// Latent dimension.
    K,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" => Ok(SweepAxis::N),
            "K" | "k" => Ok(SweepAxis::K),
            other => Err(Error::Usage(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub fixed: ExperimentConfig,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, values: Vec<usize>, fixed: ExperimentConfig) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("sweep needs at least one value".into()));
        }
        if values.contains(&0) {
            return Err(Error::Usage("sweep values must be positive".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage(format!("sweep values must be strictly increasing: {values:?}")));
        }
        Ok(Self { axis, values, fixed })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub axis: SweepAxis,
    pub value: usize,
    pub report: EvalReport,
}

/// Runs every `(algorithm, value)` cell, at most `parallelism` at a time.
/// Rows come back algorithm-major in the order given.
pub fn run_sweep(data: &Dataset, spec: &SweepSpec, algorithms: &[Algorithm], parallelism: usize) -> Result<Vec<SweepRow>> {
    if algorithms.is_empty() {
        return Err(Error::Usage("sweep needs at least one algorithm".into()));
    }
    let cells: Vec<(Algorithm, usize)> = algorithms
        .iter()
        .flat_map(|&a| spec.values.iter().map(move |&v| (a, v)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|&(algorithm, value)| {
                let mut cfg = spec.fixed.clone();
                match spec.axis {
                    SweepAxis::N => cfg.top_n = value,
                    SweepAxis::K => cfg.k = value,
                }
                let (report, _) = run_experiment(data, algorithm, &cfg)?;
                log::info!("{algorithm} {:?}={value}: mae {:.5}", spec.axis, report.mae);
                Ok(SweepRow {
                    algorithm,
                    axis: spec.axis,
                    value,
                    report,
                })
            })
            .collect()
    })
}

pub const SWEEP_CSV_HEADER: &str = "algorithm,axis,value,mae,wall_time_s";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let axis = match r.axis {
            SweepAxis::N => "N",
            SweepAxis::K => "K",
        };
        let _ = writeln!(out, "{},{axis},{},{},{:.3}", r.algorithm, r.value, r.report.mae, r.report.wall_time);
    }
    out
}
