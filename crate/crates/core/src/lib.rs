//! Rating prediction with a bias baseline, neighbourhood collaborative
//! filtering, ALS matrix factorisation and two integrated CF + MF models
//! trained by SGD, plus evaluation and sweep tooling.

pub mod als;
pub mod baseline;
pub mod cf;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod integrated;
pub mod model_io;
pub mod similarity;
pub mod synthetic;
pub mod training;

pub use als::{fit_als, predict_mf, AlsConfig, FactorModel};
pub use baseline::{fit_bias, predict_baseline, BaselineMode, BiasModel};
pub use cf::{predict_cf, CfPredictor};
pub use dataset::{build_dataset, parse_ratings_file, Dataset, Format, RatingsTable, RawRating};
pub use error::{Error, Result};
pub use eval::{mae, run_experiment, run_sweep, Algorithm, EvalReport, ExperimentConfig, SweepAxis, SweepSpec};
pub use integrated::{fit_integrated, objective, predict_integrated, IntegratedModel, ModelVersion, SgdConfig};
pub use similarity::{build_neighbor_store, pair_similarity, Axis, NeighborStore, SimilarityParams};
pub use synthetic::{generate_synthetic, Mixture, SyntheticSpec};
pub use training::{FactorInit, SelectBy};
