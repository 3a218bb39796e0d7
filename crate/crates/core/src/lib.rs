//! Ranking simulation-trained policies for sim-to-real transfer by combining
//! a simulation validation score with an out-of-distribution score computed
//! from the policy's own activations on a small set of real observations.

pub mod baselines;
pub mod cache;
pub mod combiner;
pub mod config;
pub mod io;
pub mod matrix;
pub mod mixture;
pub mod pipeline;
pub mod policy_net;
pub mod rank_eval;
pub mod real_probe;
pub mod scalar;
pub mod seeding;
pub mod sim_validation;
pub mod testbed;

pub use config::Config;
pub use combiner::{minmax_normalize, vsdr_scores, ScoreRow, ScoreTable};
pub use matrix::Matrix;
pub use pipeline::{run_pipeline, run_pipeline_with_jobs, Stage, Workspace};
pub use mixture::{fit_gmm, mean_log_likelihood, ActivationDataset, EmConfig, Gmm};
pub use policy_net::MlpPolicy;
pub use rank_eval::spearman;
pub use real_probe::ood_score;
pub use scalar::Scalar;
pub use sim_validation::{validate, Metric, ValidationType};

pub type Gmm64 = Gmm<f64>;
pub type Gmm32 = Gmm<f32>;
pub type ActivationDataset64 = ActivationDataset<f64>;
pub type ActivationDataset32 = ActivationDataset<f32>;
pub type MlpPolicy64 = MlpPolicy<f64>;
pub type MlpPolicy32 = MlpPolicy<f32>;
pub type Matrix64 = Matrix<f64>;
