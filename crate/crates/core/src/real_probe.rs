//! Out-of-distribution score of a fixed real-analog observation set.

use crate::matrix::Matrix;
use crate::mixture::{fit_gmm, mean_log_likelihood, ActivationDataset, EmConfig, Gmm};
use crate::policy_net::{MlpPolicy, PolicyError};
use crate::scalar::Scalar;

/// Scores `real_obs` under an already fitted per-layer mixture.
pub fn ood_score_with<T: Scalar>(
    policy: &MlpPolicy<T>,
    gmm: &Gmm<T>,
    real_obs: &Matrix<T>,
) -> Result<T, PolicyError> {
    let taps = policy.tap_rows(real_obs, gmm.layer_name())?;
    Ok(mean_log_likelihood(gmm, &taps)?)
}

/// Fits an `n_components` mixture to `train_acts` and returns the mean
/// log-likelihood of the `layer` taps of `real_obs` under it.
pub fn ood_score<T: Scalar>(
    policy: &MlpPolicy<T>,
    layer: &str,
    n_components: usize,
    train_acts: &ActivationDataset<T>,
    real_obs: &Matrix<T>,
    em_cfg: &EmConfig,
) -> Result<T, PolicyError> {
    policy.layer_index(layer)?;
    if train_acts.layer_name() != layer {
        return Err(PolicyError::UnknownLayer(format!(
            "activations are for `{}`, requested `{layer}`",
            train_acts.layer_name()
        )));
    }
    let gmm = fit_gmm(train_acts, n_components, em_cfg)?;
    ood_score_with(policy, &gmm, real_obs)
}
