//! Weighted combination of the three pairwise models into one spectrum value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditional_times::{conditional_moments, ConditionalTimeMoments, TimeOptions};
use crate::demography::DemographicModel;
use crate::error::{Error, Result};
use crate::sample::{PairModel, SampleConfiguration};
use crate::triallelic::{event_prob_with, joint_config_prob_with, MutationModel, OuterRange};

pub const DEFAULT_THRESHOLD: f64 = 1e-12;

/// Numerical settings for a full spectrum evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectrumOptions {
    pub time: TimeOptions,
    pub outer_range: OuterRange,
}

impl From<TimeOptions> for SpectrumOptions {
    fn from(time: TimeOptions) -> Self {
        Self {
            time,
            outer_range: OuterRange::default(),
        }
    }
}

/// Softmax of the three event probabilities.
pub fn weights(events: [f64; 3]) -> Result<[f64; 3]> {
    if let Some(v) = events.iter().find(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("event probability {v} is not finite")));
    }
    let top = events.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = events.map(|v| (v - top).exp());
    let total: f64 = e.iter().sum();
    Ok(e.map(|v| v / total))
}

/// `I_i = 1` iff `joint_i >= ε_i`.
pub fn indicators(joints: [f64; 3], thresholds: [f64; 3]) -> Result<[u8; 3]> {
    if let Some(eps) = thresholds.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::Argument(format!("threshold {eps} outside (0, 1)")));
    }
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = u8::from(joints[k] >= thresholds[k]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub per_model_joint: [f64; 3],
    pub per_model_event: [f64; 3],
    pub weights: [f64; 3],
    pub indicators: [u8; 3],
    pub thresholds: [f64; 3],
    pub combined: f64,
    /// `combined` divided by the sum of combined values over a reference set
    /// of configurations, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized: Option<f64>,
}

impl SpectrumResult {
    /// Assemble a result from per-model probabilities.
    pub fn assemble(joints: [f64; 3], events: [f64; 3], thresholds: [f64; 3]) -> Result<Self> {
        let weights = weights(events)?;
        let indicators = indicators(joints, thresholds)?;
        let combined = combine(&joints, &weights, &indicators);
        Ok(Self {
            per_model_joint: joints,
            per_model_event: events,
            weights,
            indicators,
            thresholds,
            combined,
            normalized: None,
        })
    }

    /// Re-check the structural invariants of a (possibly deserialized) result.
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::Argument(format!("weights {:?} are not a softmax", self.weights)));
        }
        if self.indicators.iter().any(|i| *i > 1) {
            return Err(Error::Argument("indicators must be 0 or 1".into()));
        }
        if combine(&self.per_model_joint, &self.weights, &self.indicators) != self.combined {
            return Err(Error::Argument("combined value does not match its terms".into()));
        }
        let top = self.per_model_joint.iter().copied().fold(0.0, f64::max);
        if self.combined < 0.0 || self.combined > top {
            return Err(Error::Argument(format!("combined value {} outside [0, {top}]", self.combined)));
        }
        Ok(())
    }
}

fn combine(joints: &[f64; 3], weights: &[f64; 3], indicators: &[u8; 3]) -> f64 {
    (0..3).map(|k| f64::from(indicators[k]) * weights[k] * joints[k]).sum()
}

/// Per-model pieces of the pipeline, kept for inspection.
#[derive(Debug, Clone)]
pub struct ModelEvaluation {
    pub model: PairModel,
    pub moments: ConditionalTimeMoments,
    pub joint: f64,
    pub event: f64,
}

pub fn evaluate_model(
    cfg: &SampleConfiguration,
    index: u8,
    demog: &DemographicModel,
    mm: &MutationModel,
    opts: &SpectrumOptions,
) -> Result<ModelEvaluation> {
    let run = || -> Result<ModelEvaluation> {
        let model = PairModel::from_config(cfg, index)?;
        let moments = conditional_moments(demog, model.sample_size, model.divergence_count, &opts.time)?;
        let joint = joint_config_prob_with(&model, mm, &moments, opts.outer_range)?;
        let event = event_prob_with(&model, mm, &moments, opts.outer_range)?;
        Ok(ModelEvaluation {
            model,
            moments,
            joint,
            event,
        })
    };
    run().map_err(|e| e.in_model(index))
}

/// Evaluate all three pairwise models (concurrently) and combine them.
pub fn combined_spectrum(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    mm: &MutationModel,
    thresholds: [f64; 3],
    opts: &SpectrumOptions,
) -> Result<SpectrumResult> {
    let evals = evaluate_models(cfg, demog, mm, opts)?;
    SpectrumResult::assemble(evals.each_ref().map(|e| e.joint), evals.each_ref().map(|e| e.event), thresholds)
}

pub fn evaluate_models(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    mm: &MutationModel,
    opts: &SpectrumOptions,
) -> Result<[ModelEvaluation; 3]> {
    cfg.validate()?;
    let evals: Vec<ModelEvaluation> = [1u8, 2, 3]
        .into_par_iter()
        .map(|k| evaluate_model(cfg, k, demog, mm, opts))
        .collect::<Result<_>>()?;
    let [a, b, c]: [ModelEvaluation; 3] = evals.try_into().map_err(|_| Error::Argument("expected three models".into()))?;
    Ok([a, b, c])
}

/// Combined values for a set of configurations, each divided by their total.
///
/// The combined value is a weighted score rather than a probability over all
/// configurations; this rescales a user-chosen set so it sums to one.
pub fn normalized_spectra(
    configs: &[SampleConfiguration],
    demog: &DemographicModel,
    mm: &MutationModel,
    thresholds: [f64; 3],
    opts: &SpectrumOptions,
) -> Result<Vec<SpectrumResult>> {
    let mut results: Vec<SpectrumResult> = configs
        .iter()
        .map(|c| combined_spectrum(c, demog, mm, thresholds, opts))
        .collect::<Result<_>>()?;
    let total: f64 = results.iter().map(|r| r.combined).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("combined values over the normalization set sum to zero".into()));
    }
    for r in &mut results {
        r.normalized = Some(r.combined / total);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(weights([0.0; 3]).unwrap(), [1.0 / 3.0; 3]);
        let w = weights([0.02, 0.01, 0.01]).unwrap();
        let e = 0.02f64.exp() / (0.02f64.exp() + 2.0 * 0.01f64.exp());
        assert!((w[0] - e).abs() < 1e-16);
        assert!(weights([f64::NAN, 0.0, 0.0]).is_err());
        let big = weights([1000.0, 999.0, 0.0]).unwrap();
        assert!(big.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn indicator_rule() {
        let eps = 1e-6;
        assert_eq!(indicators([0.0; 3], [eps; 3]).unwrap(), [0, 0, 0]);
        assert_eq!(indicators([eps, 0.0, 0.0], [eps; 3]).unwrap(), [1, 0, 0]);
        assert_eq!(indicators([2.0 * eps, eps / 2.0, eps], [eps; 3]).unwrap(), [1, 0, 1]);
        assert!(indicators([0.0; 3], [0.0, 0.5, 0.5]).is_err());
        assert!(indicators([0.0; 3], [0.5, 1.0, 0.5]).is_err());
    }

    #[test]
    fn assemble_and_validate() {
        let r = SpectrumResult::assemble([1e-5, 2e-5, 1e-20], [3e-5, 1e-5, 2e-5], [1e-12; 3]).unwrap();
        assert_eq!(r.indicators, [1, 1, 0]);
        r.validate().unwrap();
        let mut bad = r.clone();
        bad.combined *= 1.5;
        assert!(bad.validate().is_err());
    }
}
