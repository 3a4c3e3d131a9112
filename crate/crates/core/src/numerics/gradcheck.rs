use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};
use super::rng::RandomStream;
use super::tape::Gradients;
use super::tensor::{Precision, Tensor};

/// A scalar function of a parameter store, with its analytic gradient.
pub trait Objective {
    fn precision(&self) -> Precision;
    fn loss(&self, params: &ParamStore) -> Result<f64>;
    fn loss_and_grad(&self, params: &ParamStore) -> Result<(f64, Gradients)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    pub tolerance: f64,
    /// Below this many coordinates in total, every coordinate is checked.
    pub exhaustive_limit: usize,
    /// Target size of the random subsample otherwise. Each tensor receives a
    /// share proportional to its size, and never fewer than `min_per_tensor`.
    pub samples: usize,
    pub min_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-4,
            exhaustive_limit: 2000,
            samples: 200,
            min_per_tensor: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<CoordinateCheck>,
    pub checked: usize,
    /// Number of coordinates checked in each tensor, by name.
    pub per_tensor: Vec<(String, usize)>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences
/// `(f(p+ε) − f(p−ε)) / 2ε` and reports the worst relative error.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamStore,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if objective.precision() != Precision::F64 {
        return Err(Error::invalid("gradient checking requires 64-bit precision"));
    }
    let (_, analytic) = objective.loss_and_grad(params)?;
    let coords = choose_coordinates(params, config);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        per_tensor: Vec::new(),
        tolerance: config.tolerance,
    };
    for (id, indices) in coords {
        report.per_tensor.push((params.name(id).to_string(), indices.len()));
        for index in indices {
            let plus = objective.loss(&perturbed(params, id, index, config.epsilon)?)?;
            let minus = objective.loss(&perturbed(params, id, index, -config.epsilon)?)?;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NumericOverflow { op: "grad-check" });
            }
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let a = analytic.get(id).data()[index];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(CoordinateCheck {
                    param: params.name(id).to_string(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

fn perturbed(params: &ParamStore, id: ParamId, index: usize, delta: f64) -> Result<ParamStore> {
    let mut p = params.clone();
    let t = params.get(id);
    let mut data = t.to_vec();
    data[index] += delta;
    p.set(id, Tensor::new(t.shape().to_vec(), data)?)?;
    Ok(p)
}

fn choose_coordinates(params: &ParamStore, config: &GradCheckConfig) -> Vec<(ParamId, Vec<usize>)> {
    let total = params.total_size();
    let mut rng = RandomStream::new(config.seed);
    params
        .ids()
        .map(|id| {
            let size = params.get(id).len();
            if total <= config.exhaustive_limit {
                return (id, (0..size).collect());
            }
            let share = (config.samples * size).div_ceil(total);
            let k = size.min(share.max(config.min_per_tensor));
            let mut idx: Vec<usize> = (0..size).collect();
            for i in 0..k {
                let j = i + rng.below(size - i);
                idx.swap(i, j);
            }
            idx.truncate(k);
            idx.sort_unstable();
            (id, idx)
        })
        .collect()
}
