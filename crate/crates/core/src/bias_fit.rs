//! Fitting the double-exponential length-bias curve.
//!
//! The dataset is built from probe logs with every probe near a task's oracle
//! length discarded, then pooled per length. The fit is a damped Gauss–Newton
//! (Levenberg–Marquardt) iteration on `Σ w²·(Φ − B(L))²` with an analytic
//! Jacobian. `a, b, c, d` are optimized as logarithms so they stay positive;
//! `e` is optimized directly and clipped at zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::compensated_mean;
use crate::types::{BiasModel, FitMeta, ProbeRecord, ValidationError};

pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_INIT: [f64; 5] = [1.0, 1.0, 0.5, 0.05, 0.2];
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_FTOL: f64 = 1e-10;
/// Probe grid used when recording curves for a fit.
pub const DEFAULT_PROBE_GRID: [usize; 12] = [1, 2, 4, 6, 12, 16, 24, 32, 48, 64, 96, 128];

const PARAMS: usize = 5;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;
const MAX_NONFINITE_TRIALS: usize = 10;

type Mat5 = SMatrix<f64, PARAMS, PARAMS>;
type Vec5 = SVector<f64, PARAMS>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasFitError {
    #[error("no oracle length for task `{0}`")]
    MissingOracle(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid initial parameters {0:?}: a, b, c, d must be positive and finite")]
    InvalidInit([f64; 5]),
    #[error("fit diverged; last finite parameters {last:?}")]
    Divergence { last: [f64; 5] },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub length: usize,
    pub phi: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    points: Vec<FitPoint>,
    exclusion_window: usize,
    probe_grid: Vec<usize>,
}

impl FitDataset {
    pub fn new(
        mut points: Vec<FitPoint>,
        exclusion_window: usize,
        probe_grid: Vec<usize>,
    ) -> Result<Self, BiasFitError> {
        points.sort_by_key(|p| p.length);
        if points.windows(2).any(|w| w[0].length == w[1].length) {
            return Err(BiasFitError::InsufficientData(
                "duplicate length in dataset".into(),
            ));
        }
        for p in &points {
            if p.length == 0 {
                return Err(ValidationError::ZeroLength.into());
            }
            if !(p.weight > 0.0 && p.weight.is_finite()) || !p.phi.is_finite() {
                return Err(BiasFitError::InsufficientData(format!(
                    "point at length {} has weight {} and phi {}",
                    p.length, p.weight, p.phi
                )));
            }
        }
        if probe_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BiasFitError::InsufficientData(
                "probe grid must be strictly ascending".into(),
            ));
        }
        Ok(FitDataset {
            points,
            exclusion_window,
            probe_grid,
        })
    }

    pub fn points(&self) -> &[FitPoint] {
        &self.points
    }

    pub fn exclusion_window(&self) -> usize {
        self.exclusion_window
    }

    pub fn probe_grid(&self) -> &[usize] {
        &self.probe_grid
    }
}

/// Drops probes within `window` of their task's oracle length and pools the
/// survivors per length with weight `1/sqrt(N_L)`.
pub fn prepare_fit_dataset(
    records: &[ProbeRecord],
    oracle_lengths: &HashMap<String, usize>,
    window: usize,
) -> Result<FitDataset, BiasFitError> {
    let mut grid = BTreeSet::new();
    let mut pooled: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for record in records {
        let oracle = *oracle_lengths
            .get(record.task_id())
            .ok_or_else(|| BiasFitError::MissingOracle(record.task_id().to_string()))?;
        grid.insert(record.length());
        if record.length().abs_diff(oracle) <= window {
            continue;
        }
        pooled
            .entry(record.length())
            .or_default()
            .push(record.phi());
    }
    if pooled.is_empty() {
        return Err(BiasFitError::InsufficientData(
            "every probe fell inside the oracle exclusion window".into(),
        ));
    }
    let points = pooled
        .into_iter()
        .map(|(length, phis)| FitPoint {
            length,
            phi: compensated_mean(&phis),
            weight: 1.0 / (phis.len() as f64).sqrt(),
        })
        .collect();
    FitDataset::new(points, window, grid.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Starting `(a, b, c, d, e)`.
    pub init: [f64; 5],
    pub max_iters: usize,
    pub ftol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            init: DEFAULT_INIT,
            max_iters: DEFAULT_MAX_ITERS,
            ftol: DEFAULT_FTOL,
        }
    }
}

fn bias_at(p: &[f64; 5], length: usize) -> f64 {
    let l = length as f64;
    p[0] * (-p[1] * l).exp() + p[2] * (-p[3] * l).exp() + p[4]
}

/// `Σ w²·(Φ − B(L))²` for raw parameters `(a, b, c, d, e)`.
pub fn weighted_sse_params(params: &[f64; 5], data: &FitDataset) -> f64 {
    data.points
        .iter()
        .map(|p| {
            let r = p.weight * (p.phi - bias_at(params, p.length));
            r * r
        })
        .sum()
}

pub fn weighted_sse(model: &BiasModel, data: &FitDataset) -> f64 {
    weighted_sse_params(&model.params(), data)
}

// theta = (ln a, ln b, ln c, ln d, e)
fn to_raw(theta: &Vec5) -> [f64; 5] {
    [
        theta[0].exp(),
        theta[1].exp(),
        theta[2].exp(),
        theta[3].exp(),
        theta[4],
    ]
}

fn from_raw(p: &[f64; 5]) -> Vec5 {
    Vec5::new(p[0].ln(), p[1].ln(), p[2].ln(), p[3].ln(), p[4])
}

/// Normal equations `JᵀJ` and `Jᵀr` at `theta`, plus the current SSE.
fn linearize(theta: &Vec5, data: &FitDataset) -> (Mat5, Vec5, f64) {
    let [a, b, c, d, _] = to_raw(theta);
    let raw = to_raw(theta);
    let mut jtj = Mat5::zeros();
    let mut jtr = Vec5::zeros();
    let mut sse = 0.0;
    for p in &data.points {
        let l = p.length as f64;
        let fast = (-b * l).exp();
        let slow = (-d * l).exp();
        // Jacobian of w·B with respect to theta.
        let row = Vec5::new(
            a * fast,
            -a * b * l * fast,
            c * slow,
            -c * d * l * slow,
            1.0,
        ) * p.weight;
        let r = p.weight * (p.phi - bias_at(&raw, p.length));
        jtj += row * row.transpose();
        jtr += row * r;
        sse += r * r;
    }
    (jtj, jtr, sse)
}

fn all_finite(m: &Mat5, v: &Vec5, s: f64) -> bool {
    s.is_finite() && m.iter().all(|x| x.is_finite()) && v.iter().all(|x| x.is_finite())
}

/// Fits `B(L)` to the dataset, starting from `options.init`.
pub fn fit_bias(data: &FitDataset, options: &FitOptions) -> Result<BiasModel, BiasFitError> {
    let distinct = data.points.len();
    if distinct < PARAMS {
        return Err(BiasFitError::InsufficientData(format!(
            "{distinct} distinct lengths, need at least {PARAMS}"
        )));
    }
    let init = options.init;
    if init[..4].iter().any(|&x| !(x > 0.0 && x.is_finite())) || !init[4].is_finite() {
        return Err(BiasFitError::InvalidInit(init));
    }

    let mut theta = from_raw(&init);
    theta[4] = theta[4].max(0.0);
    let mut lambda = LAMBDA_INIT;
    let (mut jtj, mut jtr, mut sse) = linearize(&theta, data);
    if !all_finite(&jtj, &jtr, sse) {
        return Err(BiasFitError::Divergence { last: init });
    }
    let mut nonfinite_trials = 0;

    for _ in 0..options.max_iters {
        if sse == 0.0 {
            break;
        }
        let mut damped = jtj;
        for k in 0..PARAMS {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
        }
        let step = match damped.cholesky() {
            Some(chol) => chol.solve(&jtr),
            None => {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
                continue;
            }
        };
        let mut trial = theta + step;
        trial[4] = trial[4].max(0.0);
        let (t_jtj, t_jtr, t_sse) = linearize(&trial, data);
        if !all_finite(&t_jtj, &t_jtr, t_sse) {
            nonfinite_trials += 1;
            if nonfinite_trials >= MAX_NONFINITE_TRIALS {
                return Err(BiasFitError::Divergence {
                    last: to_raw(&theta),
                });
            }
            lambda *= 10.0;
            continue;
        }
        nonfinite_trials = 0;
        if t_sse < sse {
            let rel = (sse - t_sse) / sse;
            theta = trial;
            jtj = t_jtj;
            jtr = t_jtr;
            sse = t_sse;
            lambda = (lambda / 10.0).max(1e-12);
            if rel < options.ftol {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }

    let [mut a, mut b, mut c, mut d, e] = to_raw(&theta);
    if b < d {
        std::mem::swap(&mut a, &mut c);
        std::mem::swap(&mut b, &mut d);
    }
    if b == d {
        // Identical rates: fold into a single term, same function.
        a += c;
        c = 0.0;
        d = 0.0;
    }
    let sse = weighted_sse_params(&[a, b, c, d, e], data);
    let meta = FitMeta {
        n_points: data.points.len(),
        weighted_sse: sse,
        excluded_window: data.exclusion_window,
        source: "fit".to_string(),
    };
    Ok(BiasModel::with_meta(a, b, c, d, e, meta)?)
}
