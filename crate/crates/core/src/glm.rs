//! Logistic regression by Newton/IRLS.
//!
//! The design is stored in grouped form: rows are grouped into blocks that
//! share the same dense feature vector, and each row may additionally switch
//! on one indicator column (an interval dummy for person-period data). A plain
//! dense matrix is the special case of one row per group and no indicators.
//! The information matrix is accumulated per group, so person-period data
//! costs `O(subjects * p^2 + rows * p)` per iteration instead of
//! `O(rows * (K + p)^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::stats::two_sided_p;

/// Linear predictors beyond this magnitude mean fitted probabilities are
/// numerically 0 or 1, which only happens under (quasi-)separation.
const SEPARATION_ETA: f64 = 25.0;
const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug)]
pub struct GroupedDesign {
    /// Number of indicator columns (placed first).
    pub indicators: usize,
    /// Dense columns per group.
    pub dense_cols: usize,
    /// Row-major `groups x dense_cols`.
    pub dense: Vec<f64>,
    /// `group_start[g]..group_start[g + 1]` are the rows of group `g`.
    pub group_start: Vec<usize>,
    /// Indicator column switched on by each row, if any.
    pub indicator: Vec<Option<u32>>,
    pub names: Vec<String>,
}

impl GroupedDesign {
    /// Wraps an ordinary dense `m x d` row-major matrix.
    pub fn dense(values: Vec<f64>, m: usize, d: usize, names: Vec<String>) -> Result<Self> {
        if values.len() != m * d || names.len() != d {
            return Err(Error::InvalidArgument(format!(
                "dense design needs {m}x{d} values and {d} names"
            )));
        }
        Ok(Self {
            indicators: 0,
            dense_cols: d,
            dense: values,
            group_start: (0..=m).collect(),
            indicator: vec![None; m],
            names,
        })
    }

    pub fn rows(&self) -> usize {
        self.indicator.len()
    }

    pub fn groups(&self) -> usize {
        self.group_start.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.indicators + self.dense_cols
    }

    fn group_row(&self, g: usize) -> &[f64] {
        &self.dense[g * self.dense_cols..(g + 1) * self.dense_cols]
    }

    /// Expands row `r` into a full dense vector (testing / debugging aid).
    pub fn full_row(&self, r: usize) -> Vec<f64> {
        let g = self.group_start.partition_point(|&s| s <= r) - 1;
        let mut out = vec![0.0; self.cols()];
        if let Some(l) = self.indicator[r] {
            out[l as usize] = 1.0;
        }
        out[self.indicators..].copy_from_slice(self.group_row(g));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iterations: usize,
    /// Threshold on `|dev - dev_old| / (|dev| + 0.1)`.
    pub tolerance: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: Vec<f64>,
    pub se: Vec<f64>,
    pub p_value: Vec<f64>,
    pub deviance: f64,
    pub loglik: f64,
    pub converged: bool,
    /// Fitted probabilities reached 0 or 1 (coefficients diverging).
    pub separated: bool,
    pub iterations: usize,
}

struct Eval {
    loglik: f64,
    score: Vec<f64>,
    info: Vec<f64>,
    max_abs_eta: f64,
}

/// Ordinary dense logistic regression.
pub fn fit_logistic(
    design: &[f64],
    m: usize,
    d: usize,
    response: &[f64],
    options: &GlmOptions,
) -> Result<GlmFit> {
    let names = (0..d).map(|j| format!("x{j}")).collect();
    fit_grouped(&GroupedDesign::dense(design.to_vec(), m, d, names)?, response, options)
}

pub fn fit_grouped(design: &GroupedDesign, response: &[f64], options: &GlmOptions) -> Result<GlmFit> {
    let d = design.cols();
    let m = design.rows();
    if d == 0 || m < d {
        return Err(Error::InvalidArgument(format!("need 1 <= d <= m, got m={m}, d={d}")));
    }
    if response.len() != m || response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidArgument("response must be 0/1 with one entry per row".into()));
    }

    // Scale dense columns to unit RMS; undone on the way out.
    let k = design.indicators;
    let p = design.dense_cols;
    let mut scale = vec![0.0; p];
    for g in 0..design.groups() {
        for (s, v) in scale.iter_mut().zip(design.group_row(g)) {
            *s += v * v;
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / design.groups() as f64).sqrt();
        if !(*s > 0.0) {
            return Err(Error::SingularInformation);
        }
    }
    let scaled: Vec<f64> = design
        .dense
        .chunks(p.max(1))
        .flat_map(|row| row.iter().zip(&scale).map(|(v, s)| v / s).collect::<Vec<_>>())
        .collect();

    let eval = |beta: &[f64]| -> Eval { evaluate(design, &scaled, response, beta) };

    let mut beta = vec![0.0; d];
    let mut current = eval(&beta);
    SpdFactor::new(&current.info, d)?;
    let deviance = |e: &Eval| -2.0 * e.loglik;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let step = match SpdFactor::new(&current.info, d) {
            Ok(f) => f.solve(&current.score),
            Err(_) => break,
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let e = eval(&trial);
            if e.loglik.is_finite() && deviance(&e) <= deviance(&current) * (1.0 + 1e-12) + 1e-12 {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, next)) = accepted else { break };
        let change = (deviance(&next) - deviance(&current)).abs() / (deviance(&next).abs() + 0.1);
        beta = trial;
        current = next;
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    let separated = current.max_abs_eta > SEPARATION_ETA;
    if separated {
        converged = false;
    }
    let unscale = |j: usize| if j < k { 1.0 } else { scale[j - k] };
    let coefficients: Vec<f64> = (0..d).map(|j| beta[j] / unscale(j)).collect();
    let covariance = match SpdFactor::new(&current.info, d) {
        Ok(f) => {
            let inv = f.inverse();
            let mut cov = vec![0.0; d * d];
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] = inv[a * d + b] / (unscale(a) * unscale(b));
                }
            }
            cov
        }
        Err(_) => {
            converged = false;
            vec![f64::NAN; d * d]
        }
    };
    let se: Vec<f64> = (0..d).map(|j| covariance[j * d + j].sqrt()).collect();
    let p_value = coefficients.iter().zip(&se).map(|(b, s)| two_sided_p(b / s)).collect();
    Ok(GlmFit {
        names: design.names.clone(),
        coefficients,
        covariance,
        se,
        p_value,
        deviance: deviance(&current),
        loglik: current.loglik,
        converged,
        separated,
        iterations,
    })
}

fn evaluate(design: &GroupedDesign, scaled: &[f64], y: &[f64], beta: &[f64]) -> Eval {
    let k = design.indicators;
    let p = design.dense_cols;
    let d = k + p;
    let mut loglik = 0.0;
    let mut score = vec![0.0; d];
    let mut info = vec![0.0; d * d];
    let mut max_abs_eta = 0.0f64;
    for g in 0..design.groups() {
        let x = &scaled[g * p..(g + 1) * p];
        let base: f64 = x.iter().zip(&beta[k..]).map(|(a, b)| a * b).sum();
        let mut resid_sum = 0.0;
        let mut weight_sum = 0.0;
        for r in design.group_start[g]..design.group_start[g + 1] {
            let level = design.indicator[r].map(|l| l as usize);
            let eta = base + level.map_or(0.0, |l| beta[l]);
            max_abs_eta = max_abs_eta.max(eta.abs());
            // log(1 + e^eta) without overflow
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            loglik += y[r] * eta - softplus;
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            let resid = y[r] - mu;
            resid_sum += resid;
            weight_sum += w;
            if let Some(l) = level {
                score[l] += resid;
                info[l * d + l] += w;
                for j in 0..p {
                    info[(k + j) * d + l] += w * x[j];
                }
            }
        }
        for j in 0..p {
            score[k + j] += resid_sum * x[j];
            for m in 0..=j {
                info[(k + j) * d + k + m] += weight_sum * x[j] * x[m];
            }
        }
    }
    crate::linalg::mirror_lower(&mut info, d);
    Eval {
        loglik,
        score,
        info,
        max_abs_eta,
    }
}
