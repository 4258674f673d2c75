//! Cox proportional-hazards regression.
//!
//! Newton-Raphson on the Efron log partial likelihood with step halving.
//! The solver works on centred, unit-variance copies of the design columns;
//! coefficients, covariance and dfbeta are mapped back to the original scale,
//! so the fit is equivariant under column rescaling.

mod concordance;
mod likelihood;

pub use concordance::{concordance, concordance_counts, PairCounts};
pub use likelihood::{Derivatives, Ties};

use serde::{Deserialize, Serialize};

use crate::data::{Design, SurvivalDataset};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::stats::two_sided_p;
use likelihood::RiskSets;

const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the relative change of the log likelihood.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-9,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!("bad fit options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major `p x p` inverse observed information.
    pub covariance: Vec<f64>,
    pub se: Vec<f64>,
    pub wald_z: Vec<f64>,
    pub p_value: Vec<f64>,
    pub hr: Vec<f64>,
    pub log_partial_likelihood: f64,
    /// Row-major `n x p` approximate leave-one-out coefficient changes; empty
    /// when the fit did not converge.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dfbeta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl CoxFit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn dfbeta_row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.dfbeta[i * p..(i + 1) * p]
    }

    /// `max_i |dfbeta_ij|` per coefficient.
    pub fn dfbeta_sensitivity(&self) -> Result<Vec<f64>> {
        if !self.converged || self.dfbeta.is_empty() {
            return Err(Error::NotConverged);
        }
        let p = self.p();
        let mut out = vec![0.0f64; p];
        for row in self.dfbeta.chunks(p) {
            for (m, v) in out.iter_mut().zip(row) {
                *m = m.max(v.abs());
            }
        }
        Ok(out)
    }

    /// Linear predictors `x_i . beta` for every row of `design`.
    pub fn risk_scores(&self, design: &Design) -> Vec<f64> {
        (0..design.n)
            .map(|i| design.row(i).iter().zip(&self.beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// Replaces the coefficients (keeping covariance and standard errors) and
    /// recomputes the Wald statistics and hazard ratios.
    pub fn with_coefficients(&self, beta: Vec<f64>) -> CoxFit {
        let mut fit = self.clone();
        fit.beta = beta;
        fit.refresh_wald();
        fit
    }

    fn refresh_wald(&mut self) {
        self.wald_z = self.beta.iter().zip(&self.se).map(|(b, s)| b / s).collect();
        self.p_value = self.wald_z.iter().map(|&z| two_sided_p(z)).collect();
        self.hr = self.beta.iter().map(|b| b.exp()).collect();
    }
}

/// Standardizing transform applied before solving.
struct ColumnScaling {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl ColumnScaling {
    fn fit(design: &Design) -> Result<Self> {
        let (n, p) = (design.n, design.p);
        let mut mean = vec![0.0; p];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(design.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut sd = vec![0.0; p];
        for i in 0..n {
            for j in 0..p {
                let d = design.row(i)[j] - mean[j];
                sd[j] += d * d;
            }
        }
        for s in sd.iter_mut() {
            *s = (*s / n as f64).sqrt();
            if !(*s > 0.0) {
                return Err(Error::SingularInformation);
            }
        }
        Ok(Self { mean, sd })
    }

    fn apply(&self, design: &Design) -> Vec<f64> {
        let p = design.p;
        let mut z = design.values.clone();
        for row in z.chunks_mut(p) {
            for j in 0..p {
                row[j] = (row[j] - self.mean[j]) / self.sd[j];
            }
        }
        z
    }
}

/// Efron log partial likelihood with score and information at `beta`.
pub fn partial_loglik_and_derivatives(
    design: &Design,
    time: &[f64],
    status: &[bool],
    beta: &[f64],
) -> Result<Derivatives> {
    partial_loglik_with_ties(design, time, status, beta, Ties::Efron)
}

pub fn partial_loglik_with_ties(
    design: &Design,
    time: &[f64],
    status: &[bool],
    beta: &[f64],
    ties: Ties,
) -> Result<Derivatives> {
    check_shapes(design, time, status)?;
    if beta.len() != design.p || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("beta must be finite with one entry per column".into()));
    }
    RiskSets::new(&design.values, design.p, time, status).derivatives(beta, ties)
}

fn check_shapes(design: &Design, time: &[f64], status: &[bool]) -> Result<()> {
    if design.n != time.len() || status.len() != time.len() {
        return Err(Error::InvalidArgument(format!(
            "design has {} rows, {} times, {} statuses",
            design.n,
            time.len(),
            status.len()
        )));
    }
    if design.p == 0 {
        return Err(Error::InvalidArgument("design has no columns".into()));
    }
    Ok(())
}

pub fn fit_cox(dataset: &SurvivalDataset, options: &FitOptions) -> Result<CoxFit> {
    fit_cox_design(&dataset.design(), dataset.time(), dataset.status(), options)
}

pub fn fit_cox_design(
    design: &Design,
    time: &[f64],
    status: &[bool],
    options: &FitOptions,
) -> Result<CoxFit> {
    options.validate()?;
    check_shapes(design, time, status)?;
    if !status.iter().any(|&s| s) {
        return Err(Error::NoEvents);
    }
    let p = design.p;
    let scaling = ColumnScaling::fit(design)?;
    let sets = RiskSets::new(&scaling.apply(design), p, time, status);

    let mut beta = vec![0.0; p];
    let mut current = sets.derivatives(&beta, Ties::Efron)?;
    // a singular information at the null point means a rank-deficient design
    SpdFactor::new(&current.information, p)?;

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let step = match SpdFactor::new(&current.information, p) {
            Ok(f) => f.solve(&current.score),
            Err(_) => break,
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            if let Ok(d) = sets.derivatives(&trial, Ties::Efron) {
                let change = d.loglik - current.loglik;
                if d.loglik.is_finite()
                    && (change >= 0.0 || change.abs() <= options.tolerance * current.loglik.abs())
                {
                    accepted = Some((trial, d));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((trial, next)) = accepted else { break };
        let rel = (next.loglik - current.loglik).abs() / current.loglik.abs().max(f64::MIN_POSITIVE);
        beta = trial;
        current = next;
        if rel <= options.tolerance {
            converged = true;
            break;
        }
    }

    let names = design.names.clone();
    let beta_x: Vec<f64> = beta.iter().zip(&scaling.sd).map(|(b, s)| b / s).collect();
    let covariance_z = SpdFactor::new(&current.information, p).map(|f| f.inverse());
    let (covariance, dfbeta) = match covariance_z {
        Ok(cov_z) => {
            let mut cov = vec![0.0; p * p];
            for j in 0..p {
                for k in 0..p {
                    cov[j * p + k] = cov_z[j * p + k] / (scaling.sd[j] * scaling.sd[k]);
                }
            }
            let dfbeta = if converged {
                let resid = sets.score_residuals(&beta)?;
                let mut out = vec![0.0; resid.len()];
                for (r, o) in resid.chunks(p).zip(out.chunks_mut(p)) {
                    for k in 0..p {
                        let v: f64 = (0..p).map(|j| r[j] * cov_z[j * p + k]).sum();
                        o[k] = v / scaling.sd[k];
                    }
                }
                out
            } else {
                Vec::new()
            };
            (cov, dfbeta)
        }
        Err(_) => {
            converged = false;
            (vec![f64::NAN; p * p], Vec::new())
        }
    };
    let se: Vec<f64> = (0..p).map(|j| covariance[j * p + j].sqrt()).collect();
    let mut fit = CoxFit {
        names,
        beta: beta_x,
        covariance,
        se,
        wald_z: Vec::new(),
        p_value: Vec::new(),
        hr: Vec::new(),
        log_partial_likelihood: current.loglik,
        dfbeta,
        converged,
        iterations,
    };
    fit.refresh_wald();
    Ok(fit)
}

/// dfbeta of a converged fit, `n x p` row-major (same as `fit.dfbeta`).
pub fn compute_dfbeta(fit: &CoxFit, design: &Design, time: &[f64], status: &[bool]) -> Result<Vec<f64>> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    check_shapes(design, time, status)?;
    let p = design.p;
    let sets = RiskSets::new(&design.values, p, time, status);
    let resid = sets.score_residuals(&fit.beta)?;
    let mut out = vec![0.0; resid.len()];
    for (r, o) in resid.chunks(p).zip(out.chunks_mut(p)) {
        for k in 0..p {
            o[k] = (0..p).map(|j| r[j] * fit.covariance[j * p + k]).sum();
        }
    }
    Ok(out)
}
