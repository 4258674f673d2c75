//! Loss of significance, false positives, hazard-ratio bias and C-index
//! degradation over repeated perturbed fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

/// One perturbed iteration as seen by the metrics.
pub trait Outcome {
    fn p_values(&self) -> &[f64];
    fn hazard_ratios(&self) -> &[f64];
    fn converged(&self) -> bool;
    fn test_c(&self) -> Option<f64>;
    fn train_c(&self) -> Option<f64>;
}

/// Clean reference fit against which significance changes are counted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub names: Vec<String>,
    pub p_value: Vec<f64>,
    pub hr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub alpha: f64,
    pub baseline: Baseline,
    /// Variables left out of both LSR and FPR.
    pub excluded: Vec<bool>,
}

impl MetricsConfig {
    pub fn new(baseline: Baseline) -> Self {
        let p = baseline.names.len();
        Self {
            alpha: ALPHA,
            baseline,
            excluded: vec![false; p],
        }
    }

    pub fn with_exclusions(mut self, excluded: Vec<bool>) -> Self {
        self.excluded = excluded;
        self
    }

    pub fn significant(&self, j: usize) -> bool {
        self.baseline.p_value[j] < self.alpha
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        let p = self.baseline.names.len();
        if self.baseline.p_value.len() != p || self.baseline.hr.len() != p || self.excluded.len() != p {
            return Err(Error::InvalidArgument("baseline vectors differ in length".into()));
        }
        Ok(())
    }
}

/// Variables whose significance at `alpha` differs between two reference
/// fits (Cox versus the unperturbed discrete-time GLM).
pub fn classification_flips(reference: &[f64], other: &[f64], alpha: f64) -> Vec<bool> {
    reference
        .iter()
        .zip(other)
        .map(|(a, b)| (*a < alpha) != (*b < alpha))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub name: String,
    pub baseline_p: f64,
    pub baseline_hr: f64,
    pub significant: bool,
    pub excluded: bool,
    /// Significance lost, non-converged iterations included.
    pub lsr: Option<f64>,
    pub fpr: Option<f64>,
    /// Converged and still significant.
    pub retained: f64,
    /// Converged and no longer significant.
    pub lost_converged: f64,
    pub nonconverged: f64,
    pub bias: Option<f64>,
    pub abs_bias: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl MeanSd {
    /// Mean and sample standard deviation; `None` for an empty input.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            sd,
            count: v.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub iterations: usize,
    pub variables: Vec<VariableMetrics>,
    pub mean_lsr: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub nonconverged_rate: f64,
    pub train_c: Option<MeanSd>,
    pub test_c: Option<MeanSd>,
}

impl MetricSummary {
    pub fn mean_lsr(&self) -> Result<f64> {
        self.mean_lsr.ok_or(Error::NoSignificantBaseline)
    }
}

/// Per-variable and dataset-level metrics for the iterations of one condition.
pub fn summarize<O: Outcome>(records: &[O], config: &MetricsConfig) -> Result<MetricSummary> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to summarize".into()));
    }
    let p = config.baseline.names.len();
    if let Some(r) = records.iter().find(|r| r.p_values().len() != p || r.hazard_ratios().len() != p) {
        return Err(Error::InvalidArgument(format!(
            "record has {} p-values for {p} variables",
            r.p_values().len()
        )));
    }
    let b = records.len() as f64;
    let mut variables = Vec::with_capacity(p);
    for j in 0..p {
        let significant = config.significant(j);
        let excluded = config.excluded[j];
        let mut retained = 0usize;
        let mut lost = 0usize;
        let mut nonconv = 0usize;
        for r in records {
            if !r.converged() {
                nonconv += 1;
            } else if r.p_values()[j] < config.alpha {
                retained += 1;
            } else {
                lost += 1;
            }
        }
        let rate = |k: usize| k as f64 / b;
        let (lsr, fpr) = match (excluded, significant) {
            (true, _) => (None, None),
            (false, true) => (Some(rate(lost + nonconv)), None),
            (false, false) => (None, Some(rate(retained))),
        };
        let bias = hr_bias(records, j, config.baseline.hr[j]);
        variables.push(VariableMetrics {
            name: config.baseline.names[j].clone(),
            baseline_p: config.baseline.p_value[j],
            baseline_hr: config.baseline.hr[j],
            significant,
            excluded,
            lsr,
            fpr,
            retained: rate(retained),
            lost_converged: rate(lost),
            nonconverged: rate(nonconv),
            bias: bias.map(|b| b.0),
            abs_bias: bias.map(|b| b.1),
        });
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let mean_lsr = mean(variables.iter().filter_map(|v| v.lsr).collect());
    let mean_fpr = mean(variables.iter().filter_map(|v| v.fpr).collect());
    Ok(MetricSummary {
        iterations: records.len(),
        mean_lsr,
        mean_fpr,
        nonconverged_rate: records.iter().filter(|r| !r.converged()).count() as f64 / b,
        train_c: MeanSd::of(records.iter().filter_map(|r| r.train_c())),
        test_c: MeanSd::of(records.iter().filter_map(|r| r.test_c())),
        variables,
    })
}

/// Mean signed relative HR deviation and mean `|HR / HR_clean - 1|` over
/// converged iterations with a finite hazard ratio.
pub fn hr_bias<O: Outcome>(records: &[O], j: usize, clean: f64) -> Option<(f64, f64)> {
    let rel: Vec<f64> = records
        .iter()
        .filter(|r| r.converged() && r.hazard_ratios()[j].is_finite())
        .map(|r| (r.hazard_ratios()[j] - clean) / clean)
        .collect();
    if rel.is_empty() {
        return None;
    }
    let n = rel.len() as f64;
    Some((rel.iter().sum::<f64>() / n, rel.iter().map(|d| d.abs()).sum::<f64>() / n))
}

/// `C_test(inf) - C_test(eps)`; positive values are utility loss.
pub fn delta_c(baseline_test_c: f64, test_c: f64) -> f64 {
    baseline_test_c - test_c
}
