//! The four perturbation strategies: covariates only, all inputs, discrete-time
//! stacking, and dfbeta-calibrated output noise.
//!
//! Mechanisms are applied subject by subject, covariates in schema order, then
//! time (or exit interval), then status, so a seeded stream replays exactly.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cox::CoxFit;
use crate::data::{CovariateKind, CovariateSpec, Design, SurvivalDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_grouped, GlmFit, GlmOptions, GroupedDesign};
use crate::mechanisms::{binary_rr, categorical_rr, laplace_clamped, sample_laplace, Allocation, Epsilon, PrivacyBudget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationMethod {
    Phase1,
    Phase2,
    Phase3,
    #[serde(rename = "output")]
    OutputDfbeta,
}

impl PerturbationMethod {
    pub const ALL: [PerturbationMethod; 4] = [
        PerturbationMethod::Phase1,
        PerturbationMethod::Phase2,
        PerturbationMethod::Phase3,
        PerturbationMethod::OutputDfbeta,
    ];

    /// Stable index used for seeding.
    pub fn index(self) -> u64 {
        match self {
            PerturbationMethod::Phase1 => 0,
            PerturbationMethod::Phase2 => 1,
            PerturbationMethod::Phase3 => 2,
            PerturbationMethod::OutputDfbeta => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationMethod::Phase1 => "phase1",
            PerturbationMethod::Phase2 => "phase2",
            PerturbationMethod::Phase3 => "phase3",
            PerturbationMethod::OutputDfbeta => "output",
        }
    }

    /// Label used in threshold tables.
    pub fn label(self) -> &'static str {
        match self {
            PerturbationMethod::Phase1 => "Phase 1",
            PerturbationMethod::Phase2 => "Phase 2",
            PerturbationMethod::Phase3 => "Phase 3",
            PerturbationMethod::OutputDfbeta => "Output",
        }
    }

    /// Budget split for a dataset with `q` covariates and `p` coefficients.
    pub fn allocation(self, q: usize, p: usize) -> Allocation {
        match self {
            PerturbationMethod::Phase1 => Allocation::PerCovariate(q),
            PerturbationMethod::Phase2 | PerturbationMethod::Phase3 => Allocation::AllInputs(q),
            PerturbationMethod::OutputDfbeta => Allocation::PerCoefficient(p),
        }
    }

    pub fn is_input(self) -> bool {
        self != PerturbationMethod::OutputDfbeta
    }
}

impl fmt::Display for PerturbationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "phase1" | "1" => Ok(PerturbationMethod::Phase1),
            "phase2" | "2" => Ok(PerturbationMethod::Phase2),
            "phase3" | "3" => Ok(PerturbationMethod::Phase3),
            "output" | "dfbeta" | "output-dfbeta" => Ok(PerturbationMethod::OutputDfbeta),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected phase1, phase2, phase3 or output)"
            ))),
        }
    }
}

fn perturb_value<R: RngCore + ?Sized>(spec: &CovariateSpec, v: f64, eps: Epsilon, rng: &mut R) -> Result<f64> {
    Ok(match spec.kind {
        CovariateKind::Continuous => laplace_clamped(v, spec.lower, spec.upper, eps, rng)?,
        CovariateKind::Binary => f64::from(u8::from(binary_rr(v == 1.0, eps, rng))),
        CovariateKind::Categorical { levels } => categorical_rr(v as usize, levels, eps, rng)? as f64,
    })
}

fn perturb_row<R: RngCore + ?Sized>(
    specs: &[CovariateSpec],
    row: &[f64],
    eps: Epsilon,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<()> {
    for (spec, &v) in specs.iter().zip(row) {
        out.push(perturb_value(spec, v, eps, rng)?);
    }
    Ok(())
}

/// Covariates only, `eps / q` per covariate. Time and status are copied.
pub fn phase1<R: RngCore + ?Sized>(dataset: &SurvivalDataset, eps: Epsilon, rng: &mut R) -> Result<SurvivalDataset> {
    if eps.is_infinite() {
        return Ok(dataset.clone());
    }
    let share = PrivacyBudget::new(eps, Allocation::PerCovariate(dataset.q())).share();
    let mut x = Vec::with_capacity(dataset.values().len());
    for i in 0..dataset.n() {
        perturb_row(dataset.specs(), dataset.row(i), share, rng, &mut x)?;
    }
    Ok(SurvivalDataset::with_bounds(
        dataset.name.clone(),
        x,
        dataset.time().to_vec(),
        dataset.status().to_vec(),
        dataset.specs().to_vec(),
        dataset.time_bounds(),
    ))
}

/// Covariates, time and status, `eps / (q + 2)` each. Time is clamped to the
/// observed range.
pub fn phase2<R: RngCore + ?Sized>(dataset: &SurvivalDataset, eps: Epsilon, rng: &mut R) -> Result<SurvivalDataset> {
    if eps.is_infinite() {
        return Ok(dataset.clone());
    }
    let share = PrivacyBudget::new(eps, Allocation::AllInputs(dataset.q())).share();
    let (t_lo, t_hi) = dataset.time_bounds();
    let n = dataset.n();
    let mut x = Vec::with_capacity(dataset.values().len());
    let mut time = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        perturb_row(dataset.specs(), dataset.row(i), share, rng, &mut x)?;
        time.push(laplace_clamped(dataset.time()[i], t_lo, t_hi, share, rng)?);
        status.push(binary_rr(dataset.status()[i], share, rng));
    }
    Ok(SurvivalDataset::with_bounds(
        dataset.name.clone(),
        x,
        time,
        status,
        dataset.specs().to_vec(),
        dataset.time_bounds(),
    ))
}

/// Discrete-time intervals for survival stacking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub k: usize,
    /// `k - 1` inner cut points; interval `j` (1-based) is `(cut_{j-1}, cut_j]`.
    pub cuts: Vec<f64>,
}

impl Intervals {
    /// 1-based exit interval: the smallest `j` with `t <= cut_j`, else `k`.
    pub fn exit_interval(&self, t: f64) -> usize {
        self.cuts.partition_point(|&c| c < t) + 1
    }
}

/// `K = min(d_unique, 1 + floor(log2 N))` with inner cuts at equal-frequency
/// quantiles of the event times.
pub fn sturges_intervals(dataset: &SurvivalDataset) -> Result<Intervals> {
    let mut events: Vec<f64> = dataset
        .time()
        .iter()
        .zip(dataset.status())
        .filter(|(_, &s)| s)
        .map(|(&t, _)| t)
        .collect();
    if events.is_empty() {
        return Err(Error::NoEvents);
    }
    events.sort_by(f64::total_cmp);
    let mut unique = events.clone();
    unique.dedup();
    let k = sturges_k(unique.len(), dataset.n());
    let cuts = (1..k).map(|j| quantile_sorted(&events, j as f64 / k as f64)).collect();
    Ok(Intervals { k, cuts })
}

pub fn sturges_k(unique_event_times: usize, n: usize) -> usize {
    let sturges = 1 + (usize::BITS - 1 - n.max(1).leading_zeros()) as usize;
    unique_event_times.min(sturges)
}

/// Linear-interpolation quantile (the common "type 7" definition).
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A privatized Phase-3 release: perturbed covariates with the perturbed exit
/// interval stored as time and the perturbed status.
#[derive(Clone, Debug)]
pub struct Phase3Release {
    pub data: SurvivalDataset,
    pub intervals: Intervals,
}

impl Phase3Release {
    pub fn exit(&self, i: usize) -> usize {
        self.data.time()[i] as usize
    }
}

/// Covariates with `eps / (q + 2)` each, then the exit interval by k-ary RR
/// and the status by binary RR, one share each.
pub fn phase3_release<R: RngCore + ?Sized>(
    dataset: &SurvivalDataset,
    intervals: &Intervals,
    eps: Epsilon,
    rng: &mut R,
) -> Result<Phase3Release> {
    let share = PrivacyBudget::new(eps, Allocation::AllInputs(dataset.q())).share();
    let k = intervals.k;
    let n = dataset.n();
    let mut x = Vec::with_capacity(dataset.values().len());
    let mut exit = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        if eps.is_infinite() {
            x.extend_from_slice(dataset.row(i));
        } else {
            perturb_row(dataset.specs(), dataset.row(i), share, rng, &mut x)?;
        }
        let level = intervals.exit_interval(dataset.time()[i]) - 1;
        let released = if k >= 2 { categorical_rr(level, k, share, rng)? } else { level };
        exit.push((released + 1) as f64);
        status.push(binary_rr(dataset.status()[i], share, rng));
    }
    let data = SurvivalDataset::with_bounds(
        dataset.name.clone(),
        x,
        exit,
        status,
        dataset.specs().to_vec(),
        (1.0, k as f64),
    );
    Ok(Phase3Release {
        data,
        intervals: intervals.clone(),
    })
}

/// Person-period expansion of a Phase-3 release.
#[derive(Clone, Debug)]
pub struct StackedDataset {
    /// Interval indicators `1..=K` then the covariate design columns.
    pub design: GroupedDesign,
    pub response: Vec<f64>,
    /// Subject behind each person-period row.
    pub subject: Vec<usize>,
}

impl StackedDataset {
    /// Subject `i` contributes rows for intervals `1..=k*'_i`; the response is
    /// `delta'_i` on the last row and 0 before. Consumes no randomness.
    pub fn expand(release: &Phase3Release) -> Self {
        let data = &release.data;
        let k = release.intervals.k;
        let n = data.n();
        let covariates = data.design();
        let mut names: Vec<String> = (1..=k).map(|j| format!("interval{j}")).collect();
        names.extend(covariates.names.iter().cloned());
        let mut group_start = Vec::with_capacity(n + 1);
        let mut indicator = Vec::new();
        let mut response = Vec::new();
        let mut subject = Vec::new();
        group_start.push(0);
        for i in 0..n {
            let exit = release.exit(i);
            for j in 1..=exit {
                indicator.push(Some((j - 1) as u32));
                response.push(if j == exit && data.status()[i] { 1.0 } else { 0.0 });
                subject.push(i);
            }
            group_start.push(indicator.len());
        }
        StackedDataset {
            design: GroupedDesign {
                indicators: k,
                dense_cols: covariates.p,
                dense: covariates.values,
                group_start,
                indicator,
                names,
            },
            response,
            subject,
        }
    }
}

/// A Phase-3 release with its discrete-time logistic fit.
#[derive(Clone, Debug)]
pub struct Phase3Outcome {
    pub release: Phase3Release,
    pub fit: GlmFit,
}

impl Phase3Outcome {
    /// Covariate coefficients (interval effects dropped).
    pub fn covariate_coefficients(&self) -> &[f64] {
        &self.fit.coefficients[self.release.intervals.k..]
    }

    pub fn covariate_p_values(&self) -> &[f64] {
        &self.fit.p_value[self.release.intervals.k..]
    }

    /// Linear predictor from covariate coefficients only.
    pub fn risk_scores(&self, design: &Design) -> Vec<f64> {
        linear_predictor(self.covariate_coefficients(), design)
    }
}

pub fn phase3<R: RngCore + ?Sized>(
    dataset: &SurvivalDataset,
    intervals: &Intervals,
    eps: Epsilon,
    rng: &mut R,
    options: &GlmOptions,
) -> Result<Phase3Outcome> {
    let release = phase3_release(dataset, intervals, eps, rng)?;
    let stacked = StackedDataset::expand(&release);
    let fit = fit_grouped(&stacked.design, &stacked.response, options)?;
    Ok(Phase3Outcome { release, fit })
}

pub(crate) fn linear_predictor(beta: &[f64], design: &Design) -> Vec<f64> {
    (0..design.n)
        .map(|i| design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

/// Laplace noise scale per coefficient: `max_i |dfbeta_ij| / (eps / p)`.
pub fn output_noise_scales(fit: &CoxFit, eps: Epsilon) -> Result<Vec<f64>> {
    let sensitivity = fit.dfbeta_sensitivity()?;
    let share = PrivacyBudget::new(eps, Allocation::PerCoefficient(fit.p())).share();
    Ok(sensitivity.iter().map(|d| d / share.value()).collect())
}

/// Adds Laplace noise to each coefficient of a converged clean fit. Standard
/// errors stay those of the clean fit; p-values and hazard ratios follow the
/// noisy coefficients.
pub fn output_dfbeta<R: RngCore + ?Sized>(fit: &CoxFit, eps: Epsilon, rng: &mut R) -> Result<CoxFit> {
    let scales = output_noise_scales(fit, eps)?;
    if eps.is_infinite() {
        return Ok(fit.clone());
    }
    let beta = fit
        .beta
        .iter()
        .zip(&scales)
        .map(|(b, &s)| b + sample_laplace(s, rng))
        .collect();
    Ok(fit.with_coefficients(beta))
}
