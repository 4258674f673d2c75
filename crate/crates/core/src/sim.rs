//! Monte Carlo harness: datasets x methods x epsilon grid x iterations, with
//! counter-based seeding, record persistence, summaries and thresholds.
//!
//! Every random stream is ChaCha20 keyed by
//! `SHA-256(domain || base_seed || dataset || method || epsilon || iteration)`
//! (integers little-endian), so each iteration is a pure function of its
//! coordinates and results do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cox::{concordance, fit_cox, CoxFit, FitOptions};
use crate::data::{split_indices, Design, SplitIndices, SurvivalDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_grouped, GlmFit, GlmOptions};
use crate::mechanisms::Epsilon;
use crate::metrics::{classification_flips, summarize, Baseline, MetricSummary, MetricsConfig, Outcome, ALPHA};
use crate::perturbation::{
    linear_predictor, output_dfbeta, phase1, phase2, phase3_release, sturges_intervals, Intervals,
    PerturbationMethod, Phase3Release, StackedDataset,
};
use crate::registry;

/// The finite part of the default grid; infinity is appended last.
pub const FINITE_GRID: [f64; 14] = [
    0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 30.0, 60.0, 100.0, 250.0, 1000.0,
];

pub fn default_grid() -> Vec<Epsilon> {
    FINITE_GRID
        .iter()
        .map(|&e| Epsilon::Finite(e))
        .chain([Epsilon::Infinite])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub datasets: Vec<String>,
    pub methods: Vec<PerturbationMethod>,
    pub epsilons: Vec<Epsilon>,
    pub iterations: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        Self {
            datasets: registry::REGISTRY.iter().map(|e| e.name.to_string()).collect(),
            methods: PerturbationMethod::ALL.to_vec(),
            epsilons: default_grid(),
            iterations: 1000,
            base_seed: 42,
            train_fraction: 0.7,
        }
    }
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("at least one iteration is required".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument("train fraction must lie in (0, 1)".into()));
        }
        if self.epsilons.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "epsilon grid must be strictly increasing with inf last".into(),
            ));
        }
        if let Some(e) = self.epsilons.iter().find(|e| e.value() <= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {e} must be positive")));
        }
        Ok(())
    }
}

/// Coordinates of one random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedContext {
    pub base_seed: u64,
    pub dataset: u64,
    pub method: u64,
    pub epsilon: u64,
    pub iteration: u64,
}

impl SeedContext {
    pub fn rng(&self, domain: &str) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(domain.as_bytes());
        h.update([0u8]);
        for v in [self.base_seed, self.dataset, self.method, self.epsilon, self.iteration] {
            h.update(v.to_le_bytes());
        }
        let seed: [u8; 32] = h.finalize().into();
        ChaCha20Rng::from_seed(seed)
    }

    /// The train/test split depends only on the dataset and iteration, so
    /// every method and budget is evaluated on the same partitions.
    pub fn split(base_seed: u64, dataset: u64, iteration: u64) -> ChaCha20Rng {
        SeedContext {
            base_seed,
            dataset,
            method: 0,
            epsilon: 0,
            iteration,
        }
        .rng("split")
    }
}

/// Stable dataset key: the registry position, else a hash of the name.
pub fn dataset_key(name: &str) -> u64 {
    match registry::index_of(name) {
        Some(i) => i as u64,
        None => {
            let d = Sha256::digest(name.as_bytes());
            u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) | (1 << 63)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub dataset: String,
    pub method: PerturbationMethod,
    pub epsilon: Epsilon,
    pub iter: usize,
    pub variables: Vec<String>,
    pub p_value: Vec<f64>,
    pub hr: Vec<f64>,
    pub converged: bool,
    /// Discrete-time fit hit (quasi-)separation.
    pub separated: bool,
    pub train_c: Option<f64>,
    pub test_c: Option<f64>,
}

impl Outcome for SimulationRecord {
    fn p_values(&self) -> &[f64] {
        &self.p_value
    }
    fn hazard_ratios(&self) -> &[f64] {
        &self.hr
    }
    fn converged(&self) -> bool {
        self.converged
    }
    fn test_c(&self) -> Option<f64> {
        self.test_c
    }
    fn train_c(&self) -> Option<f64> {
        self.train_c
    }
}

/// Clean reference fits for one dataset.
#[derive(Clone, Debug)]
pub struct DatasetContext {
    pub key: u64,
    pub data: SurvivalDataset,
    pub design: Design,
    pub cox: CoxFit,
    pub intervals: Intervals,
    /// Discrete-time GLM on the unperturbed stacked data.
    pub glm: GlmFit,
}

impl DatasetContext {
    pub fn new(data: SurvivalDataset) -> Result<Self> {
        let cox = fit_cox(&data, &FitOptions::default())?;
        if !cox.converged {
            return Err(Error::NotConverged);
        }
        let intervals = sturges_intervals(&data)?;
        let release = phase3_release(&data, &intervals, Epsilon::Infinite, &mut ChaCha20Rng::seed_from_u64(0))?;
        let stacked = StackedDataset::expand(&release);
        let glm = fit_grouped(&stacked.design, &stacked.response, &GlmOptions::default())?;
        Ok(Self {
            key: dataset_key(&data.name),
            design: data.design(),
            data,
            cox,
            intervals,
            glm,
        })
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }

    pub fn cox_baseline(&self) -> Baseline {
        Baseline {
            names: self.cox.names.clone(),
            p_value: self.cox.p_value.clone(),
            hr: self.cox.hr.clone(),
        }
    }

    pub fn glm_baseline(&self) -> Baseline {
        let k = self.intervals.k;
        Baseline {
            names: self.glm.names[k..].to_vec(),
            p_value: self.glm.p_value[k..].to_vec(),
            hr: self.glm.coefficients[k..].iter().map(|b| b.exp()).collect(),
        }
    }

    /// Variables classified differently by the Cox and discrete-time baselines.
    pub fn exclusions(&self) -> Vec<bool> {
        classification_flips(&self.cox.p_value, &self.glm_baseline().p_value, ALPHA)
    }

    pub fn summary(&self) -> DatasetBaseline {
        DatasetBaseline {
            dataset: self.name().to_string(),
            cox: self.cox_baseline(),
            glm: self.glm_baseline(),
            exclusions: self.exclusions(),
            intervals: self.intervals.clone(),
        }
    }

    pub fn split(&self, base_seed: u64, fraction: f64, iteration: usize) -> Result<SplitIndices> {
        let mut rng = SeedContext::split(base_seed, self.key, iteration as u64);
        split_indices(self.data.status(), fraction, &mut rng)
    }
}

/// Baseline information persisted with a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBaseline {
    pub dataset: String,
    pub cox: Baseline,
    pub glm: Baseline,
    pub exclusions: Vec<bool>,
    pub intervals: Intervals,
}

impl DatasetBaseline {
    pub fn config(&self, method: PerturbationMethod) -> MetricsConfig {
        match method {
            PerturbationMethod::Phase3 => MetricsConfig::new(self.glm.clone()).with_exclusions(self.exclusions.clone()),
            _ => MetricsConfig::new(self.cox.clone()),
        }
    }
}

fn rows_of(design: &Design, idx: &[usize]) -> Design {
    let mut values = Vec::with_capacity(idx.len() * design.p);
    for &i in idx {
        values.extend_from_slice(design.row(i));
    }
    Design {
        names: design.names.clone(),
        n: idx.len(),
        p: design.p,
        values,
    }
}

fn c_or_none(time: &[f64], status: &[bool], risk: &[f64]) -> Option<f64> {
    if risk.iter().any(|r| !r.is_finite()) {
        return None;
    }
    concordance(time, status, risk).ok()
}

struct Estimates {
    p_value: Vec<f64>,
    hr: Vec<f64>,
    converged: bool,
    separated: bool,
}

impl Estimates {
    fn failed(p: usize) -> Self {
        Self {
            p_value: vec![f64::NAN; p],
            hr: vec![f64::NAN; p],
            converged: false,
            separated: false,
        }
    }

    fn cox(fit: Result<CoxFit>, p: usize) -> Self {
        match fit {
            Ok(f) => Self {
                converged: f.converged,
                p_value: f.p_value,
                hr: f.hr,
                separated: false,
            },
            Err(_) => Self::failed(p),
        }
    }

    fn glm(fit: &Result<GlmFit>, k: usize, p: usize) -> Self {
        match fit {
            Ok(f) => Self {
                converged: f.converged,
                p_value: f.p_value[k..].to_vec(),
                hr: f.coefficients[k..].iter().map(|b| b.exp()).collect(),
                separated: f.separated,
            },
            Err(_) => Self::failed(p),
        }
    }
}

/// One iteration: perturb the full data once, fit all rows for p-values and
/// hazard ratios, fit the training rows for the C-index on the clean test rows.
pub fn run_iteration(
    ctx: &DatasetContext,
    method: PerturbationMethod,
    eps: Epsilon,
    iteration: usize,
    base_seed: u64,
    train_fraction: f64,
) -> Result<SimulationRecord> {
    let split = ctx.split(base_seed, train_fraction, iteration)?;
    let mut rng = SeedContext {
        base_seed,
        dataset: ctx.key,
        method: method.index(),
        epsilon: eps.key(),
        iteration: iteration as u64,
    }
    .rng("perturb");
    let p = ctx.design.p;
    let opts = FitOptions::default();
    let test_design = rows_of(&ctx.design, &split.test);
    let test_time: Vec<f64> = split.test.iter().map(|&i| ctx.data.time()[i]).collect();
    let test_status: Vec<bool> = split.test.iter().map(|&i| ctx.data.status()[i]).collect();
    let test_c = |risk: Vec<f64>| c_or_none(&test_time, &test_status, &risk);

    let (est, train_c, test) = match method {
        PerturbationMethod::Phase1 | PerturbationMethod::Phase2 => {
            let released = if method == PerturbationMethod::Phase1 {
                phase1(&ctx.data, eps, &mut rng)?
            } else {
                phase2(&ctx.data, eps, &mut rng)?
            };
            let est = Estimates::cox(fit_cox(&released, &opts), p);
            let train = released.subset(&split.train);
            match fit_cox(&train, &opts) {
                Ok(f) if f.converged => (
                    est,
                    c_or_none(train.time(), train.status(), &f.risk_scores(&train.design())),
                    test_c(f.risk_scores(&test_design)),
                ),
                _ => (est, None, None),
            }
        }
        PerturbationMethod::Phase3 => {
            let release = phase3_release(&ctx.data, &ctx.intervals, eps, &mut rng)?;
            let k = ctx.intervals.k;
            let full = StackedDataset::expand(&release);
            let est = Estimates::glm(&fit_grouped(&full.design, &full.response, &GlmOptions::default()), k, p);
            let train = Phase3Release {
                data: release.data.subset(&split.train),
                intervals: release.intervals.clone(),
            };
            let stacked = StackedDataset::expand(&train);
            match fit_grouped(&stacked.design, &stacked.response, &GlmOptions::default()) {
                Ok(f) if f.converged => {
                    let beta = &f.coefficients[k..];
                    let train_risk = linear_predictor(beta, &train.data.design());
                    (
                        est,
                        c_or_none(train.data.time(), train.data.status(), &train_risk),
                        test_c(linear_predictor(beta, &test_design)),
                    )
                }
                _ => (est, None, None),
            }
        }
        PerturbationMethod::OutputDfbeta => {
            let est = Estimates::cox(output_dfbeta(&ctx.cox, eps, &mut rng), p);
            let train = ctx.data.subset(&split.train);
            let noisy = fit_cox(&train, &opts).and_then(|f| output_dfbeta(&f, eps, &mut rng));
            match noisy {
                Ok(f) => (
                    est,
                    c_or_none(train.time(), train.status(), &f.risk_scores(&train.design())),
                    test_c(f.risk_scores(&test_design)),
                ),
                Err(_) => (est, None, None),
            }
        }
    };
    Ok(SimulationRecord {
        dataset: ctx.name().to_string(),
        method,
        epsilon: eps,
        iter: iteration,
        variables: ctx.design.names.clone(),
        p_value: est.p_value,
        hr: est.hr,
        converged: est.converged,
        separated: est.separated,
        train_c,
        test_c: test,
    })
}

/// Progress report after each (dataset, method, epsilon) condition.
#[derive(Clone, Debug)]
pub struct Progress<'a> {
    pub dataset: &'a str,
    pub method: PerturbationMethod,
    pub epsilon: Epsilon,
    pub iterations: usize,
    pub nonconverged: usize,
    pub done: usize,
    pub total: usize,
}

#[cfg(feature = "parallel")]
fn map_iterations<F>(b: usize, f: F) -> Vec<Result<SimulationRecord>>
where
    F: Fn(usize) -> Result<SimulationRecord> + Sync + Send,
{
    use rayon::prelude::*;
    (0..b).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_iterations<F>(b: usize, f: F) -> Vec<Result<SimulationRecord>>
where
    F: Fn(usize) -> Result<SimulationRecord>,
{
    (0..b).map(f).collect()
}

/// Runs the plan over prepared datasets. Records come back ordered by
/// dataset, method, epsilon and iteration whatever the thread count.
pub fn run(
    plan: &SimulationPlan,
    contexts: &[DatasetContext],
    progress: &mut dyn FnMut(&Progress<'_>),
) -> Result<Vec<SimulationRecord>> {
    plan.validate()?;
    let total = contexts.len() * plan.methods.len() * plan.epsilons.len();
    let mut done = 0;
    let mut records = Vec::with_capacity(total * plan.iterations);
    for ctx in contexts {
        for &method in &plan.methods {
            for &eps in &plan.epsilons {
                let batch = map_iterations(plan.iterations, |b| {
                    run_iteration(ctx, method, eps, b, plan.base_seed, plan.train_fraction)
                });
                let batch: Vec<SimulationRecord> = batch.into_iter().collect::<Result<_>>()?;
                done += 1;
                progress(&Progress {
                    dataset: ctx.name(),
                    method,
                    epsilon: eps,
                    iterations: batch.len(),
                    nonconverged: batch.iter().filter(|r| !r.converged).count(),
                    done,
                    total,
                });
                records.extend(batch);
            }
        }
    }
    Ok(records)
}

/// Resolves plan dataset entries: registry names, or paths to a CSV with a
/// `.json` sidecar next to it.
pub fn load_plan_datasets(plan: &SimulationPlan) -> Result<Vec<SurvivalDataset>> {
    plan.datasets.iter().map(|d| load_dataset(d)).collect()
}

pub fn load_dataset(spec: &str) -> Result<SurvivalDataset> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "csv") {
        let meta = registry::read_meta(&path.with_extension("json"))?;
        return SurvivalDataset::load_csv(path, &meta);
    }
    registry::load_named(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub name: String,
    pub n: usize,
    pub q: usize,
    /// SHA-256 of the dataset's canonical CSV serialization.
    pub sha256: String,
}

impl FixtureEntry {
    pub fn of(ds: &SurvivalDataset) -> Self {
        let digest = Sha256::digest(ds.to_csv_string().as_bytes());
        Self {
            name: ds.name.clone(),
            n: ds.n(),
            q: ds.q(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub plan: SimulationPlan,
    pub fixtures: Vec<FixtureEntry>,
    pub baselines: Vec<DatasetBaseline>,
}

impl Manifest {
    pub fn new(plan: &SimulationPlan, contexts: &[DatasetContext]) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            plan: plan.clone(),
            fixtures: contexts.iter().map(|c| FixtureEntry::of(&c.data)).collect(),
            baselines: contexts.iter().map(DatasetContext::summary).collect(),
        }
    }

    pub fn baseline(&self, dataset: &str) -> Result<&DatasetBaseline> {
        self.baselines
            .iter()
            .find(|b| b.dataset == dataset)
            .ok_or_else(|| Error::SchemaMismatch(format!("manifest has no baseline for `{dataset}`")))
    }
}

pub const RECORD_HEADER: [&str; 11] = [
    "dataset", "method", "epsilon", "iter", "variable", "p_value", "hr", "converged", "train_c", "test_c", "separated",
];

/// Shortest round-trip text for a float; `NA` for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v == 0.0 || (1e-4..1e15).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), fmt_f64)
}

fn parse_f64(s: &str) -> Result<f64> {
    if s == "NA" {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| Error::SchemaMismatch(format!("`{s}` is not a number")))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    Ok(if s == "NA" { None } else { Some(parse_f64(s)?) })
}

/// Long-format record CSV: one row per (iteration, variable); the C-index
/// columns repeat across the variables of an iteration.
pub fn records_to_csv(records: &[SimulationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_HEADER)?;
    for r in records {
        for (j, name) in r.variables.iter().enumerate() {
            w.write_record([
                r.dataset.clone(),
                r.method.to_string(),
                r.epsilon.to_string(),
                r.iter.to_string(),
                name.clone(),
                fmt_f64(r.p_value[j]),
                fmt_f64(r.hr[j]),
                u8::from(r.converged).to_string(),
                fmt_opt(r.train_c),
                fmt_opt(r.test_c),
                u8::from(r.separated).to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<SimulationRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::SchemaMismatch(format!("unexpected record header {header:?}")));
    }
    let mut out: Vec<SimulationRecord> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let method: PerturbationMethod = row[1].parse()?;
        let epsilon: Epsilon = row[2].parse()?;
        let iter: usize = row[3]
            .parse()
            .map_err(|_| Error::SchemaMismatch(format!("bad iteration `{}`", &row[3])))?;
        let same = out
            .last()
            .is_some_and(|r| r.dataset == row[0] && r.method == method && r.epsilon == epsilon && r.iter == iter);
        if !same {
            out.push(SimulationRecord {
                dataset: row[0].to_string(),
                method,
                epsilon,
                iter,
                variables: Vec::new(),
                p_value: Vec::new(),
                hr: Vec::new(),
                converged: &row[7] == "1",
                separated: &row[10] == "1",
                train_c: parse_opt(&row[8])?,
                test_c: parse_opt(&row[9])?,
            });
        }
        let r = out.last_mut().expect("pushed above");
        r.variables.push(row[4].to_string());
        r.p_value.push(parse_f64(&row[5])?);
        r.hr.push(parse_f64(&row[6])?);
    }
    Ok(out)
}

pub fn record_file_name(dataset: &str, method: PerturbationMethod) -> String {
    format!("records_{dataset}_{method}.csv")
}

/// Writes one record CSV per (dataset, method) plus `manifest.json`.
pub fn write_run(dir: &Path, manifest: &Manifest, records: &[SimulationRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<(String, PerturbationMethod), Vec<SimulationRecord>> = BTreeMap::new();
    for d in &manifest.plan.datasets {
        let name = manifest
            .fixtures
            .iter()
            .find(|f| &f.name == d || Path::new(d).file_stem().is_some_and(|s| s == f.name.as_str()))
            .map_or(d.clone(), |f| f.name.clone());
        for &m in &manifest.plan.methods {
            groups.entry((name.clone(), m)).or_default();
        }
    }
    for r in records {
        groups.entry((r.dataset.clone(), r.method)).or_default().push(r.clone());
    }
    let mut written = Vec::new();
    for ((dataset, method), recs) in &groups {
        let path = dir.join(record_file_name(dataset, *method));
        fs::write(&path, records_to_csv(recs)?)?;
        written.push(path);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(manifest)? + "\n")?;
    written.push(path);
    Ok(written)
}

pub fn read_run(dir: &Path) -> Result<(Manifest, Vec<SimulationRecord>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut records = Vec::new();
    for b in &manifest.baselines {
        for &m in &manifest.plan.methods {
            let path = dir.join(record_file_name(&b.dataset, m));
            if path.exists() {
                records.extend(records_from_csv(&fs::read_to_string(&path)?)?);
            }
        }
    }
    Ok((manifest, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub dataset: String,
    pub method: PerturbationMethod,
    pub epsilon: Epsilon,
    pub metrics: MetricSummary,
    /// Mean test C at infinity minus mean test C here.
    pub delta_c: Option<f64>,
}

/// Metrics per (dataset, method, epsilon), ordered by those keys.
pub fn summaries(manifest: &Manifest, records: &[SimulationRecord]) -> Result<Vec<ConditionSummary>> {
    let mut groups: BTreeMap<(String, PerturbationMethod, u64), Vec<&SimulationRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.method, r.epsilon.value().to_bits()))
            .or_default()
            .push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((dataset, method, _), recs) in &groups {
        let config = manifest.baseline(dataset)?.config(*method);
        let owned: Vec<SimulationRecord> = recs.iter().map(|r| (*r).clone()).collect();
        let metrics = summarize(&owned, &config)?;
        out.push(ConditionSummary {
            dataset: dataset.clone(),
            method: *method,
            epsilon: recs[0].epsilon,
            metrics,
            delta_c: None,
        });
    }
    let reference: BTreeMap<(String, PerturbationMethod), f64> = out
        .iter()
        .filter(|s| s.epsilon.is_infinite())
        .filter_map(|s| Some(((s.dataset.clone(), s.method), s.metrics.test_c?.mean)))
        .collect();
    for s in &mut out {
        if let (Some(base), Some(c)) = (reference.get(&(s.dataset.clone(), s.method)), s.metrics.test_c) {
            s.delta_c = Some(crate::metrics::delta_c(*base, c.mean));
        }
    }
    Ok(out)
}

/// A threshold table cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    At(f64),
    /// Not reached anywhere on the finite grid.
    Unmet,
    /// Always satisfied, or the metric does not apply.
    NotApplicable,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(e) => write!(f, "{e}"),
            Threshold::Unmet => write!(f, ">{}", FINITE_GRID[FINITE_GRID.len() - 1]),
            Threshold::NotApplicable => f.write_str("—"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub dataset: String,
    pub method: PerturbationMethod,
    pub eps_dc05: Threshold,
    pub eps_lsr50: Threshold,
    pub eps_lsr10: Threshold,
    pub eps_fpr10: Threshold,
}

fn first_crossing(points: &[(f64, Option<f64>)], limit: f64) -> Threshold {
    if points.iter().all(|(_, v)| v.is_none()) {
        return Threshold::NotApplicable;
    }
    points
        .iter()
        .find(|(_, v)| v.is_some_and(|v| v <= limit))
        .map_or(Threshold::Unmet, |(e, _)| Threshold::At(*e))
}

/// Smallest grid value from which the metric stays at or below `limit`.
fn permanent_crossing(points: &[(f64, Option<f64>)], limit: f64) -> Threshold {
    let values: Vec<(f64, f64)> = points.iter().filter_map(|(e, v)| v.map(|v| (*e, v))).collect();
    if values.is_empty() || values.iter().all(|(_, v)| *v < limit) {
        return Threshold::NotApplicable;
    }
    let mut start = None;
    for (e, v) in values.iter().rev() {
        if *v <= limit {
            start = Some(*e);
        } else {
            break;
        }
    }
    start.map_or(Threshold::Unmet, Threshold::At)
}

/// Table of epsilon thresholds per (dataset, method) over the finite grid.
pub fn thresholds(summaries: &[ConditionSummary], grid: &[Epsilon]) -> Result<Vec<ThresholdRow>> {
    let mut by_pair: BTreeMap<(String, PerturbationMethod), BTreeMap<u64, &ConditionSummary>> = BTreeMap::new();
    for s in summaries {
        by_pair
            .entry((s.dataset.clone(), s.method))
            .or_default()
            .insert(s.epsilon.key(), s);
    }
    let mut missing = Vec::new();
    for ((dataset, method), got) in &by_pair {
        for e in grid {
            if !got.contains_key(&e.key()) {
                missing.push(format!("{dataset}/{method}/eps={e}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let finite: Vec<f64> = grid.iter().filter(|e| !e.is_infinite()).map(|e| e.value()).collect();
    let mut rows = Vec::new();
    for ((dataset, method), got) in &by_pair {
        let series = |f: &dyn Fn(&ConditionSummary) -> Option<f64>| -> Vec<(f64, Option<f64>)> {
            finite
                .iter()
                .map(|&e| (e, f(got[&Epsilon::Finite(e).key()])))
                .collect()
        };
        let dc = series(&|s| s.delta_c);
        let lsr = series(&|s| s.metrics.mean_lsr);
        let fpr = series(&|s| s.metrics.mean_fpr);
        let eps_fpr10 = if method.is_input() {
            permanent_crossing(&fpr, 0.10)
        } else {
            Threshold::NotApplicable
        };
        rows.push(ThresholdRow {
            dataset: dataset.clone(),
            method: *method,
            eps_dc05: first_crossing(&dc, 0.05),
            eps_lsr50: first_crossing(&lsr, 0.50),
            eps_lsr10: first_crossing(&lsr, 0.10),
            eps_fpr10,
        });
    }
    Ok(rows)
}

pub fn thresholds_to_csv(rows: &[ThresholdRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "phase", "eps_dc05", "eps_lsr50", "eps_lsr10", "eps_fpr10"])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.method.label().to_string(),
            r.eps_dc05.to_string(),
            r.eps_lsr50.to_string(),
            r.eps_lsr10.to_string(),
            r.eps_fpr10.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Number of covariates shown in the hazard-ratio distribution data.
pub const TOP_HR_VARIABLES: usize = 5;

/// Summary tables and the data behind the LSR, C-index, HR distribution,
/// HR bias and FPR plots. The threshold table is included when the default
/// grid is complete.
pub fn emit_report(dir: &Path, manifest: &Manifest, records: &[SimulationRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let sums = summaries(manifest, records)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    let key = |s: &ConditionSummary| vec![s.dataset.clone(), s.method.to_string(), s.epsilon.to_string()];

    put(
        "summary.csv",
        csv_text(
            &[
                "dataset", "method", "epsilon", "iterations", "mean_lsr", "mean_fpr", "nonconverged_rate",
                "train_c_mean", "train_c_sd", "test_c_mean", "test_c_sd", "delta_c",
            ],
            sums.iter().map(|s| {
                let m = &s.metrics;
                let mut row = key(s);
                row.extend([
                    m.iterations.to_string(),
                    fmt_opt(m.mean_lsr),
                    fmt_opt(m.mean_fpr),
                    fmt_f64(m.nonconverged_rate),
                    fmt_opt(m.train_c.map(|c| c.mean)),
                    fmt_opt(m.train_c.map(|c| c.sd)),
                    fmt_opt(m.test_c.map(|c| c.mean)),
                    fmt_opt(m.test_c.map(|c| c.sd)),
                    fmt_opt(s.delta_c),
                ]);
                row
            }),
        )?,
    )?;
    put("summary.json", serde_json::to_string_pretty(&sums)? + "\n")?;

    put(
        "fig1_lsr.csv",
        csv_text(
            &["dataset", "method", "epsilon", "mean_lsr", "nonconverged_rate"],
            sums.iter().map(|s| {
                let mut row = key(s);
                row.extend([fmt_opt(s.metrics.mean_lsr), fmt_f64(s.metrics.nonconverged_rate)]);
                row
            }),
        )?,
    )?;

    put(
        "fig2_cindex.csv",
        csv_text(
            &["dataset", "method", "epsilon", "split", "mean", "sd", "lower", "upper", "count"],
            sums.iter().flat_map(|s| {
                [("train", s.metrics.train_c), ("test", s.metrics.test_c)]
                    .into_iter()
                    .map(|(part, c)| {
                        let mut row = key(s);
                        row.push(part.to_string());
                        match c {
                            Some(c) => row.extend([
                                fmt_f64(c.mean),
                                fmt_f64(c.sd),
                                fmt_f64(c.mean - c.sd),
                                fmt_f64(c.mean + c.sd),
                                c.count.to_string(),
                            ]),
                            None => row.extend(["NA", "NA", "NA", "NA", "0"].map(String::from)),
                        }
                        row
                    })
                    .collect::<Vec<_>>()
            }),
        )?,
    )?;

    // top covariates by descending clean Cox coefficient
    let mut top: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for b in &manifest.baselines {
        let mut idx: Vec<usize> = (0..b.cox.names.len()).collect();
        idx.sort_by(|&x, &y| b.cox.hr[y].ln().total_cmp(&b.cox.hr[x].ln()).then(x.cmp(&y)));
        idx.truncate(TOP_HR_VARIABLES);
        top.insert(b.dataset.clone(), idx.into_iter().enumerate().map(|(r, j)| (j, r + 1)).collect());
    }
    put(
        "fig3_hr_distribution.csv",
        csv_text(
            &["dataset", "method", "epsilon", "iter", "rank", "variable", "hr", "baseline_hr", "converged"],
            records.iter().flat_map(|r| {
                let base = manifest.baseline(&r.dataset).ok();
                top.get(&r.dataset)
                    .into_iter()
                    .flatten()
                    .map(|&(j, rank)| {
                        vec![
                            r.dataset.clone(),
                            r.method.to_string(),
                            r.epsilon.to_string(),
                            r.iter.to_string(),
                            rank.to_string(),
                            r.variables[j].clone(),
                            fmt_f64(r.hr[j]),
                            base.map_or("NA".into(), |b| fmt_f64(b.cox.hr[j])),
                            u8::from(r.converged).to_string(),
                        ]
                    })
                    .collect::<Vec<_>>()
            }),
        )?,
    )?;

    let variable_rows = |f: &dyn Fn(&crate::metrics::VariableMetrics) -> Vec<String>| {
        sums.iter()
            .flat_map(|s| {
                s.metrics
                    .variables
                    .iter()
                    .map(|v| {
                        let mut row = key(s);
                        row.push(v.name.clone());
                        row.extend(f(v));
                        row
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    put(
        "fig4_hr_bias.csv",
        csv_text(
            &["dataset", "method", "epsilon", "variable", "baseline_hr", "significant", "bias", "abs_bias"],
            variable_rows(&|v| {
                vec![
                    fmt_f64(v.baseline_hr),
                    u8::from(v.significant).to_string(),
                    fmt_opt(v.bias),
                    fmt_opt(v.abs_bias),
                ]
            }),
        )?,
    )?;
    put(
        "variables.csv",
        csv_text(
            &[
                "dataset", "method", "epsilon", "variable", "baseline_p", "significant", "excluded", "lsr", "fpr",
                "retained", "lost_converged", "nonconverged",
            ],
            variable_rows(&|v| {
                vec![
                    fmt_f64(v.baseline_p),
                    u8::from(v.significant).to_string(),
                    u8::from(v.excluded).to_string(),
                    fmt_opt(v.lsr),
                    fmt_opt(v.fpr),
                    fmt_f64(v.retained),
                    fmt_f64(v.lost_converged),
                    fmt_f64(v.nonconverged),
                ]
            }),
        )?,
    )?;
    put(
        "fpr.csv",
        csv_text(
            &["dataset", "method", "epsilon", "mean_fpr"],
            sums.iter().map(|s| {
                let mut row = key(s);
                row.push(fmt_opt(s.metrics.mean_fpr));
                row
            }),
        )?,
    )?;
    if let Ok(rows) = thresholds(&sums, &default_grid()) {
        if !rows.is_empty() {
            put("thresholds.csv", thresholds_to_csv(&rows)?)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan() {
        let plan = SimulationPlan::default();
        assert_eq!(plan.epsilons.len(), 15);
        assert_eq!(plan.epsilons.last(), Some(&Epsilon::Infinite));
        assert_eq!(plan.iterations, 1000);
        assert_eq!(plan.base_seed, 42);
        plan.validate().unwrap();
        let mut bad = plan.clone();
        bad.epsilons.swap(0, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seed_streams_are_distinct_and_stable() {
        use rand::RngCore;
        let c = SeedContext {
            base_seed: 42,
            dataset: 0,
            method: 0,
            epsilon: Epsilon::Finite(1.0).key(),
            iteration: 0,
        };
        let a = c.rng("perturb").next_u64();
        assert_eq!(a, c.rng("perturb").next_u64());
        assert_ne!(a, SeedContext { iteration: 1, ..c }.rng("perturb").next_u64());
        assert_ne!(a, SeedContext { method: 1, ..c }.rng("perturb").next_u64());
        assert_ne!(a, c.rng("split").next_u64());
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, 0.05, 1e-300, 0.123456789012345, 2.5e20, -3.75, 1e-4, 9.9e-5] {
            assert_eq!(parse_f64(&fmt_f64(v)).unwrap(), v);
        }
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
    }

    fn pts(v: &[Option<f64>]) -> Vec<(f64, Option<f64>)> {
        FINITE_GRID.iter().copied().zip(v.iter().copied()).collect()
    }

    #[test]
    fn threshold_rules() {
        let falling: Vec<Option<f64>> = (0..14).map(|i| Some(1.0 - i as f64 * 0.1)).collect();
        assert_eq!(first_crossing(&pts(&falling), 0.5), Threshold::At(5.0));
        assert_eq!(first_crossing(&pts(&[Some(0.9); 14]), 0.5), Threshold::Unmet);
        assert_eq!(first_crossing(&pts(&[None; 14]), 0.5), Threshold::NotApplicable);

        // bell: below, peak, back below from 250
        let mut bell = vec![Some(0.05); 14];
        for (i, v) in [(8, 0.3), (9, 0.5), (10, 0.2), (11, 0.11)] {
            bell[i] = Some(v);
        }
        assert_eq!(permanent_crossing(&pts(&bell), 0.10), Threshold::At(250.0));
        assert_eq!(permanent_crossing(&pts(&[Some(0.05); 14]), 0.10), Threshold::NotApplicable);
        let mut rising = vec![Some(0.05); 14];
        rising[13] = Some(0.4);
        assert_eq!(permanent_crossing(&pts(&rising), 0.10), Threshold::Unmet);
        assert_eq!(Threshold::Unmet.to_string(), ">1000");
        assert_eq!(Threshold::At(0.5).to_string(), "0.5");
    }

    #[test]
    fn dataset_keys() {
        assert_eq!(dataset_key("lung"), 0);
        assert_eq!(dataset_key("flchain"), 4);
        assert!(dataset_key("custom") >= 1 << 63);
    }
}
