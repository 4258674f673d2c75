//! Survival data representation, fixture IO and the train/test split.
//!
//! A [`SurvivalDataset`] holds the raw covariates (continuous values, 0/1
//! binaries, 0-based categorical level codes), observation times and event
//! indicators. Clipping bounds are always derived from the observed data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Binary,
    /// `levels >= 3`; values are stored as level codes `0..levels`.
    Categorical { levels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    pub lower: f64,
    pub upper: f64,
    /// Level labels. Required for categoricals; optional for binaries, where
    /// `labels[1]` names the indicator column (`sex` + `M` -> `sexM`).
    pub labels: Vec<String>,
}

impl CovariateSpec {
    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    /// Names of the model-matrix columns this covariate expands to.
    pub fn design_names(&self) -> Vec<String> {
        match &self.kind {
            CovariateKind::Continuous => vec![self.name.clone()],
            CovariateKind::Binary => match self.labels.get(1) {
                Some(label) => vec![format!("{}{}", self.name, label)],
                None => vec![self.name.clone()],
            },
            CovariateKind::Categorical { levels } => (1..*levels)
                .map(|l| match self.labels.get(l) {
                    Some(label) => format!("{}{}", self.name, label),
                    None => format!("{}{}", self.name, l),
                })
                .collect(),
        }
    }

    pub fn design_width(&self) -> usize {
        match self.kind {
            CovariateKind::Categorical { levels } => levels - 1,
            _ => 1,
        }
    }
}

/// Sidecar metadata stored next to each fixture CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default = "default_time_column")]
    pub time_column: String,
    #[serde(default = "default_status_column")]
    pub status_column: String,
    pub covariates: Vec<CovariateMeta>,
}

fn default_time_column() -> String {
    "time".into()
}

fn default_status_column() -> String {
    "status".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovariateMeta {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl CovariateMeta {
    fn to_kind(&self) -> Result<CovariateKind> {
        match self.kind.as_str() {
            "continuous" => Ok(CovariateKind::Continuous),
            "binary" => Ok(CovariateKind::Binary),
            "categorical" => {
                let levels = self.labels.as_ref().map_or(0, Vec::len);
                if levels < 3 {
                    return Err(Error::SchemaMismatch(format!(
                        "categorical covariate `{}` needs at least 3 labels",
                        self.name
                    )));
                }
                Ok(CovariateKind::Categorical { levels })
            }
            other => Err(Error::SchemaMismatch(format!(
                "covariate `{}` has unknown kind `{other}`",
                self.name
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalDataset {
    pub name: String,
    /// Row-major `n x q` covariate values.
    x: Vec<f64>,
    time: Vec<f64>,
    status: Vec<bool>,
    specs: Vec<CovariateSpec>,
    time_bounds: (f64, f64),
}

impl SurvivalDataset {
    /// Builds a dataset and derives all bounds from the data.
    pub fn new(
        name: impl Into<String>,
        x: Vec<f64>,
        time: Vec<f64>,
        status: Vec<bool>,
        specs: Vec<CovariateSpec>,
    ) -> Result<Self> {
        let mut ds = Self::from_parts(name, x, time, status, specs)?;
        ds.derive_bounds()?;
        Ok(ds)
    }

    /// Builds a dataset keeping the supplied bounds (used for perturbed
    /// releases and subsets, which inherit the parent's clipping bounds).
    pub(crate) fn with_bounds(
        name: impl Into<String>,
        x: Vec<f64>,
        time: Vec<f64>,
        status: Vec<bool>,
        specs: Vec<CovariateSpec>,
        time_bounds: (f64, f64),
    ) -> Self {
        Self {
            name: name.into(),
            x,
            time,
            status,
            specs,
            time_bounds,
        }
    }

    fn from_parts(
        name: impl Into<String>,
        x: Vec<f64>,
        time: Vec<f64>,
        status: Vec<bool>,
        specs: Vec<CovariateSpec>,
    ) -> Result<Self> {
        let n = time.len();
        let q = specs.len();
        if status.len() != n || x.len() != n * q {
            return Err(Error::SchemaMismatch(format!(
                "shape mismatch: {} times, {} statuses, {} values for {} covariates",
                n,
                status.len(),
                x.len(),
                q
            )));
        }
        if n == 0 {
            return Err(Error::ValidationFailure("dataset is empty".into()));
        }
        for (i, &t) in time.iter().enumerate() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::ValidationFailure(format!("row {i}: time {t} is not positive")));
            }
        }
        for (j, spec) in specs.iter().enumerate() {
            for i in 0..n {
                let v = x[i * q + j];
                let ok = match spec.kind {
                    CovariateKind::Continuous => v.is_finite(),
                    CovariateKind::Binary => v == 0.0 || v == 1.0,
                    CovariateKind::Categorical { levels } => {
                        v >= 0.0 && v.fract() == 0.0 && (v as usize) < levels
                    }
                };
                if !ok {
                    return Err(Error::ValidationFailure(format!(
                        "row {i}: invalid value {v} for covariate `{}`",
                        spec.name
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            x,
            time,
            status,
            specs,
            time_bounds: (f64::NAN, f64::NAN),
        })
    }

    /// Sets every covariate's clipping bounds to its observed min/max and
    /// records the observed time range. Constant continuous covariates are
    /// rejected rather than silently widened.
    pub fn derive_bounds(&mut self) -> Result<()> {
        let q = self.q();
        for j in 0..q {
            let (lo, hi) = match self.specs[j].kind {
                CovariateKind::Continuous => {
                    let (lo, hi) = min_max(self.column(j));
                    if lo == hi {
                        return Err(Error::DegenerateRange(self.specs[j].name.clone()));
                    }
                    (lo, hi)
                }
                CovariateKind::Binary => (0.0, 1.0),
                CovariateKind::Categorical { levels } => (0.0, (levels - 1) as f64),
            };
            self.specs[j].lower = lo;
            self.specs[j].upper = hi;
        }
        self.time_bounds = min_max(self.time.iter().copied());
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn q(&self) -> usize {
        self.specs.len()
    }

    pub fn events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }

    pub fn event_rate(&self) -> f64 {
        self.events() as f64 / self.n() as f64
    }

    pub fn specs(&self) -> &[CovariateSpec] {
        &self.specs
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn time_bounds(&self) -> (f64, f64) {
        self.time_bounds
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let q = self.q();
        &self.x[i * q..(i + 1) * q]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.q() + j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.x.iter().skip(j).step_by(self.q()).copied()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    pub fn design_names(&self) -> Vec<String> {
        self.specs.iter().flat_map(CovariateSpec::design_names).collect()
    }

    pub fn design_width(&self) -> usize {
        self.specs.iter().map(CovariateSpec::design_width).sum()
    }

    /// Expands the raw covariates into model-matrix columns (treatment
    /// contrasts for categoricals, first level as reference).
    pub fn design(&self) -> Design {
        let p = self.design_width();
        let n = self.n();
        let mut values = Vec::with_capacity(n * p);
        for i in 0..n {
            self.design_row_into(self.row(i), &mut values);
        }
        Design {
            names: self.design_names(),
            n,
            p,
            values,
        }
    }

    pub(crate) fn design_row_into(&self, row: &[f64], out: &mut Vec<f64>) {
        for (spec, &v) in self.specs.iter().zip(row) {
            match spec.kind {
                CovariateKind::Categorical { levels } => {
                    let level = v as usize;
                    out.extend((1..levels).map(|l| if l == level { 1.0 } else { 0.0 }));
                }
                _ => out.push(v),
            }
        }
    }

    /// Rows `idx` in the given order. Bounds are inherited, not re-derived.
    pub fn subset(&self, idx: &[usize]) -> SurvivalDataset {
        let q = self.q();
        let mut x = Vec::with_capacity(idx.len() * q);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        SurvivalDataset::with_bounds(
            self.name.clone(),
            x,
            idx.iter().map(|&i| self.time[i]).collect(),
            idx.iter().map(|&i| self.status[i]).collect(),
            self.specs.clone(),
            self.time_bounds,
        )
    }

    /// Reads a fixture CSV plus its sidecar metadata. Rows with any empty or
    /// `NA` field in the selected columns are dropped (complete cases only).
    pub fn load_csv(csv_path: &Path, meta: &DatasetMeta) -> Result<Self> {
        let text = fs::read_to_string(csv_path)?;
        Self::parse_csv(&text, meta)
    }

    pub fn parse_csv(text: &str, meta: &DatasetMeta) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let position: HashMap<&str, usize> =
            headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
        let mut wanted = Vec::new();
        for c in &meta.covariates {
            wanted.push(c.name.as_str());
        }
        wanted.push(&meta.time_column);
        wanted.push(&meta.status_column);
        let cols = wanted
            .iter()
            .map(|name| {
                position.get(name).copied().ok_or_else(|| {
                    Error::SchemaMismatch(format!("column `{name}` missing from header"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if headers.len() != cols.len() {
            let extra: Vec<_> = headers.iter().filter(|h| !wanted.contains(h)).collect();
            return Err(Error::SchemaMismatch(format!("unexpected columns: {extra:?}")));
        }

        let q = meta.covariates.len();
        let mut x = Vec::new();
        let mut time = Vec::new();
        let mut status = Vec::new();
        'rows: for (r, record) in reader.records().enumerate() {
            let record = record?;
            let line = r + 2;
            let mut parsed = Vec::with_capacity(q + 2);
            for &c in &cols {
                let field = record.get(c).unwrap_or("").trim();
                if field.is_empty() || field.eq_ignore_ascii_case("na") {
                    continue 'rows;
                }
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{field}` is not a number"),
                })?;
                parsed.push(v);
            }
            x.extend_from_slice(&parsed[..q]);
            time.push(parsed[q]);
            status.push(match parsed[q + 1] {
                s if s == 0.0 => false,
                s if s == 1.0 => true,
                s => {
                    return Err(Error::Parse {
                        line,
                        message: format!("status {s} is not 0/1"),
                    })
                }
            });
        }

        let specs = meta
            .covariates
            .iter()
            .map(|c| {
                Ok(CovariateSpec {
                    name: c.name.clone(),
                    kind: c.to_kind()?,
                    lower: f64::NAN,
                    upper: f64::NAN,
                    labels: c.labels.clone().unwrap_or_default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SurvivalDataset::new(meta.name.clone(), x, time, status, specs)
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            time_column: default_time_column(),
            status_column: default_status_column(),
            covariates: self
                .specs
                .iter()
                .map(|s| CovariateMeta {
                    name: s.name.clone(),
                    kind: match s.kind {
                        CovariateKind::Continuous => "continuous",
                        CovariateKind::Binary => "binary",
                        CovariateKind::Categorical { .. } => "categorical",
                    }
                    .into(),
                    labels: (!s.labels.is_empty()).then(|| s.labels.clone()),
                })
                .collect(),
        }
    }

    /// Canonical CSV text. Floats use the shortest representation that
    /// parses back to the same bits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.specs.iter().map(|s| s.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push_str(",time,status\n");
        for i in 0..self.n() {
            for v in self.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{}\n", self.time[i], u8::from(self.status[i])));
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write_fixture(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv_string())?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
        Ok(())
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Dense row-major model matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub n: usize,
    pub p: usize,
    pub values: Vec<f64>,
}

impl Design {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn scale_column(&mut self, j: usize, c: f64) {
        for i in 0..self.n {
            self.values[i * self.p + j] *= c;
        }
    }
}

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified on the event indicator: within each stratum,
/// `floor(train_fraction * count)` rows go to train and the rest to test.
pub fn split_indices<R: Rng + ?Sized>(
    status: &[bool],
    train_fraction: f64,
    rng: &mut R,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for stratum in [true, false] {
        let mut idx: Vec<usize> = (0..status.len()).filter(|&i| status[i] == stratum).collect();
        let n_train = (train_fraction * idx.len() as f64).floor() as usize;
        if n_train == 0 || n_train == idx.len() {
            let label = if stratum { "event" } else { "censored" };
            return Err(Error::TooSmall(format!(
                "{label} stratum of {} rows cannot populate both parts",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn stratified_split<R: Rng + ?Sized>(
    dataset: &SurvivalDataset,
    train_fraction: f64,
    rng: &mut R,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    let split = split_indices(dataset.status(), train_fraction, rng)?;
    Ok((dataset.subset(&split.train), dataset.subset(&split.test)))
}
