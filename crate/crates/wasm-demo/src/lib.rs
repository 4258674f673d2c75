//! Browser bindings for the interactive demo page in `www/`.
//!
//! Every entry point returns a JSON string so the page needs no generated
//! type glue beyond `wasm-bindgen`'s string passing.

use dpcox::data::{DatasetMeta, SurvivalDataset};
use dpcox::mechanisms::{binary_rr, categorical_rr, laplace_clamped, Epsilon};
use dpcox::metrics::MeanSd;
use dpcox::perturbation::{self, PerturbationMethod};
use dpcox::sim::{self, DatasetContext, Manifest, SeedContext, SimulationPlan};
use dpcox::{fit_cox, Error, FitOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const LUNG_CSV: &str = include_str!("../../../data/lung.csv");
const LUNG_META: &str = include_str!("../../../data/lung.json");

fn lung() -> Result<SurvivalDataset, Error> {
    let meta: DatasetMeta = serde_json::from_str(LUNG_META)?;
    SurvivalDataset::parse_csv(LUNG_CSV, &meta)
}

fn epsilon(value: f64) -> Result<Epsilon, Error> {
    Epsilon::finite(value)
}

fn to_js<T: Serialize>(result: Result<T, Error>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u32>,
    mean: f64,
}

/// Output distribution of one mechanism applied `draws` times to `value`.
/// `kind` is `laplace` (on `[0, 10]`), `binary` or `categorical` (k levels).
#[wasm_bindgen]
pub fn mechanism_histogram(kind: &str, eps: f64, value: f64, k: u32, draws: u32, seed: u32) -> Result<String, JsError> {
    to_js(histogram(kind, eps, value, k as usize, draws as usize, seed as u64))
}

fn histogram(kind: &str, eps: f64, value: f64, k: usize, draws: usize, seed: u64) -> Result<Histogram, Error> {
    let eps = epsilon(eps)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (edges, samples): (Vec<f64>, Vec<f64>) = match kind {
        "laplace" => {
            let bins = 40;
            let edges = (0..=bins).map(|i| 10.0 * i as f64 / bins as f64).collect();
            let samples = (0..draws)
                .map(|_| laplace_clamped(value, 0.0, 10.0, eps, &mut rng))
                .collect::<Result<_, _>>()?;
            (edges, samples)
        }
        "binary" => (
            vec![-0.5, 0.5, 1.5],
            (0..draws)
                .map(|_| f64::from(u8::from(binary_rr(value >= 0.5, eps, &mut rng))))
                .collect(),
        ),
        "categorical" => (
            (0..=k).map(|l| l as f64 - 0.5).collect(),
            (0..draws)
                .map(|_| categorical_rr(value as usize, k, eps, &mut rng).map(|l| l as f64))
                .collect::<Result<_, _>>()?,
        ),
        other => return Err(Error::InvalidArgument(format!("unknown mechanism `{other}`"))),
    };
    let bins = edges.len() - 1;
    let width = (edges[bins] - edges[0]) / bins as f64;
    let mut counts = vec![0u32; bins];
    for s in &samples {
        let b = (((s - edges[0]) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    Ok(Histogram { edges, counts, mean })
}

#[derive(Serialize)]
struct Comparison {
    names: Vec<String>,
    clean_beta: Vec<f64>,
    clean_p: Vec<f64>,
    beta: Vec<f64>,
    p_value: Vec<f64>,
    hr: Vec<f64>,
    converged: bool,
}

/// Perturbs the bundled lung data once and refits the Cox model.
#[wasm_bindgen]
pub fn perturb_and_fit(method: &str, eps: f64, seed: u32) -> Result<String, JsError> {
    to_js(compare(method, eps, seed as u64))
}

fn compare(method: &str, eps: f64, seed: u64) -> Result<Comparison, Error> {
    let method: PerturbationMethod = method.parse()?;
    let eps = epsilon(eps)?;
    let ds = lung()?;
    let clean = fit_cox(&ds, &FitOptions::default())?;
    let mut rng = SeedContext {
        base_seed: seed,
        dataset: sim::dataset_key(&ds.name),
        method: method.index(),
        epsilon: eps.key(),
        iteration: 0,
    }
    .rng("perturb");
    let (beta, p_value, hr, converged) = match method {
        PerturbationMethod::Phase3 => {
            let intervals = perturbation::sturges_intervals(&ds)?;
            let out = perturbation::phase3(&ds, &intervals, eps, &mut rng, &Default::default())?;
            let k = intervals.k;
            let beta = out.fit.coefficients[k..].to_vec();
            let hr = beta.iter().map(|b| b.exp()).collect();
            (beta, out.fit.p_value[k..].to_vec(), hr, out.fit.converged)
        }
        PerturbationMethod::OutputDfbeta => {
            let f = perturbation::output_dfbeta(&clean, eps, &mut rng)?;
            (f.beta, f.p_value, f.hr, f.converged)
        }
        _ => {
            let released = if method == PerturbationMethod::Phase1 {
                perturbation::phase1(&ds, eps, &mut rng)?
            } else {
                perturbation::phase2(&ds, eps, &mut rng)?
            };
            let f = fit_cox(&released, &FitOptions::default())?;
            (f.beta, f.p_value, f.hr, f.converged)
        }
    };
    Ok(Comparison {
        names: clean.names.clone(),
        clean_beta: clean.beta,
        clean_p: clean.p_value,
        beta,
        p_value,
        hr,
        converged,
    })
}

#[derive(Serialize)]
struct CurvePoint {
    epsilon: String,
    mean_lsr: Option<f64>,
    mean_fpr: Option<f64>,
    test_c: Option<MeanSd>,
}

/// Mean LSR, FPR and test C-index across the default grid on lung.
#[wasm_bindgen]
pub fn utility_curve(method: &str, iterations: u32, seed: u32) -> Result<String, JsError> {
    to_js(curve(method, iterations as usize, seed as u64))
}

fn curve(method: &str, iterations: usize, seed: u64) -> Result<Vec<CurvePoint>, Error> {
    let method: PerturbationMethod = method.parse()?;
    let ctx = DatasetContext::new(lung()?)?;
    let plan = SimulationPlan {
        datasets: vec![ctx.name().to_string()],
        methods: vec![method],
        iterations,
        base_seed: seed,
        ..SimulationPlan::default()
    };
    let contexts = [ctx];
    let records = sim::run(&plan, &contexts, &mut |_| {})?;
    let manifest = Manifest::new(&plan, &contexts);
    Ok(sim::summaries(&manifest, &records)?
        .into_iter()
        .map(|s| CurvePoint {
            epsilon: s.epsilon.to_string(),
            mean_lsr: s.metrics.mean_lsr,
            mean_fpr: s.metrics.mean_fpr,
            test_c: s.metrics.test_c,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_draw() {
        for kind in ["laplace", "binary", "categorical"] {
            let h = histogram(kind, 1.0, 1.0, 4, 500, 7).unwrap();
            assert_eq!(h.counts.iter().sum::<u32>(), 500);
            assert_eq!(h.edges.len(), h.counts.len() + 1);
        }
        assert!(histogram("gaussian", 1.0, 1.0, 4, 10, 7).is_err());
    }

    #[test]
    fn comparison_at_large_budget_tracks_clean_fit() {
        let c = compare("phase1", 1e9, 1).unwrap();
        for (a, b) in c.beta.iter().zip(&c.clean_beta) {
            assert!((a - b).abs() < 1e-3 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn curve_covers_grid() {
        let points = curve("output", 2, 42).unwrap();
        assert_eq!(points.len(), 15);
        assert_eq!(points.last().unwrap().mean_lsr, Some(0.0));
    }
}
