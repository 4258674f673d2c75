//! Checks shared by the property tests and the acceptance suite. Each returns
//! a one-line detail on success and a description of the violation otherwise.

#![allow(dead_code)]

use dpcox::cox::{concordance_counts, partial_loglik_and_derivatives};
use dpcox::mechanisms::{binary_rr, categorical_rr, laplace_clamped, sample_laplace};
use dpcox::perturbation::{self, PerturbationMethod};
use dpcox::sim::{self, DatasetContext, SimulationPlan};
use dpcox::{fit_cox, fit_cox_design, Design, Epsilon, FitOptions, SurvivalDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Exponential survival with hazard `exp(x'beta)` and exponential censoring.
/// With `tie_grid`, times are rounded up to multiples of it.
pub fn synthetic_cox(n: usize, beta: &[f64], seed: u64, tie_grid: Option<f64>) -> (Design, Vec<f64>, Vec<bool>) {
    let p = beta.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * p);
    let mut time = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let t = -(1.0 - rng.random::<f64>()).ln() / eta.exp();
        let c = -(1.0 - rng.random::<f64>()).ln() / 0.3;
        let mut obs = t.min(c);
        if let Some(g) = tie_grid {
            obs = (obs / g).ceil() * g;
        }
        values.extend(x);
        time.push(obs);
        status.push(t <= c);
    }
    let names = (0..p).map(|j| format!("x{j}")).collect();
    (Design { names, n, p, values }, time, status)
}

fn rel_err(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(1.0)
}

/// Analytic score against central differences of the log likelihood, and
/// analytic information against central differences of the score.
pub fn score_matches_finite_differences(seed: u64) -> Check {
    let mut worst_score: f64 = 0.0;
    let mut worst_info: f64 = 0.0;
    for (case, tie_grid) in [None, Some(0.25)].into_iter().enumerate() {
        let (d, t, s) = synthetic_cox(60, &[0.6, -0.4, 0.2], seed + case as u64, tie_grid);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        let beta: Vec<f64> = (0..d.p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let at = partial_loglik_and_derivatives(&d, &t, &s, &beta).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for j in 0..d.p {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[j] += h;
            down[j] -= h;
            let fu = partial_loglik_and_derivatives(&d, &t, &s, &up).map_err(|e| e.to_string())?;
            let fd = partial_loglik_and_derivatives(&d, &t, &s, &down).map_err(|e| e.to_string())?;
            let g = (fu.loglik - fd.loglik) / (2.0 * h);
            worst_score = worst_score.max(rel_err(g, at.score[j]));
            for k in 0..d.p {
                // information is the negative Hessian
                let hk = -(fu.score[k] - fd.score[k]) / (2.0 * h);
                worst_info = worst_info.max(rel_err(hk, at.information[k * d.p + j]));
            }
        }
    }
    ensure(worst_score < 1e-6, || format!("score rel. err {worst_score:.2e}"))?;
    ensure(worst_info < 1e-4, || format!("information rel. err {worst_info:.2e}"))?;
    Ok(format!("score rel. err {worst_score:.1e}, information {worst_info:.1e}"))
}

fn drop_row(d: &Design, t: &[f64], s: &[bool], i: usize) -> (Design, Vec<f64>, Vec<bool>) {
    let keep: Vec<usize> = (0..d.n).filter(|&k| k != i).collect();
    let values = keep.iter().flat_map(|&k| d.row(k).to_vec()).collect();
    (
        Design { names: d.names.clone(), n: keep.len(), p: d.p, values },
        keep.iter().map(|&k| t[k]).collect(),
        keep.iter().map(|&k| s[k]).collect(),
    )
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Smallest per-column correlation between dfbeta rows and
/// `beta_hat - beta_hat(-i)` from actual refits, for one n = 20 sample.
pub fn dfbeta_loo_correlation(seed: u64) -> Result<f64, String> {
    let (d, t, s) = synthetic_cox(20, &[0.8, -0.5], seed, None);
    let opts = FitOptions::default();
    let full = fit_cox_design(&d, &t, &s, &opts).map_err(|e| e.to_string())?;
    ensure(full.converged, || "full fit did not converge".into())?;
    let mut loo = vec![Vec::new(); d.p];
    for i in 0..d.n {
        let (di, ti, si) = drop_row(&d, &t, &s, i);
        let f = fit_cox_design(&di, &ti, &si, &opts).map_err(|e| e.to_string())?;
        ensure(f.converged, || format!("refit without {i} did not converge"))?;
        for j in 0..d.p {
            loo[j].push(full.beta[j] - f.beta[j]);
        }
    }
    Ok((0..d.p)
        .map(|j| {
            let approx: Vec<f64> = (0..d.n).map(|i| full.dfbeta_row(i)[j]).collect();
            correlation(&approx, &loo[j])
        })
        .fold(1.0, f64::min))
}

/// (worst, median) of the per-sample worst-column correlations.
pub fn dfbeta_loo_correlations(seeds: &[u64]) -> Result<(f64, f64), String> {
    let mut r = seeds.iter().map(|&s| dfbeta_loo_correlation(s)).collect::<Result<Vec<_>, _>>()?;
    r.sort_by(f64::total_cmp);
    Ok((r[0], r[r.len() / 2]))
}

pub fn dfbeta_tracks_leave_one_out(seeds: &[u64]) -> Check {
    let (worst, median) = dfbeta_loo_correlations(seeds)?;
    let msg = format!("worst {worst:.4}, median {median:.4} over {} samples", seeds.len());
    ensure(worst > 0.99, || msg.clone())?;
    Ok(msg)
}

/// dfbeta against score residuals written out directly (no ties) times the
/// inverse information.
pub fn dfbeta_matches_score_residual_oracle(seed: u64) -> Check {
    let (d, t, s) = synthetic_cox(20, &[0.8, -0.5], seed, None);
    let fit = fit_cox_design(&d, &t, &s, &FitOptions::default()).map_err(|e| e.to_string())?;
    let p = d.p;
    let w: Vec<f64> = (0..d.n)
        .map(|i| d.row(i).iter().zip(&fit.beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..d.n {
        let mut resid = vec![0.0; p];
        for k in (0..d.n).filter(|&k| s[k] && t[k] <= t[i]) {
            let risk: Vec<usize> = (0..d.n).filter(|&m| t[m] >= t[k]).collect();
            let total: f64 = risk.iter().map(|&m| w[m]).sum();
            for j in 0..p {
                let mean = risk.iter().map(|&m| w[m] * d.row(m)[j]).sum::<f64>() / total;
                if k == i {
                    resid[j] += d.row(i)[j] - mean;
                }
                resid[j] -= w[i] / total * (d.row(i)[j] - mean);
            }
        }
        for k in 0..p {
            let v: f64 = (0..p).map(|j| resid[j] * fit.covariance[j * p + k]).sum();
            worst = worst.max((v - fit.dfbeta_row(i)[k]).abs());
        }
    }
    ensure(worst < 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

/// Pair counts by enumerating every ordered pair.
pub fn brute_force_counts(time: &[f64], status: &[bool], risk: &[f64]) -> (u64, u64, u64) {
    let (mut c, mut d, mut tied) = (0, 0, 0);
    for i in 0..time.len() {
        for j in 0..time.len() {
            if status[i] && time[i] < time[j] {
                if risk[i] > risk[j] {
                    c += 1;
                } else if risk[i] < risk[j] {
                    d += 1;
                } else {
                    tied += 1;
                }
            }
        }
    }
    (c, d, tied)
}

/// Fenwick-tree counts equal brute force on random inputs with ties, n <= 50.
pub fn concordance_matches_brute_force(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut compared = 0;
    for _ in 0..cases {
        let n = rng.random_range(2..=50);
        let time: Vec<f64> = (0..n).map(|_| rng.random_range(1..15) as f64).collect();
        let status: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let risk: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
        let expected = brute_force_counts(&time, &status, &risk);
        match concordance_counts(&time, &status, &risk) {
            Ok(got) => {
                let got = (got.concordant, got.discordant, got.tied_risk);
                ensure(got == expected, || format!("n={n}: {got:?} vs brute force {expected:?}"))?;
                compared += 1;
            }
            Err(_) => ensure(expected == (0, 0, 0), || format!("n={n}: error but pairs {expected:?}"))?,
        }
    }
    Ok(format!("{compared} random cases exact"))
}

fn within_3se(name: &str, hits: usize, draws: usize, p: f64) -> Result<(), String> {
    let rate = hits as f64 / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    ensure((rate - p).abs() <= 3.0 * se, || {
        format!("{name}: rate {rate:.5} vs {p:.5} (3se {:.5})", 3.0 * se)
    })
}

/// Empirical mechanism frequencies within 3 standard errors of closed forms.
pub fn mechanism_distributions(draws: usize, seed: u64) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut checked = 0;
    for eps in [0.1, 1.0, 10.0] {
        let e = Epsilon::finite(eps).map_err(|e| e.to_string())?;
        let scale = 1.0 / eps;
        let (mut inside, mut positive) = (0, 0);
        for _ in 0..draws {
            let l = sample_laplace(scale, &mut rng);
            inside += usize::from(l.abs() <= scale);
            positive += usize::from(l > 0.0);
        }
        within_3se(&format!("laplace |L|<=b eps={eps}"), inside, draws, 1.0 - (-1.0f64).exp())?;
        within_3se(&format!("laplace L>0 eps={eps}"), positive, draws, 0.5)?;

        let mut clamped_ok = true;
        let mut median_hits = 0;
        for _ in 0..draws {
            let v = laplace_clamped(4.0, 0.0, 10.0, e, &mut rng).map_err(|e| e.to_string())?;
            clamped_ok &= (0.0..=10.0).contains(&v);
            median_hits += usize::from(v <= 4.0);
        }
        ensure(clamped_ok, || format!("clamped Laplace left [0, 10] at eps={eps}"))?;
        // clamping moves mass only to the ends, so the true value stays the median
        within_3se(&format!("clamped median eps={eps}"), median_hits, draws, 0.5)?;

        let keep = (0..draws).filter(|_| binary_rr(true, e, &mut rng)).count();
        within_3se(&format!("binary keep eps={eps}"), keep, draws, eps.exp() / (1.0 + eps.exp()))?;

        let k = 4;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[categorical_rr(2, k, e, &mut rng).map_err(|e| e.to_string())?] += 1;
        }
        let denom = eps.exp() + (k - 1) as f64;
        for (level, &c) in counts.iter().enumerate() {
            let p = if level == 2 { eps.exp() / denom } else { 1.0 / denom };
            within_3se(&format!("categorical level {level} eps={eps}"), c, draws, p)?;
        }
        checked += 1;
    }
    Ok(format!("{checked} budgets x 4 mechanisms over {draws} draws"))
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// All four methods are exact pass-throughs at infinity, and Phase 1/2
/// refits reproduce the clean fit bit for bit.
pub fn identity_at_infinity(ds: &SurvivalDataset) -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let inf = Epsilon::Infinite;
    let clean = fit_cox(ds, &FitOptions::default()).map_err(|e| e.to_string())?;
    for method in [PerturbationMethod::Phase1, PerturbationMethod::Phase2] {
        let out = if method == PerturbationMethod::Phase1 {
            perturbation::phase1(ds, inf, &mut rng)
        } else {
            perturbation::phase2(ds, inf, &mut rng)
        }
        .map_err(|e| e.to_string())?;
        ensure(&out == ds, || format!("{}: released data differs", ds.name))?;
        let f = fit_cox(&out, &FitOptions::default()).map_err(|e| e.to_string())?;
        ensure(same_bits(&f.beta, &clean.beta) && same_bits(&f.p_value, &clean.p_value), || {
            format!("{}: {method} refit differs from the clean fit", ds.name)
        })?;
    }
    let intervals = perturbation::sturges_intervals(ds).map_err(|e| e.to_string())?;
    let release = perturbation::phase3_release(ds, &intervals, inf, &mut rng).map_err(|e| e.to_string())?;
    for i in 0..ds.n() {
        ensure(
            release.exit(i) == intervals.exit_interval(ds.time()[i])
                && release.data.status()[i] == ds.status()[i]
                && same_bits(release.data.row(i), ds.row(i)),
            || format!("{}: phase 3 release differs at row {i}", ds.name),
        )?;
    }
    let out = perturbation::output_dfbeta(&clean, inf, &mut rng).map_err(|e| e.to_string())?;
    ensure(same_bits(&out.beta, &clean.beta) && same_bits(&out.p_value, &clean.p_value), || {
        format!("{}: output perturbation changed the fit", ds.name)
    })?;
    Ok(format!("{}: 4 methods exact", ds.name))
}

fn argsort(t: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..t.len()).collect();
    idx.sort_by(|&a, &b| t[a].total_cmp(&t[b]).then(a.cmp(&b)));
    idx
}

/// Phase 1 leaves times and statuses bit-identical, so the ordering that
/// defines every risk set is unchanged.
pub fn phase1_preserves_risk_sets(ds: &SurvivalDataset, seed: u64) -> Check {
    let order = argsort(ds.time());
    for (b, eps) in sim::FINITE_GRID.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed + b as u64);
        let e = Epsilon::finite(*eps).map_err(|e| e.to_string())?;
        let out = perturbation::phase1(ds, e, &mut rng).map_err(|e| e.to_string())?;
        ensure(same_bits(out.time(), ds.time()) && out.status() == ds.status(), || {
            format!("{}: eps={eps} changed time or status", ds.name)
        })?;
        ensure(argsort(out.time()) == order, || format!("{}: eps={eps} reordered", ds.name))?;
    }
    Ok(format!("{}: {} budgets", ds.name, sim::FINITE_GRID.len()))
}

/// The same plan run on pools of different sizes serializes to the same bytes.
pub fn records_independent_of_workers(contexts: &[DatasetContext], plan: &SimulationPlan, workers: &[usize]) -> Check {
    let mut texts = Vec::new();
    for &w in workers {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| e.to_string())?;
        let records = pool
            .install(|| sim::run(plan, contexts, &mut |_| {}))
            .map_err(|e| e.to_string())?;
        texts.push(sim::records_to_csv(&records).map_err(|e| e.to_string())?);
    }
    ensure(texts.windows(2).all(|w| w[0] == w[1]), || {
        format!("record bytes differ across worker counts {workers:?}")
    })?;
    Ok(format!("{} bytes identical for workers {workers:?}", texts[0].len()))
}
