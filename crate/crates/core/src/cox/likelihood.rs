//! Log partial likelihood, score and information with Efron or Breslow ties.

use crate::error::{Error, Result};
use crate::linalg::mirror_lower;

/// Largest linear predictor magnitude accepted.
pub(crate) const MAX_ETA: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ties {
    Efron,
    Breslow,
}

#[derive(Clone, Debug)]
pub struct Derivatives {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Row-major `p x p` observed information (negative Hessian).
    pub information: Vec<f64>,
}

/// Subjects sorted by descending time, grouped by tied time.
#[derive(Clone, Debug)]
pub(crate) struct RiskSets {
    pub p: usize,
    /// Row-major covariates in sorted order.
    pub z: Vec<f64>,
    pub status: Vec<bool>,
    /// Position in the caller's row order for each sorted row.
    pub order: Vec<usize>,
    /// `[start, end)` ranges of tied times, latest time first.
    pub groups: Vec<(usize, usize)>,
}

impl RiskSets {
    pub fn new(z_rows: &[f64], p: usize, time: &[f64], status: &[bool]) -> Self {
        let n = time.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        let mut z = Vec::with_capacity(n * p);
        for &i in &order {
            z.extend_from_slice(&z_rows[i * p..(i + 1) * p]);
        }
        let mut groups = Vec::new();
        let mut start = 0;
        for k in 1..=n {
            if k == n || time[order[k]] != time[order[start]] {
                groups.push((start, k));
                start = k;
            }
        }
        Self {
            p,
            z,
            status: order.iter().map(|&i| status[i]).collect(),
            order,
            groups,
        }
    }

    pub fn n(&self) -> usize {
        self.status.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.z[k * self.p..(k + 1) * self.p]
    }

    /// Linear predictors in sorted order, checked against [`MAX_ETA`].
    pub fn linear_predictors(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let mut eta = Vec::with_capacity(self.n());
        for k in 0..self.n() {
            let e: f64 = self.row(k).iter().zip(beta).map(|(a, b)| a * b).sum();
            if !(e.abs() <= MAX_ETA) {
                return Err(Error::NumericOverflow(e));
            }
            eta.push(e);
        }
        Ok(eta)
    }

    pub fn derivatives(&self, beta: &[f64], ties: Ties) -> Result<Derivatives> {
        let p = self.p;
        let eta = self.linear_predictors(beta)?;
        let offset = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut loglik = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];

        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut d1 = vec![0.0; p];
        let mut d2 = vec![0.0; p * p];
        let mut mean = vec![0.0; p];

        for &(start, end) in &self.groups {
            let mut d0 = 0.0;
            let mut deaths = 0usize;
            d1.fill(0.0);
            d2.fill(0.0);
            for k in start..end {
                let r = (eta[k] - offset).exp();
                let z = self.row(k);
                s0 += r;
                add_outer(&mut s1, &mut s2, z, r);
                if self.status[k] {
                    deaths += 1;
                    d0 += r;
                    add_outer(&mut d1, &mut d2, z, r);
                    loglik += eta[k];
                    for (u, zj) in score.iter_mut().zip(z) {
                        *u += zj;
                    }
                }
            }
            for l in 0..deaths {
                let f = match ties {
                    Ties::Efron => l as f64 / deaths as f64,
                    Ties::Breslow => 0.0,
                };
                let a0 = s0 - f * d0;
                loglik -= a0.ln() + offset;
                for j in 0..p {
                    mean[j] = (s1[j] - f * d1[j]) / a0;
                    score[j] -= mean[j];
                }
                for j in 0..p {
                    for m in 0..=j {
                        let a2 = (s2[j * p + m] - f * d2[j * p + m]) / a0;
                        info[j * p + m] += a2 - mean[j] * mean[m];
                    }
                }
            }
        }
        mirror_lower(&mut info, p);
        Ok(Derivatives {
            loglik,
            score,
            information: info,
        })
    }

    /// Per-subject score residuals (Efron weighting for tied deaths), returned
    /// row-major in the caller's original row order.
    pub fn score_residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        let p = self.p;
        let n = self.n();
        let eta = self.linear_predictors(beta)?;
        let offset = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let risk: Vec<f64> = eta.iter().map(|e| (e - offset).exp()).collect();

        // Per tie group: A = sum_l 1/s0_l, B = sum_l xbar_l/s0_l, their tied-death
        // variants weighted by (1 - f_l), and the mean of xbar_l.
        struct GroupTerms {
            a: f64,
            b: Vec<f64>,
            a_tied: f64,
            b_tied: Vec<f64>,
            xbar_mean: Vec<f64>,
        }
        let mut terms: Vec<Option<GroupTerms>> = Vec::with_capacity(self.groups.len());
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        for &(start, end) in &self.groups {
            let mut d0 = 0.0;
            let mut d1 = vec![0.0; p];
            let mut deaths = 0usize;
            for k in start..end {
                let z = self.row(k);
                s0 += risk[k];
                for j in 0..p {
                    s1[j] += risk[k] * z[j];
                }
                if self.status[k] {
                    deaths += 1;
                    d0 += risk[k];
                    for j in 0..p {
                        d1[j] += risk[k] * z[j];
                    }
                }
            }
            if deaths == 0 {
                terms.push(None);
                continue;
            }
            let mut t = GroupTerms {
                a: 0.0,
                b: vec![0.0; p],
                a_tied: 0.0,
                b_tied: vec![0.0; p],
                xbar_mean: vec![0.0; p],
            };
            for l in 0..deaths {
                let f = l as f64 / deaths as f64;
                let a0 = s0 - f * d0;
                t.a += 1.0 / a0;
                t.a_tied += (1.0 - f) / a0;
                for j in 0..p {
                    let xbar = (s1[j] - f * d1[j]) / a0;
                    t.b[j] += xbar / a0;
                    t.b_tied[j] += (1.0 - f) * xbar / a0;
                    t.xbar_mean[j] += xbar / deaths as f64;
                }
            }
            terms.push(Some(t));
        }

        // Cumulate over groups with time <= the subject's time (walk from the
        // earliest group, i.e. the end of the descending list).
        let mut resid = vec![0.0; n * p];
        let mut cum_a = 0.0;
        let mut cum_b = vec![0.0; p];
        for (g, &(start, end)) in self.groups.iter().enumerate().rev() {
            if let Some(t) = &terms[g] {
                cum_a += t.a;
                for j in 0..p {
                    cum_b[j] += t.b[j];
                }
            }
            for k in start..end {
                let z = self.row(k);
                let out = &mut resid[self.order[k] * p..(self.order[k] + 1) * p];
                match (&terms[g], self.status[k]) {
                    (Some(t), true) => {
                        let a = cum_a - t.a + t.a_tied;
                        for j in 0..p {
                            let b = cum_b[j] - t.b[j] + t.b_tied[j];
                            out[j] = z[j] - t.xbar_mean[j] - risk[k] * (z[j] * a - b);
                        }
                    }
                    _ => {
                        for j in 0..p {
                            out[j] = -risk[k] * (z[j] * cum_a - cum_b[j]);
                        }
                    }
                }
            }
        }
        Ok(resid)
    }
}

fn add_outer(s1: &mut [f64], s2: &mut [f64], z: &[f64], w: f64) {
    let p = z.len();
    for j in 0..p {
        let wz = w * z[j];
        s1[j] += wz;
        let row = &mut s2[j * p..j * p + j + 1];
        for (m, cell) in row.iter_mut().enumerate() {
            *cell += wz * z[m];
        }
    }
}
