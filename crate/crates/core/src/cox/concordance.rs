//! Harrell's concordance index.
//!
//! A pair `(i, j)` is comparable when `T_i < T_j` and subject `i` had the
//! event. It is concordant when `risk_i > risk_j` (higher risk, earlier
//! event) and contributes one half when the risk scores tie.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    pub tied_risk: u64,
}

impl PairCounts {
    pub fn comparable(&self) -> u64 {
        self.concordant + self.discordant + self.tied_risk
    }

    pub fn index(&self) -> Result<f64> {
        let total = self.comparable();
        if total == 0 {
            return Err(Error::NoComparablePairs);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied_risk as f64) / total as f64)
    }
}

pub fn concordance(time: &[f64], status: &[bool], risk: &[f64]) -> Result<f64> {
    concordance_counts(time, status, risk)?.index()
}

/// `O(n log n)` pair counts: subjects are visited from the latest time
/// backwards while a Fenwick tree over risk ranks holds everyone with a
/// strictly later time.
pub fn concordance_counts(time: &[f64], status: &[bool], risk: &[f64]) -> Result<PairCounts> {
    let n = time.len();
    if status.len() != n || risk.len() != n {
        return Err(Error::InvalidArgument("concordance inputs differ in length".into()));
    }
    if n < 2 {
        return Err(Error::NoComparablePairs);
    }
    if risk.iter().any(|r| r.is_nan()) {
        return Err(Error::InvalidArgument("risk score is NaN".into()));
    }

    // dense ranks of the risk scores
    let mut by_risk: Vec<usize> = (0..n).collect();
    by_risk.sort_by(|&a, &b| risk[a].total_cmp(&risk[b]));
    let mut rank = vec![0usize; n];
    let mut distinct = 0;
    for k in 0..n {
        if k > 0 && risk[by_risk[k]] != risk[by_risk[k - 1]] {
            distinct += 1;
        }
        rank[by_risk[k]] = distinct;
    }
    let mut tree = Fenwick::new(distinct + 1);

    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| time[b].total_cmp(&time[a]));

    let mut counts = PairCounts::default();
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && time[by_time[end]] == time[by_time[start]] {
            end += 1;
        }
        for &i in &by_time[start..end] {
            if status[i] {
                let below = tree.prefix(rank[i]);
                let at_or_below = tree.prefix(rank[i] + 1);
                counts.concordant += below;
                counts.tied_risk += at_or_below - below;
                counts.discordant += inserted - at_or_below;
            }
        }
        for &i in &by_time[start..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        start = end;
    }
    Ok(counts)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< idx`.
    fn prefix(&self, idx: usize) -> u64 {
        let mut i = idx;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}
