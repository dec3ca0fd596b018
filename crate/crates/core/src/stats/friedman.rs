use std::collections::HashMap;

use serde::Serialize;

use super::gamma::chi2_sf;
use super::{RepeatedMeasures, StatsError};

/// Average ranks (1-based) within one row, and Σ(t³ − t) over its tie groups.
pub fn midranks(row: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    let mut ranks = vec![0.0; row.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && row[idx[j]] == row[idx[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &p in &idx[i..j] {
            ranks[p] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub chi2: f64,
    pub df: u32,
    pub p_raw: f64,
    pub p_adjusted: f64,
    /// Size of the test family used for the adjustment.
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub mean_ranks: Vec<f64>,
    /// Some row had ties, so the correction factor was applied.
    pub tie_corrected: bool,
    /// Every row fully tied; reported as χ² = 0, p = 1.
    pub degenerate: bool,
}

impl TestResult {
    /// Bonferroni-adjust over a family of `m` tests.
    pub fn adjusted(mut self, m: usize) -> Self {
        self.m = m;
        self.p_adjusted = (self.p_raw * m as f64).min(1.0);
        self
    }

    /// `χ²=0.25, p=1`, using the adjusted p.
    pub fn format_short(&self) -> String {
        format!("χ²={:.2}, p={}", self.chi2, format_p(self.p_adjusted))
    }

    pub fn variant(&self) -> &'static str {
        if self.degenerate {
            "degenerate: complete ties"
        } else if self.tie_corrected {
            "tie-corrected"
        } else {
            "no ties"
        }
    }
}

/// `1` at the clamp, three significant figures otherwise.
pub fn format_p(p: f64) -> String {
    if p >= 0.9995 {
        "1".into()
    } else if p < 0.001 {
        format!("{p:.1e}")
    } else {
        let s = format!("{p:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Tie-corrected Friedman test with a chi-square p-value.
pub fn friedman(data: &RepeatedMeasures) -> TestResult {
    let n = data.n();
    let k = data.k();
    let mut rank_sums = vec![0.0; k];
    let mut tie_total = 0.0;
    for row in data.rows() {
        let (r, t) = midranks(row);
        for (s, v) in rank_sums.iter_mut().zip(r) {
            *s += v;
        }
        tie_total += t;
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / nf).collect();
    let centre = (kf + 1.0) / 2.0;
    let q0 = 12.0 * nf / (kf * (kf + 1.0)) * mean_ranks.iter().map(|r| (r - centre).powi(2)).sum::<f64>();
    let correction = 1.0 - tie_total / (nf * kf * (kf * kf - 1.0));
    let df = (k - 1) as u32;
    if correction <= 1e-12 {
        return TestResult {
            chi2: 0.0,
            df,
            p_raw: 1.0,
            p_adjusted: 1.0,
            m: 1,
            n,
            k,
            mean_ranks,
            tie_corrected: true,
            degenerate: true,
        };
    }
    let chi2 = q0 / correction;
    let p = chi2_sf(chi2, df);
    TestResult {
        chi2,
        df,
        p_raw: p,
        p_adjusted: p,
        m: 1,
        n,
        k,
        mean_ranks,
        tie_corrected: tie_total > 0.0,
        degenerate: false,
    }
}

/// Largest n accepted by [`friedman_exact`].
pub const EXACT_MAX_N: usize = 12;

/// Exact permutation p-value for k = 3: under the null every ordering of
/// each row's ranks is equally likely. The tie correction depends only on
/// tie structure, which permutations preserve, so ranking outcomes by the
/// spread of doubled rank sums is exact in integers.
pub fn friedman_exact(data: &RepeatedMeasures) -> Result<f64, StatsError> {
    let n = data.n();
    if data.k() != 3 || n > EXACT_MAX_N {
        return Err(StatsError::ExactUnsupported { n, k: data.k() });
    }
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let doubled: Vec<[i64; 3]> = data
        .rows()
        .map(|r| {
            let (m, _) = midranks(r);
            [(2.0 * m[0]) as i64, (2.0 * m[1]) as i64, (2.0 * m[2]) as i64]
        })
        .collect();
    if doubled.iter().all(|r| r[0] == r[1] && r[1] == r[2]) {
        return Ok(1.0);
    }
    let spread = |s: [i64; 3]| -> i64 {
        let e = 4 * n as i64;
        s.iter().map(|v| (v - e) * (v - e)).sum()
    };
    let mut observed = [0i64; 3];
    for r in &doubled {
        for j in 0..3 {
            observed[j] += r[j];
        }
    }
    let target = spread(observed);

    // distribution of (S1, S2); S3 is fixed by the total
    let mut dist: HashMap<(i64, i64), u64> = HashMap::from([((0, 0), 1)]);
    for r in &doubled {
        let mut next: HashMap<(i64, i64), u64> = HashMap::with_capacity(dist.len() * 3);
        for (&(a, b), &c) in &dist {
            for p in PERMS {
                *next.entry((a + r[p[0]], b + r[p[1]])).or_insert(0) += c;
            }
        }
        dist = next;
    }
    let total_sum = 12 * n as i64;
    let (mut hit, mut all) = (0u64, 0u64);
    for (&(a, b), &c) in &dist {
        all += c;
        if spread([a, b, total_sum - a - b]) >= target {
            hit += c;
        }
    }
    Ok(hit as f64 / all as f64)
}

/// min(1, m·p) for each p.
pub fn bonferroni(p_raws: &[f64], m: usize) -> Result<Vec<f64>, StatsError> {
    if m < p_raws.len() || m == 0 {
        return Err(StatsError::FamilySize { m, tests: p_raws.len() });
    }
    p_raws
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok((p * m as f64).min(1.0))
            } else {
                Err(StatsError::PValue(p))
            }
        })
        .collect()
}
