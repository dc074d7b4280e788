//! Descriptive statistics and the Mann–Whitney U test.

use serde::Serialize;

/// Pooled sizes up to this use the exact permutation distribution.
pub const EXACT_LIMIT: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryCell {
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero when n < 2.
    pub sd: f64,
    pub n: usize,
}

impl SummaryCell {
    /// `None` for an empty sample.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: mean(values),
            sd: sample_sd(values),
            n: values.len(),
        })
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: PMethod,
}

/// Midranks (1-based) of `values`, returned doubled so ties stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i+1)+(j+1))/2
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Mann–Whitney U test. Returns `None` unless both samples have
/// at least two values.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Option<MannWhitney> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return None;
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let w2: u64 = ranks[..n1].iter().sum();
    let n = n1 + n2;
    let u = w2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    let (p, method) = if n <= EXACT_LIMIT {
        (exact_p(&ranks, n1, w2), PMethod::Exact)
    } else {
        (normal_p(&pooled, n1, n2, u), PMethod::Normal)
    };
    Some(MannWhitney {
        u,
        p: p.min(1.0),
        method,
    })
}

/// Exact permutation p-value: the share of all size-`n1` rank subsets whose
/// sum is at least as far from its expectation as the observed one.
fn exact_p(ranks: &[u64], n1: usize, observed: u64) -> f64 {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0u128; width]; n1 + 1];
    counts[0][0] = 1;
    for &r in ranks {
        let r = r as usize;
        for k in (1..=n1).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r..width).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // expectation of the doubled sum is n1 * (N + 1)
    let centre2 = (n1 * (ranks.len() + 1)) as i128;
    let dev = |s: u64| (s as i128 - centre2).abs();
    let obs = dev(observed);
    let mut total = 0u128;
    let mut extreme = 0u128;
    for (s, &c) in counts[n1].iter().enumerate() {
        total += c;
        if dev(s as u64) >= obs {
            extreme += c;
        }
    }
    extreme as f64 / total as f64
}

/// Normal approximation with tie correction and continuity correction.
fn normal_p(pooled: &[f64], n1: usize, n2: usize, u: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (n1, n2) = (n1 as f64, n2 as f64);
    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `**` below 0.01, `*` below 0.05, empty otherwise.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
