//! Descriptive statistics, fixed-width histograms and the Mann-Whitney
//! rank-sum test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; zero for a single value.
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let stddev = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary {
        n,
        mean,
        median,
        stddev,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub start: f64,
    pub counts: Vec<usize>,
    /// Values outside `[start, start + bins * width)`.
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub const RESPONSE_BIN_S: f64 = 0.25;
    pub const RESPONSE_RANGE_S: f64 = 6.0;

    pub fn new(values: &[f64], start: f64, bin_width: f64, bins: usize) -> Self {
        let mut h = Self {
            bin_width,
            start,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        };
        for &v in values {
            let pos = ((v - start) / bin_width).floor();
            if pos < 0.0 {
                h.underflow += 1;
            } else if pos as usize >= bins {
                h.overflow += 1;
            } else {
                h.counts[pos as usize] += 1;
            }
        }
        h
    }

    /// 0.25 s bins over 0-6 s.
    pub fn response_times(values: &[f64]) -> Self {
        let bins = (Self::RESPONSE_RANGE_S / Self::RESPONSE_BIN_S).round() as usize;
        Self::new(values, 0.0, Self::RESPONSE_BIN_S, bins)
    }

    /// `bin_start,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.2},{c}\n", self.start + i as f64 * self.bin_width));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSumMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: Option<f64>,
    /// Two-sided.
    pub p_value: f64,
    pub method: RankSumMethod,
}

/// Largest combined size for which tie-free samples get the exact null
/// distribution.
pub const EXACT_LIMIT: usize = 50;

/// Two-sided Mann-Whitney U test. Exact when both samples are tie-free and
/// small, otherwise the normal approximation with tie and continuity
/// corrections.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<RankSumTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let (n1, n2) = (a.len(), b.len());
    let mut pooled: Vec<(f64, usize)> = a.iter().map(|&v| (v, 0)).chain(b.iter().map(|&v| (v, 1))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += pooled[i..=j].iter().filter(|x| x.1 == 0).count() as f64 * avg_rank;
        i = j + 1;
    }
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let (fn1, fn2) = (n1 as f64, n2 as f64);
    if tie_term == 0.0 && n1 + n2 <= EXACT_LIMIT {
        let p_value = exact_two_sided(u.round() as usize, n1, n2);
        return Ok(RankSumTest {
            u,
            z: None,
            p_value,
            method: RankSumMethod::Exact,
        });
    }
    let n = fn1 + fn2;
    let mean = fn1 * fn2 / 2.0;
    let var = fn1 * fn2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let (z, p_value) = if var <= 0.0 {
        (0.0, 1.0)
    } else {
        let diff = (u - mean).abs() - 0.5;
        let z = diff.max(0.0) / var.sqrt() * (u - mean).signum();
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        (z, (2.0 * (1.0 - std_normal.cdf(z.abs()))).min(1.0))
    };
    Ok(RankSumTest {
        u,
        z: Some(z),
        p_value,
        method: RankSumMethod::Normal,
    })
}

/// Two-sided tail of the exact null distribution of U. `table[i][j][k]`
/// counts orderings of `i` first-sample and `j` second-sample values with
/// statistic `k`.
fn exact_two_sided(u: usize, n1: usize, n2: usize) -> f64 {
    let max_u = n1 * n2;
    let mut table = vec![vec![vec![0.0f64; max_u + 1]; n2 + 1]; n1 + 1];
    for row in table[0].iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=n1 {
        table[i][0][0] = 1.0;
        for j in 1..=n2 {
            for k in 0..=i * j {
                // the largest pooled value belongs to sample one (adds j) or two
                let with_first = if k >= j { table[i - 1][j][k - j] } else { 0.0 };
                let with_second = table[i][j - 1].get(k).copied().unwrap_or(0.0);
                table[i][j][k] = with_first + with_second;
            }
        }
    }
    let dist = &table[n1][n2];
    let total: f64 = dist.iter().sum();
    let lower = u.min(max_u - u);
    let tail: f64 = dist[..=lower].iter().sum();
    (2.0 * tail / total).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn summary_anchors() {
        let s = summarize(&[1.0]).unwrap();
        assert_eq!((s.mean, s.median, s.stddev), (1.0, 1.0, 0.0));
        let s = summarize(&[1.0, 2.0, 3.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert!((s.stddev - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(matches!(summarize(&[]), Err(Error::EmptyRecords)));
    }

    #[test]
    fn histogram_point_mass_and_edges() {
        let h = Histogram::response_times(&[1.1; 7]);
        assert_eq!(h.counts.len(), 24);
        assert_eq!(h.counts[4], 7);
        assert_eq!(h.counts.iter().sum::<usize>(), 7);
        let h = Histogram::response_times(&[0.0, 0.25, 5.999, 6.0, -0.1]);
        assert_eq!((h.counts[0], h.counts[1], h.counts[23]), (1, 1, 1));
        assert_eq!((h.underflow, h.overflow), (1, 1));
        assert!(h.to_csv().starts_with("bin_start,count\n0.00,1\n0.25,1\n"));
    }

    /// Two-sided p by enumerating every assignment of the pooled values.
    fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| {
            let (x, y): (Vec<_>, Vec<_>) = (0..n).partition(|&i| mask & (1 << i) != 0);
            let mut u = 0.0;
            for &i in &x {
                for &j in &y {
                    u += if pooled[i] > pooled[j] {
                        1.0
                    } else if pooled[i] == pooled[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            u
        };
        let observed = u_of((1u32 << a.len()) - 1);
        let mean = (a.len() * b.len()) as f64 / 2.0;
        let dev = (observed - mean).abs();
        let (mut hits, mut total) = (0usize, 0usize);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            total += 1;
            if (u_of(mask) - mean).abs() >= dev - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn exact_matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n1 = rng.random_range(1..7);
            let n2 = rng.random_range(1..7);
            let a: Vec<f64> = (0..n1).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..n2).map(|_| rng.random_range(0.3..1.3)).collect();
            let t = mann_whitney(&a, &b).unwrap();
            assert_eq!(t.method, RankSumMethod::Exact);
            assert!((t.p_value - permutation_p(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn u_statistic_counts_pairs() {
        let a = [1.0, 4.0, 4.0, 7.0];
        let b = [2.0, 4.0, 8.0];
        let brute: f64 = a
            .iter()
            .flat_map(|x| b.iter().map(move |y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }))
            .sum();
        let t = mann_whitney(&a, &b).unwrap();
        assert_eq!(t.u, brute);
        assert_eq!(t.method, RankSumMethod::Normal);
    }

    #[test]
    fn disjoint_supports_are_significant() {
        let a: Vec<f64> = (0..30).map(|i| i as f64 * 0.01).collect();
        let b: Vec<f64> = (0..30).map(|i| 1.0 + i as f64 * 0.01).collect();
        let t = mann_whitney(&a, &b).unwrap();
        assert_eq!(t.u, 0.0);
        assert_eq!(t.method, RankSumMethod::Normal);
        assert!(t.p_value < 1e-3);
        // exact path on a smaller disjoint pair: p = 2 / C(20, 10)
        let t = mann_whitney(&a[..10], &b[..10]).unwrap();
        assert!((t.p_value - 2.0 / 184_756.0).abs() < 1e-15);
    }

    #[test]
    fn normal_approximation_near_exact_for_moderate_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..22).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..25).map(|_| rng.random_range(0.2..1.2)).collect();
        let exact = mann_whitney(&a, &b).unwrap();
        assert_eq!(exact.method, RankSumMethod::Exact);
        let mut a2 = a.clone();
        a2.push(a[0]);
        let mut b2 = b.clone();
        b2.push(b[0]);
        let approx = mann_whitney(&a2, &b2).unwrap();
        assert_eq!(approx.method, RankSumMethod::Normal);
        assert!((exact.p_value - approx.p_value).abs() < 0.05);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let t = mann_whitney(&[1.0; 5], &[1.0; 7]).unwrap();
        assert_eq!(t.p_value, 1.0);
    }
}
