//! Summary statistics of the benchmark protocol.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::RunRecord;
use crate::error::{Error, Result};

/// Smallest sample the normal approximation of the rank-sum test accepts.
pub const MIN_RANK_SUM_SAMPLE: usize = 10;
/// Floor applied before inverting final best values and to `σ*`.
pub const AEI_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub problem: String,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`).
    pub std: f64,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation, divisor `n - 1`.
pub fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Population standard deviation, divisor `n`.
pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Final best values grouped by (algorithm, problem), in record order per group.
pub fn final_values(records: &[RunRecord]) -> BTreeMap<(String, String), Vec<f64>> {
    let mut groups: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.algorithm.clone(), r.problem.clone()))
            .or_default()
            .push((r.run, r.final_best));
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|(run, _)| *run);
            (k, v.into_iter().map(|(_, x)| x).collect())
        })
        .collect()
}

/// Mean and sample standard deviation of the final best value per problem.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<Summary>> {
    final_values(records)
        .into_iter()
        .map(|((algorithm, problem), v)| {
            if v.len() < 2 {
                return Err(Error::Unsupported(format!(
                    "{problem}: {} run(s), aggregation needs at least 2",
                    v.len()
                )));
            }
            Ok(Summary {
                algorithm,
                problem,
                runs: v.len(),
                mean: mean(&v),
                std: sample_std(&v),
            })
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "algorithm,problem,runs,mean,sample_std";

pub fn summary_csv(rows: &[Summary]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in rows {
        let _ = writeln!(out, "{},{},{},{:e},{:e}", s.algorithm, s.problem, s.runs, s.mean, s.std);
    }
    out
}

/// Outcome of a comparison under minimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    Better,
    Worse,
    NoDifference,
}

impl Comparison {
    pub fn symbol(self) -> char {
        match self {
            Comparison::Better => '+',
            Comparison::Worse => '-',
            Comparison::NoDifference => '≈',
        }
    }
}

/// Mann-Whitney statistics of sample `a` against sample `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankSum {
    /// Pairs with `a > b`, ties counting one half.
    pub u: f64,
    pub z: f64,
    pub p_two_sided: f64,
    /// One-sided p-value for the alternative "`a` tends to be larger".
    pub p_greater: f64,
    /// One-sided p-value for the alternative "`a` tends to be smaller".
    pub p_less: f64,
}

/// Midranks of the pooled sample, 1-based.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[k]] {
            end += 1;
        }
        let r = (k + end) as f64 / 2.0 + 1.0;
        for &i in &order[k..=end] {
            ranks[i] = r;
        }
        k = end + 1;
    }
    ranks
}

/// Normal approximation with tie-corrected variance, no continuity correction.
pub fn rank_sum(a: &[f64], b: &[f64]) -> Result<RankSum> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < MIN_RANK_SUM_SAMPLE || n2 < MIN_RANK_SUM_SAMPLE {
        return Err(Error::Unsupported(format!(
            "rank-sum test needs at least {MIN_RANK_SUM_SAMPLE} samples per side, got {n1} and {n2}"
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Domain("rank-sum test on NaN".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let u = r1 - f1 * (f1 + 1.0) / 2.0;
    let mu = f1 * f2 / 2.0;
    // tie term: Σ (t³ - t) over groups of equal values
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let mut end = k;
        while end + 1 < sorted.len() && sorted[end + 1] == sorted[k] {
            end += 1;
        }
        let t = (end - k + 1) as f64;
        ties += t * t * t - t;
        k = end + 1;
    }
    let var = f1 * f2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let z = if var > 0.0 { (u - mu) / var.sqrt() } else { 0.0 };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_greater = 1.0 - normal.cdf(z);
    let p_less = normal.cdf(z);
    let p_two_sided = (2.0 * p_greater.min(p_less)).min(1.0);
    Ok(RankSum {
        u,
        z,
        p_two_sided,
        p_greater,
        p_less,
    })
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolation quantile of the sorted sample.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = q * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Two-sided rank-sum test of minimization samples; a significant result is
/// oriented by comparing medians.
pub fn rank_sum_test(a: &[f64], b: &[f64], alpha: f64) -> Result<Comparison> {
    let r = rank_sum(a, b)?;
    if r.p_two_sided >= alpha {
        return Ok(Comparison::NoDifference);
    }
    let (ma, mb) = (median(a), median(b));
    Ok(if ma < mb {
        Comparison::Better
    } else if ma > mb {
        Comparison::Worse
    } else if r.z < 0.0 {
        Comparison::Better
    } else {
        Comparison::Worse
    })
}

/// Final best values of `K` problems × `G` runs.
#[derive(Clone, Debug, PartialEq)]
pub struct AeiInputs {
    pub values: Vec<Vec<f64>>,
}

impl AeiInputs {
    /// Problems in name order, runs in run order, for one algorithm.
    pub fn from_records(records: &[RunRecord]) -> Self {
        Self {
            values: final_values(records).into_values().collect(),
        }
    }
}

/// Aggregated evaluation indicator of `subject` against `baseline`.
pub fn aei(subject: &AeiInputs, baseline: &AeiInputs) -> Result<f64> {
    let k = subject.values.len();
    if k == 0 || k != baseline.values.len() {
        return Err(Error::Usage(format!(
            "AEI needs matching problem counts, got {k} and {}",
            baseline.values.len()
        )));
    }
    let mut total = 0.0;
    for (s, b) in subject.values.iter().zip(&baseline.values) {
        if s.len() != b.len() || s.is_empty() {
            return Err(Error::Usage(format!(
                "AEI needs matching run counts, got {} and {}",
                s.len(),
                b.len()
            )));
        }
        let inv = |v: &f64| 1.0 / v.max(AEI_GUARD);
        let bi: Vec<f64> = b.iter().map(inv).collect();
        let mu = mean(&bi);
        let sigma = population_std(&bi).max(AEI_GUARD);
        // mean of (v - μ*) / σ*, taken as (mean(v) - μ*) / σ*
        let si: Vec<f64> = s.iter().map(inv).collect();
        let z = (mean(&si) - mu) / sigma;
        total += z.exp();
    }
    Ok(total / k as f64)
}

/// Median and interquartile band of best-so-far per milestone, as CSV with
/// one column per requested milestone.
pub fn curves(records: &[RunRecord], milestones: &[usize]) -> Result<String> {
    let mut groups: BTreeMap<(String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.problem.clone(), r.algorithm.clone())).or_default().push(r);
    }
    let mut out = String::from("problem,algorithm,statistic");
    for m in milestones {
        let _ = write!(out, ",fe_{m}");
    }
    out.push('\n');
    for ((problem, algorithm), runs) in groups {
        let mut columns = Vec::with_capacity(milestones.len());
        for m in milestones {
            let col: Vec<f64> = runs
                .iter()
                .map(|r| {
                    r.milestones
                        .iter()
                        .position(|x| x == m)
                        .map(|i| r.best_at[i])
                        .ok_or_else(|| Error::Usage(format!("milestone {m} was not recorded")))
                })
                .collect::<Result<_>>()?;
            columns.push(col);
        }
        for (stat, q) in [("median", 0.5), ("q25", 0.25), ("q75", 0.75)] {
            let _ = write!(out, "{problem},{algorithm},{stat}");
            for col in &columns {
                let _ = write!(out, ",{:e}", quantile(col, q));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Per-problem rank-sum verdicts of `subject` against `baseline`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<(String, Comparison)>,
}

impl ComparisonTable {
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |k| self.rows.iter().filter(|(_, r)| *r == k).count();
        (c(Comparison::Better), c(Comparison::Worse), c(Comparison::NoDifference))
    }

    pub fn render(&self, subject: &str, baseline: &str) -> String {
        let mut out = format!("# {subject} vs {baseline}: Wilcoxon rank-sum, alpha 0.05, minimization\n");
        for (p, c) in &self.rows {
            let _ = writeln!(out, "{p}\t{}", c.symbol());
        }
        let (b, w, n) = self.counts();
        let _ = writeln!(out, "+/-/≈\t{b}/{w}/{n}");
        out
    }
}

pub fn compare(subject: &[RunRecord], baseline: &[RunRecord], alpha: f64) -> Result<ComparisonTable> {
    let by_problem = |recs: &[RunRecord]| -> BTreeMap<String, Vec<f64>> {
        final_values(recs).into_iter().map(|((_, p), v)| (p, v)).collect()
    };
    let s = by_problem(subject);
    let b = by_problem(baseline);
    let mut rows = Vec::new();
    for (problem, sv) in &s {
        let bv = b
            .get(problem)
            .ok_or_else(|| Error::Usage(format!("baseline has no runs on {problem}")))?;
        rows.push((problem.clone(), rank_sum_test(sv, bv, alpha)?));
    }
    Ok(ComparisonTable { rows })
}
