//! Monte Carlo replay of the selection policy and of random subset testing
//! against a complete benchmark table.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::policy::{rank_by_fit, PolicyState, SamplingMode};
use crate::table::{AcTable, BenchmarkTable};

pub const DEFAULT_RUNS: usize = 1000;

/// Benchmarks on which the (A, C) law is known not to predict the winner;
/// left out of the headline recall average.
pub const POLICY_EXCLUDED_BENCHMARKS: [&str; 2] = ["MME", "MMMU"];

/// Acceptance tolerances recorded alongside every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub policy_recall: f64,
    pub random_recall: f64,
    pub r_squared_points: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    policy_recall: 0.07,
    random_recall: 0.02,
    r_squared_points: 1.5,
};

/// True iff `truth_best` is within the first `n` entries of `ranking`.
pub fn recall_at<S: AsRef<str>>(ranking: &[S], truth_best: &str, n: usize) -> Result<bool> {
    if n == 0 {
        return Err(Error::domain("recall window must be >= 1"));
    }
    let pos = ranking
        .iter()
        .position(|s| s.as_ref() == truth_best)
        .ok_or_else(|| Error::domain(format!("'{truth_best}' is not in the ranking")))?;
    Ok(pos < n)
}

/// Index of the best setting in `column`; ties go to the lexicographically
/// smaller setting id.
pub fn truth_best(ac: &AcTable, column: &[f64]) -> usize {
    let entries = ac.entries();
    (0..column.len())
        .max_by(|&i, &j| {
            column[i]
                .total_cmp(&column[j])
                .then_with(|| entries[j].setting.cmp(&entries[i].setting))
        })
        .expect("non-empty column")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyRecall {
    pub recall_at_1: f64,
    pub recall_at_3: f64,
}

/// Replays the policy `runs` times with `budget` finetuning runs each. Run
/// `r` uses seed `seed + r`.
pub fn simulate_policy(
    ac: &AcTable,
    bench: &BenchmarkTable,
    benchmark: &str,
    budget: usize,
    runs: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<PolicyRecall> {
    if runs == 0 {
        return Err(Error::domain("runs must be >= 1"));
    }
    if budget == 0 || budget > ac.len() {
        return Err(Error::domain(format!(
            "budget must be in 1..={}, got {budget}",
            ac.len()
        )));
    }
    let column = bench.column(ac, benchmark)?;
    let best = truth_best(ac, &column);

    let (hit1, hit3) = (0..runs as u64)
        .into_par_iter()
        .map(|r| -> Result<(usize, usize)> {
            let mut state = PolicyState::new(ac.clone(), budget, seed.wrapping_add(r), mode)?;
            let mut train = Vec::with_capacity(budget);
            for _ in 0..budget {
                let s = state.suggest()?;
                let i = ac.index_of(&s).expect("suggested setting is in the table");
                train.push((i, column[i]));
            }
            let ranked = rank_by_fit(ac, &train)?;
            let pos = ranked
                .iter()
                .position(|&(i, _)| i == best)
                .expect("permutation");
            Ok(((pos < 1) as usize, (pos < 3) as usize))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    Ok(PolicyRecall {
        recall_at_1: hit1 as f64 / runs as f64,
        recall_at_3: hit3 as f64 / runs as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomRecall {
    pub monte_carlo: f64,
    /// `budget / k`
    pub analytic: f64,
}

/// Random subset testing: train `budget` of `k` settings chosen uniformly
/// and succeed when the true best is among them.
pub fn simulate_random(k: usize, budget: usize, runs: usize, seed: u64) -> Result<RandomRecall> {
    if k == 0 || budget > k {
        return Err(Error::domain(format!(
            "budget {budget} out of range for k = {k}"
        )));
    }
    if runs == 0 {
        return Err(Error::domain("runs must be >= 1"));
    }
    // The true best is index 0 without loss of generality.
    let hits: usize = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
            index::sample(&mut rng, k, budget).iter().any(|i| i == 0) as usize
        })
        .sum();
    Ok(RandomRecall {
        monte_carlo: hits as f64 / runs as f64,
        analytic: budget as f64 / k as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallPoint {
    pub budget: usize,
    pub k: usize,
    pub recall: f64,
}

/// Policy Recall@1 and Recall@3 over a range of budgets for one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallCurve {
    pub benchmark: String,
    pub budgets: Vec<usize>,
    pub points: Vec<RecallPoint>,
    pub runs: usize,
    pub seed: u64,
    pub sampling_mode: SamplingMode,
}

impl RecallCurve {
    pub fn recall(&self, budget: usize, k: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.budget == budget && p.k == k)
            .map(|p| p.recall)
    }
}

pub fn recall_curve(
    ac: &AcTable,
    bench: &BenchmarkTable,
    benchmark: &str,
    budgets: &[usize],
    runs: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<RecallCurve> {
    let mut points = Vec::with_capacity(budgets.len() * 2);
    for &b in budgets {
        let r = simulate_policy(ac, bench, benchmark, b, runs, seed, mode)?;
        points.push(RecallPoint {
            budget: b,
            k: 1,
            recall: r.recall_at_1,
        });
        points.push(RecallPoint {
            budget: b,
            k: 3,
            recall: r.recall_at_3,
        });
    }
    Ok(RecallCurve {
        benchmark: benchmark.to_owned(),
        budgets: budgets.to_vec(),
        points,
        runs,
        seed,
        sampling_mode: mode,
    })
}

fn file_stem(benchmark: &str) -> String {
    benchmark
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

#[derive(Serialize)]
struct CurveSummary<'a> {
    benchmark: &'a str,
    file: String,
    runs: usize,
    seed: u64,
    sampling_mode: SamplingMode,
    budgets: &'a [usize],
}

#[derive(Serialize)]
struct Summary<'a> {
    curves: Vec<CurveSummary<'a>>,
    r_squared: &'a [FitReport],
    tolerances: Tolerances,
}

/// Writes `recall_<benchmark>.csv` per curve, `r2.csv` when fit reports are
/// given, and `summary.json`, all into directory `dir`.
pub fn emit_report(
    curves: &[RecallCurve],
    r2_tables: &[FitReport],
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut summaries = Vec::with_capacity(curves.len());
    for curve in curves {
        let file = format!("recall_{}.csv", file_stem(&curve.benchmark));
        let mut out = String::from("budget,k,recall\n");
        for p in &curve.points {
            out.push_str(&format!("{},{},{:.6}\n", p.budget, p.k, p.recall));
        }
        let path = dir.join(&file);
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        summaries.push(CurveSummary {
            benchmark: &curve.benchmark,
            file,
            runs: curve.runs,
            seed: curve.seed,
            sampling_mode: curve.sampling_mode,
            budgets: &curve.budgets,
        });
    }

    if !r2_tables.is_empty() {
        let mut out = String::from("benchmark,category,mode,basis,evaluation,r_squared\n");
        for rep in r2_tables {
            let eval = serde_json::to_value(rep.evaluation)?;
            for b in &rep.benchmarks {
                out.push_str(&format!(
                    "{},{},{},{},{},{:.6}\n",
                    b.benchmark,
                    b.category,
                    rep.mode,
                    rep.basis,
                    eval.as_str().unwrap_or_default(),
                    b.r_squared
                ));
            }
        }
        let path = dir.join("r2.csv");
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }

    let summary = Summary {
        curves: summaries,
        r_squared: r2_tables,
        tolerances: TOLERANCES,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    let path = dir.join("summary.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::fixtures;

    #[test]
    fn recall_window() {
        let ranking = ["a", "b", "c", "d"];
        assert!(recall_at(&ranking, "a", 3).unwrap());
        assert!(!recall_at(&ranking, "d", 3).unwrap());
        assert!(recall_at(&ranking, "d", 4).unwrap());
        assert!(recall_at(&ranking, "z", 3).is_err());
        assert!(recall_at(&ranking, "a", 0).is_err());
    }

    #[test]
    fn random_analytic_values() {
        let r = simulate_random(15, 4, 100, 0).unwrap();
        assert_eq!(r.analytic, 4.0 / 15.0);
        assert_eq!(simulate_random(15, 15, 50, 0).unwrap().monte_carlo, 1.0);
        assert!(simulate_random(15, 16, 10, 0).is_err());
    }

    #[test]
    fn unknown_benchmark() {
        let ac = fixtures::ac_table();
        let bench = fixtures::benchmark_table();
        assert!(simulate_policy(&ac, &bench, "Nope", 4, 10, 0, SamplingMode::default()).is_err());
    }

    #[test]
    fn fixture_truth() {
        let ac = fixtures::ac_table();
        let bench = fixtures::benchmark_table();
        let col = bench.column(&ac, "OKVQA").unwrap();
        assert_eq!(ac.entries()[truth_best(&ac, &col)].setting, "SigLIP2-L");
    }

    #[test]
    fn file_names() {
        assert_eq!(file_stem("SEED-Bench"), "SEED_Bench");
    }
}
