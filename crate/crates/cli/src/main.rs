mod args;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Serialize;
use serde_json::json;

use aclaw::alignment::{a_score, a_score_image, read_logprobs_jsonl};
use aclaw::correspondence::{evaluate_pairs, read_pairs_jsonl, CorrespondenceConfig, ScoredPair};
use aclaw::evaluator::{
    emit_report, recall_curve, simulate_random, RecallCurve, POLICY_EXCLUDED_BENCHMARKS,
};
use aclaw::fit::{fit_report, Basis, Evaluation, FeatureMode, FitReport};
use aclaw::policy::{rank_candidates, PolicyState};
use aclaw::table::fixtures;
use aclaw::tensor::load_ftf;
use aclaw::{AcTable, BenchmarkTable, FeatureMap};

use args::{
    AscoreArgs, Cli, Command, CscoreArgs, FitArgs, ModeArg, PolicyCommand, SimulateArgs, TableArgs,
};

enum Failure {
    Usage(String),
    Data(String),
}

impl From<aclaw::Error> for Failure {
    fn from(e: aclaw::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CmdResult = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Cscore(a) => cscore(a, cli.json),
        Command::Ascore(a) => ascore(a, cli.json),
        Command::Fit(a) => fit(a, cli.json),
        Command::Policy(p) => policy(p, cli.json),
        Command::Simulate(a) => simulate(a, cli.json),
    }
}

fn to_json<T: Serialize>(v: &T) -> CmdResult {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load_tables(t: &TableArgs) -> Result<(AcTable, BenchmarkTable), Failure> {
    let ac = match &t.ac {
        Some(p) => AcTable::from_path(p)?,
        None => fixtures::ac_table(),
    };
    let bench = match &t.bench {
        Some(p) => BenchmarkTable::from_path(p)?,
        None => fixtures::benchmark_table(),
    };
    Ok((ac, bench))
}

fn cscore(a: &CscoreArgs, json: bool) -> CmdResult {
    if !(a.alpha > 0.0 && a.alpha <= 1.0) {
        return Err(Failure::Usage(format!(
            "--alpha must be in (0, 1], got {}",
            a.alpha
        )));
    }
    let records = read_pairs_jsonl(&a.pairs)?;
    let base: PathBuf = match &a.ftf_dir {
        Some(d) => d.clone(),
        None => a.pairs.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    // Features are shared between pairs that reuse an image.
    let mut cache: HashMap<PathBuf, FeatureMap> = HashMap::new();
    for r in &records {
        for p in [&r.ftf_src, &r.ftf_trg] {
            if !cache.contains_key(p) {
                cache.insert(p.clone(), load_ftf(base.join(p))?);
            }
        }
    }
    let pairs: Vec<ScoredPair<'_>> = records
        .iter()
        .map(|r| (&r.annotation, &cache[&r.ftf_src], &cache[&r.ftf_trg]))
        .collect();
    let cfg = CorrespondenceConfig {
        alpha: a.alpha,
        similarity: a.similarity.into(),
        aggregation: a.aggregation.into(),
    };
    let res = evaluate_pairs(&pairs, &cfg)?;
    let score = match cfg.aggregation {
        aclaw::correspondence::Aggregation::Global => res.percentage(),
        aclaw::correspondence::Aggregation::PerCategory => res.per_category_percentage(),
    };
    if json {
        return to_json(&json!({
            "c_score": score,
            "alpha": cfg.alpha,
            "similarity": cfg.similarity,
            "aggregation": cfg.aggregation,
            "correct": res.correct,
            "total": res.total,
            "pairs": res.per_pair,
        }));
    }
    Ok(format!(
        "C score (PCK@{:.2}): {:.2}  [{}/{} keypoints, {} pairs]\n",
        cfg.alpha,
        score,
        res.correct,
        res.total,
        res.per_pair.len()
    ))
}

fn ascore(a: &AscoreArgs, json: bool) -> CmdResult {
    let records = read_logprobs_jsonl(&a.logprobs)?;
    let score = a_score(&records)?;
    if json {
        let per_image = records
            .iter()
            .map(|r| Ok(json!({ "image_id": r.image_id, "a_score": a_score_image(r)? })))
            .collect::<Result<Vec<_>, aclaw::Error>>()?;
        return to_json(&json!({ "a_score": score, "images": per_image }));
    }
    Ok(format!("A score: {score:.4}  [{} images]\n", records.len()))
}

fn feature_mode(mode: ModeArg, seed: u64) -> FeatureMode {
    match mode {
        ModeArg::Ac => FeatureMode::Ac,
        ModeArg::AOnly => FeatureMode::AOnly,
        ModeArg::COnly => FeatureMode::COnly,
        ModeArg::Random => FeatureMode::Random { seed },
    }
}

fn render_fit(rep: &FitReport) -> String {
    let mut s = String::new();
    let eval = match rep.evaluation {
        Evaluation::InSample => "in-sample",
        Evaluation::LeaveOneOut => "leave-one-out",
    };
    let _ = writeln!(s, "R² (mode {}, basis {}, {eval})", rep.mode, rep.basis);
    for b in &rep.benchmarks {
        let _ = writeln!(
            s,
            "  {:<12} {:<7} {:>7.2}%",
            b.benchmark,
            b.category.to_string(),
            100.0 * b.r_squared
        );
    }
    for (cat, v) in &rep.category_means {
        let _ = writeln!(s, "  {:<20} {:>7.2}%", format!("mean ({cat})"), 100.0 * v);
    }
    s
}

fn fit(a: &FitArgs, json: bool) -> CmdResult {
    let (ac, bench) = load_tables(&a.tables)?;
    let basis: Basis = a.basis.into();
    let rep = fit_report(
        &ac,
        &bench,
        feature_mode(a.mode, a.seed),
        basis,
        a.evaluation.into(),
    )?;
    if json {
        to_json(&rep)
    } else {
        Ok(render_fit(&rep))
    }
}

fn load_state(path: &Path) -> Result<PolicyState, Failure> {
    if !path.exists() {
        return Err(Failure::Data(format!(
            "no state file at {}; run `aclaw policy init` first",
            path.display()
        )));
    }
    Ok(PolicyState::load(path)?)
}

fn policy(cmd: &PolicyCommand, json: bool) -> CmdResult {
    match cmd {
        PolicyCommand::Init(a) => {
            let path = &a.state.state;
            if path.exists() && !a.force {
                return Err(Failure::Data(format!(
                    "state file {} already exists (use --force to replace it)",
                    path.display()
                )));
            }
            let ac = match &a.ac {
                Some(p) => AcTable::from_path(p)?,
                None => fixtures::ac_table(),
            };
            let st = PolicyState::new(ac, a.budget, a.seed, a.sampling_mode.into())?;
            st.save(path)?;
            if json {
                return to_json(&json!({
                    "state": path,
                    "settings": st.k(),
                    "budget": st.k_prime,
                    "seed": st.rng_seed,
                    "sampling_mode": st.sampling_mode,
                }));
            }
            Ok(format!(
                "initialized {} ({} settings, budget {}, seed {}, {})\n",
                path.display(),
                st.k(),
                st.k_prime,
                st.rng_seed,
                st.sampling_mode
            ))
        }
        PolicyCommand::Suggest(a) => {
            let mut st = load_state(&a.state)?;
            let setting = st.suggest()?;
            st.save(&a.state)?;
            if json {
                return to_json(&json!({
                    "setting": setting,
                    "suggested": st.sampled.len(),
                    "budget": st.k_prime,
                    "level": st.level,
                }));
            }
            Ok(format!(
                "{setting}\n  ({} of {} suggested, level {})\n",
                st.sampled.len(),
                st.k_prime,
                st.level
            ))
        }
        PolicyCommand::Record(a) => {
            let mut st = load_state(&a.state.state)?;
            let n = st.record(&a.setting, a.performance)?;
            st.save(&a.state.state)?;
            if json {
                return to_json(
                    &json!({ "setting": a.setting, "performance": a.performance, "recorded": n }),
                );
            }
            Ok(format!(
                "recorded {} = {} ({n} recorded)\n",
                a.setting, a.performance
            ))
        }
        PolicyCommand::Rank(a) => {
            let st = load_state(&a.state)?;
            let ranked = rank_candidates(&st)?;
            if json {
                let rows: Vec<_> = ranked
                    .iter()
                    .enumerate()
                    .map(|(i, (s, p))| {
                        json!({
                            "rank": i + 1,
                            "setting": s,
                            "predicted": p,
                            "observed": st.recorded.get(s),
                        })
                    })
                    .collect();
                return to_json(&json!({ "recorded": st.recorded.len(), "ranking": rows }));
            }
            let mut s = format!("ranking from {} recorded results\n", st.recorded.len());
            for (i, (name, p)) in ranked.iter().enumerate() {
                let obs = st
                    .recorded
                    .get(name)
                    .map(|v| format!("  (observed {v})"))
                    .unwrap_or_default();
                let _ = writeln!(s, "  {:>2}. {:<12} {:>10.3}{obs}", i + 1, name, p);
            }
            Ok(s)
        }
    }
}

#[derive(Serialize)]
struct RandomRow {
    budget: usize,
    analytic: f64,
    monte_carlo: f64,
}

#[derive(Serialize)]
struct HeadlineRow {
    budget: usize,
    excluded: [&'static str; 2],
    benchmarks: usize,
    mean_recall_at_3: f64,
}

fn simulate(a: &SimulateArgs, json: bool) -> CmdResult {
    let (ac, bench) = load_tables(&a.tables)?;
    if a.runs == 0 || a.random_runs == 0 {
        return Err(Failure::Usage(
            "--runs and --random-runs must be >= 1".into(),
        ));
    }
    if let Some(b) = a.budgets.iter().find(|&&b| b == 0 || b > ac.len()) {
        return Err(Failure::Usage(format!(
            "--budget {b} outside 1..={}",
            ac.len()
        )));
    }
    let names: Vec<String> = if a.benchmarks.is_empty() {
        bench.benchmarks().iter().map(|(b, _)| b.clone()).collect()
    } else {
        a.benchmarks.clone()
    };
    let mode = a.sampling_mode.into();
    let curves = names
        .iter()
        .map(|b| recall_curve(&ac, &bench, b, &a.budgets, a.runs, a.seed, mode))
        .collect::<Result<Vec<RecallCurve>, _>>()?;

    let headline: Vec<HeadlineRow> = a
        .budgets
        .iter()
        .filter_map(|&budget| {
            let vals: Vec<f64> = curves
                .iter()
                .filter(|c| !POLICY_EXCLUDED_BENCHMARKS.contains(&c.benchmark.as_str()))
                .filter_map(|c| c.recall(budget, 3))
                .collect();
            (!vals.is_empty()).then(|| HeadlineRow {
                budget,
                excluded: POLICY_EXCLUDED_BENCHMARKS,
                benchmarks: vals.len(),
                mean_recall_at_3: vals.iter().sum::<f64>() / vals.len() as f64,
            })
        })
        .collect();
    let random = a
        .budgets
        .iter()
        .map(|&b| {
            let r = simulate_random(ac.len(), b, a.random_runs, a.seed)?;
            Ok(RandomRow {
                budget: b,
                analytic: r.analytic,
                monte_carlo: r.monte_carlo,
            })
        })
        .collect::<Result<Vec<_>, aclaw::Error>>()?;

    if let Some(dir) = &a.out {
        let reports = [FeatureMode::Ac, FeatureMode::AOnly, FeatureMode::COnly]
            .into_iter()
            .flat_map(|m| [Basis::Quadratic, Basis::Linear].map(move |b| (m, b)))
            .map(|(m, b)| fit_report(&ac, &bench, m, b, Evaluation::InSample))
            .collect::<Result<Vec<_>, _>>()?;
        emit_report(&curves, &reports, dir)?;
    }

    if json {
        return to_json(&json!({
            "runs": a.runs,
            "random_runs": a.random_runs,
            "seed": a.seed,
            "sampling_mode": mode,
            "curves": curves,
            "headline": headline,
            "random": random,
        }));
    }
    let mut s = format!(
        "policy recall ({} runs, seed {}, {})\n",
        a.runs, a.seed, mode
    );
    for c in &curves {
        for &b in &c.budgets {
            let cat = bench
                .category(&c.benchmark)
                .map(|c| c.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "  {:<12} {:<7} budget {:>2}  R@1 {:.3}  R@3 {:.3}",
                c.benchmark,
                cat,
                b,
                c.recall(b, 1).unwrap_or(f64::NAN),
                c.recall(b, 3).unwrap_or(f64::NAN)
            );
        }
    }
    for h in &headline {
        let _ = writeln!(
            s,
            "  mean R@3 over {} benchmarks (excl. {}) at budget {}: {:.4}",
            h.benchmarks,
            h.excluded.join(", "),
            h.budget,
            h.mean_recall_at_3
        );
    }
    let _ = writeln!(s, "random subset testing ({} runs)", a.random_runs);
    for r in &random {
        let _ = writeln!(
            s,
            "  budget {:>2}  analytic {:.4}  monte carlo {:.4}",
            r.budget, r.analytic, r.monte_carlo
        );
    }
    Ok(s)
}
