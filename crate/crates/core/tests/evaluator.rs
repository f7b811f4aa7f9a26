use aclaw::evaluator::{emit_report, recall_curve, simulate_policy, simulate_random};
use aclaw::fit::{fit_report, Basis, Evaluation, FeatureMode};
use aclaw::policy::{rank_by_fit, SamplingMode};
use aclaw::table::{fixtures, AcTable, BenchmarkTable};

#[test]
fn random_baseline_converges() {
    for budget in 1..=15 {
        let r = simulate_random(15, budget, 10_000, 0).unwrap();
        assert!(
            (r.monte_carlo - r.analytic).abs() < 0.02,
            "budget {budget}: {r:?}"
        );
    }
}

#[test]
fn recall_at_1_never_exceeds_recall_at_3() {
    let ac = fixtures::ac_table();
    let bench = fixtures::benchmark_table();
    for (b, _) in bench.benchmarks() {
        for budget in [2, 4, 7] {
            let r =
                simulate_policy(&ac, &bench, b, budget, 200, 1, SamplingMode::default()).unwrap();
            assert!(r.recall_at_1 <= r.recall_at_3, "{b} {budget}");
        }
    }
}

#[test]
fn policy_simulation_is_deterministic() {
    let ac = fixtures::ac_table();
    let bench = fixtures::benchmark_table();
    let a = simulate_policy(&ac, &bench, "OKVQA", 4, 300, 5, SamplingMode::default()).unwrap();
    let b = simulate_policy(&ac, &bench, "OKVQA", 4, 300, 5, SamplingMode::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_budget_uses_the_full_table_fit() {
    let ac = fixtures::ac_table();
    let bench = fixtures::benchmark_table();
    for (b, _) in bench.benchmarks() {
        let col = bench.column(&ac, b).unwrap();
        let train: Vec<(usize, f64)> = col.iter().copied().enumerate().collect();
        let ranked = rank_by_fit(&ac, &train).unwrap();
        // In-sample R² of the ranking model's predictions equals the report.
        let mut y_hat = vec![0.0; col.len()];
        for (i, p) in &ranked {
            y_hat[*i] = *p;
        }
        let r2 = aclaw::fit::r_squared(&col, &y_hat).unwrap();
        let rep = fit_report(
            &ac,
            &bench,
            FeatureMode::Ac,
            Basis::Quadratic,
            Evaluation::InSample,
        )
        .unwrap();
        assert!((r2 - rep.get(b).unwrap()).abs() < 1e-9);

        // Every run at budget k trains everything, so all runs agree.
        let r = simulate_policy(&ac, &bench, b, ac.len(), 20, 0, SamplingMode::default()).unwrap();
        assert!(r.recall_at_3 == 0.0 || r.recall_at_3 == 1.0);
    }
}

#[test]
fn exact_quadratic_column_gives_full_recall() {
    let ac = fixtures::ac_table();
    let mut csv = String::from("setting,benchmark,category,score\n");
    for e in ac.entries() {
        let v = 50.0 + 6.0 * e.a + 0.9 * e.c - 0.7 * e.a * e.a - 0.01 * e.c * e.c;
        csv.push_str(&format!("{},Synth,vision,{v}\n", e.setting));
    }
    let bench = BenchmarkTable::from_reader(csv.as_bytes()).unwrap();
    let r = simulate_policy(
        &ac,
        &bench,
        "Synth",
        ac.len(),
        50,
        0,
        SamplingMode::default(),
    )
    .unwrap();
    assert_eq!(r.recall_at_3, 1.0);
    assert_eq!(r.recall_at_1, 1.0);
}

fn small_tables() -> (AcTable, BenchmarkTable) {
    (fixtures::ac_table(), fixtures::benchmark_table())
}

#[test]
fn report_files() {
    let (ac, bench) = small_tables();
    let budgets: Vec<usize> = (3..=14).collect();
    let curve = recall_curve(
        &ac,
        &bench,
        "SEED-Bench",
        &budgets,
        20,
        0,
        SamplingMode::default(),
    )
    .unwrap();
    let rep = fit_report(
        &ac,
        &bench,
        FeatureMode::Ac,
        Basis::Quadratic,
        Evaluation::InSample,
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    emit_report(
        std::slice::from_ref(&curve),
        std::slice::from_ref(&rep),
        dir.path(),
    )
    .unwrap();
    let csv = std::fs::read_to_string(dir.path().join("recall_SEED_Bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 24);
    assert!(csv.starts_with("budget,k,recall\n"));
    let r2 = std::fs::read_to_string(dir.path().join("r2.csv")).unwrap();
    assert_eq!(r2.lines().count(), 1 + 8);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["curves"][0]["seed"], 0);
    assert_eq!(summary["tolerances"]["policy_recall"], 0.07);

    let again = tempfile::tempdir().unwrap();
    let curve2 = recall_curve(
        &ac,
        &bench,
        "SEED-Bench",
        &budgets,
        20,
        0,
        SamplingMode::default(),
    )
    .unwrap();
    emit_report(&[curve2], &[rep], again.path()).unwrap();
    for f in ["recall_SEED_Bench.csv", "r2.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }

    let empty = tempfile::tempdir().unwrap();
    emit_report(&[], &[], empty.path()).unwrap();
    let names: Vec<_> = std::fs::read_dir(empty.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["summary.json".to_string()]);
}
