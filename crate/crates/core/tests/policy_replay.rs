use std::collections::{HashMap, HashSet};

use aclaw::fit::Basis;
use aclaw::policy::{normalize_scores, rank_candidates, region_of, PolicyState, SamplingMode};
use aclaw::table::{fixtures, AcEntry, AcTable};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straightforward re-implementation of region-based sampling: build the
/// occupancy of every cell at a level and scan the cells in row-major order.
fn reference_trace(ac: &AcTable, draws: usize, seed: u64, mode: SamplingMode) -> Vec<String> {
    let lo_a = ac
        .entries()
        .iter()
        .map(|e| e.a)
        .fold(f64::INFINITY, f64::min);
    let hi_a = ac
        .entries()
        .iter()
        .map(|e| e.a)
        .fold(f64::NEG_INFINITY, f64::max);
    let lo_c = ac
        .entries()
        .iter()
        .map(|e| e.c)
        .fold(f64::INFINITY, f64::min);
    let hi_c = ac
        .entries()
        .iter()
        .map(|e| e.c)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm = |x: f64, lo: f64, hi: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 };
    let pts: Vec<(f64, f64)> = ac
        .entries()
        .iter()
        .map(|e| (norm(e.a, lo_a, hi_a), norm(e.c, lo_c, hi_c)))
        .collect();

    let mut sampled: Vec<usize> = Vec::new();
    let mut level = 1u32;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(draw as u64);
        let mut lvl = match mode {
            SamplingMode::IterationSubdivision => draw as u32 + 1,
            SamplingMode::LevelExhaustion => level,
        };
        let pick = loop {
            if lvl > 16 {
                lvl = 16;
                let free: Vec<usize> = (0..pts.len()).filter(|i| !sampled.contains(i)).collect();
                break free[rng.random_range(0..free.len())];
            }
            let n = 1usize << lvl;
            let cell = |x: f64| ((x * n as f64) as usize).min(n - 1);
            let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
            for (i, &(a, c)) in pts.iter().enumerate() {
                members.entry(cell(a) * n + cell(c)).or_default().push(i);
            }
            let mut keys: Vec<usize> = members.keys().copied().collect();
            keys.sort_unstable();
            let free: Vec<&Vec<usize>> = keys
                .iter()
                .map(|k| &members[k])
                .filter(|m| m.iter().all(|i| !sampled.contains(i)))
                .collect();
            if !free.is_empty() {
                let m = free[rng.random_range(0..free.len())];
                break m[rng.random_range(0..m.len())];
            }
            lvl += 1;
        };
        level = lvl;
        sampled.push(pick);
    }
    sampled
        .iter()
        .map(|&i| ac.entries()[i].setting.clone())
        .collect()
}

#[test]
fn fixture_trace_matches_reference() {
    let ac = fixtures::ac_table();
    for mode in [
        SamplingMode::IterationSubdivision,
        SamplingMode::LevelExhaustion,
    ] {
        for seed in 0..50 {
            let mut st = PolicyState::new(ac.clone(), 4, seed, mode).unwrap();
            let got: Vec<String> = (0..4).map(|_| st.suggest().unwrap()).collect();
            assert_eq!(
                got,
                reference_trace(&ac, 4, seed, mode),
                "seed {seed} {mode}"
            );

            let distinct: HashSet<_> = got.iter().collect();
            assert_eq!(distinct.len(), 4);
        }
    }
}

#[test]
fn draws_land_in_fresh_cells() {
    let ac = fixtures::ac_table();
    let norm = normalize_scores(&ac);
    let point = |s: &str| {
        let e = norm.entries.iter().find(|e| e.setting == s).unwrap();
        (e.a_norm, e.c_norm)
    };
    for seed in 0..50 {
        let mut st =
            PolicyState::new(ac.clone(), 4, seed, SamplingMode::IterationSubdivision).unwrap();
        for _ in 0..4 {
            let s = st.suggest().unwrap();
            let level = st.level;
            let cell = region_of(point(&s), level).unwrap();
            for earlier in &st.sampled[..st.sampled.len() - 1] {
                assert_ne!(region_of(point(earlier), level).unwrap(), cell);
            }
        }
    }
}

#[test]
fn full_draw_visits_every_setting_once() {
    let ac = fixtures::ac_table();
    for mode in [
        SamplingMode::IterationSubdivision,
        SamplingMode::LevelExhaustion,
    ] {
        let mut st = PolicyState::new(ac.clone(), ac.len(), 9, mode).unwrap();
        let all: HashSet<String> = (0..ac.len()).map(|_| st.suggest().unwrap()).collect();
        assert_eq!(all.len(), ac.len());
        assert!(st.suggest().is_err());
        assert_eq!(reference_trace(&ac, ac.len(), 9, mode), st.sampled);
    }
}

#[test]
fn every_candidate_in_exactly_one_cell() {
    let norm = normalize_scores(&fixtures::ac_table());
    for level in 1..=6 {
        let n = 1u64 << level;
        let mut counts = vec![0usize; (n * n) as usize];
        for e in &norm.entries {
            let (r, c) = region_of((e.a_norm, e.c_norm), level).unwrap();
            counts[(r * n + c) as usize] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), norm.entries.len());
    }
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let ac = fixtures::ac_table();
    let bench = fixtures::benchmark_table();
    let perf = |s: &str| bench.score(s, "SEED-Bench").unwrap();

    let mut straight = PolicyState::new(ac.clone(), 5, 42, SamplingMode::default()).unwrap();
    for _ in 0..5 {
        let s = straight.suggest().unwrap();
        straight.record(&s, perf(&s)).unwrap();
    }

    PolicyState::new(ac, 5, 42, SamplingMode::default())
        .unwrap()
        .save(&path)
        .unwrap();
    for _ in 0..5 {
        let mut st = PolicyState::load(&path).unwrap();
        let s = st.suggest().unwrap();
        st.save(&path).unwrap();
        let mut st = PolicyState::load(&path).unwrap();
        st.record(&s, perf(&s)).unwrap();
        st.save(&path).unwrap();
    }
    let resumed = PolicyState::load(&path).unwrap();
    assert_eq!(resumed, straight);
    assert_eq!(
        rank_candidates(&resumed).unwrap(),
        rank_candidates(&straight).unwrap()
    );
    assert_eq!(std::fs::read(&path).unwrap(), {
        let p2 = dir.path().join("again.json");
        straight.save(&p2).unwrap();
        std::fs::read(p2).unwrap()
    });
}

#[test]
fn corrupt_state_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let mut st = PolicyState::new(fixtures::ac_table(), 3, 1, SamplingMode::default()).unwrap();
    st.suggest().unwrap();
    st.sampled.push(st.sampled[0].clone());
    std::fs::write(&path, serde_json::to_vec(&st).unwrap()).unwrap();
    assert!(PolicyState::load(&path).is_err());
}

fn quadratic_truth(a: f64, c: f64) -> f64 {
    10.0 + 8.0 * a + 1.2 * c - 0.9 * a * a + 0.05 * a * c - 0.02 * c * c
}

#[test]
fn exact_quadratic_is_ranked_perfectly() {
    let ac = fixtures::ac_table();
    for seed in 0..20 {
        let mut st = PolicyState::new(ac.clone(), 8, seed, SamplingMode::default()).unwrap();
        for _ in 0..8 {
            let s = st.suggest().unwrap();
            let e = ac.get(&s).unwrap();
            st.record(&s, quadratic_truth(e.a, e.c)).unwrap();
        }
        let ranked: Vec<String> = rank_candidates(&st)
            .unwrap()
            .into_iter()
            .map(|(s, _)| s)
            .collect();
        let mut truth: Vec<(String, f64)> = ac
            .entries()
            .iter()
            .map(|e| (e.setting.clone(), quadratic_truth(e.a, e.c)))
            .collect();
        truth.sort_by(|x, y| y.1.total_cmp(&x.1));
        let truth: Vec<String> = truth.into_iter().map(|(s, _)| s).collect();
        assert_eq!(ranked, truth, "seed {seed}");
    }
}

#[test]
fn ranking_matches_pseudoinverse_oracle() {
    let ac = fixtures::ac_table();
    let bench = fixtures::benchmark_table();
    let mut st = PolicyState::new(ac.clone(), 5, 3, SamplingMode::default()).unwrap();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..5 {
        let s = st.suggest().unwrap();
        let v = bench.score(&s, "MMBench").unwrap();
        st.record(&s, v).unwrap();
        let e = ac.get(&s).unwrap();
        rows.push(Basis::Quadratic.expand(e.a, e.c));
        y.push(v);
    }
    let x = DMatrix::from_fn(5, 6, |i, j| rows[i][j]);
    let w = x.pseudo_inverse(1e-12).unwrap() * DVector::from_vec(y);
    let mut want: Vec<(String, f64)> = ac
        .entries()
        .iter()
        .map(|e| {
            let p: f64 = Basis::Quadratic
                .expand(e.a, e.c)
                .iter()
                .zip(w.iter())
                .map(|(a, b)| a * b)
                .sum();
            (e.setting.clone(), p)
        })
        .collect();
    want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let got = rank_candidates(&st).unwrap();
    let names = |v: &[(String, f64)]| v.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>();
    assert_eq!(names(&got), names(&want));
    for ((_, a), (_, b)) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
    }
}

#[test]
fn offset_of_performance_preserves_order() {
    let ac = fixtures::ac_table();
    let bench = fixtures::benchmark_table();
    // Needs a full-rank design: with fewer samples than basis functions the
    // minimum-norm solution spreads a shift over every weight.
    let run = |shift: f64| {
        let mut st = PolicyState::new(ac.clone(), 7, 17, SamplingMode::default()).unwrap();
        for _ in 0..7 {
            let s = st.suggest().unwrap();
            st.record(&s, bench.score(&s, "TextVQA").unwrap() + shift)
                .unwrap();
        }
        rank_candidates(&st)
            .unwrap()
            .into_iter()
            .map(|(s, _)| s)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(0.0), run(100.0));
}

fn table_strategy() -> impl Strategy<Value = AcTable> {
    prop::collection::vec((-5.0f64..-1.0, 0.0f64..30.0), 1..20).prop_map(|pts| {
        AcTable::new(
            pts.into_iter()
                .enumerate()
                .map(|(i, (a, c))| AcEntry {
                    setting: format!("s{i:02}"),
                    a,
                    c,
                })
                .collect(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_a_permutation(ac in table_strategy(), seed in any::<u64>(), exhaust in any::<bool>()) {
        let mode = if exhaust { SamplingMode::LevelExhaustion } else { SamplingMode::IterationSubdivision };
        let mut st = PolicyState::new(ac.clone(), ac.len(), seed, mode).unwrap();
        let drawn: Vec<String> = (0..ac.len()).map(|_| st.suggest().unwrap()).collect();
        let set: HashSet<&String> = drawn.iter().collect();
        prop_assert_eq!(set.len(), ac.len());
        for e in &normalize_scores(&ac).entries {
            prop_assert!((0.0..=1.0).contains(&e.a_norm) && (0.0..=1.0).contains(&e.c_norm));
        }
    }

    #[test]
    fn ranking_is_a_permutation(ac in table_strategy(), seed in any::<u64>(), budget in 1usize..8) {
        let budget = budget.min(ac.len());
        let mut st = PolicyState::new(ac.clone(), budget, seed, SamplingMode::default()).unwrap();
        for i in 0..budget {
            let s = st.suggest().unwrap();
            st.record(&s, 40.0 + i as f64).unwrap();
        }
        let ranked = rank_candidates(&st).unwrap();
        let set: HashSet<&String> = ranked.iter().map(|(s, _)| s).collect();
        prop_assert_eq!(set.len(), ac.len());
    }
}
