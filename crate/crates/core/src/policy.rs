//! Budgeted selection policy.
//!
//! Settings are placed on the unit square by min-max normalized (A, C). Each
//! draw partitions the square into `2^level x 2^level` cells, drops cells
//! that are empty or already hold a sampled setting, and picks a surviving
//! cell and then a setting inside it uniformly at random. After the budget is
//! spent and the chosen settings have been finetuned, a quadratic model on the
//! raw (A, C) scores ranks the whole search space.
//!
//! Randomness is derived from `(rng_seed, draw index)`, so a state file can be
//! resumed at any point and continue exactly like an uninterrupted run.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_least_squares, Basis};
use crate::table::AcTable;

pub const STATE_FORMAT_VERSION: u32 = 1;

/// Finest subdivision level; beyond it candidates are drawn uniformly.
pub const DEFAULT_LEVEL_CAP: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draw `j` (1-based) starts at level `j`.
    IterationSubdivision,
    /// Stay on one level until its cells are used up, then refine.
    #[default]
    LevelExhaustion,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::IterationSubdivision => "iteration_subdivision",
            SamplingMode::LevelExhaustion => "level_exhaustion",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iteration_subdivision" => Ok(SamplingMode::IterationSubdivision),
            "level_exhaustion" => Ok(SamplingMode::LevelExhaustion),
            other => Err(Error::domain(format!("unknown sampling mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedEntry {
    pub setting: String,
    pub a_norm: f64,
    pub c_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizedAc {
    pub entries: Vec<NormalizedEntry>,
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    move |x| {
        if hi > lo {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

/// Per-axis min-max normalization. A constant axis maps to 0.5.
pub fn normalize_scores(ac: &AcTable) -> NormalizedAc {
    let na = min_max(ac.entries().iter().map(|e| e.a));
    let nc = min_max(ac.entries().iter().map(|e| e.c));
    NormalizedAc {
        entries: ac
            .entries()
            .iter()
            .map(|e| NormalizedEntry {
                setting: e.setting.clone(),
                a_norm: na(e.a),
                c_norm: nc(e.c),
            })
            .collect(),
    }
}

/// `(row, col)` cell of a normalized point on the `2^level` grid. Row follows
/// the A axis, column the C axis.
pub fn region_of(point: (f64, f64), level: u32) -> Result<(u64, u64)> {
    if level == 0 || level > 62 {
        return Err(Error::domain(format!(
            "level must be in 1..=62, got {level}"
        )));
    }
    let (a, c) = point;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&c) {
        return Err(Error::domain(format!(
            "point ({a}, {c}) outside the unit square"
        )));
    }
    let n = 1u64 << level;
    let cell = |x: f64| ((x * n as f64).floor() as u64).min(n - 1);
    Ok((cell(a), cell(c)))
}

/// Persisted policy progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub format_version: u32,
    pub ac: AcTable,
    pub normalized: NormalizedAc,
    pub k_prime: usize,
    pub sampled: Vec<String>,
    pub recorded: BTreeMap<String, f64>,
    pub level: u32,
    pub rng_seed: u64,
    pub sampling_mode: SamplingMode,
    pub level_cap: u32,
}

impl PolicyState {
    pub fn new(
        ac: AcTable,
        k_prime: usize,
        rng_seed: u64,
        sampling_mode: SamplingMode,
    ) -> Result<Self> {
        if ac.is_empty() {
            return Err(Error::domain("search space is empty"));
        }
        if k_prime == 0 || k_prime > ac.len() {
            return Err(Error::domain(format!(
                "budget must be in 1..={}, got {k_prime}",
                ac.len()
            )));
        }
        Ok(PolicyState {
            format_version: STATE_FORMAT_VERSION,
            normalized: normalize_scores(&ac),
            ac,
            k_prime,
            sampled: Vec::new(),
            recorded: BTreeMap::new(),
            level: 1,
            rng_seed,
            sampling_mode,
            level_cap: DEFAULT_LEVEL_CAP,
        })
    }

    pub fn k(&self) -> usize {
        self.ac.len()
    }

    /// Settings suggested but not yet recorded, in suggestion order.
    pub fn pending(&self) -> impl Iterator<Item = &str> {
        self.sampled
            .iter()
            .map(String::as_str)
            .filter(|s| !self.recorded.contains_key(*s))
    }

    /// Generator for the next draw; depends only on the seed and how many
    /// settings have been drawn so far.
    fn draw_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.sampled.len() as u64);
        rng
    }

    /// Suggests the next setting to finetune and appends it to `sampled`.
    pub fn suggest(&mut self) -> Result<String> {
        if self.sampled.len() >= self.k_prime && self.sampled.len() < self.k() {
            return Err(Error::State(format!(
                "budget of {} finetuning runs is used up",
                self.k_prime
            )));
        }
        let mut rng = self.draw_rng();
        sample_next(self, &mut rng)
    }

    /// Records the measured performance of a suggested setting and returns
    /// the number of recorded results.
    pub fn record(&mut self, setting: &str, performance: f64) -> Result<usize> {
        if !performance.is_finite() {
            return Err(Error::domain(format!(
                "performance must be finite, got {performance}"
            )));
        }
        if !self.sampled.iter().any(|s| s == setting) {
            return Err(Error::State(format!("'{setting}' was never suggested")));
        }
        if self.recorded.contains_key(setting) {
            return Err(Error::State(format!("'{setting}' is already recorded")));
        }
        self.recorded.insert(setting.to_owned(), performance);
        Ok(self.recorded.len())
    }

    pub fn rank(&self) -> Result<Vec<(String, f64)>> {
        rank_candidates(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&json).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let state: PolicyState = serde_json::from_slice(&bytes)?;
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != STATE_FORMAT_VERSION {
            return Err(Error::format(
                "format_version",
                format!("unsupported state version {}", self.format_version),
            ));
        }
        let bad = |msg: String| Err(Error::State(msg));
        if self.level == 0 {
            return bad("level must be >= 1".into());
        }
        if self.k_prime == 0 || self.k_prime > self.k() || self.sampled.len() > self.k() {
            return bad(format!(
                "inconsistent budget {} for {} settings",
                self.k_prime,
                self.k()
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.sampled {
            if self.ac.index_of(s).is_none() || !seen.insert(s) {
                return bad(format!("sampled setting '{s}' is unknown or duplicated"));
            }
        }
        if let Some(s) = self.recorded.keys().find(|s| !seen.contains(s)) {
            return bad(format!("recorded setting '{s}' was never sampled"));
        }
        if self.normalized != normalize_scores(&self.ac) {
            return bad("normalized scores do not match the AC table".into());
        }
        Ok(())
    }
}

/// Surviving cells at `level`: non-empty and free of sampled settings, as
/// candidate index lists, ordered by cell.
fn free_cells(state: &PolicyState, taken: &[bool], level: u32) -> Vec<Vec<usize>> {
    let mut cells: BTreeMap<(u64, u64), (bool, Vec<usize>)> = BTreeMap::new();
    for (i, e) in state.normalized.entries.iter().enumerate() {
        let key = region_of((e.a_norm, e.c_norm), level).expect("normalized coordinates");
        let cell = cells.entry(key).or_default();
        cell.0 |= taken[i];
        cell.1.push(i);
    }
    cells
        .into_values()
        .filter(|(used, _)| !used)
        .map(|(_, members)| members)
        .collect()
}

/// Draws the next setting with region-based sampling and appends it to
/// `state.sampled`.
pub fn sample_next<R: Rng + ?Sized>(state: &mut PolicyState, rng: &mut R) -> Result<String> {
    let k = state.k();
    if state.sampled.len() >= k {
        return Err(Error::Exhausted(k));
    }
    let mut taken = vec![false; k];
    for s in &state.sampled {
        if let Some(i) = state.ac.index_of(s) {
            taken[i] = true;
        }
    }

    let mut level = match state.sampling_mode {
        SamplingMode::IterationSubdivision => state.sampled.len() as u32 + 1,
        SamplingMode::LevelExhaustion => state.level,
    };
    let pick = loop {
        if level > state.level_cap {
            // Co-located candidates can leave no free cell at any level.
            level = state.level_cap;
            let free: Vec<usize> = (0..k).filter(|&i| !taken[i]).collect();
            break free[rng.random_range(0..free.len())];
        }
        let cells = free_cells(state, &taken, level);
        if !cells.is_empty() {
            let cell = &cells[rng.random_range(0..cells.len())];
            break cell[rng.random_range(0..cell.len())];
        }
        level += 1;
    };
    state.level = level;
    let setting = state.ac.entries()[pick].setting.clone();
    state.sampled.push(setting.clone());
    Ok(setting)
}

/// Fits the quadratic law on `(index, performance)` pairs over raw (A, C)
/// and returns `(index, prediction)` for every setting, best first. Ties go
/// to the lexicographically smaller setting id.
pub fn rank_by_fit(ac: &AcTable, train: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    if train.is_empty() {
        return Err(Error::State("no recorded results to fit".into()));
    }
    let basis = Basis::Quadratic;
    let entries = ac.entries();
    let xs: Vec<Vec<f64>> = train
        .iter()
        .map(|&(i, _)| basis.expand(entries[i].a, entries[i].c))
        .collect();
    let y: Vec<f64> = train.iter().map(|&(_, v)| v).collect();
    let w = fit_least_squares(&xs, &y)?;

    let mut ranked: Vec<(usize, f64)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let p: f64 = basis
                .expand(e.a, e.c)
                .iter()
                .zip(&w)
                .map(|(x, w)| x * w)
                .sum();
            (i, p)
        })
        .collect();
    ranked.sort_by(|x, y| {
        y.1.total_cmp(&x.1)
            .then_with(|| entries[x.0].setting.cmp(&entries[y.0].setting))
    });
    Ok(ranked)
}

/// Ranks every setting by the prediction of a quadratic fit on the recorded
/// results.
pub fn rank_candidates(state: &PolicyState) -> Result<Vec<(String, f64)>> {
    // Recorded results in suggestion order.
    let train: Vec<(usize, f64)> = state
        .sampled
        .iter()
        .filter_map(|s| {
            let v = state.recorded.get(s)?;
            Some((state.ac.index_of(s)?, *v))
        })
        .collect();
    Ok(rank_by_fit(&state.ac, &train)?
        .into_iter()
        .map(|(i, p)| (state.ac.entries()[i].setting.clone(), p))
        .collect())
}
