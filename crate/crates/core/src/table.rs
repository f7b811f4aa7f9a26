//! Per-setting score tables and their CSV formats.
//!
//! * AC table: `setting,a,c`
//! * Benchmark table: `setting,benchmark,category,score` (long format)

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcEntry {
    pub setting: String,
    pub a: f64,
    pub c: f64,
}

/// Alignment and correspondence scores per vision-representation setting,
/// in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AcEntry>", into = "Vec<AcEntry>")]
pub struct AcTable {
    entries: Vec<AcEntry>,
}

impl AcTable {
    pub fn new(entries: Vec<AcEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.setting.as_str()) {
                return Err(Error::domain(format!("duplicate setting '{}'", e.setting)));
            }
            if !e.a.is_finite() || !e.c.is_finite() {
                return Err(Error::domain(format!(
                    "non-finite score for setting '{}'",
                    e.setting
                )));
            }
        }
        Ok(AcTable { entries })
    }

    pub fn from_reader(rdr: impl Read) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(rdr);
        let entries = csv.deserialize().collect::<Result<Vec<AcEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_reader(File::open(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn entries(&self) -> &[AcEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn settings(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.setting.as_str())
    }

    pub fn index_of(&self, setting: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.setting == setting)
    }

    pub fn get(&self, setting: &str) -> Option<&AcEntry> {
        self.entries.iter().find(|e| e.setting == setting)
    }
}

impl TryFrom<Vec<AcEntry>> for AcTable {
    type Error = Error;

    fn try_from(entries: Vec<AcEntry>) -> Result<Self> {
        AcTable::new(entries)
    }
}

impl From<AcTable> for Vec<AcEntry> {
    fn from(t: AcTable) -> Self {
        t.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Vision,
    Ocr,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Vision => "vision",
            Category::Ocr => "ocr",
        })
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vision" => Ok(Category::Vision),
            "ocr" => Ok(Category::Ocr),
            other => Err(Error::domain(format!(
                "unknown benchmark category '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct BenchRow {
    setting: String,
    benchmark: String,
    category: Category,
    score: f64,
}

/// Downstream benchmark scores per setting.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    benchmarks: Vec<(String, Category)>,
    scores: BTreeMap<(String, String), f64>,
}

impl BenchmarkTable {
    pub fn from_reader(rdr: impl Read) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(rdr);
        let mut benchmarks: Vec<(String, Category)> = Vec::new();
        let mut scores = BTreeMap::new();
        for row in csv.deserialize() {
            let row: BenchRow = row?;
            if !row.score.is_finite() {
                return Err(Error::domain(format!(
                    "non-finite score for ({}, {})",
                    row.setting, row.benchmark
                )));
            }
            match benchmarks.iter().find(|(b, _)| *b == row.benchmark) {
                Some((_, cat)) if *cat != row.category => {
                    return Err(Error::domain(format!(
                        "benchmark '{}' listed under two categories",
                        row.benchmark
                    )))
                }
                Some(_) => {}
                None => benchmarks.push((row.benchmark.clone(), row.category)),
            }
            if scores
                .insert((row.setting.clone(), row.benchmark.clone()), row.score)
                .is_some()
            {
                return Err(Error::domain(format!(
                    "duplicate cell ({}, {})",
                    row.setting, row.benchmark
                )));
            }
        }
        Ok(BenchmarkTable { benchmarks, scores })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_reader(File::open(path).map_err(|e| Error::io(path, e))?)
    }

    /// Benchmarks in first-appearance order.
    pub fn benchmarks(&self) -> &[(String, Category)] {
        &self.benchmarks
    }

    pub fn category(&self, benchmark: &str) -> Option<Category> {
        self.benchmarks
            .iter()
            .find(|(b, _)| b == benchmark)
            .map(|(_, c)| *c)
    }

    pub fn score(&self, setting: &str, benchmark: &str) -> Option<f64> {
        self.scores
            .get(&(setting.to_owned(), benchmark.to_owned()))
            .copied()
    }

    /// Scores of `benchmark` for every setting of `ac`, in `ac` order.
    pub fn column(&self, ac: &AcTable, benchmark: &str) -> Result<Vec<f64>> {
        if self.category(benchmark).is_none() {
            return Err(Error::domain(format!("unknown benchmark '{benchmark}'")));
        }
        ac.settings()
            .map(|s| {
                self.score(s, benchmark)
                    .ok_or_else(|| Error::domain(format!("missing score for ({s}, {benchmark})")))
            })
            .collect()
    }
}

/// Tables transcribed from the published 15-setting results.
pub mod fixtures {
    use super::*;

    pub const AC_CSV: &str = include_str!("../fixtures/ac.csv");
    pub const BENCH_CSV: &str = include_str!("../fixtures/bench.csv");

    pub fn ac_table() -> AcTable {
        AcTable::from_reader(AC_CSV.as_bytes()).expect("bundled AC table is valid")
    }

    pub fn benchmark_table() -> BenchmarkTable {
        BenchmarkTable::from_reader(BENCH_CSV.as_bytes()).expect("bundled benchmark table is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_complete() {
        let ac = fixtures::ac_table();
        let bench = fixtures::benchmark_table();
        assert_eq!(ac.len(), 15);
        assert_eq!(bench.benchmarks().len(), 8);
        for (b, _) in bench.benchmarks() {
            assert_eq!(bench.column(&ac, b).unwrap().len(), 15);
        }
        assert_eq!(ac.get("CLIP@336").unwrap().c, 15.66);
        assert_eq!(bench.score("SD3", "MME"), Some(843.43));
        assert_eq!(bench.category("TextVQA"), Some(Category::Ocr));
    }

    #[test]
    fn rejects_duplicates_and_missing() {
        let dup = "setting,a,c\nx,1,2\nx,1,3\n";
        assert!(AcTable::from_reader(dup.as_bytes()).is_err());
        let ac = AcTable::from_reader("setting,a,c\nx,1,2\ny,1,3\n".as_bytes()).unwrap();
        let bench = BenchmarkTable::from_reader(
            "setting,benchmark,category,score\nx,B,vision,1.0\n".as_bytes(),
        )
        .unwrap();
        assert!(bench.column(&ac, "B").is_err());
        assert!(bench.column(&ac, "nope").is_err());
    }
}
