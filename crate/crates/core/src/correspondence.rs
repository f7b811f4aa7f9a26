//! Correspondence (C) score: keypoint transfer by feature-similarity argmax,
//! scored with PCK against a bounding-box-relative threshold.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{l2_normalize, FeatureMap};

pub const DEFAULT_ALPHA: f64 = 0.10;

pub type Point = [f64; 2];

/// A source/target image pair with matched keypoints. Points are `[x, y]` in
/// pixels; sizes are `[height, width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub src_image_id: String,
    pub trg_image_id: String,
    pub src_size: [u32; 2],
    pub trg_size: [u32; 2],
    /// `(source point, target point)` per keypoint.
    pub keypoints: Vec<(Point, Point)>,
    /// `[x_min, y_min, x_max, y_max]`
    pub trg_bbox: [f64; 4],
    pub category: String,
}

impl PairAnnotation {
    pub fn id(&self) -> String {
        format!("{}:{}", self.src_image_id, self.trg_image_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.keypoints.is_empty() {
            return Err(Error::domain(format!(
                "pair {} has no keypoints",
                self.id()
            )));
        }
        let [x0, y0, x1, y1] = self.trg_bbox;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::domain(format!(
                "pair {} has a degenerate bbox {:?}",
                self.id(),
                self.trg_bbox
            )));
        }
        for (s, t) in &self.keypoints {
            check_in_image(*s, self.src_size)?;
            check_in_image(*t, self.trg_size)?;
        }
        Ok(())
    }
}

fn check_in_image(pt: Point, size: [u32; 2]) -> Result<()> {
    let [x, y] = pt;
    let [h, w] = size;
    let ok =
        x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= w as f64 && y <= h as f64;
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "point ({x}, {y}) outside image of size {h}x{w}"
        )))
    }
}

/// One line of a pairs JSONL file: the annotation plus the feature files for
/// both images, relative to the feature directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    #[serde(flatten)]
    pub annotation: PairAnnotation,
    pub ftf_src: PathBuf,
    pub ftf_trg: PathBuf,
}

pub fn read_pairs_jsonl(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(line).map_err(|e| {
            Error::format("pairs", format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        rec.annotation.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// l2-normalize both maps, then dot product.
    #[default]
    Cosine,
    /// Raw dot product of unnormalized features.
    RawDot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum correct and total keypoints over all pairs, then divide.
    #[default]
    Global,
    /// Score each category globally, then average over categories.
    PerCategory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceConfig {
    pub alpha: f64,
    pub similarity: Similarity,
    pub aggregation: Aggregation,
}

impl Default for CorrespondenceConfig {
    fn default() -> Self {
        CorrespondenceConfig {
            alpha: DEFAULT_ALPHA,
            similarity: Similarity::Cosine,
            aggregation: Aggregation::Global,
        }
    }
}

/// Row-major `l_src x l_trg` similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn check_channels(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.channels() != b.channels() {
        return Err(Error::Dimension(format!(
            "channel mismatch: source has {}, target has {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn similarity_matrix_with(
    f_src: &FeatureMap,
    f_trg: &FeatureMap,
    mode: Similarity,
) -> Result<SimilarityMatrix> {
    check_channels(f_src, f_trg)?;
    let (s, t) = match mode {
        Similarity::Cosine => (l2_normalize(f_src), l2_normalize(f_trg)),
        Similarity::RawDot => (f_src.clone(), f_trg.clone()),
    };
    let values = s
        .patch_vectors()
        .flat_map(|p| t.patch_vectors().map(move |q| dot(p, q)))
        .collect();
    Ok(SimilarityMatrix {
        rows: s.layout().patches(),
        cols: t.layout().patches(),
        values,
    })
}

/// Cosine similarity between every source patch and every target patch.
pub fn similarity_matrix(f_src: &FeatureMap, f_trg: &FeatureMap) -> Result<SimilarityMatrix> {
    similarity_matrix_with(f_src, f_trg, Similarity::Cosine)
}

/// Maps a pixel `[x, y]` to the `(row, col)` of the patch containing it.
pub fn keypoint_to_patch(
    pt: Point,
    image_size: [u32; 2],
    grid: (usize, usize),
) -> Result<(usize, usize)> {
    check_in_image(pt, image_size)?;
    let [h_px, w_px] = image_size;
    let (h_p, w_p) = grid;
    let row = ((pt[1] * h_p as f64 / h_px as f64).floor() as usize).min(h_p - 1);
    let col = ((pt[0] * w_p as f64 / w_px as f64).floor() as usize).min(w_p - 1);
    Ok((row, col))
}

/// Pixel `[x, y]` at the center of patch `(row, col)`.
pub fn patch_to_pixel(
    cell: (usize, usize),
    image_size: [u32; 2],
    grid: (usize, usize),
) -> Result<Point> {
    let (row, col) = cell;
    let (h_p, w_p) = grid;
    if row >= h_p || col >= w_p {
        return Err(Error::domain(format!(
            "cell ({row}, {col}) outside {h_p}x{w_p} grid"
        )));
    }
    let [h_px, w_px] = image_size;
    Ok([
        (col as f64 + 0.5) * w_px as f64 / w_p as f64,
        (row as f64 + 0.5) * h_px as f64 / h_p as f64,
    ])
}

/// Index of the maximum; ties go to the lowest index.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn transfer_keypoints_with(
    f_src: &FeatureMap,
    f_trg: &FeatureMap,
    ann: &PairAnnotation,
    mode: Similarity,
) -> Result<Vec<Point>> {
    check_channels(f_src, f_trg)?;
    let src = f_src.as_square_grid()?;
    let trg = f_trg.as_square_grid()?;
    let (src, trg) = match mode {
        Similarity::Cosine => (l2_normalize(&src), l2_normalize(&trg)),
        Similarity::RawDot => (src, trg),
    };
    let src_grid = src.grid_dims().expect("grid");
    let trg_grid = trg.grid_dims().expect("grid");

    ann.keypoints
        .iter()
        .map(|(pt, _)| {
            let (r, c) = keypoint_to_patch(*pt, ann.src_size, src_grid)?;
            let query = src.patch(r * src_grid.1 + c);
            let best = argmax(trg.patch_vectors().map(|q| dot(query, q)));
            patch_to_pixel(
                (best / trg_grid.1, best % trg_grid.1),
                ann.trg_size,
                trg_grid,
            )
        })
        .collect()
}

/// Predicted target location for every source keypoint of `ann`.
pub fn transfer_keypoints(
    f_src: &FeatureMap,
    f_trg: &FeatureMap,
    ann: &PairAnnotation,
) -> Result<Vec<Point>> {
    transfer_keypoints_with(f_src, f_trg, ann, Similarity::Cosine)
}

/// PCK threshold: `alpha * max(bbox width, bbox height)`.
pub fn pck_threshold(ann: &PairAnnotation, alpha: f64) -> f64 {
    let [x0, y0, x1, y1] = ann.trg_bbox;
    alpha * (x1 - x0).max(y1 - y0)
}

/// `(correct, total)` keypoints for one pair.
pub fn pck(pred: &[Point], ann: &PairAnnotation, alpha: f64) -> Result<(usize, usize)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!(
            "alpha must be in (0, 1], got {alpha}"
        )));
    }
    if pred.len() != ann.keypoints.len() {
        return Err(Error::domain(format!(
            "{} predictions for {} keypoints",
            pred.len(),
            ann.keypoints.len()
        )));
    }
    let t = pck_threshold(ann, alpha);
    let correct = pred
        .iter()
        .zip(&ann.keypoints)
        .filter(|(p, (_, gt))| (p[0] - gt[0]).hypot(p[1] - gt[1]) < t)
        .count();
    Ok((correct, pred.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairPck {
    pub pair: String,
    pub category: String,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PckResult {
    pub correct: usize,
    pub total: usize,
    pub per_pair: Vec<PairPck>,
}

impl PckResult {
    pub fn percentage(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }

    /// Mean over categories of each category's global PCK.
    pub fn per_category_percentage(&self) -> f64 {
        let mut by_cat: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for p in &self.per_pair {
            let e = by_cat.entry(&p.category).or_default();
            e.0 += p.correct;
            e.1 += p.total;
        }
        let n = by_cat.len() as f64;
        by_cat
            .values()
            .map(|&(c, t)| 100.0 * c as f64 / t as f64)
            .sum::<f64>()
            / n
    }
}

/// A pair with its source and target features.
pub type ScoredPair<'a> = (&'a PairAnnotation, &'a FeatureMap, &'a FeatureMap);

/// Runs transfer + PCK over all pairs, in parallel. Per-pair results keep the
/// input order.
pub fn evaluate_pairs(pairs: &[ScoredPair<'_>], cfg: &CorrespondenceConfig) -> Result<PckResult> {
    if pairs.is_empty() {
        return Err(Error::domain("no pairs to score"));
    }
    let per_pair = pairs
        .par_iter()
        .map(|(ann, fs, ft)| {
            let pred = transfer_keypoints_with(fs, ft, ann, cfg.similarity)?;
            let (correct, total) = pck(&pred, ann, cfg.alpha)?;
            Ok(PairPck {
                pair: ann.id(),
                category: ann.category.clone(),
                correct,
                total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PckResult {
        correct: per_pair.iter().map(|p| p.correct).sum(),
        total: per_pair.iter().map(|p| p.total).sum(),
        per_pair,
    })
}

/// C score as a percentage.
pub fn c_score(pairs: &[ScoredPair<'_>], cfg: &CorrespondenceConfig) -> Result<f64> {
    let res = evaluate_pairs(pairs, cfg)?;
    Ok(match cfg.aggregation {
        Aggregation::Global => res.percentage(),
        Aggregation::PerCategory => res.per_category_percentage(),
    })
}
