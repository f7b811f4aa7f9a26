//! Dense least squares through a complete orthogonal decomposition.
//!
//! `A P = Q [R11 R12; 0 0]` by Householder QR with column pivoting, then
//! `[R11 R12]^T = Z [L; 0]` by a second QR. The minimum-norm solution is
//! `x = P Z [L^{-T} (Q^T b)_1; 0]`. This gives the ordinary least-squares
//! solution for full column rank and the pseudoinverse solution otherwise.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }
}

/// Householder reflector `H = I - beta v v^T` with `H x = alpha e1`.
struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    fn new(x: &[f64]) -> (Reflector, f64) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (
                Reflector {
                    v: vec![0.0; x.len()],
                    beta: 0.0,
                },
                0.0,
            );
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        let beta = if vv == 0.0 { 0.0 } else { 2.0 / vv };
        (Reflector { v, beta }, alpha)
    }

    /// Applies `H` to `y[offset..offset + v.len()]`.
    fn apply(&self, y: &mut [f64], offset: usize) {
        if self.beta == 0.0 {
            return;
        }
        let seg = &mut y[offset..offset + self.v.len()];
        let s: f64 = self.v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
        let s = s * self.beta;
        for (yi, vi) in seg.iter_mut().zip(&self.v) {
            *yi -= s * vi;
        }
    }
}

/// Upper-trapezoidal factor of a column-pivoted QR with `Q^T b` applied.
struct PivotedQr {
    r: Matrix,
    perm: Vec<usize>,
    qtb: Vec<f64>,
    rank: usize,
}

fn pivoted_qr(a: &Matrix, b: &[f64], rcond: f64) -> PivotedQr {
    let (m, n) = (a.rows, a.cols);
    let mut r = a.clone();
    let mut qtb = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);

    for k in 0..steps {
        // Column with the largest remaining norm. Recomputed each step; the
        // matrices here are tiny.
        let mut best = (k, -1.0);
        for j in k..n {
            let norm: f64 = (k..m).map(|i| r.get(i, j).powi(2)).sum();
            if norm > best.1 {
                best = (j, norm);
            }
        }
        if best.0 != k {
            for i in 0..m {
                let tmp = r.get(i, k);
                r.set(i, k, r.get(i, best.0));
                r.set(i, best.0, tmp);
            }
            perm.swap(k, best.0);
        }

        let x: Vec<f64> = (k..m).map(|i| r.get(i, k)).collect();
        let (h, alpha) = Reflector::new(&x);
        r.set(k, k, alpha);
        for i in k + 1..m {
            r.set(i, k, 0.0);
        }
        let mut col = vec![0.0; m];
        for j in k + 1..n {
            for (i, c) in col.iter_mut().enumerate() {
                *c = r.get(i, j);
            }
            h.apply(&mut col, k);
            for (i, c) in col.iter().enumerate().skip(k) {
                r.set(i, j, *c);
            }
        }
        h.apply(&mut qtb, k);
    }

    let lead = if steps > 0 { r.get(0, 0).abs() } else { 0.0 };
    let tol = rcond * m.max(n) as f64 * lead;
    let rank = (0..steps)
        .take_while(|&k| lead > 0.0 && r.get(k, k).abs() > tol)
        .count();
    PivotedQr { r, perm, qtb, rank }
}

/// Relative tolerance on the pivoted diagonal used to decide numerical rank.
pub const DEFAULT_RCOND: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    pub rank: usize,
}

/// Minimum-norm least-squares solution of `a x ≈ b`.
pub fn lstsq(a: &Matrix, b: &[f64]) -> LstsqSolution {
    lstsq_with_rcond(a, b, DEFAULT_RCOND)
}

pub fn lstsq_with_rcond(a: &Matrix, b: &[f64], rcond: f64) -> LstsqSolution {
    assert_eq!(a.rows, b.len(), "row count must match rhs length");
    let n = a.cols;
    let qr = pivoted_qr(a, b, rcond);
    let r = qr.rank;
    if r == 0 {
        return LstsqSolution {
            x: vec![0.0; n],
            rank: 0,
        };
    }

    // M = [R11 R12]^T, n x r; factor M = Z [L; 0] with L upper triangular.
    let mut mt = Matrix::zeros(n, r);
    for i in 0..r {
        for j in i..n {
            mt.set(j, i, qr.r.get(i, j));
        }
    }
    let mut reflectors = Vec::with_capacity(r);
    for k in 0..r {
        let x: Vec<f64> = (k..n).map(|i| mt.get(i, k)).collect();
        let (h, alpha) = Reflector::new(&x);
        mt.set(k, k, alpha);
        for i in k + 1..n {
            mt.set(i, k, 0.0);
        }
        let mut col = vec![0.0; n];
        for j in k + 1..r {
            for (i, c) in col.iter_mut().enumerate() {
                *c = mt.get(i, j);
            }
            h.apply(&mut col, k);
            for (i, c) in col.iter().enumerate().skip(k) {
                mt.set(i, j, *c);
            }
        }
        reflectors.push(h);
    }

    // L^T y = (Q^T b)[..r]; L^T is lower triangular.
    let mut y = vec![0.0; n];
    for i in 0..r {
        let s: f64 = (0..i).map(|j| mt.get(j, i) * y[j]).sum();
        y[i] = (qr.qtb[i] - s) / mt.get(i, i);
    }
    // Z = H_0 H_1 ... H_{r-1}
    for (k, h) in reflectors.iter().enumerate().rev() {
        h.apply(&mut y, k);
    }
    let mut x = vec![0.0; n];
    for (j, &p) in qr.perm.iter().enumerate() {
        x[p] = y[j];
    }
    LstsqSolution { x, rank: r }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_system() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let sol = lstsq(&a, &[3.0, 5.0]);
        assert_eq!(sol.rank, 2);
        assert!((sol.x[0] - 0.8).abs() < 1e-12);
        assert!((sol.x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_min_norm() {
        // x + y = 2: min-norm solution is (1, 1)
        let a = Matrix::from_rows(&[[1.0, 1.0]]);
        let sol = lstsq(&a, &[2.0]);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_columns() {
        // duplicated column: min-norm splits the weight evenly
        let a = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let sol = lstsq(&a, &[2.0, 4.0, 6.0]);
        assert_eq!(sol.rank, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let a = Matrix::zeros(3, 2);
        assert_eq!(lstsq(&a, &[1.0, 2.0, 3.0]).x, vec![0.0, 0.0]);
    }

    #[test]
    fn overdetermined_line() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]);
        let sol = lstsq(&a, &[1.0, 2.0, 4.0]);
        // normal equations by hand: intercept 5/6, slope 3/2
        assert!((sol.x[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((sol.x[1] - 1.5).abs() < 1e-12);
    }
}
