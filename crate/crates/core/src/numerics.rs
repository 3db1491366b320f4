//! Dense linear algebra, stable scalar functions and the seeded generator.
//!
//! Everything here is `f64`, row-major and single-threaded so that results are
//! bitwise reproducible on a given platform.

use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance on `|M[i][j] - M[j][i]|` accepted by [`cholesky_spd`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Row-major dense matrix of finite `f64` entries.
///
/// Serialized as a nested array of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "matrix entry {pos} is not finite ({})",
                data[pos]
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {bad} has {} entries, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Fills a matrix with independent draws of `scale * N(0, 1)`, row-major.
    pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut SeededGenerator) -> Self {
        let data = (0..rows * cols).map(|_| scale * rng.gaussian()).collect();
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ * y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "vector of length {} against transposed {}x{} matrix",
                y.len(),
                self.rows,
                self.cols
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += m * yi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Adds `alpha * v vᵀ` to a square matrix.
    pub fn add_outer(&mut self, alpha: f64, v: &[f64]) -> Result<()> {
        if self.rows != self.cols || v.len() != self.rows {
            return Err(Error::Shape(format!(
                "outer product of length {} into {}x{}",
                v.len(),
                self.rows,
                self.cols
            )));
        }
        let n = self.cols;
        for (i, &vi) in v.iter().enumerate() {
            let s = alpha * vi;
            if s == 0.0 {
                continue;
            }
            let dst = &mut self.data[i * n..(i + 1) * n];
            for (d, &vj) in dst.iter_mut().zip(v) {
                *d += s * vj;
            }
        }
        Ok(())
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F / max(‖other‖_F, tiny)`.
    pub fn relative_frobenius_distance(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for DenseMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        DenseMatrix::from_rows(&rows)
    }
}

impl From<DenseMatrix> for Vec<Vec<f64>> {
    fn from(m: DenseMatrix) -> Self {
        m.to_rows()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Neumaier-compensated sum. Result does not depend on how the terms were
/// produced, only on their order, and its error does not grow with length.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Pairwise (cascade) summation. Used where per-item terms may be computed
/// in parallel and must reduce to a schedule-independent total.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn check_finite(z: f64, what: &str) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} requires a finite input, got {z}")))
    }
}

/// `log σ(z) = −log(1 + e^{−z})`, overflow-free over the whole finite range.
pub fn log_sigmoid(z: f64) -> Result<f64> {
    check_finite(z, "log_sigmoid")?;
    Ok(log_sigmoid_unchecked(z))
}

pub(crate) fn log_sigmoid_unchecked(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> Result<f64> {
    check_finite(z, "sigmoid")?;
    Ok(sigmoid_unchecked(z))
}

pub(crate) fn sigmoid_unchecked(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
}

impl CholeskyFactor {
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        let n = m.rows();
        if n != m.cols() {
            return Err(Error::Shape(format!(
                "cholesky of a non-square {}x{} matrix",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(Error::Domain("cholesky input has non-finite entries".into()));
        }
        let asym = m.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::Domain(format!(
                "cholesky input is not symmetric (max |M - Mᵀ| = {asym:e})"
            )));
        }

        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let lj = &l.data[j * n..j * n + j];
            let diag = m[(j, j)] - dot(lj, lj);
            if diag.is_nan() || diag <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                    diagnostics: String::new(),
                });
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let s = m[(i, j)] - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
                l[(i, j)] = s / d;
            }
        }
        Ok(CholeskyFactor { lower: l })
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn into_lower(self) -> DenseMatrix {
        self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L y = b`.
    pub fn forward_substitute(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.lower.row(i)[..i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.lower[(i, i)];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub fn backward_substitute(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let s = x[i] - (i + 1..n).map(|k| self.lower[(k, i)] * x[k]).sum::<f64>();
            x[i] = s / self.lower[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::Shape(format!(
                "right-hand side of length {} for a {}-dimensional system",
                b.len(),
                self.dim()
            )));
        }
        Ok(self.backward_substitute(&self.forward_substitute(b)))
    }

    /// `M⁻¹`, symmetrized.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        // Columns of L⁻¹, then M⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.forward_substitute(&e);
            for i in 0..n {
                linv[(i, j)] = col[i];
            }
        }
        let mut inv = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                // (L⁻ᵀ L⁻¹)_{ij} = Σ_k L⁻¹_{ki} L⁻¹_{kj}, with L⁻¹ lower triangular.
                let s: f64 = (i..n).map(|k| linv[(k, i)] * linv[(k, j)]).sum();
                inv[(i, j)] = s;
                inv[(j, i)] = s;
            }
        }
        inv
    }

    /// `‖Lᵀ v‖²`, i.e. `vᵀ M v`, which is non-negative by construction.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for j in 0..n {
            let s: f64 = (j..n).map(|i| self.lower[(i, j)] * v[i]).sum();
            total += s * s;
        }
        total
    }

    pub fn log_determinant(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.lower[(i, i)].ln()).sum::<f64>()
    }
}

/// Lower-triangular `L` with `L Lᵀ = M` for a symmetric positive definite `M`.
pub fn cholesky_spd(m: &DenseMatrix) -> Result<DenseMatrix> {
    CholeskyFactor::new(m).map(CholeskyFactor::into_lower)
}

/// Solves `M x = b` for symmetric positive definite `M`.
pub fn solve_spd(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    CholeskyFactor::new(m)?.solve(b)
}

/// Deterministic random stream: ChaCha8 keyed by a 64-bit seed.
///
/// The 64-bit seed is expanded with `rand_chacha`'s `seed_from_u64`
/// (a PCG32-based key schedule). Independent sub-streams are derived with
/// [`SeededGenerator::fork`], which selects a ChaCha stream id instead of
/// drawing from the parent, so adding a consumer never perturbs the others.
/// Gaussian draws use `rand_distr::StandardNormal` (ziggurat).
#[derive(Debug, Clone)]
pub struct SeededGenerator {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededGenerator {
    pub fn new(seed: u64) -> Self {
        SeededGenerator {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A generator on stream `stream` of this generator's key.
    pub fn fork(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        SeededGenerator { seed: self.seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn gaussian_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.gaussian()).collect()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = SeededGenerator::new(seed);
        let g = DenseMatrix::gaussian(n, n, 1.0, &mut rng);
        let mut m = g.transpose().matmul(&g).unwrap();
        m.add_diagonal(1.0);
        m
    }

    fn reconstruct(l: &DenseMatrix) -> DenseMatrix {
        l.matmul(&l.transpose()).unwrap()
    }

    #[test]
    fn log_sigmoid_reference_points() {
        assert!((log_sigmoid(0.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-15);

        let v = log_sigmoid(50.0).unwrap();
        assert!(v < 0.0 && v > -2e-22);
        assert_eq!(v, -(-50.0_f64).exp().ln_1p());

        // −z − log1p(e^{z}) at z = −800 is −800 − log1p(e^{−800}) = −800 exactly in f64.
        let v = log_sigmoid(-800.0).unwrap();
        assert!(((v + 800.0) / 800.0).abs() < 1e-12);
        assert!(log_sigmoid(1e4).unwrap() <= 0.0);
        assert!(log_sigmoid(-1e4).unwrap().is_finite());
    }

    #[test]
    fn log_sigmoid_rejects_non_finite() {
        assert!(matches!(log_sigmoid(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(log_sigmoid(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn cholesky_closed_forms() {
        let l = cholesky_spd(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(l, DenseMatrix::identity(3));

        let m = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky_spd(&m).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(l[(1, 0)], 1.0);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_random_spd_reconstructs() {
        let m = random_spd(8, 11);
        let l = cholesky_spd(&m).unwrap();
        assert!(reconstruct(&l).relative_frobenius_distance(&m) < 1e-10);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 1.0]]).unwrap();
        match cholesky_spd(&m) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("expected a pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let m = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(cholesky_spd(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn solve_spd_cases() {
        let b = vec![1.0, -2.0, 3.5];
        assert_eq!(solve_spd(&DenseMatrix::identity(3), &b).unwrap(), b);

        let mut two = DenseMatrix::identity(3);
        two.add_diagonal(1.0);
        let x = solve_spd(&two, &b).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi / 2.0).abs() < 1e-15);
        }

        let m = random_spd(8, 5);
        let b = SeededGenerator::new(6).gaussian_vec(8);
        let x = solve_spd(&m, &b).unwrap();
        let r = m.matvec(&x).unwrap();
        let resid = r.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(resid / scale < 1e-8);
    }

    #[test]
    fn inverse_and_quadratic_form_agree() {
        let m = random_spd(6, 21);
        let f = CholeskyFactor::new(&m).unwrap();
        let inv = f.inverse();
        let prod = m.matmul(&inv).unwrap();
        assert!(prod.relative_frobenius_distance(&DenseMatrix::identity(6)) < 1e-10);

        let v = SeededGenerator::new(3).gaussian_vec(6);
        let mv = m.matvec(&v).unwrap();
        assert!((f.quadratic_form(&v) - dot(&v, &mv)).abs() < 1e-9 * dot(&v, &mv).abs());
    }

    #[test]
    fn generator_is_reproducible_and_forks_are_independent() {
        let a: Vec<f64> = {
            let mut g = SeededGenerator::new(42);
            (0..16).map(|_| g.gaussian()).collect()
        };
        let b: Vec<f64> = {
            let mut g = SeededGenerator::new(42);
            (0..16).map(|_| g.gaussian()).collect()
        };
        assert_eq!(a, b);

        let root = SeededGenerator::new(42);
        let mut f1 = root.fork(1);
        let mut f1_again = root.fork(1);
        let mut f2 = root.fork(2);
        let x = f1.next_u64();
        assert_eq!(x, f1_again.next_u64());
        assert_ne!(x, f2.next_u64());
    }

    #[test]
    fn summation_helpers() {
        let vals = vec![0.1; 1000];
        assert!((compensated_sum(vals.iter().copied()) - 100.0).abs() < 1e-12);
        assert!((pairwise_sum(&vals) - 100.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn log_sigmoid_difference_identity(z in -30.0f64..30.0) {
            let d = log_sigmoid(z).unwrap() - log_sigmoid(-z).unwrap();
            prop_assert!((d - z).abs() < 1e-10);
        }

        #[test]
        fn cholesky_round_trip(n in 1usize..12, seed in any::<u64>()) {
            let m = random_spd(n, seed);
            let l = cholesky_spd(&m).unwrap();
            prop_assert!(reconstruct(&l).relative_frobenius_distance(&m) < 1e-8);
            for i in 0..n {
                for j in i + 1..n {
                    prop_assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }
}
