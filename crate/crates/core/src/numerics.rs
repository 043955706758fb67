//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here is row-major and dense. Composite spaces follow one index
//! convention throughout the crate: the factor listed first is the most
//! significant digit of the joint index.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CtcError, Result};
use crate::quantum::DensityMatrix;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Off-diagonal mass below which the Jacobi sweep stops.
pub const JACOBI_TOL: f64 = 1e-13;
/// Largest eigenvalue excursion outside `[0, 1]` that is silently clamped.
pub const CLAMP_TOL: f64 = 1e-8;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CtcError::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(CtcError::DimensionMismatch(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CtcError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// Builds a matrix from real row slices; convenient in tests and presets.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        Self::from_fn(rows.len(), cols, |r, c| C64::new(rows[r][c], 0.0))
    }

    /// `|v><v|` for a column vector `v`.
    pub fn outer(v: &[C64]) -> Self {
        Self::from_fn(v.len(), v.len(), |r, c| v[r] * v[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `(m + m^dag) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| {
            (self[(r, c)] + self[(c, r)].conj()) * 0.5
        })
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(CtcError::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (c, b) in row.iter().enumerate() {
                    out.data[r * rhs.cols + c] += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `u * self * u^dag`.
    pub fn conjugate_by(&self, u: &Self) -> Result<Self> {
        u.matmul(self)?.matmul(&u.dagger())
    }

    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(CtcError::DimensionMismatch(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| (0..self.cols).map(|c| self[(r, c)] * v[c]).sum())
            .collect())
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(CtcError::DimensionMismatch(format!(
                "cannot {op} {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "subtract")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

// Operator forms panic on shape mismatch; the `try_*` methods are the checked path.
impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: Self) -> ComplexMatrix {
        self.try_add(rhs).expect("shape mismatch in matrix addition")
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: Self) -> ComplexMatrix {
        self.try_sub(rhs).expect("shape mismatch in matrix subtraction")
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: Self) -> ComplexMatrix {
        self.matmul(rhs).expect("shape mismatch in matrix product")
    }
}

/// Kronecker product, `(a ⊗ b)[i*rb + k, j*cb + l] = a[i, j] * b[k, l]`.
pub fn tensor_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (rb, cb) = (b.rows, b.cols);
    ComplexMatrix::from_fn(a.rows * rb, a.cols * cb, |r, c| {
        a[(r / rb, c / cb)] * b[(r % rb, c % cb)]
    })
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x * y))
        .collect()
}

/// Which factor of a bipartite operator survives the partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    A,
    B,
}

pub fn partial_trace(m: &ComplexMatrix, (da, db): (usize, usize), keep: Keep) -> Result<ComplexMatrix> {
    if !m.is_square() || m.rows != da * db {
        return Err(CtcError::DimensionMismatch(format!(
            "partial trace over ({da}, {db}) of a {}x{} matrix",
            m.rows, m.cols
        )));
    }
    Ok(match keep {
        Keep::A => ComplexMatrix::from_fn(da, da, |i, j| {
            (0..db).map(|k| m[(i * db + k, j * db + k)]).sum()
        }),
        Keep::B => ComplexMatrix::from_fn(db, db, |k, l| {
            (0..da).map(|i| m[(i * db + k, i * db + l)]).sum()
        }),
    })
}

fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = index % d;
        index /= d;
    }
    out
}

fn compose(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

fn check_factors(m: &ComplexMatrix, dims: &[usize]) -> Result<()> {
    let total: usize = dims.iter().product();
    if dims.is_empty() || !m.is_square() || m.rows != total {
        return Err(CtcError::DimensionMismatch(format!(
            "factor dimensions {dims:?} do not match a {}x{} matrix",
            m.rows, m.cols
        )));
    }
    Ok(())
}

/// Partial trace over a multi-factor space, keeping the listed factors in
/// their original order.
pub fn partial_trace_multi(m: &ComplexMatrix, dims: &[usize], keep: &[usize]) -> Result<ComplexMatrix> {
    check_factors(m, dims)?;
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.iter().any(|&k| k >= dims.len()) {
        return Err(CtcError::DimensionMismatch(format!(
            "kept factors {keep:?} out of range for {} factors",
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|f| !keep.contains(f)).collect();
    let kept_dims: Vec<usize> = keep.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let kept_total: usize = kept_dims.iter().product();
    // Split every joint index into (kept index, traced index) once.
    let split: Vec<(usize, usize)> = (0..m.rows)
        .map(|i| {
            let d = digits(i, dims);
            let k: Vec<usize> = keep.iter().map(|&f| d[f]).collect();
            let t: Vec<usize> = traced.iter().map(|&f| d[f]).collect();
            (compose(&k, &kept_dims), compose(&t, &traced_dims))
        })
        .collect();
    let mut out = ComplexMatrix::zeros(kept_total, kept_total);
    for (r, &(rk, rt)) in split.iter().enumerate() {
        for (c, &(ck, ct)) in split.iter().enumerate() {
            if rt == ct {
                out[(rk, ck)] += m[(r, c)];
            }
        }
    }
    Ok(out)
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// `U ρ U†` with `U` acting on factors `(first, second)` of a multi-factor
/// space (`first` is the operator's most significant slot), without forming
/// the embedded operator.
pub fn conjugate_two_site(
    rho: &ComplexMatrix,
    u: &ComplexMatrix,
    dims: &[usize],
    first: usize,
    second: usize,
) -> Result<ComplexMatrix> {
    check_factors(rho, dims)?;
    if first == second || first >= dims.len() || second >= dims.len() {
        return Err(CtcError::DimensionMismatch(format!(
            "invalid factor pair ({first}, {second}) for {} factors",
            dims.len()
        )));
    }
    let (d1, d2) = (dims[first], dims[second]);
    if !u.is_square() || u.rows != d1 * d2 {
        return Err(CtcError::DimensionMismatch(format!(
            "{}x{} operator on factors of dimension {d1} and {d2}",
            u.rows, u.cols
        )));
    }
    let st = strides(dims);
    let (s1, s2) = (st[first], st[second]);
    let n = rho.rows;
    // (local index, base index with both digits cleared) for every joint index.
    let local: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let a = (i / s1) % d1;
            let b = (i / s2) % d2;
            (a * d2 + b, i - a * s1 - b * s2)
        })
        .collect();
    let offset = |l: usize| (l / d2) * s1 + (l % d2) * s2;
    let dl = d1 * d2;

    let mut tmp = ComplexMatrix::zeros(n, n);
    for (r, &(rl, rbase)) in local.iter().enumerate() {
        for l in 0..dl {
            let amp = u[(rl, l)];
            if amp == ZERO {
                continue;
            }
            let src = rbase + offset(l);
            let row = &rho.data[src * n..(src + 1) * n];
            let dst = &mut tmp.data[r * n..(r + 1) * n];
            for (o, x) in dst.iter_mut().zip(row) {
                *o += amp * x;
            }
        }
    }
    let mut out = ComplexMatrix::zeros(n, n);
    for r in 0..n {
        let trow = &tmp.data[r * n..(r + 1) * n];
        for (c, &(cl, cbase)) in local.iter().enumerate() {
            let mut acc = ZERO;
            for l in 0..dl {
                let amp = u[(cl, l)];
                if amp != ZERO {
                    acc += trow[cbase + offset(l)] * amp.conj();
                }
            }
            out.data[r * n + c] = acc;
        }
    }
    Ok(out)
}

/// Lifts an operator on factors `(first, second)` of a multi-factor space to
/// the full space; `first` is the operator's most significant slot.
pub fn embed_two_site(u: &ComplexMatrix, dims: &[usize], first: usize, second: usize) -> Result<ComplexMatrix> {
    if first == second || first >= dims.len() || second >= dims.len() {
        return Err(CtcError::DimensionMismatch(format!(
            "invalid factor pair ({first}, {second}) for {} factors",
            dims.len()
        )));
    }
    let (d1, d2) = (dims[first], dims[second]);
    if !u.is_square() || u.rows != d1 * d2 {
        return Err(CtcError::DimensionMismatch(format!(
            "{}x{} operator on factors of dimension {d1} and {d2}",
            u.rows, u.cols
        )));
    }
    let total: usize = dims.iter().product();
    let mut out = ComplexMatrix::zeros(total, total);
    for c in 0..total {
        let cd = digits(c, dims);
        let local_c = cd[first] * d2 + cd[second];
        for local_r in 0..d1 * d2 {
            let amp = u[(local_r, local_c)];
            if amp == ZERO {
                continue;
            }
            let mut rd = cd.clone();
            rd[first] = local_r / d2;
            rd[second] = local_r % d2;
            out[(compose(&rd, dims), c)] += amp;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Real eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Unitary whose columns are the matching eigenvectors.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let lambda = ComplexMatrix::from_real_diag(&self.values);
        &(&self.vectors * &lambda) * &self.vectors.dagger()
    }
}

/// Cyclic complex Jacobi eigensolver. The input is symmetrized first.
pub fn eig_hermitian(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(CtcError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    if !m.is_finite() {
        return Err(CtcError::NonFinite);
    }
    let n = m.rows;
    let mut a = m.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm().max(1.0);

    let off = |a: &ComplexMatrix| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                if r != c {
                    s += a[(r, c)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..100 {
        if off(&a) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag < f64::MIN_POSITIVE {
                    continue;
                }
                // Phase-rotate q so the pivot is real, then apply a real rotation.
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Columns (p, q) of the 2x2 block G = diag(1, conj(phase)) * [[c, s], [-s, c]].
                let g_pp = C64::new(c, 0.0);
                let g_pq = C64::new(s, 0.0);
                let g_qp = phase.conj() * (-s);
                let g_qq = phase.conj() * c;

                // A <- A G
                for r in 0..n {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = arp * g_pp + arq * g_qp;
                    a[(r, q)] = arp * g_pq + arq * g_qq;
                }
                // A <- G^dag A
                for col in 0..n {
                    let apc = a[(p, col)];
                    let aqc = a[(q, col)];
                    a[(p, col)] = g_pp.conj() * apc + g_qp.conj() * aqc;
                    a[(q, col)] = g_pq.conj() * apc + g_qq.conj() * aqc;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp * g_pp + vrq * g_qp;
                    v[(r, q)] = vrp * g_pq + vrq * g_qq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues of a state clamped to `[0, 1]`; excursions beyond
/// [`CLAMP_TOL`] are reported as an invalid state.
pub fn state_spectrum(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let eig = eig_hermitian(m)?;
    eig.values
        .into_iter()
        .map(|l| {
            if !(-CLAMP_TOL..=1.0 + CLAMP_TOL).contains(&l) {
                Err(CtcError::InvalidState(format!(
                    "eigenvalue {l:e} outside [0, 1]"
                )))
            } else {
                Ok(l.clamp(0.0, 1.0))
            }
        })
        .collect()
}

pub fn entropy_from_spectrum(spectrum: &[f64]) -> f64 {
    spectrum
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| -l * l.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    let spectrum = state_spectrum(rho.matrix())?;
    let d = rho.dim() as f64;
    Ok(entropy_from_spectrum(&spectrum).min(d.log2()))
}

pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    trace_norm_distance(a.matrix(), b.matrix())
}

/// `(1/2) Σ |λ_i(a - b)|` for Hermitian `a`, `b`.
pub fn trace_norm_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<f64> {
    let diff = a.try_sub(b)?;
    let eig = eig_hermitian(&diff)?;
    Ok(0.5 * eig.values.iter().map(|l| l.abs()).sum::<f64>())
}

/// `S(A) + S(B) - S(AB)` in bits for a state on `(A, B)`.
pub fn mutual_information(rho: &DensityMatrix, dims: (usize, usize)) -> Result<f64> {
    let a = DensityMatrix::new(partial_trace(rho.matrix(), dims, Keep::A)?.hermitian_part())?;
    let b = DensityMatrix::new(partial_trace(rho.matrix(), dims, Keep::B)?.hermitian_part())?;
    Ok(von_neumann_entropy(&a)? + von_neumann_entropy(&b)? - von_neumann_entropy(rho)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct Seed(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Unitary,
    Density,
    Pure,
}

/// Seeded source of random matrices. Identical seeds give identical streams.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: Seed) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed.0),
        }
    }

    fn gaussian(&mut self) -> C64 {
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        C64::new(re, im)
    }

    pub fn uniform(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.rng)
    }

    /// Normalized complex Gaussian vector (Haar-distributed pure state).
    pub fn ket(&mut self, dim: usize) -> Vec<C64> {
        loop {
            let v: Vec<C64> = (0..dim).map(|_| self.gaussian()).collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|z| z / norm).collect();
            }
        }
    }

    /// Haar unitary: Gram-Schmidt on a complex Ginibre matrix. Gram-Schmidt
    /// leaves a positive real diagonal in R, which is the phase fixing the
    /// Haar measure requires.
    pub fn unitary(&mut self, dim: usize) -> ComplexMatrix {
        let mut cols: Vec<Vec<C64>> = Vec::with_capacity(dim);
        while cols.len() < dim {
            let mut v: Vec<C64> = (0..dim).map(|_| self.gaussian()).collect();
            // Two passes keep the columns orthonormal to ~1e-16.
            for _ in 0..2 {
                for u in &cols {
                    let overlap: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                    for (vi, ui) in v.iter_mut().zip(u) {
                        *vi -= overlap * ui;
                    }
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue;
            }
            cols.push(v.into_iter().map(|z| z / norm).collect());
        }
        ComplexMatrix::from_fn(dim, dim, |r, c| cols[c][r])
    }

    /// `A A^dag / Tr(A A^dag)` for a complex Gaussian `A`.
    pub fn density(&mut self, dim: usize) -> ComplexMatrix {
        let a = ComplexMatrix::from_fn(dim, dim, |_, _| self.gaussian());
        let aa = &a * &a.dagger();
        let tr = aa.trace().re;
        aa.scale_real(1.0 / tr).hermitian_part()
    }

    pub fn pure(&mut self, dim: usize) -> ComplexMatrix {
        ComplexMatrix::outer(&self.ket(dim))
    }

    pub fn sample(&mut self, kind: SampleKind, dim: usize) -> ComplexMatrix {
        match kind {
            SampleKind::Unitary => self.unitary(dim),
            SampleKind::Density => self.density(dim),
            SampleKind::Pure => self.pure(dim),
        }
    }
}

pub fn sample_random(seed: Seed, kind: SampleKind, dim: usize) -> Result<ComplexMatrix> {
    if dim < 2 {
        return Err(CtcError::InvalidParameter(format!(
            "sampling dimension must be at least 2, got {dim}"
        )));
    }
    Ok(Sampler::new(seed).sample(kind, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::DensityMatrix;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_kron_identity() {
        let i2 = ComplexMatrix::identity(2);
        assert_eq!(tensor_product(&i2, &i2), ComplexMatrix::identity(4));
    }

    #[test]
    fn basis_projector_kron() {
        let p0 = ComplexMatrix::from_real_diag(&[1.0, 0.0]);
        let p1 = ComplexMatrix::from_real_diag(&[0.0, 1.0]);
        assert_eq!(
            tensor_product(&p0, &p1),
            ComplexMatrix::from_real_diag(&[0.0, 1.0, 0.0, 0.0])
        );
    }

    #[test]
    fn random_kron_matches_index_formula() {
        let mut s = Sampler::new(Seed(7));
        let a = s.unitary(2);
        let b = s.density(2);
        let k = tensor_product(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(2 * i + p, 2 * j + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn partial_trace_of_product_and_bell() {
        let p0 = ComplexMatrix::from_real_diag(&[1.0, 0.0]);
        let mixed = ComplexMatrix::from_real_diag(&[0.5, 0.5]);
        let prod = tensor_product(&p0, &mixed);
        assert!(partial_trace(&prod, (2, 2), Keep::A).unwrap().max_abs_diff(&p0) < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = ComplexMatrix::outer(&[c(s, 0.0), ZERO, ZERO, c(s, 0.0)]);
        for keep in [Keep::A, Keep::B] {
            let red = partial_trace(&bell, (2, 2), keep).unwrap();
            assert!(red.max_abs_diff(&mixed) < 1e-15);
        }
    }

    #[test]
    fn partial_trace_matches_double_sum() {
        let mut s = Sampler::new(Seed(11));
        let g = ComplexMatrix::from_fn(4, 4, |_, _| s.gaussian());
        let h = g.hermitian_part();
        let a = partial_trace(&h, (2, 2), Keep::A).unwrap();
        let b = partial_trace(&h, (2, 2), Keep::B).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut sa = ZERO;
                let mut sb = ZERO;
                for k in 0..2 {
                    sa += h[(i * 2 + k, j * 2 + k)];
                    sb += h[(k * 2 + i, k * 2 + j)];
                }
                assert!((a[(i, j)] - sa).norm() < 1e-14);
                assert!((b[(i, j)] - sb).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let m = ComplexMatrix::identity(4);
        assert!(partial_trace(&m, (2, 3), Keep::A).is_err());
    }

    #[test]
    fn multi_trace_agrees_with_bipartite() {
        let mut s = Sampler::new(Seed(3));
        let m = s.density(8);
        let ab = partial_trace_multi(&m, &[2, 2, 2], &[0, 1]).unwrap();
        let direct = partial_trace(&m, (4, 2), Keep::A).unwrap();
        assert!(ab.max_abs_diff(&direct) < 1e-15);
        let c_only = partial_trace_multi(&m, &[2, 2, 2], &[2]).unwrap();
        let direct = partial_trace(&m, (4, 2), Keep::B).unwrap();
        assert!(c_only.max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn embed_adjacent_pair_is_kron_with_identity() {
        let mut s = Sampler::new(Seed(5));
        let u = s.unitary(4);
        let full = embed_two_site(&u, &[2, 2, 2], 0, 1).unwrap();
        let expect = tensor_product(&u, &ComplexMatrix::identity(2));
        assert!(full.max_abs_diff(&expect) < 1e-15);
        let full = embed_two_site(&u, &[2, 2, 2], 1, 2).unwrap();
        let expect = tensor_product(&ComplexMatrix::identity(2), &u);
        assert!(full.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn direct_conjugation_matches_embedding() {
        let mut s = Sampler::new(Seed(21));
        let dims = [2, 3, 2, 2];
        let rho = s.density(24);
        for (i, j) in [(0, 1), (2, 0), (1, 3), (3, 2)] {
            let u = s.unitary(dims[i] * dims[j]);
            let full = embed_two_site(&u, &dims, i, j).unwrap();
            let expect = rho.conjugate_by(&full).unwrap();
            let got = conjugate_two_site(&rho, &u, &dims, i, j).unwrap();
            assert!(got.max_abs_diff(&expect) < 1e-14, "pair ({i}, {j})");
        }
    }

    #[test]
    fn eig_known_spectra() {
        let d = eig_hermitian(&ComplexMatrix::from_real_diag(&[0.25, 0.75])).unwrap();
        assert_eq!(d.values, vec![0.75, 0.25]);
        let x = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let e = eig_hermitian(&x).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15);
        assert!((e.values[1] + 1.0).abs() < 1e-15);
        assert!(e.reconstruct().max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn eig_rejects_rectangular() {
        assert!(matches!(
            eig_hermitian(&ComplexMatrix::zeros(2, 3)),
            Err(CtcError::NotSquare { .. })
        ));
    }

    #[test]
    fn entropy_examples() {
        let pure = DensityMatrix::new(Sampler::new(Seed(1)).pure(3)).unwrap();
        assert!(von_neumann_entropy(&pure).unwrap().abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2);
        assert!((von_neumann_entropy(&mixed).unwrap() - 1.0).abs() < 1e-15);
        let d = DensityMatrix::new(ComplexMatrix::from_real_diag(&[0.75, 0.25])).unwrap();
        // h(1/4) = 2 - (3/4) log2 3
        let expect = 2.0 - 0.75 * 3f64.log2();
        assert!((von_neumann_entropy(&d).unwrap() - expect).abs() < 1e-14);
        assert!((expect - 0.811_278_124_459_132_8).abs() < 1e-15);
    }

    #[test]
    fn trace_distance_examples() {
        let zero = DensityMatrix::new(ComplexMatrix::from_real_diag(&[1.0, 0.0])).unwrap();
        let one = DensityMatrix::new(ComplexMatrix::from_real_diag(&[0.0, 1.0])).unwrap();
        let plus = DensityMatrix::new(ComplexMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        assert_eq!(trace_distance(&zero, &zero).unwrap(), 0.0);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-15);
        // |0><0| - |+><+| = [[1/2, -1/2], [-1/2, -1/2]] has eigenvalues ±1/√2.
        let expect = std::f64::consts::FRAC_1_SQRT_2;
        assert!((trace_distance(&zero, &plus).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_unitary() {
        let a = sample_random(Seed(42), SampleKind::Unitary, 4).unwrap();
        let b = sample_random(Seed(42), SampleKind::Unitary, 4).unwrap();
        assert_eq!(a, b);
        let uu = &a * &a.dagger();
        assert!(uu.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-12);
        assert!(sample_random(Seed(0), SampleKind::Density, 1).is_err());
    }

    #[test]
    fn haar_first_moment() {
        let mut s = Sampler::new(Seed(2024));
        let n = 10_000;
        let mean = (0..n).map(|_| s.unitary(2)[(0, 0)].norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn sampled_density_is_valid() {
        let mut s = Sampler::new(Seed(9));
        for d in 2..6 {
            DensityMatrix::new(s.density(d)).unwrap();
            DensityMatrix::new(s.pure(d)).unwrap();
        }
    }
}
