//! Univariate polynomials in `q_y`, polynomial matrices, determinant
//! expansion and real-root extraction.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use thiserror::Error;

/// Real roots are searched in `[-ROOT_BOUND, ROOT_BOUND]`.
pub const ROOT_BOUND: f64 = 1e4;
/// Relative remainder above which a quotient by `q² + 1` is flagged.
pub const QUOTIENT_FLAG_TOL: f64 = 1e-6;
/// Newton steps applied to every root.
const POLISH_STEPS: usize = 3;
/// Companion eigenvalues with `|im| < IMAG_TOL·(1 + |re|)` are treated as real.
const IMAG_TOL: f64 = 1e-8;
/// Leading coefficients below this (relative to the largest) are dropped.
const LEADING_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("the zero polynomial has no isolated roots")]
    ZeroPolynomial,
    #[error("polynomial matrix must be square with dimension 1..=4, got {0}")]
    Dimension(usize),
}

/// Polynomial with ascending coefficients `c[0] + c[1] q + ...`.
#[derive(Clone, PartialEq, Default)]
pub struct UnivariatePoly {
    coeffs: Vec<f64>,
}

impl fmt::Debug for UnivariatePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly{:?}", self.coeffs)
    }
}

impl UnivariatePoly {
    /// Builds a polynomial, trimming exactly-zero leading coefficients.
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Self { coeffs };
        p.trim_exact();
        p
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// `(q - r1)(q - r2)...`
    pub fn from_roots(roots: &[f64]) -> Self {
        roots.iter().fold(Self::constant(1.0), |acc, &r| {
            &acc * &Self::new(vec![-r, 1.0])
        })
    }

    fn trim_exact(&mut self) {
        while self.coeffs.last() == Some(&0.0) {
            self.coeffs.pop();
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    /// Coefficient of `q^i` (zero beyond the degree).
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    /// Largest coefficient magnitude.
    pub fn scale(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, q: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * q + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Drops leading coefficients whose magnitude is at most `rel·scale()`.
    pub fn trimmed(&self, rel: f64) -> Self {
        let cutoff = rel * self.scale();
        let mut coeffs = self.coeffs.clone();
        while coeffs.last().is_some_and(|c| c.abs() <= cutoff) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    /// Euclidean division; the divisor must be nonzero.
    pub fn div_rem(&self, divisor: &Self) -> (Self, Self) {
        let d_deg = divisor.degree().expect("division by the zero polynomial");
        let lead = divisor.coeffs[d_deg];
        let mut rem = self.coeffs.clone();
        if rem.len() <= d_deg {
            return (Self::zero(), self.clone());
        }
        let mut quot = vec![0.0; rem.len() - d_deg];
        for i in (0..quot.len()).rev() {
            let c = rem[i + d_deg] / lead;
            quot[i] = c;
            for (j, &dc) in divisor.coeffs.iter().enumerate() {
                rem[i + j] -= c * dc;
            }
            rem[i + d_deg] = 0.0;
        }
        rem.truncate(d_deg);
        (Self::new(quot), Self::new(rem))
    }
}

impl Add for &UnivariatePoly {
    type Output = UnivariatePoly;
    fn add(self, rhs: Self) -> UnivariatePoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        UnivariatePoly::new((0..n).map(|i| self.coeff(i) + rhs.coeff(i)).collect())
    }
}

impl Sub for &UnivariatePoly {
    type Output = UnivariatePoly;
    fn sub(self, rhs: Self) -> UnivariatePoly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        UnivariatePoly::new((0..n).map(|i| self.coeff(i) - rhs.coeff(i)).collect())
    }
}

impl Mul for &UnivariatePoly {
    type Output = UnivariatePoly;
    fn mul(self, rhs: Self) -> UnivariatePoly {
        if self.is_zero() || rhs.is_zero() {
            return UnivariatePoly::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        UnivariatePoly::new(out)
    }
}

impl Neg for &UnivariatePoly {
    type Output = UnivariatePoly;
    fn neg(self) -> UnivariatePoly {
        self.scaled(-1.0)
    }
}

/// Square matrix of polynomials in `q_y`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialMatrix {
    n: usize,
    entries: Vec<UnivariatePoly>,
}

impl PolynomialMatrix {
    pub fn new(n: usize, entries: Vec<UnivariatePoly>) -> Result<Self, PolyError> {
        if n == 0 || n > 4 || entries.len() != n * n {
            return Err(PolyError::Dimension(n));
        }
        Ok(Self { n, entries })
    }

    /// Builds a matrix from per-entry `[c0, c1, c2]` coefficient triples.
    pub fn from_quadratics(n: usize, rows: &[Vec<[f64; 3]>]) -> Result<Self, PolyError> {
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(PolyError::Dimension(n));
        }
        let entries = rows
            .iter()
            .flat_map(|r| r.iter().map(|c| UnivariatePoly::new(c.to_vec())))
            .collect();
        Self::new(n, entries)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, r: usize, c: usize) -> &UnivariatePoly {
        &self.entries[r * self.n + c]
    }

    /// Largest entry degree (0 for an all-zero matrix).
    pub fn max_degree(&self) -> usize {
        self.entries.iter().filter_map(|e| e.degree()).max().unwrap_or(0)
    }

    pub fn eval(&self, q: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |r, c| self.entry(r, c).eval(q))
    }

    /// Polynomial row `r` evaluated at `q`.
    pub fn eval_row(&self, r: usize, q: f64) -> Vec<f64> {
        (0..self.n).map(|c| self.entry(r, c).eval(q)).collect()
    }
}

/// Determinant of a polynomial matrix by cofactor expansion.
pub fn det_poly(m: &PolynomialMatrix) -> UnivariatePoly {
    let rows: Vec<usize> = (0..m.n).collect();
    let cols: Vec<usize> = (0..m.n).collect();
    minor_det(m, &rows, &cols)
}

fn minor_det(m: &PolynomialMatrix, rows: &[usize], cols: &[usize]) -> UnivariatePoly {
    match rows.len() {
        1 => m.entry(rows[0], cols[0]).clone(),
        2 => {
            let a = m.entry(rows[0], cols[0]) * m.entry(rows[1], cols[1]);
            let b = m.entry(rows[0], cols[1]) * m.entry(rows[1], cols[0]);
            &a - &b
        }
        _ => {
            let sub_rows = &rows[1..];
            let mut acc = UnivariatePoly::zero();
            for (k, &c) in cols.iter().enumerate() {
                let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
                let term = m.entry(rows[0], c) * &minor_det(m, sub_rows, &sub_cols);
                acc = if k % 2 == 0 { &acc + &term } else { &acc - &term };
            }
            acc
        }
    }
}

/// Quotient of a polynomial by `q² + 1` together with its remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Quotient {
    pub quotient: UnivariatePoly,
    /// Remainder `r0 + r1 q`.
    pub remainder: [f64; 2],
    /// `max|r_i| / scale(p)` (0 for the zero polynomial).
    pub relative_remainder: f64,
    /// Set when the relative remainder exceeds [`QUOTIENT_FLAG_TOL`].
    pub flagged: bool,
}

pub fn quotient_by_q2_plus_1(p: &UnivariatePoly) -> Quotient {
    let mut a = p.coeffs().to_vec();
    let n = a.len();
    let mut quot = vec![0.0; n.saturating_sub(2)];
    for i in (2..n).rev() {
        let c = a[i];
        quot[i - 2] = c;
        a[i - 2] -= c;
        a[i] = 0.0;
    }
    let remainder = [a.first().copied().unwrap_or(0.0), a.get(1).copied().unwrap_or(0.0)];
    let scale = p.scale();
    let relative_remainder = if scale > 0.0 {
        remainder[0].abs().max(remainder[1].abs()) / scale
    } else {
        0.0
    };
    Quotient {
        quotient: UnivariatePoly::new(quot),
        remainder,
        relative_remainder,
        flagged: relative_remainder > QUOTIENT_FLAG_TOL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootMethod {
    #[default]
    CompanionMatrix,
    SturmBisection,
}

/// Real roots in ascending order, with `|p'(root)| / scale(p)` per root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealRootSet {
    pub roots: Vec<f64>,
    pub derivative_scale: Vec<f64>,
}

impl RealRootSet {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// Real roots of `p` within `[-ROOT_BOUND, ROOT_BOUND]`, each polished by a
/// few Newton steps.
pub fn real_roots(p: &UnivariatePoly, method: RootMethod) -> Result<RealRootSet, PolyError> {
    if p.is_zero() || p.scale() == 0.0 {
        return Err(PolyError::ZeroPolynomial);
    }
    let normalized = p.scaled(1.0 / p.scale()).trimmed(LEADING_TOL);
    let raw = match normalized.degree() {
        None | Some(0) => Vec::new(),
        Some(_) => match method {
            RootMethod::CompanionMatrix => companion_roots(&normalized),
            RootMethod::SturmBisection => sturm_roots(&normalized),
        },
    };
    let dp = normalized.derivative();
    let mut roots: Vec<f64> = raw
        .into_iter()
        .map(|r| polish(&normalized, &dp, r))
        .filter(|r| r.is_finite() && r.abs() <= ROOT_BOUND)
        .collect();
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + b.abs()));
    let derivative_scale = roots.iter().map(|&r| dp.eval(r).abs()).collect();
    Ok(RealRootSet {
        roots,
        derivative_scale,
    })
}

fn polish(p: &UnivariatePoly, dp: &UnivariatePoly, mut r: f64) -> f64 {
    for _ in 0..POLISH_STEPS {
        let f = p.eval(r);
        let d = dp.eval(r);
        if f == 0.0 || d == 0.0 {
            break;
        }
        let next = r - f / d;
        if !next.is_finite() || p.eval(next).abs() > f.abs() {
            break;
        }
        r = next;
    }
    r
}

fn companion_roots(p: &UnivariatePoly) -> Vec<f64> {
    let deg = p.degree().unwrap_or(0);
    let lead = p.coeff(deg);
    let mut c = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        c[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        c[(i, deg - 1)] = -p.coeff(i) / lead;
    }
    c.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < IMAG_TOL * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

/// Sturm sequence `p, p', -rem(p, p'), ...`.
fn sturm_sequence(p: &UnivariatePoly) -> Vec<UnivariatePoly> {
    let mut seq = vec![p.clone(), p.derivative()];
    loop {
        let n = seq.len();
        let (_, rem) = seq[n - 2].div_rem(&seq[n - 1]);
        let rem = rem.trimmed(1e-12 * seq[n - 2].scale().max(seq[n - 1].scale()));
        if rem.is_zero() {
            break;
        }
        seq.push(-&rem);
        if seq.last().and_then(|s| s.degree()) == Some(0) {
            break;
        }
    }
    seq
}

fn sign_changes(seq: &[UnivariatePoly], x: f64) -> usize {
    let mut changes = 0;
    let mut prev = 0.0_f64;
    for s in seq {
        let v = s.eval(x);
        if v == 0.0 {
            continue;
        }
        if prev != 0.0 && (v > 0.0) != (prev > 0.0) {
            changes += 1;
        }
        prev = v;
    }
    changes
}

fn sturm_roots(p: &UnivariatePoly) -> Vec<f64> {
    let seq = sturm_sequence(p);
    let count = |x: f64| sign_changes(&seq, x);
    let mut roots = Vec::new();
    // intervals (a, b] with their root counts
    let mut stack = vec![(-ROOT_BOUND, ROOT_BOUND, count(-ROOT_BOUND), count(ROOT_BOUND))];
    while let Some((a, b, va, vb)) = stack.pop() {
        let n = va.saturating_sub(vb);
        if n == 0 {
            continue;
        }
        if n == 1 {
            roots.push(refine_isolated(p, &seq, a, b, va));
            continue;
        }
        if b - a <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            // cluster or multiple root
            roots.push(0.5 * (a + b));
            continue;
        }
        let m = 0.5 * (a + b);
        let vm = count(m);
        stack.push((a, m, va, vm));
        stack.push((m, b, vm, vb));
    }
    roots
}

fn refine_isolated(p: &UnivariatePoly, seq: &[UnivariatePoly], mut a: f64, mut b: f64, va: usize) -> f64 {
    let (mut fa, fb) = (p.eval(a), p.eval(b));
    if fb == 0.0 {
        return b;
    }
    let bracketed = fa != 0.0 && (fa > 0.0) != (fb > 0.0);
    for _ in 0..200 {
        if b - a <= 4.0 * f64::EPSILON * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let m = 0.5 * (a + b);
        if bracketed {
            let fm = p.eval(m);
            if fm == 0.0 {
                return m;
            }
            if (fm > 0.0) == (fa > 0.0) {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
        } else if sign_changes(seq, m) < va {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly(c: &[f64]) -> UnivariatePoly {
        UnivariatePoly::new(c.to_vec())
    }

    #[test]
    fn arithmetic_basics() {
        let a = poly(&[1.0, 2.0]);
        let b = poly(&[-1.0, 0.0, 3.0]);
        assert_eq!((&a * &b).coeffs(), &[-1.0, -2.0, 3.0, 6.0]);
        assert_eq!((&a - &a).degree(), None);
        assert_eq!(poly(&[1.0, 0.0, 0.0]).degree(), Some(0));
        assert_eq!(poly(&[2.0, 3.0, 4.0]).eval(2.0), 2.0 + 6.0 + 16.0);
        let (q, r) = poly(&[-1.0, 0.0, 0.0, 1.0]).div_rem(&poly(&[-1.0, 1.0]));
        assert_eq!(q.coeffs(), &[1.0, 1.0, 1.0]);
        assert!(r.is_zero());
    }

    #[test]
    fn diagonal_determinant() {
        let d = [1.0, 0.0, 1.0];
        let z = [0.0; 3];
        let m = PolynomialMatrix::from_quadratics(
            3,
            &[vec![d, z, z], vec![z, d, z], vec![z, z, d]],
        )
        .unwrap();
        let det = det_poly(&m);
        let expected = &(&poly(&d) * &poly(&d)) * &poly(&d);
        assert_eq!(det, expected);
        assert_eq!(det.coeffs(), &[1.0, 0.0, 3.0, 0.0, 3.0, 0.0, 1.0]);
    }

    #[test]
    fn det_poly_matches_numeric_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3usize, 4] {
            for _ in 0..50 {
                let rows: Vec<Vec<[f64; 3]>> = (0..n)
                    .map(|_| {
                        (0..n)
                            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                            .collect()
                    })
                    .collect();
                let m = PolynomialMatrix::from_quadratics(n, &rows).unwrap();
                let det = det_poly(&m);
                assert!(det.degree().unwrap() <= 2 * n);
                for q in [-2.0, -0.5, 0.0, 0.3, 1.7] {
                    let numeric = m.eval(q).determinant();
                    let scale = 1.0 + numeric.abs();
                    assert!((det.eval(q) - numeric).abs() < 1e-10 * scale);
                }
            }
        }
    }

    #[test]
    fn quotient_examples() {
        let p = &poly(&[1.0, 0.0, 1.0]) * &poly(&[-2.0, 1.0]);
        let q = quotient_by_q2_plus_1(&p);
        assert_eq!(q.quotient.coeffs(), &[-2.0, 1.0]);
        assert_eq!(q.remainder, [0.0, 0.0]);
        assert!(!q.flagged);

        // q⁴ = (q² − 1)(q² + 1) + 1
        let q4 = poly(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        let q = quotient_by_q2_plus_1(&q4);
        assert_eq!(q.quotient.coeffs(), &[-1.0, 0.0, 1.0]);
        assert_eq!(q.remainder, [1.0, 0.0]);
        assert!(q.flagged);
    }

    #[test]
    fn quotient_re_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let deg = rng.random_range(0..9);
            let p = poly(&(0..=deg).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<_>>());
            let q = quotient_by_q2_plus_1(&p);
            let back = &(&q.quotient * &poly(&[1.0, 0.0, 1.0])) + &poly(&q.remainder);
            for i in 0..=deg {
                assert!((back.coeff(i) - p.coeff(i)).abs() < 1e-12 * (1.0 + p.scale()));
            }
        }
    }

    #[test]
    fn root_examples() {
        for method in [RootMethod::CompanionMatrix, RootMethod::SturmBisection] {
            let r = real_roots(&poly(&[4.0, 0.0, -5.0, 0.0, 1.0]), method).unwrap();
            assert_eq!(r.len(), 4, "{method:?}");
            for (got, want) in r.roots.iter().zip([-2.0, -1.0, 1.0, 2.0]) {
                assert!((got - want).abs() < 1e-12, "{method:?}: {got} vs {want}");
            }
            assert!(real_roots(&poly(&[1.0, 0.0, 1.0]), method).unwrap().is_empty());
            assert!(real_roots(&poly(&[3.0]), method).unwrap().is_empty());
            assert_eq!(real_roots(&UnivariatePoly::zero(), method), Err(PolyError::ZeroPolynomial));
        }
    }

    #[test]
    fn roots_are_scale_invariant() {
        let p = UnivariatePoly::from_roots(&[-0.7, 0.1, 0.25, 3.0]).scaled(1e-9);
        let r = real_roots(&p, RootMethod::CompanionMatrix).unwrap();
        assert_eq!(r.len(), 4);
        assert!((r.roots[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn companion_and_sturm_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..1000 {
            let deg = if trial % 2 == 0 { 4 } else { 6 };
            let nreal = 2 * rng.random_range(1..=deg / 2);
            // well-separated real roots plus complex pairs
            let mut roots: Vec<f64> = Vec::new();
            while roots.len() < nreal {
                let r: f64 = rng.random_range(-3.0..3.0);
                if roots.iter().all(|x| (x - r).abs() > 0.05) {
                    roots.push(r);
                }
            }
            let mut p = UnivariatePoly::from_roots(&roots);
            for _ in 0..(deg - nreal) / 2 {
                let (re, im): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(0.3..2.0));
                p = &p * &poly(&[re * re + im * im, -2.0 * re, 1.0]);
            }
            let p = p.scaled(rng.random_range(0.1..10.0));
            let a = real_roots(&p, RootMethod::CompanionMatrix).unwrap();
            let b = real_roots(&p, RootMethod::SturmBisection).unwrap();
            assert_eq!(a.len(), nreal, "trial {trial}");
            assert_eq!(b.len(), nreal, "trial {trial}");
            for (x, y) in a.roots.iter().zip(&b.roots) {
                assert!((x - y).abs() < 1e-7, "trial {trial}: {x} vs {y}");
                assert!(p.eval(*x).abs() / p.scale() <= 1e-7);
            }
        }
    }
}
