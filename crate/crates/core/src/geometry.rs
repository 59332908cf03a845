//! Sphere projection, subspace projection and orthonormal basis construction.
//!
//! Every loss head is built from three primitives: normalizing a raw vector
//! onto the unit sphere, projecting it onto the span of a set of class
//! centers, and measuring the angle between the two.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Norms at or below this threshold are treated as zero.
pub const EPS_NORM: f64 = 1e-12;

/// Relative residual below which a row is considered linearly dependent.
const RANK_TOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// A point on the unit sphere in `R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Wraps values that are already unit-norm (within 1e-6).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        let n = norm(&values);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Projects `x` onto the unit sphere.
pub fn sphere_project(x: &[f64]) -> Result<EmbeddingVector> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_finite(x)?;
    let n = norm(x);
    if n <= EPS_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector(x.iter().map(|v| v / n).collect()))
}

/// A set of `J` row vectors in `R^D`, `J < D`, spanning a class subspace.
///
/// Bases built through [`orthonormalize`] or [`random_basis`] have pairwise
/// orthonormal rows. [`SubspaceBasis::from_unit_rows`] keeps rows that are
/// only unit-norm, which reproduces the un-orthogonalized random center
/// initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    rows: Vec<f64>,
    j: usize,
    d: usize,
    orthonormal: bool,
}

impl SubspaceBasis {
    /// Normalizes each row to unit length without orthogonalizing.
    pub fn from_unit_rows(raw_rows: &[Vec<f64>]) -> Result<Self> {
        let (j, d) = shape(raw_rows)?;
        let mut rows = Vec::with_capacity(j * d);
        for r in raw_rows {
            rows.extend(sphere_project(r)?.into_inner());
        }
        Ok(Self { rows, j, d, orthonormal: false })
    }

    pub fn dim(&self) -> usize {
        self.j
    }

    pub fn ambient_dim(&self) -> usize {
        self.d
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.d)
    }

    /// Row-major `J x D` storage.
    pub fn as_flat(&self) -> &[f64] {
        &self.rows
    }

    /// Coefficients `<x, c_j>` for every row.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        self.rows().map(|c| dot(x, c)).collect()
    }

    /// `sum_j coeffs[j] * c_j`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (c, &a) in self.rows().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += a * v;
            }
        }
        out
    }

    /// Largest absolute deviation of the Gram matrix from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.j {
            for b in a..self.j {
                let g = dot(self.row(a), self.row(b));
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

fn shape(raw_rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    let j = raw_rows.len();
    if j == 0 {
        return Err(Error::EmptyInput);
    }
    let d = raw_rows[0].len();
    if d == 0 {
        return Err(Error::EmptyInput);
    }
    for r in raw_rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: r.len() });
        }
        check_finite(r)?;
    }
    if j >= d {
        return Err(Error::InvalidDims { subspace: j, embedding: d });
    }
    Ok((j, d))
}

/// `sum_j <x, c_j> c_j`.
pub fn span_project(x: &[f64], basis: &SubspaceBasis) -> Result<Vec<f64>> {
    if x.len() != basis.d {
        return Err(Error::DimensionMismatch { expected: basis.d, found: x.len() });
    }
    check_finite(x)?;
    Ok(basis.combine(&basis.coefficients(x)))
}

/// Cosine between `x` and its projection onto the span of `basis`.
///
/// For orthonormal bases this equals the length of the projection of the
/// normalized input. Returns 0 when the projection is numerically zero.
pub fn subspace_cosine(x: &[f64], basis: &SubspaceBasis) -> Result<f64> {
    Ok(subspace_cosine_with_grad(x, basis)?.0)
}

/// [`subspace_cosine`] together with its gradient with respect to the raw `x`.
pub fn subspace_cosine_with_grad(x: &[f64], basis: &SubspaceBasis) -> Result<(f64, Vec<f64>)> {
    let d = basis.d;
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.len() });
    }
    let u = sphere_project(x)?;
    let xn = norm(x);
    // p = G x with G = C^T C; the cosine only depends on the direction of p.
    let p = basis.combine(&basis.coefficients(x));
    let pn = norm(&p);
    if pn / xn <= EPS_NORM {
        return Ok((0.0, vec![0.0; d]));
    }
    let a = dot(x, &p);
    let cos = a / (xn * pn);
    let gp = basis.combine(&basis.coefficients(&p));
    let denom = xn * pn;
    let grad = (0..d)
        .map(|i| 2.0 * p[i] / denom - cos * (u.0[i] / xn + gp[i] / (pn * pn)))
        .collect();
    Ok((cos.clamp(0.0, 1.0), grad))
}

/// Gram-Schmidt with one re-orthogonalization pass; preserves the row span.
pub fn orthonormalize(raw_rows: &[Vec<f64>]) -> Result<SubspaceBasis> {
    let (j, d) = shape(raw_rows)?;
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(j);
    let mut rank = 0;
    for r in raw_rows {
        let scale = norm(r);
        let mut v = r.clone();
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&v, qi);
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= c * qk;
                }
            }
        }
        let n = norm(&v);
        if n <= RANK_TOL * scale || n <= EPS_NORM {
            continue;
        }
        v.iter_mut().for_each(|vk| *vk /= n);
        q.push(v);
        rank += 1;
    }
    if rank < j {
        return Err(Error::RankDeficient { rank, expected: j });
    }
    Ok(SubspaceBasis { rows: q.into_iter().flatten().collect(), j, d, orthonormal: true })
}

/// `rows x cols` matrix with Glorot-uniform entries, row-major as nested vectors.
pub fn glorot_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-limit..limit)).collect())
        .collect()
}

/// Seeded Glorot-uniform draw followed by orthonormalization.
pub fn random_basis(j: usize, d: usize, seed: u64) -> Result<SubspaceBasis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_basis_with(j, d, &mut rng)
}

pub fn random_basis_with<R: Rng + ?Sized>(j: usize, d: usize, rng: &mut R) -> Result<SubspaceBasis> {
    if j == 0 || j >= d {
        return Err(Error::InvalidDims { subspace: j, embedding: d });
    }
    orthonormalize(&glorot_rows(j, d, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn basis_e(d: usize, idx: &[usize]) -> SubspaceBasis {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let mut r = vec![0.0; d];
                r[i] = 1.0;
                r
            })
            .collect();
        orthonormalize(&rows).unwrap()
    }

    #[test]
    fn sphere_project_examples() {
        let p = sphere_project(&[3.0, 4.0, 0.0]).unwrap();
        assert!((p.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((p.as_slice()[1] - 0.8).abs() < 1e-15);
        assert_eq!(sphere_project(&[1.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(matches!(sphere_project(&[0.0, 0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(sphere_project(&[f64::NAN, 1.0]), Err(Error::NonFinite)));
    }

    #[test]
    fn span_project_examples() {
        let b = basis_e(3, &[0, 1]);
        assert_eq!(span_project(&[1.0, 2.0, 3.0], &b).unwrap(), vec![1.0, 2.0, 0.0]);
        assert_eq!(span_project(&[0.0, 0.0, 5.0], &b).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(matches!(
            span_project(&[1.0, 2.0], &b),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    /// Least-squares projection through the normal equations `A^T (A A^T)^{-1} A x`
    /// for a 2-row `A`, solved with the explicit 2x2 inverse.
    fn normal_equations_projection(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        let g00 = dot(&rows[0], &rows[0]);
        let g01 = dot(&rows[0], &rows[1]);
        let g11 = dot(&rows[1], &rows[1]);
        let det = g00 * g11 - g01 * g01;
        let b0 = dot(&rows[0], x);
        let b1 = dot(&rows[1], x);
        let y0 = (g11 * b0 - g01 * b1) / det;
        let y1 = (-g01 * b0 + g00 * b1) / det;
        (0..x.len()).map(|i| y0 * rows[0][i] + y1 * rows[1][i]).collect()
    }

    #[test]
    fn span_project_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let raw = glorot_rows(2, 8, &mut rng);
            let b = orthonormalize(&raw).unwrap();
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ours = span_project(&x, &b).unwrap();
            let oracle = normal_equations_projection(&raw, &x);
            for (a, o) in ours.iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn subspace_cosine_examples() {
        let b = basis_e(3, &[0, 1]);
        assert!((subspace_cosine(&[0.3, -0.7, 0.0], &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(subspace_cosine(&[0.0, 0.0, 2.0], &b).unwrap(), 0.0);
        let b1 = basis_e(3, &[0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = subspace_cosine(&[s, 0.0, s], &b1).unwrap();
        assert!((c - s).abs() < 1e-12);
        assert!(matches!(subspace_cosine(&[0.0; 3], &b1), Err(Error::ZeroVector)));
    }

    #[test]
    fn orthonormalize_examples() {
        let b = orthonormalize(&[vec![2.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]]).unwrap();
        assert_eq!(b.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(b.row(1), &[0.0, 1.0, 0.0]);

        let q = random_basis(3, 6, 5).unwrap();
        let raw: Vec<Vec<f64>> = q.rows().map(|r| r.to_vec()).collect();
        let again = orthonormalize(&raw).unwrap();
        for (a, b) in again.as_flat().iter().zip(q.as_flat()) {
            assert!((a - b).abs() < 1e-10);
        }

        assert!(matches!(
            orthonormalize(&[vec![1.0, 2.0, 0.0], vec![2.0, 4.0, 0.0]]),
            Err(Error::RankDeficient { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn orthonormalize_preserves_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw = glorot_rows(4, 32, &mut rng);
        let b = orthonormalize(&raw).unwrap();
        assert!(b.gram_deviation() < 1e-10);
        // every raw row is reproduced by the orthonormal projector
        for r in &raw {
            let p = span_project(r, &b).unwrap();
            for (a, o) in p.iter().zip(r) {
                assert!((a - o).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn random_basis_examples() {
        let a = random_basis(32, 512, 7).unwrap();
        let b = random_basis(32, 512, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.gram_deviation() < 1e-10);
        let u = random_basis(1, 2, 99).unwrap();
        assert!((norm(u.row(0)) - 1.0).abs() < 1e-12);
        assert!(matches!(random_basis(512, 512, 1), Err(Error::InvalidDims { .. })));
    }

    #[test]
    fn high_dimension_near_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut ok = 0;
        for _ in 0..100 {
            let rows = glorot_rows(2, 512, &mut rng);
            let u = sphere_project(&rows[0]).unwrap();
            let v = sphere_project(&rows[1]).unwrap();
            if dot(u.as_slice(), v.as_slice()).abs() < 0.25 {
                ok += 1;
            }
        }
        assert!(ok >= 99);
    }

    #[test]
    fn cosine_gradient_matches_finite_differences_for_raw_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = SubspaceBasis::from_unit_rows(&glorot_rows(3, 10, &mut rng)).unwrap();
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = subspace_cosine_with_grad(&x, &b).unwrap();
        let h = 1e-6;
        for i in 0..10 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (subspace_cosine(&xp, &b).unwrap() - subspace_cosine(&xm, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
        }
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, d)
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_pythagorean(x in vec_strategy(12), seed in 0u64..1000) {
            let b = random_basis(4, 12, seed).unwrap();
            let p = span_project(&x, &b).unwrap();
            let pp = span_project(&p, &b).unwrap();
            for (a, c) in p.iter().zip(&pp) {
                prop_assert!((a - c).abs() < 1e-8);
            }
            let resid: Vec<f64> = x.iter().zip(&p).map(|(a, c)| a - c).collect();
            let lhs = dot(&x, &x);
            let rhs = dot(&p, &p) + dot(&resid, &resid);
            prop_assert!((lhs - rhs).abs() < 1e-8 * lhs.max(1.0));
        }

        #[test]
        fn remark_identity(x in vec_strategy(16), seed in 0u64..1000) {
            let b = random_basis(5, 16, seed).unwrap();
            let p = span_project(&x, &b).unwrap();
            prop_assume!(norm(&x) > 1e-6 && norm(&p) > 1e-6);
            let u = sphere_project(&x).unwrap();
            let v = sphere_project(&p).unwrap();
            let diff: f64 = u.as_slice().iter().zip(v.as_slice()).map(|(a, c)| (a - c) * (a - c)).sum();
            let cos = subspace_cosine(&x, &b).unwrap();
            prop_assert!((diff - 2.0 * (1.0 - cos)).abs() < 1e-8);
        }
    }
}
