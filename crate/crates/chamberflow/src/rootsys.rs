//! Root system data on a real vector space `a` with a chosen inner product.
//!
//! Roots and points share one coordinate system; the gram matrix mediates
//! every pairing, so Killing-rescaled variants are configuration, not code.
//! Family A_n is realized isometrically inside R^n by mapping the sum-zero
//! hyperplane of R^{n+1} through the Helmert basis; B/C/D use the standard
//! orthonormal coordinates. Extra center coordinates are appended after the
//! semisimple block and the gram must not mix the two blocks.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
    C,
    D,
    /// No roots at all; `a` is pure center.
    Toric,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::A => "A",
            Family::B => "B",
            Family::C => "C",
            Family::D => "D",
            Family::Toric => "toric",
        };
        f.write_str(s)
    }
}

/// One positive root: coordinates, integer expansion over the simple roots,
/// and its height (coefficient sum).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Root {
    pub coords: Vec<f64>,
    pub simple_coeffs: Vec<i64>,
    pub height: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootSystem {
    pub family: Family,
    /// Subscript n of A_n/B_n/C_n/D_n; 0 for toric.
    pub family_rank: usize,
    pub center_dim: usize,
    /// Total dimension of `a` (semisimple block + center block).
    dim: usize,
    /// Inner product on `a`, row-major SPD. Identity for the built-in
    /// realizations unless overridden.
    gram: DMatrix<f64>,
    pub simple_roots: Vec<Vec<f64>>,
    /// Sorted by (height, simple coefficients lex); this order is the index
    /// space every other module refers to.
    pub positive_roots: Vec<Root>,
    /// Gram-orthonormal basis of the center block.
    pub center_basis: Vec<Vec<f64>>,
}

impl RootSystem {
    /// Standard realization of one of the families with `center_dim` extra
    /// central coordinates appended.
    pub fn build(family: Family, rank: usize, center_dim: usize) -> Result<Self> {
        let min_rank = match family {
            Family::A => 1,
            Family::B | Family::C | Family::D => 2,
            Family::Toric => 0,
        };
        if rank < min_rank {
            return Err(Error::Input(format!(
                "family {family} needs rank >= {min_rank}, got {rank}"
            )));
        }
        if family == Family::Toric && rank != 0 {
            return Err(Error::Input(
                "toric systems have no semisimple rank; pass rank 0".into(),
            ));
        }
        let dim = rank + center_dim;
        let (simple_ss, positive_ss) = enumerate_family(family, rank);
        let pad = |v: Vec<f64>| {
            let mut w = v;
            w.resize(dim, 0.0);
            w
        };
        let simple_roots: Vec<Vec<f64>> = simple_ss.into_iter().map(pad).collect();
        let positive_coords: Vec<Vec<f64>> = positive_ss.into_iter().map(pad).collect();
        let gram = DMatrix::identity(dim, dim);
        let center_basis = (0..center_dim)
            .map(|k| {
                let mut c = vec![0.0; dim];
                c[rank + k] = 1.0;
                c
            })
            .collect();
        let sys = Self::assemble(
            family,
            rank,
            center_dim,
            dim,
            gram,
            simple_roots,
            positive_coords,
            center_basis,
        )?;
        sys.validate()?;
        Ok(sys)
    }

    /// Pure torus: no roots, every direction central.
    pub fn toric(dim: usize) -> Self {
        Self::build(Family::Toric, 0, dim).expect("toric build cannot fail")
    }

    /// Custom system from explicit simple roots. Positive roots are generated
    /// by reflection closure; the center basis is completed from the
    /// orthogonal complement of the root span. Intended for nonstandard
    /// realizations (tests use the permutation model of A_2 in R^3).
    pub fn from_simple_roots(
        simple_roots: Vec<Vec<f64>>,
        dim: usize,
        gram: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let gram = gram.unwrap_or_else(|| DMatrix::identity(dim, dim));
        check_gram(&gram, dim)?;
        for s in &simple_roots {
            if s.len() != dim {
                return Err(Error::Input("simple root has wrong dimension".into()));
            }
        }
        let positive_coords = reflection_closure(&simple_roots, &gram)?;
        let center_basis = complement_basis(&simple_roots, &gram, dim);
        let center_dim = center_basis.len();
        let family_rank = simple_roots.len();
        let sys = Self::assemble(
            Family::A, // label is informational only for custom systems
            family_rank,
            center_dim,
            dim,
            gram,
            simple_roots,
            positive_coords,
            center_basis,
        )?;
        sys.validate()?;
        Ok(sys)
    }

    /// Replace the gram matrix. The override must be SPD and block-diagonal
    /// with respect to the semisimple/center split so center orthogonality
    /// survives; the center basis is re-orthonormalized under the new product.
    pub fn with_gram(mut self, gram: DMatrix<f64>) -> Result<Self> {
        check_gram(&gram, self.dim)?;
        for root in &self.positive_roots {
            for c in &self.center_basis {
                let mut p = 0.0;
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        p += root.coords[i] * gram[(i, j)] * c[j];
                    }
                }
                if p.abs() > 1e-10 {
                    return Err(Error::Input(
                        "gram override mixes the root span with the center block".into(),
                    ));
                }
            }
        }
        self.gram = gram;
        self.center_basis = gram_schmidt(&self.center_basis.clone(), &self.gram);
        self.validate()?;
        Ok(self)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        family: Family,
        family_rank: usize,
        center_dim: usize,
        dim: usize,
        gram: DMatrix<f64>,
        simple_roots: Vec<Vec<f64>>,
        positive_coords: Vec<Vec<f64>>,
        center_basis: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut positive_roots = Vec::with_capacity(positive_coords.len());
        for coords in positive_coords {
            let simple_coeffs = integer_coefficients(&coords, &simple_roots, dim)?;
            let height = simple_coeffs.iter().sum();
            positive_roots.push(Root {
                coords,
                simple_coeffs,
                height,
            });
        }
        positive_roots.sort_by(|a, b| {
            a.height
                .cmp(&b.height)
                .then_with(|| a.simple_coeffs.cmp(&b.simple_coeffs))
        });
        Ok(Self {
            family,
            family_rank,
            center_dim,
            dim,
            gram,
            simple_roots,
            positive_roots,
            center_basis,
        })
    }

    /// Dimension of `a`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Gram-mediated pairing a^T G b. Used for both the root/point duality
    /// and the inner product on `a`; the two coincide in this realization.
    pub fn pair(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            let row = self.gram.row(i);
            let mut s = 0.0;
            for j in 0..self.dim {
                s += row[j] * b[j];
            }
            acc += ai * s;
        }
        acc
    }

    /// G v, the dual vector of v: pair(v, x) = dot(gram_apply(v), x).
    pub fn gram_apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.gram[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.pair(v, v).max(0.0).sqrt()
    }

    /// Reflection through the wall of `alpha`: x - 2 (alpha,x)/(alpha,alpha) alpha.
    pub fn reflect(&self, x: &[f64], alpha: &[f64]) -> Vec<f64> {
        let factor = 2.0 * self.pair(alpha, x) / self.pair(alpha, alpha);
        x.iter().zip(alpha).map(|(xi, ai)| xi - factor * ai).collect()
    }

    /// Matrix of the reflection for simple root `i`, acting on coordinates.
    pub fn generator_matrix(&self, i: usize) -> DMatrix<f64> {
        let alpha = &self.simple_roots[i];
        let dual = self.gram_apply(alpha);
        let scale = 2.0 / self.pair(alpha, alpha);
        let mut m = DMatrix::identity(self.dim, self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                m[(r, c)] -= scale * alpha[r] * dual[c];
            }
        }
        m
    }

    /// Strict chamber membership with respect to the listed positive roots.
    pub fn in_chamber(&self, x: &[f64], roots: &[usize]) -> bool {
        roots
            .iter()
            .all(|&i| self.pair(&self.positive_roots[i].coords, x) > 0.0)
    }

    pub fn in_positive_chamber(&self, x: &[f64]) -> bool {
        let all: Vec<usize> = (0..self.positive_roots.len()).collect();
        self.in_chamber(x, &all)
    }

    /// Split x = center + semisimple with the center component in the span of
    /// `center_basis` and the remainder gram-orthogonal to it.
    pub fn project_center(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut center = vec![0.0; self.dim];
        for c in &self.center_basis {
            let coeff = self.pair(c, x);
            for (ci, &bi) in center.iter_mut().zip(c) {
                *ci += coeff * bi;
            }
        }
        let semisimple = x.iter().zip(&center).map(|(xi, ci)| xi - ci).collect();
        (center, semisimple)
    }

    /// Sum of the positive roots.
    pub fn two_rho(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for root in &self.positive_roots {
            for (si, &ri) in s.iter_mut().zip(&root.coords) {
                *si += ri;
            }
        }
        s
    }

    /// Weyl orbit of a point under the generator reflections, deduplicated at
    /// 1e-9. None when the orbit exceeds `cap` elements.
    pub fn orbit(&self, x: &[f64], cap: usize) -> Option<Vec<Vec<f64>>> {
        let mut seen: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut queue: VecDeque<Vec<f64>> = VecDeque::from([x.to_vec()]);
        while let Some(p) = queue.pop_front() {
            for alpha in &self.simple_roots {
                let q = self.reflect(&p, alpha);
                if !seen.iter().any(|s| close(s, &q, 1e-9)) {
                    if seen.len() >= cap {
                        return None;
                    }
                    seen.push(q.clone());
                    queue.push_back(q);
                }
            }
        }
        Some(seen)
    }

    /// Order of the Weyl group via breadth-first closure on the generator
    /// matrices. None when the group exceeds `cap` elements.
    pub fn weyl_order(&self, cap: usize) -> Option<usize> {
        if self.simple_roots.is_empty() {
            return Some(1);
        }
        let generators: Vec<DMatrix<f64>> = (0..self.simple_roots.len())
            .map(|i| self.generator_matrix(i))
            .collect();
        let key = |m: &DMatrix<f64>| -> Vec<i64> {
            m.iter().map(|v| (v * 1e9).round() as i64).collect()
        };
        let identity = DMatrix::identity(self.dim, self.dim);
        let mut seen = std::collections::HashSet::new();
        seen.insert(key(&identity));
        let mut queue = VecDeque::from([identity]);
        while let Some(m) = queue.pop_front() {
            for g in &generators {
                let n = g * &m;
                if seen.insert(key(&n)) {
                    if seen.len() > cap {
                        return None;
                    }
                    queue.push_back(n);
                }
            }
        }
        Some(seen.len())
    }

    /// Axioms checked by enumeration: integer expansions already held by
    /// construction, generator reflections permute the other positive roots,
    /// the center is gram-orthonormal and root-orthogonal.
    pub fn validate(&self) -> Result<()> {
        for (i, alpha) in self.simple_roots.iter().enumerate() {
            for (k, root) in self.positive_roots.iter().enumerate() {
                let image = self.reflect(&root.coords, alpha);
                let is_self = close(&root.coords, alpha, 1e-9);
                if is_self {
                    let neg: Vec<f64> = alpha.iter().map(|v| -v).collect();
                    if !close(&image, &neg, 1e-9) {
                        return Err(Error::Geometry(format!(
                            "generator {i} does not negate its own root"
                        )));
                    }
                    continue;
                }
                if !self
                    .positive_roots
                    .iter()
                    .any(|other| close(&other.coords, &image, 1e-9))
                {
                    return Err(Error::Geometry(format!(
                        "generator {i} maps positive root {k} outside the positive system"
                    )));
                }
            }
        }
        for (i, c) in self.center_basis.iter().enumerate() {
            for (j, d) in self.center_basis.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (self.pair(c, d) - expected).abs() > 1e-10 {
                    return Err(Error::Geometry("center basis is not orthonormal".into()));
                }
            }
            for root in &self.positive_roots {
                if self.pair(&root.coords, c).abs() > 1e-10 {
                    return Err(Error::Geometry(
                        "center direction pairs nontrivially with a root".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn check_gram(gram: &DMatrix<f64>, dim: usize) -> Result<()> {
    if gram.nrows() != dim || gram.ncols() != dim {
        return Err(Error::Input("gram matrix has wrong shape".into()));
    }
    if (gram - gram.transpose()).amax() > 1e-12 {
        return Err(Error::Input("gram matrix is not symmetric".into()));
    }
    if gram.clone().cholesky().is_none() {
        return Err(Error::Input("gram matrix is not positive definite".into()));
    }
    Ok(())
}

/// Simple and positive roots of the family in semisimple coordinates.
fn enumerate_family(family: Family, rank: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    match family {
        Family::Toric => (Vec::new(), Vec::new()),
        Family::A => {
            // Helmert image of e_i - e_j from R^{rank+1}.
            let n = rank + 1;
            let helmert = |k: usize, m: usize| -> f64 {
                // k in 1..=rank, m in 0..n
                let kk = k as f64;
                let norm = (kk * (kk + 1.0)).sqrt();
                if m < k {
                    1.0 / norm
                } else if m == k {
                    -kk / norm
                } else {
                    0.0
                }
            };
            let embed = |i: usize, j: usize| -> Vec<f64> {
                (1..=rank).map(|k| helmert(k, i) - helmert(k, j)).collect()
            };
            let simple: Vec<Vec<f64>> = (0..rank).map(|i| embed(i, i + 1)).collect();
            let mut positive = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    positive.push(embed(i, j));
                }
            }
            (simple, positive)
        }
        Family::B | Family::C | Family::D => {
            let e = |i: usize| -> Vec<f64> {
                let mut v = vec![0.0; rank];
                v[i] = 1.0;
                v
            };
            let add = |a: &[f64], b: &[f64], sign: f64| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| x + sign * y).collect()
            };
            let mut simple: Vec<Vec<f64>> =
                (0..rank - 1).map(|i| add(&e(i), &e(i + 1), -1.0)).collect();
            let mut positive = Vec::new();
            for i in 0..rank {
                for j in (i + 1)..rank {
                    positive.push(add(&e(i), &e(j), -1.0));
                    if family != Family::A {
                        positive.push(add(&e(i), &e(j), 1.0));
                    }
                }
            }
            match family {
                Family::B => {
                    simple.push(e(rank - 1));
                    for i in 0..rank {
                        positive.push(e(i));
                    }
                }
                Family::C => {
                    let mut long = e(rank - 1);
                    long[rank - 1] = 2.0;
                    simple.push(long);
                    for i in 0..rank {
                        let mut v = e(i);
                        v[i] = 2.0;
                        positive.push(v);
                    }
                }
                Family::D => {
                    simple.push(add(&e(rank - 2), &e(rank - 1), 1.0));
                }
                _ => unreachable!(),
            }
            (simple, positive)
        }
    }
}

/// Solve root = sum c_i alpha_i and demand near-integer nonnegative c.
fn integer_coefficients(root: &[f64], simples: &[Vec<f64>], dim: usize) -> Result<Vec<i64>> {
    if simples.is_empty() {
        return Err(Error::Geometry("positive root with no simple roots".into()));
    }
    let k = simples.len();
    let basis = DMatrix::from_fn(dim, k, |r, c| simples[c][r]);
    let target = DVector::from_column_slice(root);
    let normal = basis.transpose() * &basis;
    let rhs = basis.transpose() * target;
    let coeffs = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Geometry("simple roots are linearly dependent".into()))?;
    let mut out = Vec::with_capacity(k);
    // The expansion must reproduce the root exactly, not just in projection.
    let rebuilt = &basis * &coeffs;
    for (i, &ri) in root.iter().enumerate() {
        if (rebuilt[i] - ri).abs() > 1e-9 {
            return Err(Error::Geometry(
                "root is outside the span of the simple roots".into(),
            ));
        }
    }
    for &c in coeffs.iter() {
        let rounded = c.round();
        if (c - rounded).abs() > 1e-9 || rounded < 0.0 {
            return Err(Error::Geometry(format!(
                "root expansion coefficient {c} is not a nonnegative integer"
            )));
        }
        out.push(rounded as i64);
    }
    Ok(out)
}

/// Positive roots generated from simples by reflection closure.
fn reflection_closure(simples: &[Vec<f64>], gram: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let dim = gram.nrows();
    let pair = |a: &[f64], b: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                acc += a[i] * gram[(i, j)] * b[j];
            }
        }
        acc
    };
    let mut all: Vec<Vec<f64>> = Vec::new();
    for s in simples {
        all.push(s.clone());
        all.push(s.iter().map(|v| -v).collect());
    }
    let mut queue: VecDeque<Vec<f64>> = all.iter().cloned().collect();
    while let Some(r) = queue.pop_front() {
        for s in simples {
            let factor = 2.0 * pair(s, &r) / pair(s, s);
            let image: Vec<f64> = r.iter().zip(s).map(|(ri, si)| ri - factor * si).collect();
            if !all.iter().any(|x| close(x, &image, 1e-9)) {
                if all.len() > 10_000 {
                    return Err(Error::Geometry(
                        "reflection closure exceeded 10000 roots; not a finite system".into(),
                    ));
                }
                all.push(image.clone());
                queue.push_back(image);
            }
        }
    }
    // Positivity: nonnegative expansion over the simples.
    let k = simples.len();
    let basis = DMatrix::from_fn(dim, k, |r, c| simples[c][r]);
    let normal = (basis.transpose() * &basis)
        .lu();
    let mut positive = Vec::new();
    for r in all {
        let rhs = basis.transpose() * DVector::from_column_slice(&r);
        if let Some(c) = normal.solve(&rhs) {
            if c.iter().all(|&v| v > -1e-9) {
                positive.push(r);
            }
        }
    }
    Ok(positive)
}

/// Standard basis vectors gram-projected off the span of `roots`, then
/// orthonormalized; spans the gram-orthogonal complement.
fn complement_basis(roots: &[Vec<f64>], gram: &DMatrix<f64>, dim: usize) -> Vec<Vec<f64>> {
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let mut span: Vec<Vec<f64>> = gram_schmidt(roots, gram);
    for k in 0..dim {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        project_out(&mut v, &span, gram);
        let norm = pair_g(&v, &v, gram).max(0.0).sqrt();
        if norm > 1e-9 {
            let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
            span.push(v.clone());
            candidates.push(v);
        }
    }
    candidates
}

fn pair_g(a: &[f64], b: &[f64], gram: &DMatrix<f64>) -> f64 {
    let dim = gram.nrows();
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            acc += a[i] * gram[(i, j)] * b[j];
        }
    }
    acc
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>], gram: &DMatrix<f64>) {
    for b in basis {
        let coeff = pair_g(v, b, gram) / pair_g(b, b, gram);
        for (vi, bi) in v.iter_mut().zip(b) {
            *vi -= coeff * bi;
        }
    }
}

fn gram_schmidt(vectors: &[Vec<f64>], gram: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        project_out(&mut w, &out, gram);
        let norm = pair_g(&w, &w, gram).max(0.0).sqrt();
        if norm > 1e-9 {
            out.push(w.iter().map(|x| x / norm).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent oracle: grow the root set from the simples by reflecting
    /// until closure, then count the nonnegative half.
    fn closure_count(sys: &RootSystem) -> usize {
        reflection_closure(&sys.simple_roots, sys.gram()).unwrap().len()
    }

    #[test]
    fn positive_root_counts_match_reflection_closure() {
        for (family, rank, expected) in [
            (Family::A, 1, 1),
            (Family::A, 2, 3),
            (Family::A, 3, 6),
            (Family::B, 2, 4),
            (Family::B, 3, 9),
            (Family::C, 2, 4),
            (Family::C, 3, 9),
            (Family::D, 2, 2),
            (Family::D, 3, 6),
        ] {
            let sys = RootSystem::build(family, rank, 0).unwrap();
            assert_eq!(sys.positive_roots.len(), expected, "{family}{rank}");
            assert_eq!(closure_count(&sys), expected, "{family}{rank} oracle");
        }
    }

    #[test]
    fn a2_contains_the_sum_of_the_simples() {
        let sys = RootSystem::build(Family::A, 2, 0).unwrap();
        let sum: Vec<f64> = sys.simple_roots[0]
            .iter()
            .zip(&sys.simple_roots[1])
            .map(|(a, b)| a + b)
            .collect();
        assert!(sys
            .positive_roots
            .iter()
            .any(|r| r.coords.iter().zip(&sum).all(|(x, y)| (x - y).abs() < 1e-12)));
        // Highest root sorts last under (height, lex).
        assert_eq!(sys.positive_roots.last().unwrap().height, 2);
    }

    #[test]
    fn roots_have_squared_length_two_for_a_family() {
        let sys = RootSystem::build(Family::A, 3, 0).unwrap();
        for r in &sys.positive_roots {
            assert_relative_eq!(sys.pair(&r.coords, &r.coords), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weyl_orders() {
        assert_eq!(RootSystem::build(Family::A, 1, 0).unwrap().weyl_order(100), Some(2));
        assert_eq!(RootSystem::build(Family::A, 2, 0).unwrap().weyl_order(100), Some(6));
        assert_eq!(RootSystem::build(Family::B, 2, 0).unwrap().weyl_order(100), Some(8));
        assert_eq!(RootSystem::build(Family::D, 3, 0).unwrap().weyl_order(100), Some(24));
        assert_eq!(RootSystem::toric(3).weyl_order(100), Some(1));
    }

    #[test]
    fn reflection_preserves_norm_and_is_involutive() {
        let sys = RootSystem::build(Family::B, 2, 1).unwrap();
        let x = vec![0.7, -0.3, 1.9];
        for alpha in &sys.simple_roots {
            let y = sys.reflect(&x, alpha);
            assert_relative_eq!(sys.norm(&y), sys.norm(&x), epsilon = 1e-12);
            let z = sys.reflect(&y, alpha);
            for (a, b) in z.iter().zip(&x) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chamber_membership_is_strict() {
        let sys = RootSystem::build(Family::A, 2, 0).unwrap();
        // The first simple root comes out as (sqrt 2, 0), so its wall is the
        // x2 axis and (0, 1) sits on it exactly.
        let alpha1 = sys.simple_roots[0].clone();
        assert!(alpha1[1].abs() < 1e-15);
        let wall_point = [0.0, 1.0];
        assert_eq!(sys.pair(&alpha1, &wall_point), 0.0);
        let idx = sys
            .positive_roots
            .iter()
            .position(|r| r.simple_coeffs == [1, 0])
            .unwrap();
        assert!(!sys.in_chamber(&wall_point, &[idx]));
        assert!(sys.in_positive_chamber(&sys.two_rho()));
    }

    #[test]
    fn dominant_points_have_positive_pairings() {
        // 2 rho is dominant and regular: pairs strictly positively with all.
        for family in [Family::A, Family::B, Family::C] {
            let sys = RootSystem::build(family, 2, 0).unwrap();
            let two_rho = sys.two_rho();
            assert!(sys.in_positive_chamber(&two_rho));
        }
    }

    #[test]
    fn center_split_is_orthogonal_and_exact() {
        let sys = RootSystem::build(Family::A, 1, 1).unwrap();
        // Coroot of the single root plus a central offset.
        let alpha = sys.positive_roots[0].coords.clone();
        let coroot: Vec<f64> = alpha.iter().map(|v| v * 2.0 / sys.pair(&alpha, &alpha)).collect();
        let x: Vec<f64> = coroot.iter().zip(&[0.0, 3.0]).map(|(a, b)| a + b).collect();
        let (center, semi) = sys.project_center(&x);
        assert_relative_eq!(center[1], 3.0, epsilon = 1e-12);
        for (s, c) in semi.iter().zip(&coroot) {
            assert_relative_eq!(s, c, epsilon = 1e-12);
        }
        // Norm splits.
        let total = sys.pair(&x, &x);
        let parts = sys.pair(&center, &center) + sys.pair(&semi, &semi);
        assert_relative_eq!(total, parts, epsilon = 1e-12);
    }

    #[test]
    fn center_dim_zero_projects_to_identity() {
        let sys = RootSystem::build(Family::B, 2, 0).unwrap();
        let x = vec![0.4, -1.2];
        let (center, semi) = sys.project_center(&x);
        assert!(center.iter().all(|&v| v == 0.0));
        assert_eq!(semi, x);
    }

    #[test]
    fn two_rho_is_center_orthogonal() {
        let sys = RootSystem::build(Family::B, 2, 2).unwrap();
        let two_rho = sys.two_rho();
        for c in &sys.center_basis {
            assert!(sys.pair(&two_rho, c).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_model_of_a2_validates() {
        // A_2 as e_i - e_j inside R^3; the diagonal becomes a center line.
        let simples = vec![vec![1.0, -1.0, 0.0], vec![0.0, 1.0, -1.0]];
        let sys = RootSystem::from_simple_roots(simples, 3, None).unwrap();
        assert_eq!(sys.positive_roots.len(), 3);
        assert_eq!(sys.center_dim, 1);
        assert_eq!(sys.weyl_order(100), Some(6));
        let diag = 1.0 / 3.0f64.sqrt();
        let c = &sys.center_basis[0];
        assert!(c.iter().all(|&v| (v.abs() - diag).abs() < 1e-9));
    }

    #[test]
    fn gram_override_must_stay_block_diagonal() {
        let sys = RootSystem::build(Family::A, 1, 1).unwrap();
        let mut mixing = DMatrix::identity(2, 2);
        mixing[(0, 1)] = 0.3;
        mixing[(1, 0)] = 0.3;
        assert!(sys.clone().with_gram(mixing).is_err());
        let scaled = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        let rescaled = sys.with_gram(scaled).unwrap();
        let alpha = &rescaled.positive_roots[0].coords;
        assert_relative_eq!(rescaled.pair(alpha, alpha), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn build_rejects_low_ranks() {
        assert!(RootSystem::build(Family::B, 1, 0).is_err());
        assert!(RootSystem::build(Family::Toric, 2, 1).is_err());
    }
}
