//! Reduced geometry of the Monge-Ampere problem: which positive roots carry
//! sinh factors, which carry polynomial factors, and how gradients are
//! shifted. One type covers the group case, horosymmetric reductions, and
//! the degenerate limits; presets differ only in exponents and the shift.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rootsys::RootSystem;
use std::sync::Arc;

/// Tolerance for declaring a point to be on a chamber wall, relative to
/// max(1, |x|).
pub const WALL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightedRoot {
    /// Index into `RootSystem::positive_roots`.
    pub index: usize,
    pub exponent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Group,
    Horosymmetric,
    DegenerateLimit,
}

impl std::fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GeometryKind::Group => "group",
            GeometryKind::Horosymmetric => "horosymmetric",
            GeometryKind::DegenerateLimit => "degenerate-limit",
        };
        f.write_str(s)
    }
}

/// Data of one reduced equation pi(grad psi + shift) det Hess psi = J e^{-psi}.
#[derive(Debug, Clone)]
pub struct ReducedGeometry {
    rootsys: Arc<RootSystem>,
    pub kind: GeometryKind,
    /// sinh factors of J, with exponents.
    pub j_roots: Vec<WeightedRoot>,
    /// Polynomial factors of pi, with exponents.
    pub pi_roots: Vec<WeightedRoot>,
    /// Unipotent block: roots of pi that have no sinh partner.
    pub phi_u: Vec<usize>,
    /// Added to gradients inside the pi factors; shift_multiplier * rho_u.
    pub grad_shift: Vec<f64>,
    /// Roots whose walls bound the evaluation cone.
    pub cone_roots: Vec<usize>,
    /// Half sum of the phi_u roots.
    pub rho_u: Vec<f64>,
    pub shift_multiplier: f64,
}

impl ReducedGeometry {
    /// Group case: every positive root carries sinh^2 and a squared pairing,
    /// no shift, full chamber.
    pub fn group(rootsys: Arc<RootSystem>) -> Self {
        let all: Vec<WeightedRoot> = (0..rootsys.positive_roots.len())
            .map(|index| WeightedRoot { index, exponent: 2 })
            .collect();
        let cone = all.iter().map(|w| w.index).collect();
        let dim = rootsys.dim();
        Self {
            rootsys,
            kind: GeometryKind::Group,
            j_roots: all.clone(),
            pi_roots: all,
            phi_u: Vec::new(),
            grad_shift: vec![0.0; dim],
            cone_roots: cone,
            rho_u: vec![0.0; dim],
            shift_multiplier: 0.0,
        }
    }

    /// Horosymmetric reduction with unipotent block `phi_u` (indices into the
    /// positive roots). The complement keeps multiplicity-one sinh factors;
    /// gradients are shifted by 2 rho_u unless overridden.
    pub fn horosymmetric(
        rootsys: Arc<RootSystem>,
        phi_u: Vec<usize>,
        shift_multiplier: Option<f64>,
    ) -> Result<Self> {
        Self::with_unipotent(
            rootsys,
            phi_u,
            GeometryKind::Horosymmetric,
            1,
            shift_multiplier.unwrap_or(2.0),
        )
    }

    /// Degenerate limit of a group reduction along `phi_u`: the complement
    /// keeps sinh^2 factors, pi keeps all squared pairings, and the gradient
    /// shift doubles to 4 rho_u unless overridden.
    pub fn degenerate_limit(
        rootsys: Arc<RootSystem>,
        phi_u: Vec<usize>,
        shift_multiplier: Option<f64>,
    ) -> Result<Self> {
        Self::with_unipotent(
            rootsys,
            phi_u,
            GeometryKind::DegenerateLimit,
            2,
            shift_multiplier.unwrap_or(4.0),
        )
    }

    fn with_unipotent(
        rootsys: Arc<RootSystem>,
        mut phi_u: Vec<usize>,
        kind: GeometryKind,
        exponent: u32,
        shift_multiplier: f64,
    ) -> Result<Self> {
        if shift_multiplier != 2.0 && shift_multiplier != 4.0 {
            return Err(Error::Input(format!(
                "shift multiplier must be 2 or 4, got {shift_multiplier}"
            )));
        }
        phi_u.sort_unstable();
        phi_u.dedup();
        let count = rootsys.positive_roots.len();
        if let Some(&bad) = phi_u.iter().find(|&&i| i >= count) {
            return Err(Error::Input(format!(
                "phi_u index {bad} out of range (only {count} positive roots)"
            )));
        }
        let complement: Vec<usize> = (0..count).filter(|i| !phi_u.contains(i)).collect();
        let j_roots: Vec<WeightedRoot> = complement
            .iter()
            .map(|&index| WeightedRoot { index, exponent })
            .collect();
        let mut pi_roots = j_roots.clone();
        pi_roots.extend(phi_u.iter().map(|&index| WeightedRoot { index, exponent }));
        pi_roots.sort_by_key(|w| w.index);
        let dim = rootsys.dim();
        let mut rho_u = vec![0.0; dim];
        for &i in &phi_u {
            for (acc, &c) in rho_u.iter_mut().zip(&rootsys.positive_roots[i].coords) {
                *acc += 0.5 * c;
            }
        }
        let grad_shift: Vec<f64> = rho_u.iter().map(|v| v * shift_multiplier).collect();
        Ok(Self {
            rootsys,
            kind,
            j_roots,
            pi_roots,
            phi_u,
            grad_shift,
            cone_roots: complement,
            rho_u,
            shift_multiplier,
        })
    }

    pub fn rootsys(&self) -> &Arc<RootSystem> {
        &self.rootsys
    }

    pub fn dim(&self) -> usize {
        self.rootsys.dim()
    }

    /// r + sum of pi exponents: complex dimension of the model the reduction
    /// came from (group case r + 2 #Phi+, toric r).
    pub fn dimension_hint(&self) -> usize {
        self.rootsys.dim() + self.pi_roots.iter().map(|w| w.exponent as usize).sum::<usize>()
    }

    /// Domain shift for moment-side integrals: half the gradient shift, so
    /// the shifted domain 2(P+ + s) matches the gradient image of the flow
    /// variable under a change of variables.
    pub fn domain_shift(&self) -> Vec<f64> {
        self.grad_shift.iter().map(|v| 0.5 * v).collect()
    }

    /// Sum over the distinct roots of pi; the barycenter criterion compares
    /// against this point.
    pub fn two_rho_pi(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim()];
        for w in &self.pi_roots {
            for (si, &c) in s.iter_mut().zip(&self.rootsys.positive_roots[w.index].coords) {
                *si += c;
            }
        }
        s
    }

    fn wall_check(&self, x: &[f64]) -> Result<()> {
        let scale = self.rootsys.norm(x).max(1.0);
        for w in &self.j_roots {
            let root = &self.rootsys.positive_roots[w.index];
            let p = self.rootsys.pair(&root.coords, x);
            if p.abs() <= WALL_TOL * scale {
                return Err(Error::Wall {
                    root: format!("positive root {} {:?}", w.index, root.simple_coeffs),
                    value: p,
                });
            }
        }
        Ok(())
    }

    /// J(x) = prod |sinh <alpha, x>|^m. The absolute value makes the group
    /// case (even exponents) Weyl-invariant as written; callers that need the
    /// cone interior should gate on `wall_check` semantics, which this does.
    pub fn eval_j_product(&self, x: &[f64]) -> Result<f64> {
        self.wall_check(x)?;
        let mut out = 1.0;
        for w in &self.j_roots {
            let p = self
                .rootsys
                .pair(&self.rootsys.positive_roots[w.index].coords, x);
            out *= p.sinh().abs().powi(w.exponent as i32);
        }
        Ok(out)
    }

    /// j(x) = -log J(x); +infinity on walls is reported as a wall error.
    pub fn eval_j(&self, x: &[f64]) -> Result<f64> {
        self.wall_check(x)?;
        let mut out = 0.0;
        for w in &self.j_roots {
            let p = self
                .rootsys
                .pair(&self.rootsys.positive_roots[w.index].coords, x);
            out -= f64::from(w.exponent) * p.sinh().abs().ln();
        }
        Ok(out)
    }

    /// pi(y) = prod (alpha, y)^m over the pi roots, evaluated as written
    /// (no shift, sign kept).
    pub fn eval_pi(&self, y: &[f64]) -> f64 {
        let mut out = 1.0;
        for w in &self.pi_roots {
            let p = self
                .rootsys
                .pair(&self.rootsys.positive_roots[w.index].coords, y);
            out *= p.powi(w.exponent as i32);
        }
        out
    }

    /// Block decomposition of the complex Hessian attached to (Hess, grad, x):
    /// the quarter real Hessian plus one block per root factor.
    pub fn complex_hessian_blocks(
        &self,
        hess: &[f64],
        grad: &[f64],
        x: &[f64],
    ) -> Result<ComplexHessian> {
        self.wall_check(x)?;
        let r = self.dim();
        debug_assert_eq!(hess.len(), r * r);
        let quarter: Vec<f64> = hess.iter().map(|v| v / 4.0).collect();
        let mut blocks = Vec::new();
        for w in &self.j_roots {
            let root = &self.rootsys.positive_roots[w.index];
            let pg = self.rootsys.pair(&root.coords, grad);
            let px = self.rootsys.pair(&root.coords, x);
            match w.exponent {
                2 => {
                    let b = 0.5 * pg;
                    let a = b * px.cosh() / px.sinh();
                    blocks.push(HessianBlock::Paired {
                        root: w.index,
                        a,
                        b,
                        det: b * b / (px.sinh() * px.sinh()),
                    });
                }
                1 => blocks.push(HessianBlock::Matched {
                    root: w.index,
                    value: 0.5 * pg / px.sinh(),
                }),
                m => {
                    return Err(Error::Geometry(format!(
                        "unsupported sinh exponent {m} on root {}",
                        w.index
                    )))
                }
            }
        }
        // Unipotent factors: one linear 1x1 block per exponent unit.
        for &i in &self.phi_u {
            let root = &self.rootsys.positive_roots[i];
            let pg = self.rootsys.pair(&root.coords, grad);
            let exponent = self
                .pi_roots
                .iter()
                .find(|w| w.index == i)
                .map_or(0, |w| w.exponent);
            for _ in 0..exponent {
                blocks.push(HessianBlock::Linear {
                    root: i,
                    value: 0.5 * pg,
                });
            }
        }
        Ok(ComplexHessian { quarter, blocks })
    }

    /// Complex Monge-Ampere value 2^{-(r+n)} det(Hess) pi(grad) / J(x) for a
    /// model of complex dimension n. Singular Hessians give 0.
    pub fn ma_complex(&self, hess: &[f64], grad: &[f64], x: &[f64], n: usize) -> Result<f64> {
        let r = self.dim();
        let j = self.eval_j_product(x)?;
        let det = linalg::det_small(hess, r);
        let pi = self.eval_pi(grad);
        Ok(2f64.powi(-((r + n) as i32)) * det * pi / j)
    }

    /// Pointwise positivity diagnostics of the candidate metric data.
    pub fn positivity_check(&self, hess: &[f64], grad: &[f64], x: &[f64]) -> PositivityReport {
        let r = self.dim();
        let hessian_pd = nalgebra::DMatrix::from_row_slice(r, r, hess)
            .cholesky()
            .is_some();
        let mut restricted_margin = f64::INFINITY;
        for w in &self.j_roots {
            let root = &self.rootsys.positive_roots[w.index];
            restricted_margin = restricted_margin.min(self.rootsys.pair(&root.coords, grad));
        }
        let shifted: Vec<f64> = grad.iter().zip(&self.grad_shift).map(|(g, s)| g + s).collect();
        let mut unipotent_margin = f64::INFINITY;
        for &i in &self.phi_u {
            let root = &self.rootsys.positive_roots[i];
            unipotent_margin = unipotent_margin.min(self.rootsys.pair(&root.coords, &shifted));
        }
        let _ = x;
        PositivityReport {
            hessian_pd,
            restricted_margin,
            unipotent_margin,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum HessianBlock {
    /// 2x2 block (1/2)(alpha, grad) [[coth, i], [-i, coth]]; det = b^2/sinh^2.
    Paired { root: usize, a: f64, b: f64, det: f64 },
    /// 1x1 factor (1/2)(alpha, grad)/sinh for multiplicity-one roots.
    Matched { root: usize, value: f64 },
    /// 1x1 factor (1/2)(beta, grad) with no sinh partner.
    Linear { root: usize, value: f64 },
}

impl HessianBlock {
    pub fn det(&self) -> f64 {
        match *self {
            HessianBlock::Paired { det, .. } => det,
            HessianBlock::Matched { value, .. } | HessianBlock::Linear { value, .. } => value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComplexHessian {
    /// Row-major r x r block Hess/4.
    pub quarter: Vec<f64>,
    pub blocks: Vec<HessianBlock>,
}

impl ComplexHessian {
    /// det(Hess/4) times the product of the root block determinants. Equals
    /// `ma_complex` at matching inputs; kept as an independent route so the
    /// identity stays testable.
    pub fn determinant(&self, r: usize) -> f64 {
        let mut out = linalg::det_small(&self.quarter, r);
        for b in &self.blocks {
            out *= b.det();
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PositivityReport {
    pub hessian_pd: bool,
    /// min (alpha, grad) over the sinh-bearing roots; +inf when none.
    pub restricted_margin: f64,
    /// min (beta, grad + shift) over phi_u; +inf when none.
    pub unipotent_margin: f64,
}

impl PositivityReport {
    pub fn all_clear(&self) -> bool {
        self.hessian_pd && self.restricted_margin > 0.0 && self.unipotent_margin > 0.0
    }
}
