//! Existence criteria on the moment side: weighted barycenters of the
//! chamber quotient, the soliton-vector solve, and the margin test of the
//! barycenter against the root-sum threshold.

use crate::error::{Error, Result};
use crate::geometry::ReducedGeometry;
use crate::polytope::MomentPolytope;
use crate::quad;
use serde::{Deserialize, Serialize};

/// Margins within this fraction of the region diameter count as boundary
/// cases rather than existence.
pub const MARGIN_TOL: f64 = 1e-8;

/// Gradient threshold of the soliton Newton solve, per admissible direction.
pub const NEWTON_TOL: f64 = 1e-10;

pub const NEWTON_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginStatus {
    Clear,
    Boundary,
    Violated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Margin {
    /// Index into the positive roots.
    pub root_index: usize,
    pub simple_coeffs: Vec<i64>,
    pub value: f64,
    pub status: MarginStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionReport {
    pub x: Vec<f64>,
    pub barycenter: Vec<f64>,
    pub margins: Vec<Margin>,
    pub exists: bool,
    /// Some margin sits inside the tolerance band: the strict test is
    /// numerically undecidable.
    pub boundary: bool,
    /// log of the mass ratio making the tilted density integrate to V0.
    pub normalization_constant: f64,
    pub v0: f64,
    /// Toric inputs degenerate the test to |barycenter| <= 1e-8.
    pub toric: bool,
    pub bar_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NecessaryStatus {
    Holds,
    Fails,
    NotApplicable,
}

/// Weighted moments of the criterion domain 2(P_+ + shift) under the tilt
/// exp pair(x, y) against the geometry's polynomial density.
pub(crate) struct Moments {
    pub log_z: f64,
    pub bar: Vec<f64>,
    /// Row-major covariance of y under the tilted density.
    pub cov: Vec<f64>,
}

pub(crate) fn moments(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    x: &[f64],
    pi_scale: f64,
) -> Result<Moments> {
    let sys = polytope.rootsys();
    let r = sys.dim();
    let shift = geom.domain_shift();
    let region = polytope.scaled_region(2.0, &shift, &geom.cone_roots);
    // Shift the exponent by its maximum over the region so the weight stays
    // inside the representable range for any x.
    let m_shift = region
        .vertices()?
        .iter()
        .map(|(v, _)| sys.pair(x, v))
        .fold(f64::NEG_INFINITY, f64::max);
    if !m_shift.is_finite() {
        return Err(Error::Quadrature("criterion domain is empty".into()));
    }
    let n_out = 1 + r + r * r;
    let raw = quad::integrate_region(
        &region,
        n_out,
        &|y, out| {
            let w = pi_scale * geom.eval_pi(y) * (sys.pair(x, y) - m_shift).exp();
            out[0] = w;
            for i in 0..r {
                out[1 + i] = w * y[i];
            }
            for i in 0..r {
                for j in 0..r {
                    out[1 + r + i * r + j] = w * y[i] * y[j];
                }
            }
        },
        1e-8,
    )?;
    let z = raw[0];
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::Numerical(format!(
            "criterion mass is not positive: {z}"
        )));
    }
    let bar: Vec<f64> = (0..r).map(|i| raw[1 + i] / z).collect();
    let mut cov = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            cov[i * r + j] = raw[1 + r + i * r + j] / z - bar[i] * bar[j];
        }
    }
    Ok(Moments {
        log_z: m_shift + z.ln(),
        bar,
        cov,
    })
}

/// Mass of the polynomial density over the criterion domain.
pub fn volume_v0(polytope: &MomentPolytope, geom: &ReducedGeometry) -> Result<f64> {
    let zero = vec![0.0; polytope.rootsys().dim()];
    Ok(moments(polytope, geom, &zero, 1.0)?.log_z.exp())
}

/// Tilted barycenter of the criterion domain.
pub fn barycenter(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    x: &[f64],
) -> Result<Vec<f64>> {
    Ok(moments(polytope, geom, x, 1.0)?.bar)
}

/// Minimize the log-partition function over the span of `basis`; the
/// minimizer is the unique vector whose tilted barycenter pairs to zero with
/// every admissible direction. Empty basis returns the origin.
pub fn solve_soliton_vector(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    basis: &[Vec<f64>],
) -> Result<Vec<f64>> {
    solve_soliton_scaled(polytope, geom, basis, 1.0)
}

pub(crate) fn solve_soliton_scaled(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    basis: &[Vec<f64>],
    pi_scale: f64,
) -> Result<Vec<f64>> {
    let sys = polytope.rootsys();
    let r = sys.dim();
    if basis.is_empty() {
        return Ok(vec![0.0; r]);
    }
    let k = basis.len();
    let gram_basis: Vec<Vec<f64>> = basis.iter().map(|a| sys.gram_apply(a)).collect();
    let mut coeffs = vec![0.0; k];
    let x_of = |c: &[f64]| {
        let mut x = vec![0.0; r];
        for (ck, a) in c.iter().zip(basis) {
            for (xi, ai) in x.iter_mut().zip(a) {
                *xi += ck * ai;
            }
        }
        x
    };
    let mut mom = moments(polytope, geom, &x_of(&coeffs), pi_scale)?;
    for _ in 0..NEWTON_MAX_ITER {
        let grad: Vec<f64> = gram_basis
            .iter()
            .map(|ga| ga.iter().zip(&mom.bar).map(|(a, b)| a * b).sum())
            .collect();
        if grad.iter().all(|g| g.abs() <= NEWTON_TOL) {
            return Ok(x_of(&coeffs));
        }
        let mut hess = nalgebra::DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for i in 0..r {
                    for j in 0..r {
                        s += gram_basis[a][i] * mom.cov[i * r + j] * gram_basis[b][j];
                    }
                }
                hess[(a, b)] = s;
            }
        }
        let g = nalgebra::DVector::from_column_slice(&grad);
        let step = hess
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::Numerical("singular soliton Newton system".into()))?;
        let slope: f64 = -step.dot(&g);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = coeffs
                .iter()
                .zip(step.iter())
                .map(|(c, s)| c - alpha * s)
                .collect();
            let trial_mom = moments(polytope, geom, &x_of(&trial), pi_scale)?;
            if trial_mom.log_z <= mom.log_z + 1e-4 * alpha * slope {
                coeffs = trial;
                mom = trial_mom;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::Numerical(
                    "soliton line search could not decrease the objective".into(),
                ));
            }
        }
    }
    Err(Error::Numerical(format!(
        "soliton Newton did not converge within {NEWTON_MAX_ITER} steps"
    )))
}

/// Margin test of the tilted barycenter against the sum of the density
/// roots. Strict positivity on every cone root declares existence; toric
/// inputs degenerate to a vanishing barycenter.
pub fn test_existence(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    x: &[f64],
) -> Result<CriterionReport> {
    test_existence_scaled(polytope, geom, x, 1.0)
}

pub(crate) fn test_existence_scaled(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    x: &[f64],
    pi_scale: f64,
) -> Result<CriterionReport> {
    let sys = polytope.rootsys();
    let zero = vec![0.0; sys.dim()];
    let base = moments(polytope, geom, &zero, pi_scale)?;
    let tilted = moments(polytope, geom, x, pi_scale)?;
    let v0 = base.log_z.exp();
    let shift = geom.domain_shift();
    let region = polytope.scaled_region(2.0, &shift, &geom.cone_roots);
    let (lo, hi) = region.bounding_box()?;
    let diam = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let tol = MARGIN_TOL * diam.max(1.0);
    let two_rho = geom.two_rho_pi();
    let diff: Vec<f64> = tilted.bar.iter().zip(&two_rho).map(|(b, r)| b - r).collect();
    let mut margins = Vec::new();
    for &i in &geom.cone_roots {
        let root = &sys.positive_roots[i];
        let value = sys.pair(&root.coords, &diff);
        let status = if value > tol {
            MarginStatus::Clear
        } else if value < -tol {
            MarginStatus::Violated
        } else {
            MarginStatus::Boundary
        };
        margins.push(Margin {
            root_index: i,
            simple_coeffs: root.simple_coeffs.clone(),
            value,
            status,
        });
    }
    let toric = geom.cone_roots.is_empty();
    let bar_norm = sys.norm(&tilted.bar);
    let exists = if toric {
        bar_norm <= MARGIN_TOL
    } else {
        margins.iter().all(|m| m.status == MarginStatus::Clear)
    };
    let boundary = margins.iter().any(|m| m.status == MarginStatus::Boundary);
    Ok(CriterionReport {
        x: x.to_vec(),
        barycenter: tilted.bar,
        margins,
        exists,
        boundary,
        normalization_constant: tilted.log_z - base.log_z,
        v0,
        toric,
        bar_norm,
    })
}

/// Both existence questions a run cares about: the test at the origin and
/// the test at the solved soliton vector. They differ exactly when the
/// barycenter is off-center, in which case `ke.exists` is false while the
/// tilt moves the barycenter home and `soliton.exists` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionPair {
    pub ke: CriterionReport,
    pub soliton: CriterionReport,
}

/// Runs the test at zero, solves the soliton vector over the center of the
/// root system (zero when the center is trivial), and tests again there.
pub fn full_report(polytope: &MomentPolytope, geom: &ReducedGeometry) -> Result<CriterionPair> {
    let sys = polytope.rootsys();
    let zero = vec![0.0; sys.dim()];
    let ke = test_existence(polytope, geom, &zero)?;
    let x = solve_soliton_vector(polytope, geom, &sys.center_basis)?;
    let soliton = test_existence(polytope, geom, &x)?;
    Ok(CriterionPair { ke, soliton })
}

/// Post-flow cross-check of the strict barycenter inequalities. A run that
/// did not converge with full mass cannot support the conclusion, so the
/// check is skipped as not applicable.
pub fn necessary_check(
    polytope: &MomentPolytope,
    geom: &ReducedGeometry,
    x: &[f64],
    flow_converged: Option<bool>,
) -> Result<(NecessaryStatus, Vec<Margin>)> {
    if flow_converged == Some(false) {
        return Ok((NecessaryStatus::NotApplicable, Vec::new()));
    }
    let report = test_existence(polytope, geom, x)?;
    let status = if report.exists {
        NecessaryStatus::Holds
    } else {
        NecessaryStatus::Fails
    };
    Ok((status, report.margins))
}
