//! Trajectory post-processing: long-time case taxonomy, extraction of the
//! degeneration data (the growing root set, the wall offset a0, the drift
//! vector Y), symbolic generators of the limit pair, and a pointwise residual
//! of the limit equation on a checkpoint.
//!
//! Everything here is pure function of recorded data; nothing steps the flow.

use crate::error::{Error, Result};
use crate::flow::{
    checkpoint_derivatives, leading_minors_positive, sample_checkpoint, Checkpoint, StepRecord,
    Trajectory,
};
use crate::geometry::ReducedGeometry;
use crate::grid::Grid;
use crate::linalg;
use crate::rootsys::RootSystem;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Relative tolerance for flagging an inconsistent a0 system.
const A0_TOL: f64 = 1e-6;
/// Below this gram norm a fitted vector counts as zero.
const ZERO_NORM: f64 = 1e-9;
/// Relative eigenvalue cutoff of the regression normal matrix.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// Bounded minimum point: the flow converges in place.
    Case1,
    /// Escape along the center only: soliton on the same space.
    Case2,
    /// Every root pairing grows: horospherical limit.
    #[serde(rename = "Case3_1")]
    Case31,
    /// A proper subset of the roots grows: limit along that subset.
    #[serde(rename = "Case3_2")]
    Case32,
    /// Growth tests disagree with the boundedness tests; no verdict.
    Inconclusive,
}

impl std::fmt::Display for CaseTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CaseTag::Case1 => "Case1",
            CaseTag::Case2 => "Case2",
            CaseTag::Case31 => "Case3_1",
            CaseTag::Case32 => "Case3_2",
            CaseTag::Inconclusive => "Inconclusive",
        };
        f.write_str(s)
    }
}

/// Decision thresholds. A root joins the growing set when its pairing with
/// x_t clears `a_grow` at the last record AND its fitted slope over the late
/// window clears `s_min`; the level test alone is not trusted at finite time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Boundedness radius for the first two cases (gram norm).
    pub r_bound: f64,
    /// Level a root pairing must clear at the final time.
    pub a_grow: f64,
    /// Minimum fitted slope per unit time for a growing pairing.
    pub s_min: f64,
    /// Fraction of the time span forming the late analysis window.
    pub window_fraction: f64,
    /// |<alpha_i, Y>| <= tangency_tol * |Y| declares a simple root tangent.
    pub tangency_tol: f64,
    /// Fewer records than this is an input error.
    pub min_records: usize,
    /// Gram radius of the recentered ball used for the h regression and the
    /// default limit-equation window.
    pub ball_radius: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            r_bound: 5.0,
            a_grow: 8.0,
            s_min: 0.05,
            window_fraction: 0.5,
            tangency_tol: 1e-6,
            min_records: 8,
            ball_radius: 2.0,
        }
    }
}

/// Growth diagnostics of one positive root over the late window.
#[derive(Debug, Clone, Serialize)]
pub struct RootGrowth {
    pub index: usize,
    pub label: String,
    /// <beta, x_t> at the last record.
    pub level: f64,
    /// Fitted slope of <beta, x_t> over the window.
    pub slope: f64,
    pub grows: bool,
}

/// Minimal-norm least-squares fit of <alpha', a0> = late-window mean of
/// <alpha', x_t> over the non-growing roots.
#[derive(Debug, Clone, Serialize)]
pub struct A0Estimate {
    pub a0: Vec<f64>,
    /// Sup of |<alpha', a0> - target| over the fitted equations.
    pub residual: f64,
    /// Residual beyond tolerance: the window means are not consistent with
    /// any single a0. The best fit is still returned.
    pub inconsistent: bool,
    /// Min of <alpha', a0> over the fitted roots; positive in a healthy fit,
    /// zero when there is nothing to fit.
    pub min_pairing: f64,
}

/// The two independent estimates of the drift vector, reported side by side
/// and never merged.
#[derive(Debug, Clone, Serialize)]
pub struct YEstimate {
    /// Per-coordinate fitted slope of x_t over the late window.
    pub y_drift: Vec<f64>,
    /// Regression of the recentered h field on the components of grad psi,
    /// averaged over the late-window checkpoints.
    pub y_hfit: Vec<f64>,
    /// Gram angle between the two estimates; zero when either vanishes.
    pub angle: f64,
    /// |norm difference| relative to the larger norm; zero when both vanish.
    pub rel_norm_gap: f64,
    /// Set when the regression was rank-deficient, had too few samples, or
    /// fewer than two checkpoints fell in the window.
    pub rank_warning: bool,
    pub checkpoints_used: usize,
    /// Sup of |<alpha', Y>| over the non-growing roots, per estimate.
    pub drift_orthogonality: f64,
    pub hfit_orthogonality: f64,
}

/// Symbolic generator lists of the limit pair, plus the fourfold partition
/// of the positive roots that produced them.
#[derive(Debug, Clone, Serialize)]
pub struct LieData {
    /// Simple roots outside the growing set.
    pub tangent_simple: Vec<usize>,
    /// Simple roots inside the growing set.
    pub other_simple: Vec<usize>,
    /// Non-simple roots supported on the tangent simples only.
    pub tangent_combinations: Vec<usize>,
    /// Non-simple roots meeting a non-tangent simple.
    pub remaining: Vec<usize>,
    pub h_generators: Vec<String>,
    pub p_generators: Vec<String>,
}

/// Serializable face of the limit geometry: root index lists with exponents,
/// the gradient shift, and the cone walls.
#[derive(Debug, Clone, Serialize)]
pub struct LimitSummary {
    pub kind: String,
    pub j_roots: Vec<(usize, u32)>,
    pub pi_roots: Vec<(usize, u32)>,
    pub grad_shift: Vec<f64>,
    pub cone_roots: Vec<usize>,
}

/// Pointwise residual of the limit equation over a lattice window.
#[derive(Debug, Clone, Serialize)]
pub struct LimitResidual {
    /// Sup of |log lhs - log rhs| after the optimal constant shift.
    pub sup: f64,
    pub radius_used: f64,
    /// The requested window left the grid and was shrunk.
    pub shrunk: bool,
    pub samples: usize,
    /// Nodes skipped for degenerate factors or cone walls.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationResult {
    pub case_tag: CaseTag,
    /// Indices of the growing positive roots, ascending.
    pub phi_u: Vec<usize>,
    /// Unit escape direction at the last record; zero when bounded.
    pub x_infinity: Vec<f64>,
    pub a0: Vec<f64>,
    pub a0_residual: f64,
    pub a0_inconsistent: bool,
    pub a0_min_pairing: f64,
    pub y: YEstimate,
    pub growth: Vec<RootGrowth>,
    /// Sup of |x_t| over the window, and of its root-span part.
    pub sup_norm_window: f64,
    pub sup_semisimple_window: f64,
    pub window_start: f64,
    pub records_used: usize,
    pub thresholds: Thresholds,
    pub lie_data: LieData,
    pub limit_summary: LimitSummary,
    #[serde(skip)]
    pub limit_geometry: ReducedGeometry,
    /// Residual of the limit equation on the last checkpoint, when one
    /// exists and the evaluation succeeds.
    pub limit_residual: Option<LimitResidual>,
    /// Which Y estimate fed the residual: "hfit" or "drift".
    pub residual_y_source: Option<String>,
}

/// Sort a trajectory into the case taxonomy and assemble the full
/// degeneration report. The decision sequence: bounded x_t, then bounded
/// root-span part, then per-root growth; growth tests that disagree (a
/// pairing above level without slope, or no grower at all) end Inconclusive.
pub fn classify(
    geom: &ReducedGeometry,
    traj: &Trajectory,
    thresholds: &Thresholds,
) -> Result<ClassificationResult> {
    let rs = geom.rootsys();
    let records = &traj.records;
    if records.len() < thresholds.min_records {
        return Err(Error::Input(format!(
            "trajectory too short: {} records, need at least {}",
            records.len(),
            thresholds.min_records
        )));
    }
    let window = late_window(records, thresholds.window_fraction)?;
    let mut sup_norm: f64 = 0.0;
    let mut sup_ss: f64 = 0.0;
    for rec in window {
        sup_norm = sup_norm.max(rs.norm(&rec.x_t));
        let (_, ss) = rs.project_center(&rec.x_t);
        sup_ss = sup_ss.max(rs.norm(&ss));
    }
    let last = records.last().expect("length checked");
    let ts: Vec<f64> = window.iter().map(|r| r.t).collect();
    let growth: Vec<RootGrowth> = rs
        .positive_roots
        .iter()
        .enumerate()
        .map(|(index, root)| {
            let level = rs.pair(&root.coords, &last.x_t);
            let vals: Vec<f64> = window.iter().map(|r| rs.pair(&root.coords, &r.x_t)).collect();
            let slope = lsq_slope(&ts, &vals);
            RootGrowth {
                index,
                label: format!("{:?}", root.simple_coeffs),
                level,
                slope,
                grows: level > thresholds.a_grow && slope > thresholds.s_min,
            }
        })
        .collect();
    let n_roots = rs.positive_roots.len();
    let (case_tag, phi_u) = if sup_norm <= thresholds.r_bound {
        (CaseTag::Case1, Vec::new())
    } else if sup_ss <= thresholds.r_bound {
        (CaseTag::Case2, Vec::new())
    } else {
        let phi_u: Vec<usize> = growth.iter().filter(|g| g.grows).map(|g| g.index).collect();
        let mixed = growth
            .iter()
            .any(|g| g.level > thresholds.a_grow && g.slope <= thresholds.s_min);
        let tag = if mixed || phi_u.is_empty() {
            CaseTag::Inconclusive
        } else if phi_u.len() == n_roots {
            CaseTag::Case31
        } else {
            CaseTag::Case32
        };
        (tag, phi_u)
    };
    let x_infinity = {
        let n = rs.norm(&last.x_t);
        if n > ZERO_NORM {
            last.x_t.iter().map(|v| v / n).collect()
        } else {
            vec![0.0; rs.dim()]
        }
    };
    let a0 = estimate_a0(rs, traj, &phi_u, thresholds.window_fraction)?;
    let y = estimate_y(geom, traj, &phi_u, thresholds)?;
    let (y_used, y_source) = if !y.rank_warning && y.checkpoints_used > 0 {
        (y.y_hfit.clone(), "hfit")
    } else {
        (y.y_drift.clone(), "drift")
    };
    let (lie_data, limit_geometry) = degeneration_from_phi_u(rs, &phi_u, &y_used)?;
    let (limit_res, res_source) = match traj.checkpoints.last() {
        Some(ck) => match limit_residual(ck, &y_used, &limit_geometry, &a0.a0, thresholds.ball_radius)
        {
            Ok(res) => (Some(res), Some(y_source.to_string())),
            Err(_) => (None, None),
        },
        None => (None, None),
    };
    Ok(ClassificationResult {
        case_tag,
        phi_u,
        x_infinity,
        a0_residual: a0.residual,
        a0_inconsistent: a0.inconsistent,
        a0_min_pairing: a0.min_pairing,
        a0: a0.a0,
        y,
        growth,
        sup_norm_window: sup_norm,
        sup_semisimple_window: sup_ss,
        window_start: window[0].t,
        records_used: window.len(),
        thresholds: thresholds.clone(),
        lie_data,
        limit_summary: summarize(&limit_geometry),
        limit_geometry,
        limit_residual: limit_res,
        residual_y_source: res_source,
    })
}

/// Wall offset of the limit: minimal-norm least squares on
/// <alpha', a0> = (late-window mean of <alpha', x_t>) over the roots outside
/// `phi_u`. With nothing outside, a0 = 0.
pub fn estimate_a0(
    rs: &RootSystem,
    traj: &Trajectory,
    phi_u: &[usize],
    window_fraction: f64,
) -> Result<A0Estimate> {
    let r = rs.dim();
    let complement: Vec<usize> = (0..rs.positive_roots.len())
        .filter(|i| !phi_u.contains(i))
        .collect();
    if complement.is_empty() {
        return Ok(A0Estimate {
            a0: vec![0.0; r],
            residual: 0.0,
            inconsistent: false,
            min_pairing: 0.0,
        });
    }
    let window = late_window(&traj.records, window_fraction)?;
    let k = complement.len();
    let mut a = DMatrix::zeros(k, r);
    let mut b = DVector::zeros(k);
    for (row, &i) in complement.iter().enumerate() {
        let galpha = rs.gram_apply(&rs.positive_roots[i].coords);
        for (col, &v) in galpha.iter().enumerate() {
            a[(row, col)] = v;
        }
        let mean = window
            .iter()
            .map(|rec| rs.pair(&rs.positive_roots[i].coords, &rec.x_t))
            .sum::<f64>()
            / window.len() as f64;
        b[row] = mean;
    }
    let atb = a.transpose() * &b;
    let ata = a.transpose() * &a;
    let (x, _) = pinv_solve(&ata, &atb);
    let fit = &a * &x;
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for row in 0..k {
        residual = residual.max((fit[row] - b[row]).abs());
        scale = scale.max(b[row].abs());
    }
    let a0: Vec<f64> = x.iter().copied().collect();
    let min_pairing = complement
        .iter()
        .map(|&i| rs.pair(&rs.positive_roots[i].coords, &a0))
        .fold(f64::INFINITY, f64::min);
    Ok(A0Estimate {
        a0,
        residual,
        inconsistent: residual > A0_TOL * scale,
        min_pairing,
    })
}

/// The two drift estimates. The slope fit needs only records; the h
/// regression needs checkpoints in the late window and samples the field
/// around the recentered origin. Failure modes degrade to `rank_warning`,
/// never to a hard error, so classification can proceed without checkpoints.
pub fn estimate_y(
    geom: &ReducedGeometry,
    traj: &Trajectory,
    phi_u: &[usize],
    thresholds: &Thresholds,
) -> Result<YEstimate> {
    let rs = geom.rootsys();
    let r = rs.dim();
    let window = late_window(&traj.records, thresholds.window_fraction)?;
    let ts: Vec<f64> = window.iter().map(|rec| rec.t).collect();
    let mut y_drift = vec![0.0; r];
    for a in 0..r {
        let vals: Vec<f64> = window.iter().map(|rec| rec.x_t[a]).collect();
        y_drift[a] = lsq_slope(&ts, &vals);
    }
    let cut = window[0].t;
    let cks: Vec<&Checkpoint> = traj.checkpoints.iter().filter(|c| c.t >= cut).collect();
    let mut rank_warning = cks.len() < 2;
    let mut coefs: Vec<Vec<f64>> = Vec::new();
    for ck in &cks {
        let x_t = nearest_x_t(&traj.records, ck.t);
        let samples = sample_checkpoint(geom, ck)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut targets: Vec<f64> = Vec::new();
        for s in &samples {
            let rel: Vec<f64> = s.x.iter().zip(&x_t).map(|(a, b)| a - b).collect();
            if rs.norm(&rel) > thresholds.ball_radius {
                continue;
            }
            let mut row = rs.gram_apply(&s.y);
            row.push(1.0);
            rows.push(row);
            targets.push(s.h);
        }
        if rows.len() < r + 2 {
            rank_warning = true;
            continue;
        }
        let m = rows.len();
        let design = DMatrix::from_fn(m, r + 1, |i, j| rows[i][j]);
        let rhs = DVector::from_fn(m, |i, _| targets[i]);
        let ata = design.transpose() * &design;
        let atb = design.transpose() * rhs;
        let (beta, eig_ratio) = pinv_solve(&ata, &atb);
        if eig_ratio < RANK_TOL {
            rank_warning = true;
        }
        coefs.push(beta.iter().take(r).copied().collect());
    }
    let y_hfit = if coefs.is_empty() {
        vec![0.0; r]
    } else {
        let mut mean = vec![0.0; r];
        for c in &coefs {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v / coefs.len() as f64;
            }
        }
        mean
    };
    let nd = rs.norm(&y_drift);
    let nh = rs.norm(&y_hfit);
    let angle = if nd > ZERO_NORM && nh > ZERO_NORM {
        (rs.pair(&y_drift, &y_hfit) / (nd * nh)).clamp(-1.0, 1.0).acos()
    } else {
        0.0
    };
    let rel_norm_gap = if nd.max(nh) > ZERO_NORM {
        (nd - nh).abs() / nd.max(nh)
    } else {
        0.0
    };
    let orth = |y: &[f64]| {
        (0..rs.positive_roots.len())
            .filter(|i| !phi_u.contains(i))
            .map(|i| rs.pair(&rs.positive_roots[i].coords, y).abs())
            .fold(0.0f64, f64::max)
    };
    Ok(YEstimate {
        drift_orthogonality: orth(&y_drift),
        hfit_orthogonality: orth(&y_hfit),
        y_drift,
        y_hfit,
        angle,
        rel_norm_gap,
        rank_warning,
        checkpoints_used: coefs.len(),
    })
}

/// Degeneration attached to a drift vector in the closed dominant chamber:
/// the simple roots split into tangent (pairing zero within tolerance) and
/// the rest, and a positive root joins the growing set exactly when its
/// support meets a non-tangent simple.
pub fn build_degeneration(
    rs: &Arc<RootSystem>,
    y: &[f64],
    tangency_tol: f64,
) -> Result<(LieData, ReducedGeometry)> {
    let scale = rs.norm(y);
    for (i, root) in rs.positive_roots.iter().enumerate() {
        let p = rs.pair(&root.coords, y);
        if p < -tangency_tol * scale {
            return Err(Error::Input(format!(
                "Y lies outside the closed dominant chamber: <alpha, Y> = {p:e} \
                 on root {} {:?}; reflect it into the chamber first",
                i, root.simple_coeffs
            )));
        }
    }
    let tangent: Vec<bool> = rs
        .simple_roots
        .iter()
        .map(|alpha| rs.pair(alpha, y).abs() <= tangency_tol * scale)
        .collect();
    let phi_u: Vec<usize> = rs
        .positive_roots
        .iter()
        .enumerate()
        .filter(|(_, root)| {
            root.simple_coeffs
                .iter()
                .enumerate()
                .any(|(j, &c)| c != 0 && !tangent[j])
        })
        .map(|(i, _)| i)
        .collect();
    degeneration_from_phi_u(rs, &phi_u, y)
}

/// Degeneration from an explicit growing set: the fourfold partition of the
/// positive roots, the symbolic generator lists of the limit pair, and the
/// limit geometry (kept sinh factors squared on the complement, all pairing
/// factors squared, gradient shift 4 rho_u, cone walled by the complement).
pub fn degeneration_from_phi_u(
    rs: &Arc<RootSystem>,
    phi_u: &[usize],
    y: &[f64],
) -> Result<(LieData, ReducedGeometry)> {
    let n = rs.positive_roots.len();
    if let Some(&bad) = phi_u.iter().find(|&&i| i >= n) {
        return Err(Error::Input(format!(
            "phi_u index {bad} out of range (only {n} positive roots)"
        )));
    }
    let in_u = |i: &usize| phi_u.contains(i);
    let mut tangent_simple = Vec::new();
    let mut other_simple = Vec::new();
    let mut tangent_combinations = Vec::new();
    let mut remaining = Vec::new();
    for (i, root) in rs.positive_roots.iter().enumerate() {
        match (root.height == 1, in_u(&i)) {
            (true, false) => tangent_simple.push(i),
            (true, true) => other_simple.push(i),
            (false, false) => tangent_combinations.push(i),
            (false, true) => remaining.push(i),
        }
    }
    let complement: Vec<usize> = tangent_simple
        .iter()
        .chain(&tangent_combinations)
        .copied()
        .collect();
    let r = rs.dim();
    let label = |i: usize| format!("{:?}", rs.positive_roots[i].simple_coeffs);
    let mut h_generators = Vec::new();
    if rs.norm(y) > ZERO_NORM {
        h_generators.push("(Y, Y)".to_string());
        for k in 1..r {
            h_generators.push(format!("diag(Y_perp[{k}])"));
        }
    } else {
        for k in 1..=r {
            h_generators.push(format!("diag(E_{k})"));
        }
    }
    for &i in &complement {
        let l = label(i);
        h_generators.push(format!("(X_{l}, X_{l})"));
        h_generators.push(format!("(X_-{l}, X_-{l})"));
    }
    for &i in phi_u {
        let l = label(i);
        h_generators.push(format!("(X_{l}, 0)"));
        h_generators.push(format!("(0, X_-{l})"));
    }
    let mut p_generators = Vec::new();
    for i in 1..=r {
        for j in 1..=r {
            p_generators.push(format!("(E_{i}, E_{j})"));
        }
    }
    for &i in &complement {
        for &j in &complement {
            p_generators.push(format!("(X_{}, X_{})", label(i), label(j)));
        }
    }
    for &i in &complement {
        for &j in &complement {
            p_generators.push(format!("(X_-{}, X_-{})", label(i), label(j)));
        }
    }
    for &i in phi_u {
        let l = label(i);
        p_generators.push(format!("(X_{l}, 0)"));
        p_generators.push(format!("(0, X_-{l})"));
    }
    let limit = ReducedGeometry::degenerate_limit(Arc::clone(rs), phi_u.to_vec(), None)?;
    Ok((
        LieData {
            tangent_simple,
            other_simple,
            tangent_combinations,
            remaining,
            h_generators,
            p_generators,
        },
        limit,
    ))
}

/// Sup over a lattice window of |log lhs - log rhs| of the limit equation,
/// after subtracting the window mean (the free additive constant).
///
/// The field is recentered at the checkpoint's own minimum of psi + j_limit;
/// the window is a gram ball around the recentered origin sampled on exact
/// lattice nodes, so the only discretization error is the finite-difference
/// truncation of the derivatives. Nodes where a factor degenerates or the
/// cone wall is hit are skipped; a window that would leave the grid is
/// shrunk and flagged.
pub fn limit_residual(
    ck: &Checkpoint,
    y: &[f64],
    limit_geom: &ReducedGeometry,
    a0: &[f64],
    window_radius: f64,
) -> Result<LimitResidual> {
    let grid = Grid::from_parts(ck.dims.clone(), ck.origin.clone(), ck.spacing.clone())?;
    if ck.psi.len() != grid.len() {
        return Err(Error::Input(
            "checkpoint field length disagrees with its grid".into(),
        ));
    }
    let d = grid.dim();
    let rs = limit_geom.rootsys();
    if y.len() != d || a0.len() != d {
        return Err(Error::Input(
            "Y and a0 must match the checkpoint dimension".into(),
        ));
    }
    if !(window_radius > 0.0) {
        return Err(Error::Input("window radius must be positive".into()));
    }
    // Recentering point: interior lattice minimum of psi + j_limit. Nodes on
    // or across the limit-cone walls do not compete.
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; d];
    for flat in 0..grid.len() {
        grid.unflatten(flat, &mut idx);
        if grid.is_edge(&idx) {
            continue;
        }
        let x = grid.node(&idx);
        let j = match limit_geom.eval_j(&x) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let w = ck.psi[flat] + j;
        if best.as_ref().map_or(true, |(b, _)| w < *b) {
            best = Some((w, idx.clone()));
        }
    }
    let (_, xt_idx) =
        best.ok_or_else(|| Error::Numerical("no interior node clear of the cone walls".into()))?;
    let x_t = grid.node(&xt_idx);
    // Base node: nearest lattice node to x_t + a0. Offsets from it stay on
    // the lattice; the recentered coordinate absorbs the snap remainder.
    let mut base = vec![0usize; d];
    for a in 0..d {
        let target = x_t[a] + a0[a];
        let i = ((target - grid.origin[a]) / grid.spacing[a]).round() as i64;
        base[a] = i.clamp(1, grid.dims[a] as i64 - 2) as usize;
    }
    let mut radius_used = window_radius;
    for a in 0..d {
        let left = (base[a] - 1) as f64 * grid.spacing[a];
        let right = (grid.dims[a] - 2 - base[a]) as f64 * grid.spacing[a];
        radius_used = radius_used.min(left.max(0.0)).min(right.max(0.0));
    }
    let shrunk = radius_used < window_radius - 1e-12;
    let shift_center: Vec<f64> = (0..d).map(|a| x_t[a] + a0[a]).collect();
    let g_shift = rs.gram_apply(&limit_geom.grad_shift);
    let mut diffs: Vec<f64> = Vec::new();
    let mut skipped = 0usize;
    let steps: Vec<i64> = (0..d)
        .map(|a| (radius_used / grid.spacing[a]).floor() as i64)
        .collect();
    let mut offset = vec![-steps[0] - 1; d.max(1)];
    offset[0] = -steps[0] - 1;
    for a in 1..d {
        offset[a] = -steps[a];
    }
    'outer: loop {
        // Odometer over the offset box.
        let mut a = 0;
        loop {
            offset[a] += 1;
            if offset[a] <= steps[a] {
                break;
            }
            offset[a] = -steps[a];
            a += 1;
            if a == d {
                break 'outer;
            }
        }
        let r2: f64 = (0..d)
            .map(|a| (offset[a] as f64 * grid.spacing[a]).powi(2))
            .sum();
        if r2 > radius_used * radius_used + 1e-12 {
            continue;
        }
        let node_idx: Vec<usize> = (0..d)
            .map(|a| (base[a] as i64 + offset[a]) as usize)
            .collect();
        let flat = grid.flatten(&node_idx);
        let z = grid.node(&node_idx);
        let x: Vec<f64> = z.iter().zip(&shift_center).map(|(zi, ci)| zi - ci).collect();
        let jprod = match limit_geom.eval_j_product(&x) {
            Ok(v) if v > 0.0 => v,
            _ => {
                skipped += 1;
                continue;
            }
        };
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        checkpoint_derivatives(&grid, &ck.psi, &node_idx, &mut grad, &mut hess);
        let det = linalg::det_small(&hess, d);
        if !leading_minors_positive(&hess, d) || !(det > 0.0) {
            skipped += 1;
            continue;
        }
        let mut lhs = det.ln();
        let mut bad = false;
        for w in &limit_geom.pi_roots {
            let num = linalg::dot(&rs.positive_roots[w.index].coords, &grad);
            if num == 0.0 || !num.is_finite() {
                bad = true;
                break;
            }
            lhs += f64::from(w.exponent) * num.abs().ln();
        }
        if bad {
            skipped += 1;
            continue;
        }
        let phi = ck.psi[flat] - rs.pair(&limit_geom.grad_shift, &x);
        let grad_phi: Vec<f64> = grad.iter().zip(&g_shift).map(|(g, s)| g - s).collect();
        let rhs = jprod.ln() - phi - linalg::dot(y, &grad_phi);
        diffs.push(lhs - rhs);
    }
    if diffs.len() < 2 {
        return Err(Error::Numerical(
            "limit window produced fewer than two usable samples".into(),
        ));
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sup = diffs.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    Ok(LimitResidual {
        sup,
        radius_used,
        shrunk,
        samples: diffs.len(),
        skipped,
    })
}

impl LimitSummary {
    /// Serializable digest of a reduced geometry (root indices and
    /// exponents of both products, shift, cone).
    pub fn of(geom: &ReducedGeometry) -> LimitSummary {
        summarize(geom)
    }
}

fn summarize(geom: &ReducedGeometry) -> LimitSummary {
    LimitSummary {
        kind: geom.kind.to_string(),
        j_roots: geom.j_roots.iter().map(|w| (w.index, w.exponent)).collect(),
        pi_roots: geom.pi_roots.iter().map(|w| (w.index, w.exponent)).collect(),
        grad_shift: geom.grad_shift.clone(),
        cone_roots: geom.cone_roots.clone(),
    }
}

/// Records in the last `fraction` of the recorded time span.
fn late_window(records: &[StepRecord], fraction: f64) -> Result<&[StepRecord]> {
    if records.len() < 2 {
        return Err(Error::Input(
            "trajectory too short for an analysis window".into(),
        ));
    }
    let t0 = records[0].t;
    let t1 = records[records.len() - 1].t;
    let cut = t1 - fraction.clamp(0.0, 1.0) * (t1 - t0);
    let start = records
        .iter()
        .position(|r| r.t >= cut - 1e-12)
        .unwrap_or(records.len() - 1);
    let w = &records[start.min(records.len() - 2)..];
    Ok(w)
}

fn lsq_slope(ts: &[f64], vals: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let vm = vals.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in ts.iter().zip(vals) {
        num += (t - tm) * (v - vm);
        den += (t - tm) * (t - tm);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// x_t of the record nearest in time; records and checkpoints are written on
/// aligned cadences, so this is exact in practice.
fn nearest_x_t(records: &[StepRecord], t: f64) -> Vec<f64> {
    records
        .iter()
        .min_by(|a, b| {
            (a.t - t)
                .abs()
                .partial_cmp(&(b.t - t).abs())
                .expect("finite times")
        })
        .map(|r| r.x_t.clone())
        .expect("records nonempty")
}

/// Minimal-norm solution of the (symmetric PSD) normal equations via
/// eigenvalue pseudo-inverse; returns the solution and min/max eigenvalue
/// ratio as a conditioning signal.
fn pinv_solve(ata: &DMatrix<f64>, atb: &DVector<f64>) -> (DVector<f64>, f64) {
    let eig = ata.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if max == 0.0 {
        return (DVector::zeros(atb.len()), 0.0);
    }
    let mut min_kept = f64::INFINITY;
    let proj = eig.eigenvectors.transpose() * atb;
    let mut scaled = DVector::zeros(atb.len());
    for i in 0..atb.len() {
        let lam = eig.eigenvalues[i];
        if lam.abs() > RANK_TOL * max {
            scaled[i] = proj[i] / lam;
            min_kept = min_kept.min(lam.abs());
        }
    }
    let ratio = if min_kept.is_finite() {
        min_kept / max
    } else {
        0.0
    };
    (&eig.eigenvectors * scaled, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::RunStatus;
    use crate::rootsys::Family;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn synth_traj(dim: usize, points: Vec<(f64, Vec<f64>)>) -> Trajectory {
        let records = points
            .into_iter()
            .map(|(t, x_t)| StepRecord {
                t,
                x_t,
                m_t: 0.0,
                c_t: 0.0,
                osc_h: 0.0,
                hess_sup: 0.0,
                mass: 0.0,
                coverage: 0.0,
                uk: Vec::new(),
                conv_res: 0.0,
                wall_gap: 0.0,
                hess_min_eig: 0.0,
                weyl_res: 0.0,
            })
            .collect();
        Trajectory {
            records,
            checkpoints: Vec::new(),
            status: RunStatus::ReachedTFinal,
            v0: 1.0,
            dim,
            uk_list: Vec::new(),
            y_total: vec![0.0; dim],
            steps: 0,
        }
    }

    /// Rank 2 with a single root (1,0); the second coordinate is central.
    fn half_line_geom() -> ReducedGeometry {
        let rs = RootSystem::from_simple_roots(vec![vec![1.0, 0.0]], 2, None).unwrap();
        ReducedGeometry::group(Arc::new(rs))
    }

    fn a2_geom() -> ReducedGeometry {
        let rs = RootSystem::build(Family::A, 2, 0).unwrap();
        ReducedGeometry::group(Arc::new(rs))
    }

    /// Index of the positive root with the given simple expansion.
    fn root_index(rs: &RootSystem, coeffs: &[i64]) -> usize {
        rs.positive_roots
            .iter()
            .position(|r| r.simple_coeffs == coeffs)
            .unwrap()
    }

    /// Solve pair(alpha_i, y) = targets for y (square system over simples).
    fn y_from_pairings(rs: &RootSystem, targets: &[f64]) -> Vec<f64> {
        let r = rs.dim();
        let k = rs.simple_roots.len();
        assert_eq!(k, r, "square system expected");
        let m = DMatrix::from_fn(k, r, |i, j| rs.gram_apply(&rs.simple_roots[i])[j]);
        let b = DVector::from_fn(k, |i, _| targets[i]);
        let sol = m.lu().solve(&b).unwrap();
        sol.iter().copied().collect()
    }

    #[test]
    fn bounded_trajectory_stays_case_1() {
        let geom = half_line_geom();
        let pts = (0..20).map(|k| (k as f64, vec![1.3, -0.4])).collect();
        let traj = synth_traj(2, pts);
        let res = classify(&geom, &traj, &Thresholds::default()).unwrap();
        assert_eq!(res.case_tag, CaseTag::Case1);
        assert!(res.phi_u.is_empty());
        assert!(res.y.y_drift.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(res.x_infinity.len(), 2);
        // Bounded trajectory: trivial degeneration, sinh factors kept.
        assert_eq!(res.limit_summary.j_roots.len(), 1);
    }

    #[test]
    fn center_escape_is_case_2() {
        let geom = half_line_geom();
        let pts = (0..20).map(|k| (k as f64, vec![1.0, k as f64])).collect();
        let traj = synth_traj(2, pts);
        let res = classify(&geom, &traj, &Thresholds::default()).unwrap();
        assert_eq!(res.case_tag, CaseTag::Case2);
        assert!(res.phi_u.is_empty());
        assert!(res.sup_norm_window > 5.0);
        assert!(res.sup_semisimple_window <= 5.0);
        assert!((res.y.y_drift[0]).abs() < 1e-12);
        assert!((res.y.y_drift[1] - 1.0).abs() < 1e-12);
        // Escape along the center is gram-orthogonal to every root.
        assert!(res.y.drift_orthogonality < 1e-12);
    }

    #[test]
    fn root_escape_is_case_3_1_when_every_root_grows() {
        let geom = half_line_geom();
        let pts = (0..20).map(|k| (k as f64, vec![k as f64, 0.0])).collect();
        let traj = synth_traj(2, pts);
        let res = classify(&geom, &traj, &Thresholds::default()).unwrap();
        assert_eq!(res.case_tag, CaseTag::Case31);
        assert_eq!(res.phi_u, vec![0]);
        assert!(res.a0.iter().all(|v| *v == 0.0), "a0 = 0 when all roots grow");
        assert!((res.x_infinity[0] - 1.0).abs() < 1e-12);
        assert_eq!(res.growth.len(), 1);
        assert!(res.growth[0].grows);
        assert!((res.growth[0].slope - 1.0).abs() < 1e-12);
        // Horospherical limit: no sinh factors, no cone walls, pi intact.
        assert!(res.limit_summary.j_roots.is_empty());
        assert!(res.limit_summary.cone_roots.is_empty());
        assert_eq!(res.limit_summary.pi_roots, vec![(0, 2)]);
    }

    #[test]
    fn level_without_slope_is_inconclusive() {
        let geom = half_line_geom();
        // Pairing sits above the growth level but does not move.
        let pts = (0..20).map(|k| (k as f64, vec![9.0, k as f64 * 3.0])).collect();
        let traj = synth_traj(2, pts);
        let res = classify(&geom, &traj, &Thresholds::default()).unwrap();
        assert_eq!(res.case_tag, CaseTag::Inconclusive);
        assert!(res.phi_u.is_empty());
    }

    #[test]
    fn short_trajectory_is_an_input_error() {
        let geom = half_line_geom();
        let traj = synth_traj(2, vec![(0.0, vec![0.0, 0.0]); 3]);
        match classify(&geom, &traj, &Thresholds::default()) {
            Err(Error::Input(msg)) => assert!(msg.contains("trajectory too short")),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn raising_the_growth_level_only_shrinks_phi_u() {
        let geom = a2_geom();
        let rs = geom.rootsys();
        let dir = rs.two_rho();
        let pts = (0..=40)
            .map(|k| {
                let t = k as f64;
                (t, dir.iter().map(|v| 0.3 * t * v).collect())
            })
            .collect();
        let traj = synth_traj(2, pts);
        let mut previous: Option<Vec<usize>> = None;
        for a_grow in [2.0, 30.0, 1000.0] {
            let th = Thresholds {
                a_grow,
                ..Thresholds::default()
            };
            let res = classify(&geom, &traj, &th).unwrap();
            if let Some(prev) = &previous {
                assert!(
                    res.phi_u.iter().all(|i| prev.contains(i)),
                    "phi_u must shrink as a_grow rises: {:?} vs {:?}",
                    res.phi_u,
                    prev
                );
            }
            previous = Some(res.phi_u);
        }
        assert!(previous.unwrap().is_empty());
    }

    #[test]
    fn tangent_direction_splits_a2_as_expected() {
        let geom = a2_geom();
        let rs = geom.rootsys();
        // Tangent to alpha_1, strictly positive on alpha_2.
        let y = y_from_pairings(rs, &[0.0, 1.0]);
        let (lie, limit) = build_degeneration(rs, &y, 1e-6).unwrap();
        let i1 = root_index(rs, &[1, 0]);
        let i2 = root_index(rs, &[0, 1]);
        let i12 = root_index(rs, &[1, 1]);
        assert_eq!(lie.tangent_simple, vec![i1]);
        assert_eq!(lie.other_simple, vec![i2]);
        assert!(lie.tangent_combinations.is_empty());
        assert_eq!(lie.remaining, vec![i12]);
        let mut phi_u = limit.phi_u.clone();
        phi_u.sort_unstable();
        assert_eq!(phi_u, {
            let mut v = vec![i2, i12];
            v.sort_unstable();
            v
        });
        // Partition covers the positive roots exactly once.
        let mut all: Vec<usize> = lie
            .tangent_simple
            .iter()
            .chain(&lie.other_simple)
            .chain(&lie.tangent_combinations)
            .chain(&lie.remaining)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
        // Limit geometry: kept sinh on the complement, squared; shifted by
        // 4 rho_u; cone walled by the complement.
        assert_eq!(limit.j_roots.len(), 1);
        assert_eq!(limit.j_roots[0].index, i1);
        assert_eq!(limit.j_roots[0].exponent, 2);
        assert_eq!(limit.pi_roots.len(), 3);
        assert_eq!(limit.cone_roots, vec![i1]);
        let mut four_rho_u = vec![0.0; 2];
        for &i in &[i2, i12] {
            for (acc, &c) in four_rho_u.iter_mut().zip(&rs.positive_roots[i].coords) {
                *acc += 2.0 * c;
            }
        }
        for (a, b) in limit.grad_shift.iter().zip(&four_rho_u) {
            assert!((a - b).abs() < 1e-12);
        }
        // Generator counting: #h = r + 2#(complement) + 2#(phi_u).
        assert_eq!(lie.h_generators.len(), 2 + 2 * 1 + 2 * 2);
        assert_eq!(lie.p_generators.len(), 4 + 2 * 1 + 2 * 2);
        assert_eq!(lie.h_generators[0], "(Y, Y)");
        assert_eq!(lie.h_generators[1], "diag(Y_perp[1])");
    }

    #[test]
    fn regular_direction_gives_the_horospherical_limit() {
        let geom = a2_geom();
        let rs = geom.rootsys();
        let y = rs.two_rho();
        let (lie, limit) = build_degeneration(rs, &y, 1e-6).unwrap();
        assert_eq!(limit.phi_u.len(), 3);
        assert!(limit.j_roots.is_empty());
        assert!(limit.cone_roots.is_empty());
        assert_eq!(limit.pi_roots.len(), 3);
        assert!(lie.tangent_simple.is_empty());
        assert!(lie.tangent_combinations.is_empty());
        assert_eq!(lie.h_generators.len(), 2 + 2 * 3);
    }

    #[test]
    fn zero_direction_is_the_trivial_degeneration() {
        let geom = a2_geom();
        let rs = geom.rootsys();
        let (lie, limit) = build_degeneration(rs, &[0.0, 0.0], 1e-6).unwrap();
        assert!(limit.phi_u.is_empty());
        assert_eq!(limit.j_roots.len(), 3);
        assert_eq!(lie.h_generators.len(), 2 + 2 * 3);
        assert_eq!(lie.h_generators[0], "diag(E_1)");
        assert_eq!(lie.h_generators[1], "diag(E_2)");
    }

    #[test]
    fn chamber_violation_names_the_root() {
        let geom = a2_geom();
        let rs = geom.rootsys();
        let y = y_from_pairings(rs, &[-1.0, 1.0]);
        match build_degeneration(rs, &y, 1e-6) {
            Err(Error::Input(msg)) => assert!(msg.contains("reflect")),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn one_equation_a0_is_the_minimal_norm_point() {
        let geom = half_line_geom();
        let rs = geom.rootsys();
        let pts = (0..20).map(|k| (k as f64, vec![1.0, k as f64])).collect();
        let traj = synth_traj(2, pts);
        let est = estimate_a0(rs, &traj, &[], 0.5).unwrap();
        assert!((est.a0[0] - 1.0).abs() < 1e-12);
        assert!(est.a0[1].abs() < 1e-12);
        assert!(!est.inconsistent);
        assert!(est.min_pairing > 0.0);
    }

    #[test]
    fn noisy_case_3_2_recovers_the_generating_data() {
        let geom = a2_geom();
        let rs = geom.rootsys();
        let y_true = y_from_pairings(rs, &[0.0, 0.4]);
        let w0 = y_from_pairings(rs, &[0.6, 0.3]);
        let mut rng = StdRng::seed_from_u64(41);
        let pts = (0..=40)
            .map(|k| {
                let t = k as f64;
                let x: Vec<f64> = w0
                    .iter()
                    .zip(&y_true)
                    .map(|(w, y)| w + t * y + 1e-3 * rng.gen_range(-1.0..1.0))
                    .collect();
                (t, x)
            })
            .collect();
        let traj = synth_traj(2, pts);
        let res = classify(&geom, &traj, &Thresholds::default()).unwrap();
        assert_eq!(res.case_tag, CaseTag::Case32);
        let i1 = root_index(rs, &[1, 0]);
        let i2 = root_index(rs, &[0, 1]);
        let i12 = root_index(rs, &[1, 1]);
        let mut expected = vec![i2, i12];
        expected.sort_unstable();
        assert_eq!(res.phi_u, expected);
        for (a, b) in res.y.y_drift.iter().zip(&y_true) {
            assert!((a - b).abs() < 1e-2, "drift {a} vs {b}");
        }
        assert!(res.y.drift_orthogonality < 1e-2);
        // a0 solves the single surviving equation at minimal norm.
        let w = rs.gram_apply(&rs.positive_roots[i1].coords);
        let scale = 0.6 / linalg::dot(&w, &w);
        for (a, b) in res.a0.iter().zip(w.iter().map(|v| v * scale)) {
            assert!((a - b).abs() < 1e-2, "a0 {a} vs {b}");
        }
        assert!(res.a0_min_pairing > 0.0);
        assert!(!res.a0_inconsistent);
    }

    /// Builds a toric checkpoint whose h field is an exact linear function of
    /// the discrete gradient, so the regression must reproduce it exactly.
    #[test]
    fn manufactured_soliton_field_recovers_y_exactly() {
        let geom = ReducedGeometry::group(Arc::new(RootSystem::toric(2)));
        let dims = vec![61, 61];
        let origin = vec![-3.0, -3.0];
        let spacing = vec![0.1, 0.1];
        let grid = Grid::from_parts(dims.clone(), origin.clone(), spacing.clone()).unwrap();
        let y_true = [0.3, -0.2];
        let c_true = 7.0;
        let psi: Vec<f64> = (0..grid.len())
            .map(|f| {
                let x = grid.node_flat(f);
                0.6 * x[0] * x[0] + 0.4 * x[1] * x[1] + 0.2 * x[0] * x[1] + 0.1 * x[0].cosh()
            })
            .collect();
        let mut h_field = vec![0.0; grid.len()];
        let mut idx = vec![0usize; 2];
        for f in 0..grid.len() {
            grid.unflatten(f, &mut idx);
            if grid.is_edge(&idx) {
                continue;
            }
            let mut grad = vec![0.0; 2];
            let mut hess = vec![0.0; 4];
            checkpoint_derivatives(&grid, &psi, &idx, &mut grad, &mut hess);
            h_field[f] = y_true[0] * grad[0] + y_true[1] * grad[1] + c_true;
        }
        let ck = |t: f64| Checkpoint {
            t,
            dims: dims.clone(),
            origin: origin.clone(),
            spacing: spacing.clone(),
            c_t: 0.0,
            y_total: vec![0.0; 2],
            psi: psi.clone(),
            h_field: h_field.clone(),
        };
        let pts = (0..=10).map(|k| (k as f64, vec![0.0, 0.0])).collect();
        let mut traj = synth_traj(2, pts);
        traj.checkpoints = vec![ck(9.0), ck(10.0)];
        let est = estimate_y(&geom, &traj, &[], &Thresholds::default()).unwrap();
        assert!(!est.rank_warning);
        assert_eq!(est.checkpoints_used, 2);
        for (a, b) in est.y_hfit.iter().zip(&y_true) {
            assert!((a - b).abs() < 1e-8, "hfit {a} vs {b}");
        }
    }

    /// Integrates phi'' = exp(-phi - y phi') outward from the origin and
    /// checks that the lattice residual of the limit equation is at the
    /// finite-difference floor.
    #[test]
    fn manufactured_soliton_ode_has_tiny_limit_residual() {
        let y0 = 0.25;
        let h = 0.002;
        let n = 2001usize;
        let center = 1000usize;
        let mut psi = vec![0.0; n];
        let f = |u: f64, v: f64| (-u - y0 * v).exp();
        let mut state = (0.0f64, 0.0f64);
        for i in center + 1..n {
            state = rk4_step(state, h, f);
            psi[i] = state.0;
        }
        state = (0.0, 0.0);
        for i in (0..center).rev() {
            state = rk4_step(state, -h, f);
            psi[i] = state.0;
        }
        let ck = Checkpoint {
            t: 50.0,
            dims: vec![n],
            origin: vec![-2.0],
            spacing: vec![h],
            c_t: 0.0,
            y_total: vec![0.0],
            psi,
            h_field: vec![0.0; n],
        };
        let limit =
            ReducedGeometry::degenerate_limit(Arc::new(RootSystem::toric(1)), vec![], None)
                .unwrap();
        let res = limit_residual(&ck, &[y0], &limit, &[0.0], 1.0).unwrap();
        assert!(res.sup <= 1e-6, "residual {:e}", res.sup);
        assert!(!res.shrunk);
        assert_eq!(res.skipped, 0);
        assert!((res.radius_used - 1.0).abs() < 1e-12);

        // A window wider than the grid is shrunk and flagged, not fatal.
        let wide = limit_residual(&ck, &[y0], &limit, &[0.0], 10.0).unwrap();
        assert!(wide.shrunk);
        assert!(wide.radius_used < 10.0);
        assert!(wide.sup.is_finite());
    }

    fn rk4_step(state: (f64, f64), h: f64, f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
        let (u, v) = state;
        let k1 = (v, f(u, v));
        let k2 = (v + 0.5 * h * k1.1, f(u + 0.5 * h * k1.0, v + 0.5 * h * k1.1));
        let k3 = (v + 0.5 * h * k2.1, f(u + 0.5 * h * k2.0, v + 0.5 * h * k2.1));
        let k4 = (v + h * k3.1, f(u + h * k3.0, v + h * k3.1));
        (
            u + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            v + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        )
    }

    #[test]
    fn non_stationary_field_reports_a_large_residual() {
        let h = 0.05;
        let n = 121usize;
        let grid = Grid::from_parts(vec![n], vec![-3.0], vec![h]).unwrap();
        let psi: Vec<f64> = (0..n)
            .map(|f| {
                let x = grid.node_flat(f)[0];
                0.25 * x.powi(4) + 0.5 * x * x
            })
            .collect();
        let ck = Checkpoint {
            t: 0.1,
            dims: vec![n],
            origin: vec![-3.0],
            spacing: vec![h],
            c_t: 0.0,
            y_total: vec![0.0],
            psi,
            h_field: vec![0.0; n],
        };
        let limit =
            ReducedGeometry::degenerate_limit(Arc::new(RootSystem::toric(1)), vec![], None)
                .unwrap();
        let res = limit_residual(&ck, &[0.0], &limit, &[0.0], 1.0).unwrap();
        assert!(res.sup > 1e-1, "expected a visible residual, got {:e}", res.sup);
    }

    #[test]
    fn classification_serializes_without_the_geometry_handle() {
        let geom = half_line_geom();
        let pts = (0..20).map(|k| (k as f64, vec![k as f64, 0.0])).collect();
        let traj = synth_traj(2, pts);
        let res = classify(&geom, &traj, &Thresholds::default()).unwrap();
        let json = serde_json::to_string(&res).unwrap();
        assert!(json.contains("\"case_tag\":\"Case3_1\""));
        assert!(json.contains("\"limit_summary\""));
        assert!(!json.contains("\"limit_geometry\""));
    }
}
