//! Adaptive quadrature over convex regions cut out by linear constraints.
//! Regions are stored in dot-product form: dot(a, y) <= c per constraint.
//! Integration is a nested per-axis Gauss-Kronrod 7/15 rule with dyadic
//! bisection; the innermost axis clips the admissible interval exactly, so
//! the only adaptivity cost is smoothing out kinks in slice masses.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Bisection depth cap per axis; exceeding it is a quadrature error.
pub const MAX_DEPTH: u32 = 12;

/// Tolerance for vertex enumeration and membership, relative to scale.
const VERTEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Region {
    pub dim: usize,
    /// dot(a, y) <= c.
    pub constraints: Vec<(Vec<f64>, f64)>,
}

impl Region {
    pub fn new(dim: usize, constraints: Vec<(Vec<f64>, f64)>) -> Self {
        Self { dim, constraints }
    }

    /// All vertices with their active constraint sets, deduplicated at 1e-9.
    /// Enumeration is by dim-subsets of constraints, so dim must stay small.
    pub fn vertices(&self) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
        let r = self.dim;
        if r > 4 {
            return Err(Error::Geometry(format!(
                "vertex enumeration supports dimension <= 4, got {r}"
            )));
        }
        let m = self.constraints.len();
        if m < r {
            return Ok(Vec::new());
        }
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut subset: Vec<usize> = (0..r).collect();
        loop {
            if let Some(p) = self.solve_subset(&subset) {
                if self.contains(&p) && !points.iter().any(|q| close(q, &p, VERTEX_TOL)) {
                    points.push(p);
                }
            }
            // Next r-subset in lexicographic order.
            let mut i = r;
            loop {
                if i == 0 {
                    return Ok(points
                        .into_iter()
                        .map(|p| {
                            let active = self.active_set(&p);
                            (p, active)
                        })
                        .collect());
                }
                i -= 1;
                if subset[i] != i + m - r {
                    subset[i] += 1;
                    for j in i + 1..r {
                        subset[j] = subset[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn solve_subset(&self, subset: &[usize]) -> Option<Vec<f64>> {
        let r = self.dim;
        let mut a = DMatrix::zeros(r, r);
        let mut b = DVector::zeros(r);
        for (row, &i) in subset.iter().enumerate() {
            let (normal, offset) = &self.constraints[i];
            for col in 0..r {
                a[(row, col)] = normal[col];
            }
            b[row] = *offset;
        }
        let sol = a.clone().full_piv_lu().solve(&b)?;
        // Reject ill-conditioned intersections via the residual.
        let resid = (&a * &sol - &b).amax();
        let scale = b.amax().max(1.0) + sol.amax() * a.amax();
        if resid > VERTEX_TOL * scale.max(1.0) {
            return None;
        }
        Some(sol.iter().copied().collect())
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.constraints.iter().all(|(a, c)| {
            let v: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
            let scale = 1f64.max(c.abs()).max(v.abs());
            v <= c + VERTEX_TOL * scale
        })
    }

    fn active_set(&self, y: &[f64]) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, (a, c))| {
                let v: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
                let scale = 1f64.max(c.abs()).max(v.abs());
                (v - c).abs() <= VERTEX_TOL * scale
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// True iff the recession cone {d : dot(a, d) <= 0 for all constraints}
    /// is trivial. Checked through rank plus extreme-ray candidates from
    /// (dim-1)-subsets of the normals.
    pub fn is_bounded(&self) -> bool {
        let r = self.dim;
        if r == 0 {
            return true;
        }
        let m = self.constraints.len();
        if m == 0 {
            return false;
        }
        let rows: Vec<f64> = self
            .constraints
            .iter()
            .flat_map(|(a, _)| a.iter().copied())
            .collect();
        let mat = DMatrix::from_row_slice(m, r, &rows);
        if mat.rank(1e-10) < r {
            return false;
        }
        let mut subset: Vec<usize> = (0..r - 1).collect();
        loop {
            if let Some(d) = self.nullspace_direction(&subset) {
                for dir in [1.0, -1.0] {
                    let recedes = self.constraints.iter().all(|(a, _)| {
                        let v: f64 = a.iter().zip(&d).map(|(ai, di)| ai * di * dir).sum();
                        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v <= 1e-12 * na
                    });
                    if recedes {
                        return false;
                    }
                }
            }
            if subset.is_empty() {
                return true;
            }
            let mut i = r - 1;
            loop {
                if i == 0 {
                    return true;
                }
                i -= 1;
                if subset[i] != i + m - (r - 1) {
                    subset[i] += 1;
                    for j in i + 1..r - 1 {
                        subset[j] = subset[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Unit vector spanning the nullspace of the chosen normals, when that
    /// nullspace is one-dimensional (or dim == 1 with an empty subset).
    fn nullspace_direction(&self, subset: &[usize]) -> Option<Vec<f64>> {
        let r = self.dim;
        if subset.is_empty() {
            return if r == 1 { Some(vec![1.0]) } else { None };
        }
        let rows: Vec<f64> = subset
            .iter()
            .flat_map(|&i| self.constraints[i].0.iter().copied())
            .collect();
        let mat = DMatrix::from_row_slice(subset.len(), r, &rows);
        // Nullspace through the spectrum of A^T A: want exactly one
        // near-zero eigenvalue (the chosen normals must have rank r - 1).
        let se = (mat.transpose() * &mat).symmetric_eigen();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&i, &j| {
            se.eigenvalues[i]
                .partial_cmp(&se.eigenvalues[j])
                .unwrap()
        });
        let scale = se.eigenvalues[order[r - 1]].max(1e-300);
        if se.eigenvalues[order[0]] > 1e-20 * scale
            || (r > 1 && se.eigenvalues[order[1]] <= 1e-20 * scale)
        {
            return None;
        }
        let d: Vec<f64> = (0..r).map(|j| se.eigenvectors[(j, order[0])]).collect();
        Some(d)
    }

    /// Componentwise bounding box from the vertex set.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let verts = self.vertices()?;
        if verts.is_empty() {
            return Err(Error::Quadrature("region is empty".into()));
        }
        let r = self.dim;
        let mut lo = vec![f64::INFINITY; r];
        let mut hi = vec![f64::NEG_INFINITY; r];
        for (v, _) in &verts {
            for i in 0..r {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        Ok((lo, hi))
    }

    /// Admissible interval for axis `k` once coordinates 0..k are fixed to
    /// `prefix`, using every constraint whose trailing coefficients vanish.
    /// At the innermost axis this clips exactly. Returns None when empty.
    fn axis_interval(&self, k: usize, prefix: &[f64], lo: f64, hi: f64) -> Option<(f64, f64)> {
        let (mut a, mut b) = (lo, hi);
        for (normal, c) in &self.constraints {
            let na: f64 = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
            if normal[k + 1..].iter().any(|&x| x.abs() > 1e-13 * na) {
                continue;
            }
            let rem = c - normal[..k]
                .iter()
                .zip(prefix)
                .map(|(ai, pi)| ai * pi)
                .sum::<f64>();
            let coef = normal[k];
            if coef.abs() <= 1e-13 * na {
                if rem < -1e-12 * (1.0 + c.abs()) {
                    return None;
                }
            } else if coef > 0.0 {
                b = b.min(rem / coef);
            } else {
                a = a.max(rem / coef);
            }
        }
        if b - a <= 1e-14 * (1.0 + a.abs() + b.abs()) {
            None
        } else {
            Some((a, b))
        }
    }
}

/// Integrate a vector-valued function over the region to relative accuracy
/// `rel_tol`. The integrand writes its `n_out` components into the provided
/// buffer. Fails with a quadrature error if dyadic refinement on some axis
/// exceeds the depth cap, or if the region is empty.
pub fn integrate_region(
    region: &Region,
    n_out: usize,
    integrand: &dyn Fn(&[f64], &mut [f64]),
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let (lo, hi) = region.bounding_box()?;
    // A-priori scale |f|_max * vol(box) from vertex/centroid samples: slices
    // of negligible measure get an absolute error floor instead of chasing
    // their own relative target, which stalls at kinks near corners.
    let verts = region.vertices()?;
    let r = region.dim;
    let mut centroid = vec![0.0; r];
    for (v, _) in &verts {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x / verts.len() as f64;
        }
    }
    let mut buf = vec![0.0; n_out];
    let mut fmax = 0.0f64;
    let probe = |p: &[f64], fmax: &mut f64, buf: &mut [f64]| {
        integrand(p, buf);
        for v in buf.iter() {
            if v.is_finite() {
                *fmax = fmax.max(v.abs());
            }
        }
    };
    probe(&centroid, &mut fmax, &mut buf);
    for (v, _) in &verts {
        probe(v, &mut fmax, &mut buf);
        let mid: Vec<f64> = v.iter().zip(&centroid).map(|(a, b)| 0.5 * (a + b)).collect();
        probe(&mid, &mut fmax, &mut buf);
    }
    let volbox: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let floor = 0.1 * rel_tol * fmax * volbox;
    let mut point = vec![0.0; region.dim];
    let mut out = vec![0.0; n_out];
    nested_axis(
        region, 0, &lo, &hi, &mut point, n_out, integrand, rel_tol, floor, &mut out,
    )?;
    Ok(out)
}

/// One level of the nesting: adaptively integrate axis `k` of the region
/// with lower axes fixed, writing the result into `out`.
#[allow(clippy::too_many_arguments)]
fn nested_axis(
    region: &Region,
    k: usize,
    lo: &[f64],
    hi: &[f64],
    point: &mut Vec<f64>,
    n_out: usize,
    integrand: &dyn Fn(&[f64], &mut [f64]),
    rel_tol: f64,
    floor: f64,
    out: &mut [f64],
) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0.0);
    let prefix_len = k;
    let interval = region.axis_interval(k, &point[..prefix_len], lo[k], hi[k]);
    let Some((a, b)) = interval else {
        return Ok(());
    };
    // Distribute this level's absolute allowance over the box side, so the
    // slice integrals one level down inherit a matching floor.
    let child_floor = floor / (hi[k] - lo[k]).max(1e-300);
    // Evaluate the slice function at a fixed axis-k coordinate.
    let mut slice = |t: f64, buf: &mut [f64]| -> Result<()> {
        point.truncate(prefix_len);
        point.push(t);
        if k + 1 == region.dim {
            integrand(point, buf);
            Ok(())
        } else {
            nested_axis(
                region, k + 1, lo, hi, point, n_out, integrand, rel_tol, child_floor, buf,
            )
        }
    };
    // Worst-first refinement against a global budget set by the Kronrod
    // |f| estimate of the whole interval.
    struct Panel {
        a: f64,
        b: f64,
        kron: Vec<f64>,
        err: f64,
        depth: u32,
    }
    let mut make_panel = |pa: f64, pb: f64, depth: u32| -> Result<(Panel, f64)> {
        let mut gauss = vec![0.0; n_out];
        let mut kron = vec![0.0; n_out];
        let mut kabs = vec![0.0; n_out];
        gk15(&mut slice, pa, pb, n_out, &mut gauss, &mut kron, &mut kabs)?;
        let err = gauss
            .iter()
            .zip(&kron)
            .fold(0.0f64, |m, (gi, ki)| m.max((gi - ki).abs()));
        let resabs = kabs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok((Panel { a: pa, b: pb, kron, err, depth }, resabs))
    };
    let (top, resabs) = make_panel(a, b, 0)?;
    let budget = (rel_tol * resabs).max(floor).max(1e-300);
    let mut panels = vec![top];
    while panels.iter().map(|p| p.err).sum::<f64>() > budget {
        let worst = (0..panels.len())
            .max_by(|&i, &j| {
                (panels[i].err, panels[j].a)
                    .partial_cmp(&(panels[j].err, panels[i].a))
                    .unwrap()
            })
            .unwrap();
        let p = panels.swap_remove(worst);
        if p.depth >= MAX_DEPTH {
            return Err(Error::Quadrature(format!(
                "axis {k} failed to converge after {MAX_DEPTH} bisections on [{}, {}]",
                p.a, p.b
            )));
        }
        let mid = 0.5 * (p.a + p.b);
        panels.push(make_panel(p.a, mid, p.depth + 1)?.0);
        panels.push(make_panel(mid, p.b, p.depth + 1)?.0);
    }
    // Canonical summation order keeps results independent of split history.
    panels.sort_by(|p, q| p.a.partial_cmp(&q.a).unwrap());
    for p in &panels {
        for (o, v) in out.iter_mut().zip(&p.kron) {
            *o += v;
        }
    }
    Ok(())
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1] (positive half).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss-Kronrod 7/15 panel of a vector-valued function; also returns
/// the Kronrod estimate applied to |f| for error scaling.
fn gk15(
    f: &mut dyn FnMut(f64, &mut [f64]) -> Result<()>,
    a: f64,
    b: f64,
    n_out: usize,
    gauss: &mut [f64],
    kron: &mut [f64],
    kabs: &mut [f64],
) -> Result<()> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut buf = vec![0.0; n_out];
    gauss.iter_mut().for_each(|v| *v = 0.0);
    kron.iter_mut().for_each(|v| *v = 0.0);
    kabs.iter_mut().for_each(|v| *v = 0.0);
    f(c, &mut buf)?;
    for i in 0..n_out {
        gauss[i] += WG[3] * buf[i];
        kron[i] += WGK[7] * buf[i];
        kabs[i] += WGK[7] * buf[i].abs();
    }
    let mut pair = vec![0.0; n_out];
    for j in 0..7 {
        let x = h * XGK[j];
        f(c - x, &mut buf)?;
        pair.copy_from_slice(&buf);
        f(c + x, &mut buf)?;
        for i in 0..n_out {
            let s = pair[i] + buf[i];
            kron[i] += WGK[j] * s;
            kabs[i] += WGK[j] * (pair[i].abs() + buf[i].abs());
            if j % 2 == 1 {
                gauss[i] += WG[(j - 1) / 2] * s;
            }
        }
    }
    for i in 0..n_out {
        gauss[i] *= h;
        kron[i] *= h;
        kabs[i] *= h;
    }
    Ok(())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_box(dim: usize) -> Region {
        let mut cons = Vec::new();
        for i in 0..dim {
            let mut up = vec![0.0; dim];
            up[i] = 1.0;
            cons.push((up.clone(), 1.0));
            let mut dn = vec![0.0; dim];
            dn[i] = -1.0;
            cons.push((dn, 0.0));
        }
        Region::new(dim, cons)
    }

    #[test]
    fn box_volumes_and_exponentials() {
        let r2 = unit_box(2);
        let vol = integrate_region(&r2, 1, &|_, out| out[0] = 1.0, 1e-10).unwrap();
        assert_relative_eq!(vol[0], 1.0, max_relative = 1e-12);
        let expi =
            integrate_region(&r2, 1, &|y, out| out[0] = (y[0] + y[1]).exp(), 1e-10).unwrap();
        let e1 = std::f64::consts::E - 1.0;
        assert_relative_eq!(expi[0], e1 * e1, max_relative = 1e-9);
    }

    #[test]
    fn simplex_volume_and_moment() {
        // x, y >= 0, x + y <= 1.
        let tri = Region::new(
            2,
            vec![
                (vec![-1.0, 0.0], 0.0),
                (vec![0.0, -1.0], 0.0),
                (vec![1.0, 1.0], 1.0),
            ],
        );
        let got = integrate_region(&tri, 2, &|y, out| {
            out[0] = 1.0;
            out[1] = y[0];
        }, 1e-9)
        .unwrap();
        assert_relative_eq!(got[0], 0.5, max_relative = 1e-8);
        assert_relative_eq!(got[1], 1.0 / 6.0, max_relative = 1e-8);

        let simplex3 = Region::new(
            3,
            vec![
                (vec![-1.0, 0.0, 0.0], 0.0),
                (vec![0.0, -1.0, 0.0], 0.0),
                (vec![0.0, 0.0, -1.0], 0.0),
                (vec![1.0, 1.0, 1.0], 1.0),
            ],
        );
        // Corner kinks in the slice masses cap the practical accuracy of the
        // nested rule in 3-D; the estimator target is still 1e-8.
        let vol = integrate_region(&simplex3, 1, &|_, out| out[0] = 1.0, 1e-8).unwrap();
        assert_relative_eq!(vol[0], 1.0 / 6.0, max_relative = 1e-6);
    }

    #[test]
    fn vertices_and_bounds() {
        let tri = Region::new(
            2,
            vec![
                (vec![-1.0, 0.0], 0.0),
                (vec![0.0, -1.0], 0.0),
                (vec![1.0, 1.0], 1.0),
            ],
        );
        let verts = tri.vertices().unwrap();
        assert_eq!(verts.len(), 3);
        for (_, active) in &verts {
            assert_eq!(active.len(), 2);
        }
        assert!(tri.is_bounded());
        let half = Region::new(2, vec![(vec![1.0, 0.0], 1.0)]);
        assert!(!half.is_bounded());
        // Slab: bounded in one direction only.
        let slab = Region::new(
            2,
            vec![(vec![1.0, 0.0], 1.0), (vec![-1.0, 0.0], 1.0)],
        );
        assert!(!slab.is_bounded());
        assert!(unit_box(3).is_bounded());
    }

    #[test]
    fn empty_region_is_an_error() {
        let empty = Region::new(
            1,
            vec![(vec![1.0], 0.0), (vec![-1.0], -1.0)],
        );
        assert!(integrate_region(&empty, 1, &|_, out| out[0] = 1.0, 1e-8).is_err());
    }

    #[test]
    fn singular_integrand_exhausts_depth() {
        let seg = Region::new(1, vec![(vec![1.0], 1.0), (vec![-1.0], 0.0)]);
        let res = integrate_region(&seg, 1, &|y, out| out[0] = y[0].abs().powf(-0.95), 1e-10);
        match res {
            Err(Error::Quadrature(_)) => {}
            other => panic!("expected quadrature error, got {other:?}"),
        }
    }

    #[test]
    fn odd_integrand_converges_to_zero() {
        let seg = Region::new(1, vec![(vec![1.0], 2.0), (vec![-1.0], 2.0)]);
        let got = integrate_region(&seg, 1, &|y, out| out[0] = y[0] * y[0] * y[0], 1e-10).unwrap();
        assert!(got[0].abs() < 1e-10);
    }
}
