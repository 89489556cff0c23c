//! Weyl-invariant moment polytopes in facet representation, their vertex
//! enumeration, chamber-quotient integration regions, and the log-sum-exp
//! reference potentials whose gradient image fills the doubled polytope.

use crate::error::{Error, Result};
use crate::quad::{self, Region};
use crate::rootsys::RootSystem;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Halfspace pair(normal, y) <= offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vertex {
    pub point: Vec<f64>,
    /// Indices of the facets meeting at this vertex.
    pub active: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MomentPolytope {
    rootsys: Arc<RootSystem>,
    facets: Vec<Facet>,
    vertices: Vec<Vertex>,
}

impl MomentPolytope {
    /// Validates boundedness, full dimension, and Weyl invariance of the
    /// facet set (each reflected facet must already be listed).
    pub fn new(rootsys: Arc<RootSystem>, facets: Vec<Facet>) -> Result<Self> {
        let r = rootsys.dim();
        if facets.is_empty() {
            return Err(Error::Geometry("polytope needs at least one facet".into()));
        }
        for (i, f) in facets.iter().enumerate() {
            if f.normal.len() != r {
                return Err(Error::Geometry(format!(
                    "facet {i} normal has length {}, expected {r}",
                    f.normal.len()
                )));
            }
            if rootsys.norm(&f.normal) <= 1e-12 {
                return Err(Error::Geometry(format!("facet {i} normal is zero")));
            }
        }
        let region = facet_region(&rootsys, &facets, 1.0, None);
        if !region.is_bounded() {
            return Err(Error::Geometry("polytope is unbounded".into()));
        }
        let raw = region.vertices()?;
        if raw.len() < r + 1 {
            return Err(Error::Geometry(format!(
                "polytope is degenerate: {} vertices in dimension {r}",
                raw.len()
            )));
        }
        let mut centroid = vec![0.0; r];
        for (p, _) in &raw {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / raw.len() as f64;
            }
        }
        for (i, f) in facets.iter().enumerate() {
            let slack = f.offset - rootsys.pair(&f.normal, &centroid);
            let scale = 1f64.max(f.offset.abs());
            if slack <= 1e-9 * scale {
                return Err(Error::Geometry(format!(
                    "polytope is degenerate: facet {i} passes through the vertex centroid"
                )));
            }
        }
        check_weyl_invariance(&rootsys, &facets)?;
        let vertices = raw
            .into_iter()
            .map(|(point, active)| Vertex { point, active })
            .collect();
        Ok(Self {
            rootsys,
            facets,
            vertices,
        })
    }

    /// Built-in polytopes: "cp1" (interval), "square", "cp2", "cp2-blowup",
    /// "a1-symmetric" (A1-invariant interval of half-width 2).
    pub fn preset(name: &str) -> Result<Self> {
        let facet = |normal: Vec<f64>, offset: f64| Facet { normal, offset };
        match name {
            "cp1" | "interval" => Self::new(
                Arc::new(RootSystem::toric(1)),
                vec![facet(vec![1.0], 1.0), facet(vec![-1.0], 1.0)],
            ),
            "square" => Self::new(
                Arc::new(RootSystem::toric(2)),
                vec![
                    facet(vec![1.0, 0.0], 1.0),
                    facet(vec![-1.0, 0.0], 1.0),
                    facet(vec![0.0, 1.0], 1.0),
                    facet(vec![0.0, -1.0], 1.0),
                ],
            ),
            "cp2" => Self::new(
                Arc::new(RootSystem::toric(2)),
                vec![
                    facet(vec![-1.0, 0.0], 1.0),
                    facet(vec![0.0, -1.0], 1.0),
                    facet(vec![1.0, 1.0], 1.0),
                ],
            ),
            "cp2-blowup" => Self::new(
                Arc::new(RootSystem::toric(2)),
                vec![
                    facet(vec![1.0, 0.0], 1.0),
                    facet(vec![0.0, 1.0], 1.0),
                    facet(vec![1.0, 1.0], 1.0),
                    facet(vec![-1.0, -1.0], 1.0),
                ],
            ),
            "a1-symmetric" => Self::new(
                Arc::new(RootSystem::build(crate::rootsys::Family::A, 1, 0)?),
                vec![facet(vec![1.0], 2.0), facet(vec![-1.0], 2.0)],
            ),
            other => Err(Error::Input(format!(
                "unknown polytope preset '{other}'; available: cp1, square, cp2, cp2-blowup, a1-symmetric"
            ))),
        }
    }

    pub fn rootsys(&self) -> &Arc<RootSystem> {
        &self.rootsys
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// True iff every vertex lies on exactly rank-many facets.
    pub fn is_fine(&self) -> bool {
        let r = self.rootsys.dim();
        self.vertices.iter().all(|v| v.active.len() == r)
    }

    /// Membership in scale * P with tolerance 1e-9.
    pub fn contains_scaled(&self, y: &[f64], scale: f64) -> bool {
        self.facets.iter().all(|f| {
            let v = self.rootsys.pair(&f.normal, y);
            let c = scale * f.offset;
            v <= c + 1e-9 * 1f64.max(c.abs()).max(v.abs())
        })
    }

    /// Integration region for scale * (P_cone + shift), where P_cone keeps
    /// the points pairing nonnegatively with every listed cone root. Pass an
    /// empty cone for the whole scaled polytope.
    pub fn scaled_region(&self, scale: f64, shift: &[f64], cone: &[usize]) -> Region {
        let sys = &self.rootsys;
        let mut region = facet_region(sys, &self.facets, scale, Some(shift));
        for &i in cone {
            let alpha = &sys.positive_roots[i].coords;
            let a: Vec<f64> = sys.gram_apply(alpha).iter().map(|v| -v).collect();
            let c = -scale * sys.pair(alpha, shift);
            region.constraints.push((a, c));
        }
        region
    }

    fn all_cone(&self) -> Vec<usize> {
        (0..self.rootsys.positive_roots.len()).collect()
    }

    /// Integral of `weight` over 2(P_+ + shift), the chamber quotient taken
    /// with respect to every positive root.
    pub fn quad_chamber(
        &self,
        weight: &dyn Fn(&[f64]) -> f64,
        shift: &[f64],
    ) -> Result<f64> {
        let region = self.scaled_region(2.0, shift, &self.all_cone());
        let out = quad::integrate_region(&region, 1, &|y, buf| buf[0] = weight(y), 1e-8)?;
        Ok(out[0])
    }

    /// Integral of `weight` over the whole doubled polytope 2P.
    pub fn quad_full(&self, weight: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        let zero = vec![0.0; self.rootsys.dim()];
        let region = self.scaled_region(2.0, &zero, &[]);
        let out = quad::integrate_region(&region, 1, &|y, buf| buf[0] = weight(y), 1e-8)?;
        Ok(out[0])
    }

    /// Log-sum-exp potential over a Weyl-stable sample of 2P at `density`
    /// points per unit length, always including the vertices of 2P.
    pub fn reference_potential(&self, density: u32) -> Result<ReferencePotential> {
        if density == 0 {
            return Err(Error::Input("reference potential density must be >= 1".into()));
        }
        let r = self.rootsys.dim();
        let step = 1.0 / f64::from(density);
        let mut lo = vec![f64::INFINITY; r];
        let mut hi = vec![f64::NEG_INFINITY; r];
        for v in &self.vertices {
            for i in 0..r {
                lo[i] = lo[i].min(2.0 * v.point[i]);
                hi[i] = hi[i].max(2.0 * v.point[i]);
            }
        }
        let mut support: Vec<Vec<f64>> = Vec::new();
        let push = |p: Vec<f64>, support: &mut Vec<Vec<f64>>| {
            if !support
                .iter()
                .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-9))
            {
                support.push(p);
            }
        };
        // Axis lattice anchored at the origin, clipped to 2P, then closed
        // under the Weyl group.
        let ks: Vec<(i64, i64)> = (0..r)
            .map(|i| {
                (
                    ((lo[i] - 1e-9) / step).ceil() as i64,
                    ((hi[i] + 1e-9) / step).floor() as i64,
                )
            })
            .collect();
        let mut counter: Vec<i64> = ks.iter().map(|&(a, _)| a).collect();
        'grid: loop {
            let p: Vec<f64> = counter.iter().map(|&k| k as f64 * step).collect();
            if self.contains_scaled(&p, 2.0) {
                if let Some(orbit) = self.rootsys.orbit(&p, 4096) {
                    for q in orbit {
                        push(q, &mut support);
                    }
                } else {
                    push(p, &mut support);
                }
            }
            for i in (0..r).rev() {
                counter[i] += 1;
                if counter[i] <= ks[i].1 {
                    continue 'grid;
                }
                counter[i] = ks[i].0;
            }
            break;
        }
        for v in &self.vertices {
            let p: Vec<f64> = v.point.iter().map(|x| 2.0 * x).collect();
            push(p, &mut support);
        }
        if support.is_empty() {
            return Err(Error::Geometry("reference potential support is empty".into()));
        }
        support.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sup_gram = support
            .iter()
            .map(|p| self.rootsys.gram_apply(p))
            .collect();
        Ok(ReferencePotential {
            rootsys: self.rootsys.clone(),
            support,
            sup_gram,
        })
    }

    /// Reference potential supported on the scaled vertices and the origin
    /// only. The coarse support keeps the far-field slope within
    /// exp(-gap * |x|) of the extreme point of 2P, so a truncated domain with
    /// a zero-flux condition on psi - psi0 barely perturbs the solution;
    /// dense supports lose that by orders of magnitude.
    pub fn vertex_potential(&self) -> ReferencePotential {
        let r = self.rootsys.dim();
        let mut support: Vec<Vec<f64>> = vec![vec![0.0; r]];
        for v in &self.vertices {
            let p: Vec<f64> = v.point.iter().map(|x| 2.0 * x).collect();
            if !support
                .iter()
                .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-9))
            {
                support.push(p);
            }
        }
        support.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sup_gram = support
            .iter()
            .map(|p| self.rootsys.gram_apply(p))
            .collect();
        ReferencePotential {
            rootsys: self.rootsys.clone(),
            support,
            sup_gram,
        }
    }
}

/// psi0(x) = log sum over the support of exp pair(lambda, x): smooth,
/// convex, Weyl-invariant, with coordinate gradient inside G * 2P.
#[derive(Debug, Clone)]
pub struct ReferencePotential {
    rootsys: Arc<RootSystem>,
    pub support: Vec<Vec<f64>>,
    /// Precomputed gram images: the coordinate differential of pair(lambda, .).
    sup_gram: Vec<Vec<f64>>,
}

impl ReferencePotential {
    pub fn value(&self, x: &[f64]) -> f64 {
        let (m, weights) = self.softmax(x);
        m + weights.iter().sum::<f64>().ln()
    }

    /// Value, coordinate gradient, and coordinate Hessian in one pass.
    pub fn value_grad_hess(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let r = x.len();
        let (m, mut weights) = self.softmax(x);
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mut grad = vec![0.0; r];
        for (w, gl) in weights.iter().zip(&self.sup_gram) {
            for (g, v) in grad.iter_mut().zip(gl) {
                *g += w * v;
            }
        }
        let mut hess = vec![0.0; r * r];
        for (w, gl) in weights.iter().zip(&self.sup_gram) {
            for i in 0..r {
                for j in 0..r {
                    hess[i * r + j] += w * gl[i] * gl[j];
                }
            }
        }
        for i in 0..r {
            for j in 0..r {
                hess[i * r + j] -= grad[i] * grad[j];
            }
        }
        (m + total.ln(), grad, hess)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.value_grad_hess(x).1
    }

    /// Gradient pulled back through the gram: the point of 2P the potential
    /// images x to.
    pub fn grad_star(&self, x: &[f64]) -> Vec<f64> {
        let r = x.len();
        let (_, mut weights) = self.softmax(x);
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mut out = vec![0.0; r];
        for (w, lam) in weights.iter().zip(&self.support) {
            for (o, v) in out.iter_mut().zip(lam) {
                *o += w * v;
            }
        }
        out
    }

    fn softmax(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut m = f64::NEG_INFINITY;
        let pairs: Vec<f64> = self
            .support
            .iter()
            .map(|lam| {
                let p = self.rootsys.pair(lam, x);
                m = m.max(p);
                p
            })
            .collect();
        (m, pairs.iter().map(|p| (p - m).exp()).collect())
    }
}

/// Dot-form region of scale * (P + shift): pair(u, y) <= scale*(offset +
/// pair(u, shift)).
fn facet_region(
    rootsys: &RootSystem,
    facets: &[Facet],
    scale: f64,
    shift: Option<&[f64]>,
) -> Region {
    let constraints = facets
        .iter()
        .map(|f| {
            let a = rootsys.gram_apply(&f.normal);
            let mut c = scale * f.offset;
            if let Some(s) = shift {
                c += scale * rootsys.pair(&f.normal, s);
            }
            (a, c)
        })
        .collect();
    Region::new(rootsys.dim(), constraints)
}

fn check_weyl_invariance(rootsys: &RootSystem, facets: &[Facet]) -> Result<()> {
    if rootsys.simple_roots.is_empty() {
        return Ok(());
    }
    let canon: Vec<(Vec<f64>, f64)> = facets
        .iter()
        .map(|f| {
            let n = rootsys.norm(&f.normal);
            (f.normal.iter().map(|v| v / n).collect(), f.offset / n)
        })
        .collect();
    for alpha in &rootsys.simple_roots {
        for (i, (u, lam)) in canon.iter().enumerate() {
            let ru = rootsys.reflect(u, alpha);
            let found = canon.iter().any(|(v, mu)| {
                (lam - mu).abs() <= 1e-10
                    && ru.iter().zip(v).all(|(a, b)| (a - b).abs() <= 1e-10)
            });
            if !found {
                return Err(Error::Geometry(format!(
                    "facet {i} breaks Weyl invariance: its reflection is not a facet"
                )));
            }
        }
    }
    Ok(())
}
