//! Time stepping of the reduced parabolic flow
//!     d psi / dt = log[ pi(grad psi + shift) det Hess psi ] - log J + psi
//! on a truncated, reflection-stable box around the chamber. The unknown is
//! u = psi - psi0 with a zero-flux outer boundary, so the linear growth of
//! psi never meets the truncation. Wall factors are evaluated as the ratio
//! (alpha, grad psi + shift) / sinh(alpha, x), whose numerator and
//! denominator vanish at matched rate across chamber walls.

use crate::criterion;
use crate::error::{Error, Result};
use crate::geometry::ReducedGeometry;
use crate::grid::{Grid, IndexMap};
use crate::linalg;
use crate::polytope::MomentPolytope;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hard floor for the adaptive time step; reaching it means the density
/// degenerates faster than halving can resolve.
const DT_MIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub box_min: Vec<f64>,
    pub box_max: Vec<f64>,
    pub spacing: f64,
    /// Safety factor on the first-order (advective) step bound and on the
    /// explicit diffusive bound used when no implicit solver applies.
    pub cfl: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub t_final: f64,
    /// Stop when sup |d psi/dt - mean| falls below this.
    pub convergence_tol: f64,
    /// Keep every n-th step in the trajectory (1 = all).
    pub record_every: usize,
    /// Checkpoint cadence in accepted steps; 0 keeps only the final state.
    pub checkpoint_every: usize,
    pub recenter_limit: usize,
    /// Fraction of each half-extent the minimum point may approach the
    /// boundary before the box is translated.
    pub recenter_margin: f64,
    /// Sublevel-set indices whose masses are recorded.
    pub uk_list: Vec<u32>,
    /// Lattice density for the reference potential; None uses the scaled
    /// vertices plus the origin, which has the best far-field slope.
    pub reference_density: Option<u32>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            box_min: vec![],
            box_max: vec![],
            spacing: 0.1,
            cfl: 0.2,
            dt_init: 1e-3,
            dt_max: 0.25,
            t_final: 20.0,
            convergence_tol: 1e-6,
            record_every: 1,
            checkpoint_every: 0,
            recenter_limit: 64,
            recenter_margin: 0.12,
            uk_list: vec![0, 1, 2, 4, 8],
            reference_density: None,
        }
    }
}

/// One sinh-paired factor of the density: contributes
/// m * log[(alpha, grad + shift) / sinh(alpha, x)] to the right side.
struct PairedFactor {
    /// Root coordinates; the gradient sensitivity of the numerator.
    alpha: Vec<f64>,
    /// Gram image; pairs with domain points.
    galpha: Vec<f64>,
    shift_term: f64,
    m: f64,
    alpha_sup: f64,
    label: String,
}

/// A pi factor in excess of its sinh partner (the unipotent block):
/// contributes m * log(alpha, grad + shift).
struct LinearFactor {
    alpha: Vec<f64>,
    shift_term: f64,
    m: f64,
    alpha_sup: f64,
    label: String,
}

/// A sinh factor in excess of its pi partner: contributes
/// -m * log |sinh(alpha, x)|. No preset produces these, but the pairing is
/// kept total.
struct SinhFactor {
    galpha: Vec<f64>,
    m: f64,
}

/// Preprocessed geometry: factor pairing, gram inverse, wall data.
struct GeomCache {
    ginv: Vec<f64>,
    /// det of the gram inverse; converts coordinate Hessian determinants to
    /// determinants of the gradient map x -> G^{-1} grad psi.
    inv_det_g: f64,
    paired: Vec<PairedFactor>,
    linear: Vec<LinearFactor>,
    sinh_only: Vec<SinhFactor>,
    /// All J factors, for log J itself (density and minimum-function j).
    j_all: Vec<(Vec<f64>, f64)>,
    /// Gram images of the cone roots; sign gates for the chamber copy.
    cone_galpha: Vec<Vec<f64>>,
}

impl GeomCache {
    fn build(geom: &ReducedGeometry) -> Result<GeomCache> {
        let rs = geom.rootsys();
        let r = rs.dim();
        let g = nalgebra::DMatrix::from_iterator(
            r,
            r,
            (0..r * r).map(|k| rs.gram()[(k % r, k / r)]),
        );
        let ginv_m = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Geometry("gram matrix is singular".into()))?;
        let mut ginv = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                ginv[i * r + j] = ginv_m[(i, j)];
            }
        }
        let inv_det_g = ginv_m.determinant();
        let j_exp = |idx: usize| {
            geom.j_roots
                .iter()
                .find(|w| w.index == idx)
                .map_or(0u32, |w| w.exponent)
        };
        let mut paired = Vec::new();
        let mut linear = Vec::new();
        let mut sinh_only = Vec::new();
        for w in &geom.pi_roots {
            let root = &rs.positive_roots[w.index];
            let alpha = root.coords.clone();
            let galpha = rs.gram_apply(&alpha);
            let shift_term = rs.pair(&alpha, &geom.grad_shift);
            let alpha_sup = alpha.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let label = format!("{:?}", root.simple_coeffs);
            let mj = j_exp(w.index);
            let mm = w.exponent.min(mj);
            if mm > 0 {
                paired.push(PairedFactor {
                    alpha: alpha.clone(),
                    galpha: galpha.clone(),
                    shift_term,
                    m: f64::from(mm),
                    alpha_sup,
                    label: label.clone(),
                });
            }
            if w.exponent > mm {
                linear.push(LinearFactor {
                    alpha,
                    shift_term,
                    m: f64::from(w.exponent - mm),
                    alpha_sup,
                    label,
                });
            }
        }
        for w in &geom.j_roots {
            let root = &rs.positive_roots[w.index];
            let galpha = rs.gram_apply(&root.coords);
            let mpi = geom
                .pi_roots
                .iter()
                .find(|p| p.index == w.index)
                .map_or(0u32, |p| p.exponent);
            if w.exponent > mpi {
                sinh_only.push(SinhFactor {
                    galpha,
                    m: f64::from(w.exponent - mpi),
                });
            }
        }
        let j_all: Vec<(Vec<f64>, f64)> = geom
            .j_roots
            .iter()
            .map(|w| {
                (
                    rs.gram_apply(&rs.positive_roots[w.index].coords),
                    f64::from(w.exponent),
                )
            })
            .collect();
        let cone_galpha = geom
            .cone_roots
            .iter()
            .map(|&i| rs.gram_apply(&rs.positive_roots[i].coords))
            .collect();
        Ok(GeomCache {
            ginv,
            inv_det_g,
            paired,
            linear,
            sinh_only,
            j_all,
            cone_galpha,
        })
    }

    /// Factor evaluation from explicit derivatives; the shared core of field
    /// analysis and checkpoint sampling.
    fn eval_core(
        &self,
        x: Vec<f64>,
        psi: f64,
        grad: &[f64],
        hess: Vec<f64>,
        flat: usize,
    ) -> Result<NodeEval> {
        let d = x.len();
        let c = self;
        let det = linalg::det_small(&hess, d) * c.inv_det_g;
        if !leading_minors_positive(&hess, d) || !(det > 0.0) {
            return Err(Error::Degeneracy {
                node_index: flat,
                location: x,
                detail: format!("Hessian is not positive definite (det = {det:e})"),
            });
        }
        let mut acc = det.ln();
        let mut logj = 0.0;
        let mut adv = 0.0;
        for f in &c.paired {
            let num = linalg::dot(&f.alpha, grad) + f.shift_term;
            let den = linalg::dot(&f.galpha, &x).sinh();
            let ratio = num / den;
            if !(ratio > 0.0) || !ratio.is_finite() {
                return Err(Error::Degeneracy {
                    node_index: flat,
                    location: x,
                    detail: format!(
                        "factor (alpha, grad psi + shift)/sinh(alpha, x) = {num:e}/{den:e} \
                         lost positivity on root {}",
                        f.label
                    ),
                });
            }
            acc += f.m * ratio.ln();
            adv += f.m * f.alpha_sup / num.abs();
        }
        for f in &c.linear {
            let num = linalg::dot(&f.alpha, grad) + f.shift_term;
            if !(num > 0.0) {
                return Err(Error::Degeneracy {
                    node_index: flat,
                    location: x,
                    detail: format!(
                        "factor (alpha, grad psi + shift) = {num:e} lost positivity \
                         on root {}",
                        f.label
                    ),
                });
            }
            acc += f.m * num.ln();
            adv += f.m * f.alpha_sup / num;
        }
        for f in &c.sinh_only {
            let den = linalg::dot(&f.galpha, &x).sinh().abs();
            if den == 0.0 {
                return Err(Error::Degeneracy {
                    node_index: flat,
                    location: x,
                    detail: "node lies on a chamber wall".into(),
                });
            }
            acc -= f.m * den.ln();
        }
        for (galpha, m) in &c.j_all {
            let den = linalg::dot(galpha, &x).sinh().abs();
            logj += m * den.ln();
        }
        let rhs = acc + psi;
        let ma = (acc + logj).exp();
        Ok(NodeEval {
            rhs,
            ma,
            psi,
            logj,
            hess,
            adv,
        })
    }
}

/// Per-node derived quantities of the current field.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub osc_h: f64,
    pub hess_sup: f64,
    pub hess_min_eig: f64,
    pub mass: f64,
    pub coverage: f64,
    pub uk: Vec<f64>,
    /// sup |d psi/dt - mean|; the convergence residual.
    pub conv_res: f64,
    /// min over cone roots of (alpha, x_t); +inf when there is no cone.
    pub wall_gap: f64,
    /// Largest deviation removed by the last symmetrization.
    pub weyl_res: f64,
    /// Time-step bound from the explicit first-order terms.
    pub dt_cap: f64,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub grid: Grid,
    pub maps: Vec<IndexMap>,
    /// Reference values at the nodes.
    pub psi0: Vec<f64>,
    pub u: Vec<f64>,
    pub c_t: f64,
    /// h = -d psi/dt + c_t at the nodes.
    pub h_field: Vec<f64>,
    /// Monge-Ampere density at the nodes.
    pub ma: Vec<f64>,
    /// Minimum function w = psi + j at the nodes.
    pub w: Vec<f64>,
    /// Coordinate Hessian of psi at the nodes, row-major r x r each.
    pub hess: Vec<f64>,
    pub x_t: Vec<f64>,
    pub m_t: f64,
    /// Cumulative box translation from re-centering.
    pub y_total: Vec<f64>,
    pub diag: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub x_t: Vec<f64>,
    pub m_t: f64,
    pub c_t: f64,
    pub osc_h: f64,
    pub hess_sup: f64,
    pub mass: f64,
    pub coverage: f64,
    pub uk: Vec<f64>,
    pub conv_res: f64,
    /// +inf when the geometry has no cone roots; stored as JSON null and
    /// restored on read.
    #[serde(with = "inf_as_null")]
    pub wall_gap: f64,
    pub hess_min_eig: f64,
    pub weyl_res: f64,
}

/// JSON has no spelling for infinity; the only by-design infinite field
/// round-trips through null.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_unit()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub dims: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub c_t: f64,
    pub y_total: Vec<f64>,
    pub psi: Vec<f64>,
    pub h_field: Vec<f64>,
}

impl Checkpoint {
    /// Snapshot of a live state: full psi (reference plus update) and h.
    pub fn from_state(state: &FlowState) -> Checkpoint {
        Checkpoint {
            t: state.t,
            dims: state.grid.dims.clone(),
            origin: state.grid.origin.clone(),
            spacing: state.grid.spacing.clone(),
            c_t: state.c_t,
            y_total: state.y_total.clone(),
            psi: state
                .psi0
                .iter()
                .zip(&state.u)
                .map(|(p, u)| p + u)
                .collect(),
            h_field: state.h_field.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RunStatus {
    Converged { t: f64 },
    ReachedTFinal,
    Escaped { t: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub status: RunStatus,
    pub v0: f64,
    pub dim: usize,
    pub uk_list: Vec<u32>,
    pub y_total: Vec<f64>,
    pub steps: usize,
}

/// Scratch of one field analysis.
struct Analysis {
    rhs: Vec<f64>,
    ma: Vec<f64>,
    w: Vec<f64>,
    hess: Vec<f64>,
    c_t: f64,
    mass: f64,
    x_t: Vec<f64>,
    m_t: f64,
    uk: Vec<f64>,
    osc_h: f64,
    conv_res: f64,
    hess_sup: f64,
    hess_min_eig: f64,
    wall_gap: f64,
    dt_cap: f64,
}

pub struct Flow {
    geom: ReducedGeometry,
    cfg: FlowConfig,
    cache: GeomCache,
    reference: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    v0: f64,
    /// Order of the reflection group the box is stable under; box integrals
    /// divide by it to give chamber integrals.
    weyl_factor: f64,
}

impl Flow {
    pub fn new(geom: ReducedGeometry, poly: &MomentPolytope, cfg: FlowConfig) -> Result<Flow> {
        let r = geom.dim();
        if r > 3 {
            return Err(Error::Input(
                "flow stepping is limited to boxes of dimension <= 3".into(),
            ));
        }
        if cfg.box_min.len() != r || cfg.box_max.len() != r {
            return Err(Error::Config(format!(
                "flow box must have dimension {r}"
            )));
        }
        for (name, v) in [
            ("cfl", cfg.cfl),
            ("dt_init", cfg.dt_init),
            ("dt_max", cfg.dt_max),
            ("spacing", cfg.spacing),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("flow {name} must be positive")));
            }
        }
        if cfg.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        if !(cfg.t_final >= 0.0) {
            return Err(Error::Config("t_final must be >= 0".into()));
        }
        let cache = GeomCache::build(&geom)?;
        let v0 = criterion::volume_v0(poly, &geom)?;
        let reference: Box<dyn Fn(&[f64]) -> f64 + Send + Sync> = match cfg.reference_density {
            Some(d) => {
                let p = poly.reference_potential(d)?;
                Box::new(move |x: &[f64]| p.value(x))
            }
            None => {
                let p = poly.vertex_potential();
                Box::new(move |x: &[f64]| p.value(x))
            }
        };
        let weyl_factor = reflection_group_order(&geom)?;
        Ok(Flow {
            geom,
            cfg,
            cache,
            reference,
            v0,
            weyl_factor,
        })
    }

    /// Replace the reference potential. The closure must be smooth, convex,
    /// invariant under the cone reflections, and have gradient image 2P.
    pub fn with_reference(
        mut self,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Flow {
        self.reference = Box::new(f);
        self
    }

    pub fn geometry(&self) -> &ReducedGeometry {
        &self.geom
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn initial_state(&self) -> Result<FlowState> {
        self.initial_state_with(&|_| 0.0)
    }

    /// Start from psi = psi0 + u0(x); u0 is symmetrized before use.
    pub fn initial_state_with(&self, u0: &dyn Fn(&[f64]) -> f64) -> Result<FlowState> {
        let grid = Grid::new(&self.cfg.box_min, &self.cfg.box_max, self.cfg.spacing)?;
        let maps = grid.symmetry_maps(self.geom.rootsys(), &self.geom.cone_roots)?;
        let psi0: Vec<f64> = (0..grid.len())
            .map(|f| (self.reference)(&grid.node_flat(f)))
            .collect();
        let mut u: Vec<f64> = (0..grid.len())
            .map(|f| u0(&grid.node_flat(f)))
            .collect();
        let weyl_res = grid.symmetrize(&maps, &mut u);
        let an = self.analyze(&grid, &psi0, &u)?;
        let dim = grid.dim();
        let mut state = FlowState {
            t: 0.0,
            grid,
            maps,
            psi0,
            u,
            c_t: 0.0,
            h_field: vec![],
            ma: vec![],
            w: vec![],
            hess: vec![],
            x_t: vec![0.0; dim],
            m_t: 0.0,
            y_total: vec![0.0; dim],
            diag: Diagnostics::default(),
        };
        commit_analysis(&mut state, an, weyl_res, self.v0);
        Ok(state)
    }

    /// Right side at one node of the state's grid. Field-level work uses the
    /// batched path; this is the pointwise contract.
    pub fn rhs(&self, state: &FlowState, node: usize) -> Result<f64> {
        let ext = self.extended_psi(&state.grid, &state.psi0, &state.u);
        let mut idx = vec![0usize; state.grid.dim()];
        state.grid.unflatten(node, &mut idx);
        let eval = self.eval_node(&state.grid, &ext, &idx, node)?;
        Ok(eval.rhs)
    }

    /// Mass of the sublevel set U_k = { w < m_t + k + 1 } under the
    /// Monge-Ampere density, per chamber copy.
    pub fn diagnostics_volume(&self, state: &FlowState, k: u32) -> f64 {
        let cut = state.m_t + f64::from(k) + 1.0;
        let cell = state.grid.cell_volume();
        let mut total = 0.0;
        for (ma, w) in state.ma.iter().zip(&state.w) {
            if *w < cut {
                total += ma;
            }
        }
        total * cell / self.weyl_factor
    }

    /// Derived fields on the interior nodes of a checkpoint; see the free
    /// [`sample_checkpoint`].
    pub fn sample_checkpoint(&self, ck: &Checkpoint) -> Result<Vec<NodeSample>> {
        sample_checkpoint(&self.geom, ck)
    }

    /// One accepted time step: semi-implicit update, symmetrization, and a
    /// full re-analysis. On error the state is left untouched.
    pub fn step(&self, state: &mut FlowState, dt: f64) -> Result<()> {
        let n = state.grid.len();
        // d psi/dt before normalization, reconstructed from the stored h.
        let rhs: Vec<f64> = state.h_field.iter().map(|h| state.c_t - h).collect();
        let delta = self.solve_update(&state.grid, &state.hess, &rhs, state.c_t, dt)?;
        let mut u_new = vec![0.0; n];
        for i in 0..n {
            u_new[i] = state.u[i] + delta[i];
        }
        let weyl_res = state.grid.symmetrize(&state.maps, &mut u_new);
        let an = self.analyze(&state.grid, &state.psi0, &u_new)?;
        state.u = u_new;
        state.t += dt;
        commit_analysis(state, an, weyl_res, self.v0);
        Ok(())
    }

    /// Run until convergence, T_final, or escape. Records every
    /// `record_every`-th accepted step plus the initial and final states.
    pub fn run(&self) -> Result<Trajectory> {
        self.run_full().map(|(t, _)| t)
    }

    /// As `run`, but also hand back the final state.
    pub fn run_full(&self) -> Result<(Trajectory, FlowState)> {
        let state = self.initial_state()?;
        self.run_from(state)
    }

    pub fn run_from(&self, mut state: FlowState) -> Result<(Trajectory, FlowState)> {
        let mut records = vec![record_of(&state)];
        let mut checkpoints: Vec<Checkpoint> = Vec::new();
        let mut dt = self.cfg.dt_init.min(self.cfg.dt_max);
        let mut recenters = 0usize;
        let mut steps = 0usize;
        let status;
        loop {
            if state.diag.conv_res <= self.cfg.convergence_tol {
                status = RunStatus::Converged { t: state.t };
                break;
            }
            if state.t >= self.cfg.t_final - 1e-12 {
                status = RunStatus::ReachedTFinal;
                break;
            }
            if self.near_boundary(&state) {
                if state.maps.is_empty() && recenters < self.cfg.recenter_limit {
                    self.recenter(&mut state)?;
                    recenters += 1;
                } else {
                    status = RunStatus::Escaped { t: state.t };
                    break;
                }
            }
            let dt_eff = dt
                .min(state.diag.dt_cap)
                .min(self.cfg.t_final - state.t)
                .max(DT_MIN);
            match self.step(&mut state, dt_eff) {
                Ok(()) => {
                    steps += 1;
                    dt = (dt_eff * 1.25).min(self.cfg.dt_max);
                    if steps % self.cfg.record_every == 0 {
                        records.push(record_of(&state));
                    }
                    if self.cfg.checkpoint_every > 0 && steps % self.cfg.checkpoint_every == 0
                    {
                        checkpoints.push(Checkpoint::from_state(&state));
                    }
                }
                Err(Error::Degeneracy { .. }) | Err(Error::Numerical(_)) if dt_eff > DT_MIN => {
                    dt = dt_eff / 2.0;
                }
                Err(e) => return Err(e),
            }
        }
        if records.last().map(|r| r.t) != Some(state.t) {
            records.push(record_of(&state));
        }
        if checkpoints.last().map(|c| c.t) != Some(state.t) {
            checkpoints.push(Checkpoint::from_state(&state));
        }
        let traj = Trajectory {
            records,
            checkpoints,
            status,
            v0: self.v0,
            dim: state.grid.dim(),
            uk_list: self.cfg.uk_list.clone(),
            y_total: state.y_total.clone(),
            steps,
        };
        Ok((traj, state))
    }

    fn near_boundary(&self, state: &FlowState) -> bool {
        let g = &state.grid;
        for d in 0..g.dim() {
            let lo = g.origin[d] - 0.5 * g.spacing[d];
            let hi = lo + g.dims[d] as f64 * g.spacing[d];
            let margin = self.cfg.recenter_margin * 0.5 * (hi - lo);
            if state.x_t[d] < lo + margin || state.x_t[d] > hi - margin {
                return true;
            }
        }
        false
    }

    /// Translate the box by whole cells so the minimum point returns to the
    /// center. Field values shift with the lattice; nodes entering on the
    /// leading edge extrapolate linearly from the old boundary.
    fn recenter(&self, state: &mut FlowState) -> Result<()> {
        debug_assert!(state.maps.is_empty());
        let g = &state.grid;
        let d = g.dim();
        let mut cells = vec![0i64; d];
        for a in 0..d {
            let center = g.origin[a] + 0.5 * (g.dims[a] as f64 - 1.0) * g.spacing[a];
            cells[a] = ((state.x_t[a] - center) / g.spacing[a]).round() as i64;
        }
        if cells.iter().all(|&c| c == 0) {
            return Ok(());
        }
        let grid = g.translated(&cells);
        let n = grid.len();
        let mut u_new = vec![0.0; n];
        let mut idx = vec![0usize; d];
        let mut src = vec![0i64; d];
        for flat in 0..n {
            grid.unflatten(flat, &mut idx);
            for a in 0..d {
                src[a] = idx[a] as i64 + cells[a];
            }
            u_new[flat] = sample_extrapolated(&state.grid, &state.u, &src);
        }
        let psi0: Vec<f64> = (0..n)
            .map(|f| (self.reference)(&grid.node_flat(f)))
            .collect();
        for (y, (&c, &h)) in state
            .y_total
            .iter_mut()
            .zip(cells.iter().zip(&state.grid.spacing))
        {
            *y += c as f64 * h;
        }
        state.grid = grid;
        state.psi0 = psi0;
        state.u = u_new;
        let an = self.analyze(&state.grid, &state.psi0, &state.u)?;
        commit_analysis(state, an, 0.0, self.v0);
        Ok(())
    }

    /// psi on the grid extended by one ghost layer: zero-flux mirror for u,
    /// analytic reference outside.
    fn extended_psi(&self, grid: &Grid, psi0: &[f64], u: &[f64]) -> Vec<f64> {
        let d = grid.dim();
        let ext_dims: Vec<usize> = grid.dims.iter().map(|n| n + 2).collect();
        let total: usize = ext_dims.iter().product();
        let mut ext = vec![0.0; total];
        let mut e = vec![0usize; d];
        let mut x = vec![0.0; d];
        for flat in 0..total {
            let mut rest = flat;
            for a in (0..d).rev() {
                e[a] = rest % ext_dims[a];
                rest /= ext_dims[a];
            }
            let mut interior = true;
            let mut src = 0usize;
            for a in 0..d {
                let i = e[a] as i64 - 1;
                let clamped = i.clamp(0, grid.dims[a] as i64 - 1) as usize;
                if i != clamped as i64 {
                    interior = false;
                }
                src = src * grid.dims[a] + clamped;
            }
            if interior {
                ext[flat] = psi0[src] + u[src];
            } else {
                for a in 0..d {
                    x[a] = grid.origin[a] + (e[a] as f64 - 1.0) * grid.spacing[a];
                }
                ext[flat] = (self.reference)(&x) + u[src];
            }
        }
        ext
    }

    /// Gradient and Hessian of psi at a node, by central differences on the
    /// extended field.
    fn derivatives(
        &self,
        grid: &Grid,
        ext: &[f64],
        idx: &[usize],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> f64 {
        let d = grid.dim();
        let mut ext_strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            ext_strides[a] = ext_strides[a + 1] * (grid.dims[a + 1] + 2);
        }
        let center: usize = idx
            .iter()
            .zip(&ext_strides)
            .map(|(&i, &s)| (i + 1) * s)
            .sum();
        for a in 0..d {
            let h = grid.spacing[a];
            let p = ext[center + ext_strides[a]];
            let m = ext[center - ext_strides[a]];
            grad[a] = (p - m) / (2.0 * h);
            hess[a * d + a] = (p - 2.0 * ext[center] + m) / (h * h);
            for b in (a + 1)..d {
                let hb = grid.spacing[b];
                let pp = ext[center + ext_strides[a] + ext_strides[b]];
                let pm = ext[center + ext_strides[a] - ext_strides[b]];
                let mp = ext[center - ext_strides[a] + ext_strides[b]];
                let mm = ext[center - ext_strides[a] - ext_strides[b]];
                let v = (pp - pm - mp + mm) / (4.0 * h * hb);
                hess[a * d + b] = v;
                hess[b * d + a] = v;
            }
        }
        ext[center]
    }

    fn eval_node(
        &self,
        grid: &Grid,
        ext: &[f64],
        idx: &[usize],
        flat: usize,
    ) -> Result<NodeEval> {
        let d = grid.dim();
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let psi = self.derivatives(grid, ext, idx, &mut grad, &mut hess);
        let x = grid.node(idx);
        self.cache.eval_core(x, psi, &grad, hess, flat)
    }

    fn analyze(&self, grid: &Grid, psi0: &[f64], u: &[f64]) -> Result<Analysis> {
        let d = grid.dim();
        let n = grid.len();
        let ext = self.extended_psi(grid, psi0, u);
        // Node evaluations are independent; the reduction below stays
        // sequential in flat order, so results are identical at any thread
        // count and the first failing node is still the one reported.
        let evals: Vec<Result<(NodeEval, f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|flat| {
                let mut idx = vec![0usize; d];
                grid.unflatten(flat, &mut idx);
                let eval = self.eval_node(grid, &ext, &idx, flat)?;
                let eig = linalg::sym_eigenvalues(&eval.hess, d);
                Ok((eval, eig[0], eig[0].abs().max(eig[d - 1].abs())))
            })
            .collect();
        let mut rhs = vec![0.0; n];
        let mut ma = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut hess = vec![0.0; n * d * d];
        let mut idx = vec![0usize; d];
        let mut zint = 0.0;
        let mut mass = 0.0;
        let mut hess_sup = 0.0f64;
        let mut hess_min_eig = f64::INFINITY;
        let mut adv_max = 0.0f64;
        let mut min_w = f64::INFINITY;
        let mut min_flat = usize::MAX;
        for (flat, entry) in evals.into_iter().enumerate() {
            let (eval, eig_min, eig_abs) = entry?;
            grid.unflatten(flat, &mut idx);
            rhs[flat] = eval.rhs;
            ma[flat] = eval.ma;
            w[flat] = eval.psi - eval.logj;
            hess[flat * d * d..(flat + 1) * d * d].copy_from_slice(&eval.hess);
            mass += eval.ma;
            // e^{-rhs} ma = J e^{-psi}, formed directly to dodge cancellation.
            zint += (eval.logj - eval.psi).exp();
            hess_min_eig = hess_min_eig.min(eig_min);
            hess_sup = hess_sup.max(eig_abs);
            adv_max = adv_max.max(eval.adv);
            if !grid.is_edge(&idx) && self.in_plus_copy(&grid.node(&idx)) && w[flat] < min_w {
                min_w = w[flat];
                min_flat = flat;
            }
        }
        let cell = grid.cell_volume();
        mass *= cell / self.weyl_factor;
        zint *= cell / self.weyl_factor;
        if !(zint > 0.0) || !zint.is_finite() {
            return Err(Error::Numerical(format!(
                "normalization integral is not positive and finite: {zint:e}"
            )));
        }
        let c_t = self.v0.ln() - zint.ln();
        let mean = rhs.iter().sum::<f64>() / n as f64;
        let mut conv_res = 0.0f64;
        let mut rhs_lo = f64::INFINITY;
        let mut rhs_hi = f64::NEG_INFINITY;
        for v in &rhs {
            conv_res = conv_res.max((v - mean).abs());
            rhs_lo = rhs_lo.min(*v);
            rhs_hi = rhs_hi.max(*v);
        }
        if min_flat == usize::MAX {
            return Err(Error::Numerical(
                "no interior node inside the chamber copy; box too small".into(),
            ));
        }
        grid.unflatten(min_flat, &mut idx);
        let (x_t, m_fit) = subgrid_min(grid, &w, &idx);
        let m_t = m_fit.min(min_w);
        let uk: Vec<f64> = self
            .cfg
            .uk_list
            .iter()
            .map(|&k| {
                let cut = m_t + f64::from(k) + 1.0;
                w.iter()
                    .zip(&ma)
                    .filter(|(wv, _)| **wv < cut)
                    .map(|(_, m)| m)
                    .sum::<f64>()
                    * cell
                    / self.weyl_factor
            })
            .collect();
        let wall_gap = self
            .cache
            .cone_galpha
            .iter()
            .fold(f64::INFINITY, |g, a| g.min(linalg::dot(a, &x_t)));
        let h_min = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut dt_cap = if adv_max > 0.0 {
            self.cfg.cfl * h_min / adv_max
        } else {
            f64::INFINITY
        };
        if d >= 3 {
            // No implicit solver at this dimension: explicit diffusive bound.
            dt_cap = dt_cap.min(self.cfg.cfl * h_min * h_min * hess_min_eig.max(0.0));
        }
        Ok(Analysis {
            rhs,
            ma,
            w,
            hess,
            c_t,
            mass,
            x_t,
            m_t,
            uk,
            osc_h: rhs_hi - rhs_lo,
            conv_res,
            hess_sup,
            hess_min_eig,
            wall_gap,
            dt_cap,
        })
    }

    fn in_plus_copy(&self, x: &[f64]) -> bool {
        self.cache
            .cone_galpha
            .iter()
            .all(|a| linalg::dot(a, x) >= 0.0)
    }

    /// Solve (I - dt L) delta = dt (rhs - c_t) with
    /// L = sum_ab Hinv_ab D^2_ab + 1, the linearization of the right side in
    /// its stiff second-order part. Dimensions 1 and 2 factor the banded
    /// system directly; dimension 3 falls back to the explicit update under
    /// the diffusive cap.
    fn solve_update(
        &self,
        grid: &Grid,
        hess: &[f64],
        rhs: &[f64],
        c_t: f64,
        dt: f64,
    ) -> Result<Vec<f64>> {
        let d = grid.dim();
        let n = grid.len();
        let mut b: Vec<f64> = rhs.iter().map(|v| dt * (v - c_t)).collect();
        if d >= 3 {
            return Ok(b);
        }
        let band = if d == 1 { 1 } else { grid.dims[1] + 1 };
        let mut mat = linalg::Banded::new(n, band, band);
        let mut idx = vec![0usize; d];
        for flat in 0..n {
            grid.unflatten(flat, &mut idx);
            let hs = &hess[flat * d * d..(flat + 1) * d * d];
            let hinv = linalg::inv_spd_small(hs, d).ok_or_else(|| Error::Degeneracy {
                node_index: flat,
                location: grid.node(&idx),
                detail: "Hessian is not invertible in the implicit step".into(),
            })?;
            mat.add(flat, flat, 1.0 - dt);
            for a in 0..d {
                let coef = dt * hinv[a * d + a] / (grid.spacing[a] * grid.spacing[a]);
                mat.add(flat, flat, 2.0 * coef);
                for s in [-1i64, 1] {
                    let col = neighbor_clamped(grid, &idx, a, s);
                    mat.add(flat, col, -coef);
                }
            }
            for a in 0..d {
                for bx in (a + 1)..d {
                    let coef = dt * hinv[a * d + bx]
                        / (2.0 * grid.spacing[a] * grid.spacing[bx]);
                    for sa in [-1i64, 1] {
                        for sb in [-1i64, 1] {
                            let mut jdx = idx.clone();
                            let ia = jdx[a] as i64 + sa;
                            jdx[a] = ia.clamp(0, grid.dims[a] as i64 - 1) as usize;
                            let ib = jdx[bx] as i64 + sb;
                            jdx[bx] = ib.clamp(0, grid.dims[bx] as i64 - 1) as usize;
                            let col = grid.flatten(&jdx);
                            mat.add(flat, col, -coef * (sa * sb) as f64);
                        }
                    }
                }
            }
        }
        let piv = mat
            .factor()
            .ok_or_else(|| Error::Numerical("implicit step matrix is singular".into()))?;
        mat.solve(&piv, &mut b);
        Ok(b)
    }
}

struct NodeEval {
    rhs: f64,
    ma: f64,
    psi: f64,
    logj: f64,
    hess: Vec<f64>,
    adv: f64,
}

/// One interior checkpoint node, ready for the classifier's regressions.
#[derive(Debug, Clone)]
pub struct NodeSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ma: f64,
    pub h: f64,
}

/// Derived fields on the interior nodes of a checkpoint: position, the
/// gradient map y = G^{-1} grad psi, the Monge-Ampere density, and h.
/// Nodes where the density degenerates are skipped rather than fatal;
/// they carry no mass. Needs only the geometry, not a full stepper.
pub fn sample_checkpoint(geom: &ReducedGeometry, ck: &Checkpoint) -> Result<Vec<NodeSample>> {
    let cache = GeomCache::build(geom)?;
    let grid = Grid::from_parts(ck.dims.clone(), ck.origin.clone(), ck.spacing.clone())?;
    if ck.psi.len() != grid.len() || ck.h_field.len() != grid.len() {
        return Err(Error::Input(
            "checkpoint field length disagrees with its grid".into(),
        ));
    }
    let d = grid.dim();
    let mut samples = Vec::new();
    let mut idx = vec![0usize; d];
    for flat in 0..grid.len() {
        grid.unflatten(flat, &mut idx);
        if grid.is_edge(&idx) {
            continue;
        }
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        checkpoint_derivatives(&grid, &ck.psi, &idx, &mut grad, &mut hess);
        let mut y = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                y[i] += cache.ginv[i * d + j] * grad[j];
            }
        }
        let x = grid.node(&idx);
        match cache.eval_core(x.clone(), ck.psi[flat], &grad, hess, flat) {
            Ok(ev) => samples.push(NodeSample {
                x,
                y,
                ma: ev.ma,
                h: ck.h_field[flat],
            }),
            Err(Error::Degeneracy { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(samples)
}

/// Central differences of a stored field at an interior node.
pub(crate) fn checkpoint_derivatives(
    grid: &Grid,
    psi: &[f64],
    idx: &[usize],
    grad: &mut [f64],
    hess: &mut [f64],
) {
    let d = grid.dim();
    let flat = grid.flatten(idx);
    for a in 0..d {
        let h = grid.spacing[a];
        let mut jdx = idx.to_vec();
        jdx[a] += 1;
        let p = psi[grid.flatten(&jdx)];
        jdx[a] -= 2;
        let m = psi[grid.flatten(&jdx)];
        grad[a] = (p - m) / (2.0 * h);
        hess[a * d + a] = (p - 2.0 * psi[flat] + m) / (h * h);
        for b in (a + 1)..d {
            let hb = grid.spacing[b];
            let corner = |sa: i64, sb: i64| {
                let mut kdx = idx.to_vec();
                kdx[a] = (kdx[a] as i64 + sa) as usize;
                kdx[b] = (kdx[b] as i64 + sb) as usize;
                psi[grid.flatten(&kdx)]
            };
            let v =
                (corner(1, 1) - corner(1, -1) - corner(-1, 1) + corner(-1, -1)) / (4.0 * h * hb);
            hess[a * d + b] = v;
            hess[b * d + a] = v;
        }
    }
}

fn commit_analysis(state: &mut FlowState, an: Analysis, weyl_res: f64, v0: f64) {
    state.c_t = an.c_t;
    state.h_field = an.rhs.iter().map(|v| an.c_t - v).collect();
    state.ma = an.ma;
    state.w = an.w;
    state.hess = an.hess;
    state.x_t = an.x_t;
    state.m_t = an.m_t;
    state.diag = Diagnostics {
        osc_h: an.osc_h,
        hess_sup: an.hess_sup,
        hess_min_eig: an.hess_min_eig,
        mass: an.mass,
        coverage: an.mass / v0,
        uk: an.uk,
        conv_res: an.conv_res,
        wall_gap: an.wall_gap,
        weyl_res,
        dt_cap: an.dt_cap,
    };
}

fn record_of(state: &FlowState) -> StepRecord {
    StepRecord {
        t: state.t,
        x_t: state.x_t.clone(),
        m_t: state.m_t,
        c_t: state.c_t,
        osc_h: state.diag.osc_h,
        hess_sup: state.diag.hess_sup,
        mass: state.diag.mass,
        coverage: state.diag.coverage,
        uk: state.diag.uk.clone(),
        conv_res: state.diag.conv_res,
        wall_gap: state.diag.wall_gap,
        hess_min_eig: state.diag.hess_min_eig,
        weyl_res: state.diag.weyl_res,
    }
}

/// Value of the field at integer offsets that may leave the box: clamp to
/// the boundary and continue with the one-sided slope there.
fn sample_extrapolated(grid: &Grid, field: &[f64], src: &[i64]) -> f64 {
    let d = grid.dim();
    let mut clamped = vec![0usize; d];
    for a in 0..d {
        clamped[a] = src[a].clamp(0, grid.dims[a] as i64 - 1) as usize;
    }
    let base = grid.flatten(&clamped);
    let mut v = field[base];
    for a in 0..d {
        let over = src[a] - clamped[a] as i64;
        if over != 0 {
            let inner = if over > 0 {
                clamped[a] - 1
            } else {
                clamped[a] + 1
            };
            let mut jdx = clamped.clone();
            jdx[a] = inner;
            let slope = field[base] - field[grid.flatten(&jdx)];
            v += over as f64 * slope * if over > 0 { 1.0 } else { -1.0 };
        }
    }
    v
}

fn neighbor_clamped(grid: &Grid, idx: &[usize], axis: usize, step: i64) -> usize {
    let mut jdx = idx.to_vec();
    let i = jdx[axis] as i64 + step;
    jdx[axis] = i.clamp(0, grid.dims[axis] as i64 - 1) as usize;
    grid.flatten(&jdx)
}

pub(crate) fn leading_minors_positive(hess: &[f64], d: usize) -> bool {
    for k in 1..=d {
        let mut sub = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                sub[i * k + j] = hess[i * d + j];
            }
        }
        if !(linalg::det_small(&sub, k) > 0.0) {
            return false;
        }
    }
    true
}

/// Quadratic least-squares fit of w on the 3^d neighborhood of the discrete
/// argmin; returns the continuous minimizer (clamped to the cell) and the
/// fitted minimum value.
fn subgrid_min(grid: &Grid, w: &[f64], center: &[usize]) -> (Vec<f64>, f64) {
    let d = grid.dim();
    let node = grid.node(center);
    let nb = d + d * (d + 1) / 2 + 1;
    let mut ata = nalgebra::DMatrix::<f64>::zeros(nb, nb);
    let mut atb = nalgebra::DVector::<f64>::zeros(nb);
    let mut offsets = vec![-1i64; d];
    let mut row = vec![0.0; nb];
    loop {
        let mut jdx = vec![0usize; d];
        let mut ok = true;
        for a in 0..d {
            let i = center[a] as i64 + offsets[a];
            if i < 0 || i >= grid.dims[a] as i64 {
                ok = false;
                break;
            }
            jdx[a] = i as usize;
        }
        if ok {
            row[0] = 1.0;
            for a in 0..d {
                row[1 + a] = offsets[a] as f64;
            }
            let mut k = 1 + d;
            for a in 0..d {
                for b in a..d {
                    row[k] = (offsets[a] * offsets[b]) as f64;
                    k += 1;
                }
            }
            let val = w[grid.flatten(&jdx)];
            for i in 0..nb {
                atb[i] += row[i] * val;
                for j in 0..nb {
                    ata[(i, j)] += row[i] * row[j];
                }
            }
        }
        let mut carry = true;
        for a in (0..d).rev() {
            if carry {
                offsets[a] += 1;
                if offsets[a] > 1 {
                    offsets[a] = -1;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    let fallback = (node.clone(), w[grid.flatten(center)]);
    let coef = match ata.clone().lu().solve(&atb) {
        Some(c) => c,
        None => return fallback,
    };
    // Assemble gradient and Hessian of the fitted quadratic at the center.
    let mut gvec = nalgebra::DVector::<f64>::zeros(d);
    let mut hmat = nalgebra::DMatrix::<f64>::zeros(d, d);
    for a in 0..d {
        gvec[a] = coef[1 + a];
    }
    let mut k = 1 + d;
    for a in 0..d {
        for b in a..d {
            if a == b {
                hmat[(a, a)] = 2.0 * coef[k];
            } else {
                hmat[(a, b)] = coef[k];
                hmat[(b, a)] = coef[k];
            }
            k += 1;
        }
    }
    let chol = match hmat.clone().cholesky() {
        Some(c) => c,
        None => return fallback,
    };
    let dmin = chol.solve(&(-&gvec));
    if dmin.iter().any(|v| v.abs() > 1.0) {
        return fallback;
    }
    let x: Vec<f64> = (0..d)
        .map(|a| node[a] + dmin[a] * grid.spacing[a])
        .collect();
    let value = coef[0]
        + gvec.dot(&dmin)
        + 0.5 * (&hmat * &dmin).dot(&dmin);
    (x, value)
}

/// Order of the group generated by the cone-root reflections, measured as
/// the orbit size of a generic point.
pub(crate) fn reflection_group_order(geom: &ReducedGeometry) -> Result<f64> {
    if geom.cone_roots.is_empty() {
        return Ok(1.0);
    }
    let rs = geom.rootsys();
    let d = rs.dim();
    let seed: Vec<f64> = (0..d)
        .map(|i| 0.318309886 + 0.137035999 * (i as f64 + 1.0).sqrt())
        .collect();
    let mut orbit: Vec<Vec<f64>> = vec![seed.clone()];
    let mut queue = vec![seed];
    while let Some(p) = queue.pop() {
        for &ci in &geom.cone_roots {
            let q = rs.reflect(&p, &rs.positive_roots[ci].coords);
            if !orbit
                .iter()
                .any(|s| s.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-9))
            {
                if orbit.len() >= 1024 {
                    return Err(Error::Geometry(
                        "reflection group closure exceeded 1024 elements".into(),
                    ));
                }
                orbit.push(q.clone());
                queue.push(q);
            }
        }
    }
    Ok(orbit.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ReducedGeometry;
    use crate::polytope::MomentPolytope;
    use crate::rootsys::RootSystem;
    use std::sync::Arc;

    fn toric_flow(preset: &str, lo: f64, hi: f64, h: f64) -> Flow {
        let poly = MomentPolytope::preset(preset).unwrap();
        let geom = ReducedGeometry::group(poly.rootsys().clone());
        let d = geom.dim();
        let cfg = FlowConfig {
            box_min: vec![lo; d],
            box_max: vec![hi; d],
            spacing: h,
            ..FlowConfig::default()
        };
        Flow::new(geom, &poly, cfg).unwrap()
    }

    #[test]
    fn rhs_matches_reference_derivatives_at_center() {
        // Odd dims put a node exactly at the origin, where the reference's
        // analytic value/gradient/Hessian give the right side in closed form.
        let poly = MomentPolytope::preset("square").unwrap();
        let pot = poly.vertex_potential();
        let (v, _, hess) = pot.value_grad_hess(&[0.0, 0.0]);
        let expected = linalg::det_small(&hess, 2).ln() + v;
        let mut errs = Vec::new();
        for (half, h) in [(1.05, 0.1), (1.025, 0.05)] {
            let flow = toric_flow("square", -half, half, h);
            let state = flow.initial_state().unwrap();
            let c = state.grid.dims[0] / 2;
            let node = state.grid.flatten(&[c, c]);
            assert_eq!(state.grid.node(&[c, c]), vec![0.0, 0.0]);
            let rhs = flow.rhs(&state, node).unwrap();
            errs.push((rhs - expected).abs());
        }
        assert!(errs[0] < 5e-2, "coarse error {:.3e}", errs[0]);
        // Central differences are second order: halving h quarters the error.
        assert!(
            errs[1] < 0.30 * errs[0] + 1e-12,
            "no h^2 decay: {:.3e} vs {:.3e}",
            errs[1],
            errs[0]
        );
    }

    #[test]
    fn stationary_input_steps_in_place() {
        // psi = 2 log cosh x - log 2 solves the reduced equation on the
        // interval exactly, so one implicit step must move the field only by
        // a constant (the normalization) plus discretization noise.
        let flow = toric_flow("interval", -1.0, 1.0, 1e-4)
            .with_reference(|x: &[f64]| 2.0 * x[0].cosh().ln() - 2.0f64.ln());
        let mut state = flow.initial_state().unwrap();
        assert!(
            state.diag.osc_h <= 5e-7,
            "rhs oscillation {:.3e}",
            state.diag.osc_h
        );
        assert!(state.x_t[0].abs() <= 1e-9, "x_t = {:.3e}", state.x_t[0]);
        let dt = 0.25;
        flow.step(&mut state, dt).unwrap();
        let n = state.u.len();
        let mean = state.u.iter().sum::<f64>() / n as f64;
        let dev = state
            .u
            .iter()
            .fold(0.0f64, |m, v| m.max((v - mean).abs()))
            / dt;
        assert!(dev <= 1e-8, "drift after constant adjustment {:.3e}", dev);
    }

    #[test]
    fn product_data_mass_factorizes() {
        let f = |s: f64| ((-2.0 * s).exp() + 1.0 + (2.0 * s).exp()).ln();
        let one = toric_flow("interval", -5.0, 5.0, 0.25).with_reference(move |x: &[f64]| f(x[0]));
        let two =
            toric_flow("square", -5.0, 5.0, 0.25).with_reference(move |x: &[f64]| f(x[0]) + f(x[1]));
        let m1 = one.initial_state().unwrap().diag.mass;
        let m2 = two.initial_state().unwrap().diag.mass;
        assert!(
            (m2 - m1 * m1).abs() <= 1e-10 * m1 * m1,
            "mass {m2:.15e} vs product {:.15e}",
            m1 * m1
        );
    }

    #[test]
    fn cp1_flow_converges_to_closed_form() {
        let poly = MomentPolytope::preset("interval").unwrap();
        let geom = ReducedGeometry::group(poly.rootsys().clone());
        let cfg = FlowConfig {
            box_min: vec![-5.0],
            box_max: vec![5.0],
            spacing: 0.02,
            t_final: 30.0,
            convergence_tol: 5e-6,
            ..FlowConfig::default()
        };
        let flow = Flow::new(geom, &poly, cfg).unwrap();
        let (traj, state) = flow.run_full().unwrap();
        assert!(matches!(traj.status, RunStatus::Converged { .. }));
        // Field against the closed form, up to an additive constant fixed by
        // the midrange over the comparison window.
        let exact = |x: f64| 2.0 * x.cosh().ln() - 2.0f64.ln();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut diffs = Vec::new();
        for flat in 0..state.grid.len() {
            let x = state.grid.node_flat(flat)[0];
            if x.abs() <= 4.0 {
                let d = state.psi0[flat] + state.u[flat] - exact(x);
                lo = lo.min(d);
                hi = hi.max(d);
                diffs.push(d);
            }
        }
        let mid = 0.5 * (lo + hi);
        let sup = diffs
            .iter()
            .fold(0.0f64, |m, d| m.max((d - mid).abs()));
        assert!(sup <= 1e-3, "sup error {sup:.3e}");
        // Sublevel masses are monotone in k, bounded by the box mass, and
        // the largest captures almost the whole volume.
        let rec = traj.records.last().unwrap();
        for pair in rec.uk.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-12);
        }
        assert!(rec.uk.last().unwrap() <= &(rec.mass * (1.0 + 1e-12)));
        assert!(rec.coverage >= 0.99 && rec.mass <= 4.0 * 1.01);
        assert!(rec.m_t.abs() < 10.0);
        // The normalization identity, recomputed from the final state by a
        // plain sum: int e^h MA = V0.
        let cell = state.grid.cell_volume();
        let total: f64 = state
            .h_field
            .iter()
            .zip(&state.ma)
            .map(|(h, m)| h.exp() * m)
            .sum::<f64>()
            * cell;
        assert!(
            (total - flow.v0()).abs() <= 1e-10 * flow.v0(),
            "normalized mass {total:.15e}"
        );
        // Checkpoints end at the final time and carry the full field.
        let ck = traj.checkpoints.last().unwrap();
        assert_eq!(ck.t, state.t);
        assert_eq!(ck.psi.len(), state.grid.len());
    }

    #[test]
    fn nonconvex_initial_data_reports_the_node() {
        let flow = toric_flow("interval", -4.0, 4.0, 0.1);
        let err = flow.initial_state_with(&|x: &[f64]| -3.0 * x[0] * x[0]);
        match err {
            Err(Error::Degeneracy {
                location, detail, ..
            }) => {
                assert_eq!(location.len(), 1);
                assert!(detail.contains("positive definite"), "{detail}");
            }
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn gradient_positivity_is_enforced_on_roots() {
        let poly = MomentPolytope::preset("a1-symmetric").unwrap();
        let geom = ReducedGeometry::group(poly.rootsys().clone());
        let cfg = FlowConfig {
            box_min: vec![-3.0],
            box_max: vec![3.0],
            spacing: 0.1,
            ..FlowConfig::default()
        };
        let flow = Flow::new(geom, &poly, cfg).unwrap();
        let mut state = flow.initial_state().unwrap();
        // Tilt psi so its slope turns negative on the positive side of the
        // wall while convexity survives; the sinh-paired ratio must object.
        for flat in 0..state.grid.len() {
            state.u[flat] = -5.0 * state.grid.node_flat(flat)[0];
        }
        let node = state.grid.flatten(&[31]);
        assert!(state.grid.node(&[31])[0] > 0.0);
        match flow.rhs(&state, node) {
            Err(Error::Degeneracy { detail, .. }) => {
                assert!(detail.contains("lost positivity"), "{detail}");
            }
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn weyl_symmetry_is_preserved_along_steps() {
        let poly = MomentPolytope::preset("a1-symmetric").unwrap();
        let geom = ReducedGeometry::group(poly.rootsys().clone());
        let cfg = FlowConfig {
            box_min: vec![-3.0],
            box_max: vec![3.0],
            spacing: 0.1,
            ..FlowConfig::default()
        };
        let flow = Flow::new(geom, &poly, cfg).unwrap();
        let mut state = flow.initial_state().unwrap();
        assert_eq!(state.maps.len(), 1);
        assert!(state.diag.wall_gap > 0.0);
        assert!(state.x_t[0] > 0.0 && state.x_t[0] < 3.0);
        for _ in 0..5 {
            let dt = state.diag.dt_cap.min(1e-3);
            flow.step(&mut state, dt).unwrap();
            assert!(
                state.diag.weyl_res <= 1e-12,
                "weyl residual {:.3e}",
                state.diag.weyl_res
            );
        }
        let n = state.grid.dims[0];
        for i in 0..n {
            assert_eq!(state.u[i], state.u[n - 1 - i]);
        }
    }

    #[test]
    fn recenter_translates_by_whole_cells() {
        let flow = toric_flow("interval", -4.0, 4.0, 0.5);
        let mut state = flow
            .initial_state_with(&|x: &[f64]| 1e-5 * x[0].cos())
            .unwrap();
        let u_old = state.u.clone();
        let origin_old = state.grid.origin[0];
        state.x_t = vec![1.7];
        flow.recenter(&mut state).unwrap();
        assert!((state.grid.origin[0] - (origin_old + 1.5)).abs() < 1e-15);
        assert_eq!(state.y_total, vec![1.5]);
        let n = state.grid.dims[0];
        for i in 0..n - 3 {
            assert_eq!(state.u[i], u_old[i + 3]);
        }
        // Entering nodes continue with the boundary slope.
        let slope = u_old[n - 1] - u_old[n - 2];
        for over in 1..=3usize {
            let expect = u_old[n - 1] + over as f64 * slope;
            assert!((state.u[n - 1 - 3 + over] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn config_validation_names_the_field() {
        let poly = MomentPolytope::preset("interval").unwrap();
        let geom = ReducedGeometry::group(poly.rootsys().clone());
        let bad_box = FlowConfig {
            box_min: vec![-1.0, -1.0],
            box_max: vec![1.0, 1.0],
            ..FlowConfig::default()
        };
        assert!(matches!(
            Flow::new(geom.clone(), &poly, bad_box),
            Err(Error::Config(_))
        ));
        let bad_dt = FlowConfig {
            box_min: vec![-1.0],
            box_max: vec![1.0],
            dt_max: 0.0,
            ..FlowConfig::default()
        };
        match Flow::new(geom, &poly, bad_dt) {
            Err(Error::Config(msg)) => assert!(msg.contains("dt_max"), "{msg}"),
            Err(e) => panic!("wrong error kind: {e}"),
            Ok(_) => panic!("expected config error"),
        }
    }

    #[test]
    fn rejects_dimension_above_three() {
        let rs = Arc::new(RootSystem::toric(4));
        let mut facets = Vec::new();
        for i in 0..4 {
            for s in [-1.0, 1.0] {
                let mut normal = vec![0.0; 4];
                normal[i] = s;
                facets.push(crate::polytope::Facet {
                    normal,
                    offset: 1.0,
                });
            }
        }
        let poly = MomentPolytope::new(rs.clone(), facets).unwrap();
        let geom = ReducedGeometry::group(rs);
        let cfg = FlowConfig {
            box_min: vec![-2.0; 4],
            box_max: vec![2.0; 4],
            ..FlowConfig::default()
        };
        match Flow::new(geom, &poly, cfg) {
            Err(Error::Input(msg)) => assert!(msg.contains("dimension"), "{msg}"),
            Err(e) => panic!("wrong error kind: {e}"),
            Ok(_) => panic!("expected input error"),
        }
    }

    #[test]
    fn sampled_checkpoint_reproduces_density_and_map() {
        // On a converged-ish interval state the checkpoint sampler must agree
        // with the live analysis at interior nodes, and the gradient map must
        // land inside the doubled polytope.
        let flow = toric_flow("interval", -4.0, 4.0, 0.05);
        let state = flow.initial_state().unwrap();
        let ck = Checkpoint::from_state(&state);
        let samples = flow.sample_checkpoint(&ck).unwrap();
        assert_eq!(samples.len(), state.grid.len() - 2);
        let poly = MomentPolytope::preset("interval").unwrap();
        for s in &samples {
            let flat = state
                .grid
                .flatten(&[((s.x[0] - state.grid.origin[0]) / 0.05).round() as usize]);
            assert!((s.ma - state.ma[flat]).abs() <= 1e-12 * state.ma[flat].max(1e-300));
            assert!((s.h - state.h_field[flat]).abs() <= 1e-12);
            assert!(poly.contains_scaled(&s.y, 2.0 + 1e-9));
        }
    }
}
