//! Cell-centered tensor grids on axis-aligned boxes, with reflection
//! symmetry realized as affine maps on the integer index lattice. That makes
//! Weyl averaging exact in floating point: orbits are computed in index
//! space, never by comparing coordinates.

use crate::error::{Error, Result};
use crate::rootsys::RootSystem;

/// How close a reflection's index map must be to an integer matrix before we
/// trust it. Coordinates derived from integer index maps are then exact.
const MAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Grid {
    /// Cells per axis; node i sits at origin + i * spacing.
    pub dims: Vec<usize>,
    /// Coordinate of node (0, ..., 0): box_min + spacing / 2.
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    strides: Vec<usize>,
}

/// Affine map on index vectors, idx -> mat * idx + off, acting within one
/// grid. Entries are exact integers, so composing and applying them is free
/// of rounding.
#[derive(Debug, Clone)]
pub struct IndexMap {
    dim: usize,
    mat: Vec<i64>,
    off: Vec<i64>,
}

impl IndexMap {
    pub fn apply(&self, idx: &[usize], out: &mut [i64]) {
        let d = self.dim;
        for i in 0..d {
            let mut v = self.off[i];
            for j in 0..d {
                v += self.mat[i * d + j] * idx[j] as i64;
            }
            out[i] = v;
        }
    }
}

impl Grid {
    /// Cell-centered grid covering [box_min, box_max] with spacing as close
    /// to `target` as divides each extent evenly. No node ever lies on a
    /// coordinate hyperplane through the box center when dims are even, and
    /// the center cell of an odd axis sits exactly at the midpoint.
    pub fn new(box_min: &[f64], box_max: &[f64], target: f64) -> Result<Self> {
        let d = box_min.len();
        if d == 0 || d != box_max.len() {
            return Err(Error::Input("grid box dimensions disagree".into()));
        }
        if !(target > 0.0) {
            return Err(Error::Input("grid spacing must be positive".into()));
        }
        let mut dims = Vec::with_capacity(d);
        let mut origin = Vec::with_capacity(d);
        let mut spacing = Vec::with_capacity(d);
        for i in 0..d {
            let extent = box_max[i] - box_min[i];
            if !(extent > 0.0) {
                return Err(Error::Input(format!(
                    "grid box is empty along axis {i}"
                )));
            }
            let n = (extent / target).round().max(3.0) as usize;
            let h = extent / n as f64;
            dims.push(n);
            spacing.push(h);
            origin.push(box_min[i] + 0.5 * h);
        }
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Ok(Grid {
            dims,
            origin,
            spacing,
            strides,
        })
    }

    /// Rebuild a grid from stored metadata (checkpoints).
    pub fn from_parts(dims: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>) -> Result<Self> {
        let d = dims.len();
        if d == 0 || origin.len() != d || spacing.len() != d {
            return Err(Error::Input("grid metadata dimensions disagree".into()));
        }
        if dims.iter().any(|&n| n < 3) || spacing.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Input("grid metadata is not a valid grid".into()));
        }
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Ok(Grid {
            dims,
            origin,
            spacing,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, flat: usize, out: &mut [usize]) {
        let mut rest = flat;
        for (o, (&s, _)) in out.iter_mut().zip(self.strides.iter().zip(&self.dims)) {
            *o = rest / s;
            rest %= s;
        }
    }

    pub fn node(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(self.origin.iter().zip(&self.spacing))
            .map(|(&i, (&o, &h))| o + i as f64 * h)
            .collect()
    }

    pub fn node_flat(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.dim()];
        self.unflatten(flat, &mut idx);
        self.node(&idx)
    }

    /// True when any index component touches the outer layer.
    pub fn is_edge(&self, idx: &[usize]) -> bool {
        idx.iter()
            .zip(&self.dims)
            .any(|(&i, &n)| i == 0 || i + 1 == n)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Index map of the reflection through the wall of `alpha`, if the grid
    /// is stable under it: the conjugated matrix must be integer and must
    /// send the index box into itself.
    pub fn reflection_map(&self, rs: &RootSystem, alpha: &[f64]) -> Result<IndexMap> {
        let d = self.dim();
        let mut mat = vec![0i64; d * d];
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = rs.reflect(&e, alpha);
            for i in 0..d {
                let entry = col[i] * self.spacing[j] / self.spacing[i];
                let snapped = entry.round();
                if (entry - snapped).abs() > MAP_TOL {
                    return Err(Error::Geometry(format!(
                        "grid is not stable under the reflection of {alpha:?}: \
                         index map entry {entry} is not an integer"
                    )));
                }
                mat[i * d + j] = snapped as i64;
            }
        }
        let image = rs.reflect(&self.origin, alpha);
        let mut off = vec![0i64; d];
        for i in 0..d {
            let entry = (image[i] - self.origin[i]) / self.spacing[i];
            let snapped = entry.round();
            if (entry - snapped).abs() > MAP_TOL {
                return Err(Error::Geometry(format!(
                    "grid origin is not aligned with the reflection of {alpha:?}"
                )));
            }
            off[i] = snapped as i64;
        }
        let map = IndexMap { dim: d, mat, off };
        // Componentwise-affine image of a box is extremal at corners, so
        // checking the 2^d corners checks every node.
        let mut corner = vec![0usize; d];
        let mut out = vec![0i64; d];
        for mask in 0..(1usize << d) {
            for i in 0..d {
                corner[i] = if mask & (1 << i) != 0 {
                    self.dims[i] - 1
                } else {
                    0
                };
            }
            map.apply(&corner, &mut out);
            for i in 0..d {
                if out[i] < 0 || out[i] >= self.dims[i] as i64 {
                    return Err(Error::Geometry(format!(
                        "reflection of {alpha:?} maps the grid box outside itself"
                    )));
                }
            }
        }
        Ok(map)
    }

    /// Index maps for the reflections of the listed positive roots. Empty
    /// input (toric) gives an empty list.
    pub fn symmetry_maps(&self, rs: &RootSystem, roots: &[usize]) -> Result<Vec<IndexMap>> {
        roots
            .iter()
            .map(|&i| self.reflection_map(rs, &rs.positive_roots[i].coords))
            .collect()
    }

    /// Replace the field by its average over each reflection-group orbit.
    /// Returns the largest correction applied, which doubles as the Weyl
    /// residual of the input.
    pub fn symmetrize(&self, maps: &[IndexMap], field: &mut [f64]) -> f64 {
        debug_assert_eq!(field.len(), self.len());
        if maps.is_empty() {
            return 0.0;
        }
        let d = self.dim();
        let mut visited = vec![false; field.len()];
        let mut orbit: Vec<usize> = Vec::new();
        let mut idx = vec![0usize; d];
        let mut out = vec![0i64; d];
        let mut residual = 0.0f64;
        for start in 0..field.len() {
            if visited[start] {
                continue;
            }
            orbit.clear();
            orbit.push(start);
            visited[start] = true;
            let mut cursor = 0;
            while cursor < orbit.len() {
                let flat = orbit[cursor];
                cursor += 1;
                self.unflatten(flat, &mut idx);
                for map in maps {
                    map.apply(&idx, &mut out);
                    let mut image = 0usize;
                    for (v, s) in out.iter().zip(&self.strides) {
                        image += *v as usize * s;
                    }
                    if !visited[image] {
                        visited[image] = true;
                        orbit.push(image);
                    }
                }
            }
            let mean = orbit.iter().map(|&f| field[f]).sum::<f64>() / orbit.len() as f64;
            for &f in &orbit {
                residual = residual.max((field[f] - mean).abs());
                field[f] = mean;
            }
        }
        residual
    }

    /// Same grid translated by whole cells.
    pub fn translated(&self, cells: &[i64]) -> Grid {
        let mut g = self.clone();
        for (o, (&c, &h)) in g.origin.iter_mut().zip(cells.iter().zip(&self.spacing)) {
            *o += c as f64 * h;
        }
        g
    }
}
