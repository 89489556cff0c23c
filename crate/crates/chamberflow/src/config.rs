//! Run configuration: one TOML file drives every subcommand. Parsing is
//! strict (unknown keys are rejected, errors name the field), defaults are
//! filled on read, and the effective config is echoed next to the outputs so
//! a report can always be reproduced from its own directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classifier::Thresholds;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::geometry::ReducedGeometry;
use crate::polytope::{Facet, MomentPolytope};
use crate::rootsys::{Family, RootSystem};

/// Root-system block. Only meaningful with explicit polytope facets; the
/// shipped polytope presets carry their own root system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootSysBlock {
    /// Family letter: "A", "B", "C", "D", or "toric".
    pub family: String,
    #[serde(default)]
    pub rank: usize,
    #[serde(default)]
    pub center_dim: usize,
    /// Optional inner-product override, row-major. Defaults to the standard
    /// orthonormal-coordinate realization.
    #[serde(default)]
    pub gram: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryBlock {
    /// "group", "horosymmetric", or "degenerate-limit".
    pub preset: String,
    /// Indices into the positive-root list (height-then-lex order).
    pub phi_u: Vec<usize>,
    /// Gradient-shift multiplier override (2 or 4); the preset picks the
    /// natural value when absent.
    pub shift_multiplier: Option<f64>,
}

impl Default for GeometryBlock {
    fn default() -> Self {
        GeometryBlock {
            preset: "group".into(),
            phi_u: vec![],
            shift_multiplier: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacetSpec {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolytopeBlock {
    pub preset: Option<String>,
    pub facets: Option<Vec<FacetSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub box_min: Vec<f64>,
    pub box_max: Vec<f64>,
    pub spacing: f64,
}

/// Time-stepping knobs; every field defaults to the solver default so a
/// config may name only what it changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowBlock {
    pub cfl: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub t_final: f64,
    pub convergence_tol: f64,
    pub record_every: usize,
    pub checkpoint_every: usize,
    pub recenter_limit: usize,
    pub recenter_margin: f64,
    pub uk_list: Vec<u32>,
    pub reference_density: Option<u32>,
}

impl Default for FlowBlock {
    fn default() -> Self {
        let d = FlowConfig::default();
        FlowBlock {
            cfl: d.cfl,
            dt_init: d.dt_init,
            dt_max: d.dt_max,
            t_final: d.t_final,
            convergence_tol: d.convergence_tol,
            record_every: d.record_every,
            checkpoint_every: d.checkpoint_every,
            recenter_limit: d.recenter_limit,
            recenter_margin: d.recenter_margin,
            uk_list: d.uk_list,
            reference_density: d.reference_density,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub rootsys: Option<RootSysBlock>,
    pub geometry: GeometryBlock,
    pub polytope: PolytopeBlock,
    pub grid: Option<GridBlock>,
    pub flow: FlowBlock,
    pub thresholds: Thresholds,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rootsys: None,
            geometry: GeometryBlock::default(),
            polytope: PolytopeBlock::default(),
            grid: None,
            flow: FlowBlock::default(),
            thresholds: Thresholds::default(),
            out_dir: None,
            seed: 0,
        }
    }
}

/// Everything a subcommand needs, built and cross-validated from a config.
/// `flow` is None when the config has no [grid] block: the criterion and
/// degeneration stages run without one.
#[derive(Debug)]
pub struct Assembled {
    pub rootsys: Arc<RootSystem>,
    pub geometry: ReducedGeometry,
    pub polytope: MomentPolytope,
    pub flow: Option<FlowConfig>,
}

impl RunConfig {
    pub fn parse(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<RunConfig> {
        // toml's message already names the offending field and location.
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validates the blocks against each other and builds the concrete
    /// objects. All dimension checks happen here so a bad config fails
    /// before any stage starts.
    pub fn assemble(&self) -> Result<Assembled> {
        let polytope = self.build_polytope()?;
        let rootsys = polytope.rootsys().clone();
        let geometry = self.build_geometry(&rootsys)?;
        self.check_thresholds()?;
        let flow = match &self.grid {
            Some(grid) => Some(self.build_flow(grid, rootsys.dim())?),
            None => None,
        };
        Ok(Assembled {
            rootsys,
            geometry,
            polytope,
            flow,
        })
    }

    fn build_polytope(&self) -> Result<MomentPolytope> {
        match (&self.polytope.preset, &self.polytope.facets) {
            (Some(_), Some(_)) => Err(Error::Config(
                "polytope: give either a preset or explicit facets, not both".into(),
            )),
            (Some(name), None) => {
                if self.rootsys.is_some() {
                    return Err(Error::Config(
                        "polytope preset carries its own root system; drop the [rootsys] block"
                            .into(),
                    ));
                }
                MomentPolytope::preset(name)
            }
            (None, Some(facets)) => {
                let block = self.rootsys.as_ref().ok_or_else(|| {
                    Error::Config(
                        "explicit polytope facets need a [rootsys] block".into(),
                    )
                })?;
                let rs = Arc::new(build_rootsys(block)?);
                let facets = facets
                    .iter()
                    .map(|f| Facet {
                        normal: f.normal.clone(),
                        offset: f.offset,
                    })
                    .collect();
                MomentPolytope::new(rs, facets)
            }
            (None, None) => Err(Error::Config(
                "polytope: needs a preset name or explicit facets".into(),
            )),
        }
    }

    fn build_geometry(&self, rs: &Arc<RootSystem>) -> Result<ReducedGeometry> {
        let g = &self.geometry;
        match g.preset.as_str() {
            "group" => {
                if !g.phi_u.is_empty() {
                    return Err(Error::Config(
                        "geometry preset \"group\" takes no phi_u".into(),
                    ));
                }
                if g.shift_multiplier.is_some() {
                    return Err(Error::Config(
                        "geometry preset \"group\" has no gradient shift to scale".into(),
                    ));
                }
                Ok(ReducedGeometry::group(rs.clone()))
            }
            "horosymmetric" => {
                ReducedGeometry::horosymmetric(rs.clone(), g.phi_u.clone(), g.shift_multiplier)
            }
            "degenerate-limit" => {
                ReducedGeometry::degenerate_limit(rs.clone(), g.phi_u.clone(), g.shift_multiplier)
            }
            other => Err(Error::Config(format!(
                "unknown geometry preset \"{other}\"; available: group, horosymmetric, degenerate-limit"
            ))),
        }
    }

    fn build_flow(&self, grid: &GridBlock, r: usize) -> Result<FlowConfig> {
        if grid.box_min.len() != r || grid.box_max.len() != r {
            return Err(Error::Config(format!(
                "grid box has lengths {}/{}, expected {r}",
                grid.box_min.len(),
                grid.box_max.len()
            )));
        }
        if !(grid.spacing > 0.0) {
            return Err(Error::Config("grid.spacing must be positive".into()));
        }
        let f = &self.flow;
        for (name, v) in [
            ("flow.cfl", f.cfl),
            ("flow.dt_init", f.dt_init),
            ("flow.dt_max", f.dt_max),
            ("flow.convergence_tol", f.convergence_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(f.t_final >= 0.0) {
            return Err(Error::Config("flow.t_final must be nonnegative".into()));
        }
        if f.record_every == 0 {
            return Err(Error::Config("flow.record_every must be at least 1".into()));
        }
        Ok(FlowConfig {
            box_min: grid.box_min.clone(),
            box_max: grid.box_max.clone(),
            spacing: grid.spacing,
            cfl: f.cfl,
            dt_init: f.dt_init,
            dt_max: f.dt_max,
            t_final: f.t_final,
            convergence_tol: f.convergence_tol,
            record_every: f.record_every,
            checkpoint_every: f.checkpoint_every,
            recenter_limit: f.recenter_limit,
            recenter_margin: f.recenter_margin,
            uk_list: f.uk_list.clone(),
            reference_density: f.reference_density,
        })
    }

    fn check_thresholds(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [
            ("thresholds.r_bound", t.r_bound),
            ("thresholds.a_grow", t.a_grow),
            ("thresholds.s_min", t.s_min),
            ("thresholds.tangency_tol", t.tangency_tol),
            ("thresholds.ball_radius", t.ball_radius),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(t.window_fraction > 0.0 && t.window_fraction < 1.0) {
            return Err(Error::Config(
                "thresholds.window_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

fn build_rootsys(block: &RootSysBlock) -> Result<RootSystem> {
    let family = match block.family.as_str() {
        "A" | "a" => Family::A,
        "B" | "b" => Family::B,
        "C" | "c" => Family::C,
        "D" | "d" => Family::D,
        "toric" | "Toric" | "TORIC" => {
            return apply_gram(RootSystem::toric(block.center_dim), block);
        }
        other => {
            return Err(Error::Config(format!(
                "unknown root-system family \"{other}\"; available: A, B, C, D, toric"
            )))
        }
    };
    apply_gram(RootSystem::build(family, block.rank, block.center_dim)?, block)
}

fn apply_gram(rs: RootSystem, block: &RootSysBlock) -> Result<RootSystem> {
    match &block.gram {
        None => Ok(rs),
        Some(rows) => {
            let r = rs.dim();
            if rows.len() != r || rows.iter().any(|row| row.len() != r) {
                return Err(Error::Config(format!(
                    "rootsys.gram must be {r}x{r} for this system"
                )));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            rs.with_gram(DMatrix::from_row_slice(r, r, &flat))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_preset_fills_defaults() {
        let cfg = RunConfig::from_str("[polytope]\npreset = \"cp1\"\n").unwrap();
        assert_eq!(cfg.geometry.preset, "group");
        assert_eq!(cfg.flow.t_final, FlowConfig::default().t_final);
        assert_eq!(cfg.seed, 0);
        let a = cfg.assemble().unwrap();
        assert_eq!(a.rootsys.dim(), 1);
        assert!(a.flow.is_none());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_str("[polytope]\npreset = \"cp1\"\nbogus = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn unknown_polytope_preset_lists_options() {
        let cfg = RunConfig::from_str("[polytope]\npreset = \"dodecahedron\"\n").unwrap();
        let err = cfg.assemble().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dodecahedron"), "{msg}");
        assert!(msg.contains("cp1"), "should list available presets: {msg}");
    }

    #[test]
    fn unknown_geometry_preset_lists_options() {
        let cfg = RunConfig::from_str(
            "[polytope]\npreset = \"cp1\"\n[geometry]\npreset = \"warped\"\n",
        )
        .unwrap();
        let err = cfg.assemble().unwrap_err();
        assert!(err.to_string().contains("horosymmetric"), "{err}");
    }

    #[test]
    fn wrong_facet_normal_length_names_the_facet() {
        let text = r#"
[rootsys]
family = "toric"
center_dim = 2

[polytope]
facets = [{ normal = [1.0], offset = 1.0 }]
"#;
        let err = RunConfig::from_str(text).unwrap().assemble().unwrap_err();
        assert!(err.to_string().contains("facet 0"), "{err}");
    }

    #[test]
    fn preset_with_rootsys_block_is_rejected() {
        let text = "[rootsys]\nfamily = \"A\"\nrank = 1\n[polytope]\npreset = \"cp1\"\n";
        let err = RunConfig::from_str(text).unwrap().assemble().unwrap_err();
        assert!(err.to_string().contains("own root system"), "{err}");
    }

    #[test]
    fn explicit_facets_build_a_polytope() {
        let text = r#"
[rootsys]
family = "toric"
center_dim = 1

[polytope]
facets = [
  { normal = [1.0], offset = 1.0 },
  { normal = [-1.0], offset = 1.0 },
]

[grid]
box_min = [-2.0]
box_max = [2.0]
spacing = 0.5
"#;
        let a = RunConfig::from_str(text).unwrap().assemble().unwrap();
        assert_eq!(a.polytope.vertices().len(), 2);
        let flow = a.flow.unwrap();
        assert_eq!(flow.spacing, 0.5);
        assert_eq!(flow.t_final, FlowConfig::default().t_final);
    }

    #[test]
    fn grid_dimension_mismatch_is_caught() {
        let text = "[polytope]\npreset = \"square\"\n[grid]\nbox_min = [-1.0]\nbox_max = [1.0]\nspacing = 0.1\n";
        let err = RunConfig::from_str(text).unwrap().assemble().unwrap_err();
        assert!(err.to_string().contains("expected 2"), "{err}");
    }

    #[test]
    fn bad_threshold_is_named() {
        let text =
            "[polytope]\npreset = \"cp1\"\n[thresholds]\nwindow_fraction = 1.5\n";
        let err = RunConfig::from_str(text).unwrap().assemble().unwrap_err();
        assert!(err.to_string().contains("window_fraction"), "{err}");
    }

    #[test]
    fn effective_toml_round_trips() {
        let cfg = RunConfig::from_str(
            "[polytope]\npreset = \"cp2-blowup\"\n[flow]\nt_final = 5.0\nseed = 0\n",
        );
        // seed belongs at the top level, not under [flow].
        assert!(cfg.is_err());
        let cfg = RunConfig::from_str(
            "seed = 7\n[polytope]\npreset = \"cp2-blowup\"\n[flow]\nt_final = 5.0\n",
        )
        .unwrap();
        let echo = cfg.effective_toml().unwrap();
        let back = RunConfig::from_str(&echo).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.flow.t_final, 5.0);
        assert_eq!(back.polytope.preset.as_deref(), Some("cp2-blowup"));
        assert_eq!(back.thresholds.r_bound, cfg.thresholds.r_bound);
    }

    #[test]
    fn gram_override_reaches_the_root_system() {
        let text = r#"
[rootsys]
family = "A"
rank = 1
gram = [[4.0]]

[polytope]
facets = [
  { normal = [1.0], offset = 1.0 },
  { normal = [-1.0], offset = 1.0 },
]
"#;
        let a = RunConfig::from_str(text).unwrap().assemble().unwrap();
        let alpha = &a.rootsys.positive_roots[0].coords;
        let n = a.rootsys.pair(alpha, alpha);
        assert!((n - 4.0 * 2.0).abs() < 1e-12, "gram scales pairings: {n}");
    }
}
