//! Run configuration: a TOML tree with every default filled in, plus the
//! pre-flight checks that reject ill-posed runs before any work is done.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{preflight_no_touch, CouplingOptions, GrowthProblem};
use crate::eikonal::{Disk, InitBand, InitialRegion};
use crate::error::{Error, Result};
use crate::fields::{Edge, Grid2, VectorField2};
use crate::gradcheck::GradcheckOptions;
use crate::material::MaterialParams;
use crate::mechanics::{step_count, SolverOptions};
use crate::tensor::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Simulate,
    Eikonal,
    EnergyAudit,
    SharpLimit,
    Gradcheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Eikonal => "eikonal",
            Mode::EnergyAudit => "energy-audit",
            Mode::SharpLimit => "sharp-limit",
            Mode::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Edges carrying `y = id`; the rest are traction free.
    pub dirichlet: Vec<Edge>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 65,
            ny: 65,
            x: [0.0, 1.0],
            y: [0.0, 1.0],
            dirichlet: vec![Edge::Left],
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid2> {
        Grid2::new(self.nx, self.ny, self.x, self.y, &self.dirichlet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    pub t_final: f64,
    pub tau: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            tau: 0.025,
        }
    }
}

/// `y₀ = id + amplitude · cutoff(x) · w(x)` with a seeded smooth `w` and the
/// Dirichlet cutoff, so `y₀ = id` on `Γ_D`. Zero amplitude is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSpec {
    /// Midpoint samples per step in every time integral.
    pub samples_per_step: usize,
    /// Mollifier widths of the coarea cross-check, in grid spacings.
    pub deltas: Vec<f64>,
}

impl Default for AuditSpec {
    fn default() -> Self {
        Self {
            samples_per_step: crate::audit::DEFAULT_SAMPLES,
            deltas: vec![4.0, 2.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Every `stride`-th snapshot is written.
    pub stride: usize,
    pub csv: bool,
    pub vtk: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            stride: 1,
            csv: true,
            vtk: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub grid: GridSpec,
    pub material: MaterialParams,
    pub region: Vec<Disk>,
    pub time: TimeSpec,
    /// Interface widths of the sharp-limit sweep, strictly decreasing to 0.
    pub eps_list: Vec<f64>,
    pub initial: InitialSpec,
    pub solver: SolverOptions,
    pub coupling: CouplingOptions,
    pub init_band: InitBand,
    pub gradcheck: GradcheckOptions,
    pub audit: AuditSpec,
    pub output: OutputSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            seed: 0,
            grid: GridSpec::default(),
            material: MaterialParams::default(),
            region: vec![Disk {
                center: [0.5, 0.5],
                radius: 0.1,
            }],
            time: TimeSpec::default(),
            eps_list: vec![0.2, 0.1, 0.05, 0.0],
            initial: InitialSpec::default(),
            solver: SolverOptions::default(),
            coupling: CouplingOptions::default(),
            init_band: InitBand::default(),
            gradcheck: GradcheckOptions::default(),
            audit: AuditSpec::default(),
            output: OutputSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: one_line(&e.to_string()),
        })
    }

    /// The complete tree, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The configuration with the output directory blanked: two runs that
    /// differ only in where they write describe the same computation.
    pub fn identity(&self) -> Self {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        c
    }

    /// SHA-256 of the canonical JSON form of [`RunConfig::identity`].
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.identity()).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn region(&self) -> InitialRegion {
        InitialRegion::new(self.region.clone())
    }

    /// Width list relevant to the mode.
    fn eps_values(&self) -> Vec<f64> {
        match self.mode {
            Mode::SharpLimit => self.eps_list.clone(),
            _ => vec![self.material.eps],
        }
    }

    /// Pre-flight checks; the first violation is returned as a one-line
    /// diagnosis.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.material.validate()?;
        if self.mode == Mode::Gradcheck {
            return check_gradcheck(&self.gradcheck);
        }
        let (t_final, tau) = (self.time.t_final, self.time.tau);
        step_count(tau, t_final)?;
        if self.region.is_empty() {
            return Err(Error::Config("initial region has no disks".into()));
        }
        for d in &self.region {
            if !(d.radius >= 0.0) || !d.center.iter().all(|c| c.is_finite()) {
                return Err(Error::Config(format!("bad disk {:?}", d)));
            }
        }
        // A bare front solve may run into the boundary; no-touch is then
        // reported rather than enforced.
        if self.mode == Mode::Eikonal {
            return Ok(());
        }
        preflight_no_touch(&self.region(), self.material.gamma_max, t_final, &grid)?;
        if self.mode == Mode::SharpLimit {
            let e = &self.eps_list;
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] > w[1])) || *e.last().unwrap() != 0.0 {
                return Err(Error::Config(format!("eps_list {e:?} must decrease strictly to 0")));
            }
        }
        for eps in self.eps_values() {
            if eps > 0.0 && !(tau < eps) {
                return Err(Error::Config(format!("time step tau = {tau} must be below eps = {eps}")));
            }
        }
        if !(self.initial.amplitude.abs() <= 0.1) {
            return Err(Error::Config(format!(
                "initial perturbation amplitude {} outside [-0.1, 0.1]",
                self.initial.amplitude
            )));
        }
        if self.output.stride == 0 {
            return Err(Error::Config("output stride must be at least 1".into()));
        }
        if self.audit.samples_per_step == 0 || self.audit.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config("audit needs samples_per_step >= 1 and positive deltas".into()));
        }
        if let Some(t) = self.coupling.tol_theta {
            if !(t > 0.0) {
                return Err(Error::Config(format!("coupling.tol_theta = {t} must be positive")));
            }
        }
        Ok(())
    }

    /// The seeded initial deformation.
    pub fn initial_deformation(&self, grid: &Arc<Grid2>) -> Result<VectorField2> {
        let a = self.initial.amplitude;
        if a == 0.0 {
            return Ok(VectorField2::identity(grid.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let ph: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let [x0, x1, y0, y1] = grid.extent();
        let pi = std::f64::consts::PI;
        let y = VectorField2::from_fn(grid.clone(), |x| {
            let u = (x.x - x0) / (x1 - x0);
            let v = (x.y - y0) / (y1 - y0);
            let w = Vec2::new(
                (pi * (u + ph[0])).sin() * (pi * (v + ph[1])).sin(),
                (pi * (u + ph[2])).sin() * (pi * (v + ph[3])).sin(),
            );
            x + w * (a * grid.dirichlet_cutoff(&x))
        });
        if !(y.min_det() > 0.0) {
            return Err(Error::Config(format!("initial perturbation amplitude {a} folds the body")));
        }
        Ok(y)
    }

    /// The coupled problem described by this configuration.
    pub fn problem(&self) -> Result<GrowthProblem> {
        let grid = Arc::new(self.grid.build()?);
        Ok(GrowthProblem {
            y0: self.initial_deformation(&grid)?,
            grid,
            params: self.material.clone(),
            region: self.region(),
            tau: self.time.tau,
            t_final: self.time.t_final,
            solver: self.solver,
            init_band: self.init_band,
        })
    }
}

fn check_gradcheck(o: &GradcheckOptions) -> Result<()> {
    if o.samples == 0 || !(o.step > 0.0) || !(o.tol > 0.0) {
        return Err(Error::Config("gradcheck needs samples >= 1, step > 0, tol > 0".into()));
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.material.mu_a = 2.0;
        c.eps_list = vec![0.3, 0.0];
        c.region.push(Disk {
            center: [0.3, 0.4],
            radius: 0.05,
        });
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut moved = c.clone();
        moved.output.dir = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), c.hash());
        moved.seed = 1;
        assert_ne!(moved.hash(), c.hash());
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let c = RunConfig::from_toml_str("mode = \"sharp-limit\"\n[material]\nmu_a = 3.0\n[grid]\nnx = 33\n").unwrap();
        assert_eq!(c.mode, Mode::SharpLimit);
        assert_eq!(c.material.mu_a, 3.0);
        assert_eq!(c.material.mu_r, MaterialParams::default().mu_r);
        assert_eq!((c.grid.nx, c.grid.ny), (33, 65));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml_str("[material]\nmu = 1.0\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(!e.to_string().contains('\n'));
    }

    #[test]
    fn tau_must_be_below_eps() {
        let mut c = RunConfig::default();
        c.time.tau = 0.25;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("tau"), "{e}");
        c.material.eps = 0.0;
        c.validate().unwrap();
    }

    #[test]
    fn sweep_list_is_checked() {
        let mut c = RunConfig {
            mode: Mode::SharpLimit,
            ..RunConfig::default()
        };
        c.validate().unwrap();
        c.eps_list = vec![0.2, 0.1];
        assert!(c.validate().is_err());
        c.eps_list = vec![0.1, 0.2, 0.0];
        assert!(c.validate().is_err());
        c.eps_list = vec![0.2, 0.02, 0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn touching_region_is_rejected() {
        let mut c = RunConfig::default();
        c.region[0].center = [0.2, 0.5];
        assert!(c.validate().is_err());
        c.time.t_final = 0.1;
        c.time.tau = 0.05;
        c.validate().unwrap();
    }

    #[test]
    fn perturbation_respects_dirichlet_edge() {
        let c = RunConfig {
            initial: InitialSpec { amplitude: 0.05 },
            seed: 7,
            ..RunConfig::default()
        };
        let grid = Arc::new(c.grid.build().unwrap());
        let y = c.initial_deformation(&grid).unwrap();
        let id = VectorField2::identity(grid.clone());
        assert!(y.max_abs_diff(&id) > 1e-3);
        for k in 0..grid.len() {
            if grid.is_dirichlet(k) {
                assert_eq!(y.values[k], id.values[k]);
            }
        }
        assert_eq!(y, c.initial_deformation(&grid).unwrap());
    }
}
