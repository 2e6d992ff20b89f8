//! Run configuration: one TOML file describing the study, the estimation
//! settings and the bootstrap.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{BandwidthRule, BootstrapConfig, Target, DEFAULT_REPLICATES};
use crate::error::{Error, Result};
use crate::inference::{LoessConfig, Ordering, PipelineConfig, Smoother};
use crate::model::{ModelParams, ParametricForm, ProfileKind, ProfileSet, RelationForm, Role, StudyDesign, TherapyProfile};
use crate::numeric::NaturalCubicSpline;
use crate::simulate::{rng::child_seed, Scheme, SimulationConfig, DEFAULT_SUBSTEPS};

/// Declarative therapy function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    Zero,
    One,
    Constant { value: f64 },
    Linear {
        #[serde(default)]
        intercept: f64,
        slope: f64,
    },
    RationalBump { p: f64, q: f64, r: f64 },
    LognormalOffsetSquared { a: f64, b: f64, mu: f64, s2: f64 },
    Spline { knots: Vec<f64>, values: Vec<f64> },
}

impl ProfileSpec {
    pub fn build(&self, role: Role) -> Result<TherapyProfile> {
        let closure = |form| TherapyProfile::closure(role, form);
        match self {
            ProfileSpec::Zero if role == Role::V => Err(Error::Config("a variance profile cannot be zero".into())),
            ProfileSpec::Zero => Ok(TherapyProfile::zero(role)),
            ProfileSpec::One => TherapyProfile::constant(role, 1.0),
            ProfileSpec::Constant { value } => TherapyProfile::constant(role, *value),
            ProfileSpec::Linear { intercept, slope } => closure(ParametricForm::Linear {
                intercept: *intercept,
                slope: *slope,
            }),
            ProfileSpec::RationalBump { p, q, r } => closure(ParametricForm::RationalBump { p: *p, q: *q, r: *r }),
            ProfileSpec::LognormalOffsetSquared { a, b, mu, s2 } => closure(ParametricForm::LognormalOffsetSquared {
                a: *a,
                b: *b,
                mu: *mu,
                s2: *s2,
            }),
            ProfileSpec::Spline { knots, values } => {
                TherapyProfile::new(role, ProfileKind::GridSpline(NaturalCubicSpline::new(knots, values)?))
            }
        }
    }
}

/// Observation grid. Either explicit `times` or `points` equally spaced
/// times on [t0, t_end].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_x0")]
    pub x0: f64,
}

fn default_t_end() -> f64 {
    50.0
}
fn default_points() -> usize {
    51
}
fn default_x0() -> f64 {
    1.0
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t_end: default_t_end(),
            points: default_points(),
            times: None,
            x0: default_x0(),
        }
    }
}

impl GridSpec {
    pub fn design(&self) -> Result<StudyDesign> {
        match &self.times {
            Some(t) => StudyDesign::new(t.clone(), self.x0),
            None => StudyDesign::uniform(self.t0, self.t_end, self.points, self.x0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Exact,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_paths() -> usize {
    25
}
fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            scheme: SchemeName::Exact,
            substeps: default_substeps(),
        }
    }
}

impl SimulationSection {
    pub fn config(&self, seed: u64) -> SimulationConfig {
        SimulationConfig {
            n_paths: self.n_paths,
            scheme: match self.scheme {
                SchemeName::Exact => Scheme::ExactTransition,
                SchemeName::Euler => Scheme::EulerMaruyama { substeps: self.substeps },
            },
            seed,
        }
    }
}

/// One group: either a panel file to ingest or profiles to simulate from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<ProfileSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<ProfileSpec>,
}

impl GroupSpec {
    fn declares_profiles(&self) -> bool {
        self.c.is_some() || self.d.is_some() || self.v.is_some()
    }

    /// Profiles to simulate from; undeclared slots are neutral.
    pub fn profiles(&self) -> Result<ProfileSet> {
        let get = |spec: &Option<ProfileSpec>, role: Role| match spec {
            Some(s) => s.build(role),
            None => Ok(role.neutral()),
        };
        ProfileSet::new(get(&self.c, Role::C)?, get(&self.d, Role::D)?, get(&self.v, Role::V)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Groups {
    #[serde(default)]
    pub control: GroupSpec,
    #[serde(default)]
    pub g1: GroupSpec,
    #[serde(default)]
    pub g2: GroupSpec,
}

impl Groups {
    pub fn all(&self) -> [(&'static str, &GroupSpec); 3] {
        [("control", &self.control), ("g1", &self.g1), ("g2", &self.g2)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_true")]
    pub refit_control: bool,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
}

fn default_m() -> usize {
    DEFAULT_REPLICATES
}
fn default_level() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            m: default_m(),
            level: default_level(),
            refit_control: true,
            bandwidth: BandwidthRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_replications() -> usize {
    10
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            replications: default_replications(),
        }
    }
}

/// Single b-Test settings. Without `h` the ML constant is tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    pub target: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<ProfileSpec>,
}

/// Seed streams derived from the run seed.
pub mod streams {
    pub const CONTROL: u64 = 0;
    pub const G1: u64 = 1;
    pub const G2: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ordering: Ordering,
    /// Output directory; not part of the embedded configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Control-group parameters used for simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub groups: Groups,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestSection>,
    /// Directory relative panel paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ordering: Option<Ordering>,
    pub bootstrap_m: Option<usize>,
    pub level: Option<f64>,
    pub loess_span: Option<f64>,
    pub loess_degree: Option<usize>,
    pub scheme: Option<SchemeName>,
    pub relation_form: Option<RelationForm>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(v) = o.ordering {
            self.ordering = v;
        }
        if let Some(m) = o.bootstrap_m {
            self.bootstrap.m = m;
        }
        if let Some(l) = o.level {
            self.bootstrap.level = l;
        }
        if let Some(s) = o.scheme {
            self.simulation.scheme = s;
        }
        if let Some(f) = o.relation_form {
            self.pipeline.relation_form = f;
        }
        if o.loess_span.is_some() || o.loess_degree.is_some() {
            let sm = &mut self.pipeline.smoothing;
            for slot in [&mut sm.rate, &mut sm.variance] {
                let mut cfg = match *slot {
                    Smoother::Loess(c) => c,
                    Smoother::Interpolate => LoessConfig::default(),
                };
                if let Some(s) = o.loess_span {
                    cfg.span = s;
                }
                if let Some(d) = o.loess_degree {
                    cfg.degree = d;
                }
                *slot = Smoother::Loess(cfg);
            }
        }
    }

    /// Check the invariants that do not need the file system.
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must not exceed {}, got {}", i64::MAX, self.seed)));
        }
        if let Some(p) = &self.model {
            p.validate()?;
        }
        self.grid.design()?;
        self.simulation.config(0).validate()?;
        for sm in [self.pipeline.smoothing.rate, self.pipeline.smoothing.variance] {
            if let Smoother::Loess(c) = sm {
                c.validate()?;
            }
        }
        self.bootstrap_config(0).validate()?;
        if self.study.replications == 0 {
            return Err(Error::Config("study.replications must be at least 1".into()));
        }
        for (name, g) in self.groups.all() {
            if g.panel.is_some() && g.declares_profiles() {
                return Err(Error::Config(format!(
                    "group {name} declares both a panel file and profiles; give one or the other"
                )));
            }
            if g.panel.is_none() && self.model.is_none() {
                return Err(Error::Config(format!(
                    "group {name} is simulated but no [model] parameters are given"
                )));
            }
            g.profiles()?;
        }
        if self.groups.control.declares_profiles() {
            return Err(Error::Config("the control group is untreated and takes no profiles".into()));
        }
        if let Some(t) = &self.test {
            if let Some(h) = &t.h {
                h.build(t.target.role())?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn bootstrap_config(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            m: self.bootstrap.m,
            level: self.bootstrap.level,
            seed,
            refit_control: self.bootstrap.refit_control,
        }
    }

    pub fn bootstrap_seed(&self) -> u64 {
        child_seed(self.seed, streams::BOOTSTRAP)
    }

    /// The configuration as embedded in artifacts: TOML without the output directory.
    pub fn effective_toml(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        toml::to_string(&c).unwrap_or_else(|e| format!("# configuration could not be serialized: {e}\n"))
    }
}
