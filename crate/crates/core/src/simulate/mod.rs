//! Sample-path generation: exact lognormal transitions or Euler–Maruyama.

mod panel;
pub mod rng;

pub use panel::PathPanel;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{transition_terms, ModelParams, ProfileSet, StudyDesign};
use crate::numeric::Quadrature;

/// Default Euler refinement per observation cell.
pub const DEFAULT_SUBSTEPS: usize = 16;

/// Paths that fail this many times in a row abort the panel.
const MAX_ATTEMPTS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Scheme {
    /// Draws from the lognormal transition law at grid times.
    ExactTransition,
    /// Euler–Maruyama on the grid refined by `substeps` per cell.
    EulerMaruyama { substeps: usize },
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::ExactTransition
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_paths: usize,
    #[serde(default)]
    pub scheme: Scheme,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn exact(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            scheme: Scheme::ExactTransition,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Validation("n_paths must be at least 1".into()));
        }
        if let Scheme::EulerMaruyama { substeps: 0 } = self.scheme {
            return Err(Error::Validation("Euler substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// What happened while generating a panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    /// Paths (0-based) that hit a non-positive state and were redrawn.
    pub failed_paths: Vec<usize>,
}

/// Simulate a panel; see [`simulate_with_report`].
pub fn simulate(
    params: &ModelParams,
    profiles: &ProfileSet,
    design: &StudyDesign,
    config: &SimulationConfig,
    quad: &Quadrature,
) -> Result<PathPanel> {
    simulate_with_report(params, profiles, design, config, quad).map(|(p, _)| p)
}

/// Simulate `config.n_paths` paths. The output depends only on the inputs,
/// not on the number of worker threads.
///
/// An Euler path that leaves the positive half-line is redrawn from a fresh
/// substream and recorded. More than 1% of such failures is an error.
pub fn simulate_with_report(
    params: &ModelParams,
    profiles: &ProfileSet,
    design: &StudyDesign,
    config: &SimulationConfig,
    quad: &Quadrature,
) -> Result<(PathPanel, SimulationReport)> {
    params.validate()?;
    config.validate()?;
    profiles.validate_on(design.grid())?;
    let stepper = Stepper::new(params, profiles, design, config.scheme, quad)?;
    let results: Vec<(Option<Vec<f64>>, bool)> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut failed = false;
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = rng::path_rng(config.seed, i as u64, attempt);
                match stepper.path(design.x0(), &mut rng) {
                    Some(p) => return (Some(p), failed),
                    None => failed = true,
                }
            }
            (None, true)
        })
        .collect();
    let failed_paths: Vec<usize> = results.iter().enumerate().filter(|(_, r)| r.1).map(|(i, _)| i).collect();
    if failed_paths.len() as f64 > 0.01 * config.n_paths as f64 {
        return Err(Error::Numeric(format!(
            "{} of {} Euler paths reached a non-positive state; refine the substeps",
            failed_paths.len(),
            config.n_paths
        )));
    }
    let mut values = Vec::with_capacity(results.len());
    for (i, (path, _)) in results.into_iter().enumerate() {
        values.push(path.ok_or_else(|| {
            Error::Numeric(format!("path {} failed {MAX_ATTEMPTS} times in a row", i + 1))
        })?);
    }
    let panel = PathPanel::new(design.clone(), values, "")?;
    Ok((panel, SimulationReport { failed_paths }))
}

/// Per-panel precomputation shared by all paths.
enum Stepper {
    Exact {
        /// (k̄, θ, sd) per cell
        cells: Vec<(f64, f64, f64)>,
    },
    Euler {
        substeps: usize,
        /// (h, α − C, β − D, σ√V) per substep
        steps: Vec<(f64, f64, f64, f64)>,
    },
}

impl Stepper {
    fn new(
        params: &ModelParams,
        profiles: &ProfileSet,
        design: &StudyDesign,
        scheme: Scheme,
        quad: &Quadrature,
    ) -> Result<Self> {
        let grid = design.grid();
        match scheme {
            Scheme::ExactTransition => {
                let cells = grid
                    .windows(2)
                    .map(|w| {
                        let tt = transition_terms(params, profiles, w[0], w[1], quad)?;
                        Ok((tt.kbar, tt.theta, (params.sigma2() * tt.omega).sqrt()))
                    })
                    .collect::<Result<_>>()?;
                Ok(Stepper::Exact { cells })
            }
            Scheme::EulerMaruyama { substeps } => {
                let mut steps = Vec::with_capacity((grid.len() - 1) * substeps);
                for w in grid.windows(2) {
                    let h = (w[1] - w[0]) / substeps as f64;
                    for k in 0..substeps {
                        let t = w[0] + h * k as f64;
                        steps.push((
                            h,
                            params.alpha - profiles.c.value(t),
                            params.beta - profiles.d.value(t),
                            params.sigma * profiles.v.value(t).sqrt(),
                        ));
                    }
                }
                Ok(Stepper::Euler { substeps, steps })
            }
        }
    }

    fn path<R: Rng>(&self, x0: f64, rng: &mut R) -> Option<Vec<f64>> {
        match self {
            Stepper::Exact { cells } => {
                let mut out = Vec::with_capacity(cells.len() + 1);
                out.push(x0);
                let mut y = x0.ln();
                for &(k, theta, sd) in cells {
                    let z: f64 = rng.sample(StandardNormal);
                    y = k * y + theta + sd * z;
                    out.push(y.exp());
                }
                Some(out)
            }
            Stepper::Euler { substeps, steps } => {
                let mut out = Vec::with_capacity(steps.len() / substeps + 1);
                out.push(x0);
                let mut x = x0;
                for (k, &(h, a, b, s)) in steps.iter().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    x += (a - b * x.ln()) * x * h + s * x * h.sqrt() * z;
                    if !(x > 0.0 && x.is_finite()) {
                        return None;
                    }
                    if (k + 1) % substeps == 0 {
                        out.push(x);
                    }
                }
                Some(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> StudyDesign {
        StudyDesign::uniform(0.0, 50.0, 51, 1.0).unwrap()
    }

    #[test]
    fn noise_free_limit_follows_deterministic_curve() {
        let p = ModelParams::new(0.5, 0.2, 1e-12).unwrap();
        for scheme in [Scheme::ExactTransition, Scheme::EulerMaruyama { substeps: 400 }] {
            let cfg = SimulationConfig { n_paths: 3, scheme, seed: 1 };
            let panel = simulate(&p, &ProfileSet::untreated(), &design(), &cfg, &Quadrature::default()).unwrap();
            let tol = if scheme == Scheme::ExactTransition { 1e-6 } else { 5e-2 };
            for row in panel.values() {
                for (t, x) in design().grid().iter().zip(row) {
                    let det = (2.5 * (1.0 - (-0.2 * t).exp())).exp();
                    assert!((x - det).abs() < tol * det.max(1.0), "{scheme:?} t={t}: {x} vs {det}");
                }
            }
        }
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let p = ModelParams::new(0.5, 0.2, 0.01).unwrap();
        let cfg = SimulationConfig { n_paths: 40, scheme: Scheme::EulerMaruyama { substeps: 4 }, seed: 9 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate(&p, &ProfileSet::untreated(), &design(), &cfg, &Quadrature::default()).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn rejects_bad_config() {
        let p = ModelParams::new(0.5, 0.2, 0.01).unwrap();
        let q = Quadrature::default();
        let bad = SimulationConfig { n_paths: 0, scheme: Scheme::ExactTransition, seed: 0 };
        assert!(simulate(&p, &ProfileSet::untreated(), &design(), &bad, &q).is_err());
        let bad = SimulationConfig { n_paths: 2, scheme: Scheme::EulerMaruyama { substeps: 0 }, seed: 0 };
        assert!(simulate(&p, &ProfileSet::untreated(), &design(), &bad, &q).is_err());
    }

    #[test]
    fn euler_failures_abort_the_panel() {
        // a huge diffusion coefficient on a single coarse step drives paths negative
        let p = ModelParams::new(0.5, 0.2, 3.0).unwrap();
        let d = StudyDesign::uniform(0.0, 5.0, 6, 1.0).unwrap();
        let cfg = SimulationConfig { n_paths: 200, scheme: Scheme::EulerMaruyama { substeps: 1 }, seed: 3 };
        assert!(matches!(
            simulate(&p, &ProfileSet::untreated(), &d, &cfg, &Quadrature::default()),
            Err(Error::Numeric(_))
        ));
    }
}
