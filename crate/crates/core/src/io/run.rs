//! Subcommand implementations: load or simulate the panels, run the
//! library, write artifacts under the output directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::artifacts::{
    read_toml, write_mse, write_toml, MseRow, ParamsArtifact, ProfileSummary, ProtocolArtifact, Table, TestArtifact,
};
use super::config::{streams, RunConfig};
use super::panel_csv::{read_panel_csv, write_panel_csv};
use crate::bootstrap::{
    b_test, concatenated_protocol, kde_null, ml_constant, Hypothesis, KdeCurve, Target, TestResult,
};
use crate::error::{Error, Result};
use crate::inference::{mse_curve, stepwise_fit, FitResult};
use crate::model::{mean_variance_x, theoretical_moments, ModelParams, ProfileSet, StudyDesign, TherapyProfile};
use crate::simulate::{rng::child_seed, simulate, PathPanel};

/// Seed stream for the replications of `replicate-study`.
const STUDY_STREAM: u64 = 4;

/// Fine-grid points per observation cell in curve overlays.
const CURVE_REFINEMENT: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Simulate,
    Fit,
    /// `h` is a constant H₀ value overriding the configuration.
    Test { target: Option<Target>, h: Option<f64> },
    Cascade,
    ReplicateStudy,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Test { .. } => "test",
            Command::Cascade => "cascade",
            Command::ReplicateStudy => "replicate-study",
            Command::Report => "report",
        }
    }
}

pub struct Panels {
    pub control: PathPanel,
    pub g1: PathPanel,
    pub g2: PathPanel,
}

/// Generating model, known when every group is simulated.
pub struct Truth {
    pub params: ModelParams,
    pub g1: ProfileSet,
    pub g2: ProfileSet,
    pub design: StudyDesign,
}

pub fn truth(cfg: &RunConfig) -> Result<Option<Truth>> {
    let Some(params) = cfg.model else { return Ok(None) };
    if cfg.groups.all().iter().any(|(_, g)| g.panel.is_some()) {
        return Ok(None);
    }
    Ok(Some(Truth {
        params,
        g1: cfg.groups.g1.profiles()?,
        g2: cfg.groups.g2.profiles()?,
        design: cfg.grid.design()?,
    }))
}

/// Ingest or simulate the three groups; group k draws from `child_seed(seed, k)`.
pub fn load_panels(cfg: &RunConfig, seed: u64) -> Result<Panels> {
    let design = cfg.grid.design()?;
    let quad = &cfg.pipeline.quadrature;
    let load = |name: &str, k: u64| -> Result<PathPanel> {
        let spec = match name {
            "control" => &cfg.groups.control,
            "g1" => &cfg.groups.g1,
            _ => &cfg.groups.g2,
        };
        if let Some(path) = &spec.panel {
            return Ok(read_panel_csv(&cfg.resolve(path))?.with_label(name));
        }
        let params = cfg
            .model
            .ok_or_else(|| Error::Config(format!("group {name} is simulated but no [model] is given")))?;
        let sim = cfg.simulation.config(child_seed(seed, k));
        Ok(simulate(&params, &spec.profiles()?, &design, &sim, quad)?.with_label(name))
    };
    Ok(Panels {
        control: load("control", streams::CONTROL)?,
        g1: load("g1", streams::G1)?,
        g2: load("g2", streams::G2)?,
    })
}

fn preamble(cfg: &RunConfig, cmd: &Command, what: &str) -> String {
    format!(
        "gompertz {} -- {what}\nseed = {}\neffective configuration:\n{}",
        cmd.name(),
        cfg.seed,
        cfg.effective_toml()
    )
}

/// Run one subcommand and return the artifact paths written, in order.
pub fn run(cmd: &Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    for (name, g) in cfg.groups.all() {
        if let Some(p) = &g.panel {
            let p = cfg.resolve(p);
            if !p.is_file() {
                return Err(Error::Config(format!("panel file for group {name} not found: {}", p.display())));
            }
        }
    }
    let mut written = Vec::new();
    match cmd {
        Command::Simulate => {
            let panels = load_panels(cfg, cfg.seed)?;
            for p in [&panels.control, &panels.g1, &panels.g2] {
                let path = out.join("panels").join(format!("{}.csv", p.label()));
                write_panel_csv(&path, p, &preamble(cfg, cmd, &format!("panel {}", p.label())))?;
                written.push(path);
            }
        }
        Command::Fit => {
            let panels = load_panels(cfg, cfg.seed)?;
            let fit = stepwise_fit(&panels.control, &panels.g1, &panels.g2, cfg.ordering, &cfg.pipeline)?;
            write_fit(cfg, cmd, out, &fit, &mut written)?;
        }
        Command::Report => {
            let panels = load_panels(cfg, cfg.seed)?;
            let fit = stepwise_fit(&panels.control, &panels.g1, &panels.g2, cfg.ordering, &cfg.pipeline)?;
            write_fit(cfg, cmd, out, &fit, &mut written)?;
            write_report(cfg, cmd, out, &fit, &panels, &mut written)?;
        }
        Command::Test { target, h } => {
            let panels = load_panels(cfg, cfg.seed)?;
            let fit = stepwise_fit(&panels.control, &panels.g1, &panels.g2, cfg.ordering, &cfg.pipeline)?;
            let test = single_test(cfg, &fit, &panels, *target, *h)?;
            write_test(cfg, cmd, out, &test, &test.hypothesis.target.label().to_lowercase(), &mut written)?;
        }
        Command::Cascade => {
            let panels = load_panels(cfg, cfg.seed)?;
            let boot = cfg.bootstrap_config(cfg.bootstrap_seed());
            let outcome =
                concatenated_protocol(&panels.control, &panels.g1, &panels.g2, cfg.ordering, &cfg.pipeline, &boot)?;
            write_fit(cfg, cmd, out, &outcome.final_fit, &mut written)?;
            let mut order = Vec::new();
            for (k, test) in outcome.tests.iter().enumerate() {
                let stem = format!("{}_{}", k + 1, test.hypothesis.target.label().to_lowercase());
                write_test(cfg, cmd, out, test, &stem, &mut written)?;
                order.push(format!("{stem}.txt"));
            }
            let fit = &outcome.final_fit;
            let artifact = ProtocolArtifact {
                ordering: cfg.ordering,
                order,
                log: outcome.log.clone(),
                final_profiles: ProfileSummary {
                    c: fit.c.describe(),
                    d: fit.d.describe(),
                    v1: fit.v1.describe(),
                    v2: fit.v2.describe(),
                },
            };
            let path = out.join("tests").join("protocol.txt");
            write_toml(&path, &preamble(cfg, cmd, "constancy protocol trace"), &artifact)?;
            written.push(path);
        }
        Command::ReplicateStudy => {
            let rows = replicate_study(cfg)?;
            let path = out.join("mse.txt");
            write_mse(&path, &rows, &preamble(cfg, cmd, "grid MSE per replication and medians"))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_fit(cfg: &RunConfig, cmd: &Command, out: &Path, fit: &FitResult, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = out.join("params.txt");
    write_toml(&path, &preamble(cfg, cmd, "control estimates and fitted profiles"), &ParamsArtifact::from_fit(fit))?;
    written.push(path);
    let opt = |v: Vec<f64>| v.into_iter().map(Some).collect::<Vec<_>>();
    for (name, profile, raw) in [
        ("c", &fit.c, &fit.raw_c),
        ("d", &fit.d, &fit.raw_d),
        ("v1", &fit.v1, &fit.raw_v1),
        ("v2", &fit.v2, &fit.raw_v2),
    ] {
        let table = Table::from_columns(
            &["t", "fitted", "pointwise"],
            &[opt(fit.grid.clone()), opt(profile.values_on(&fit.grid)), raw.values.clone()],
        )?;
        let path = out.join("profiles").join(format!("{name}.csv"));
        table.write(&path, &preamble(cfg, cmd, &format!("knot table for {}", name.to_uppercase())))?;
        written.push(path);
    }
    Ok(())
}

fn fine_grid(grid: &[f64]) -> Vec<f64> {
    let mut t = Vec::with_capacity(CURVE_REFINEMENT * grid.len());
    for w in grid.windows(2) {
        for k in 0..CURVE_REFINEMENT {
            t.push(w[0] + (w[1] - w[0]) * k as f64 / CURVE_REFINEMENT as f64);
        }
    }
    t.extend(grid.last());
    t
}

fn sample_mean_var(panel: &PathPanel) -> (Vec<f64>, Vec<f64>) {
    let d = panel.n_subjects() as f64;
    (0..panel.n_times())
        .map(|j| {
            let col: Vec<f64> = panel.values().iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / d;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d - 1.0);
            (mean, var)
        })
        .unzip()
}

fn write_report(
    cfg: &RunConfig,
    cmd: &Command,
    out: &Path,
    fit: &FitResult,
    panels: &Panels,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let truth = truth(cfg)?;
    let opt = |v: Vec<f64>| v.into_iter().map(Some).collect::<Vec<_>>();
    let plot = out.join("plotdata");

    let t = fine_grid(&fit.grid);
    let mut names = vec!["t", "c", "d", "v1", "v2"];
    let mut cols = vec![
        opt(t.clone()),
        opt(fit.c.values_on(&t)),
        opt(fit.d.values_on(&t)),
        opt(fit.v1.values_on(&t)),
        opt(fit.v2.values_on(&t)),
    ];
    if let Some(tr) = &truth {
        names.extend(["c_true", "d_true", "v1_true", "v2_true"]);
        cols.extend([
            opt(tr.g2.c.values_on(&t)),
            opt(tr.g2.d.values_on(&t)),
            opt(tr.g1.v.values_on(&t)),
            opt(tr.g2.v.values_on(&t)),
        ]);
    }
    let path = plot.join("curves.csv");
    Table::from_columns(&names, &cols)?.write(&path, &preamble(cfg, cmd, "fitted therapy functions on a fine grid"))?;
    written.push(path);

    let design = panels.g1.design().clone();
    let quad = &cfg.pipeline.quadrature;
    for (k, panel, fitted, true_profiles) in [
        (1, &panels.g1, fit.g1_profiles(), truth.as_ref().map(|t| &t.g1)),
        (2, &panels.g2, fit.g2_profiles(), truth.as_ref().map(|t| &t.g2)),
    ] {
        let (sm, sv) = sample_mean_var(panel);
        let (fm, fv) = mean_variance_x(&theoretical_moments(&fit.params(), &fitted, &design, quad)?);
        let mut names = vec!["t", "sample_mean", "fitted_mean", "sample_var", "fitted_var"];
        let mut cols = vec![opt(design.grid().to_vec()), opt(sm), opt(fm), opt(sv), opt(fv)];
        if let (Some(tp), Some(tr)) = (true_profiles, &truth) {
            let (tm, tv) = mean_variance_x(&theoretical_moments(&tr.params, tp, &design, quad)?);
            names.extend(["true_mean", "true_var"]);
            cols.extend([opt(tm), opt(tv)]);
        }
        let path = plot.join(format!("moments_g{k}.csv"));
        Table::from_columns(&names, &cols)?
            .write(&path, &preamble(cfg, cmd, &format!("mean and variance overlay for G{k}")))?;
        written.push(path);
    }

    // null densities for tests already present in the output directory
    let tests_dir = out.join("tests");
    if tests_dir.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&tests_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt") && p.file_stem().is_some_and(|s| s != "protocol"))
            .collect();
        files.sort();
        for f in files {
            let art: TestArtifact = read_toml(&f)?;
            let kde = kde_null(&art.replicates, cfg.bootstrap.bandwidth, art.level)?;
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("test");
            written.push(write_kde(cfg, cmd, out, &kde, art.statistic, stem)?);
        }
    }
    Ok(())
}

fn write_kde(cfg: &RunConfig, cmd: &Command, out: &Path, kde: &KdeCurve, statistic: f64, stem: &str) -> Result<PathBuf> {
    let opt = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
    let path = out.join("plotdata").join(format!("kde_{stem}.csv"));
    let what = format!(
        "bootstrap null density for {stem}\nobserved statistic = {statistic:e}\ncritical value = {:e}\nbandwidth = {:e}",
        kde.critical_value, kde.bandwidth
    );
    Table::from_columns(&["d", "density"], &[opt(&kde.grid), opt(&kde.density)])?.write(&path, &preamble(cfg, cmd, &what))?;
    Ok(path)
}

fn write_test(
    cfg: &RunConfig,
    cmd: &Command,
    out: &Path,
    test: &TestResult,
    stem: &str,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let kde = kde_null(&test.replicates, cfg.bootstrap.bandwidth, test.level)?;
    let path = out.join("tests").join(format!("{stem}.txt"));
    write_toml(&path, &preamble(cfg, cmd, &test.hypothesis.describe()), &TestArtifact::new(test, &kde))?;
    written.push(path);
    written.push(write_kde(cfg, cmd, out, &kde, test.statistic, stem)?);
    Ok(())
}

/// One b-Test on the fitted model. Without an explicit H₀ the ML constant
/// under the fitted companion profiles is tested.
fn single_test(
    cfg: &RunConfig,
    fit: &FitResult,
    panels: &Panels,
    target: Option<Target>,
    h: Option<f64>,
) -> Result<TestResult> {
    let section = cfg.test.as_ref();
    let target = target
        .or(section.map(|s| s.target))
        .ok_or_else(|| Error::Config("no test target: pass --target or add a [test] section".into()))?;
    let role = target.role();
    let group = target.group(cfg.ordering);
    let (panel, context) = if group == 1 { (&panels.g1, fit.g1_profiles()) } else { (&panels.g2, fit.g2_profiles()) };
    let params = fit.params();
    let h = match (h, section.and_then(|s| s.h.as_ref())) {
        (Some(v), _) => TherapyProfile::constant(role, v)?,
        (None, Some(spec)) => spec.build(role)?,
        (None, None) => {
            TherapyProfile::constant(role, ml_constant(role, panel, &params, &context, &cfg.pipeline.quadrature)?)?
        }
    };
    let upstream = (group == 2).then(|| fit.profile(cfg.ordering.first_rate(), 1).values_on(&fit.grid));
    let mut hyp = Hypothesis::new(target, h, params, &context, cfg.ordering, panel.n_subjects(), upstream)?;
    if cfg.bootstrap.refit_control {
        hyp = hyp.with_control_refit(panels.control.n_subjects())?;
    }
    b_test(&hyp, panel, &cfg.pipeline, &cfg.bootstrap_config(cfg.bootstrap_seed()))
}

/// Function names in `mse.txt`, in row order.
pub const MSE_FUNCTIONS: [&str; 8] = ["C", "D", "V1", "V2", "EX1", "VarX1", "EX2", "VarX2"];

/// Grid MSEs of one fit against the generating model, in `MSE_FUNCTIONS` order.
pub fn fit_mse(fit: &FitResult, truth: &Truth, cfg: &RunConfig) -> Result<[f64; 8]> {
    let g = &fit.grid;
    let quad = &cfg.pipeline.quadrature;
    let moments = |params: &ModelParams, p: &ProfileSet| -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(mean_variance_x(&theoretical_moments(params, p, &truth.design, quad)?))
    };
    let (fm1, fv1) = moments(&fit.params(), &fit.g1_profiles())?;
    let (fm2, fv2) = moments(&fit.params(), &fit.g2_profiles())?;
    let (tm1, tv1) = moments(&truth.params, &truth.g1)?;
    let (tm2, tv2) = moments(&truth.params, &truth.g2)?;
    Ok([
        mse_curve(&fit.c.values_on(g), &truth.g2.c.values_on(g))?,
        mse_curve(&fit.d.values_on(g), &truth.g2.d.values_on(g))?,
        mse_curve(&fit.v1.values_on(g), &truth.g1.v.values_on(g))?,
        mse_curve(&fit.v2.values_on(g), &truth.g2.v.values_on(g))?,
        mse_curve(&fm1, &tm1)?,
        mse_curve(&fv1, &tv1)?,
        mse_curve(&fm2, &tm2)?,
        mse_curve(&fv2, &tv2)?,
    ])
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Simulate and fit `study.replications` times; replication r (1-based in
/// the output) uses seed `child_seed(child_seed(seed, 4), r)`.
pub fn replicate_study(cfg: &RunConfig) -> Result<Vec<MseRow>> {
    let truth = truth(cfg)?
        .ok_or_else(|| Error::Config("replicate-study needs [model] and profiles for every group (no panel files)".into()))?;
    let base = child_seed(cfg.seed, STUDY_STREAM);
    let per_rep: Vec<[f64; 8]> = (0..cfg.study.replications as u64)
        .into_par_iter()
        .map(|r| {
            let panels = load_panels(cfg, child_seed(base, r))?;
            let fit = stepwise_fit(&panels.control, &panels.g1, &panels.g2, cfg.ordering, &cfg.pipeline)?;
            fit_mse(&fit, &truth, cfg)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, name) in MSE_FUNCTIONS.iter().enumerate() {
        for (r, m) in per_rep.iter().enumerate() {
            rows.push(MseRow {
                function: name.to_string(),
                replication: Some(r + 1),
                mse: m[k],
            });
        }
        rows.push(MseRow {
            function: name.to_string(),
            replication: None,
            mse: median(&per_rep.iter().map(|m| m[k]).collect::<Vec<_>>()),
        });
    }
    Ok(rows)
}
