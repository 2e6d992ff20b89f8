//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bootstrap::Target;
use crate::error::{Error, Result};
use crate::inference::Ordering;
use crate::io::{run, Command, Overrides, RunConfig, SchemeName};
use crate::model::RelationForm;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "GOMPERTZ_THREADS";

#[derive(Parser, Debug)]
#[command(name = "gompertz", version, about = "Gompertz diffusion with therapy functions: simulate, fit and test")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Simulate the control, G1 and G2 panels.
    Simulate(Common),
    /// Stepwise fit of the three panels.
    Fit(Common),
    /// One bootstrap test on the fitted model.
    Test {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        /// Constant H0 value; defaults to the ML constant.
        #[arg(long, allow_negative_numbers = true)]
        h: Option<f64>,
    },
    /// The four constancy tests in protocol order.
    Cascade(Common),
    /// Repeated simulation and fit with an MSE table.
    ReplicateStudy(Common),
    /// Fit plus plot data: curves, moment overlays and null densities.
    Report(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    ordering: Option<OrderingArg>,
    #[arg(long)]
    bootstrap_m: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    loess_span: Option<f64>,
    #[arg(long)]
    loess_degree: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    relation_form: Option<FormArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderingArg {
    Apf,
    Dif,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Exact,
    Euler,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormArg {
    M2,
    M1u,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    C,
    D,
    V1,
    V2,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            ordering: self.ordering.map(|o| match o {
                OrderingArg::Apf => Ordering::AntiProliferativeFirst,
                OrderingArg::Dif => Ordering::DeathInducedFirst,
            }),
            bootstrap_m: self.bootstrap_m,
            level: self.level,
            loess_span: self.loess_span,
            loess_degree: self.loess_degree,
            scheme: self.scheme.map(|s| match s {
                SchemeArg::Exact => SchemeName::Exact,
                SchemeArg::Euler => SchemeName::Euler,
            }),
            relation_form: self.relation_form.map(|f| match f {
                FormArg::M2 => RelationForm::M2,
                FormArg::M1u => RelationForm::M1U,
            }),
        }
    }
}

/// Size the global pool from `GOMPERTZ_THREADS` when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Vec<PathBuf>> {
    let (common, cmd) = match cli.command {
        Sub::Simulate(c) => (c, Command::Simulate),
        Sub::Fit(c) => (c, Command::Fit),
        Sub::Test { common, target, h } => (
            common,
            Command::Test {
                target: target.map(|t| match t {
                    TargetArg::C => Target::C,
                    TargetArg::D => Target::D,
                    TargetArg::V1 => Target::V1,
                    TargetArg::V2 => Target::V2,
                }),
                h,
            },
        ),
        Sub::Cascade(c) => (c, Command::Cascade),
        Sub::ReplicateStudy(c) => (c, Command::ReplicateStudy),
        Sub::Report(c) => (c, Command::Report),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&common.overrides());
    let out = match (&common.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.resolve(o),
        (None, None) => PathBuf::from("out"),
    };
    run(&cmd, &cfg, &out)
}

/// Parse `args`, run the subcommand and return the process exit code:
/// 0 on success, 2 for usage or input errors, 1 for numeric failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    match dispatch(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
