//! Configuration, file formats and the subcommand layer.

pub mod artifacts;
pub mod config;
pub mod panel_csv;
pub mod run;

pub use artifacts::{read_mse, read_toml, write_mse, write_toml, MseRow, ParamsArtifact, ProtocolArtifact, Table, TestArtifact};
pub use config::{GroupSpec, GridSpec, Overrides, ProfileSpec, RunConfig, SchemeName};
pub use panel_csv::{panel_to_csv, parse_panel_csv, read_panel_csv, write_panel_csv};
pub use run::{load_panels, replicate_study, run, Command};
