pub mod error;
pub mod panel;
pub mod var;

pub use error::{Error, ErrorKind, Result};
pub use panel::{ingest, TimeLabel, TimeSeriesPanel};
pub use var::{fit_var, is_stable, log_likelihood, lr_statistic, simulate_var, Interval, VarFit, VarParams};
pub mod fevd;
pub mod adaptive;
pub mod calibrate;
pub mod crisis;
pub mod scenarios;
pub mod config;
pub mod pipeline;
