use std::path::PathBuf;
use std::process::ExitCode;

use algebroid_flow::{Error, FlowMode, Format, Gradient};
use clap::{Args, Parser, Subcommand};

mod commands;

/// Lagrange geometry on Lie algebroids and N-adapted Ricci flow.
#[derive(Debug, Parser)]
#[command(name = "algebroid-flow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the structure equations of the algebroid.
    Validate(Common),
    /// Hessian, semi-spray and N-connection at sample points.
    Geom(Common),
    /// Connection, torsion, curvature, Ricci, Einstein and distortion
    /// tensors at sample points, plus the identity report.
    Curv(Common),
    /// Run the Ricci flow and write the time series.
    Flow(Common),
    /// Thermodynamic values of the (optionally evolved) flow state.
    Thermo(Common),
    /// Integrate the Euler-Lagrange equations.
    ElIntegrate(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (alternative to --scenario).
    #[arg(value_name = "SCENARIO")]
    path: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Directory for artifacts; without it the main artifact goes to stdout.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Override the residual tolerance of the checks.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    grad: Option<GradArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dchi: Option<f64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Canonical,
    Distorted,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum GradArg {
    Squared,
    Literal,
}

impl Common {
    fn scenario_path(&self) -> Result<&PathBuf, Failure> {
        match (&self.path, &self.scenario) {
            (Some(_), Some(_)) => Err(Failure::usage("give the scenario either positionally or with --scenario, not both")),
            (Some(p), None) | (None, Some(p)) => Ok(p),
            (None, None) => Err(Failure::usage("missing scenario: pass a path or --scenario PATH")),
        }
    }

    fn format(&self) -> Option<Format> {
        self.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        })
    }

    fn mode(&self) -> Option<FlowMode> {
        self.mode.map(|m| match m {
            ModeArg::Canonical => FlowMode::Canonical,
            ModeArg::Distorted => FlowMode::Distorted,
        })
    }

    fn grad(&self) -> Option<Gradient> {
        self.grad.map(|g| match g {
            GradArg::Squared => Gradient::Squared,
            GradArg::Literal => Gradient::Literal,
        })
    }
}

/// A command failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    kind: String,
    message: String,
    path: Option<String>,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            kind: "usage".into(),
            message: message.into(),
            path: None,
        }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            kind: "invariant".into(),
            message: message.into(),
            path: None,
        }
    }

    fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "message": self.message,
            "path": self.path,
            "exit_code": self.code,
        })
        .to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) | Error::Singular { .. } | Error::NotPositive(_) | Error::Unstable(_) => 2,
            Error::Invariant(_) => 3,
            Error::Parse { .. } | Error::Dimension(_) | Error::Invalid(_) | Error::Scenario { .. } | Error::Io(_) => 1,
        };
        let path = match &e {
            Error::Scenario { path, .. } => Some(path.clone()),
            _ => None,
        };
        let message = match &e {
            Error::Scenario { message, .. } => message.clone(),
            other => other.to_string(),
        };
        Failure {
            code,
            kind: e.kind().into(),
            message,
            path,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            eprintln!("{}", Failure::usage(msg.trim_end()).to_json());
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Validate(c) => commands::validate(c),
        Command::Geom(c) => commands::geom(c),
        Command::Curv(c) => commands::curv(c),
        Command::Flow(c) => commands::flow(c),
        Command::Thermo(c) => commands::thermo(c),
        Command::ElIntegrate(c) => commands::el_integrate(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}
