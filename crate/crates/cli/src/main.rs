use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use svexp_cli::commands::{self, Overrides};
use svexp_cli::sensitivity::{McSettings, Sweep, MATURITIES, STRIKES};
use svexp_cli::{CliError, Result, StrikeSpec};
use svexp_core::curve::{Model, OptionKind};

#[derive(Parser)]
#[command(name = "svexp", version, about = "Second-order expansion pricing for Heston and GARCH diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Heston,
    Garch,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Heston => Model::Heston,
            ModelArg::Garch => Model::Garch,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Put,
    Call,
}

#[derive(Args)]
struct ModelArgs {
    /// Model family; without --params the safe set of this family is used.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Parameter file (JSON).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    v0: Option<f64>,
}

impl ModelArgs {
    fn overrides(&self) -> Overrides {
        Overrides { kappa: self.kappa, theta: self.theta, lambda: self.lambda, rho: self.rho, v0: self.v0 }
    }

    fn load(&self, t: f64) -> Result<(svexp_core::curve::MarketState<f64>, svexp_core::curve::ModelParams<f64>)> {
        commands::load_model(self.model.map(Into::into), self.params.as_deref(), t, &self.overrides())
    }
}

#[derive(Args)]
struct McArgs {
    #[arg(long, default_value_t = 200_000)]
    paths: usize,
    /// Defaults to 24 for T ≤ 0.25 and 8 beyond.
    #[arg(long)]
    steps_per_day: Option<u32>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    no_antithetic: bool,
    #[arg(long)]
    no_control_variates: bool,
}

impl McArgs {
    fn settings(&self) -> McSettings {
        McSettings {
            paths: self.paths,
            steps_per_day: self.steps_per_day,
            seed: self.seed,
            antithetic: !self.no_antithetic,
            control_variates: !self.no_control_variates,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Price one option; prints every expansion term as JSON.
    Price {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value = "atm")]
        strike: StrikeSpec,
        #[arg(long, value_enum, default_value = "put")]
        kind: KindArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Implied vols of the expansion at several maturities and strikes.
    Surface {
        #[command(flatten)]
        model: ModelArgs,
        /// Maturities; defaults to 1M, 3M, 6M, 1Y.
        #[arg(long = "T", value_delimiter = ',')]
        t: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "atm,d25,d10")]
        strike: Vec<StrikeSpec>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-parameter sweep around the safe set: expansion vs mixing MC, in bp.
    Sensitivity {
        #[arg(long, value_enum, default_value = "heston")]
        model: ModelArg,
        /// PARAM=v1,v2,... with PARAM one of kappa, theta, lambda, rho.
        #[arg(long, allow_hyphen_values = true)]
        sweep: Sweep,
        #[arg(long = "T", value_delimiter = ',')]
        t: Vec<f64>,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expansion against the mixing and direct Monte Carlo estimators.
    McValidate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "T")]
        t: f64,
        #[arg(long, value_delimiter = ',', default_value = "atm,d25,d10")]
        strike: Vec<StrikeSpec>,
        #[command(flatten)]
        mc: McArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrap calibration to a quote file; the report goes to stdout.
    Calibrate {
        #[arg(long)]
        quotes: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Fitted parameter file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs `f` against `--out` or stdout. The sink is flushed even when `f`
/// fails, so partial reports survive a numeric failure.
fn with_output(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    };
    let r = f(&mut sink);
    sink.flush()?;
    r
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Price { model, t, strike, kind, out } => {
            let (m, p) = model.load(t)?;
            let kind = match kind {
                KindArg::Put => OptionKind::Put,
                KindArg::Call => OptionKind::Call,
            };
            with_output(out.as_deref(), |w| commands::price(&mut { w }, &m, &p, t, strike, kind))
        }
        Command::Surface { model, t, strike, out } => {
            let ts = if t.is_empty() { MATURITIES.to_vec() } else { t };
            let horizon = ts.iter().copied().fold(0.0, f64::max);
            let (m, p) = model.load(horizon)?;
            with_output(out.as_deref(), |w| commands::surface(&mut { w }, &m, &p, &ts, &strike))
        }
        Command::Sensitivity { model, sweep, t, mc, out } => {
            let ts = if t.is_empty() { MATURITIES.to_vec() } else { t };
            with_output(out.as_deref(), |w| commands::run_sensitivity(&mut { w }, model.into(), &sweep, &ts, &mc.settings()))
        }
        Command::McValidate { model, t, strike, mc, out } => {
            let (m, p) = model.load(t)?;
            let strikes = if strike.is_empty() { STRIKES.to_vec() } else { strike };
            with_output(out.as_deref(), |w| commands::mc_validate(&mut { w }, &m, &p, t, &strikes, &mc.settings()))
        }
        Command::Calibrate { quotes, config, out } => {
            let mut fitted = match &out {
                Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?)),
                None => None,
            };
            let mut stdout = io::stdout().lock();
            let r = commands::calibrate(&mut stdout, fitted.as_mut().map(|f| f as &mut dyn Write), &quotes, &config);
            if let Some(f) = fitted.as_mut() {
                f.flush()?;
            }
            r
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let r = run(cli.command);
    eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
