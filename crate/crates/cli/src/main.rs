//! `sofi-rgl`: Fisher information and resolution gain limits from the
//! command line.

mod commands;
mod error;
mod grid;
mod output;
mod params;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::params::{normalise_key, read_config, Settings};

#[derive(Parser)]
#[command(name = "sofi-rgl", version, about = "Resolution gain limits of fluctuation-based imaging")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Resolve and validate all parameters, then exit without computing.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Fisher information per photon against separation.
    FiCurve,
    /// Resolution gain limit at one parameter point.
    Rgl,
    /// Full-data bound of the simplified model.
    ZetaMax,
    /// Resolution gain limits along one parameter axis.
    Sweep,
    /// Frame time maximising the gain (markov model).
    TauOpt,
    /// Monte Carlo cross-checks of the analytic machinery.
    Validate,
    /// Anti-bunched emitter pair.
    Antibunching,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::FiCurve => "fi-curve",
            Command::Rgl => "rgl",
            Command::ZetaMax => "zeta-max",
            Command::Sweep => "sweep",
            Command::TauOpt => "tau-opt",
            Command::Validate => "validate",
            Command::Antibunching => "antibunching",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        [
            Command::FiCurve,
            Command::Rgl,
            Command::ZetaMax,
            Command::Sweep,
            Command::TauOpt,
            Command::Validate,
            Command::Antibunching,
        ]
        .into_iter()
        .find(|c| c.name() == s.trim())
        .ok_or_else(|| CliError::Usage(format!("command: unknown command `{s}`")))
    }
}

/// Parameter flags. Values are parsed after merging with the config file.
#[derive(Args, Default)]
struct Flags {
    /// simplified | markov
    #[arg(long, global = true)]
    model: Option<String>,
    /// Fluctuation strength α in [0, 1].
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// Probability of the dim level (simplified model).
    #[arg(long, global = true)]
    p: Option<String>,
    /// Mean power P̄ in photons per τ₀.
    #[arg(long, global = true)]
    pbar: Option<String>,
    /// Mean photons per emitter and frame, n̄ = P̄τ (sets P̄ = n̄/τ).
    #[arg(long, global = true)]
    nbar: Option<String>,
    #[arg(long = "tau-on", global = true)]
    tau_on: Option<String>,
    #[arg(long = "tau-off", global = true)]
    tau_off: Option<String>,
    /// Frame time in units of τ₀.
    #[arg(long, global = true)]
    tau: Option<String>,
    /// Pixel size in units of σ.
    #[arg(long, global = true)]
    dx: Option<String>,
    /// Half-width of the pixel grid in units of σ.
    #[arg(long, global = true)]
    extent: Option<String>,
    /// Mean background photons per pixel and frame.
    #[arg(long = "mu-b", global = true)]
    mu_b: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    /// One scheme, e.g. M+AC2, or MAX for the full-data bound.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Comma-separated scheme list.
    #[arg(long, global = true)]
    schemes: Option<String>,
    /// zeta | zeta-pix
    #[arg(long, global = true)]
    metric: Option<String>,
    /// theta | tau | pbar | nbar | alpha | dx | p | mu_b
    #[arg(long, global = true)]
    axis: Option<String>,
    /// `a:b:logN`, `a:b:linN` or `v1,v2,...`
    #[arg(long, global = true)]
    range: Option<String>,
    #[arg(long = "tau-min", global = true)]
    tau_min: Option<String>,
    #[arg(long = "tau-max", global = true)]
    tau_max: Option<String>,
    #[arg(long, global = true)]
    frames: Option<String>,
    #[arg(long, global = true)]
    samples: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Output file (`-` for stdout). Defaults to $SOFIRGL_OUT_DIR/<command>.<ext>, else stdout.
    #[arg(long, global = true)]
    out: Option<String>,
    /// csv | json
    #[arg(long, global = true)]
    format: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<String>,
}

impl Flags {
    fn overlay(&self, map: &mut BTreeMap<String, String>) {
        let pairs: [(&str, &Option<String>); 25] = [
            ("model", &self.model),
            ("alpha", &self.alpha),
            ("p", &self.p),
            ("pbar", &self.pbar),
            ("nbar", &self.nbar),
            ("tau_on", &self.tau_on),
            ("tau_off", &self.tau_off),
            ("tau", &self.tau),
            ("dx", &self.dx),
            ("extent", &self.extent),
            ("mu_b", &self.mu_b),
            ("theta", &self.theta),
            ("scheme", &self.scheme),
            ("schemes", &self.schemes),
            ("metric", &self.metric),
            ("axis", &self.axis),
            ("range", &self.range),
            ("tau_min", &self.tau_min),
            ("tau_max", &self.tau_max),
            ("frames", &self.frames),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("out", &self.out),
            ("format", &self.format),
            ("threads", &self.threads),
        ];
        let given = |k: &str| pairs.iter().any(|(key, v)| *key == k && v.is_some());
        // A flag replaces the file's value, including its exclusive alternative.
        for (a, b) in [("scheme", "schemes"), ("pbar", "nbar")] {
            if given(a) && !given(b) {
                map.remove(b);
            }
            if given(b) && !given(a) {
                map.remove(a);
            }
        }
        for (key, value) in pairs {
            if let Some(v) = value {
                map.insert(normalise_key(key), v.clone());
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut raw = match &cli.config {
        Some(path) => read_config(path)?,
        None => BTreeMap::new(),
    };
    cli.flags.overlay(&mut raw);
    let command = match (cli.command, raw.remove("command")) {
        (Some(c), _) => c,
        (None, Some(name)) => Command::parse(&name)?,
        (None, None) => return Err(CliError::Usage("no command given (see --help)".into())),
    };
    let settings = Settings::resolve(&raw)?;
    if cli.dry_run {
        if let (Some(axis), Some(range)) = (settings.axis, &settings.range) {
            if axis != params::Axis::Theta {
                for &v in &range.values {
                    let ph = settings.physics.with(axis, v);
                    ph.model()?;
                    ph.geometry()?;
                }
            }
        }
        eprintln!("sofi-rgl: {} configuration is valid", command.name());
        return Ok(());
    }
    if let Some(n) = settings.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("threads: {e}")))?;
    }
    let report = match command {
        Command::FiCurve => commands::fi_curve(&settings),
        Command::Rgl => commands::rgl_point(&settings),
        Command::ZetaMax => commands::zeta_max_cmd(&settings),
        Command::Sweep => commands::sweep(&settings),
        Command::TauOpt => commands::tau_opt(&settings),
        Command::Validate => commands::validate(&settings),
        Command::Antibunching => commands::antibunching(&settings),
    }?;
    let header = settings.header(command.name(), report.params.clone());
    let text = output::render(&report.table, &header, settings.format);
    output::emit(&text, output::destination(settings.out.as_deref(), command.name(), settings.format))?;
    if report.flagged > 0 {
        log::warn!("{} row(s) flagged: unconverged extraction or optimum at the search boundary", report.flagged);
    }
    if report.failed_checks > 0 {
        return Err(CliError::Validation(format!("{} check(s) outside tolerance", report.failed_checks)));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sofi-rgl: {e}");
            e.exit_code()
        }
    }
}
