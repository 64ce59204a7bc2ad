use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use microlocal::fixtures::{fixture_catalog, net_catalog};
use microlocal::scenario::{build_bundle, symbol_catalog, Kind, ScenarioSpec, Window};

#[derive(Parser)]
#[command(name = "microlocal", version, about = "Run microlocal verification scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in symbols, fixtures or scale nets.
    List {
        #[arg(value_enum)]
        what: Listing,
    },
    Classify(Flags),
    SymbolOrder(Flags),
    Ellipticity(Flags),
    Microsupport(Flags),
    Compose(Flags),
    Adjoint(Flags),
    Transpose(Flags),
    Parametrix(Flags),
    Apply(Flags),
    Kernel(Flags),
    Wavefront(Flags),
    Singsupp(Flags),
    Ginf(Flags),
    Microlocality(Flags),
    Noncharacteristic(Flags),
    Flow(Flags),
    Propagate(Flags),
    Restrict(Flags),
    VerifyAll(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum Listing {
    Symbols,
    Fixtures,
    Nets,
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// Start from this scenario file and apply the flags on top.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    symbol: Vec<String>,
    #[arg(long)]
    fixture: Vec<String>,
    #[arg(long)]
    net: Vec<String>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    sectors: Option<usize>,
    /// Dyadic exponent range, e.g. 1:12.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    max_l: Option<usize>,
    #[arg(long)]
    trunc: Option<usize>,
    #[arg(long, value_parser = ["smoothstep", "erf"])]
    window: Option<String>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xi0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Flags {
    fn into_spec(self, kind: Kind) -> Result<ScenarioSpec> {
        let mut spec = match &self.scenario {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let s = ScenarioSpec::from_json(&text)?;
                anyhow::ensure!(s.kind == kind, "scenario kind is '{}', command is '{}'", s.kind.as_str(), kind.as_str());
                s
            }
            None => ScenarioSpec::new(kind),
        };
        let c = &mut spec.config;
        let i = &mut spec.inputs;
        if !self.symbol.is_empty() {
            i.symbols = self.symbol;
        }
        if !self.fixture.is_empty() {
            i.fixtures = self.fixture;
        }
        if !self.net.is_empty() {
            i.nets = self.net;
        }
        i.catalog = self.catalog.or(i.catalog.take());
        c.n = self.n.or(c.n);
        c.grid = self.grid.or(c.grid);
        c.cells = self.cells.or(c.cells);
        c.sectors = self.sectors.or(c.sectors);
        c.eps = self.eps.or(c.eps.take());
        c.max_l = self.max_l.or(c.max_l);
        c.trunc = self.trunc.or(c.trunc);
        if let Some(w) = self.window {
            c.window = Some(if w == "erf" { Window::Erf } else { Window::Smoothstep });
        }
        c.width = self.width.or(c.width);
        c.x0 = self.x0.or(c.x0.take());
        c.xi0 = self.xi0.or(c.xi0.take());
        c.times = self.times.or(c.times.take());
        c.dt = self.dt.or(c.dt);
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec.out_dir = Some(self.out);
        Ok(spec)
    }
}

fn list(what: Listing) {
    match what {
        Listing::Symbols => {
            for s in symbol_catalog() {
                println!("{}\tn={}\torder={}", s.label, s.dim, s.order);
            }
        }
        Listing::Fixtures => {
            for f in fixture_catalog() {
                println!("{}\tn={}\t{}", f.label, f.dims, f.description);
            }
        }
        Listing::Nets => {
            for n in net_catalog() {
                println!("{}\t{:?}", n.label, n.expected);
            }
        }
    }
}

fn scenario_for(command: Command) -> Result<Option<ScenarioSpec>> {
    let (kind, flags) = match command {
        Command::Run { scenario, out } => {
            let text = std::fs::read_to_string(&scenario).with_context(|| format!("reading {}", scenario.display()))?;
            let mut spec = ScenarioSpec::from_json(&text)?;
            if out.is_some() {
                spec.out_dir = out;
            }
            return Ok(Some(spec));
        }
        Command::List { what } => {
            list(what);
            return Ok(None);
        }
        Command::Classify(f) => (Kind::Classify, f),
        Command::SymbolOrder(f) => (Kind::SymbolOrder, f),
        Command::Ellipticity(f) => (Kind::Ellipticity, f),
        Command::Microsupport(f) => (Kind::Microsupport, f),
        Command::Compose(f) => (Kind::Compose, f),
        Command::Adjoint(f) => (Kind::Adjoint, f),
        Command::Transpose(f) => (Kind::Transpose, f),
        Command::Parametrix(f) => (Kind::Parametrix, f),
        Command::Apply(f) => (Kind::Apply, f),
        Command::Kernel(f) => (Kind::Kernel, f),
        Command::Wavefront(f) => (Kind::Wavefront, f),
        Command::Singsupp(f) => (Kind::Singsupp, f),
        Command::Ginf(f) => (Kind::Ginf, f),
        Command::Microlocality(f) => (Kind::Microlocality, f),
        Command::Noncharacteristic(f) => (Kind::Noncharacteristic, f),
        Command::Flow(f) => (Kind::Flow, f),
        Command::Propagate(f) => (Kind::Propagate, f),
        Command::Restrict(f) => (Kind::Restrict, f),
        Command::VerifyAll(f) => (Kind::VerifyAll, f),
    };
    flags.into_spec(kind).map(Some)
}

fn run(command: Command) -> Result<bool> {
    let Some(spec) = scenario_for(command)? else {
        return Ok(true);
    };
    let start = Instant::now();
    let bundle = build_bundle(&spec)?;
    let dir = spec.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    bundle.write_to(&dir).with_context(|| format!("writing {}", dir.display()))?;
    if let Some(text) = bundle.files.get("acceptance.txt") {
        print!("{}", String::from_utf8_lossy(text));
    }
    println!("{} {}: {}", if bundle.pass { "PASS" } else { "FAIL" }, spec.kind.as_str(), dir.display());
    eprintln!("wall time {:.2} s", start.elapsed().as_secs_f64());
    Ok(bundle.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
