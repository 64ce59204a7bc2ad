//! Scenario files: validation, dispatch to the verification harnesses, and
//! deterministic output bundles.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acceptance::{run_suite, Criterion, BAND_LIMITED_WIDTH, DIRECTIONAL_RAMP, RANDOM_INPUTS};
use crate::calculus::{
    expand_adjoint, expand_compose, expand_transpose, expansion_residual_order, parametrix, CANCELLATION, MAX_CUT_RADIUS, PROBE_SHELLS,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fixtures::{
    build_fixture, conormal_sheet, delta, delta_pair, delta_plus_smooth, fixture_catalog, heaviside, heaviside2d, net_catalog,
    transport_spacetime, DEFAULT_WIDTH,
};
use crate::grid::{GridFunctionFamily, GridSpec};
use crate::hyperbolic::{
    bicharacteristic_lift, curve_csv, hamilton_flow, lift_residual, verify_propagation, verify_restriction, verify_time_reversal,
    CauchyProblem, FlowState, HamiltonianField, Stepping, FLOW_TOLERANCE, GROWTH_LIMIT, PUSH_DT,
};
use crate::nets::{classify_scale, EpsilonGrid, NetThresholds, FLOOR};
use crate::quantize::{kernel_certificate, kernel_matrix, quantize_kn, split_kernel, DIRECT_BUDGET};
use crate::symbols::{
    build_cone_cutoff, build_proper_cutoff, default_radii, estimate_order, fmt_f, load_catalog, microellipticity_report,
    microsupport_estimate, ConeGrid, SamplingBox, SymbolFamily, DERIVATIVE_CAP, VANISHING_RATIO,
};
use crate::wavefront::{
    ginf_verdict, singsupp_estimate, verify_microlocality, verify_noncharacteristic, wavefront_estimate, CellDecomposition,
    WavefrontConfig, WindowKind, BAND_FRACTION, GINF_SPREAD, MIN_R_SQUARED, NOISE_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Classify,
    SymbolOrder,
    Ellipticity,
    Microsupport,
    Compose,
    Adjoint,
    Transpose,
    Parametrix,
    Apply,
    Kernel,
    Wavefront,
    Singsupp,
    Ginf,
    Microlocality,
    Noncharacteristic,
    Flow,
    Propagate,
    Restrict,
    VerifyAll,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Classify => "classify",
            Kind::SymbolOrder => "symbol-order",
            Kind::Ellipticity => "ellipticity",
            Kind::Microsupport => "microsupport",
            Kind::Compose => "compose",
            Kind::Adjoint => "adjoint",
            Kind::Transpose => "transpose",
            Kind::Parametrix => "parametrix",
            Kind::Apply => "apply",
            Kind::Kernel => "kernel",
            Kind::Wavefront => "wavefront",
            Kind::Singsupp => "singsupp",
            Kind::Ginf => "ginf",
            Kind::Microlocality => "microlocality",
            Kind::Noncharacteristic => "noncharacteristic",
            Kind::Flow => "flow",
            Kind::Propagate => "propagate",
            Kind::Restrict => "restrict",
            Kind::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Symbol labels from the built-in catalog or `catalog`.
    pub symbols: Vec<String>,
    pub fixtures: Vec<String>,
    /// Scale-net labels for `classify`; empty means the whole catalog.
    pub nets: Vec<String>,
    /// Extra symbol catalog file: a JSON list of `{label, order, n, expr}`.
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    Smoothstep,
    Erf,
}

/// Numeric settings; unset fields take per-kind defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub n: Option<usize>,
    pub grid: Option<usize>,
    pub cells: Option<usize>,
    pub sectors: Option<usize>,
    /// Inclusive dyadic range `"jmin:jmax"`.
    pub eps: Option<String>,
    pub max_l: Option<usize>,
    pub trunc: Option<usize>,
    pub window: Option<Window>,
    pub ramp: Option<f64>,
    pub width: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub xi0: Option<Vec<f64>>,
    pub times: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub t0_index: Option<usize>,
    pub min_radius: Option<f64>,
    pub box_half_width: Option<f64>,
    pub d_max: Option<usize>,
    pub diag_width: Option<f64>,
    pub wavefront: Option<WavefrontConfig>,
    pub thresholds: Option<NetThresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: Kind,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub config: Config,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ScenarioSpec {
    pub fn new(kind: Kind) -> Self {
        Self { kind, inputs: Inputs::default(), config: Config::default(), seed: 0, out_dir: None }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid("scenario", e.to_string()))
    }
}

/// Fully resolved settings, echoed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub n: usize,
    pub grid: usize,
    pub cells: usize,
    pub sectors: usize,
    pub eps: (i32, i32),
    pub max_l: usize,
    pub trunc: usize,
    pub window: Window,
    pub ramp: f64,
    pub width: f64,
    pub x0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub times: Vec<f64>,
    pub dt: Option<f64>,
    pub t0_index: usize,
    pub min_radius: f64,
    pub box_half_width: f64,
    pub d_max: usize,
    pub diag_width: f64,
    pub wavefront: WavefrontConfig,
    pub thresholds: NetThresholds,
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Validation { path: path.into(), message: message.into() }
}

fn parse_eps(s: &str) -> Result<(i32, i32)> {
    let (a, b) = s.split_once(':').ok_or_else(|| invalid("config.eps", format!("expected jmin:jmax, got '{s}'")))?;
    let parse = |v: &str| v.trim().parse::<i32>().map_err(|e| invalid("config.eps", format!("'{v}': {e}")));
    Ok((parse(a)?, parse(b)?))
}

impl Config {
    fn resolve(&self, kind: Kind) -> Result<Resolved> {
        let space_time = kind == Kind::Restrict;
        let n = if space_time { 2 } else { self.n.unwrap_or(1) };
        let default_eps = match kind {
            Kind::Classify | Kind::SymbolOrder | Kind::Ellipticity | Kind::Microsupport | Kind::Parametrix | Kind::Compose => "1:12",
            Kind::Ginf => "1:10",
            _ => "1:8",
        };
        let default_grid = match kind {
            Kind::Ginf => 512,
            Kind::Kernel => 64,
            _ => 256,
        };
        let r = Resolved {
            n,
            grid: self.grid.unwrap_or(default_grid),
            cells: self.cells.unwrap_or(if space_time { 4 } else { 8 }),
            sectors: self.sectors.unwrap_or(16),
            eps: parse_eps(self.eps.as_deref().unwrap_or(default_eps))?,
            max_l: self.max_l.or(self.wavefront.map(|w| w.max_l)).unwrap_or(8),
            trunc: self.trunc.unwrap_or(2),
            window: self.window.unwrap_or(if space_time { Window::Erf } else { Window::Smoothstep }),
            ramp: self.ramp.unwrap_or(DIRECTIONAL_RAMP),
            width: self.width.unwrap_or(if kind == Kind::Propagate { BAND_LIMITED_WIDTH } else { DEFAULT_WIDTH }),
            x0: self.x0.clone().unwrap_or_else(|| vec![if space_time { PI / 2.0 } else { 7.0 * PI / 8.0 }; n]),
            xi0: self.xi0.clone().unwrap_or_else(|| vec![1.0; n]),
            times: self.times.clone().unwrap_or_else(|| vec![0.5, 1.0]),
            dt: self.dt,
            t0_index: self.t0_index.unwrap_or(32),
            min_radius: self.min_radius.unwrap_or(2.0),
            box_half_width: self.box_half_width.unwrap_or(0.5),
            d_max: self.d_max.unwrap_or(6),
            diag_width: self.diag_width.unwrap_or(PI / 4.0),
            wavefront: WavefrontConfig { max_l: self.max_l.or(self.wavefront.map(|w| w.max_l)).unwrap_or(8), ..self.wavefront.unwrap_or_default() },
            thresholds: self.thresholds.unwrap_or_default(),
        };
        if !(1..=2).contains(&r.n) {
            return Err(invalid("config.n", "dimension must be 1 or 2"));
        }
        if r.x0.len() != r.n {
            return Err(invalid("config.x0", format!("expected {} components", r.n)));
        }
        if r.xi0.len() != r.n {
            return Err(invalid("config.xi0", format!("expected {} components", r.n)));
        }
        if !(4..=64).contains(&r.sectors) {
            return Err(invalid("config.sectors", "need 4 to 64 sectors"));
        }
        if !(3..=16).contains(&r.max_l) {
            return Err(invalid("config.max_l", "need 3 <= L <= 16"));
        }
        if !(1..=8).contains(&r.trunc) {
            return Err(invalid("config.trunc", "need 1 <= r <= 8"));
        }
        if !(r.ramp > 0.0 && r.ramp <= 1.0) {
            return Err(invalid("config.ramp", "need 0 < ramp <= 1"));
        }
        if !(r.width > 0.0) {
            return Err(invalid("config.width", "must be positive"));
        }
        if r.times.is_empty() || r.times.iter().any(|t| !(*t >= 0.0)) || r.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("config.times", "need non-negative, strictly ascending times"));
        }
        if r.dt.is_some_and(|d| !(d > 0.0)) {
            return Err(invalid("config.dt", "must be positive"));
        }
        if r.t0_index >= r.grid {
            return Err(invalid("config.t0_index", "must be below the grid size"));
        }
        if r.d_max > 12 {
            return Err(invalid("config.d_max", "at most 12"));
        }
        EpsilonGrid::new(r.eps.0, r.eps.1).map_err(|e| invalid("config.eps", e.to_string()))?;
        let spec = GridSpec::new(r.n, r.grid).map_err(|e| invalid("config.grid", e.to_string()))?;
        CellDecomposition::new(spec, r.cells).map_err(|e| invalid("config.cells", e.to_string()))?;
        Ok(r)
    }
}

impl Resolved {
    fn eps_grid(&self) -> EpsilonGrid {
        EpsilonGrid::new(self.eps.0, self.eps.1).expect("validated")
    }

    fn spec(&self) -> GridSpec {
        GridSpec::new(self.n, self.grid).expect("validated")
    }

    fn cells_for(&self, spec: GridSpec) -> Result<CellDecomposition> {
        let kind = match self.window {
            Window::Smoothstep => WindowKind::Smoothstep,
            Window::Erf => WindowKind::GaussianEdge { ramp: self.ramp },
        };
        CellDecomposition::with_kind(spec, self.cells, kind)
    }

    fn cones(&self, n: usize) -> ConeGrid {
        ConeGrid::new(n, self.sectors, self.min_radius)
    }

    fn probe_box(&self, n: usize) -> SamplingBox {
        SamplingBox::symmetric(n, self.box_half_width)
    }
}

/// Built-in symbols addressable by label.
pub fn symbol_catalog() -> Vec<SymbolFamily> {
    let x = || Expr::x(0);
    let xi = || Expr::xi(0);
    let slow_c = Expr::one() - Expr::log(&Expr::eps()) * Expr::real(1.0 / std::f64::consts::LN_2);
    let mut out = vec![
        SymbolFamily::new("one", Expr::one(), 0.0, 1),
        SymbolFamily::new("x", x(), 0.0, 1),
        SymbolFamily::new("xi", xi(), 1.0, 1),
        SymbolFamily::new("x_xi", x() * xi(), 1.0, 1),
        SymbolFamily::new("xi_sq", Expr::pow(&xi(), 2.0), 2.0, 1),
        SymbolFamily::new("sin_x", Expr::sin(&x()), 0.0, 1),
        SymbolFamily::new("bracket", Expr::japanese_xi(1), 1.0, 1),
        SymbolFamily::new("one_plus_xi_sq", Expr::one() + Expr::pow(&xi(), 2.0), 2.0, 1),
        SymbolFamily::new("transport", xi(), 1.0, 1),
        SymbolFamily::new("variable_speed", (Expr::one() + Expr::real(0.5) * Expr::sin(&x())) * xi(), 1.0, 1),
        SymbolFamily::new("slow_elliptic", Expr::one() + slow_c * Expr::pow(&x(), 2.0), 0.0, 1),
        SymbolFamily::new("gauss_xi", Expr::exp(&-Expr::pow(&xi(), 2.0)), -10.0, 1),
        SymbolFamily::new("one_2d", Expr::one(), 0.0, 2),
        SymbolFamily::new("xi1", xi(), 1.0, 2),
        SymbolFamily::new("bracket_2d", Expr::japanese_xi(2), 1.0, 2),
        SymbolFamily::new(
            "laplace_2d",
            Expr::one() + Expr::pow(&Expr::xi(0), 2.0) + Expr::pow(&Expr::xi(1), 2.0),
            2.0,
            2,
        ),
    ];
    let mut cone = build_cone_cutoff(&[0.0, 1.0], PI / 8.0, PI / 4.0, 2).expect("valid angles");
    cone.label = "cone_e2".into();
    out.push(cone);
    out
}

fn resolve_symbols(inputs: &Inputs) -> Result<Vec<SymbolFamily>> {
    let mut catalog = symbol_catalog();
    if let Some(path) = &inputs.catalog {
        let text = fs::read_to_string(path).map_err(|e| invalid("inputs.catalog", format!("{}: {e}", path.display())))?;
        catalog.extend(load_catalog(&text).map_err(|e| invalid("inputs.catalog", e.to_string()))?);
    }
    inputs
        .symbols
        .iter()
        .enumerate()
        .map(|(i, l)| {
            catalog.iter().rev().find(|s| &s.label == l).cloned().ok_or_else(|| invalid(&format!("inputs.symbols[{i}]"), format!("unknown symbol '{l}'")))
        })
        .collect()
}

fn check_fixtures(inputs: &Inputs) -> Result<()> {
    let known: Vec<&str> = fixture_catalog().iter().map(|f| f.label).collect();
    for (i, l) in inputs.fixtures.iter().enumerate() {
        if !known.contains(&l.as_str()) {
            return Err(invalid(&format!("inputs.fixtures[{i}]"), format!("unknown fixture '{l}'")));
        }
    }
    let nets: Vec<&str> = net_catalog().iter().map(|n| n.label).collect();
    for (i, l) in inputs.nets.iter().enumerate() {
        if !nets.contains(&l.as_str()) {
            return Err(invalid(&format!("inputs.nets[{i}]"), format!("unknown net '{l}'")));
        }
    }
    Ok(())
}

fn make_fixture(label: &str, spec: GridSpec, grid: EpsilonGrid, cfg: &Resolved) -> Result<GridFunctionFamily> {
    let w = cfg.width;
    let x0 = &cfg.x0;
    match label {
        "delta" => delta(spec, grid, x0, w),
        "delta_pair" => {
            let other: Vec<f64> = x0.iter().map(|v| v - PI / 2.0).collect();
            delta_pair(spec, grid, x0, &other, w)
        }
        "delta_plus_smooth" => delta_plus_smooth(spec, grid, x0, w),
        "heaviside" => heaviside(spec, grid, w),
        "heaviside2d" => heaviside2d(spec, grid, w),
        "transport_spacetime" => transport_spacetime(spec, grid, x0[0], w),
        "conormal_sheet" => conormal_sheet(spec, grid, PI, w),
        _ => build_fixture(label, spec, grid),
    }
}

fn safe(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Result files plus the pass flag and summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBundle {
    pub files: BTreeMap<String, Vec<u8>>,
    pub pass: bool,
    pub summary: Value,
}

impl OutputBundle {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

struct Outcome {
    pass: bool,
    summary: Value,
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(pass: bool, summary: Value) -> Self {
        Self { pass, summary, files: Vec::new() }
    }

    fn file(mut self, name: impl Into<String>, body: impl Into<Vec<u8>>) -> Self {
        self.files.push((name.into(), body.into()));
        self
    }
}

/// Every threshold and constant the harnesses use.
pub fn thresholds_echo(cfg: &Resolved) -> Value {
    json!({
        "nets": cfg.thresholds,
        "net_floor": FLOOR,
        "wavefront": cfg.wavefront,
        "wavefront_noise_floor": NOISE_FLOOR,
        "wavefront_band_fraction": BAND_FRACTION,
        "wavefront_min_r_squared": MIN_R_SQUARED,
        "ginf_spread": GINF_SPREAD,
        "derivative_cap": DERIVATIVE_CAP,
        "vanishing_ratio": VANISHING_RATIO,
        "direct_budget": DIRECT_BUDGET.to_string(),
        "borel_max_cut_radius": MAX_CUT_RADIUS,
        "borel_probe_shells": PROBE_SHELLS,
        "residual_cancellation": CANCELLATION,
        "flow_tolerance": FLOW_TOLERANCE,
        "growth_limit": GROWTH_LIMIT,
        "push_dt": PUSH_DT,
        "default_width": DEFAULT_WIDTH,
        "band_limited_width": BAND_LIMITED_WIDTH,
        "directional_ramp": DIRECTIONAL_RAMP,
        "random_inputs": RANDOM_INPUTS,
    })
}

fn need_symbols(symbols: &[SymbolFamily], k: usize, n: Option<usize>) -> Result<()> {
    if symbols.len() < k {
        return Err(invalid("inputs.symbols", format!("need {k} symbol(s), got {}", symbols.len())));
    }
    if let Some(n) = n {
        for (i, s) in symbols.iter().enumerate() {
            if s.dim != n {
                return Err(invalid(&format!("inputs.symbols[{i}]"), format!("symbol '{}' has dimension {}, grid has {n}", s.label, s.dim)));
            }
        }
    }
    Ok(())
}

fn need_fixture(inputs: &Inputs, default: &str) -> String {
    inputs.fixtures.first().cloned().unwrap_or_else(|| default.to_string())
}

fn dispatch(spec: &ScenarioSpec, cfg: &Resolved, symbols: &[SymbolFamily]) -> Result<Outcome> {
    let grid = cfg.eps_grid();
    let n = cfg.n;
    let wf_cfg = cfg.wavefront;
    match spec.kind {
        Kind::Classify => {
            let mut csv = String::from("label,expected,tag,slope\n");
            let mut mismatches = Vec::new();
            let mut classes = BTreeMap::new();
            for net in net_catalog().into_iter().filter(|c| spec.inputs.nets.is_empty() || spec.inputs.nets.iter().any(|l| l == c.label)) {
                let c = classify_scale(&net.sample(grid)?, &cfg.thresholds)?;
                if c.tag != net.expected {
                    mismatches.push(net.label);
                }
                csv.push_str(&format!("{},{:?},{:?},{}\n", net.label, net.expected, c.tag, fmt_f(c.fit.slope)));
                classes.insert(net.label, c);
            }
            Ok(Outcome::new(mismatches.is_empty(), json!({ "mismatches": mismatches }))
                .file("classify.csv", csv)
                .file("classes.json", pretty(&classes)))
        }
        Kind::SymbolOrder => {
            need_symbols(symbols, 1, None)?;
            let mut csv = String::from("label,declared,estimated\n");
            let mut pass = true;
            for a in symbols {
                let m = estimate_order(a, &cfg.probe_box(a.dim), grid)?;
                pass &= m <= a.order + 0.25;
                csv.push_str(&format!("{},{},{}\n", a.label, fmt_f(a.order), fmt_f(m)));
            }
            Ok(Outcome::new(pass, json!({ "symbols": symbols.len() })).file("order.csv", csv))
        }
        Kind::Ellipticity => {
            need_symbols(symbols, 1, None)?;
            let mut out = Outcome::new(true, json!({}));
            let mut verdicts = BTreeMap::new();
            for a in symbols {
                let r = microellipticity_report(a, &[cfg.probe_box(a.dim)], &cfg.cones(a.dim), grid, &default_radii())?;
                verdicts.insert(a.label.clone(), r.all_slow_scale_elliptic());
                out = out.file(format!("ellipticity_{}.csv", safe(&a.label)), r.to_csv());
            }
            out.summary = json!({ "all_slow_scale_elliptic": verdicts });
            Ok(out)
        }
        Kind::Microsupport => {
            need_symbols(symbols, 1, None)?;
            let mut out = Outcome::new(true, json!({ "symbols": symbols.len() }));
            for a in symbols {
                let m = microsupport_estimate(a, &[cfg.probe_box(a.dim)], &cfg.cones(a.dim), grid, &[-4.0, -2.0, 0.0])?;
                out = out.file(format!("microsupport_{}.csv", safe(&a.label)), m.to_csv());
            }
            Ok(out)
        }
        Kind::Compose => {
            need_symbols(symbols, 2, None)?;
            let (a, b) = (&symbols[0], &symbols[1]);
            if a.dim != b.dim {
                return Err(invalid("inputs.symbols[1]", "composed symbols must share the dimension"));
            }
            let e = expand_compose(a, b, cfg.trunc)?;
            let mut csv = String::from("r,fitted_order\n");
            for r in 1..=cfg.trunc {
                let m = expansion_residual_order(a, b, r, &[cfg.probe_box(a.dim)], grid)?;
                csv.push_str(&format!("{r},{}\n", fmt_f(m)));
            }
            Ok(Outcome::new(true, json!({ "terms": e.len(), "orders": e.orders() })).file("expansion.json", e.to_json()).file("residuals.csv", csv))
        }
        Kind::Adjoint | Kind::Transpose => {
            need_symbols(symbols, 1, None)?;
            let e = if spec.kind == Kind::Adjoint { expand_adjoint(&symbols[0], cfg.trunc)? } else { expand_transpose(&symbols[0], cfg.trunc)? };
            Ok(Outcome::new(true, json!({ "terms": e.len(), "orders": e.orders() })).file("expansion.json", e.to_json()))
        }
        Kind::Parametrix => {
            need_symbols(symbols, 1, None)?;
            let a = &symbols[0];
            let p = parametrix(a, cfg.trunc, &[cfg.probe_box(a.dim)], &cfg.cones(a.dim), grid)?;
            let target = -(cfg.trunc as f64) + 0.25;
            let report = json!({
                "symbol": a.to_entry(),
                "truncated_symbol": p.truncated_symbol.to_entry(),
                "residual_order_estimate": p.residual_order_estimate,
                "target": target,
                "excision_radius": p.excision_radius,
                "cut_radii": p.cut_radii,
            });
            Ok(Outcome::new(p.residual_order_estimate <= target, json!({ "residual_order_estimate": p.residual_order_estimate }))
                .file("parametrix.json", pretty(&report))
                .file("expansion.json", p.expansion.to_json()))
        }
        Kind::Apply => {
            need_symbols(symbols, 1, Some(n))?;
            let u = make_fixture(&need_fixture(&spec.inputs, "delta"), cfg.spec(), grid, cfg)?;
            let out = quantize_kn(&symbols[0], &u)?;
            Ok(Outcome::new(true, json!({ "label": out.label }))
                .file("output.mlgf", out.to_mlgf_bytes())
                .file("output_last_eps.csv", out.slice_csv(grid.len() - 1)))
        }
        Kind::Kernel => {
            need_symbols(symbols, 1, Some(n))?;
            let k = kernel_matrix(&symbols[0], cfg.spec(), grid)?;
            let (proper, smooth) = split_kernel(&k, &build_proper_cutoff(cfg.diag_width, n));
            let cert = kernel_certificate(&smooth)?;
            let report = json!({
                "max_abs": k.max_abs(),
                "proper_max_abs": proper.max_abs(),
                "smoothing_max_abs": smooth.max_abs(),
                "certificate": cert,
            });
            Ok(Outcome::new(cert.pass, json!({ "certificate": cert.pass })).file("kernel.json", pretty(&report)))
        }
        Kind::Wavefront | Kind::Singsupp => {
            let spec_g = cfg.spec();
            let cells = cfg.cells_for(spec_g)?;
            let cones = cfg.cones(n);
            let fixtures = if spec.inputs.fixtures.is_empty() { vec!["delta".to_string()] } else { spec.inputs.fixtures.clone() };
            let mut out = Outcome::new(true, json!({}));
            let mut summary = BTreeMap::new();
            for f in &fixtures {
                let u = make_fixture(f, spec_g, grid, cfg)?;
                if spec.kind == Kind::Wavefront {
                    let wf = wavefront_estimate(&u, &cells, &cones, &wf_cfg)?;
                    summary.insert(f.clone(), json!({ "singular_pairs": wf.singular_set().len(), "warnings": wf.warnings }));
                    out = out.file(format!("wavefront_{}.csv", safe(f)), wf.to_csv());
                } else {
                    summary.insert(f.clone(), json!(singsupp_estimate(&u, &cells, &cones, &wf_cfg)?));
                }
            }
            if spec.kind == Kind::Singsupp {
                out = out.file("singsupp.json", pretty(&summary));
            }
            out.summary = json!(summary);
            Ok(out)
        }
        Kind::Ginf => {
            let fixtures = if spec.inputs.fixtures.is_empty() {
                vec!["lorentzian_slow".to_string(), "lorentzian_fast".to_string()]
            } else {
                spec.inputs.fixtures.clone()
            };
            let mut reports = BTreeMap::new();
            let mut summary = BTreeMap::new();
            let mut pass = true;
            for f in &fixtures {
                let u = make_fixture(f, cfg.spec(), grid, cfg)?;
                let r = ginf_verdict(&u, cfg.d_max)?;
                let expected = matches!(f.as_str(), "smooth" | "constant" | "plane_wave" | "lorentzian_slow");
                pass &= r.verdict == expected;
                summary.insert(f.clone(), json!({ "verdict": r.verdict, "expected": expected, "pass": r.verdict == expected }));
                reports.insert(f.clone(), r);
            }
            Ok(Outcome::new(pass, json!(summary)).file("ginf.json", pretty(&reports)))
        }
        Kind::Microlocality | Kind::Noncharacteristic => {
            need_symbols(symbols, 1, Some(n))?;
            let spec_g = cfg.spec();
            let u = make_fixture(&need_fixture(&spec.inputs, if n == 2 { "heaviside2d" } else { "delta" }), spec_g, grid, cfg)?;
            let cells = cfg.cells_for(spec_g)?;
            let cones = cfg.cones(n);
            let (pass, body) = if spec.kind == Kind::Microlocality {
                let r = verify_microlocality(&symbols[0], &u, &cells, &cones, &wf_cfg)?;
                (r.pass, pretty(&r))
            } else {
                let r = verify_noncharacteristic(&symbols[0], &u, &cells, &cones, &wf_cfg)?;
                (r.pass, pretty(&r))
            };
            Ok(Outcome::new(pass, json!({ "pass": pass })).file(format!("{}.json", spec.kind.as_str()), body))
        }
        Kind::Flow => {
            let a = symbols.first().cloned().unwrap_or_else(|| symbol_catalog().into_iter().find(|s| s.label == "variable_speed").expect("catalog entry"));
            if a.dim != cfg.x0.len() {
                return Err(invalid("config.x0", format!("symbol '{}' has dimension {}", a.label, a.dim)));
            }
            let field = HamiltonianField::new(a.clone(), true)?;
            let dt = cfg.dt.unwrap_or(PUSH_DT);
            let s0 = FlowState::new(&cfg.x0, &cfg.xi0, 0.0);
            let h0 = field.eval(0.0, &cfg.x0, &cfg.xi0);
            let mut states = Vec::new();
            for &t in &cfg.times {
                let out = hamilton_flow(&field, &s0, t, dt)?;
                let drift = (field.eval(out.state.t, &out.state.x, &out.state.xi) - h0).abs();
                states.push(json!({ "t": t, "x": out.state.x, "xi": out.state.xi, "error_estimate": out.error_estimate, "hamiltonian_drift": drift }));
            }
            let t1 = *cfg.times.last().expect("validated non-empty");
            let curve = bicharacteristic_lift(&field, &cfg.x0, &cfg.xi0, 0.0, t1, dt)?;
            let residual = lift_residual(&field, &curve);
            let pass = residual <= 1e-8;
            Ok(Outcome::new(pass, json!({ "lift_residual": residual }))
                .file("flow.json", pretty(&json!({ "symbol": a.to_entry(), "dt": dt, "states": states, "lift_residual": residual })))
                .file("curve.csv", curve_csv(&curve)))
        }
        Kind::Propagate => {
            let a = symbols.first().cloned().unwrap_or_else(|| symbol_catalog().into_iter().find(|s| s.label == "transport").expect("catalog entry"));
            if a.dim != n {
                return Err(invalid("inputs.symbols[0]", format!("symbol '{}' has dimension {}, grid has {n}", a.label, a.dim)));
            }
            let spec_g = cfg.spec();
            let g = make_fixture(&need_fixture(&spec.inputs, "delta"), spec_g, grid, cfg)?;
            let field = HamiltonianField::new(a.clone(), true)?;
            let cells = cfg.cells_for(spec_g)?;
            let cones = cfg.cones(n);
            let problem = CauchyProblem { symbol: a, g, dt: cfg.dt, record_times: cfg.times.clone(), stepping: Stepping::Auto };
            let reports = verify_propagation(&problem, &field, &cells, &cones, &wf_cfg)?;
            let t1 = *cfg.times.last().expect("validated non-empty");
            let reversal = if t1 > 0.0 { Some(verify_time_reversal(&problem, &field, t1, &cells, &cones, &wf_cfg)?) } else { None };
            let pass = reports.iter().all(|r| r.pass) && reversal.as_ref().is_none_or(|r| r.pass);
            let summary = json!({
                "times": reports.iter().map(|r| json!({ "t": r.t, "pass": r.pass })).collect::<Vec<_>>(),
                "reversal": reversal.as_ref().map(|r| r.pass),
            });
            Ok(Outcome::new(pass, summary).file("propagation.json", pretty(&json!({ "reports": reports, "reversal": reversal }))))
        }
        Kind::Restrict => {
            let spec2 = cfg.spec();
            let spec1 = GridSpec::new(1, cfg.grid)?;
            let u = make_fixture(&need_fixture(&spec.inputs, "transport_spacetime"), spec2, grid, cfg)?;
            let (c2, c1) = (cfg.cells_for(spec2)?, cfg.cells_for(spec1)?);
            match verify_restriction(&u, cfg.t0_index, &c2, &cfg.cones(2), &c1, &cfg.cones(1), &wf_cfg) {
                Ok(r) => Ok(Outcome::new(r.pass, json!({ "t0": r.t0, "pass": r.pass })).file("restriction.json", pretty(&r))),
                Err(Error::ConormalPresent { t0, cells }) => {
                    let body = json!({ "t0": t0, "conormal_present": cells });
                    Ok(Outcome::new(false, body.clone()).file("restriction.json", pretty(&body)))
                }
                Err(e) => Err(e),
            }
        }
        Kind::VerifyAll => {
            let criteria = run_suite(spec.seed)?;
            let mut out = Outcome::new(criteria.iter().all(|c| c.pass), json!(criteria));
            let mut lines = String::new();
            for c in &criteria {
                lines.push_str(&c.line());
                lines.push('\n');
                for (name, body) in &c.files {
                    out = out.file(name.clone(), body.clone());
                }
            }
            Ok(out.file("acceptance.txt", lines))
        }
    }
}

/// Validates and runs a scenario without touching the file system (beyond reading a
/// symbol catalog file named in the inputs).
pub fn build_bundle(spec: &ScenarioSpec) -> Result<OutputBundle> {
    let cfg = spec.config.resolve(spec.kind)?;
    check_fixtures(&spec.inputs)?;
    let symbols = resolve_symbols(&spec.inputs)?;
    let outcome = dispatch(spec, &cfg, &symbols)?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for (name, body) in outcome.files {
        files.insert(name, body);
    }
    let echo = ScenarioSpec { out_dir: None, ..spec.clone() };
    let manifest = json!({
        "scenario": echo,
        "resolved": cfg,
        "thresholds": thresholds_echo(&cfg),
        "versions": { "microlocal": env!("CARGO_PKG_VERSION") },
        "files": files.keys().collect::<Vec<_>>(),
    });
    let summary = json!({ "kind": spec.kind.as_str(), "pass": outcome.pass, "results": outcome.summary });
    files.insert("manifest.json".into(), pretty(&manifest).into_bytes());
    files.insert("summary.json".into(), pretty(&summary).into_bytes());
    Ok(OutputBundle { files, pass: outcome.pass, summary })
}

/// Builds the bundle and writes it to `spec.out_dir` (default `out`).
pub fn run_scenario(spec: &ScenarioSpec) -> Result<OutputBundle> {
    let bundle = build_bundle(spec)?;
    let dir = spec.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    bundle.write_to(&dir)?;
    Ok(bundle)
}

/// Runs the `verify-all` scenario twice and compares the bundles byte for byte.
/// Returns the first bundle alongside the verdict.
pub fn determinism_check(seed: u64) -> Result<(Criterion, OutputBundle)> {
    let spec = ScenarioSpec { seed, ..ScenarioSpec::new(Kind::VerifyAll) };
    let a = build_bundle(&spec)?;
    let b = build_bundle(&spec)?;
    let differing: Vec<&String> = a.files.keys().chain(b.files.keys()).filter(|k| a.files.get(*k) != b.files.get(*k)).collect();
    let bytes: usize = a.files.values().map(Vec::len).sum();
    let detail = json!({ "files": a.files.len(), "bytes": bytes, "differing": differing });
    let c = Criterion::new(13, "deterministic output bundle", differing.is_empty(), detail);
    Ok((c, a))
}
