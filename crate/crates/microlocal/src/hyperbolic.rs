//! Hamilton flows, bicharacteristics and the Cauchy problem `∂_t u + iP(t,x,D)u = 0`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr, Point, Var};
use crate::grid::{GridFunctionFamily, GridSpec, Spectral};
use crate::quantize::{apply_slice, Plan};
use crate::symbols::{angle_dist, ConeGrid, SymbolFamily};
use crate::wavefront::{uncovered, wavefront_estimate, CellDecomposition, Pair, WavefrontConfig, WavefrontEstimate};

/// Relative Richardson tolerance for flow integration.
pub const FLOW_TOLERANCE: f64 = 1e-6;
/// Max-norm growth factor treated as an instability.
pub const GROWTH_LIMIT: f64 = 1e6;

/// Real principal symbol `P₁(t,x,ξ)` with exact gradients.
#[derive(Debug, Clone)]
pub struct HamiltonianField {
    pub p1: SymbolFamily,
    /// Whether `x` lives on the torus and is wrapped to `[0, 2π)`.
    pub periodic: bool,
    value: Compiled,
    grad_x: Vec<Compiled>,
    grad_xi: Vec<Compiled>,
}

fn lattice(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let xs: Vec<f64> = (0..7).map(|i| 0.3 + 0.9 * i as f64).collect();
    let dirs: Vec<Vec<f64>> = if n == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..8).map(|k| PI * k as f64 / 4.0 + 0.1).map(|a| vec![a.cos(), a.sin()]).collect()
    };
    let mut out = Vec::new();
    let points: Vec<Vec<f64>> = if n == 1 { xs.iter().map(|&x| vec![x]).collect() } else { xs.iter().flat_map(|&a| xs.iter().map(move |&b| vec![a, b])).collect() };
    for x in &points {
        for d in &dirs {
            for r in [1.0, 3.0, 10.0] {
                out.push((x.clone(), d.iter().map(|v| v * r).collect()));
            }
        }
    }
    out
}

impl HamiltonianField {
    /// Validates that `P₁` is real, ε-free and positively homogeneous of degree one for `|ξ| ≥ 1`.
    pub fn new(p1: SymbolFamily, periodic: bool) -> Result<Self> {
        let n = p1.dim;
        if !(1..=2).contains(&n) {
            return Err(Error::Validation { path: "field.dim".into(), message: format!("dimension {n} not in 1..=2") });
        }
        if p1.expr.depends_on(|v| v == Var::Eps) {
            return Err(Error::Validation { path: "field.p1".into(), message: "principal symbol must not depend on eps".into() });
        }
        let value = Compiled::new(&p1.expr);
        let grad_x = (0..n).map(|i| Compiled::new(&p1.expr.diff(Var::X(i as u8)))).collect();
        let grad_xi = (0..n).map(|i| Compiled::new(&p1.expr.diff(Var::Xi(i as u8)))).collect();
        let field = Self { p1, periodic, value, grad_x, grad_xi };
        for t in [0.0, 0.5, 1.0] {
            for (x, xi) in lattice(n) {
                let v = field.eval_complex(t, &x, &xi);
                if !v.re.is_finite() || v.im.abs() > 1e-12 {
                    return Err(Error::Validation { path: "field.p1".into(), message: format!("not real at x={x:?}, xi={xi:?}: {v}") });
                }
                let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
                for lam in [2.0, 4.0] {
                    let scaled: Vec<f64> = xi.iter().map(|v| v * lam).collect();
                    let d = (field.eval(t, &x, &scaled) - lam * v.re).abs();
                    if d > 1e-8 * lam * norm {
                        return Err(Error::Validation { path: "field.p1".into(), message: format!("not homogeneous of degree 1 at x={x:?}, xi={xi:?}") });
                    }
                }
            }
        }
        Ok(field)
    }

    pub fn parse(src: &str, dim: usize, periodic: bool) -> Result<Self> {
        Self::new(SymbolFamily::parse("P1", src, 1.0, dim)?, periodic)
    }

    pub fn dim(&self) -> usize {
        self.p1.dim
    }

    /// The field of `-P₁`, which runs the flow backwards.
    pub fn reversed(&self) -> Result<Self> {
        let p = SymbolFamily::new(format!("-({})", self.p1.label), -self.p1.expr.clone(), 1.0, self.p1.dim);
        Self::new(p, self.periodic)
    }

    fn point(t: f64, x: &[f64], xi: &[f64]) -> Point {
        let mut p = Point::new(x, xi, 1.0);
        p.t = t;
        p
    }

    fn eval_complex(&self, t: f64, x: &[f64], xi: &[f64]) -> Complex64 {
        self.value.eval(&Self::point(t, x, xi))
    }

    pub fn eval(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        self.eval_complex(t, x, xi).re
    }

    /// `(∇_ξP₁, −∇_xP₁)` at `z = (x, ξ)`.
    fn rhs(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let p = Self::point(t, &z[..n], &z[n..]);
        for i in 0..n {
            out[i] = self.grad_xi[i].eval(&p).re;
            out[n + i] = -self.grad_x[i].eval(&p).re;
        }
    }

    fn rk4_step(&self, t: f64, z: &mut [f64], h: f64) {
        let m = z.len();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let mut tmp = vec![0.0; m];
        self.rhs(t, z, &mut k1);
        for i in 0..m {
            tmp[i] = z[i] + 0.5 * h * k1[i];
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..m {
            tmp[i] = z[i] + 0.5 * h * k2[i];
        }
        self.rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..m {
            tmp[i] = z[i] + h * k3[i];
        }
        self.rhs(t + h, &tmp, &mut k4);
        for i in 0..m {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    fn integrate(&self, s0: &FlowState, duration: f64, steps: usize) -> Vec<f64> {
        let mut z: Vec<f64> = s0.x.iter().chain(&s0.xi).copied().collect();
        let h = duration / steps as f64;
        for k in 0..steps {
            self.rk4_step(s0.t + k as f64 * h, &mut z, h);
        }
        z
    }

    fn wrap(&self, x: &mut [f64]) {
        if self.periodic {
            for v in x.iter_mut() {
                *v = v.rem_euclid(2.0 * PI);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowState {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub t: f64,
}

impl FlowState {
    pub fn new(x: &[f64], xi: &[f64], t: f64) -> Self {
        Self { x: x.to_vec(), xi: xi.to_vec(), t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowOutcome {
    pub state: FlowState,
    /// Relative difference between step `dt` and step `dt/2`.
    pub error_estimate: f64,
}

/// `Φ_t(s0)`: integrates from `s0.t` to `s0.t + t` with RK4 and a Richardson check.
/// `t` may be negative.
pub fn hamilton_flow(field: &HamiltonianField, s0: &FlowState, t: f64, dt: f64) -> Result<FlowOutcome> {
    let n = field.dim();
    if s0.x.len() != n || s0.xi.len() != n {
        return Err(Error::Validation { path: "state".into(), message: format!("state dimension does not match field dimension {n}") });
    }
    if !(dt > 0.0) || !t.is_finite() || t.abs() / dt > 1e7 {
        return Err(Error::Validation { path: "dt".into(), message: format!("need dt > 0 and |t|/dt <= 1e7 (t={t}, dt={dt})") });
    }
    if s0.xi.iter().all(|v| *v == 0.0) {
        return Err(Error::Validation { path: "state.xi".into(), message: "xi must be nonzero".into() });
    }
    let steps = ((t.abs() / dt).ceil() as usize).max(1);
    let coarse = field.integrate(s0, t, steps);
    let fine = field.integrate(s0, t, 2 * steps);
    let scale = fine.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let error = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    if !(error <= FLOW_TOLERANCE) {
        return Err(Error::StepTooLarge { error });
    }
    let mut x = fine[..n].to_vec();
    field.wrap(&mut x);
    Ok(FlowOutcome { state: FlowState { x, xi: fine[n..].to_vec(), t: s0.t + t }, error_estimate: error })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub tau: f64,
}

/// The bicharacteristic through `(x0, t0; ξ0, −P₁(t0,x0,ξ0))`, sampled every step up to `t1`.
pub fn bicharacteristic_lift(field: &HamiltonianField, x0: &[f64], xi0: &[f64], t0: f64, t1: f64, dt: f64) -> Result<Vec<LiftPoint>> {
    let s0 = FlowState::new(x0, xi0, t0);
    hamilton_flow(field, &s0, t1 - t0, dt)?;
    let n = field.dim();
    let steps = (((t1 - t0).abs() / dt).ceil() as usize).max(1);
    let h = (t1 - t0) / steps as f64;
    let mut z: Vec<f64> = x0.iter().chain(xi0).copied().collect();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t0 + k as f64 * h;
        if k > 0 {
            field.rk4_step(t - h, &mut z, h);
        }
        let tau = -field.eval(t, &z[..n], &z[n..]);
        let mut x = z[..n].to_vec();
        field.wrap(&mut x);
        out.push(LiftPoint { t, x, xi: z[n..].to_vec(), tau });
    }
    Ok(out)
}

/// Largest `|τ + P₁(t, x, ξ)|` along a lift.
pub fn lift_residual(field: &HamiltonianField, curve: &[LiftPoint]) -> f64 {
    curve.iter().map(|p| (p.tau + field.eval(p.t, &p.x, &p.xi)).abs()).fold(0.0, f64::max)
}

/// Curve as CSV with columns `t,x,xi,tau` (indexed columns in 2D).
pub fn curve_csv(curve: &[LiftPoint]) -> String {
    let n = curve.first().map_or(1, |p| p.x.len());
    let mut s = if n == 1 { "t,x,xi,tau\n".to_string() } else { "t,x1,x2,xi1,xi2,tau\n".to_string() };
    for p in curve {
        let cols: Vec<String> = std::iter::once(p.t).chain(p.x.iter().copied()).chain(p.xi.iter().copied()).chain(std::iter::once(p.tau)).map(crate::symbols::fmt_f).collect();
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

/// `q ∘ Φ_t⁻¹` sampled on grid points, sector centre rays and radii.
#[derive(Debug, Clone, Serialize)]
pub struct TransportTable {
    pub t: f64,
    pub points: Vec<Vec<f64>>,
    pub sectors: usize,
    pub radii: Vec<f64>,
    /// Indexed `[(point · sectors + sector) · radii + radius]`.
    pub values: Vec<Complex64>,
}

impl TransportTable {
    pub fn get(&self, point: usize, sector: usize, radius: usize) -> Complex64 {
        self.values[(point * self.sectors + sector) * self.radii.len() + radius]
    }
}

/// Transports an order-0 symbol along the flow: `Q(t,x,ξ) = q(Φ_t⁻¹(x,ξ))` at fixed `ε`.
#[allow(clippy::too_many_arguments)]
pub fn transport_symbol(
    q: &SymbolFamily,
    field: &HamiltonianField,
    t: f64,
    spec: &GridSpec,
    cones: &ConeGrid,
    radii: &[f64],
    eps: f64,
    dt: f64,
) -> Result<TransportTable> {
    if q.order > 0.0 {
        return Err(Error::Validation { path: "q.order".into(), message: format!("transported symbol must have order <= 0, got {}", q.order) });
    }
    let c = Compiled::new(&q.expr);
    let points: Vec<Vec<f64>> = (0..spec.size()).map(|i| spec.point(i)).collect();
    let mut values = Vec::with_capacity(points.len() * cones.count() * radii.len());
    for x in &points {
        for s in 0..cones.count() {
            let dir = cones.center(s);
            for &r in radii {
                let xi: Vec<f64> = dir.iter().map(|v| v * r).collect();
                let (xb, xib) = if t == 0.0 {
                    (x.clone(), xi)
                } else {
                    let back = hamilton_flow(field, &FlowState::new(x, &xi, t), -t, dt)?.state;
                    (back.x, back.xi)
                };
                values.push(c.eval(&Point::new(&xb, &xib, eps)));
            }
        }
    }
    Ok(TransportTable { t, points, sectors: cones.count(), radii: radii.to_vec(), values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stepping {
    /// Multiplier stepping when the symbol is free of `x` and `t`, else method of lines.
    Auto,
    Multiplier,
    MethodOfLines,
}

#[derive(Debug, Clone)]
pub struct CauchyProblem {
    /// Full symbol `P(t,x,ξ)`, principal part plus optional lower-order terms.
    pub symbol: SymbolFamily,
    pub g: GridFunctionFamily,
    /// Time step; `None` uses the CFL bound.
    pub dt: Option<f64>,
    /// Non-negative, ascending.
    pub record_times: Vec<f64>,
    pub stepping: Stepping,
}

#[derive(Debug, Clone)]
pub struct CauchySolution {
    pub times: Vec<f64>,
    pub states: Vec<GridFunctionFamily>,
    pub multiplier: bool,
    pub dt: f64,
}

/// `0.5 / (G · max|∂_ξ P|)` over a sample of grid points, frequencies, `ε` and record times.
pub fn cfl_bound(symbol: &SymbolFamily, spec: &GridSpec, eps_values: &[f64], times: &[f64]) -> f64 {
    let n = spec.n;
    let grads: Vec<Compiled> = (0..n).map(|i| Compiled::new(&symbol.expr.diff(Var::Xi(i as u8)))).collect();
    let stride = |m: usize| (spec.g / m).max(1);
    let xs: Vec<usize> = (0..spec.size()).filter(|&i| spec.unflatten(i).iter().take(n).all(|c| c % stride(16) == 0)).collect();
    let ks: Vec<usize> = (0..spec.size()).filter(|&i| spec.unflatten(i).iter().take(n).all(|c| c % stride(if n == 1 { spec.g } else { 64 }) == 0)).collect();
    let mut m = 0.0f64;
    let ts: Vec<f64> = std::iter::once(0.0).chain(times.iter().copied()).collect();
    for &e in eps_values {
        for &t in &ts {
            for &i in &xs {
                let x = spec.point(i);
                for &q in &ks {
                    let mut p = Point::new(&x, &spec.frequency(q), e);
                    p.t = t;
                    for gr in &grads {
                        m = m.max(gr.eval(&p).norm());
                    }
                }
            }
        }
    }
    if m == 0.0 {
        f64::INFINITY
    } else {
        0.5 / (spec.g as f64 * m)
    }
}

fn max_norm(u: &[Complex64]) -> f64 {
    u.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Solves `∂_t u + iP(t,x,D)u = 0`, `u(0) = g`, per `ε`, returning one family per record time.
pub fn solve_cauchy(problem: &CauchyProblem) -> Result<CauchySolution> {
    let times = &problem.record_times;
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation { path: "record_times".into(), message: "record times must be finite, non-negative and ascending".into() });
    }
    let g = &problem.g;
    let spec = g.spec;
    if problem.symbol.dim != spec.n {
        return Err(Error::Validation { path: "symbol.dim".into(), message: format!("symbol dimension {} does not match grid dimension {}", problem.symbol.dim, spec.n) });
    }
    let e = &problem.symbol.expr;
    let constant = !e.depends_on(|v| matches!(v, Var::X(_) | Var::T | Var::Y(_)));
    let multiplier = match problem.stepping {
        Stepping::Auto => constant,
        Stepping::Multiplier if !constant => {
            return Err(Error::Validation { path: "stepping".into(), message: "multiplier stepping needs a symbol free of x and t".into() });
        }
        Stepping::Multiplier => true,
        Stepping::MethodOfLines => false,
    };
    let eps_values = g.eps_grid.eps_values();
    let bound = cfl_bound(&problem.symbol, &spec, &eps_values, times);
    let dt = match problem.dt {
        Some(d) if !(d > 0.0) => return Err(Error::Validation { path: "dt".into(), message: format!("dt = {d} must be positive") }),
        Some(d) if !multiplier && d > bound => {
            return Err(Error::Validation { path: "dt".into(), message: format!("dt = {d} exceeds the CFL bound {bound:.3e}") });
        }
        Some(d) => d,
        None => bound.min(0.1),
    };
    let sp = Spectral::new(spec);
    let mut per_eps: Vec<Vec<Vec<Complex64>>> = Vec::with_capacity(eps_values.len());
    for (ei, &eps) in eps_values.iter().enumerate() {
        let u0 = &g.data[ei];
        let out = if multiplier { multiplier_path(e, &sp, &spec, u0, eps, times)? } else { lines_path(e, &sp, &spec, u0, eps, times, dt)? };
        per_eps.push(out);
    }
    let mut states = Vec::with_capacity(times.len());
    for (k, t) in times.iter().enumerate() {
        let data: Vec<Vec<Complex64>> = per_eps.iter().map(|v| v[k].clone()).collect();
        states.push(GridFunctionFamily::new(spec, g.eps_grid, data, format!("{}(t={})", g.label, crate::symbols::fmt_f(*t)))?);
    }
    Ok(CauchySolution { times: times.clone(), states, multiplier, dt })
}

fn multiplier_path(e: &Expr, sp: &Spectral, spec: &GridSpec, u0: &[Complex64], eps: f64, times: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    let c = Compiled::new(e);
    let symbol: Vec<Complex64> = (0..spec.size()).map(|q| c.eval(&Point::new(&[0.0, 0.0][..spec.n], &spec.frequency(q), eps))).collect();
    let mut uh = u0.to_vec();
    sp.forward(&mut uh);
    let start = max_norm(u0).max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let mut w: Vec<Complex64> = uh.iter().zip(&symbol).map(|(a, p)| a * (Complex64::new(0.0, -t) * p).exp()).collect();
        sp.inverse(&mut w);
        let growth = max_norm(&w) / start;
        if !(growth <= GROWTH_LIMIT) {
            return Err(Error::Instability { t, growth });
        }
        out.push(w);
    }
    Ok(out)
}

fn lines_path(e: &Expr, sp: &Spectral, spec: &GridSpec, u0: &[Complex64], eps: f64, times: &[f64], dt: f64) -> Result<Vec<Vec<Complex64>>> {
    let plan = Plan::new(e);
    let rhs = |t: f64, u: &[Complex64]| -> Result<Vec<Complex64>> {
        let mut v = apply_slice(&plan, sp, spec, u, eps, t)?;
        for z in v.iter_mut() {
            *z *= Complex64::new(0.0, -1.0);
        }
        Ok(v)
    };
    let axpy = |u: &[Complex64], h: f64, k: &[Complex64]| -> Vec<Complex64> { u.iter().zip(k).map(|(a, b)| a + b * h).collect() };
    let start = max_norm(u0).max(f64::MIN_POSITIVE);
    let mut u = u0.to_vec();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let span = target - now;
        let steps = (span / dt).ceil() as usize;
        if steps > 0 {
            let h = span / steps as f64;
            for k in 0..steps {
                let t = now + k as f64 * h;
                let k1 = rhs(t, &u)?;
                let k2 = rhs(t + 0.5 * h, &axpy(&u, 0.5 * h, &k1))?;
                let k3 = rhs(t + 0.5 * h, &axpy(&u, 0.5 * h, &k2))?;
                let k4 = rhs(t + h, &axpy(&u, h, &k3))?;
                for i in 0..u.len() {
                    u[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
                }
                let growth = max_norm(&u) / start;
                if !(growth <= GROWTH_LIMIT) {
                    return Err(Error::Instability { t: t + h, growth });
                }
            }
        }
        now = target;
        out.push(u.clone());
    }
    Ok(out)
}

/// Sector whose centre is angularly closest to `xi`.
pub fn nearest_sector(cones: &ConeGrid, xi: &[f64]) -> usize {
    if cones.n == 1 {
        return if xi[0] >= 0.0 { 0 } else { 1 };
    }
    let th = xi[1].atan2(xi[0]);
    (0..cones.count())
        .min_by(|&a, &b| angle_dist(th, cones.center_angle(a)).total_cmp(&angle_dist(th, cones.center_angle(b))))
        .unwrap_or(0)
}

/// `Φ_t` applied to (cell centre, sector centre ray at `radius`) for each pair, then binned.
#[allow(clippy::too_many_arguments)]
pub fn push_forward(
    set: &BTreeSet<Pair>,
    field: &HamiltonianField,
    t: f64,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    radius: f64,
    dt: f64,
) -> Result<BTreeSet<Pair>> {
    let mut out = BTreeSet::new();
    for &(c, s) in set {
        let xi: Vec<f64> = cones.center(s).iter().map(|v| v * radius).collect();
        let s0 = FlowState::new(&cells.center(c), &xi, 0.0);
        let end = if t == 0.0 { s0 } else { hamilton_flow(field, &s0, t, dt)?.state };
        out.insert((cells.cell_of(&end.x), nearest_sector(cones, &end.xi)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationReport {
    pub t: f64,
    pub pass: bool,
    pub estimated: Vec<Pair>,
    pub predicted: Vec<Pair>,
    /// Estimated pairs outside the dilated prediction.
    pub extras: Vec<Pair>,
    /// Predicted pairs outside the dilated estimate.
    pub missing: Vec<Pair>,
}

impl PropagationReport {
    fn compare(t: f64, est: &BTreeSet<Pair>, pred: &BTreeSet<Pair>, cells: &CellDecomposition, cones: &ConeGrid, cfg: &WavefrontConfig) -> Self {
        let extras = uncovered(est, pred, cells, cones, cfg);
        let missing = uncovered(pred, est, cells, cones, cfg);
        Self {
            t,
            pass: extras.is_empty() && missing.is_empty(),
            estimated: est.iter().copied().collect(),
            predicted: pred.iter().copied().collect(),
            extras,
            missing,
        }
    }
}

/// Step used when pushing sector rays through the flow.
pub const PUSH_DT: f64 = 1e-3;

/// Compares `WF(u(t))` with `Φ_t(WF(g))` at each record time.
pub fn verify_propagation(
    problem: &CauchyProblem,
    field: &HamiltonianField,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<Vec<PropagationReport>> {
    let sol = solve_cauchy(problem)?;
    let wf0 = wavefront_estimate(&problem.g, cells, cones, cfg)?.singular_set();
    let radius = problem.g.spec.g as f64 / 4.0;
    let mut reports = Vec::with_capacity(sol.times.len());
    for (t, u) in sol.times.iter().zip(&sol.states) {
        let est = wavefront_estimate(u, cells, cones, cfg)?.singular_set();
        let pred = push_forward(&wf0, field, *t, cells, cones, radius, PUSH_DT)?;
        reports.push(PropagationReport::compare(*t, &est, &pred, cells, cones, cfg));
    }
    Ok(reports)
}

/// Solves to `t`, then runs the reversed problem (`−P` with data `u(t)`) back over the same span.
/// The report carries time `−t`.
pub fn verify_time_reversal(
    problem: &CauchyProblem,
    field: &HamiltonianField,
    t: f64,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<PropagationReport> {
    let forward = CauchyProblem { record_times: vec![t], ..problem.clone() };
    let sol = solve_cauchy(&forward)?;
    let back = CauchyProblem {
        symbol: SymbolFamily::new(format!("-({})", problem.symbol.label), -problem.symbol.expr.clone(), problem.symbol.order, problem.symbol.dim),
        g: sol.states[0].clone(),
        dt: problem.dt,
        record_times: vec![t],
        stepping: problem.stepping,
    };
    let mut r = verify_propagation(&back, &field.reversed()?, cells, cones, cfg)?.remove(0);
    r.t = -t;
    Ok(r)
}

/// The `t = it·dx` slice of a space-time family (axis 0 = `x`, axis 1 = `t`).
pub fn time_slice(u: &GridFunctionFamily, it: usize) -> Result<GridFunctionFamily> {
    if u.spec.n != 2 || it >= u.spec.g {
        return Err(Error::Validation { path: "time_slice".into(), message: format!("need a 2D family and it < G, got it = {it}") });
    }
    let g = u.spec.g;
    let spec = GridSpec::new(1, g)?;
    let data = u.data.iter().map(|d| (0..g).map(|ix| d[ix * g + it]).collect()).collect();
    GridFunctionFamily::new(spec, u.eps_grid, data, format!("{}|t={}", u.label, crate::symbols::fmt_f(it as f64 * u.spec.dx())))
}

/// `⋃γ(x0, ξ0)` binned into space-time cells and `(ξ, τ)` sectors, with the largest lift residual.
pub fn spacetime_prediction(
    field: &HamiltonianField,
    data: &[(Vec<f64>, Vec<f64>)],
    t_span: f64,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    dt: f64,
) -> Result<(BTreeSet<Pair>, f64)> {
    if field.dim() != 1 || cells.spec.n != 2 || cones.n != 2 {
        return Err(Error::Validation { path: "spacetime".into(), message: "space-time checks need a 1D field and a 2D decomposition".into() });
    }
    let mut pred = BTreeSet::new();
    let mut residual = 0.0f64;
    for (x0, xi0) in data {
        let curve = bicharacteristic_lift(field, x0, xi0, 0.0, t_span, dt)?;
        residual = residual.max(lift_residual(field, &curve));
        for p in &curve {
            let c = cells.cell_of(&[p.x[0], p.t]);
            pred.insert((c, nearest_sector(cones, &[p.xi[0], p.tau])));
        }
    }
    Ok((pred, residual))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacetimeReport {
    pub pass: bool,
    pub lift_residual: f64,
    pub data_points: usize,
    pub estimated: Vec<Pair>,
    pub predicted: Vec<Pair>,
    pub extras: Vec<Pair>,
}

/// Checks `WF(u) ⊆ ⋃γ` for a space-time family, lifting the singular pairs of `u(·,0)`.
pub fn verify_spacetime(
    u: &GridFunctionFamily,
    field: &HamiltonianField,
    cells1d: &CellDecomposition,
    cones1d: &ConeGrid,
    cells2d: &CellDecomposition,
    cones2d: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<SpacetimeReport> {
    let g0 = time_slice(u, 0)?;
    let radius = u.spec.g as f64 / 4.0;
    let data: Vec<(Vec<f64>, Vec<f64>)> = wavefront_estimate(&g0, cells1d, cones1d, cfg)?
        .singular_set()
        .into_iter()
        .map(|(c, s)| (cells1d.center(c), cones1d.center(s).iter().map(|v| v * radius).collect()))
        .collect();
    let (pred, lift_residual) = spacetime_prediction(field, &data, 2.0 * PI, cells2d, cones2d, 1e-2)?;
    let est = wavefront_estimate(u, cells2d, cones2d, cfg)?.singular_set();
    let extras = uncovered(&est, &pred, cells2d, cones2d, cfg);
    Ok(SpacetimeReport {
        pass: extras.is_empty(),
        lift_residual,
        data_points: data.len(),
        estimated: est.into_iter().collect(),
        predicted: pred.into_iter().collect(),
        extras,
    })
}

/// Sectors nearest `±e_τ`.
fn conormal_sectors(cones: &ConeGrid) -> [usize; 2] {
    [nearest_sector(cones, &[0.0, 1.0]), nearest_sector(cones, &[0.0, -1.0])]
}

/// Projects singular space-time pairs on the slab `t = t0` to `x`-cells and `ξ`-sectors.
/// Fails with `ConormalPresent` when a pure-`τ` sector is singular there.
pub fn wf_restrict_predict(wf: &WavefrontEstimate, cells: &CellDecomposition, cones: &ConeGrid, t0: f64) -> Result<BTreeSet<Pair>> {
    if cells.spec.n != 2 || cones.n != 2 {
        return Err(Error::Validation { path: "restrict".into(), message: "restriction needs a 2D space-time estimate".into() });
    }
    let h = cells.cell_width();
    let t0w = t0.rem_euclid(2.0 * PI);
    let meets = |c: usize| {
        let lo = c as f64 * h;
        t0w >= lo - 1e-12 && t0w <= lo + h + 1e-12
    };
    let conormal = conormal_sectors(cones);
    let mut bad = Vec::new();
    let mut out = BTreeSet::new();
    for (cell, s) in wf.singular_set() {
        let [cx, ct] = cells.coords(cell);
        if !meets(ct) {
            continue;
        }
        if conormal.contains(&s) {
            bad.push(cell);
            continue;
        }
        let cos = cones.center_angle(s).cos();
        if cos > 1e-12 {
            out.insert((cx, 0));
        } else if cos < -1e-12 {
            out.insert((cx, 1));
        }
    }
    if !bad.is_empty() {
        bad.dedup();
        return Err(Error::ConormalPresent { t0, cells: bad });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictionReport {
    pub t0: f64,
    pub pass: bool,
    pub estimated: Vec<Pair>,
    pub predicted: Vec<Pair>,
    pub extras: Vec<Pair>,
}

/// Checks `WF(u(·,t0)) ⊆ {(x,ξ) : ∃τ (x,t0;ξ,τ) ∈ WF(u)}` at `t0 = it·dx`.
/// `cells1d` must use the same cells per axis as `cells2d`.
pub fn verify_restriction(
    u: &GridFunctionFamily,
    it: usize,
    cells2d: &CellDecomposition,
    cones2d: &ConeGrid,
    cells1d: &CellDecomposition,
    cones1d: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<RestrictionReport> {
    if cells1d.per_axis != cells2d.per_axis {
        return Err(Error::Validation { path: "cells".into(), message: "1D and 2D decompositions must use the same cells per axis".into() });
    }
    let t0 = it as f64 * u.spec.dx();
    let wf = wavefront_estimate(u, cells2d, cones2d, cfg)?;
    let pred = wf_restrict_predict(&wf, cells2d, cones2d, t0)?;
    let est = wavefront_estimate(&time_slice(u, it)?, cells1d, cones1d, cfg)?.singular_set();
    let extras = uncovered(&est, &pred, cells1d, cones1d, cfg);
    Ok(RestrictionReport { t0, pass: extras.is_empty(), estimated: est.into_iter().collect(), predicted: pred.into_iter().collect(), extras })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{delta, plane_wave};
    use crate::nets::EpsilonGrid;

    fn sym(e: Expr) -> SymbolFamily {
        SymbolFamily::new("P", e, 1.0, 1)
    }

    fn field(e: Expr, periodic: bool) -> HamiltonianField {
        HamiltonianField::new(sym(e), periodic).unwrap()
    }

    fn speed() -> Expr {
        let c = &Expr::one() + &(&Expr::real(0.5) * &Expr::sin(&Expr::x(0)));
        &c * &Expr::xi(0)
    }

    fn estimate_with(cells: &CellDecomposition, cones: &ConeGrid, singular: &[Pair]) -> WavefrontEstimate {
        use crate::wavefront::{CellVerdict, RegularityVerdict};
        let verdicts = (0..cells.count())
            .flat_map(|cell| (0..cones.count()).map(move |sector| (cell, sector)))
            .map(|(cell, sector)| CellVerdict {
                cell,
                sector,
                verdict: RegularityVerdict { regular: !singular.contains(&(cell, sector)), n_slope_vs_l: 0.0, n_at_l0: 0.0, details: vec![] },
            })
            .collect();
        WavefrontEstimate {
            n: cells.spec.n,
            cells_per_axis: cells.per_axis,
            sectors: cones.count(),
            theta_centers: (0..cones.count()).map(|s| cones.center_angle(s)).collect(),
            verdicts,
            config: WavefrontConfig::default(),
            warnings: vec![],
        }
    }

    #[test]
    fn constant_transport_flow_is_exact() {
        let f = field(&Expr::real(2.0) * &Expr::xi(0), true);
        let out = hamilton_flow(&f, &FlowState::new(&[1.0], &[3.0], 0.0), 4.0, 0.01).unwrap();
        assert!((out.state.x[0] - (9.0f64).rem_euclid(2.0 * PI)).abs() < 1e-12);
        assert_eq!(out.state.xi[0], 3.0);
    }

    #[test]
    fn linear_flow_matches_closed_form() {
        let f = field(&Expr::x(0) * &Expr::xi(0), false);
        let out = hamilton_flow(&f, &FlowState::new(&[0.7], &[1.3], 0.0), 1.0, 1e-3).unwrap();
        let e = 1f64.exp();
        assert!((out.state.x[0] - 0.7 * e).abs() <= 1e-8);
        assert!((out.state.xi[0] - 1.3 / e).abs() <= 1e-8);
    }

    #[test]
    fn rejects_complex_or_inhomogeneous_fields() {
        let xi = Expr::xi(0);
        assert!(HamiltonianField::new(sym(&Expr::complex(1.0, 1.0) * &xi), true).is_err());
        assert!(HamiltonianField::new(sym(&xi * &xi), true).is_err());
        assert!(HamiltonianField::new(sym(&Expr::eps() * &xi), true).is_err());
    }

    #[test]
    fn coarse_step_is_rejected() {
        let f = field(speed(), true);
        let r = hamilton_flow(&f, &FlowState::new(&[1.0], &[1.0], 0.0), 10.0, 2.0);
        assert!(matches!(r, Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn lift_stays_characteristic() {
        let f = field(speed(), true);
        let c = bicharacteristic_lift(&f, &[0.3], &[2.0], 0.0, 2.0, 1e-3).unwrap();
        assert!(lift_residual(&f, &c) <= 1e-8);
        let tau0 = c[0].tau;
        assert!(c.iter().all(|p| (p.tau - tau0).abs() <= 1e-8));
        assert!(curve_csv(&c[..2]).starts_with("t,x,xi,tau\n0,"));
    }

    #[test]
    fn multiplier_matches_method_of_lines() {
        let spec = GridSpec::new(1, 64).unwrap();
        let grid = EpsilonGrid::new(1, 6).unwrap();
        let g = plane_wave(spec, grid, &[3.0]).unwrap();
        let p = sym(Expr::xi(0));
        let mk = |s| CauchyProblem { symbol: p.clone(), g: g.clone(), dt: None, record_times: vec![0.5, 1.0], stepping: s };
        let a = solve_cauchy(&mk(Stepping::Multiplier)).unwrap();
        let b = solve_cauchy(&mk(Stepping::MethodOfLines)).unwrap();
        assert!(a.multiplier && !b.multiplier);
        for (x, y) in a.states.iter().zip(&b.states) {
            for (u, v) in x.data.iter().zip(&y.data) {
                let d = u.iter().zip(v).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
                assert!(d <= 1e-8, "{d}");
            }
        }
        let expect = (0..64).map(|i| Complex64::from_polar(1.0, 3.0 * (spec.coord(i) - 1.0)));
        let d = a.states[1].data[0].iter().zip(expect).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(d < 1e-10);
    }

    #[test]
    fn variable_speed_self_converges() {
        let spec = GridSpec::new(1, 64).unwrap();
        let grid = EpsilonGrid::new(1, 6).unwrap();
        let g = delta(spec, grid, &[2.0], 2.0).unwrap();
        let p = sym(speed());
        let base = CauchyProblem { symbol: p, g, dt: None, record_times: vec![1.0], stepping: Stepping::Auto };
        let coarse = solve_cauchy(&base).unwrap();
        let fine = solve_cauchy(&CauchyProblem { dt: Some(coarse.dt / 2.0), ..base.clone() }).unwrap();
        for (u, v) in coarse.states[0].data.iter().zip(&fine.states[0].data) {
            let scale = max_norm(v);
            let d = u.iter().zip(v).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            assert!(d <= 1e-6 * scale, "{d}");
        }
        let too_big = CauchyProblem { dt: Some(coarse.dt * 4.0), ..base };
        assert!(solve_cauchy(&too_big).is_err());
    }

    #[test]
    fn transport_at_zero_is_direct_sampling() {
        let f = field(Expr::xi(0), true);
        let q = SymbolFamily::new("q", &(&Expr::sin(&Expr::x(0)) * &Expr::xi(0)) / &Expr::japanese_xi(1), 0.0, 1);
        let spec = GridSpec::new(1, 64).unwrap();
        let cones = ConeGrid::new(1, 2, 1.0);
        let tab = transport_symbol(&q, &f, 0.0, &spec, &cones, &[2.0, 4.0], 0.5, 1e-2).unwrap();
        let x = spec.coord(3);
        let want = x.sin() * (-4.0) / (17f64).sqrt();
        assert!((tab.get(3, 1, 1).re - want).abs() < 1e-14);
    }

    fn sign_symbol() -> SymbolFamily {
        let xi = Expr::xi(0);
        let dir = &xi * &Expr::pow(&(&xi * &xi), -0.5);
        SymbolFamily::new("q", &Expr::cos(&Expr::x(0)) * &dir, 0.0, 1)
    }

    #[test]
    fn transport_translates_under_constant_speed() {
        let f = field(Expr::xi(0), true);
        let q = sign_symbol();
        let spec = GridSpec::new(1, 64).unwrap();
        let cones = ConeGrid::new(1, 2, 1.0);
        let tab = transport_symbol(&q, &f, 1.0, &spec, &cones, &[3.0], 0.5, 1e-2).unwrap();
        for i in 0..64 {
            let x = spec.coord(i);
            assert!((tab.get(i, 0, 0).re - (x - 1.0).cos()).abs() < 1e-10);
            assert!((tab.get(i, 1, 0).re + (x - 1.0).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn transport_keeps_degree_zero() {
        let f = field(speed(), true);
        let spec = GridSpec::new(1, 64).unwrap();
        let cones = ConeGrid::new(1, 2, 1.0);
        let tab = transport_symbol(&sign_symbol(), &f, 0.8, &spec, &cones, &[2.0, 4.0], 0.5, 1e-2).unwrap();
        for i in 0..64 {
            for s in 0..2 {
                assert!((tab.get(i, s, 0) - tab.get(i, s, 1)).norm() <= 1e-6);
            }
        }
    }

    #[test]
    fn restriction_flags_time_conormal() {
        let spec = GridSpec::new(2, 64).unwrap();
        let cells = CellDecomposition::new(spec, 4).unwrap();
        let cones = ConeGrid::new(2, 16, 2.0);
        let wf = estimate_with(&cells, &cones, &[(cells.index([1, 2]), 4)]);
        assert!(matches!(wf_restrict_predict(&wf, &cells, &cones, PI), Err(Error::ConormalPresent { .. })));
        let wf = estimate_with(&cells, &cones, &[(cells.index([1, 2]), 14)]);
        assert_eq!(wf_restrict_predict(&wf, &cells, &cones, PI).unwrap(), BTreeSet::from([(1, 0)]));
    }
}
