//! Kohn–Nirenberg quantization `a(x,D)u = Σ_k e^{ix·k} a(x,k) û(k) / Gⁿ` on the torus,
//! kernel matrices and the proper/smoothing split.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr, Node, Point, Var};
use crate::grid::{GridFunctionFamily, GridSpec, Spectral};
use crate::nets::{classify_scale, fit_growth_exponent, EpsilonGrid, NetSample, NetThresholds};
use crate::symbols::{ProperCutoff, SymbolFamily};

pub use crate::grid::{inner, l2_norm, pairing};

/// Multiply-add budget for the direct (non-separable) sum.
pub const DIRECT_BUDGET: u128 = 1 << 32;

const MAX_SEPARABLE_TERMS: usize = 64;

fn has_space(e: &Expr) -> bool {
    e.free_vars().iter().any(|v| matches!(v, Var::X(_) | Var::Y(_)))
}

fn has_freq(e: &Expr) -> bool {
    e.free_vars().iter().any(|v| matches!(v, Var::Xi(_)))
}

/// Splits `e` as `Σ_t f_t(x)·g_t(ξ)` when its structure allows it.
pub fn separate(e: &Expr) -> Option<Vec<(Expr, Expr)>> {
    if !has_freq(e) {
        return Some(vec![(e.clone(), Expr::one())]);
    }
    if !has_space(e) {
        return Some(vec![(Expr::one(), e.clone())]);
    }
    let out = match e.node() {
        Node::Add(a, b) => {
            let mut v = separate(a)?;
            v.extend(separate(b)?);
            v
        }
        Node::Sub(a, b) => {
            let mut v = separate(a)?;
            v.extend(separate(b)?.into_iter().map(|(f, g)| (-f, g)));
            v
        }
        Node::Mul(a, b) => {
            let (sa, sb) = (separate(a)?, separate(b)?);
            if sa.len() * sb.len() > MAX_SEPARABLE_TERMS {
                return None;
            }
            let mut v = Vec::with_capacity(sa.len() * sb.len());
            for (fa, ga) in &sa {
                for (fb, gb) in &sb {
                    v.push((fa * fb, ga * gb));
                }
            }
            v
        }
        Node::Div(a, b) => {
            let sa = separate(a)?;
            if !has_freq(b) {
                sa.into_iter().map(|(f, g)| (f / b, g)).collect()
            } else if !has_space(b) {
                sa.into_iter().map(|(f, g)| (f, g / b)).collect()
            } else {
                return None;
            }
        }
        _ => return None,
    };
    (out.len() <= MAX_SEPARABLE_TERMS).then_some(out)
}

fn eval_on(c: &Compiled, p: &Point, buf: &mut [Complex64], what: &Expr) -> Result<Complex64> {
    let v = c.eval_into(p, buf);
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{what} at {p:?}")))
    }
}

fn sample_space(e: &Expr, spec: &GridSpec, eps: f64, t: f64) -> Result<Vec<Complex64>> {
    let c = Compiled::new(e);
    let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
    if !has_space(e) {
        let p = Point { eps, t, ..Default::default() };
        let v = eval_on(&c, &p, &mut buf, e)?;
        return Ok(vec![v; spec.size()]);
    }
    (0..spec.size())
        .map(|i| {
            let mut p = Point::new(&spec.point(i), &[], eps);
            p.t = t;
            eval_on(&c, &p, &mut buf, e)
        })
        .collect()
}

fn sample_freq(e: &Expr, spec: &GridSpec, eps: f64, t: f64) -> Result<Vec<Complex64>> {
    let c = Compiled::new(e);
    let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
    (0..spec.size())
        .map(|i| {
            let mut p = Point::new(&[], &spec.frequency(i), eps);
            p.t = t;
            eval_on(&c, &p, &mut buf, e)
        })
        .collect()
}

/// How a symbol will be applied.
#[derive(Debug, Clone)]
pub enum Plan {
    Separable(Vec<(Expr, Expr)>),
    Direct(Expr),
}

impl Plan {
    pub fn new(a: &Expr) -> Self {
        match separate(a) {
            Some(terms) => Plan::Separable(terms),
            None => Plan::Direct(a.clone()),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, Plan::Separable(_))
    }
}

/// Applies `a(x,D)` to one slice at fixed `(ε, t)`.
pub fn apply_slice(plan: &Plan, sp: &Spectral, spec: &GridSpec, u: &[Complex64], eps: f64, t: f64) -> Result<Vec<Complex64>> {
    let mut uh = u.to_vec();
    sp.forward(&mut uh);
    match plan {
        Plan::Separable(terms) => {
            let mut out = vec![Complex64::new(0.0, 0.0); spec.size()];
            for (f, g) in terms {
                let gv = sample_freq(g, spec, eps, t)?;
                let mut w: Vec<Complex64> = uh.iter().zip(&gv).map(|(a, b)| a * b).collect();
                sp.inverse(&mut w);
                let fv = sample_space(f, spec, eps, t)?;
                for ((o, a), b) in out.iter_mut().zip(&w).zip(&fv) {
                    *o += a * b;
                }
            }
            Ok(out)
        }
        Plan::Direct(a) => {
            let c = Compiled::new(a);
            let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
            let size = spec.size();
            let freqs: Vec<Vec<f64>> = (0..size).map(|q| spec.frequency(q)).collect();
            let scale = 1.0 / size as f64;
            let mut out = Vec::with_capacity(size);
            for m in 0..size {
                let x = spec.point(m);
                let mut acc = Complex64::new(0.0, 0.0);
                for (q, k) in freqs.iter().enumerate() {
                    if uh[q] == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut p = Point::new(&x, k, eps);
                    p.t = t;
                    let av = eval_on(&c, &p, &mut buf, a)?;
                    let phase: f64 = x.iter().zip(k).map(|(a, b)| a * b).sum();
                    acc += Complex64::from_polar(1.0, phase) * av * uh[q];
                }
                out.push(acc * scale);
            }
            Ok(out)
        }
    }
}

fn check_budget(plan: &Plan, spec: &GridSpec, slices: usize) -> Result<()> {
    if let Plan::Direct(_) = plan {
        let needed = (spec.size() as u128).pow(2) * slices as u128;
        if needed > DIRECT_BUDGET {
            return Err(Error::SeparabilityFallbackTooLarge { needed });
        }
    }
    Ok(())
}

/// `a(x,D)u_ε` for every ε of the family.
pub fn quantize_kn(a: &SymbolFamily, u: &GridFunctionFamily) -> Result<GridFunctionFamily> {
    quantize_kn_at(&a.expr, u, 0.0)
}

/// As [`quantize_kn`] for an expression that may depend on time `t`.
pub fn quantize_kn_at(a: &Expr, u: &GridFunctionFamily, t: f64) -> Result<GridFunctionFamily> {
    let plan = Plan::new(a);
    check_budget(&plan, &u.spec, u.data.len())?;
    let sp = Spectral::new(u.spec);
    let grid = u.eps_grid;
    u.map_slices(&format!("Op({})", u.label), |i, d| {
        apply_slice(&plan, &sp, &u.spec, d, grid.eps(grid.j_min + i as i32), t)
    })
}

/// Kernel samples `k(x, y)` per ε; row = output point, column = input point.
/// `(Au)(x) = Σ_y k(x,y) u(y) (2π/G)ⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub spec: GridSpec,
    pub eps_grid: EpsilonGrid,
    pub mats: Vec<Vec<Complex64>>,
}

impl KernelMatrix {
    pub fn dim(&self) -> usize {
        self.spec.size()
    }

    pub fn entry(&self, e: usize, row: usize, col: usize) -> Complex64 {
        self.mats[e][row * self.dim() + col]
    }

    pub fn apply_slice(&self, e: usize, u: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        let w = self.spec.weight();
        (0..n)
            .map(|r| self.mats[e][r * n..(r + 1) * n].iter().zip(u).map(|(k, v)| k * v).sum::<Complex64>() * w)
            .collect()
    }

    pub fn zeros(spec: GridSpec, eps_grid: EpsilonGrid) -> Self {
        Self { spec, eps_grid, mats: vec![vec![Complex64::new(0.0, 0.0); spec.size().pow(2)]; eps_grid.len()] }
    }

    pub fn from_fn(spec: GridSpec, eps_grid: EpsilonGrid, f: impl Fn(&[f64], &[f64], f64) -> Complex64) -> Result<Self> {
        check_kernel_size(&spec)?;
        let n = spec.size();
        let pts: Vec<Vec<f64>> = (0..n).map(|i| spec.point(i)).collect();
        let mats = eps_grid
            .js()
            .map(|j| {
                let e = eps_grid.eps(j);
                let mut m = Vec::with_capacity(n * n);
                for x in &pts {
                    for y in &pts {
                        m.push(f(x, y, e));
                    }
                }
                m
            })
            .collect();
        Ok(Self { spec, eps_grid, mats })
    }

    pub fn max_abs(&self) -> f64 {
        self.mats.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn check_kernel_size(spec: &GridSpec) -> Result<()> {
    if spec.size() > 1024 || (spec.n == 2 && spec.g > 64) {
        return Err(Error::TooLarge(format!("{}-point grid; kernels need at most 1024 points (n=2: G <= 64)", spec.size())));
    }
    Ok(())
}

pub fn kernel_matrix(a: &SymbolFamily, spec: GridSpec, grid: EpsilonGrid) -> Result<KernelMatrix> {
    check_kernel_size(&spec)?;
    let plan = Plan::new(&a.expr);
    check_budget(&plan, &spec, spec.size() * grid.len())?;
    let sp = Spectral::new(spec);
    let n = spec.size();
    let w = spec.weight();
    let mut mats = Vec::with_capacity(grid.len());
    for j in grid.js() {
        let eps = grid.eps(j);
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        let mut unit = vec![Complex64::new(0.0, 0.0); n];
        for col in 0..n {
            unit[col] = Complex64::new(1.0, 0.0);
            let out = apply_slice(&plan, &sp, &spec, &unit, eps, 0.0)?;
            unit[col] = Complex64::new(0.0, 0.0);
            for (row, v) in out.into_iter().enumerate() {
                m[row * n + col] = v / w;
            }
        }
        mats.push(m);
    }
    Ok(KernelMatrix { spec, eps_grid: grid, mats })
}

/// `(kernel·χ, kernel·(1-χ))`; the two parts add up to the full kernel.
pub fn split_proper_smoothing(
    a: &SymbolFamily,
    chi: &ProperCutoff,
    spec: GridSpec,
    grid: EpsilonGrid,
) -> Result<(KernelMatrix, KernelMatrix)> {
    let k = kernel_matrix(a, spec, grid)?;
    Ok(split_kernel(&k, chi))
}

pub fn split_kernel(k: &KernelMatrix, chi: &ProperCutoff) -> (KernelMatrix, KernelMatrix) {
    let n = k.dim();
    let pts: Vec<Vec<f64>> = (0..n).map(|i| k.spec.point(i)).collect();
    let mut chis = Vec::with_capacity(n * n);
    for x in &pts {
        for y in &pts {
            chis.push(chi.eval(x, y));
        }
    }
    let mut proper = k.clone();
    let mut smooth = k.clone();
    for (pm, sm) in proper.mats.iter_mut().zip(smooth.mats.iter_mut()) {
        for ((p, s), c) in pm.iter_mut().zip(sm.iter_mut()).zip(&chis) {
            let v = *p;
            *p = v * c;
            *s = v - *p;
        }
    }
    (proper, smooth)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelCertificate {
    pub base_slope: f64,
    /// `(p, q, slope)` for finite differences `Δ_x^p Δ_y^q`.
    pub slopes: Vec<(usize, usize, f64)>,
    pub pass: bool,
}

/// All-derivative moderateness of a kernel with one ε-exponent, from periodic
/// finite differences in `x` (rows) and `y` (columns), `p + q ≤ 4`.
pub fn kernel_certificate(k: &KernelMatrix) -> Result<KernelCertificate> {
    let n = k.dim();
    let spec = k.spec;
    let th = NetThresholds::default();
    let shift = |idx: usize, axis_step: usize| -> usize {
        if spec.n == 1 {
            (idx + 1) % n
        } else {
            let [a, b] = spec.unflatten(idx);
            if axis_step == 0 {
                ((a + 1) % spec.g) * spec.g + b
            } else {
                a * spec.g + (b + 1) % spec.g
            }
        }
    };
    let dx = spec.dx();
    let mut slopes = Vec::new();
    let mut base = 0.0;
    let mut pass = true;
    for p in 0..=4usize {
        for q in 0..=(4 - p) {
            let raw: Vec<f64> = k
                .mats
                .iter()
                .map(|m| {
                    let mut cur = m.clone();
                    for _ in 0..p {
                        let prev = cur.clone();
                        for r in 0..n {
                            let r2 = shift(r, 0);
                            for c in 0..n {
                                cur[r * n + c] = (prev[r2 * n + c] - prev[r * n + c]) / dx;
                            }
                        }
                    }
                    for _ in 0..q {
                        let prev = cur.clone();
                        for r in 0..n {
                            for c in 0..n {
                                cur[r * n + c] = (prev[r * n + shift(c, 0)] - prev[r * n + c]) / dx;
                            }
                        }
                    }
                    cur.iter().map(|v| v.norm()).fold(0.0, f64::max)
                })
                .collect();
            let net = NetSample::from_values(k.eps_grid, &raw)?;
            let fit = fit_growth_exponent(&net, th.tail_fraction)?;
            let class = classify_scale(&net, &th)?;
            if p == 0 && q == 0 {
                base = fit.slope;
            }
            let slope_ok = fit.all_below_floor || fit.slope <= base.max(0.0) + 0.75;
            if !class.tag.is_moderate() || !slope_ok {
                pass = false;
            }
            slopes.push((p, q, fit.slope));
        }
    }
    Ok(KernelCertificate { base_slope: base, slopes, pass })
}

/// `Ru(x) = Σ_y k(x,y)u(y)(2π/G)ⁿ` per ε, after checking the smoothing certificate.
pub fn apply_regular_kernel(k: &KernelMatrix, u: &GridFunctionFamily) -> Result<GridFunctionFamily> {
    if k.spec != u.spec || k.eps_grid != u.eps_grid {
        return Err(Error::InvalidSpec("kernel and family live on different grids".into()));
    }
    let cert = kernel_certificate(k)?;
    if !cert.pass {
        return Err(Error::NoCertificate(format!("derivative slopes {:?}", cert.slopes)));
    }
    u.map_slices(&format!("R({})", u.label), |i, d| Ok(k.apply_slice(i, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn one_d(g: usize) -> GridSpec {
        GridSpec::new(1, g).unwrap()
    }

    fn grid6() -> EpsilonGrid {
        EpsilonGrid::new(1, 6).unwrap()
    }

    #[test]
    fn separation_shapes() {
        let e = (Expr::one() + Expr::real(0.5) * Expr::sin(&Expr::x(0))) * Expr::xi(0);
        assert_eq!(separate(&e).unwrap().len(), 1);
        let e = Expr::sin(&Expr::x(0)) * Expr::xi(0) + Expr::pow(&Expr::xi(0), 2.0);
        assert_eq!(separate(&e).unwrap().len(), 2);
        let e = Expr::exp(&(Expr::x(0) * Expr::xi(0)));
        assert!(separate(&e).is_none());
    }

    #[test]
    fn identity_and_multiplier() {
        let spec = one_d(64);
        let u = GridFunctionFamily::from_fn(spec, grid6(), "wave", |x, _| Complex64::from_polar(1.0, x[0])).unwrap();
        let id = quantize_kn(&SymbolFamily::new("1", Expr::one(), 0.0, 1), &u).unwrap();
        for (a, b) in id.data.iter().flatten().zip(u.data.iter().flatten()) {
            assert!((a - b).norm() < 1e-13);
        }
        let d = quantize_kn(&SymbolFamily::new("xi", Expr::xi(0), 1.0, 1), &u).unwrap();
        for (a, b) in d.data[0].iter().zip(&u.data[0]) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn direct_matches_separable() {
        let spec = one_d(64);
        let u = GridFunctionFamily::from_fn(spec, grid6(), "u", |x, e| Complex64::new((2.0 * x[0]).cos() + e, x[0].sin())).unwrap();
        let a = Expr::sin(&Expr::x(0)) * Expr::xi(0) + Expr::eps() * Expr::pow(&Expr::xi(0), 2.0);
        let sep = quantize_kn_at(&a, &u, 0.0).unwrap();
        let plan = Plan::Direct(a.clone());
        let sp = Spectral::new(spec);
        for (i, j) in u.eps_grid.js().enumerate() {
            let direct = apply_slice(&plan, &sp, &spec, &u.data[i], u.eps_grid.eps(j), 0.0).unwrap();
            for (p, q) in direct.iter().zip(&sep.data[i]) {
                assert!((p - q).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn direct_budget_enforced() {
        let spec = GridSpec::new(2, 256).unwrap();
        let u = GridFunctionFamily::from_fn(spec, grid6(), "u", |_, _| Complex64::new(1.0, 0.0)).unwrap();
        let a = SymbolFamily::new("nonsep", Expr::exp(&(Expr::x(0) * Expr::xi(0))), 0.0, 2);
        assert!(matches!(quantize_kn(&a, &u), Err(Error::SeparabilityFallbackTooLarge { .. })));
    }

    #[test]
    fn kernel_of_identity_and_split() {
        let spec = one_d(64);
        let k = kernel_matrix(&SymbolFamily::new("1", Expr::one(), 0.0, 1), spec, grid6()).unwrap();
        let w = spec.weight();
        for r in 0..64 {
            for c in 0..64 {
                let expect = if r == c { 1.0 / w } else { 0.0 };
                assert!((k.entry(0, r, c).re - expect).abs() < 1e-9);
            }
        }
        let chi = crate::symbols::build_proper_cutoff(std::f64::consts::PI / 4.0, 1);
        let (p, s) = split_kernel(&k, &chi);
        assert!(s.max_abs() < 1e-9);
        for ((a, b), c) in p.mats[0].iter().zip(&s.mats[0]).zip(&k.mats[0]) {
            assert!((a + b - c).norm() < 1e-12);
        }
    }

    #[test]
    fn regular_kernel_zero_and_certificate() {
        let spec = one_d(64);
        let g = grid6();
        let u = GridFunctionFamily::from_fn(spec, g, "u", |x, _| Complex64::new(x[0].cos(), 0.0)).unwrap();
        let z = KernelMatrix::zeros(spec, g);
        let out = apply_regular_kernel(&z, &u).unwrap();
        assert!(out.data.iter().flatten().all(|v| v.norm() == 0.0));
        let sharp = KernelMatrix::from_fn(spec, g, |x, y, e| {
            let d = (x[0] - y[0] + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            let s = 4.0 * e;
            Complex64::new((-d * d / (2.0 * s * s)).exp() / s, 0.0)
        })
        .unwrap();
        assert!(matches!(apply_regular_kernel(&sharp, &u), Err(Error::NoCertificate(_))));
    }
}
