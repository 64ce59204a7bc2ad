//! Asymptotic expansions: composition, adjoint, transpose, amplitude reduction,
//! Borel summation and the elliptic parametrix.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr, Point, Var};
use crate::grid::{GridSpec, Spectral};
use crate::nets::{linear_fit, EpsilonGrid, NetSample, FLOOR};
use crate::quantize::{apply_slice, Plan};
use crate::symbols::{
    bracket, default_radii, microellipticity_report, order_from_maxima, CatalogEntry, ConeGrid, SamplingBox, SymbolFamily,
    DERIVATIVE_CAP,
};

/// Largest Borel cut radius tried before giving up.
pub const MAX_CUT_RADIUS: f64 = 1073741824.0;
pub const PROBE_SHELLS: i32 = 40;
/// Residual values below this fraction of the summed term magnitudes count as exact cancellation.
pub const CANCELLATION: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Expansion {
    pub terms: Vec<(f64, SymbolFamily)>,
    pub common_witness: Option<NetSample>,
    pub refined: bool,
}

#[derive(Serialize)]
struct ExpansionJson<'a> {
    refined: bool,
    terms: Vec<CatalogEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    common_witness: Option<&'a [f64]>,
}

impl Expansion {
    pub fn new(terms: Vec<(f64, SymbolFamily)>) -> Result<Self> {
        for w in terms.windows(2) {
            if w[1].0 >= w[0].0 {
                return Err(Error::Validation { path: "terms".into(), message: "orders must strictly decrease".into() });
            }
        }
        Ok(Self { terms, common_witness: None, refined: false })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn orders(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.0).collect()
    }

    pub fn exprs(&self) -> Vec<Expr> {
        self.terms.iter().map(|t| t.1.expr.clone()).collect()
    }

    /// Sum of the first `r` terms as one symbol of the leading order.
    pub fn partial_sum(&self, r: usize, dim: usize) -> SymbolFamily {
        let expr = Expr::sum(self.terms.iter().take(r).map(|t| t.1.expr.clone()));
        let order = self.terms.first().map_or(f64::NEG_INFINITY, |t| t.0);
        SymbolFamily::new(format!("sum<{r}"), expr, order, dim)
    }

    pub fn to_json(&self) -> String {
        let j = ExpansionJson {
            refined: self.refined,
            terms: self.terms.iter().map(|(_, s)| s.to_entry()).collect(),
            common_witness: self.common_witness.as_ref().map(|w| w.values.as_slice()),
        };
        serde_json::to_string_pretty(&j).expect("expansion serializes")
    }
}

/// All multi-indices of total order `k` in `dim` variables.
fn gammas(dim: usize, k: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        vec![vec![k]]
    } else {
        (0..=k).rev().map(|a| vec![a, k - a]).collect()
    }
}

fn factorial(g: &[usize]) -> f64 {
    g.iter().map(|&k| (1..=k).map(|v| v as f64).product::<f64>()).product()
}

fn d_many(e: &Expr, g: &[usize], var: fn(u8) -> Var) -> Expr {
    let vars: Vec<Var> = g.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(var(i as u8), k)).collect();
    e.diff_many(&vars)
}

/// `(-i)^k`
fn minus_i_pow(k: usize) -> Expr {
    match k % 4 {
        0 => Expr::one(),
        1 => Expr::complex(0.0, -1.0),
        2 => Expr::real(-1.0),
        _ => Expr::complex(0.0, 1.0),
    }
}

fn check_cap(r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::Validation { path: "r".into(), message: "truncation must be at least 1".into() });
    }
    if 2 * (r - 1) > DERIVATIVE_CAP {
        return Err(Error::CapExceeded { order: 2 * (r - 1), cap: DERIVATIVE_CAP });
    }
    Ok(())
}

/// Groups `term(γ)` over `|γ| = k` for `k < r`, dropping groups that vanish identically.
fn grouped(
    dim: usize,
    lead: f64,
    r: usize,
    label: &str,
    term: impl Fn(&[usize]) -> Expr,
) -> Result<Expansion> {
    check_cap(r)?;
    let mut terms = Vec::new();
    for k in 0..r {
        let e = Expr::sum(gammas(dim, k).iter().map(|g| term(g)));
        if !e.is_zero() {
            let order = lead - k as f64;
            terms.push((order, SymbolFamily::new(format!("{label}[{k}]"), e, order, dim)));
        }
    }
    Expansion::new(terms)
}

fn witness_of(a: &SymbolFamily, b: Option<&SymbolFamily>) -> Option<NetSample> {
    match (&a.scale_witness, b.and_then(|b| b.scale_witness.as_ref())) {
        (Some(x), Some(y)) => x.map_pair(y, f64::max).ok(),
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    }
}

/// `a♯b ∼ Σ_γ (1/γ!) ∂ξ^γ a · D_x^γ b`, `|γ| < r`.
pub fn expand_compose(a: &SymbolFamily, b: &SymbolFamily, r: usize) -> Result<Expansion> {
    if a.dim != b.dim {
        return Err(Error::Validation { path: "dim".into(), message: "dimensions differ".into() });
    }
    let mut e = grouped(a.dim, a.order + b.order, r, &format!("{}#{}", a.label, b.label), |g| {
        let da = d_many(&a.expr, g, Var::Xi);
        if da.is_zero() {
            return Expr::zero();
        }
        let db = d_many(&b.expr, g, Var::X);
        let k: usize = g.iter().sum();
        Expr::real(1.0 / factorial(g)) * minus_i_pow(k) * da * db
    })?;
    e.common_witness = witness_of(a, Some(b));
    Ok(e)
}

/// `a* ∼ Σ_γ (1/γ!) ∂ξ^γ D_x^γ ā`.
pub fn expand_adjoint(a: &SymbolFamily, r: usize) -> Result<Expansion> {
    let abar = a.expr.conj();
    let mut e = grouped(a.dim, a.order, r, &format!("{}*", a.label), |g| {
        let k: usize = g.iter().sum();
        Expr::real(1.0 / factorial(g)) * minus_i_pow(k) * d_many(&d_many(&abar, g, Var::X), g, Var::Xi)
    })?;
    e.common_witness = witness_of(a, None);
    Ok(e)
}

fn reflect_xi(e: &Expr, dim: usize) -> Expr {
    let map: Vec<(Var, Expr)> = (0..dim as u8).map(|i| (Var::Xi(i), -Expr::xi(i))).collect();
    e.subst_many(&map)
}

/// `ᵗa ∼ Σ_γ (1/γ!) ∂ξ^γ D_x^γ [a(x,-ξ)]`, the ξ-derivatives taken after reflection.
pub fn expand_transpose(a: &SymbolFamily, r: usize) -> Result<Expansion> {
    let refl = reflect_xi(&a.expr, a.dim);
    let mut e = grouped(a.dim, a.order, r, &format!("{}'", a.label), |g| {
        let k: usize = g.iter().sum();
        Expr::real(1.0 / factorial(g)) * minus_i_pow(k) * d_many(&d_many(&refl, g, Var::X), g, Var::Xi)
    })?;
    e.common_witness = witness_of(a, None);
    Ok(e)
}

/// `σ ∼ Σ_γ (1/γ!) ∂ξ^γ D_y^γ b(x,y,ξ)|_{y=x}` for an amplitude `b` of the given order.
pub fn reduce_amplitude(b: &Expr, order: f64, dim: usize, r: usize) -> Result<Expansion> {
    let diag: Vec<(Var, Expr)> = (0..dim as u8).map(|i| (Var::Y(i), Expr::x(i))).collect();
    grouped(dim, order, r, "amp", |g| {
        let k: usize = g.iter().sum();
        let d = d_many(&d_many(b, g, Var::Y), g, Var::Xi);
        Expr::real(1.0 / factorial(g)) * minus_i_pow(k) * d.subst_many(&diag)
    })
}

/// `χ(ξ/t)`: zero for `|ξ| ≤ t/2`, one for `|ξ| ≥ t`.
pub fn radial_cut(t: f64, dim: usize) -> Expr {
    let r = Expr::pow(&Expr::sum((0..dim as u8).map(|i| Expr::pow(&Expr::xi(i), 2.0))), 0.5);
    Expr::smoothstep(&(Expr::real(2.0 / t) * r - Expr::one()))
}

/// Excision vanishing for `|ξ| ≤ R` and equal to one for `|ξ| ≥ 2R`.
pub fn excision(radius: f64, dim: usize) -> Expr {
    let r = Expr::pow(&Expr::sum((0..dim as u8).map(|i| Expr::pow(&Expr::xi(i), 2.0))), 0.5);
    Expr::smoothstep(&((r - Expr::real(radius)) * Expr::real(1.0 / radius)))
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderCheck {
    pub r: usize,
    pub fitted_order: f64,
    pub target: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct BorelSumResult {
    pub symbol: SymbolFamily,
    pub cut_radii: Vec<f64>,
    pub terms_used: usize,
    pub remainder_checks: Vec<RemainderCheck>,
}

fn probe_dirs(dim: usize) -> Vec<Vec<f64>> {
    let cones = ConeGrid::new(dim, 16, 1.0);
    (0..cones.count()).map(|s| cones.center(s)).collect()
}

/// Per ε, per radius: max over `points × dirs` of `|e|`.
fn maxima_on(e: &Expr, points: &[Vec<f64>], dirs: &[Vec<f64>], radii: &[f64], grid: EpsilonGrid) -> Result<Vec<Vec<f64>>> {
    let c = Compiled::new(e);
    let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
    let mut out = Vec::with_capacity(grid.len());
    for j in grid.js() {
        let eps = grid.eps(j);
        let mut row = Vec::with_capacity(radii.len());
        for &r in radii {
            let mut m = 0.0f64;
            for x in points {
                for d in dirs {
                    let xi: Vec<f64> = d.iter().map(|v| v * r).collect();
                    let v = c.eval_into(&Point::new(x, &xi, eps), &mut buf).norm();
                    if !v.is_finite() {
                        return Err(Error::Domain(format!("{e} at x={x:?}, xi={xi:?}")));
                    }
                    m = m.max(v);
                }
            }
            row.push(m);
        }
        out.push(row);
    }
    Ok(out)
}

/// Fitted order of `residual` over the probe boxes, treating pointwise values below
/// `1e-12·Σ|reference|` as exact cancellation.
pub fn residual_order(
    residual: &Expr,
    reference: &[Expr],
    dim: usize,
    boxes: &[SamplingBox],
    grid: EpsilonGrid,
    min_radius: f64,
) -> Result<f64> {
    let radii: Vec<f64> = default_radii().into_iter().filter(|&r| r >= min_radius).collect();
    if radii.len() < 3 {
        return Err(Error::Validation { path: "min_radius".into(), message: "too few shells above the radius".into() });
    }
    let dirs = probe_dirs(dim);
    let c = Compiled::new(residual);
    let refs: Vec<Compiled> = reference.iter().map(Compiled::new).collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
    let mut rbufs: Vec<Vec<Complex64>> = refs.iter().map(|r| vec![Complex64::new(0.0, 0.0); r.len()]).collect();
    let mut worst = -10.0f64;
    for b in boxes {
        let pts = b.points();
        let mut maxima = Vec::with_capacity(grid.len());
        for j in grid.js() {
            let eps = grid.eps(j);
            let mut row = Vec::with_capacity(radii.len());
            for &r in &radii {
                let mut m = 0.0f64;
                for x in &pts {
                    for d in &dirs {
                        let xi: Vec<f64> = d.iter().map(|v| v * r).collect();
                        let p = Point::new(x, &xi, eps);
                        let v = c.eval_into(&p, &mut buf).norm();
                        if !v.is_finite() {
                            return Err(Error::Domain(format!("residual at x={x:?}, xi={xi:?}")));
                        }
                        let scale: f64 = refs.iter().zip(rbufs.iter_mut()).map(|(rc, rb)| rc.eval_into(&p, rb).norm()).sum();
                        if v > CANCELLATION * scale {
                            m = m.max(v);
                        }
                    }
                }
                row.push(m);
            }
            maxima.push(row);
        }
        worst = worst.max(order_from_maxima(&maxima, &radii, grid)?);
    }
    Ok(worst)
}

/// Borel-type summation with doubling radii `t_j`.
pub fn borel_sum(e: &Expansion, probe_boxes: &[SamplingBox], grid: EpsilonGrid) -> Result<BorelSumResult> {
    if e.len() < 2 {
        return Err(Error::Validation { path: "terms".into(), message: "Borel summation needs at least two terms".into() });
    }
    let dim = e.terms[0].1.dim;
    let dirs = probe_dirs(dim);
    let shells: Vec<f64> = (0..=PROBE_SHELLS).map(|i| f64::from(i).exp2()).collect();
    let points: Vec<Vec<f64>> = probe_boxes.iter().flat_map(|b| b.points()).collect();
    let witness: Vec<f64> = match &e.common_witness {
        Some(w) => w.values.clone(),
        None => vec![0.0; grid.len()],
    };
    let mut cut_radii = vec![1.0];
    for j in 1..e.len() {
        let (_, term) = &e.terms[j];
        let prev_order = e.terms[j - 1].0;
        let maxima = if term.expr.is_zero() {
            vec![vec![0.0; shells.len()]; grid.len()]
        } else {
            maxima_on(&term.expr, &points, &dirs, &shells, grid)?
        };
        let weighted: Vec<Vec<f64>> = maxima
            .iter()
            .map(|row| row.iter().zip(&shells).map(|(v, &r)| v * bracket(&[r]).powf(-prev_order)).collect())
            .collect();
        let bound_ok = |t: f64| {
            weighted.iter().zip(&witness).all(|(row, w)| {
                let sup = row.iter().zip(&shells).filter(|(_, &r)| r >= t / 2.0).map(|(v, _)| *v).fold(0.0, f64::max);
                sup <= (-(j as f64)).exp2() * (1.0 + w)
            })
        };
        let mut t = 2.0 * cut_radii[j - 1];
        while !bound_ok(t) {
            t *= 2.0;
            if t > MAX_CUT_RADIUS {
                return Err(Error::NoAdmissibleRadius { term: j });
            }
        }
        cut_radii.push(t);
    }
    let expr = Expr::sum(e.terms.iter().zip(&cut_radii).map(|((_, s), &t)| radial_cut(t, dim) * &s.expr));
    let mut symbol = SymbolFamily::new(format!("borel({})", e.terms[0].1.label), expr, e.terms[0].0, dim);
    symbol.scale_witness = e.common_witness.clone();
    let mut checks = Vec::new();
    for r in 1..=2usize {
        if r >= e.len() {
            break;
        }
        let partial = e.partial_sum(r, dim).expr;
        let residual = &symbol.expr - &partial;
        let fitted = residual_order(&residual, &[symbol.expr.clone(), partial], dim, probe_boxes, grid, 1.0)?;
        let target = e.terms[r].0;
        checks.push(RemainderCheck { r, fitted_order: fitted, target, pass: fitted <= target + 0.25 });
    }
    Ok(BorelSumResult { symbol, cut_radii, terms_used: e.len(), remainder_checks: checks })
}

#[derive(Debug, Clone)]
pub struct ParametrixResult {
    pub expansion: Expansion,
    pub truncated_symbol: SymbolFamily,
    pub residual_order_estimate: f64,
    pub excision_radius: f64,
    pub cut_radii: Vec<f64>,
}

/// Elliptic parametrix `p ∼ Σ b_k` with `b₀ = χ_R/a`.
pub fn parametrix(
    a: &SymbolFamily,
    r: usize,
    probe_boxes: &[SamplingBox],
    cones: &ConeGrid,
    grid: EpsilonGrid,
) -> Result<ParametrixResult> {
    check_cap(r)?;
    let report = microellipticity_report(a, probe_boxes, cones, grid, &default_radii())?;
    if !report.all_slow_scale_elliptic() {
        let bad: Vec<String> = report
            .cells
            .iter()
            .filter(|c| c.verdict != crate::symbols::EllipticVerdict::SlowScaleElliptic)
            .map(|c| format!("({},{}):{}", c.box_id, c.sector, c.verdict.as_str()))
            .collect();
        let why = if report.symbol_slow_scale { bad.join(" ") } else { "symbol is not slow scale".into() };
        return Err(Error::NotElliptic(why));
    }
    let dim = a.dim;
    let radius = report.excision_radius();
    let b0 = if radius > 0.0 { excision(radius, dim) / &a.expr } else { Expr::one() / &a.expr };
    let mut bs: Vec<Expr> = vec![b0.clone()];
    for k in 1..r {
        let mut acc = Vec::new();
        for (j, bj) in bs.iter().enumerate() {
            for g in gammas(dim, k - j) {
                let da = d_many(&a.expr, &g, Var::Xi);
                if da.is_zero() {
                    continue;
                }
                let db = d_many(bj, &g, Var::X);
                acc.push(Expr::real(1.0 / factorial(&g)) * minus_i_pow(k - j) * da * db);
            }
        }
        bs.push(-(&b0 * Expr::sum(acc)));
    }
    let terms: Vec<(f64, SymbolFamily)> = bs
        .into_iter()
        .enumerate()
        .filter(|(_, e)| !e.is_zero())
        .map(|(k, e)| {
            let order = -a.order - k as f64;
            (order, SymbolFamily::new(format!("p[{k}]"), e, order, dim))
        })
        .collect();
    let mut expansion = Expansion::new(terms)?;
    expansion.common_witness = a.scale_witness.clone();
    let (truncated_symbol, cut_radii) = if expansion.len() == 1 {
        let mut s = expansion.terms[0].1.clone();
        s.label = format!("parametrix({})", a.label);
        (s, vec![])
    } else {
        let b = borel_sum(&expansion, probe_boxes, grid)?;
        let mut s = b.symbol;
        s.label = format!("parametrix({})", a.label);
        (s, b.cut_radii)
    };
    let residual_order_estimate = parametrix_residual_order(a, &truncated_symbol, r, probe_boxes, grid, 2.0 * radius)?;
    Ok(ParametrixResult { expansion, truncated_symbol, residual_order_estimate, excision_radius: radius, cut_radii })
}

/// Fitted order of `a♯p − 1` above `min_radius`, with `a♯p` expanded two groups past `r`.
pub fn parametrix_residual_order(
    a: &SymbolFamily,
    p: &SymbolFamily,
    r: usize,
    boxes: &[SamplingBox],
    grid: EpsilonGrid,
    min_radius: f64,
) -> Result<f64> {
    let e = expand_compose(a, p, r + 2)?;
    let mut reference = e.exprs();
    let residual = Expr::sum(reference.clone()) - Expr::one();
    reference.push(Expr::one());
    residual_order(&residual, &reference, a.dim, boxes, grid, min_radius.max(1.0))
}

/// Symbol-level remainder of the composition: the two expansion groups past `r`.
pub fn expansion_residual_order(
    a: &SymbolFamily,
    b: &SymbolFamily,
    r: usize,
    boxes: &[SamplingBox],
    grid: EpsilonGrid,
) -> Result<f64> {
    let full = expand_compose(a, b, r + 2)?;
    let lead = a.order + b.order;
    let tail: Vec<Expr> = full.terms.iter().filter(|(m, _)| *m <= lead - r as f64).map(|t| t.1.expr.clone()).collect();
    if tail.is_empty() {
        return Ok(-10.0);
    }
    let residual = Expr::sum(tail);
    residual_order(&residual, &full.exprs(), a.dim, boxes, grid, 1.0)
}

/// Composition residual measured on the grid, one row per shell `|k| = 2^i`.
#[derive(Debug, Clone, Serialize)]
pub struct GridResidual {
    pub r: usize,
    pub shells: Vec<f64>,
    pub maxima: Vec<f64>,
    pub fitted_order: f64,
}

/// Residual symbol `e^{-ix·k}[Op(a)Op(b) − Op(Σ_{|γ|<r})]e^{ix·k}` along `k = 2^i e₁`,
/// for `4 ≤ 2^i ≤ G/8`; the order is the log-log slope of its x-maximum.
pub fn grid_residual_order(a: &SymbolFamily, b: &SymbolFamily, r: usize, spec: GridSpec, eps: f64) -> Result<GridResidual> {
    let sum = expand_compose(a, b, r)?.partial_sum(r, a.dim).expr;
    let (pa, pb, ps) = (Plan::new(&a.expr), Plan::new(&b.expr), Plan::new(&sum));
    for p in [&pa, &pb, &ps] {
        if !p.is_separable() && spec.size() > 1024 {
            return Err(Error::SeparabilityFallbackTooLarge { needed: (spec.size() as u128).pow(2) });
        }
    }
    let sp = Spectral::new(spec);
    let mut shells = Vec::new();
    let mut maxima = Vec::new();
    let mut i = 2;
    while (1usize << i) <= spec.g / 8 {
        let k = (1usize << i) as f64;
        let u: Vec<Complex64> = (0..spec.size()).map(|q| Complex64::from_polar(1.0, k * spec.point(q)[0])).collect();
        let bu = apply_slice(&pb, &sp, &spec, &u, eps, 0.0)?;
        let abu = apply_slice(&pa, &sp, &spec, &bu, eps, 0.0)?;
        let su = apply_slice(&ps, &sp, &spec, &u, eps, 0.0)?;
        let m = abu.iter().zip(&su).zip(&u).map(|((p, q), w)| ((p - q) * w.conj()).norm()).fold(0.0, f64::max);
        shells.push(k);
        maxima.push(m);
        i += 1;
    }
    let xs: Vec<f64> = shells.iter().map(|v| v.log2()).collect();
    let ys: Vec<f64> = maxima.iter().map(|v| v.max(FLOOR).log2()).collect();
    let fitted_order = if maxima.iter().all(|&v| v < 1e-13) { f64::NEG_INFINITY } else { linear_fit(&xs, &ys).0 };
    Ok(GridResidual { r, shells, maxima, fitted_order })
}

pub fn residuals_csv(rows: &[GridResidual]) -> String {
    let mut out = String::from("r,fitted_order\n");
    for g in rows {
        out.push_str(&format!("{},{}\n", g.r, crate::symbols::fmt_f(g.fitted_order)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s1(label: &str, src: &str, order: f64) -> SymbolFamily {
        SymbolFamily::parse(label, src, order, 1).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn at(e: &Expr, x: f64, xi: f64) -> Complex64 {
        e.eval(&Point::new(&[x], &[xi], 0.5))
    }

    #[test]
    fn compose_xi_x() {
        let a = s1("a", "(var xi 0)", 1.0);
        let b = s1("b", "(var x 0)", 0.0);
        let e = expand_compose(&a, &b, 2).unwrap();
        assert_eq!(e.orders(), vec![1.0, 0.0]);
        assert!((at(&e.terms[0].1.expr, 0.7, 3.0) - c(2.1, 0.0)).norm() < 1e-15);
        assert_eq!(at(&e.terms[1].1.expr, 0.7, 3.0), c(0.0, -1.0));
    }

    #[test]
    fn compose_identity_left() {
        let b = s1("b", "(sin (var x 0))", 0.0);
        let e = expand_compose(&s1("1", "(const 1 0)", 0.0), &b, 4).unwrap();
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn compose_xi2_sin() {
        let a = s1("a", "(pow (var xi 0) 2)", 2.0);
        let b = s1("b", "(sin (var x 0))", 0.0);
        let e = expand_compose(&a, &b, 3).unwrap();
        assert_eq!(e.orders(), vec![2.0, 1.0, 0.0]);
        let (x, k) = (0.4f64, 1.7f64);
        assert!((at(&e.terms[1].1.expr, x, k) - c(0.0, -2.0 * k * x.cos())).norm() < 1e-14);
        assert!((at(&e.terms[2].1.expr, x, k) - c(x.sin(), 0.0)).norm() < 1e-14);
    }

    #[test]
    fn adjoint_and_transpose_examples() {
        let a = s1("a", "(mul (var x 0) (var xi 0))", 1.0);
        let adj = expand_adjoint(&a, 2).unwrap();
        assert_eq!(at(&adj.terms[1].1.expr, 0.3, 2.0), c(0.0, -1.0));
        let tr = expand_transpose(&a, 2).unwrap();
        assert_eq!(at(&tr.terms[0].1.expr, 0.5, 2.0), c(-1.0, 0.0));
        assert_eq!(at(&tr.terms[1].1.expr, 0.5, 2.0), c(0.0, 1.0));
        let ix = s1("ix", "(mul (const 0 1) (var x 0))", 0.0);
        let adj = expand_adjoint(&ix, 2).unwrap();
        assert_eq!(adj.len(), 1);
        assert_eq!(at(&adj.terms[0].1.expr, 2.0, 0.0), c(0.0, -2.0));
        let xi = s1("xi", "(var xi 0)", 1.0);
        let tr = expand_transpose(&xi, 2).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(at(&tr.terms[0].1.expr, 0.0, 3.0), c(-3.0, 0.0));
    }

    #[test]
    fn amplitude_reduction() {
        let b = Expr::y(0) * Expr::xi(0);
        let e = reduce_amplitude(&b, 1.0, 1, 2).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(at(&e.terms[0].1.expr, 0.5, 2.0), c(1.0, 0.0));
        assert_eq!(at(&e.terms[1].1.expr, 0.5, 2.0), c(0.0, -1.0));
        let f = Expr::sin(&Expr::y(0));
        let e = reduce_amplitude(&f, 0.0, 1, 2).unwrap();
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn cap_enforced() {
        let a = s1("a", "(var xi 0)", 1.0);
        assert!(matches!(expand_adjoint(&a, 9), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn borel_two_terms() {
        let e = Expansion::new(vec![(1.0, s1("xi", "(var xi 0)", 1.0)), (0.0, s1("1", "(const 1 0)", 0.0))]).unwrap();
        let grid = EpsilonGrid::new(1, 6).unwrap();
        let boxes = [SamplingBox::symmetric(1, 0.5)];
        let b = borel_sum(&e, &boxes, grid).unwrap();
        assert_eq!(b.cut_radii[0], 1.0);
        assert!(b.cut_radii[1] >= 2.0);
        let t1 = b.cut_radii[1];
        let v = b.symbol.expr.eval(&Point::new(&[0.0], &[t1 + 3.0], 0.5));
        assert!((v - c(t1 + 4.0, 0.0)).norm() < 1e-12);
        assert!(b.remainder_checks.iter().all(|r| r.pass), "{:?}", b.remainder_checks);
    }

    #[test]
    fn parametrix_constant_coefficient() {
        let a = s1("a", "(add (const 1 0) (pow (var xi 0) 2))", 2.0);
        let grid = EpsilonGrid::new(1, 6).unwrap();
        let cones = ConeGrid::new(1, 2, 1.0);
        let p = parametrix(&a, 3, &[SamplingBox::symmetric(1, 0.5)], &cones, grid).unwrap();
        assert_eq!(p.expansion.len(), 1);
        assert!(p.residual_order_estimate <= -9.9);
        let v = p.truncated_symbol.expr.eval(&Point::new(&[0.0], &[3.0], 0.5));
        assert!((v - c(0.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn grid_residual_terminates() {
        let spec = GridSpec::new(1, 128).unwrap();
        let a = s1("a", "(pow (var xi 0) 2)", 2.0);
        let g = grid_residual_order(&a, &s1("b", "(sin (var x 0))", 0.0), 3, spec, 1.0).unwrap();
        assert!(g.maxima.iter().all(|&m| m < 1e-9), "{:?}", g.maxima);
    }
}
