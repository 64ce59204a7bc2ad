//! Symbol families `a_ε(x, ξ)`: seminorm and order estimation, slow-scale
//! micro-ellipticity, microsupport and cutoff construction.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Compiled, Expr, Point, Var};
use crate::nets::{
    classify_scale, fit_growth_exponent, EpsilonGrid, NetSample, NetThresholds, ScaleTag, FLOOR,
};

/// Default cap on `|α| + |β|` for symbolic derivatives.
pub const DERIVATIVE_CAP: usize = 12;

#[derive(Debug, Clone)]
pub struct SymbolFamily {
    pub label: String,
    pub expr: Expr,
    pub order: f64,
    pub dim: usize,
    pub scale_witness: Option<NetSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub label: String,
    pub order: f64,
    pub n: usize,
    pub expr: String,
}

impl SymbolFamily {
    pub fn new(label: impl Into<String>, expr: Expr, order: f64, dim: usize) -> Self {
        assert!(dim == 1 || dim == 2, "symbols live in dimension 1 or 2");
        Self { label: label.into(), expr, order, dim, scale_witness: None }
    }

    pub fn parse(label: &str, src: &str, order: f64, dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Validation { path: "n".into(), message: format!("dimension {dim} not in {{1, 2}}") });
        }
        let expr = Expr::parse(src)?;
        for v in expr.free_vars() {
            if let Var::X(i) | Var::Xi(i) | Var::Y(i) = v {
                if i as usize >= dim {
                    return Err(Error::Validation {
                        path: "expr".into(),
                        message: format!("variable index {i} exceeds dimension {dim}"),
                    });
                }
            }
        }
        Ok(Self::new(label, expr, order, dim))
    }

    pub fn from_entry(e: &CatalogEntry) -> Result<Self> {
        Self::parse(&e.label, &e.expr, e.order, e.n)
    }

    pub fn to_entry(&self) -> CatalogEntry {
        CatalogEntry { label: self.label.clone(), order: self.order, n: self.dim, expr: self.expr.to_string() }
    }

    pub fn with_witness(mut self, w: NetSample) -> Self {
        self.scale_witness = Some(w);
        self
    }

    pub fn eval(&self, x: &[f64], xi: &[f64], eps: f64) -> Result<Complex64> {
        eval_symbol(self, x, xi, eps)
    }
}

pub fn load_catalog(json: &str) -> Result<Vec<SymbolFamily>> {
    let entries: Vec<CatalogEntry> = serde_json::from_str(json)?;
    entries.iter().map(SymbolFamily::from_entry).collect()
}

pub fn eval_symbol(a: &SymbolFamily, x: &[f64], xi: &[f64], eps: f64) -> Result<Complex64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("eps = {eps} outside (0, 1]")));
    }
    a.expr.try_eval(&Point::new(x, xi, eps))
}

/// `∂ξ^α ∂x^β a`, with declared order `m - |α|`.
pub fn diff_symbol(a: &SymbolFamily, alpha: &[usize], beta: &[usize], cap: usize) -> Result<SymbolFamily> {
    let order: usize = alpha.iter().sum::<usize>() + beta.iter().sum::<usize>();
    if order > cap {
        return Err(Error::CapExceeded { order, cap });
    }
    let mut e = a.expr.clone();
    for (i, &k) in alpha.iter().enumerate() {
        for _ in 0..k {
            e = e.diff(Var::Xi(i as u8));
        }
    }
    for (i, &k) in beta.iter().enumerate() {
        for _ in 0..k {
            e = e.diff(Var::X(i as u8));
        }
    }
    let na: usize = alpha.iter().sum();
    Ok(SymbolFamily {
        label: format!("d{alpha:?}{beta:?} {}", a.label),
        expr: e,
        order: a.order - na as f64,
        dim: a.dim,
        scale_witness: a.scale_witness.clone(),
    })
}

pub fn bracket(xi: &[f64]) -> f64 {
    (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Direction sectors in ξ-space. In 1D the two half-lines; in 2D `d` sectors
/// with centers `2πk/d` and angular half-width `half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeGrid {
    pub n: usize,
    pub d: usize,
    pub half_width: f64,
    pub min_radius: f64,
}

impl ConeGrid {
    /// Sectors of spacing `2π/d` overlapping their neighbours by one half-width.
    pub fn new(n: usize, d: usize, min_radius: f64) -> Self {
        if n == 1 {
            return Self { n, d: 2, half_width: PI / 2.0, min_radius };
        }
        Self { n, d, half_width: 2.0 * PI / d as f64, min_radius }
    }

    pub fn count(&self) -> usize {
        if self.n == 1 {
            2
        } else {
            self.d
        }
    }

    pub fn center_angle(&self, s: usize) -> f64 {
        if self.n == 1 {
            if s == 0 {
                0.0
            } else {
                PI
            }
        } else {
            2.0 * PI * s as f64 / self.d as f64
        }
    }

    pub fn center(&self, s: usize) -> Vec<f64> {
        let th = self.center_angle(s);
        if self.n == 1 {
            vec![th.cos().round()]
        } else {
            vec![th.cos(), th.sin()]
        }
    }

    /// Unit directions sampled inside sector `s` (center and edges included).
    pub fn sample_dirs(&self, s: usize) -> Vec<Vec<f64>> {
        if self.n == 1 {
            return vec![self.center(s)];
        }
        let c = self.center_angle(s);
        [-1.0, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|f| {
                let th = c + f * self.half_width;
                vec![th.cos(), th.sin()]
            })
            .collect()
    }

    /// Whether the direction of `k` lies in the closed sector `s`.
    pub fn contains(&self, s: usize, k: &[f64]) -> bool {
        if self.n == 1 {
            return if s == 0 { k[0] > 0.0 } else { k[0] < 0.0 };
        }
        if k[0] == 0.0 && k[1] == 0.0 {
            return false;
        }
        let th = k[1].atan2(k[0]);
        angle_dist(th, self.center_angle(s)) <= self.half_width + 1e-12
    }

    /// Sectors containing the direction of `k`.
    pub fn sectors_of(&self, k: &[f64]) -> Vec<usize> {
        (0..self.count()).filter(|&s| self.contains(s, k)).collect()
    }

    /// Cyclic distance between sector indices.
    pub fn sector_distance(&self, a: usize, b: usize) -> usize {
        let c = self.count();
        let d = (a as isize - b as isize).rem_euclid(c as isize) as usize;
        d.min(c - d)
    }
}

pub fn angle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub points_per_axis: usize,
}

impl SamplingBox {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>, points_per_axis: usize) -> Self {
        assert_eq!(center.len(), half_widths.len());
        assert!(points_per_axis >= 8, "at least 8 points per axis");
        Self { center, half_widths, points_per_axis }
    }

    /// The box `[-h, h]^n` around the origin.
    pub fn symmetric(n: usize, h: f64) -> Self {
        Self::new(vec![0.0; n], vec![h; n], 9)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let n = self.center.len();
        let p = self.points_per_axis;
        let axis = |i: usize| -> Vec<f64> {
            (0..p)
                .map(|k| self.center[i] - self.half_widths[i] + 2.0 * self.half_widths[i] * k as f64 / (p - 1) as f64)
                .collect()
        };
        if n == 1 {
            axis(0).into_iter().map(|v| vec![v]).collect()
        } else {
            let (a, b) = (axis(0), axis(1));
            a.iter().flat_map(|&u| b.iter().map(move |&v| vec![u, v])).collect()
        }
    }
}

/// Radius shells `2^0 … 2^10`.
pub fn default_radii() -> Vec<f64> {
    (0..=10).map(|k| f64::from(k).exp2()).collect()
}

/// Per-ε, per-shell maxima of `|e|` over `points × dirs`.
/// Collapses the x-lattice when `e` is x-free and the ε-loop when it is ε-free.
fn shell_maxima(
    e: &Expr,
    points: &[Vec<f64>],
    dirs: &[Vec<f64>],
    radii: &[f64],
    grid: EpsilonGrid,
) -> Result<Vec<Vec<f64>>> {
    let vars = e.free_vars();
    let x_free = !vars.iter().any(|v| matches!(v, Var::X(_)));
    let eps_free = !vars.contains(&Var::Eps);
    let pts: &[Vec<f64>] = if x_free { &points[..1] } else { points };
    let c = Compiled::new(e);
    let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    for (ji, j) in grid.js().enumerate() {
        if eps_free && ji > 0 {
            out.push(out[0].clone());
            continue;
        }
        let eps = grid.eps(j);
        let mut row = vec![0.0f64; radii.len()];
        for (ri, &r) in radii.iter().enumerate() {
            let mut m = 0.0f64;
            for x in pts {
                for d in dirs {
                    let xi: Vec<f64> = d.iter().map(|v| v * r).collect();
                    let v = c.eval_into(&Point::new(x, &xi, eps), &mut buf);
                    let a = v.norm();
                    if !a.is_finite() {
                        return Err(Error::Domain(format!("{e} at x={x:?}, xi={xi:?}, eps={eps}")));
                    }
                    m = m.max(a);
                }
            }
            row[ri] = m;
        }
        out.push(row);
    }
    Ok(out)
}

fn all_center_dirs(cones: &ConeGrid) -> Vec<Vec<f64>> {
    (0..cones.count()).map(|s| cones.center(s)).collect()
}

fn multi_index_vars(alpha: &[usize], beta: &[usize]) -> Vec<Var> {
    let mut v = Vec::new();
    for (i, &k) in alpha.iter().enumerate() {
        v.extend(std::iter::repeat_n(Var::Xi(i as u8), k));
    }
    for (i, &k) in beta.iter().enumerate() {
        v.extend(std::iter::repeat_n(Var::X(i as u8), k));
    }
    v
}

/// Per ε, the max of `⟨ξ⟩^(-m+|α|)|∂ξ^α∂x^β a|` over `K × shells × sector centers`.
pub fn estimate_seminorm(
    a: &SymbolFamily,
    k: &SamplingBox,
    alpha: &[usize],
    beta: &[usize],
    m: f64,
    grid: EpsilonGrid,
    radii: &[f64],
) -> Result<NetSample> {
    let cones = ConeGrid::new(a.dim, 16, 1.0);
    estimate_seminorm_dirs(a, k, alpha, beta, m, grid, radii, &all_center_dirs(&cones))
}

#[allow(clippy::too_many_arguments)]
fn estimate_seminorm_dirs(
    a: &SymbolFamily,
    k: &SamplingBox,
    alpha: &[usize],
    beta: &[usize],
    m: f64,
    grid: EpsilonGrid,
    radii: &[f64],
    dirs: &[Vec<f64>],
) -> Result<NetSample> {
    let na: usize = alpha.iter().sum();
    let e = a.expr.diff_many(&multi_index_vars(alpha, beta));
    let maxima = shell_maxima(&e, &k.points(), dirs, radii, grid)?;
    let w: Vec<f64> = radii.iter().map(|&r| (1.0 + r * r).sqrt().powf(-m + na as f64)).collect();
    let raw: Vec<f64> = maxima
        .iter()
        .map(|row| row.iter().zip(&w).map(|(v, w)| v * w).fold(0.0, f64::max))
        .collect();
    NetSample::from_values(grid, &raw)
}

/// Smallest order `m ∈ [-10, 10]` (bisection, tolerance 0.05) for which the
/// weighted (0,0)-seminorm is moderate with ε-slope no worse than at `m+1`
/// and the shell profile at the largest ε grows by at most 10%.
pub fn estimate_order(a: &SymbolFamily, k: &SamplingBox, grid: EpsilonGrid) -> Result<f64> {
    let cones = ConeGrid::new(a.dim, 16, 1.0);
    let radii = default_radii();
    let maxima = shell_maxima(&a.expr, &k.points(), &all_center_dirs(&cones), &radii, grid)?;
    order_from_maxima(&maxima, &radii, grid)
}

/// Outer shells over which the weighted profile must stay flat.
const TAIL_SHELLS: usize = 3;
const TAIL_GROWTH: f64 = 1.02;

pub(crate) fn order_from_maxima(maxima: &[Vec<f64>], radii: &[f64], grid: EpsilonGrid) -> Result<f64> {
    if maxima.iter().flatten().all(|&v| v < FLOOR) {
        return Ok(-10.0);
    }
    let th = NetThresholds::default();
    let net_at = |m: f64| -> Result<NetSample> {
        let raw: Vec<f64> = maxima
            .iter()
            .map(|row| {
                row.iter()
                    .zip(radii)
                    .map(|(v, &r)| v * (1.0 + r * r).sqrt().powf(-m))
                    .fold(0.0, f64::max)
            })
            .collect();
        NetSample::from_values(grid, &raw)
    };
    let certifies = |m: f64| -> Result<bool> {
        let net = net_at(m)?;
        let class = classify_scale(&net, &th)?;
        if !class.tag.is_moderate() {
            return Ok(false);
        }
        let s0 = fit_growth_exponent(&net, th.tail_fraction)?.slope;
        let s1 = fit_growth_exponent(&net_at(m + 1.0)?, th.tail_fraction)?.slope;
        if s0.is_finite() && s1.is_finite() && s0 > s1 + 0.01 {
            return Ok(false);
        }
        let prof: Vec<f64> = maxima[0]
            .iter()
            .zip(radii)
            .map(|(v, &r)| v * (1.0 + r * r).sqrt().powf(-m))
            .collect();
        for i in prof.len().saturating_sub(TAIL_SHELLS)..prof.len() {
            if prof[i] < FLOOR {
                continue;
            }
            for jx in i + 1..prof.len() {
                if prof[jx] > TAIL_GROWTH * prof[i] + 1e-300 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    };
    if certifies(-10.0)? {
        return Ok(-10.0);
    }
    if !certifies(10.0)? {
        return Err(Error::OrderNotFound);
    }
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    while hi - lo > 0.05 {
        let mid = 0.5 * (lo + hi);
        if certifies(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EllipticVerdict {
    SlowScaleElliptic,
    Elliptic,
    Characteristic,
}

impl EllipticVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            EllipticVerdict::SlowScaleElliptic => "SlowScaleElliptic",
            EllipticVerdict::Elliptic => "Elliptic(Moderate)",
            EllipticVerdict::Characteristic => "Characteristic",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityCell {
    pub box_id: usize,
    pub sector: usize,
    pub verdict: EllipticVerdict,
    pub s_net: Option<NetSample>,
    pub r_net: Option<NetSample>,
    pub s_slope: f64,
    pub r_slope: f64,
    /// Rows over ε, columns over radius shells: worst ratio `⟨ξ⟩^m / |a|`.
    pub min_modulus_data: Vec<Vec<f64>>,
    /// Whether the lower bound already holds at `ξ = 0`, so no excision is needed.
    pub holds_from_origin: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub label: String,
    pub radii: Vec<f64>,
    pub symbol_slow_scale: bool,
    pub cells: Vec<EllipticityCell>,
}

impl EllipticityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("box_id,sector_id,verdict,s_slope,r_slope\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.box_id,
                c.sector,
                c.verdict.as_str(),
                fmt_f(c.s_slope),
                fmt_f(c.r_slope)
            ));
        }
        out
    }

    pub fn all_slow_scale_elliptic(&self) -> bool {
        self.cells.iter().all(|c| c.verdict == EllipticVerdict::SlowScaleElliptic)
    }

    /// Largest witness radius over all cells and ε, or 0 if the bound holds from ξ = 0.
    pub fn excision_radius(&self) -> f64 {
        if self.cells.iter().all(|c| c.holds_from_origin) {
            return 0.0;
        }
        self.cells
            .iter()
            .filter_map(|c| c.r_net.as_ref())
            .flat_map(|n| n.values.iter().copied())
            .fold(1.0, f64::max)
    }
}

pub(crate) fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Whether every seminorm net with `|α|+|β| ≤ 2` at the declared order is slow-scale on `U`.
fn symbol_is_slow_scale(a: &SymbolFamily, boxes: &[SamplingBox], cones: &ConeGrid, grid: EpsilonGrid, radii: &[f64]) -> Result<bool> {
    let th = NetThresholds::default();
    let dirs: Vec<Vec<f64>> = (0..cones.count()).flat_map(|s| cones.sample_dirs(s)).collect();
    for (alpha, beta) in multi_indices(a.dim, 2) {
        for b in boxes {
            let net = estimate_seminorm_dirs(a, b, &alpha, &beta, a.order, grid, radii, &dirs)?;
            let c = classify_scale(&net, &th)?;
            if !matches!(c.tag, ScaleTag::SlowScale | ScaleTag::Negligible) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// All `(α, β)` pairs with `|α| + |β| ≤ max`, in ascending total order.
pub fn multi_indices(dim: usize, max: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    for total in 0..=max {
        if dim == 1 {
            for a in 0..=total {
                out.push((vec![a], vec![total - a]));
            }
        } else {
            for a0 in 0..=total {
                for a1 in 0..=total - a0 {
                    for b0 in 0..=total - a0 - a1 {
                        let b1 = total - a0 - a1 - b0;
                        out.push((vec![a0, a1], vec![b0, b1]));
                    }
                }
            }
        }
    }
    out
}

pub fn microellipticity_report(
    a: &SymbolFamily,
    boxes: &[SamplingBox],
    cones: &ConeGrid,
    grid: EpsilonGrid,
    radii: &[f64],
) -> Result<EllipticityReport> {
    let th = NetThresholds::default();
    let symbol_slow = symbol_is_slow_scale(a, boxes, cones, grid, radii)?;
    let m = a.order;
    let mut cells = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        let pts = b.points();
        for s in 0..cones.count() {
            let dirs = cones.sample_dirs(s);
            let maxima_inv = shell_inverse_ratio(a, &pts, &dirs, radii, grid, m)?;
            let near = shell_inverse_ratio(a, &pts, &dirs, &[0.0, 0.5], grid, m)?;
            let mut s_raw = Vec::new();
            let mut r_raw = Vec::new();
            let mut failed = false;
            let mut from_origin = true;
            for (row, near_row) in maxima_inv.iter().zip(&near) {
                let n = row.len();
                let last = row[n - 1];
                let growing = n >= 2 && row[n - 1] > 1.5 * row[n - 2];
                if !last.is_finite() || growing {
                    failed = true;
                    break;
                }
                let bound = 2.0 * last;
                let mut start = n - 1;
                while start > 0 && row[start - 1].is_finite() && row[start - 1] <= bound {
                    start -= 1;
                }
                let sv = row[start..].iter().copied().fold(0.0, f64::max);
                if start > 0 || near_row.iter().any(|v| !v.is_finite() || *v > 2.0 * sv) {
                    from_origin = false;
                }
                s_raw.push(sv);
                r_raw.push(radii[start]);
            }
            let cell = if failed {
                EllipticityCell {
                    box_id: bi,
                    sector: s,
                    verdict: EllipticVerdict::Characteristic,
                    s_net: None,
                    r_net: None,
                    s_slope: f64::INFINITY,
                    r_slope: f64::INFINITY,
                    min_modulus_data: maxima_inv,
                    holds_from_origin: false,
                }
            } else {
                let s_net = NetSample::from_values(grid, &s_raw)?;
                let r_net = NetSample::from_values(grid, &r_raw)?;
                let sc = classify_scale(&s_net, &th)?;
                let rc = classify_scale(&r_net, &th)?;
                let verdict = if sc.tag == ScaleTag::Unbounded {
                    EllipticVerdict::Characteristic
                } else if sc.tag == ScaleTag::SlowScale && rc.tag == ScaleTag::SlowScale && symbol_slow {
                    EllipticVerdict::SlowScaleElliptic
                } else {
                    EllipticVerdict::Elliptic
                };
                EllipticityCell {
                    box_id: bi,
                    sector: s,
                    verdict,
                    s_slope: sc.fit.slope,
                    r_slope: rc.fit.slope,
                    s_net: Some(s_net),
                    r_net: Some(r_net),
                    min_modulus_data: maxima_inv,
                    holds_from_origin: from_origin,
                }
            };
            cells.push(cell);
        }
    }
    Ok(EllipticityReport { label: a.label.clone(), radii: radii.to_vec(), symbol_slow_scale: symbol_slow, cells })
}

/// Ratios `⟨ξ⟩^m / |a|` above this count as a zero of `a`.
pub const VANISHING_RATIO: f64 = 1e12;

/// Per ε and shell: max over points and directions of `⟨ξ⟩^m / |a|` (∞ where `a` vanishes).
fn shell_inverse_ratio(
    a: &SymbolFamily,
    pts: &[Vec<f64>],
    dirs: &[Vec<f64>],
    radii: &[f64],
    grid: EpsilonGrid,
    m: f64,
) -> Result<Vec<Vec<f64>>> {
    let c = Compiled::new(&a.expr);
    let mut buf = vec![Complex64::new(0.0, 0.0); c.len()];
    let mut out = Vec::new();
    for j in grid.js() {
        let eps = grid.eps(j);
        let row: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let mut worst = 0.0f64;
                for x in pts {
                    for d in dirs {
                        let xi: Vec<f64> = d.iter().map(|v| v * r).collect();
                        let v = c.eval_into(&Point::new(x, &xi, eps), &mut buf).norm();
                        let q = bracket(&xi).powf(m) / v;
                        let q = if q.is_finite() && q <= VANISHING_RATIO { q } else { f64::INFINITY };
                        worst = worst.max(q);
                    }
                }
                worst
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// The `(box, sector)` pairs with a Characteristic verdict.
pub fn characteristic_set(report: &EllipticityReport) -> Vec<(usize, usize)> {
    report
        .cells
        .iter()
        .filter(|c| c.verdict == EllipticVerdict::Characteristic)
        .map(|c| (c.box_id, c.sector))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MicrosupportCell {
    pub box_id: usize,
    pub sector: usize,
    pub smoothing: bool,
    pub exponent: f64,
    /// `(m, α, β, ε-slope, ξ-bounded)` for each tested combination.
    pub table: Vec<(f64, Vec<usize>, Vec<usize>, f64, bool)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MicrosupportEstimate {
    pub label: String,
    pub cells: Vec<MicrosupportCell>,
}

impl MicrosupportEstimate {
    pub fn smoothing(&self, box_id: usize, sector: usize) -> bool {
        self.cells.iter().any(|c| c.box_id == box_id && c.sector == sector && c.smoothing)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("box_id,sector_id,verdict,s_slope,r_slope\n");
        for c in &self.cells {
            let v = if c.smoothing { "smoothing" } else { "microsupport" };
            out.push_str(&format!("{},{},{},{},\n", c.box_id, c.sector, v, fmt_f(c.exponent)));
        }
        out
    }
}

/// Generalized microsupport: a sector is smoothing when every tested weight and
/// derivative stays ξ-bounded on the shells with one ε-exponent.
pub fn microsupport_estimate(
    a: &SymbolFamily,
    boxes: &[SamplingBox],
    cones: &ConeGrid,
    grid: EpsilonGrid,
    weights: &[f64],
) -> Result<MicrosupportEstimate> {
    let radii: Vec<f64> = default_radii().into_iter().filter(|&r| r >= cones.min_radius).collect();
    let th = NetThresholds::default();
    let derivs: Vec<(Vec<usize>, Vec<usize>, Expr)> = multi_indices(a.dim, 4)
        .into_iter()
        .map(|(al, be)| {
            let e = a.expr.diff_many(&multi_index_vars(&al, &be));
            (al, be, e)
        })
        .collect();
    let mut cells = Vec::new();
    for (bi, b) in boxes.iter().enumerate() {
        let pts = b.points();
        for s in 0..cones.count() {
            let dirs = cones.sample_dirs(s);
            let mut table = Vec::new();
            let mut base: Option<f64> = None;
            let mut ok = true;
            for (al, be, e) in &derivs {
                let maxima = if e.is_zero() {
                    vec![vec![0.0; radii.len()]; grid.len()]
                } else {
                    shell_maxima(e, &pts, &dirs, &radii, grid)?
                };
                for &m in weights {
                    let weighted: Vec<Vec<f64>> = maxima
                        .iter()
                        .map(|row| row.iter().zip(&radii).map(|(v, &r)| v * (1.0 + r * r).sqrt().powf(-m)).collect())
                        .collect();
                    let raw: Vec<f64> = weighted.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).collect();
                    let net = NetSample::from_values(grid, &raw)?;
                    let fit = fit_growth_exponent(&net, th.tail_fraction)?;
                    let bounded = weighted.iter().all(|row| xi_bounded(row));
                    if m == 0.0 && al.iter().all(|&v| v == 0) && be.iter().all(|&v| v == 0) {
                        base = Some(fit.slope);
                    }
                    table.push((m, al.clone(), be.clone(), fit.slope, bounded));
                }
            }
            let nstar = base.unwrap_or(0.0);
            for (_, _, _, slope, bounded) in &table {
                let slope_ok = *slope == f64::NEG_INFINITY || *slope <= nstar.max(0.0) + 0.5;
                if !(slope_ok && *bounded) {
                    ok = false;
                }
            }
            cells.push(MicrosupportCell { box_id: bi, sector: s, smoothing: ok, exponent: nstar, table });
        }
    }
    Ok(MicrosupportEstimate { label: a.label.clone(), cells })
}

/// A shell profile is ξ-bounded when its top third does not exceed twice the rest.
fn xi_bounded(row: &[f64]) -> bool {
    let n = row.len();
    let cut = n - n / 3;
    let low = row[..cut].iter().copied().fold(0.0, f64::max);
    let high = row[cut..].iter().copied().fold(0.0, f64::max);
    high <= 2.0 * low || high < FLOOR
}

/// Cutoff `τ(ξ) = ρ(|ξ|)·σ(angle(ξ, direction))`: `ρ` switches on over `1/2 ≤ |ξ| ≤ 1`,
/// `σ` is 1 inside the inner cone and 0 outside the outer cone.
pub fn build_cone_cutoff(direction: &[f64], inner: f64, outer: f64, n: usize) -> Result<SymbolFamily> {
    if !(0.0 < inner && inner < outer && outer < PI) {
        return Err(Error::BadAngles { inner, outer });
    }
    if direction.len() != n {
        return Err(Error::Validation { path: "direction".into(), message: format!("expected {n} components") });
    }
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    let r2 = Expr::sum((0..n as u8).map(|i| Expr::pow(&Expr::xi(i), 2.0)));
    let r = Expr::pow(&r2, 0.5);
    let rho = Expr::smoothstep(&(Expr::real(2.0) * &r - Expr::one()));
    let dot = Expr::sum((0..n).map(|i| Expr::real(d[i]) * Expr::xi(i as u8)));
    let cos_t = &dot / &r;
    let (ci, co) = (inner.cos(), outer.cos());
    let sigma = Expr::smoothstep(&((cos_t - Expr::real(co)) * Expr::real(1.0 / (ci - co))));
    let expr = Expr::mul(&rho, &sigma);
    Ok(SymbolFamily::new(format!("cone({d:?},{inner},{outer})"), expr, 0.0, n))
}

/// Proper cutoff `χ(x,y) = s((2w - d(x,y))/w)` with `d` the periodic distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProperCutoff {
    pub diag_width: f64,
    pub n: usize,
}

pub fn build_proper_cutoff(diag_width: f64, n: usize) -> ProperCutoff {
    assert!(diag_width > 0.0);
    ProperCutoff { diag_width, n }
}

impl ProperCutoff {
    pub fn periodic_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = (a - b).rem_euclid(2.0 * PI);
                let d = d.min(2.0 * PI - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.periodic_distance(x, y);
        crate::expr::smoothstep((2.0 * self.diag_width - d) / self.diag_width)
    }

    /// Expression form in `(x, y)` using the Euclidean distance; agrees with
    /// [`ProperCutoff::eval`] wherever the points are closer than `π` per axis.
    pub fn expr(&self) -> Expr {
        let d2 = Expr::sum((0..self.n as u8).map(|i| Expr::pow(&(Expr::x(i) - Expr::y(i)), 2.0)));
        let d = Expr::pow(&d2, 0.5);
        let w = self.diag_width;
        Expr::smoothstep(&((Expr::real(2.0 * w) - d) * Expr::real(1.0 / w)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> EpsilonGrid {
        EpsilonGrid::standard()
    }

    #[test]
    fn eval_examples() {
        let a = SymbolFamily::new("b2", Expr::pow(&Expr::japanese_xi(2), 2.0), 2.0, 2);
        assert!((a.eval(&[0.3, 0.1], &[1.0, 0.0], 0.5).unwrap().re - 2.0).abs() < 1e-14);
        let a = SymbolFamily::parse("r", "(div (const 1) (add (const 1) (mul (div (const 1) (var eps)) (pow (var x 0) 2))))", 0.0, 1).unwrap();
        assert!((a.eval(&[1.0], &[0.0], 1.0 / 16.0).unwrap().re - 1.0 / 17.0).abs() < 1e-15);
        assert!(a.eval(&[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn diff_examples() {
        let a = SymbolFamily::new("xxi", Expr::x(0) * Expr::xi(0), 1.0, 1);
        let d = diff_symbol(&a, &[1], &[0], DERIVATIVE_CAP).unwrap();
        assert_eq!(d.order, 0.0);
        assert_eq!(d.expr.eval(&Point::new(&[0.7], &[5.0], 0.5)).re, 0.7);
        assert!(matches!(diff_symbol(&a, &[7], &[6], DERIVATIVE_CAP), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn cone_grid_overlap() {
        let c = ConeGrid::new(2, 16, 1.0);
        assert_eq!(c.sectors_of(&[1.0, 0.0]), vec![0, 1, 15]);
        assert_eq!(c.sectors_of(&[1.0, 0.2]), vec![0, 1]);
        assert_eq!(c.sector_distance(15, 1), 2);
        let c1 = ConeGrid::new(1, 0, 1.0);
        assert_eq!(c1.sectors_of(&[-3.0]), vec![1]);
    }

    #[test]
    fn seminorm_examples() {
        let k = SamplingBox::symmetric(1, 1.0);
        let a = SymbolFamily::new("b", Expr::japanese_xi(1), 1.0, 1);
        let s = estimate_seminorm(&a, &k, &[0], &[0], 1.0, grid(), &default_radii()).unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let a = SymbolFamily::new("e", Expr::one() / Expr::eps(), 0.0, 1);
        let s = estimate_seminorm(&a, &k, &[0], &[0], 0.0, grid(), &default_radii()).unwrap();
        assert!((fit_growth_exponent(&s, 0.5).unwrap().slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_examples() {
        let k1 = SamplingBox::symmetric(1, 1.0);
        let a = SymbolFamily::new("b2", Expr::pow(&Expr::japanese_xi(1), 2.0), 2.0, 1);
        assert!((estimate_order(&a, &k1, grid()).unwrap() - 2.0).abs() <= 0.05);
        let a = SymbolFamily::new("one", Expr::one(), 0.0, 1);
        assert!(estimate_order(&a, &k1, grid()).unwrap().abs() <= 0.05);
    }

    #[test]
    fn cone_cutoff_support() {
        let p = build_cone_cutoff(&[1.0, 0.0], 0.3, 0.6, 2).unwrap();
        let v = |xi: [f64; 2]| p.expr.eval(&Point::new(&[0.0, 0.0], &xi, 0.5)).re;
        assert_eq!(v([2.0, 0.0]), 1.0);
        assert_eq!(v([0.0, 2.0]), 0.0);
        assert_eq!(v([0.3, 0.0]), 0.0);
        assert_eq!(v([0.0, 0.0]), 0.0);
        assert!(build_cone_cutoff(&[1.0, 0.0], 0.6, 0.3, 2).is_err());
    }

    #[test]
    fn proper_cutoff_examples() {
        let chi = build_proper_cutoff(0.5, 1);
        assert_eq!(chi.eval(&[1.0], &[1.0]), 1.0);
        assert_eq!(chi.eval(&[1.0], &[2.5]), 0.0);
        let mid = chi.eval(&[1.0], &[1.75]);
        assert!(mid > 0.0 && mid < 1.0);
        assert_eq!(chi.eval(&[0.1], &[2.0 * PI - 0.1]), 1.0);
    }
}
