//! Built-in grid function families and the reference scale-net catalog.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunctionFamily, GridSpec, Spectral};
use crate::nets::{EpsilonGrid, NetSample, ScaleTag};

/// Mollifier width in grid cells at the smallest ε.
pub const DEFAULT_WIDTH: f64 = 0.75;
const TRUNCATION: f64 = 8.0;

#[derive(Debug, Clone, Serialize)]
pub struct FixtureInfo {
    pub label: &'static str,
    pub dims: &'static str,
    pub description: &'static str,
}

pub fn fixture_catalog() -> Vec<FixtureInfo> {
    let f = |label, dims, description| FixtureInfo { label, dims, description };
    vec![
        f("delta", "1,2", "Gaussian mollifier rho_eps(x - x0), sigma = w*dx*eps/eps_min; FT exp(-sigma^2 k^2/2) e^{-ik x0}"),
        f("delta_pair", "1,2", "sum of two mollified deltas at x0 and x1"),
        f("delta_plus_smooth", "1,2", "mollified delta plus 0.3 sin(x) (a G-infinity perturbation)"),
        f("heaviside", "1", "square wave (jumps at 0 and pi) convolved with the mollifier; FT ~ rho_hat(k)/(i pi k) on odd k"),
        f("heaviside2d", "2", "H(x1) sheet: the 1D regularized square wave, constant in x2"),
        f("plane_wave", "1,2", "e^{i k0 . x}, epsilon independent; FT a single lattice point"),
        f("smooth", "1,2", "sin(x1) (+ cos(2 x2) in 2D), epsilon independent"),
        f("constant", "1,2", "the constant 1"),
        f("lorentzian_slow", "1", "periodized 1/(1 + c (x - pi)^2), c = 1 + log2(1/eps); G-infinity"),
        f("lorentzian_fast", "1", "periodized 1/(1 + c (x - pi)^2), c = 1/eps; not G-infinity, sup|u^(k)| ~ c^(k/2)"),
        f("transport_spacetime", "2", "u(x,t) = rho_eps(x - x0 - t) on the (x,t) torus; conormal to the line x = x0 + t"),
        f("conormal_sheet", "2", "u(x,t) = rho_eps(t - t0): a pure time-conormal singularity"),
    ]
}

/// Periodized Gaussian kernel at 0 with `Σ k·dx = 1`.
pub fn mollifier_kernel(spec: &GridSpec, sigma: f64) -> Vec<f64> {
    let g = spec.g;
    let dx = spec.dx();
    let cut = TRUNCATION * sigma;
    let mut v: Vec<f64> = (0..g)
        .map(|i| {
            let x = spec.coord(i);
            (-4..=4)
                .map(|m| {
                    let d = x + 2.0 * PI * f64::from(m);
                    if d.abs() <= cut {
                        (-d * d / (2.0 * sigma * sigma)).exp()
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    let s: f64 = v.iter().sum::<f64>() * dx;
    for x in &mut v {
        *x /= s;
    }
    v
}

/// Mollifier width `σ(ε) = w·dx·ε/ε_min`.
pub fn sigma(spec: &GridSpec, grid: &EpsilonGrid, eps: f64, width: f64) -> f64 {
    width * spec.dx() * eps / grid.eps_min()
}

fn roll(v: &[f64], shift: isize) -> Vec<f64> {
    let n = v.len() as isize;
    (0..n).map(|i| v[(i - shift).rem_euclid(n) as usize]).collect()
}

fn index_of(spec: &GridSpec, x: f64) -> isize {
    (x.rem_euclid(2.0 * PI) / spec.dx()).round() as isize
}

/// 1D mollified delta at `x0` (rounded to the nearest grid point) for one ε.
pub fn delta_1d(spec: &GridSpec, grid: &EpsilonGrid, eps: f64, x0: f64, width: f64) -> Vec<f64> {
    roll(&mollifier_kernel(spec, sigma(spec, grid, eps, width)), index_of(spec, x0))
}

fn outer(a: &[f64], b: &[f64]) -> Vec<Complex64> {
    a.iter().flat_map(|&u| b.iter().map(move |&v| Complex64::new(u * v, 0.0))).collect()
}

fn real(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn per_eps(spec: GridSpec, grid: EpsilonGrid, label: &str, f: impl Fn(f64) -> Vec<Complex64>) -> Result<GridFunctionFamily> {
    let data = grid.js().map(|j| f(grid.eps(j))).collect();
    GridFunctionFamily::new(spec, grid, data, label)
}

pub fn delta(spec: GridSpec, grid: EpsilonGrid, x0: &[f64], width: f64) -> Result<GridFunctionFamily> {
    if x0.len() != spec.n {
        return Err(Error::Validation { path: "x0".into(), message: format!("expected {} coordinates", spec.n) });
    }
    per_eps(spec, grid, "delta", |e| {
        let a = delta_1d(&spec, &grid, e, x0[0], width);
        if spec.n == 1 {
            real(&a)
        } else {
            outer(&a, &delta_1d(&spec, &grid, e, x0[1], width))
        }
    })
}

pub fn delta_pair(spec: GridSpec, grid: EpsilonGrid, x0: &[f64], x1: &[f64], width: f64) -> Result<GridFunctionFamily> {
    let a = delta(spec, grid, x0, width)?;
    let b = delta(spec, grid, x1, width)?;
    let mut s = a.linear_combination(Complex64::new(1.0, 0.0), &b, Complex64::new(1.0, 0.0))?;
    s.label = "delta_pair".into();
    Ok(s)
}

/// Square wave with jumps at 0 and π, convolved with the mollifier.
pub fn heaviside_1d(spec: &GridSpec, grid: &EpsilonGrid, eps: f64, width: f64) -> Vec<f64> {
    let g = spec.g;
    let mut sq: Vec<Complex64> = (0..g)
        .map(|i| {
            let v = if i == 0 || i == g / 2 {
                0.5
            } else if i < g / 2 {
                1.0
            } else {
                0.0
            };
            Complex64::new(v, 0.0)
        })
        .collect();
    let mut k = real(&mollifier_kernel(spec, sigma(spec, grid, eps, width)));
    let line = GridSpec { n: 1, g };
    let sp = Spectral::new(line);
    sp.forward(&mut sq);
    sp.forward(&mut k);
    let mut c: Vec<Complex64> = sq.iter().zip(&k).map(|(a, b)| a * b).collect();
    sp.inverse(&mut c);
    c.iter().map(|v| v.re * spec.dx()).collect()
}

pub fn heaviside(spec: GridSpec, grid: EpsilonGrid, width: f64) -> Result<GridFunctionFamily> {
    if spec.n != 1 {
        return Err(Error::InvalidSpec("heaviside is one-dimensional; use heaviside2d".into()));
    }
    per_eps(spec, grid, "heaviside", |e| real(&heaviside_1d(&spec, &grid, e, width)))
}

pub fn heaviside2d(spec: GridSpec, grid: EpsilonGrid, width: f64) -> Result<GridFunctionFamily> {
    if spec.n != 2 {
        return Err(Error::InvalidSpec("heaviside2d needs n = 2".into()));
    }
    let ones = vec![1.0; spec.g];
    per_eps(spec, grid, "heaviside2d", |e| outer(&heaviside_1d(&spec, &grid, e, width), &ones))
}

pub fn plane_wave(spec: GridSpec, grid: EpsilonGrid, k0: &[f64]) -> Result<GridFunctionFamily> {
    let k0 = k0.to_vec();
    GridFunctionFamily::from_fn(spec, grid, "plane_wave", move |x, _| {
        Complex64::from_polar(1.0, x.iter().zip(&k0).map(|(a, b)| a * b).sum())
    })
}

pub fn smooth(spec: GridSpec, grid: EpsilonGrid) -> Result<GridFunctionFamily> {
    GridFunctionFamily::from_fn(spec, grid, "smooth", |x, _| {
        let v = x[0].sin() + if x.len() > 1 { (2.0 * x[1]).cos() } else { 0.0 };
        Complex64::new(v, 0.0)
    })
}

pub fn constant(spec: GridSpec, grid: EpsilonGrid) -> Result<GridFunctionFamily> {
    GridFunctionFamily::from_fn(spec, grid, "constant", |_, _| Complex64::new(1.0, 0.0))
}

pub fn delta_plus_smooth(spec: GridSpec, grid: EpsilonGrid, x0: &[f64], width: f64) -> Result<GridFunctionFamily> {
    let d = delta(spec, grid, x0, width)?;
    let s = GridFunctionFamily::from_fn(spec, grid, "s", |x, _| Complex64::new(0.3 * x[0].sin(), 0.0))?;
    let mut out = d.linear_combination(Complex64::new(1.0, 0.0), &s, Complex64::new(1.0, 0.0))?;
    out.label = "delta_plus_smooth".into();
    Ok(out)
}

/// Exact periodization of `1/(1 + c y²)`: `(a/2)·sinh a/(cosh a − cos y)`, `a = c^{-1/2}`.
pub fn periodized_lorentzian(y: f64, c: f64) -> f64 {
    let a = 1.0 / c.sqrt();
    0.5 * a * a.sinh() / (a.cosh() - y.cos())
}

pub fn lorentzian(spec: GridSpec, grid: EpsilonGrid, label: &str, c: impl Fn(f64) -> f64) -> Result<GridFunctionFamily> {
    if spec.n != 1 {
        return Err(Error::InvalidSpec("the Lorentzian fixtures are one-dimensional".into()));
    }
    per_eps(spec, grid, label, |e| {
        let ce = c(e);
        (0..spec.g).map(|i| Complex64::new(periodized_lorentzian(spec.coord(i) - PI, ce), 0.0)).collect()
    })
}

pub fn slow_scale_c(eps: f64) -> f64 {
    1.0 + (1.0 / eps).log2()
}

pub fn fast_c(eps: f64) -> f64 {
    1.0 / eps
}

/// `u(x,t) = ρ_ε(x − x0 − t)`; axis 0 is `x`, axis 1 is `t`, and `dt = dx`.
pub fn transport_spacetime(spec: GridSpec, grid: EpsilonGrid, x0: f64, width: f64) -> Result<GridFunctionFamily> {
    if spec.n != 2 {
        return Err(Error::InvalidSpec("space-time fixtures need n = 2".into()));
    }
    let g = spec.g;
    per_eps(spec, grid, "transport_spacetime", |e| {
        let base = delta_1d(&spec, &grid, e, x0, width);
        let mut out = vec![Complex64::new(0.0, 0.0); g * g];
        for it in 0..g {
            let col = roll(&base, it as isize);
            for ix in 0..g {
                out[ix * g + it] = Complex64::new(col[ix], 0.0);
            }
        }
        out
    })
}

/// `u(x,t) = ρ_ε(t − t0)`, constant in `x`.
pub fn conormal_sheet(spec: GridSpec, grid: EpsilonGrid, t0: f64, width: f64) -> Result<GridFunctionFamily> {
    if spec.n != 2 {
        return Err(Error::InvalidSpec("space-time fixtures need n = 2".into()));
    }
    let ones = vec![1.0; spec.g];
    per_eps(spec, grid, "conormal_sheet", |e| outer(&ones, &delta_1d(&spec, &grid, e, t0, width)))
}

/// Builds a fixture by label with default parameters.
pub fn build_fixture(label: &str, spec: GridSpec, grid: EpsilonGrid) -> Result<GridFunctionFamily> {
    let mid: Vec<f64> = vec![PI - spec.dx() * (spec.g as f64 / 16.0); spec.n];
    let w = DEFAULT_WIDTH;
    match label {
        "delta" => delta(spec, grid, &mid, w),
        "delta_pair" => {
            let other: Vec<f64> = mid.iter().map(|v| v - PI / 2.0).collect();
            delta_pair(spec, grid, &mid, &other, w)
        }
        "delta_plus_smooth" => delta_plus_smooth(spec, grid, &mid, w),
        "heaviside" => heaviside(spec, grid, w),
        "heaviside2d" => heaviside2d(spec, grid, w),
        "plane_wave" => plane_wave(spec, grid, &vec![5.0; spec.n]),
        "smooth" => smooth(spec, grid),
        "constant" => constant(spec, grid),
        "lorentzian_slow" => lorentzian(spec, grid, label, slow_scale_c),
        "lorentzian_fast" => lorentzian(spec, grid, label, fast_c),
        "transport_spacetime" => transport_spacetime(spec, grid, PI / 2.0, w),
        "conormal_sheet" => conormal_sheet(spec, grid, PI, w),
        _ => Err(Error::Validation { path: "fixture".into(), message: format!("unknown fixture '{label}'") }),
    }
}

/// A labelled scale net with its analytic class and, for pure powers, exponent.
#[derive(Debug, Clone, Serialize)]
pub struct CatalogNet {
    pub label: &'static str,
    pub expected: ScaleTag,
    pub exact_slope: Option<f64>,
    #[serde(skip)]
    pub f: fn(f64) -> f64,
}

impl CatalogNet {
    pub fn sample(&self, grid: EpsilonGrid) -> Result<NetSample> {
        crate::nets::sample_net(self.f, grid)
    }
}

fn l2(e: f64) -> f64 {
    (1.0 / e).log2()
}

/// Twenty reference nets covering every scale class.
pub fn net_catalog() -> Vec<CatalogNet> {
    use ScaleTag::*;
    let n = |label, expected, exact_slope, f| CatalogNet { label, expected, exact_slope, f };
    vec![
        n("one", SlowScale, Some(0.0), (|_| 1.0) as fn(f64) -> f64),
        n("const_7", SlowScale, Some(0.0), |_| 7.0),
        n("const_1e-3", SlowScale, Some(0.0), |_| 1e-3),
        n("log", SlowScale, None, |e| 1.0 + l2(e)),
        n("log_sq", SlowScale, None, |e| (1.0 + l2(e)).powi(2)),
        n("log_cube", SlowScale, None, |e| (1.0 + l2(e)).powi(3)),
        n("log_log", SlowScale, None, |e| 1.0 + (1.0 + l2(e)).log2()),
        n("sqrt_log", SlowScale, None, |e| (1.0 + l2(e)).sqrt()),
        n("eps^-0.5", Moderate, Some(0.5), |e| e.powf(-0.5)),
        n("eps^-1", Moderate, Some(1.0), |e| 1.0 / e),
        n("eps^-2", Moderate, Some(2.0), |e| e.powi(-2)),
        n("eps^-5", Moderate, Some(5.0), |e| e.powi(-5)),
        n("eps^-1*log", Moderate, None, |e| (1.0 + l2(e)) / e),
        n("eps^-2*log_sq", Moderate, None, |e| (1.0 + l2(e)).powi(2) / (e * e)),
        n("3*eps^-0.5", Moderate, Some(0.5), |e| 3.0 * e.powf(-0.5)),
        n("exp(-1/eps)", Negligible, None, |e| (-1.0 / e).exp()),
        n("eps*exp(-1/eps)", Negligible, None, |e| e * (-1.0 / e).exp()),
        n("exp(-1/eps^2)", Negligible, None, |e| (-1.0 / (e * e)).exp()),
        n("exp(eps^-0.75)", Unbounded, None, |e| e.powf(-0.75).exp()),
        n("eps^-1*exp(eps^-0.7)", Unbounded, None, |e| e.powf(-0.7).exp() / e),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_sizes() {
        assert!(fixture_catalog().len() >= 10);
        assert_eq!(net_catalog().len(), 20);
        let spec = GridSpec::new(2, 64).unwrap();
        let grid = EpsilonGrid::new(1, 6).unwrap();
        for f in fixture_catalog() {
            let want2 = f.dims.contains('2');
            let r = build_fixture(f.label, spec, grid);
            assert_eq!(r.is_ok(), want2, "{}", f.label);
        }
    }

    #[test]
    fn net_catalog_classifies() {
        let grid = EpsilonGrid::standard();
        let th = crate::nets::NetThresholds::default();
        for n in net_catalog() {
            let c = crate::nets::classify_scale(&n.sample(grid).unwrap(), &th).unwrap();
            assert_eq!(c.tag, n.expected, "{}", n.label);
            if let Some(s) = n.exact_slope {
                assert!((c.fit.slope - s).abs() < 1e-9, "{} {}", n.label, c.fit.slope);
            }
        }
    }

    #[test]
    fn delta_integrates_to_one() {
        let spec = GridSpec::new(1, 256).unwrap();
        let grid = EpsilonGrid::new(1, 8).unwrap();
        let d = delta_1d(&spec, &grid, 2f64.powi(-4), 1.0, DEFAULT_WIDTH);
        let s: f64 = d.iter().sum::<f64>() * spec.dx();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lorentzian_matches_direct_periodization() {
        let c = 3.0;
        let y = 0.7;
        let direct: f64 = (-20000..=20000).map(|n| 1.0 / (1.0 + c * (y + 2.0 * PI * f64::from(n)).powi(2))).sum();
        assert!((periodized_lorentzian(y, c) - direct).abs() < 1e-5);
    }

    #[test]
    fn heaviside2d_constant_along_x2() {
        let spec = GridSpec::new(2, 64).unwrap();
        let grid = EpsilonGrid::new(1, 6).unwrap();
        let h = heaviside2d(spec, grid, DEFAULT_WIDTH).unwrap();
        let g = spec.g;
        for row in 0..g {
            let first = h.data[2][row * g];
            assert!(h.data[2][row * g..(row + 1) * g].iter().all(|v| *v == first));
        }
    }
}
