//! Wave front estimation by directional Fourier decay of localized slices, G∞
//! verdicts and the micro-locality / noncharacteristic regularity checks.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Var;
use crate::grid::{GridFunctionFamily, GridSpec, Spectral};
use crate::nets::{classify_scale, fit_growth_exponent, linear_fit, EpsilonGrid, NetSample, NetThresholds};
use crate::quantize::quantize_kn;
use crate::symbols::{
    default_radii, microellipticity_report, microsupport_estimate, ConeGrid, EllipticVerdict, SamplingBox, SymbolFamily,
};

/// A `(cell, sector)` pair.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WindowKind {
    /// Smoothstep partition of unity: ramps one cell wide centred on the cell edges.
    Smoothstep,
    /// Error-function edges of width `ramp` cells on the exact cell, cut below `1e-17`.
    GaussianEdge { ramp: f64 },
}

#[derive(Debug, Clone)]
pub struct CellDecomposition {
    pub spec: GridSpec,
    pub per_axis: usize,
    pub kind: WindowKind,
    axis_windows: Vec<Vec<f64>>,
}

fn smoothstep_window(x: f64, a: f64, b: f64, h: f64) -> f64 {
    crate::expr::smoothstep((x - (a - h / 2.0)) / h) * crate::expr::smoothstep(((b + h / 2.0) - x) / h)
}

fn erf_window(x: f64, a: f64, b: f64, s: f64) -> f64 {
    let r = std::f64::consts::SQRT_2 * s;
    0.5 * (libm::erf((x - a) / r) - libm::erf((x - b) / r))
}

/// Window of cell `c` along one axis, sampled on `g` points.
fn axis_window(kind: WindowKind, per_axis: usize, c: usize, g: usize) -> Vec<f64> {
    let h = 2.0 * PI / per_axis as f64;
    let (a, b) = (c as f64 * h, (c + 1) as f64 * h);
    (0..g)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / g as f64;
            let v: f64 = (-2..=2)
                .map(|m| {
                    let xx = x + 2.0 * PI * f64::from(m);
                    match kind {
                        WindowKind::Smoothstep => smoothstep_window(xx, a, b, h),
                        WindowKind::GaussianEdge { ramp } => erf_window(xx, a, b, ramp * h),
                    }
                })
                .sum();
            match kind {
                WindowKind::GaussianEdge { .. } if v < 1e-17 => 0.0,
                _ => v,
            }
        })
        .collect()
}

impl CellDecomposition {
    pub fn new(spec: GridSpec, per_axis: usize) -> Result<Self> {
        Self::with_kind(spec, per_axis, WindowKind::Smoothstep)
    }

    pub fn with_kind(spec: GridSpec, per_axis: usize, kind: WindowKind) -> Result<Self> {
        if per_axis < 2 || spec.g % per_axis != 0 {
            return Err(Error::InvalidSpec(format!("C = {per_axis} must be at least 2 and divide G = {}", spec.g)));
        }
        if let WindowKind::GaussianEdge { ramp } = kind {
            if !(ramp > 0.0 && ramp <= 1.0) {
                return Err(Error::InvalidSpec(format!("window ramp {ramp} outside (0, 1]")));
            }
        }
        let axis_windows = (0..per_axis).map(|c| axis_window(kind, per_axis, c, spec.g)).collect();
        Ok(Self { spec, per_axis, kind, axis_windows })
    }

    pub fn count(&self) -> usize {
        self.per_axis.pow(self.spec.n as u32)
    }

    pub fn cell_width(&self) -> f64 {
        2.0 * PI / self.per_axis as f64
    }

    /// Per-axis cell indices of `cell`.
    pub fn coords(&self, cell: usize) -> [usize; 2] {
        if self.spec.n == 1 {
            [cell, 0]
        } else {
            [cell / self.per_axis, cell % self.per_axis]
        }
    }

    pub fn index(&self, c: [usize; 2]) -> usize {
        if self.spec.n == 1 {
            c[0]
        } else {
            c[0] * self.per_axis + c[1]
        }
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let c = self.coords(cell);
        (0..self.spec.n).map(|a| (c[a] as f64 + 0.5) * self.cell_width()).collect()
    }

    /// Cell whose closed box contains `x` (torus coordinates).
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let h = self.cell_width();
        let mut c = [0usize; 2];
        for (a, v) in x.iter().enumerate().take(self.spec.n) {
            c[a] = ((v.rem_euclid(2.0 * PI) / h).floor() as usize).min(self.per_axis - 1);
        }
        self.index(c)
    }

    /// Cells whose box meets `x`, including both neighbours when `x` lies on an edge.
    pub fn cells_meeting(&self, x: &[f64]) -> Vec<usize> {
        let h = self.cell_width();
        let per_axis: Vec<Vec<usize>> = x
            .iter()
            .take(self.spec.n)
            .map(|v| {
                let t = v.rem_euclid(2.0 * PI) / h;
                let f = t.floor();
                let mut cs = vec![(f as usize) % self.per_axis];
                if (t - f).abs() < 1e-9 {
                    cs.push((f as usize + self.per_axis - 1) % self.per_axis);
                }
                cs
            })
            .collect();
        let mut out = Vec::new();
        if self.spec.n == 1 {
            out.extend(per_axis[0].iter().copied());
        } else {
            for &a in &per_axis[0] {
                for &b in &per_axis[1] {
                    out.push(self.index([a, b]));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Window values on the full grid.
    pub fn window(&self, cell: usize) -> Vec<f64> {
        let c = self.coords(cell);
        if self.spec.n == 1 {
            self.axis_windows[c[0]].clone()
        } else {
            let (wa, wb) = (&self.axis_windows[c[0]], &self.axis_windows[c[1]]);
            wa.iter().flat_map(|&u| wb.iter().map(move |&v| u * v)).collect()
        }
    }

    /// Minimum over the grid of the summed windows.
    pub fn cover_min(&self) -> f64 {
        let g = self.spec.g;
        let axis_sum: Vec<f64> = (0..g).map(|i| self.axis_windows.iter().map(|w| w[i]).sum()).collect();
        let m = axis_sum.iter().copied().fold(f64::INFINITY, f64::min);
        if self.spec.n == 1 {
            m
        } else {
            m * m
        }
    }

    /// Periodic Chebyshev distance between cells, in cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let (ca, cb) = (self.coords(a), self.coords(b));
        (0..self.spec.n)
            .map(|ax| {
                let d = (ca[ax] as isize - cb[ax] as isize).rem_euclid(self.per_axis as isize) as usize;
                d.min(self.per_axis - d)
            })
            .max()
            .unwrap_or(0)
    }

    /// Sampling box covering one cell, for symbol estimates.
    pub fn sampling_box(&self, cell: usize) -> SamplingBox {
        let n = self.spec.n;
        SamplingBox::new(self.center(cell), vec![self.cell_width() / 2.0; n], 9)
    }

    pub fn sampling_boxes(&self) -> Vec<SamplingBox> {
        (0..self.count()).map(|c| self.sampling_box(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WavefrontConfig {
    pub tau_dir: f64,
    pub n_max: f64,
    pub max_l: usize,
    /// Number of smallest-ε samples in each `N(l)` fit.
    pub tail_points: usize,
    pub dilation_cells: usize,
    pub dilation_sectors: usize,
}

impl Default for WavefrontConfig {
    fn default() -> Self {
        Self { tau_dir: 0.15, n_max: 40.0, max_l: 8, tail_points: 3, dilation_cells: 1, dilation_sectors: 1 }
    }
}

/// `M[cell][sector][l][ε] = max_{k ∈ sector, |k| ≥ r_min} ⟨k⟩^l |(φ_cell u_ε)^(k)|`.
#[derive(Debug, Clone, Serialize)]
pub struct DirectionalDecayTable {
    pub cells: usize,
    pub sectors: usize,
    pub max_l: usize,
    #[serde(skip)]
    pub eps_grid: EpsilonGrid,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl DirectionalDecayTable {
    fn idx(&self, cell: usize, sector: usize, l: usize, e: usize) -> usize {
        ((cell * self.sectors + sector) * (self.max_l + 1) + l) * self.eps_grid.len() + e
    }

    pub fn get(&self, cell: usize, sector: usize, l: usize, e: usize) -> f64 {
        self.values[self.idx(cell, sector, l, e)]
    }

    pub fn series(&self, cell: usize, sector: usize, l: usize) -> Vec<f64> {
        (0..self.eps_grid.len()).map(|e| self.get(cell, sector, l, e)).collect()
    }
}

/// Frequencies with some `|k_i| > BAND_FRACTION · G` are not examined.
pub const BAND_FRACTION: f64 = 0.44;

/// Windowed Fourier magnitudes below this fraction of `Σ|u|` are treated as roundoff.
pub const NOISE_FLOOR: f64 = 1e-12;

pub fn decay_table(
    u: &GridFunctionFamily,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    max_l: usize,
) -> Result<DirectionalDecayTable> {
    if cells.spec != u.spec || cones.n != u.spec.n {
        return Err(Error::InvalidSpec("decomposition, cones and family disagree on the grid".into()));
    }
    let spec = u.spec;
    let size = spec.size();
    let sectors = cones.count();
    let ne = u.eps_grid.len();
    // Window products wrap around the spectral box; only the inner band is examined.
    let band = BAND_FRACTION * spec.g as f64;
    // Per frequency: sectors containing it and the weights ⟨k⟩^l.
    let mut freq_sectors: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for q in 0..size {
        let k = spec.frequency(q);
        let r = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < cones.min_radius || k.iter().any(|v| v.abs() > band) {
            continue;
        }
        let ss = cones.sectors_of(&k);
        if ss.is_empty() {
            continue;
        }
        let br = (1.0 + r * r).sqrt();
        weights.extend((0..=max_l).map(|l| br.powi(l as i32)));
        freq_sectors.push((q, ss));
    }
    let sp = Spectral::new(spec);
    let windows: Vec<Vec<f64>> = (0..cells.count()).map(|c| cells.window(c)).collect();
    let mut values = vec![0.0; cells.count() * sectors * (max_l + 1) * ne];
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    let stride_l = ne;
    for (e, slice) in u.data.iter().enumerate() {
        let floor = NOISE_FLOOR * slice.iter().map(|v| v.norm()).sum::<f64>();
        for (cell, w) in windows.iter().enumerate() {
            for ((b, v), wv) in buf.iter_mut().zip(slice).zip(w) {
                *b = v * wv;
            }
            sp.forward(&mut buf);
            for (fi, (q, ss)) in freq_sectors.iter().enumerate() {
                let a = buf[*q].norm();
                if a <= floor {
                    continue;
                }
                let wl = &weights[fi * (max_l + 1)..(fi + 1) * (max_l + 1)];
                for &s in ss {
                    let base = (cell * sectors + s) * (max_l + 1) * ne + e;
                    for (l, wv) in wl.iter().enumerate() {
                        let slot = &mut values[base + l * stride_l];
                        let m = a * wv;
                        if m > *slot {
                            *slot = m;
                        }
                    }
                }
            }
        }
    }
    let warnings = u.resolution_warning().into_iter().collect();
    Ok(DirectionalDecayTable { cells: cells.count(), sectors, max_l, eps_grid: u.eps_grid, values, warnings })
}

#[derive(Debug, Clone, Serialize)]
pub struct LFit {
    pub l: usize,
    pub n: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityVerdict {
    pub regular: bool,
    pub n_slope_vs_l: f64,
    pub n_at_l0: f64,
    pub details: Vec<LFit>,
}

/// Fit quality required of every `N(l)` fit above `τ_dir`.
pub const MIN_R_SQUARED: f64 = 0.7;
/// Largest spread of derivative exponents over `N_0` still counted as one exponent.
pub const GINF_SPREAD: f64 = 0.75;

/// `N(l)` = ε-exponent of `M(l, ·)` over the smallest-ε tail, clamped at 0; regular iff
/// the slope of `N` against `l` stays below `τ_dir`, `N(0) ≤ N_max`, and every fit with
/// `N(l) > τ_dir` has `r² ≥` [`MIN_R_SQUARED`].
pub fn direction_verdict(t: &DirectionalDecayTable, cell: usize, sector: usize, cfg: &WavefrontConfig) -> Result<RegularityVerdict> {
    if t.max_l + 1 < 4 {
        return Err(Error::DegenerateFit { usable: t.max_l + 1 });
    }
    let frac = cfg.tail_points as f64 / t.eps_grid.len() as f64;
    let mut details = Vec::with_capacity(t.max_l + 1);
    for l in 0..=t.max_l {
        let net = NetSample::from_values(t.eps_grid, &t.series(cell, sector, l))?;
        let fit = fit_growth_exponent(&net, frac)?;
        let n = if fit.slope.is_finite() { fit.slope.max(0.0) } else { 0.0 };
        details.push(LFit { l, n, r_squared: fit.r_squared });
    }
    let ls: Vec<f64> = details.iter().map(|d| d.l as f64).collect();
    let ns: Vec<f64> = details.iter().map(|d| d.n).collect();
    let slope = linear_fit(&ls, &ns).0;
    let n0 = ns[0];
    let fits_ok = details.iter().all(|d| d.n <= cfg.tau_dir || d.r_squared >= MIN_R_SQUARED);
    Ok(RegularityVerdict { regular: slope <= cfg.tau_dir && n0 <= cfg.n_max && fits_ok, n_slope_vs_l: slope, n_at_l0: n0, details })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellVerdict {
    pub cell: usize,
    pub sector: usize,
    pub verdict: RegularityVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct WavefrontEstimate {
    pub n: usize,
    pub cells_per_axis: usize,
    pub sectors: usize,
    pub theta_centers: Vec<f64>,
    pub verdicts: Vec<CellVerdict>,
    pub config: WavefrontConfig,
    pub warnings: Vec<String>,
}

impl WavefrontEstimate {
    pub fn verdict(&self, cell: usize, sector: usize) -> &RegularityVerdict {
        &self.verdicts[cell * self.sectors + sector].verdict
    }

    pub fn is_singular(&self, cell: usize, sector: usize) -> bool {
        !self.verdict(cell, sector).regular
    }

    pub fn singular_set(&self) -> BTreeSet<Pair> {
        self.verdicts.iter().filter(|v| !v.verdict.regular).map(|v| (v.cell, v.sector)).collect()
    }

    pub fn singular_cells(&self) -> Vec<usize> {
        let s: BTreeSet<usize> = self.singular_set().into_iter().map(|p| p.0).collect();
        s.into_iter().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_set().is_empty()
    }

    /// Whether both estimates mark the same pairs singular.
    pub fn same_verdicts(&self, other: &WavefrontEstimate) -> bool {
        self.singular_set() == other.singular_set()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_x,cell_y,sector,theta_center,regular,N0,slope\n");
        for v in &self.verdicts {
            let (cx, cy) = if self.n == 1 {
                (v.cell, 0)
            } else {
                (v.cell / self.cells_per_axis, v.cell % self.cells_per_axis)
            };
            out.push_str(&format!(
                "{cx},{cy},{},{},{},{},{}\n",
                v.sector,
                crate::symbols::fmt_f(self.theta_centers[v.sector]),
                v.verdict.regular,
                crate::symbols::fmt_f(v.verdict.n_at_l0),
                crate::symbols::fmt_f(v.verdict.n_slope_vs_l)
            ));
        }
        out
    }
}

pub fn estimate_from_table(t: &DirectionalDecayTable, cells: &CellDecomposition, cones: &ConeGrid, cfg: &WavefrontConfig) -> Result<WavefrontEstimate> {
    let mut verdicts = Vec::with_capacity(t.cells * t.sectors);
    for cell in 0..t.cells {
        for sector in 0..t.sectors {
            verdicts.push(CellVerdict { cell, sector, verdict: direction_verdict(t, cell, sector, cfg)? });
        }
    }
    Ok(WavefrontEstimate {
        n: cells.spec.n,
        cells_per_axis: cells.per_axis,
        sectors: t.sectors,
        theta_centers: (0..cones.count()).map(|s| cones.center_angle(s)).collect(),
        verdicts,
        config: *cfg,
        warnings: t.warnings.clone(),
    })
}

pub fn wavefront_estimate(
    u: &GridFunctionFamily,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<WavefrontEstimate> {
    let t = decay_table(u, cells, cones, cfg.max_l)?;
    estimate_from_table(&t, cells, cones, cfg)
}

/// Cells with at least one singular sector.
pub fn singsupp_estimate(u: &GridFunctionFamily, cells: &CellDecomposition, cones: &ConeGrid, cfg: &WavefrontConfig) -> Result<Vec<usize>> {
    Ok(wavefront_estimate(u, cells, cones, cfg)?.singular_cells())
}

#[derive(Debug, Clone, Serialize)]
pub struct GinfReport {
    pub verdict: bool,
    pub n0: f64,
    /// `(α, N_α)` for every tested multi-index.
    pub exponents: Vec<(Vec<usize>, f64)>,
    /// `(k, max_{|α|=k} N_α)`.
    pub per_order: Vec<(usize, f64)>,
    /// Least-squares slope of the per-order exponents against `k`.
    pub slope_per_order: f64,
    pub all_moderate: bool,
    pub warnings: Vec<String>,
}

/// G∞ test: one ε-exponent for all spectral derivatives up to order `d_max`.
pub fn ginf_verdict(u: &GridFunctionFamily, d_max: usize) -> Result<GinfReport> {
    let th = NetThresholds::default();
    let spec = u.spec;
    let sp = Spectral::new(spec);
    let hats: Vec<Vec<Complex64>> = u
        .data
        .iter()
        .map(|d| {
            let mut f = d.clone();
            sp.forward(&mut f);
            f
        })
        .collect();
    let nyq = -(spec.g as i64) / 2;
    let alphas: Vec<Vec<usize>> = if spec.n == 1 {
        (0..=d_max).map(|k| vec![k]).collect()
    } else {
        (0..=d_max).flat_map(|k| (0..=k).rev().map(move |a| vec![a, k - a])).collect()
    };
    let mut exponents = Vec::new();
    let mut all_moderate = true;
    for alpha in &alphas {
        let raw: Vec<f64> = hats
            .iter()
            .map(|h| {
                let mut f: Vec<Complex64> = h
                    .iter()
                    .enumerate()
                    .map(|(q, v)| {
                        let m = spec.unflatten(q);
                        let mut mult = Complex64::new(1.0, 0.0);
                        for (ax, &p) in alpha.iter().enumerate() {
                            if p == 0 {
                                continue;
                            }
                            let k = spec.freq(m[ax]);
                            if k == nyq {
                                return Complex64::new(0.0, 0.0);
                            }
                            mult *= Complex64::new(0.0, k as f64).powu(p as u32);
                        }
                        v * mult
                    })
                    .collect();
                sp.inverse(&mut f);
                f.iter().map(|v| v.norm()).fold(0.0, f64::max)
            })
            .collect();
        let net = NetSample::from_values(u.eps_grid, &raw)?;
        let class = classify_scale(&net, &th)?;
        all_moderate &= class.tag.is_moderate();
        let n = if class.fit.slope.is_finite() { class.fit.slope } else { 0.0 };
        exponents.push((alpha.clone(), n));
    }
    let n0 = exponents[0].1;
    let per_order: Vec<(usize, f64)> = (0..=d_max)
        .map(|k| {
            let m = exponents
                .iter()
                .filter(|(a, _)| a.iter().sum::<usize>() == k)
                .map(|e| e.1)
                .fold(f64::NEG_INFINITY, f64::max);
            (k, m)
        })
        .collect();
    let xs: Vec<f64> = per_order.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = per_order.iter().map(|p| p.1).collect();
    let slope_per_order = linear_fit(&xs, &ys).0;
    let worst = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let verdict = all_moderate && worst - n0 <= GINF_SPREAD;
    Ok(GinfReport { verdict, n0, exponents, per_order, slope_per_order, all_moderate, warnings: u.resolution_warning().into_iter().collect() })
}

/// All pairs within the configured cell and sector distance of `set`.
/// Sector dilation applies only when there are more than two sectors.
pub fn dilate(set: &BTreeSet<Pair>, cells: &CellDecomposition, cones: &ConeGrid, cfg: &WavefrontConfig) -> BTreeSet<Pair> {
    let mut out = BTreeSet::new();
    let ds = if cones.count() > 2 { cfg.dilation_sectors } else { 0 };
    for &(c, s) in set {
        for c2 in 0..cells.count() {
            if cells.cell_distance(c, c2) > cfg.dilation_cells {
                continue;
            }
            for s2 in 0..cones.count() {
                if cones.sector_distance(s, s2) <= ds {
                    out.insert((c2, s2));
                }
            }
        }
    }
    out
}

/// Pairs of `left` outside the dilation of `right`.
pub fn uncovered(left: &BTreeSet<Pair>, right: &BTreeSet<Pair>, cells: &CellDecomposition, cones: &ConeGrid, cfg: &WavefrontConfig) -> Vec<Pair> {
    let d = dilate(right, cells, cones, cfg);
    left.iter().filter(|p| !d.contains(p)).copied().collect()
}

/// Runs `f` on one box and copies the result to every cell when `a` does not depend on `x`.
fn per_cell<T: Clone>(
    a: &SymbolFamily,
    cells: &CellDecomposition,
    f: impl Fn(&[SamplingBox]) -> Result<Vec<T>>,
    rebox: impl Fn(&T, usize) -> T,
) -> Result<Vec<T>> {
    let boxes = cells.sampling_boxes();
    if a.expr.depends_on(|v| matches!(v, Var::X(_))) {
        return f(&boxes);
    }
    let one = f(&boxes[..1])?;
    let rebox = &rebox;
    Ok((0..cells.count()).flat_map(|c| one.iter().map(move |t| rebox(t, c))).collect())
}

/// `µsupp_g(a)` on the decomposition: pairs whose sector is not smoothing over the cell.
pub fn microsupport_pairs(a: &SymbolFamily, cells: &CellDecomposition, cones: &ConeGrid, grid: EpsilonGrid) -> Result<BTreeSet<Pair>> {
    let cellsv = per_cell(
        a,
        cells,
        |b| Ok(microsupport_estimate(a, b, cones, grid, &[-4.0, -2.0, 0.0])?.cells),
        |t, c| {
            let mut t = t.clone();
            t.box_id = c;
            t
        },
    )?;
    Ok(cellsv.iter().filter(|c| !c.smoothing).map(|c| (c.box_id, c.sector)).collect())
}

/// Complement of the slow-scale elliptic region, `Ell_sc(a)ᶜ`, on the decomposition.
pub fn non_elliptic_pairs(a: &SymbolFamily, cells: &CellDecomposition, cones: &ConeGrid, grid: EpsilonGrid) -> Result<BTreeSet<Pair>> {
    let cellsv = per_cell(
        a,
        cells,
        |b| Ok(microellipticity_report(a, b, cones, grid, &default_radii())?.cells),
        |t, c| {
            let mut t = t.clone();
            t.box_id = c;
            t
        },
    )?;
    Ok(cellsv.iter().filter(|c| c.verdict != EllipticVerdict::SlowScaleElliptic).map(|c| (c.box_id, c.sector)).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct InclusionCheck {
    pub name: String,
    pub pass: bool,
    pub offending: Vec<Pair>,
}

impl InclusionCheck {
    fn new(name: &str, left: &BTreeSet<Pair>, right: &BTreeSet<Pair>, cells: &CellDecomposition, cones: &ConeGrid, cfg: &WavefrontConfig) -> Self {
        let offending = uncovered(left, right, cells, cones, cfg);
        Self { name: name.into(), pass: offending.is_empty(), offending }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MicrolocalityReport {
    pub pass: bool,
    pub wf_u: Vec<Pair>,
    pub wf_au: Vec<Pair>,
    pub microsupport: Vec<Pair>,
    pub checks: Vec<InclusionCheck>,
    pub warnings: Vec<String>,
}

/// `WF(a(x,D)u) ⊆ WF(u) ∩ µsupp_g(a)` with dilation.
pub fn verify_microlocality(
    a: &SymbolFamily,
    u: &GridFunctionFamily,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<MicrolocalityReport> {
    let au = quantize_kn(a, u)?;
    let wf_u = wavefront_estimate(u, cells, cones, cfg)?;
    let wf_au = wavefront_estimate(&au, cells, cones, cfg)?;
    let mu = microsupport_pairs(a, cells, cones, u.eps_grid)?;
    let (su, sau) = (wf_u.singular_set(), wf_au.singular_set());
    let checks = vec![
        InclusionCheck::new("WF(Au) in WF(u)", &sau, &su, cells, cones, cfg),
        InclusionCheck::new("WF(Au) in musupp(a)", &sau, &mu, cells, cones, cfg),
    ];
    let mut warnings = wf_u.warnings.clone();
    warnings.extend(wf_au.warnings.iter().cloned());
    Ok(MicrolocalityReport {
        pass: checks.iter().all(|c| c.pass),
        wf_u: su.into_iter().collect(),
        wf_au: sau.into_iter().collect(),
        microsupport: mu.into_iter().collect(),
        checks,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NoncharacteristicReport {
    pub pass: bool,
    pub wf_u: Vec<Pair>,
    pub wf_pu: Vec<Pair>,
    pub non_elliptic: Vec<Pair>,
    pub checks: Vec<InclusionCheck>,
    pub warnings: Vec<String>,
}

/// `WF(Pu) ⊆ WF(u) ⊆ WF(Pu) ∪ Ell_sc(p)ᶜ` with dilation.
pub fn verify_noncharacteristic(
    a: &SymbolFamily,
    u: &GridFunctionFamily,
    cells: &CellDecomposition,
    cones: &ConeGrid,
    cfg: &WavefrontConfig,
) -> Result<NoncharacteristicReport> {
    let pu = quantize_kn(a, u)?;
    let wf_u = wavefront_estimate(u, cells, cones, cfg)?;
    let wf_pu = wavefront_estimate(&pu, cells, cones, cfg)?;
    let ne = non_elliptic_pairs(a, cells, cones, u.eps_grid)?;
    let (su, spu) = (wf_u.singular_set(), wf_pu.singular_set());
    let union: BTreeSet<Pair> = spu.union(&ne).copied().collect();
    let checks = vec![
        InclusionCheck::new("WF(Pu) in WF(u)", &spu, &su, cells, cones, cfg),
        InclusionCheck::new("WF(u) in WF(Pu) + Char", &su, &union, cells, cones, cfg),
    ];
    let mut warnings = wf_u.warnings.clone();
    warnings.extend(wf_pu.warnings.iter().cloned());
    Ok(NoncharacteristicReport {
        pass: checks.iter().all(|c| c.pass),
        wf_u: su.into_iter().collect(),
        wf_pu: spu.into_iter().collect(),
        non_elliptic: ne.into_iter().collect(),
        checks,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1() -> GridSpec {
        GridSpec::new(1, 256).unwrap()
    }

    #[test]
    fn partition_of_unity() {
        let c = CellDecomposition::new(spec1(), 8).unwrap();
        assert!((c.cover_min() - 1.0).abs() < 1e-12);
        let g = CellDecomposition::with_kind(GridSpec::new(2, 64).unwrap(), 4, WindowKind::GaussianEdge { ramp: 0.25 }).unwrap();
        assert!(g.cover_min() >= 0.9);
        assert!(CellDecomposition::new(spec1(), 3).is_err());
    }

    #[test]
    fn cells_meeting_edges() {
        let c = CellDecomposition::new(spec1(), 8).unwrap();
        assert_eq!(c.cells_meeting(&[0.1]), vec![0]);
        assert_eq!(c.cells_meeting(&[PI]), vec![3, 4]);
        assert_eq!(c.cell_distance(0, 7), 1);
    }

    #[test]
    fn smooth_function_has_empty_wavefront() {
        let spec = spec1();
        let grid = EpsilonGrid::new(1, 8).unwrap();
        let u = GridFunctionFamily::from_fn(spec, grid, "sin", |x, _| Complex64::new(x[0].sin(), 0.0)).unwrap();
        let cells = CellDecomposition::new(spec, 8).unwrap();
        let cones = ConeGrid::new(1, 2, 2.0);
        let wf = wavefront_estimate(&u, &cells, &cones, &WavefrontConfig::default()).unwrap();
        assert!(wf.is_empty());
        assert!(ginf_verdict(&u, 6).unwrap().verdict);
    }

    #[test]
    fn plane_wave_sector() {
        let spec = GridSpec::new(2, 64).unwrap();
        let grid = EpsilonGrid::new(1, 6).unwrap();
        let u = GridFunctionFamily::from_fn(spec, grid, "wave", |x, _| Complex64::from_polar(1.0, 5.0 * x[1])).unwrap();
        let cells = CellDecomposition::new(spec, 4).unwrap();
        let cones = ConeGrid::new(2, 16, 2.0);
        let t = decay_table(&u, &cells, &cones, 2).unwrap();
        let m4 = t.get(0, 4, 0, 0);
        let m0 = t.get(0, 0, 0, 0);
        assert!(m4 > 10.0 * m0, "{m4} {m0}");
    }

    #[test]
    fn dilation_semantics() {
        let spec = GridSpec::new(2, 64).unwrap();
        let cells = CellDecomposition::new(spec, 4).unwrap();
        let cones = ConeGrid::new(2, 16, 2.0);
        let cfg = WavefrontConfig::default();
        let set: BTreeSet<Pair> = [(0, 0)].into_iter().collect();
        let d = dilate(&set, &cells, &cones, &cfg);
        assert!(d.contains(&(cells.index([3, 3]), 15)));
        assert!(!d.contains(&(cells.index([2, 0]), 0)));
        assert!(!d.contains(&(0, 2)));
        let cones1 = ConeGrid::new(1, 2, 2.0);
        let c1 = CellDecomposition::new(spec1(), 8).unwrap();
        let d1 = dilate(&[(0, 0)].into_iter().collect(), &c1, &cones1, &cfg);
        assert!(!d1.contains(&(0, 1)));
    }
}
