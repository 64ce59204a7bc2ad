//! Scalar nets sampled on a dyadic ε-grid and their asymptotic classification.
//!
//! A net `f(ε)` is sampled at `ε_j = 2^-j`. Growth is measured as the slope of
//! `log₂ f(ε_j)` against `j`, so `f ≍ ε^-N` has slope `N`.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Values below this magnitude (including exact zeros) are recorded at the floor.
pub const FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsilonGrid {
    pub j_min: i32,
    pub j_max: i32,
}

impl EpsilonGrid {
    pub fn new(j_min: i32, j_max: i32) -> Result<Self> {
        if j_min < 1 {
            return Err(Error::InvalidGrid(format!("j_min = {j_min} must be >= 1")));
        }
        if j_max - j_min < 5 {
            return Err(Error::InvalidGrid(format!(
                "need at least 6 samples, got j = {j_min}..{j_max}"
            )));
        }
        if j_max > 60 {
            return Err(Error::InvalidGrid(format!("j_max = {j_max} exceeds 60")));
        }
        Ok(Self { j_min, j_max })
    }

    /// The default grid `j = 1..12`.
    pub fn standard() -> Self {
        Self { j_min: 1, j_max: 12 }
    }

    pub fn len(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn js(&self) -> impl Iterator<Item = i32> + Clone {
        self.j_min..=self.j_max
    }

    pub fn eps(&self, j: i32) -> f64 {
        (-(j as f64)).exp2()
    }

    pub fn eps_values(&self) -> Vec<f64> {
        self.js().map(|j| self.eps(j)).collect()
    }

    pub fn eps_min(&self) -> f64 {
        self.eps(self.j_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSample {
    pub grid: EpsilonGrid,
    /// `|f(ε_j)|`, clamped to [`FLOOR`] from below.
    pub values: Vec<f64>,
    pub below_floor: Vec<bool>,
}

impl NetSample {
    /// Builds a sample from raw magnitudes; fails on NaN or infinity.
    pub fn from_values(grid: EpsilonGrid, raw: &[f64]) -> Result<Self> {
        assert_eq!(raw.len(), grid.len(), "value count must match the grid");
        let mut values = Vec::with_capacity(raw.len());
        let mut below_floor = Vec::with_capacity(raw.len());
        for (j, &v) in grid.js().zip(raw) {
            if !v.is_finite() {
                return Err(Error::NonFinite { j });
            }
            let a = v.abs();
            if a < FLOOR {
                values.push(FLOOR);
                below_floor.push(true);
            } else {
                values.push(a);
                below_floor.push(false);
            }
        }
        Ok(Self { grid, values, below_floor })
    }

    pub fn log2_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.log2()).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map_pair(&self, other: &NetSample, f: impl Fn(f64, f64) -> f64) -> Result<NetSample> {
        let raw: Vec<f64> = self
            .values
            .iter()
            .zip(&self.below_floor)
            .zip(other.values.iter().zip(&other.below_floor))
            .map(|((&a, &fa), (&b, &fb))| {
                f(if fa { 0.0 } else { a }, if fb { 0.0 } else { b })
            })
            .collect();
        NetSample::from_values(self.grid, &raw)
    }

    pub fn scaled(&self, c: f64) -> Result<NetSample> {
        let raw: Vec<f64> = self
            .values
            .iter()
            .zip(&self.below_floor)
            .map(|(&v, &b)| if b { 0.0 } else { v * c })
            .collect();
        NetSample::from_values(self.grid, &raw)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,value\n");
        for (j, v) in self.grid.js().zip(&self.values) {
            out.push_str(&format!("{j},{v:e}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut js = Vec::new();
        let mut vals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `j,value`", i + 1)))?;
            js.push(a.trim().parse::<i32>().map_err(|e| Error::Parse(e.to_string()))?);
            vals.push(b.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?);
        }
        let (first, last) = match (js.first(), js.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Parse("empty net csv".into())),
        };
        let grid = EpsilonGrid::new(first, last)?;
        if js.iter().copied().ne(grid.js()) {
            return Err(Error::Parse("j column is not a contiguous ascending range".into()));
        }
        NetSample::from_values(grid, &vals)
    }
}

/// Samples `|f(ε_j)|` over the grid.
pub fn sample_net(f: impl Fn(f64) -> f64, grid: EpsilonGrid) -> Result<NetSample> {
    let raw: Vec<f64> = grid.js().map(|j| f(grid.eps(j))).collect();
    NetSample::from_values(grid, &raw)
}

fn ser_nonfinite<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthFit {
    /// Least-squares slope of `log₂ f` against `j` over the tail.
    #[serde(serialize_with = "ser_nonfinite")]
    pub slope: f64,
    #[serde(serialize_with = "ser_nonfinite")]
    pub intercept: f64,
    pub r_squared: f64,
    pub tail_fraction: f64,
    /// Extrapolated local slope `s∞` from `s_j ≈ s∞ + b/(j+½)`; used for the slow-scale test.
    #[serde(serialize_with = "ser_nonfinite")]
    pub limit_slope: f64,
    pub all_below_floor: bool,
}

/// Ordinary least squares `y ≈ a·x + b`, returning `(a, b, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy <= 1e-24 * (1.0 + my * my) {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

fn tail_len(count: usize, tail_fraction: f64) -> usize {
    ((tail_fraction * count as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn fit_growth_exponent(s: &NetSample, tail_fraction: f64) -> Result<GrowthFit> {
    let count = s.values.len();
    let t = tail_len(count, tail_fraction).min(count);
    if t < 3 {
        return Err(Error::DegenerateFit { usable: t });
    }
    let start = count - t;
    let js: Vec<f64> = s.grid.js().skip(start).map(f64::from).collect();
    let ys: Vec<f64> = s.values[start..].iter().map(|v| v.log2()).collect();
    let all_below = s.below_floor[start..].iter().all(|&b| b);
    if all_below {
        return Ok(GrowthFit {
            slope: f64::NEG_INFINITY,
            intercept: f64::NEG_INFINITY,
            r_squared: 1.0,
            tail_fraction,
            limit_slope: f64::NEG_INFINITY,
            all_below_floor: true,
        });
    }
    let (slope, intercept, r_squared) = linear_fit(&js, &ys);

    let local: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
    let inv: Vec<f64> = js.windows(2).map(|w| 1.0 / (0.5 * (w[0] + w[1]))).collect();
    let limit_slope = if local.len() >= 3 {
        linear_fit(&inv, &local).1
    } else {
        slope
    };
    Ok(GrowthFit { slope, intercept, r_squared, tail_fraction, limit_slope, all_below_floor: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetThresholds {
    pub slow_slope: f64,
    pub negligible_min_slope: f64,
    pub moderate_max_slope: f64,
    pub tail_fraction: f64,
}

impl Default for NetThresholds {
    fn default() -> Self {
        Self { slow_slope: 0.1, negligible_min_slope: 8.0, moderate_max_slope: 64.0, tail_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleTag {
    SlowScale,
    Moderate,
    Negligible,
    Unbounded,
}

impl ScaleTag {
    pub fn is_moderate(self) -> bool {
        !matches!(self, ScaleTag::Unbounded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleClass {
    pub tag: ScaleTag,
    pub exponent: Option<f64>,
    pub fit: GrowthFit,
}

impl ScaleClass {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scale class serializes")
    }
}

/// True iff `f(ε_j)·ε_j^-q` is non-increasing on the tail for every integer `q ≤ q_max`.
/// Floor values count as zero.
fn ratios_non_increasing(s: &NetSample, start: usize, q_max: f64) -> bool {
    let qmax = q_max.floor() as i32;
    let logs: Vec<Option<f64>> = s.values[start..]
        .iter()
        .zip(&s.below_floor[start..])
        .map(|(&v, &b)| if b { None } else { Some(v.log2()) })
        .collect();
    let js: Vec<i32> = s.grid.js().skip(start).collect();
    (0..=qmax).all(|q| {
        logs.windows(2).zip(js.windows(2)).all(|(w, jw)| match (w[0], w[1]) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(b)) => b + f64::from(q * jw[1]) <= a + f64::from(q * jw[0]) + 1e-12,
        })
    })
}

pub fn classify_scale(s: &NetSample, th: &NetThresholds) -> Result<ScaleClass> {
    let fit = fit_growth_exponent(s, th.tail_fraction)?;
    if fit.all_below_floor {
        return Ok(ScaleClass { tag: ScaleTag::Negligible, exponent: None, fit });
    }
    let count = s.values.len();
    let start = count - tail_len(count, th.tail_fraction).min(count);
    let logs = s.log2_values();
    let last_local = logs[count - 1] - logs[count - 2];
    if fit.slope.max(last_local) > th.moderate_max_slope {
        return Ok(ScaleClass { tag: ScaleTag::Unbounded, exponent: None, fit });
    }
    if ratios_non_increasing(s, start, th.negligible_min_slope) {
        return Ok(ScaleClass { tag: ScaleTag::Negligible, exponent: None, fit });
    }
    let bounded_below = s.below_floor.iter().all(|b| !b) && s.min_value() > 0.0;
    if fit.limit_slope <= th.slow_slope && fit.slope >= -th.slow_slope && bounded_below {
        return Ok(ScaleClass { tag: ScaleTag::SlowScale, exponent: None, fit });
    }
    Ok(ScaleClass { tag: ScaleTag::Moderate, exponent: Some(fit.slope), fit })
}

/// Whether the net decays at least like `ε^q_max`.
pub fn is_negligible_vs(s: &NetSample, q_max: i32, tail_fraction: f64) -> Result<bool> {
    let fit = fit_growth_exponent(s, tail_fraction)?;
    if fit.all_below_floor {
        return Ok(true);
    }
    let count = s.values.len();
    let start = count - tail_len(count, tail_fraction).min(count);
    let floors = &s.below_floor[start..];
    if floors.iter().any(|&b| b) {
        // An underflowing tail: the floor must come after every finite value,
        // and the finite part must already decay at rate q_max.
        let first_floor = floors.iter().position(|&b| b).unwrap_or(floors.len());
        if floors[first_floor..].iter().any(|&b| !b) {
            return Ok(false);
        }
        let logs: Vec<f64> = s.values[start..start + first_floor].iter().map(|v| v.log2()).collect();
        if logs.len() < 2 {
            return Ok(true);
        }
        let xs: Vec<f64> = (0..logs.len()).map(|i| i as f64).collect();
        let (slope, _, _) = linear_fit(&xs, &logs);
        return Ok(-slope >= f64::from(q_max));
    }
    Ok(-fit.slope >= f64::from(q_max) && fit.r_squared >= 0.8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_short_ranges() {
        assert!(EpsilonGrid::new(1, 5).is_err());
        assert!(EpsilonGrid::new(0, 10).is_err());
        assert_eq!(EpsilonGrid::new(1, 6).unwrap().len(), 6);
    }

    #[test]
    fn sample_powers_exact() {
        let s = sample_net(|e| e.powi(-2), EpsilonGrid::standard()).unwrap();
        assert_eq!(s.values[0], 4.0);
        assert_eq!(s.values[11], 2f64.powi(24));
    }

    #[test]
    fn sample_rejects_nan() {
        let r = sample_net(|e| if e < 0.01 { f64::NAN } else { 1.0 }, EpsilonGrid::standard());
        assert_eq!(r.unwrap_err(), Error::NonFinite { j: 7 });
    }

    #[test]
    fn exp_decay_hits_floor() {
        let s = sample_net(|e| (-1.0 / e).exp(), EpsilonGrid::standard()).unwrap();
        for (j, v) in s.grid.js().zip(&s.values) {
            if j >= 9 {
                assert!(*v < 1e-100);
            }
        }
        assert!(s.below_floor[11]);
    }

    #[test]
    fn degenerate_tail() {
        let s = sample_net(|_| 1.0, EpsilonGrid::new(1, 6).unwrap()).unwrap();
        assert!(matches!(fit_growth_exponent(&s, 0.3), Err(Error::DegenerateFit { usable: 2 })));
    }

    #[test]
    fn csv_round_trip() {
        let s = sample_net(|e| 3.0 + (1.0 / e).log2(), EpsilonGrid::standard()).unwrap();
        let back = NetSample::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn scale_class_json_shape() {
        let s = sample_net(|e| e.powf(-0.5), EpsilonGrid::standard()).unwrap();
        let c = classify_scale(&s, &NetThresholds::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["tag"], "Moderate");
        assert!((v["exponent"].as_f64().unwrap() - 0.5).abs() < 1e-9);
        assert!(v["fit"]["r_squared"].is_number());
    }
}
