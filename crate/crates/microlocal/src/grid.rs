//! Periodic grids on `[0, 2π)ⁿ`, per-ε grid function families, FFTs and the MLGF format.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{EpsilonGrid, NetSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub g: usize,
}

impl GridSpec {
    pub fn new(n: usize, g: usize) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(Error::InvalidSpec(format!("dimension {n} not in {{1, 2}}")));
        }
        if !g.is_power_of_two() {
            return Err(Error::InvalidSpec(format!("G = {g} is not a power of two")));
        }
        let max = if n == 1 { 1024 } else { 256 };
        if g < 64 || g > max {
            return Err(Error::InvalidSpec(format!("G = {g} outside [64, {max}] for n = {n}")));
        }
        Ok(Self { n, g })
    }

    /// Number of grid points `Gⁿ`.
    pub fn size(&self) -> usize {
        self.g.pow(self.n as u32)
    }

    pub fn dx(&self) -> f64 {
        2.0 * PI / self.g as f64
    }

    /// Quadrature weight `(2π/G)ⁿ`.
    pub fn weight(&self) -> f64 {
        self.dx().powi(self.n as i32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// Integer frequency of FFT bin `q`.
    pub fn freq(&self, q: usize) -> i64 {
        let g = self.g as i64;
        let q = q as i64;
        if q < g / 2 {
            q
        } else {
            q - g
        }
    }

    /// Multi-index of flat index `idx` (row-major).
    pub fn unflatten(&self, idx: usize) -> [usize; 2] {
        if self.n == 1 {
            [idx, 0]
        } else {
            [idx / self.g, idx % self.g]
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let m = self.unflatten(idx);
        (0..self.n).map(|a| self.coord(m[a])).collect()
    }

    pub fn frequency(&self, idx: usize) -> Vec<f64> {
        let m = self.unflatten(idx);
        (0..self.n).map(|a| self.freq(m[a]) as f64).collect()
    }
}

/// Unnormalized forward and inverse FFTs along every axis.
pub struct Spectral {
    spec: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(spec: GridSpec) -> Self {
        let mut p = FftPlanner::new();
        Self { spec, fwd: p.plan_fft_forward(spec.g), inv: p.plan_fft_inverse(spec.g) }
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let g = self.spec.g;
        if self.spec.n == 1 {
            plan.process(data);
            return;
        }
        plan.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); g];
        for c in 0..g {
            for r in 0..g {
                col[r] = data[r * g + c];
            }
            plan.process(&mut col);
            for r in 0..g {
                data[r * g + c] = col[r];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    /// Inverse transform including the `1/Gⁿ` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
        let s = 1.0 / self.spec.size() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunctionFamily {
    pub spec: GridSpec,
    pub eps_grid: EpsilonGrid,
    /// One array of `Gⁿ` values per `ε_j`, ascending `j`.
    pub data: Vec<Vec<Complex64>>,
    pub label: String,
}

impl GridFunctionFamily {
    pub fn new(spec: GridSpec, eps_grid: EpsilonGrid, data: Vec<Vec<Complex64>>, label: impl Into<String>) -> Result<Self> {
        if data.len() != eps_grid.len() {
            return Err(Error::InvalidSpec(format!("{} slices for {} ε values", data.len(), eps_grid.len())));
        }
        for (i, d) in data.iter().enumerate() {
            if d.len() != spec.size() {
                return Err(Error::InvalidSpec(format!("slice {i} has {} values, expected {}", d.len(), spec.size())));
            }
            if d.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonFinite { j: eps_grid.j_min + i as i32 });
            }
        }
        Ok(Self { spec, eps_grid, data, label: label.into() })
    }

    /// Samples `f(x, ε)` at every grid point.
    pub fn from_fn(spec: GridSpec, eps_grid: EpsilonGrid, label: &str, f: impl Fn(&[f64], f64) -> Complex64) -> Result<Self> {
        let data = eps_grid
            .js()
            .map(|j| {
                let e = eps_grid.eps(j);
                (0..spec.size()).map(|i| f(&spec.point(i), e)).collect()
            })
            .collect();
        Self::new(spec, eps_grid, data, label)
    }

    pub fn zeros_like(&self, label: &str) -> Self {
        Self {
            spec: self.spec,
            eps_grid: self.eps_grid,
            data: vec![vec![Complex64::new(0.0, 0.0); self.spec.size()]; self.data.len()],
            label: label.into(),
        }
    }

    pub fn max_norm_net(&self) -> Result<NetSample> {
        let raw: Vec<f64> = self.data.iter().map(|d| d.iter().map(|v| v.norm()).fold(0.0, f64::max)).collect();
        NetSample::from_values(self.eps_grid, &raw)
    }

    pub fn map_slices(&self, label: &str, mut f: impl FnMut(usize, &[Complex64]) -> Result<Vec<Complex64>>) -> Result<Self> {
        let data = self.data.iter().enumerate().map(|(i, d)| f(i, d)).collect::<Result<Vec<_>>>()?;
        Self::new(self.spec, self.eps_grid, data, label)
    }

    pub fn linear_combination(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        if self.spec != other.spec || self.eps_grid != other.eps_grid {
            return Err(Error::InvalidSpec("families live on different grids".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(u, v)| u.iter().zip(v).map(|(p, q)| a * p + b * q).collect())
            .collect();
        Self::new(self.spec, self.eps_grid, data, format!("{}+{}", self.label, other.label))
    }

    /// CSV of one ε-slice: `x,re,im` in 1D, `x1,x2,re,im` in 2D.
    /// Soft guard: a message when the smallest-ε slice keeps more than `1e-3` of its
    /// spectral peak at `|k|∞ ≥ 3G/8`, i.e. features are close to the grid scale.
    pub fn resolution_warning(&self) -> Option<String> {
        let mut f = self.data.last()?.clone();
        Spectral::new(self.spec).forward(&mut f);
        let cut = (3 * self.spec.g / 8) as i64;
        let (mut peak, mut tail) = (0.0f64, 0.0f64);
        for (i, v) in f.iter().enumerate() {
            let a = v.norm();
            peak = peak.max(a);
            let m = self.spec.unflatten(i);
            if (0..self.spec.n).any(|ax| self.spec.freq(m[ax]).abs() >= cut) {
                tail = tail.max(a);
            }
        }
        let ratio = if peak > 0.0 { tail / peak } else { 0.0 };
        (ratio > 1e-3).then(|| {
            let msg = format!("{}: spectral tail ratio {ratio:.3e} at eps_min; decay fits may be resolution-limited", self.label);
            log::warn!("{msg}");
            msg
        })
    }

    pub fn slice_csv(&self, eps_index: usize) -> String {
        let mut out = if self.spec.n == 1 { String::from("x,re,im\n") } else { String::from("x1,x2,re,im\n") };
        for (i, v) in self.data[eps_index].iter().enumerate() {
            let p = self.spec.point(i);
            let coords: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
            out.push_str(&format!("{},{},{}\n", coords.join(","), v.re, v.im));
        }
        out
    }

    pub fn write_mlgf<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"MLGF")?;
        for v in [1u32, self.spec.n as u32, self.spec.g as u32, self.data.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for slice in &self.data {
            for z in slice {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_mlgf_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 16 * self.spec.size() * self.data.len());
        self.write_mlgf(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads an MLGF stream. The format stores only the ε count, so the grid
    /// is rebuilt as `j_min .. j_min + count - 1`.
    pub fn read_mlgf<R: Read>(mut r: R, j_min: i32, label: &str) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MLGF" {
            return Err(Error::Format("bad magic, expected MLGF".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [version, n, g, count] = header;
        if version != 1 {
            return Err(Error::Format(format!("unsupported MLGF version {version}")));
        }
        let spec = GridSpec::new(n as usize, g as usize)?;
        let grid = EpsilonGrid::new(j_min, j_min + count as i32 - 1)?;
        let mut data = Vec::with_capacity(count as usize);
        let mut b8 = [0u8; 8];
        for _ in 0..count {
            let mut slice = Vec::with_capacity(spec.size());
            for _ in 0..spec.size() {
                r.read_exact(&mut b8)?;
                let re = f64::from_le_bytes(b8);
                r.read_exact(&mut b8)?;
                let im = f64::from_le_bytes(b8);
                slice.push(Complex64::new(re, im));
            }
            data.push(slice);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Self::new(spec, grid, data, label)
    }
}

/// Discrete `L²` inner product `Σ u·conj(v)·(2π/G)ⁿ`.
pub fn inner(spec: &GridSpec, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a * b.conj()).sum::<Complex64>() * spec.weight()
}

/// Bilinear pairing `Σ u·v·(2π/G)ⁿ`.
pub fn pairing(spec: &GridSpec, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<Complex64>() * spec.weight()
}

pub fn l2_norm(spec: &GridSpec, u: &[Complex64]) -> f64 {
    inner(spec, u, u).re.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_limits() {
        assert!(GridSpec::new(1, 1024).is_ok());
        assert!(GridSpec::new(2, 512).is_err());
        assert!(GridSpec::new(1, 96).is_err());
        assert!(GridSpec::new(3, 64).is_err());
    }

    #[test]
    fn fft_round_trip_2d() {
        let spec = GridSpec::new(2, 64).unwrap();
        let sp = Spectral::new(spec);
        let orig: Vec<Complex64> = (0..spec.size()).map(|i| Complex64::new((i as f64).sin(), (i % 7) as f64)).collect();
        let mut d = orig.clone();
        sp.forward(&mut d);
        sp.inverse(&mut d);
        let err = d.iter().zip(&orig).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn mlgf_round_trip_and_errors() {
        let spec = GridSpec::new(1, 64).unwrap();
        let grid = EpsilonGrid::new(2, 7).unwrap();
        let f = GridFunctionFamily::from_fn(spec, grid, "t", |x, e| Complex64::new(x[0] * e, -e)).unwrap();
        let bytes = f.to_mlgf_bytes();
        assert_eq!(&bytes[..4], b"MLGF");
        assert_eq!(bytes.len(), 20 + 16 * 64 * 6);
        let back = GridFunctionFamily::read_mlgf(&bytes[..], 2, "t").unwrap();
        assert_eq!(back, f);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(GridFunctionFamily::read_mlgf(&bad[..], 2, "t").is_err());
        assert!(GridFunctionFamily::read_mlgf(&bytes[..bytes.len() - 3], 2, "t").is_err());
    }
}
