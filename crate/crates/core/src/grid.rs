//! Uniform periodic grid samples of scalar, vector and tensor fields.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Scalar,
    Vector,
    Tensor,
}

impl Rank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::Tensor => dim * dim,
        }
    }
}

/// Samples on the nodes `x_i = i * extent / nodes` of a periodic box.
///
/// Node index is `ix + nx * iz` (x fastest). Tensor components are stored
/// row-major: row = component, column = derivative direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub extent: Vec<f64>,
    pub nodes: Vec<usize>,
    pub rank: Rank,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    extent: Vec<f64>,
    nodes: Vec<usize>,
    rank: Rank,
    order: String,
    dtype: String,
}

impl GridField {
    pub fn zeros(extent: &[f64], nodes: &[usize], rank: Rank) -> Result<Self> {
        validate_shape(extent, nodes)?;
        let n: usize = nodes.iter().product();
        let nc = rank.components(nodes.len());
        Ok(Self {
            extent: extent.to_vec(),
            nodes: nodes.to_vec(),
            rank,
            values: vec![vec![0.0; n]; nc],
        })
    }

    pub fn new(extent: &[f64], nodes: &[usize], rank: Rank, values: Vec<Vec<f64>>) -> Result<Self> {
        validate_shape(extent, nodes)?;
        let n: usize = nodes.iter().product();
        if values.len() != rank.components(nodes.len()) || values.iter().any(|c| c.len() != n) {
            return Err(Error::Grid("component count or length mismatch".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("grid field contains non-finite samples".into()));
        }
        Ok(Self {
            extent: extent.to_vec(),
            nodes: nodes.to_vec(),
            rank,
            values,
        })
    }

    /// Sample a scalar closed form on a 2D grid.
    pub fn from_fn2(extent: [f64; 2], nodes: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut g = Self::zeros(&extent, &nodes, Rank::Scalar)?;
        let (dx, dy) = (extent[0] / nodes[0] as f64, extent[1] / nodes[1] as f64);
        for iz in 0..nodes[1] {
            for ix in 0..nodes[0] {
                g.values[0][ix + nodes[0] * iz] = f(ix as f64 * dx, iz as f64 * dy);
            }
        }
        Ok(g)
    }

    pub fn from_fn1(length: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut g = Self::zeros(&[length], &[n], Rank::Scalar)?;
        let dx = length / n as f64;
        for i in 0..n {
            g.values[0][i] = f(i as f64 * dx);
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.nodes[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        out
    }

    pub fn component(&self, c: usize) -> Self {
        Self {
            extent: self.extent.clone(),
            nodes: self.nodes.clone(),
            rank: Rank::Scalar,
            values: vec![self.values[c].clone()],
        }
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let nx = self.nodes[0];
        let x = (idx % nx) as f64 * self.spacing(0);
        let z = if self.dim() > 1 {
            (idx / nx) as f64 * self.spacing(1)
        } else {
            0.0
        };
        (x, z)
    }

    /// Spectral derivative of every component along `axis`.
    pub fn derivative(&self, axis: usize) -> Self {
        let mut out = self.clone();
        for c in out.values.iter_mut() {
            *c = spectral_derivative(c, &self.nodes, &self.extent, axis);
        }
        out
    }

    pub fn write(&self, prefix: &Path) -> Result<()> {
        let header = Header {
            extent: self.extent.clone(),
            nodes: self.nodes.clone(),
            rank: self.rank,
            order: "row-major".into(),
            dtype: "f64le".into(),
        };
        fs::write(prefix.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        let mut f = fs::File::create(prefix.with_extension("bin"))?;
        let mut buf = Vec::with_capacity(8 * self.len() * self.values.len());
        for v in self.values.iter().flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read(prefix: &Path) -> Result<Self> {
        let header: Header = serde_json::from_str(&fs::read_to_string(prefix.with_extension("json"))?)?;
        if header.dtype != "f64le" || header.order != "row-major" {
            return Err(Error::Grid(format!("unsupported layout {}/{}", header.order, header.dtype)));
        }
        let bytes = fs::read(prefix.with_extension("bin"))?;
        let n: usize = header.nodes.iter().product();
        let nc = header.rank.components(header.nodes.len());
        if bytes.len() != 8 * n * nc {
            return Err(Error::Grid(format!("expected {} bytes, found {}", 8 * n * nc, bytes.len())));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let values = flat.chunks(n).map(|c| c.to_vec()).collect();
        Self::new(&header.extent, &header.nodes, header.rank, values)
    }
}

fn validate_shape(extent: &[f64], nodes: &[usize]) -> Result<()> {
    if extent.len() != nodes.len() || nodes.is_empty() || nodes.len() > 2 {
        return Err(Error::Grid("grids are 1D or 2D with one extent per axis".into()));
    }
    if nodes.iter().any(|&n| n < 2 || !n.is_power_of_two()) {
        return Err(Error::Grid(format!("node counts must be powers of two, got {nodes:?}")));
    }
    if extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Grid("extents must be positive".into()));
    }
    Ok(())
}

/// Angular wavenumber of FFT bin `k` on `n` nodes over `length`; the Nyquist bin maps to 0
/// when `odd_derivative` is set so that real data stays real.
pub fn wavenumber(k: usize, n: usize, length: f64, odd_derivative: bool) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    if odd_derivative && n % 2 == 0 && k == n / 2 {
        0.0
    } else {
        2.0 * PI * kk / length
    }
}

/// In-place 2D FFT over an `nx * nz` array stored x fastest.
pub fn fft2(data: &mut [Complex64], nx: usize, nz: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fx, fz) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(nz))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(nz))
    };
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    if nz > 1 {
        let mut col = vec![Complex64::new(0.0, 0.0); nz];
        for ix in 0..nx {
            for iz in 0..nz {
                col[iz] = data[ix + nx * iz];
            }
            fz.process(&mut col);
            for iz in 0..nz {
                data[ix + nx * iz] = col[iz];
            }
        }
    }
    if inverse {
        let s = 1.0 / (nx * nz) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

pub fn forward(v: &[f64], nodes: &[usize]) -> Vec<Complex64> {
    let mut c = to_complex(v);
    let nz = if nodes.len() > 1 { nodes[1] } else { 1 };
    fft2(&mut c, nodes[0], nz, false);
    c
}

pub fn inverse_real(mut c: Vec<Complex64>, nodes: &[usize]) -> Vec<f64> {
    let nz = if nodes.len() > 1 { nodes[1] } else { 1 };
    fft2(&mut c, nodes[0], nz, true);
    c.into_iter().map(|v| v.re).collect()
}

/// Wavevector of the flat FFT index `idx`.
pub fn wavevector(idx: usize, nodes: &[usize], extent: &[f64], odd: bool) -> (f64, f64) {
    let nx = nodes[0];
    let kx = wavenumber(idx % nx, nx, extent[0], odd);
    let kz = if nodes.len() > 1 {
        wavenumber(idx / nx, nodes[1], extent[1], odd)
    } else {
        0.0
    };
    (kx, kz)
}

pub fn spectral_derivative(v: &[f64], nodes: &[usize], extent: &[f64], axis: usize) -> Vec<f64> {
    let mut c = forward(v, nodes);
    for (idx, val) in c.iter_mut().enumerate() {
        let (kx, kz) = wavevector(idx, nodes, extent, true);
        let k = if axis == 0 { kx } else { kz };
        *val *= Complex64::new(0.0, k);
    }
    inverse_real(c, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(GridField::zeros(&[1.0, 1.0], &[12, 16], Rank::Scalar).is_err());
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let l = 2.0;
        let g = GridField::from_fn2([l, l], [32, 16], |x, _| (2.0 * PI * x / l).sin()).unwrap();
        let d = g.derivative(0);
        for i in 0..g.len() {
            let (x, _) = g.coords(i);
            let exact = 2.0 * PI / l * (2.0 * PI * x / l).cos();
            assert!((d.values[0][i] - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn binary_round_trip() {
        let dir = std::env::temp_dir().join(format!("slipflow-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let g = GridField::from_fn2([1.0, 2.0], [8, 4], |x, z| x * z + 1.0).unwrap();
        let p = dir.join("field");
        g.write(&p).unwrap();
        assert_eq!(GridField::read(&p).unwrap(), g);
    }
}
