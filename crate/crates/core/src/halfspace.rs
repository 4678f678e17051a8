//! Spectral half-space Stokes solver: data lifts, parity reflection to a torus,
//! Leray-projected whole-space solve and restriction.
//!
//! The half-space `{z >= 0}` is truncated to `[0, L) x [0, H)`; its reflection is the
//! torus `[0, L) x [0, 2H)` where torus node `k` sits at height `k dz` for `k <= M`
//! and at `(k - 2M) dz` otherwise. The outward normal is `-e_2`, so the normal datum
//! reads `-u_2(x, 0) = g` and the slip datum `-d_z u_1 - F_12 = G` at `z = 0`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_spaces::{lp_of, NormKind, NormReport, SobolevIndex};
use crate::grid::{forward, inverse_real, spectral_derivative, wavenumber, wavevector, GridField, Rank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

/// Parities under `z -> -z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityTable {
    pub velocity: [Parity; 2],
    pub pressure: Parity,
    /// Row-major `[G11, G12, G21, G22]`.
    pub tensor: [Parity; 4],
}

impl Default for ParityTable {
    fn default() -> Self {
        use Parity::*;
        Self {
            velocity: [Even, Odd],
            pressure: Even,
            tensor: [Even, Odd, Odd, Even],
        }
    }
}

/// Geometry shared by half-space fields `[L] x [H]` on `nx x M` nodes and their torus reflection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceGrid {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    /// Half-space rows `z_j = j H / M`, `j < M`.
    pub nz: usize,
}

impl HalfSpaceGrid {
    /// Grid whose torus reflection has `nx x nz_torus` nodes.
    pub fn from_torus(length: f64, height: f64, nx: usize, nz_torus: usize) -> Self {
        Self {
            length,
            height,
            nx,
            nz: nz_torus / 2,
        }
    }
    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }
    pub fn dz(&self) -> f64 {
        self.height / self.nz as f64
    }
    pub fn half_extent(&self) -> [f64; 2] {
        [self.length, self.height]
    }
    pub fn torus_extent(&self) -> [f64; 2] {
        [self.length, 2.0 * self.height]
    }
    pub fn torus_nodes(&self) -> [usize; 2] {
        [self.nx, 2 * self.nz]
    }
    pub fn half(&self, rank: Rank) -> GridField {
        GridField::zeros(&self.half_extent(), &[self.nx, self.nz], rank).expect("valid half grid")
    }
    pub fn boundary(&self) -> GridField {
        GridField::zeros(&[self.length], &[self.nx], Rank::Scalar).expect("valid boundary grid")
    }
    pub fn half_fn(&self, f: impl Fn(f64, f64) -> f64) -> GridField {
        GridField::from_fn2(self.half_extent(), [self.nx, self.nz], f).expect("valid half grid")
    }
    pub fn boundary_fn(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField::from_fn1(self.length, self.nx, f).expect("valid boundary grid")
    }
}

/// Extend a half-space component to the torus with the given parity.
pub fn reflect_component(grid: &HalfSpaceGrid, v: &[f64], parity: Parity) -> Vec<f64> {
    let (nx, m) = (grid.nx, grid.nz);
    let mut out = vec![0.0; nx * 2 * m];
    for k in 0..2 * m {
        for i in 0..nx {
            out[i + nx * k] = if k < m {
                v[i + nx * k]
            } else if k == m {
                0.0
            } else {
                parity.sign() * v[i + nx * (2 * m - k)]
            };
        }
    }
    out
}

fn restrict_component(grid: &HalfSpaceGrid, v: &[f64]) -> Vec<f64> {
    v[..grid.nx * grid.nz].to_vec()
}

fn reflect_with(grid: &HalfSpaceGrid, field: &GridField, parities: &[Parity]) -> GridField {
    let values = field
        .values
        .iter()
        .zip(parities)
        .map(|(c, &p)| reflect_component(grid, c, p))
        .collect();
    GridField::new(&grid.torus_extent(), &grid.torus_nodes(), field.rank, values).expect("reflection shape")
}

/// Replace the `z = 0` row of odd components by the midpoint of their jump (zero),
/// which keeps the torus data exactly parity-symmetric.
fn midpoint_odd(grid: &HalfSpaceGrid, mut f: GridField, parities: &[Parity]) -> GridField {
    for (c, p) in f.values.iter_mut().zip(parities) {
        if *p == Parity::Odd {
            c[..grid.nx].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    f
}

/// Reflect half-space tensor data to the torus by the parity table.
pub fn reflect_data(grid: &HalfSpaceGrid, f: &GridField) -> GridField {
    reflect_with(grid, f, &ParityTable::default().tensor)
}

pub fn reflect_vector(grid: &HalfSpaceGrid, f: &GridField) -> GridField {
    reflect_with(grid, f, &ParityTable::default().velocity)
}

pub fn reflect_scalar(grid: &HalfSpaceGrid, f: &GridField, parity: Parity) -> GridField {
    reflect_with(grid, f, &[parity])
}

pub fn restrict(grid: &HalfSpaceGrid, f: &GridField) -> GridField {
    let values = f.values.iter().map(|c| restrict_component(grid, c)).collect();
    GridField::new(&grid.half_extent(), &[grid.nx, grid.nz], f.rank, values).expect("restriction shape")
}

#[derive(Debug, Clone)]
pub struct WholeSpaceSolution {
    pub w: GridField,
    pub q: GridField,
    /// Zero-frequency forcing removed (per component).
    pub mean_removed: Vec<f64>,
}

/// Solve `-Lap w + grad q = f + Div G`, `Div w = 0` on the torus.
pub fn solve_whole_space(g: &GridField, body: Option<&GridField>) -> Result<WholeSpaceSolution> {
    if g.rank != Rank::Tensor || g.dim() != 2 {
        return Err(Error::Grid("solve_whole_space expects a 2D tensor field".into()));
    }
    let nodes = g.nodes.clone();
    let n = g.len();
    let gh: Vec<Vec<Complex64>> = g.values.iter().map(|c| forward(c, &nodes)).collect();
    let fh: Option<Vec<Vec<Complex64>>> = body.map(|b| b.values.iter().map(|c| forward(c, &nodes)).collect());
    if gh.iter().flatten().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Data("non-finite spectrum".into()));
    }
    let i = Complex64::new(0.0, 1.0);
    let mut wh = vec![vec![Complex64::new(0.0, 0.0); n]; 2];
    let mut qh = vec![Complex64::new(0.0, 0.0); n];
    let mut mean_removed = vec![0.0; 2];
    if let Some(f) = &fh {
        mean_removed = vec![f[0][0].re / n as f64, f[1][0].re / n as f64];
    }
    for idx in 0..n {
        let (k1, k2) = wavevector(idx, &nodes, &g.extent, true);
        let k2sum = k1 * k1 + k2 * k2;
        if k2sum == 0.0 {
            continue;
        }
        let mut rhs = [
            i * (gh[0][idx] * k1 + gh[1][idx] * k2),
            i * (gh[2][idx] * k1 + gh[3][idx] * k2),
        ];
        if let Some(f) = &fh {
            rhs[0] += f[0][idx];
            rhs[1] += f[1][idx];
        }
        let proj = (rhs[0] * k1 + rhs[1] * k2) / k2sum;
        wh[0][idx] = (rhs[0] - proj * k1) / k2sum;
        wh[1][idx] = (rhs[1] - proj * k2) / k2sum;
        // xi . rhs = i |xi|^2 q.
        qh[idx] = -i * (rhs[0] * k1 + rhs[1] * k2) / k2sum;
    }
    let w = GridField::new(
        &g.extent,
        &nodes,
        Rank::Vector,
        wh.into_iter().map(|c| inverse_real(c, &nodes)).collect(),
    )?;
    let q = GridField::new(&g.extent, &nodes, Rank::Scalar, vec![inverse_real(qh, &nodes)])?;
    Ok(WholeSpaceSolution { w, q, mean_removed })
}

/// Spectral Leray projection `I - xi xi^T / |xi|^2` of a torus vector field.
pub fn leray_project(v: &GridField) -> GridField {
    let nodes = v.nodes.clone();
    let vh: Vec<Vec<Complex64>> = v.values.iter().map(|c| forward(c, &nodes)).collect();
    let mut out = vh.clone();
    for idx in 0..v.len() {
        let (k1, k2) = wavevector(idx, &nodes, &v.extent, true);
        let k2sum = k1 * k1 + k2 * k2;
        if k2sum == 0.0 {
            continue;
        }
        let proj = (vh[0][idx] * k1 + vh[1][idx] * k2) / k2sum;
        out[0][idx] = vh[0][idx] - proj * k1;
        out[1][idx] = vh[1][idx] - proj * k2;
    }
    let mut res = v.clone();
    res.values = out.into_iter().map(|c| inverse_real(c, &nodes)).collect();
    res
}

/// Spectral divergence of a torus vector field.
pub fn divergence(v: &GridField) -> Vec<f64> {
    let a = spectral_derivative(&v.values[0], &v.nodes, &v.extent, 0);
    let b = spectral_derivative(&v.values[1], &v.nodes, &v.extent, 1);
    a.iter().zip(&b).map(|(x, y)| x + y).collect()
}

/// Spectral gradient, row-major `[d1 v1, d2 v1, d1 v2, d2 v2]` for vectors.
pub fn gradient(v: &GridField) -> GridField {
    let mut values = Vec::with_capacity(2 * v.values.len());
    for c in &v.values {
        values.push(spectral_derivative(c, &v.nodes, &v.extent, 0));
        values.push(spectral_derivative(c, &v.nodes, &v.extent, 1));
    }
    let rank = if v.rank == Rank::Scalar { Rank::Vector } else { Rank::Tensor };
    GridField::new(&v.extent, &v.nodes, rank, values).expect("gradient shape")
}

fn laplacian(v: &[f64], nodes: &[usize], extent: &[f64]) -> Vec<f64> {
    let mut c = forward(v, nodes);
    for (idx, x) in c.iter_mut().enumerate() {
        let (k1, k2) = wavevector(idx, nodes, extent, false);
        *x *= -(k1 * k1 + k2 * k2);
    }
    inverse_real(c, nodes)
}

/// Torus Poisson solve `Lap u = r` with the mean of `r` removed and returned.
fn poisson(r: &[f64], nodes: &[usize], extent: &[f64]) -> (Vec<f64>, f64) {
    let mut c = forward(r, nodes);
    let mean = c[0].re / r.len() as f64;
    for (idx, x) in c.iter_mut().enumerate() {
        let (k1, k2) = wavevector(idx, nodes, extent, false);
        let k2sum = k1 * k1 + k2 * k2;
        *x = if k2sum == 0.0 { Complex64::new(0.0, 0.0) } else { -*x / k2sum };
    }
    (inverse_real(c, nodes), mean)
}

/// Gradient lift `grad theta` with `Lap theta = h`, `-d_z theta(., 0) = g`, `d_z theta(., H) = 0`.
#[derive(Debug, Clone)]
pub struct DivergenceLift {
    pub theta: GridField,
    pub grad: GridField,
    /// `int h - int g` as seen by the discrete solve.
    pub defect: f64,
    pub residual_interior: f64,
    pub residual_boundary: f64,
}

/// Value, first and second z-derivative of the harmonic channel profile for wavenumber `k`:
/// `omega'(0) = 1`, `omega'(H) = 0`, `omega'' = k^2 omega` (`omega'' = -1/H` for `k = 0`).
fn channel_profile(k: f64, height: f64, z: f64) -> [f64; 3] {
    let a = k.abs();
    if a == 0.0 {
        return [z - z * z / (2.0 * height), 1.0 - z / height, -1.0 / height];
    }
    let denom = 1.0 - (-2.0 * a * height).exp();
    let c = ((-a * z).exp() + (-a * (2.0 * height - z)).exp()) / denom;
    let s = ((-a * z).exp() - (-a * (2.0 * height - z)).exp()) / denom;
    [-c / a, s, -a * c]
}

pub fn lift_divergence(grid: &HalfSpaceGrid, h: &GridField, g: &GridField, tol: f64) -> Result<DivergenceLift> {
    let (nx, m) = (grid.nx, grid.nz);
    let gh = forward(&g.values[0], &[nx]);
    let gmean = gh[0].re / nx as f64;
    // Harmonic channel lift, evaluated mode by mode.
    let mut ell = vec![vec![Complex64::new(0.0, 0.0); nx * m]; 3];
    for j in 0..m {
        let z = j as f64 * grid.dz();
        for k in 0..nx {
            let kx = wavenumber(k, nx, grid.length, false);
            let kd = wavenumber(k, nx, grid.length, true);
            let p = channel_profile(kx, grid.height, z);
            let c = -gh[k];
            ell[0][k + nx * j] = c * p[0];
            ell[1][k + nx * j] = c * p[0] * Complex64::new(0.0, kd);
            ell[2][k + nx * j] = c * p[1];
        }
    }
    let lift: Vec<Vec<f64>> = ell
        .into_iter()
        .map(|rows| {
            let mut out = vec![0.0; nx * m];
            for j in 0..m {
                let mut row: Vec<Complex64> = rows[nx * j..nx * (j + 1)].to_vec();
                crate::grid::fft2(&mut row, nx, 1, true);
                for i in 0..nx {
                    out[i + nx * j] = row[i].re;
                }
            }
            out
        })
        .collect();
    // Remainder: even reflection of h - Lap(lift), Lap(lift) = gmean / H.
    let rhs: Vec<f64> = h.values[0].iter().map(|v| v - gmean / grid.height).collect();
    let tor_nodes = grid.torus_nodes();
    let tor_ext = grid.torus_extent();
    let r_even = reflect_component(grid, &rhs, Parity::Even);
    let (theta1, mean) = poisson(&r_even, &tor_nodes, &tor_ext);
    let defect = mean * grid.length * grid.height;
    let scale = lp_of(&h.values[0], h.cell_volume(), 1.0) + lp_of(&g.values[0], g.cell_volume(), 1.0);
    if defect.abs() > tol * scale.max(1e-300) && defect.abs() > 1e-300 {
        return Err(Error::Compatibility { defect });
    }
    let d1 = spectral_derivative(&theta1, &tor_nodes, &tor_ext, 0);
    let d2 = spectral_derivative(&theta1, &tor_nodes, &tor_ext, 1);
    let lap = laplacian(&theta1, &tor_nodes, &tor_ext);
    let theta: Vec<f64> = restrict_component(grid, &theta1).iter().zip(&lift[0]).map(|(a, b)| a + b).collect();
    let gx: Vec<f64> = restrict_component(grid, &d1).iter().zip(&lift[1]).map(|(a, b)| a + b).collect();
    let gz: Vec<f64> = restrict_component(grid, &d2).iter().zip(&lift[2]).map(|(a, b)| a + b).collect();
    let lap_half = restrict_component(grid, &lap);
    let res_int = lap_half
        .iter()
        .zip(&h.values[0])
        .map(|(l, hv)| (l + gmean / grid.height + mean - hv).abs())
        .fold(0.0, f64::max);
    let res_bc = (0..nx)
        .map(|i| (-gz[i] - g.values[0][i]).abs())
        .fold(0.0, f64::max);
    let hmax = h.values[0].iter().chain(&g.values[0]).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    Ok(DivergenceLift {
        theta: GridField::new(&grid.half_extent(), &[nx, m], Rank::Scalar, vec![theta])?,
        grad: GridField::new(&grid.half_extent(), &[nx, m], Rank::Vector, vec![gx, gz])?,
        defect,
        residual_interior: res_int / hmax,
        residual_boundary: res_bc / hmax,
    })
}

/// Vertical profile `psi(z) = -(z^2 / 2) exp(-z^2 / delta^2)` and its derivatives,
/// `psi(0) = 0`, `psi''(0) = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TractionProfile {
    pub delta: f64,
}

impl TractionProfile {
    /// `[psi, psi', psi'', psi''', psi'''']` at `z`.
    pub fn derivs(&self, z: f64) -> [f64; 5] {
        // psi^(n) = P_n(z) exp(-z^2/delta^2) with P_{n+1} = P_n' - (2 z / delta^2) P_n.
        let c = 2.0 / (self.delta * self.delta);
        let mut poly = vec![0.0, 0.0, -0.5];
        let e = (-z * z / (self.delta * self.delta)).exp();
        let mut out = [0.0; 5];
        for slot in out.iter_mut() {
            *slot = poly.iter().rev().fold(0.0, |acc, a| acc * z + a) * e;
            let mut next = vec![0.0; poly.len() + 1];
            for (p, a) in poly.iter().enumerate().skip(1) {
                next[p - 1] += p as f64 * a;
            }
            for (p, a) in poly.iter().enumerate() {
                next[p + 1] -= c * a;
            }
            poly = next;
        }
        out
    }
}

/// The auxiliary field `U = d(x) psi(z)` with `-Lap U = K`, `U = 0` at `z = 0`, `K(x, 0) = d(x)`,
/// realising the recombination `w = (u_1 + d_z U, u_2 - d_x U)`.
#[derive(Debug, Clone)]
pub struct TractionLift {
    pub grid: HalfSpaceGrid,
    pub profile: TractionProfile,
    /// `d, d', d'', d'''` on the boundary nodes.
    pub d: [Vec<f64>; 4],
}

/// Build the lift for a traction defect `G - F~_n` (outward-normal convention).
pub fn lift_traction(grid: &HalfSpaceGrid, defect: &GridField, delta: f64) -> TractionLift {
    let d0: Vec<f64> = defect.values[0].iter().map(|v| -v).collect();
    let ext = [grid.length];
    let d1 = spectral_derivative(&d0, &[grid.nx], &ext, 0);
    let d2 = spectral_derivative(&d1, &[grid.nx], &ext, 0);
    let d3 = spectral_derivative(&d2, &[grid.nx], &ext, 0);
    TractionLift {
        grid: *grid,
        profile: TractionProfile { delta },
        d: [d0, d1, d2, d3],
    }
}

impl TractionLift {
    fn eval(&self, f: impl Fn(&[f64; 4], [f64; 5]) -> f64) -> Vec<f64> {
        let (nx, m) = (self.grid.nx, self.grid.nz);
        let mut out = vec![0.0; nx * m];
        for j in 0..m {
            let p = self.profile.derivs(j as f64 * self.grid.dz());
            for i in 0..nx {
                let di = [self.d[0][i], self.d[1][i], self.d[2][i], self.d[3][i]];
                out[i + nx * j] = f(&di, p);
            }
        }
        out
    }

    /// `(d_z U, -d_x U)`, the divergence-free correction added by the recombination.
    pub fn correction(&self) -> GridField {
        let a = self.eval(|d, p| d[0] * p[1]);
        let b = self.eval(|d, p| -d[1] * p[0]);
        GridField::new(&self.grid.half_extent(), &[self.grid.nx, self.grid.nz], Rank::Vector, vec![a, b]).unwrap()
    }

    /// The extension field `K = -Lap U`.
    pub fn extension(&self) -> GridField {
        let k = self.eval(|d, p| -d[2] * p[0] - d[0] * p[2]);
        GridField::new(&self.grid.half_extent(), &[self.grid.nx, self.grid.nz], Rank::Scalar, vec![k]).unwrap()
    }

    /// `(d_z K, -d_x K)`, the forcing generated by the correction.
    pub fn body_force(&self) -> GridField {
        let a = self.eval(|d, p| -d[2] * p[1] - d[0] * p[3]);
        let b = self.eval(|d, p| d[3] * p[0] + d[1] * p[2]);
        GridField::new(&self.grid.half_extent(), &[self.grid.nx, self.grid.nz], Rank::Vector, vec![a, b]).unwrap()
    }

    /// `w = (u_1 + d_z U, u_2 - d_x U)`.
    pub fn apply(&self, u: &GridField) -> GridField {
        u.add(&self.correction())
    }

    /// Boundary value of `d_z` of the correction's first component, `d psi''(0) = -d`.
    pub fn boundary_dz(&self) -> Vec<f64> {
        let p = self.profile.derivs(0.0);
        self.d[0].iter().map(|d| d * p[2]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct HalfSpaceProblem {
    pub grid: HalfSpaceGrid,
    pub forcing_tensor: GridField,
    pub forcing: GridField,
    pub h: GridField,
    pub g_normal: GridField,
    pub g_tangential: GridField,
    pub index: SobolevIndex,
}

impl HalfSpaceProblem {
    pub fn zero(grid: HalfSpaceGrid) -> Self {
        Self {
            grid,
            forcing_tensor: grid.half(Rank::Tensor),
            forcing: grid.half(Rank::Vector),
            h: grid.half(Rank::Scalar),
            g_normal: grid.boundary(),
            g_tangential: grid.boundary(),
            index: SobolevIndex { s: 1.0, p: 2.0 },
        }
    }

    /// Data must vanish in the top 25% pad of the truncated box.
    pub fn check_padding(&self, tol: f64) -> Result<()> {
        let (nx, m) = (self.grid.nx, self.grid.nz);
        let start = (3 * m) / 4;
        for f in [&self.forcing_tensor, &self.forcing, &self.h] {
            for c in &f.values {
                let worst = c[nx * start..nx * m].iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if worst > tol {
                    return Err(Error::Data(format!("data of size {worst:e} in the padding zone")));
                }
            }
        }
        Ok(())
    }

    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Self {
        let lc = |x: &GridField, y: &GridField| x.scaled(a).add(&y.scaled(b));
        Self {
            grid: self.grid,
            forcing_tensor: lc(&self.forcing_tensor, &other.forcing_tensor),
            forcing: lc(&self.forcing, &other.forcing),
            h: lc(&self.h, &other.h),
            g_normal: lc(&self.g_normal, &other.g_normal),
            g_tangential: lc(&self.g_tangential, &other.g_tangential),
            index: self.index,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalfSpaceResiduals {
    pub momentum: f64,
    pub divergence: f64,
    pub normal_trace: f64,
    pub slip: f64,
    /// Net horizontal force `int f_1 + int G` that the slip channel cannot balance.
    pub force_defect: f64,
    pub compatibility_defect: f64,
}

#[derive(Debug, Clone)]
pub struct HalfSpaceSolution {
    pub u: GridField,
    pub pi: GridField,
    pub residual_interior: f64,
    pub residual_bc: f64,
    pub residuals: HalfSpaceResiduals,
    pub norms: Vec<NormReport>,
}

#[derive(Debug, Clone, Copy)]
pub struct HalfSpaceOptions {
    pub compat_tol: f64,
    pub lift_width: f64,
    /// Relative residual tolerance; exceeding it fails the named stage.
    pub residual_tol: f64,
}

impl HalfSpaceOptions {
    pub fn for_grid(grid: &HalfSpaceGrid) -> Self {
        Self {
            compat_tol: 1e-8,
            lift_width: grid.height / 8.0,
            residual_tol: 1e-7,
        }
    }
}

/// Trapezoid-in-z quadrature weights on half-space rows.
fn half_weights(grid: &HalfSpaceGrid) -> Vec<f64> {
    let (nx, m) = (grid.nx, grid.nz);
    let w = grid.dx() * grid.dz();
    (0..nx * m).map(|k| if k / nx == 0 { 0.5 * w } else { w }).collect()
}

pub fn half_l2(grid: &HalfSpaceGrid, f: &GridField) -> f64 {
    let w = half_weights(grid);
    f.values
        .iter()
        .map(|c| c.iter().zip(&w).map(|(v, wi)| v * v * wi).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

pub fn solve_halfspace(problem: &HalfSpaceProblem) -> Result<HalfSpaceSolution> {
    solve_halfspace_with(problem, HalfSpaceOptions::for_grid(&problem.grid))
}

pub fn solve_halfspace_with(problem: &HalfSpaceProblem, opts: HalfSpaceOptions) -> Result<HalfSpaceSolution> {
    let grid = &problem.grid;
    let (nx, m) = (grid.nx, grid.nz);
    let tor_nodes = grid.torus_nodes();
    let tor_ext = grid.torus_extent();

    // Stage 1: divergence and normal-trace lift.
    let div = lift_divergence(grid, &problem.h, &problem.g_normal, opts.compat_tol)?;

    // Stage 2: traction lift for G' = G - g'.
    let gprime = spectral_derivative(&problem.g_normal.values[0], &[nx], &[grid.length], 0);
    let mut tdefect = problem.g_tangential.clone();
    tdefect.values[0].iter_mut().zip(&gprime).for_each(|(a, b)| *a -= b);
    let trac = lift_traction(grid, &tdefect, opts.lift_width);

    // Stage 3-4: reflect and solve on the torus.
    let body = problem.forcing.add(&trac.body_force());
    let g = midpoint_odd(grid, reflect_data(grid, &problem.forcing_tensor), &ParityTable::default().tensor);
    let fb = midpoint_odd(grid, reflect_vector(grid, &body), &ParityTable::default().velocity);
    let whole = solve_whole_space(&g, Some(&fb))?;

    // Stage 5: restrict and recombine.
    let w = restrict(grid, &whole.w);
    let u = w.add(&trac.correction().scaled(-1.0)).add(&div.grad);
    let q = restrict(grid, &whole.q);
    let mut pi = q.add(&problem.h);
    let wts = half_weights(grid);
    let area: f64 = wts.iter().sum();
    let mean = pi.values[0].iter().zip(&wts).map(|(v, w)| v * w).sum::<f64>() / area;
    pi.values[0].iter_mut().for_each(|v| *v -= mean);

    // Residuals of the torus stage (momentum and divergence) measured spectrally.
    let gw = gradient(&whole.w);
    let mut momentum = 0.0f64;
    let dg: Vec<Vec<f64>> = (0..2)
        .map(|r| {
            let a = spectral_derivative(&g.values[2 * r], &tor_nodes, &tor_ext, 0);
            let b = spectral_derivative(&g.values[2 * r + 1], &tor_nodes, &tor_ext, 1);
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        })
        .collect();
    let gq = gradient(&whole.q);
    let rhs_scale = dg
        .iter()
        .chain(fb.values.iter())
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    for r in 0..2 {
        let lap = laplacian(&whole.w.values[r], &tor_nodes, &tor_ext);
        for k in 0..nx * m {
            let res = -lap[k] + gq.values[r][k] - fb.values[r][k] + whole.mean_removed[r] - dg[r][k];
            momentum = momentum.max(res.abs());
        }
    }
    momentum /= rhs_scale;
    let divw = divergence(&whole.w);
    let grad_scale = gw.values.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let div_torus = divw[..nx * m].iter().fold(0.0f64, |a, v| a.max(v.abs())) / grad_scale;
    let divergence_res = div_torus.max(div.residual_interior);

    // Boundary traces: torus parts at z = 0 plus closed-form lift parts.
    let dzw1 = &gw.values[1];
    let corr_dz = trac.boundary_dz();
    let mut normal: f64 = 0.0;
    let mut slip: f64 = 0.0;
    let bscale = problem
        .g_normal
        .values[0]
        .iter()
        .chain(&problem.g_tangential.values[0])
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(grad_scale);
    for i in 0..nx {
        normal = normal.max((-u.values[1][i] - problem.g_normal.values[0][i]).abs());
        let dzu1 = dzw1[i] - corr_dz[i] + dz_grad_theta_x(&div, grid, i);
        let s = -dzu1 - problem.forcing_tensor.values[1][i] - problem.g_tangential.values[0][i];
        slip = slip.max(s.abs());
    }
    let force_defect = (whole.mean_removed[0] * nx as f64 * 2.0 * m as f64) * grid.dx() * grid.dz() / 2.0;
    let residuals = HalfSpaceResiduals {
        momentum,
        divergence: divergence_res,
        normal_trace: normal / bscale,
        slip: slip / bscale,
        force_defect,
        compatibility_defect: div.defect,
    };

    let grad_u = half_gradient_norm(grid, &u);
    let lhs = grad_u + half_l2(grid, &pi);
    let rhs = half_l2(grid, &problem.forcing_tensor) + half_l2(grid, &problem.h);
    let param = |s| crate::function_spaces::NormParams {
        s: Some(s),
        p: Some(2.0),
        ..Default::default()
    };
    let norms = vec![
        report(lhs, "estimate-lhs: |grad u|_2 + |pi|_2", param(1.0)),
        report(rhs, "estimate-rhs: |F|_2 + |h|_2", param(0.0)),
    ];
    let stages = [
        ("whole-space momentum", residuals.momentum),
        ("divergence lift", residuals.divergence),
        ("normal trace", residuals.normal_trace),
        ("traction lift", residuals.slip),
    ];
    for (stage, r) in stages {
        if !(r <= opts.residual_tol) {
            return Err(Error::Stage {
                stage: stage.into(),
                residual: r,
                tol: opts.residual_tol,
            });
        }
    }
    Ok(HalfSpaceSolution {
        u,
        pi,
        residual_interior: momentum.max(divergence_res),
        residual_bc: residuals.normal_trace.max(residuals.slip),
        residuals,
        norms,
    })
}

fn report(value: f64, regime: &str, parameters: crate::function_spaces::NormParams) -> NormReport {
    NormReport {
        value,
        kind: NormKind::Sobolev,
        regime: regime.into(),
        parameters,
        calibration: None,
        upper: None,
        excluded_mass: None,
        warnings: vec![],
    }
}

/// `d_z d_x theta` at boundary node `i`: `-g'` from the lift, the reflected part is even.
fn dz_grad_theta_x(div: &DivergenceLift, grid: &HalfSpaceGrid, i: usize) -> f64 {
    let nx = grid.nx;
    let gz0: Vec<f64> = div.grad.values[1][..nx].to_vec();
    spectral_derivative(&gz0, &[nx], &[grid.length], 0)[i]
}

/// `|grad u|_{L^2}` on the half-space, derivatives through the torus reflection of `u`.
pub fn half_gradient_norm(grid: &HalfSpaceGrid, u: &GridField) -> f64 {
    let t = reflect_vector(grid, u);
    let g = gradient(&t);
    half_l2(grid, &restrict(grid, &g))
}

/// Parallel batch solve (independent problems).
pub fn solve_many(problems: &[HalfSpaceProblem]) -> Vec<Result<HalfSpaceSolution>> {
    problems.par_iter().map(solve_halfspace).collect()
}
