//! Staggered finite-volume grid on the periodic strip `[0, L) x [0, H]` and the
//! fast flat solvers (FFT in x, cosine/sine transforms in z) used as preconditioners.
//!
//! Locations: `u` at `(i dx, (j + 1/2) dz)`, `w` at `((i + 1/2) dx, j dz)` for `j = 0..=nz`
//! (the end rows carry Dirichlet values), pressure and scalars at cell centres.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::charts::{local_geometry, BoundaryChart, Local, Mollifier, Profile, Support};
use crate::error::{Error, Result};
use crate::transforms::Reflect;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripGrid {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub nz: usize,
}

impl StripGrid {
    pub fn new(length: f64, height: f64, nx: usize, nz: usize) -> Result<Self> {
        if nx < 4 || nz < 4 || !(length > 0.0) || !(height > 0.0) {
            return Err(Error::Grid(format!("strip grid {nx}x{nz} on {length}x{height} is too small")));
        }
        Ok(Self {
            length,
            height,
            nx,
            nz,
        })
    }
    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }
    pub fn dz(&self) -> f64 {
        self.height / self.nz as f64
    }
    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }
    pub fn w_len(&self) -> usize {
        self.nx * (self.nz + 1)
    }
    pub fn u_pos(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx(), (j as f64 + 0.5) * self.dz())
    }
    pub fn w_pos(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), j as f64 * self.dz())
    }
    pub fn cell_pos(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dz())
    }
    pub fn vertex_pos(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx(), j as f64 * self.dz())
    }
    #[inline]
    pub fn ip(&self, i: usize) -> usize {
        if i + 1 == self.nx {
            0
        } else {
            i + 1
        }
    }
    #[inline]
    pub fn im(&self, i: usize) -> usize {
        if i == 0 {
            self.nx - 1
        } else {
            i - 1
        }
    }
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * self.nx,
            nz: 2 * self.nz,
            ..*self
        }
    }
}

/// Velocity and pressure on the staggered grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacField {
    pub u: Vec<f64>,
    /// `nx * (nz + 1)` values, rows `0` and `nz` are boundary rows.
    pub w: Vec<f64>,
    pub p: Vec<f64>,
}

impl MacField {
    pub fn zeros(grid: &StripGrid) -> Self {
        Self {
            u: vec![0.0; grid.cells()],
            w: vec![0.0; grid.w_len()],
            p: vec![0.0; grid.cells()],
        }
    }

    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self
            .u
            .iter_mut()
            .chain(self.w.iter_mut())
            .chain(self.p.iter_mut())
            .zip(other.u.iter().chain(&other.w).chain(&other.p))
        {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = Self {
            u: vec![0.0; self.u.len()],
            w: vec![0.0; self.w.len()],
            p: vec![0.0; self.p.len()],
        };
        out.axpy(a, self);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.w)
            .chain(&self.p)
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Row-wise real FFTs along x: returns columns `out[k][row]`.
struct XTransform {
    nx: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl XTransform {
    fn new(nx: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            fwd: planner.plan_fft_forward(nx),
            inv: planner.plan_fft_inverse(nx),
        }
    }

    fn forward(&self, data: &[f64], rows: usize) -> Vec<Vec<Complex64>> {
        let nx = self.nx;
        let spectra: Vec<Vec<Complex64>> = (0..rows)
            .into_par_iter()
            .map(|j| {
                let mut row: Vec<Complex64> = data[nx * j..nx * (j + 1)].iter().map(|&v| Complex64::new(v, 0.0)).collect();
                self.fwd.process(&mut row);
                row
            })
            .collect();
        (0..nx).map(|k| spectra.iter().map(|r| r[k]).collect()).collect()
    }

    fn inverse(&self, cols: &[Vec<Complex64>], rows: usize) -> Vec<f64> {
        let nx = self.nx;
        let s = 1.0 / nx as f64;
        let out: Vec<Vec<f64>> = (0..rows)
            .into_par_iter()
            .map(|j| {
                let mut row: Vec<Complex64> = (0..nx).map(|k| cols[k][j]).collect();
                self.inv.process(&mut row);
                row.into_iter().map(|v| v.re * s).collect()
            })
            .collect();
        out.concat()
    }
}

/// Index-based difference symbols for wavenumber index `k`.
#[derive(Debug, Clone, Copy)]
struct XSymbol {
    /// Backward difference (cell -> u node).
    g: Complex64,
    /// Forward difference (u node -> cell).
    d: Complex64,
    /// `-d g`, the eigenvalue of the x second difference.
    s2: f64,
}

fn x_symbol(k: usize, nx: usize, dx: f64) -> XSymbol {
    let t = 2.0 * std::f64::consts::PI * k as f64 / nx as f64;
    let e = Complex64::from_polar(1.0, t);
    XSymbol {
        g: (1.0 - e.conj()) / dx,
        d: (e - 1.0) / dx,
        s2: (2.0 - 2.0 * t.cos()) / (dx * dx),
    }
}

fn z_sigma(m: usize, nz: usize, dz: f64) -> f64 {
    2.0 * (std::f64::consts::PI * m as f64 / (2.0 * nz as f64)).sin() / dz
}

/// Unresolved components of a flat solve.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ModeDefects {
    /// Mean x-momentum residual (translation mode), zero when friction fixes it.
    pub momentum: f64,
    /// Mean continuity residual (compatibility).
    pub divergence: f64,
}

/// Flat Stokes operator `(-Lap u + grad p, div u)` with slip walls at `z = 0, H`,
/// an optional friction `alpha_bar` acting on the x-mean of `u` at the bottom face
/// (the part that fixes the translation mode), and its fast inverse.
#[derive(Clone)]
pub struct FlatStokes {
    pub grid: StripGrid,
    pub alpha_bar: f64,
    xt: Arc<XTransform>,
    zt: Reflect,
}

impl std::fmt::Debug for FlatStokes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatStokes").field("grid", &self.grid).field("alpha_bar", &self.alpha_bar).finish()
    }
}

impl FlatStokes {
    pub fn new(grid: StripGrid, alpha_bar: f64) -> Self {
        Self {
            grid,
            alpha_bar,
            xt: Arc::new(XTransform::new(grid.nx)),
            zt: Reflect::new(grid.nz),
        }
    }

    /// Apply the flat operator; boundary rows of `w` are treated as zero.
    pub fn apply(&self, v: &MacField) -> MacField {
        let g = &self.grid;
        let (nx, nz, dx, dz) = (g.nx, g.nz, g.dx(), g.dz());
        let mut out = MacField::zeros(g);
        let w = |i: usize, j: usize| if j == 0 || j == nz { 0.0 } else { v.w[i + nx * j] };
        let u0_mean = v.u[..nx].iter().sum::<f64>() / nx as f64;
        for j in 0..nz {
            for i in 0..nx {
                let k = i + nx * j;
                let (ip, im) = (g.ip(i), g.im(i));
                let u = &v.u;
                let up = if j + 1 < nz { u[k + nx] } else { u[k] };
                let dn = if j > 0 { u[i + nx * (j - 1)] } else { u[k] };
                let mut lap = (u[ip + nx * j] - 2.0 * u[k] + u[im + nx * j]) / (dx * dx) + (up - 2.0 * u[k] + dn) / (dz * dz);
                if j == 0 {
                    lap -= self.alpha_bar * u0_mean / dz;
                }
                out.u[k] = -lap + (v.p[k] - v.p[im + nx * j]) / dx;
                out.p[k] = (u[ip + nx * j] - u[k]) / dx + (w(i, j + 1) - w(i, j)) / dz;
            }
        }
        for j in 1..nz {
            for i in 0..nx {
                let k = i + nx * j;
                let (ip, im) = (g.ip(i), g.im(i));
                let lap = (w(ip, j) - 2.0 * w(i, j) + w(im, j)) / (dx * dx) + (w(i, j + 1) - 2.0 * w(i, j) + w(i, j - 1)) / (dz * dz);
                out.w[k] = -lap + (v.p[k] - v.p[i + nx * (j - 1)]) / dz;
            }
        }
        out
    }

    /// Solve `S v = r`; the pressure mean is set to zero, and the velocity mean too when
    /// there is no friction. Boundary rows of `r.w` are ignored.
    pub fn solve(&self, r: &MacField) -> (MacField, ModeDefects) {
        let g = &self.grid;
        let (nx, nz) = (g.nx, g.nz);
        let (dx, dz) = (g.dx(), g.dz());
        let ru = self.xt.forward(&r.u, nz);
        let rd = self.xt.forward(&r.p, nz);
        let rw = self.xt.forward(&r.w[nx..nx * nz], nz - 1);
        let n_cells = (nx * nz) as f64;
        let defects = ModeDefects {
            momentum: if self.alpha_bar > 0.0 { 0.0 } else { ru[0].iter().map(|v| v.re).sum::<f64>() / n_cells },
            divergence: rd[0].iter().map(|v| v.re).sum::<f64>() / n_cells,
        };
        let cols: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> = (0..nx)
            .into_par_iter()
            .map(|k| {
                let sym = x_symbol(k, nx, dx);
                let cu = self.zt.dct2(&ru[k]);
                let cd = self.zt.dct2(&rd[k]);
                let cw = self.zt.dst1(&rw[k]);
                let mut uh = vec![Complex64::new(0.0, 0.0); nz];
                let mut ph = vec![Complex64::new(0.0, 0.0); nz];
                let mut wh = vec![Complex64::new(0.0, 0.0); nz - 1];
                for m in 0..nz {
                    let sm = z_sigma(m, nz, dz);
                    let lam = sym.s2 + sm * sm;
                    if m == 0 {
                        if k == 0 {
                            continue;
                        }
                        uh[0] = cd[0] / sym.d;
                        ph[0] = (cu[0] - lam * uh[0]) / sym.g;
                        continue;
                    }
                    let p = cd[m] - (sym.d * cu[m] + cw[m - 1] * sm) / lam;
                    ph[m] = p;
                    uh[m] = (cu[m] - sym.g * p) / lam;
                    wh[m - 1] = (cw[m - 1] + p * sm) / lam;
                }
                let mut u = self.zt.idct2(&uh);
                if k == 0 && self.alpha_bar > 0.0 {
                    // Friction fixes the mean flow: tridiagonal solve of the x-averaged u column.
                    let rhs: Vec<f64> = ru[0].iter().map(|v| v.re).collect();
                    let col = robin_column(&rhs, nz, dz, self.alpha_bar);
                    u = col.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
                }
                (u, self.zt.idst1(&wh), self.zt.idct2(&ph))
            })
            .collect();
        let uc: Vec<Vec<Complex64>> = cols.iter().map(|c| c.0.clone()).collect();
        let wc: Vec<Vec<Complex64>> = cols.iter().map(|c| c.1.clone()).collect();
        let pc: Vec<Vec<Complex64>> = cols.iter().map(|c| c.2.clone()).collect();
        let mut w = vec![0.0; g.w_len()];
        w[nx..nx * nz].copy_from_slice(&self.xt.inverse(&wc, nz - 1));
        (
            MacField {
                u: self.xt.inverse(&uc, nz),
                w,
                p: self.xt.inverse(&pc, nz),
            },
            defects,
        )
    }
}

/// `-u'' = r` on cells with a Neumann top and the friction face `-(u_1 - u_0)/dz^2 + a u_0/dz` at the bottom.
/// `r` is the x-sum of the residual row (FFT mode 0), the result is the column of mode 0.
fn robin_column(r: &[f64], nz: usize, dz: f64, alpha: f64) -> Vec<f64> {
    let h2 = 1.0 / (dz * dz);
    let mut diag = vec![2.0 * h2; nz];
    let off = -h2;
    diag[0] = h2 + alpha / dz;
    diag[nz - 1] = h2;
    // Thomas algorithm on the symmetric tridiagonal system.
    let mut c = vec![0.0; nz];
    let mut d = vec![0.0; nz];
    c[0] = off / diag[0];
    d[0] = r[0] / diag[0];
    for j in 1..nz {
        let m = diag[j] - off * c[j - 1];
        c[j] = off / m;
        d[j] = (r[j] - off * d[j - 1]) / m;
    }
    let mut x = vec![0.0; nz];
    x[nz - 1] = d[nz - 1];
    for j in (0..nz - 1).rev() {
        x[j] = d[j] - c[j] * x[j + 1];
    }
    x
}

/// Flat cell-centred Neumann Laplacian `-Lap_h v` with zero-flux walls, and its inverse.
#[derive(Clone)]
pub struct FlatPoisson {
    pub grid: StripGrid,
    xt: Arc<XTransform>,
    zt: Reflect,
}

impl std::fmt::Debug for FlatPoisson {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatPoisson").field("grid", &self.grid).finish()
    }
}

impl FlatPoisson {
    pub fn new(grid: StripGrid) -> Self {
        Self {
            grid,
            xt: Arc::new(XTransform::new(grid.nx)),
            zt: Reflect::new(grid.nz),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let (nx, nz, dx, dz) = (g.nx, g.nz, g.dx(), g.dz());
        let mut out = vec![0.0; g.cells()];
        for j in 0..nz {
            for i in 0..nx {
                let k = i + nx * j;
                let up = if j + 1 < nz { v[k + nx] } else { v[k] };
                let dn = if j > 0 { v[k - nx] } else { v[k] };
                out[k] = -((v[g.ip(i) + nx * j] - 2.0 * v[k] + v[g.im(i) + nx * j]) / (dx * dx) + (up - 2.0 * v[k] + dn) / (dz * dz));
            }
        }
        out
    }

    /// Solve `-Lap_h v = r` with zero-mean `v`; returns the mean of `r` (compatibility defect).
    pub fn solve(&self, r: &[f64]) -> (Vec<f64>, f64) {
        let g = &self.grid;
        let (nx, nz) = (g.nx, g.nz);
        let rh = self.xt.forward(r, nz);
        let mean = rh[0].iter().map(|v| v.re).sum::<f64>() / g.cells() as f64;
        let cols: Vec<Vec<Complex64>> = (0..nx)
            .into_par_iter()
            .map(|k| {
                let s2 = x_symbol(k, nx, g.dx()).s2;
                let mut c = self.zt.dct2(&rh[k]);
                for (m, v) in c.iter_mut().enumerate() {
                    let sm = z_sigma(m, nz, g.dz());
                    let lam = s2 + sm * sm;
                    *v = if lam == 0.0 { Complex64::new(0.0, 0.0) } else { *v / lam };
                }
                self.zt.idct2(&c)
            })
            .collect();
        (self.xt.inverse(&cols, nz), mean)
    }
}

/// Periodic strip domain `{(x, y): phi(x) < y < ...}` flattened by a single periodic chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripDomain {
    pub profile: Profile,
    pub length: f64,
    pub height: f64,
}

impl StripDomain {
    pub fn flat(length: f64, height: f64) -> Self {
        Self {
            profile: Profile::Zero,
            length,
            height,
        }
    }

    pub fn chart(&self) -> Result<BoundaryChart> {
        BoundaryChart::with_measured_lipschitz(
            self.profile.clone(),
            self.length,
            self.height,
            Support::Periodic { period: self.length },
        )
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.profile, Profile::Zero)
    }
}

/// Flattening geometry sampled at every staggered location of a strip grid.
#[derive(Debug, Clone)]
pub struct StripGeometry {
    pub grid: StripGrid,
    pub chart: BoundaryChart,
    pub scaling: f64,
    /// `nx * (nz + 1)` vertices.
    pub vertex: Vec<Local>,
    pub cell: Vec<Local>,
    pub u_node: Vec<Local>,
    /// `nx * (nz + 1)` w locations.
    pub w_node: Vec<Local>,
    /// Mimetic `b = 1 + d_z T` at u nodes from vertex values of `T`.
    pub b_u: Vec<f64>,
    /// Mimetic `a = d_x T` at w nodes from vertex values of `T`.
    pub a_w: Vec<f64>,
    /// Boundary profile derivatives at `x_i` and at `x_{i+1/2}`.
    pub bottom_v: Vec<[f64; 4]>,
    pub bottom_c: Vec<[f64; 4]>,
}

/// Flattening cut off by `cos^2(pi z / 2H)`, so the lid stays the flat line `y = H`.
fn sample_locals(
    chart: &BoundaryChart,
    moll: &Mollifier,
    n: f64,
    height: f64,
    count: usize,
    pos: impl Fn(usize) -> (f64, f64) + Sync,
) -> Vec<Local> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let (x, z) = pos(k);
            let l = local_geometry(chart, moll, n, x, z);
            let q = std::f64::consts::FRAC_PI_2 / height;
            let (chi, dchi, ddchi) = ((q * z).cos().powi(2), -q * (2.0 * q * z).sin(), -2.0 * q * q * (2.0 * q * z).cos());
            let d = l.b - 1.0;
            Local {
                shift: chi * l.shift,
                a: chi * l.a,
                b: 1.0 + dchi * l.shift + chi * d,
                a_x: chi * l.a_x,
                a_z: dchi * l.a + chi * l.a_z,
                b_x: dchi * l.a + chi * l.b_x,
                b_z: ddchi * l.shift + 2.0 * dchi * d + chi * l.b_z,
            }
        })
        .collect()
}

impl StripGeometry {
    /// Smallest admissible scaling `N >= 2K + 2` with `1/2 < det J <= 2` at every sampled location.
    pub fn build(domain: &StripDomain, grid: StripGrid) -> Result<Self> {
        let chart = domain.chart()?;
        let moll = Mollifier::default();
        let (nx, nz) = (grid.nx, grid.nz);
        let mut n = (2.0 * chart.lipschitz + 2.0).ceil();
        loop {
            let vertex = sample_locals(&chart, &moll, n, grid.height, nx * (nz + 1), |k| grid.vertex_pos(k % nx, k / nx));
            let cell = sample_locals(&chart, &moll, n, grid.height, nx * nz, |k| grid.cell_pos(k % nx, k / nx));
            let bad = vertex.iter().chain(&cell).position(|l| !(l.det() > 0.5 && l.det() <= 2.0));
            if let Some(idx) = bad {
                n += 1.0;
                if n > 1e4 {
                    let det = vertex.iter().chain(&cell).nth(idx).map(|l| l.det()).unwrap_or(f64::NAN);
                    return Err(Error::Jacobian {
                        ix: idx % nx,
                        iz: idx / nx,
                        det,
                        required_n: n,
                    });
                }
                continue;
            }
            let u_node = sample_locals(&chart, &moll, n, grid.height, nx * nz, |k| grid.u_pos(k % nx, k / nx));
            let w_node = sample_locals(&chart, &moll, n, grid.height, nx * (nz + 1), |k| grid.w_pos(k % nx, k / nx));
            let t = |i: usize, j: usize| vertex[i + nx * j].shift;
            let b_u = (0..nx * nz)
                .map(|k| {
                    let (i, j) = (k % nx, k / nx);
                    1.0 + (t(i, j + 1) - t(i, j)) / grid.dz()
                })
                .collect();
            let a_w = (0..nx * (nz + 1))
                .map(|k| {
                    let (i, j) = (k % nx, k / nx);
                    let right = t(grid.ip(i), j);
                    (right - t(i, j)) / grid.dx()
                })
                .collect();
            let bottom_v = (0..nx).map(|i| chart.phi_derivs(grid.vertex_pos(i, 0).0)).collect();
            let bottom_c = (0..nx).map(|i| chart.phi_derivs(grid.w_pos(i, 0).0)).collect();
            return Ok(Self {
                grid,
                chart,
                scaling: n,
                vertex,
                cell,
                u_node,
                w_node,
                b_u,
                a_w,
                bottom_v,
                bottom_c,
            });
        }
    }

    /// Physical position of a flattened point given its local geometry.
    pub fn physical(x: f64, z: f64, l: &Local) -> (f64, f64) {
        (x, z + l.shift)
    }

    pub fn u_phys(&self, i: usize, j: usize) -> (f64, f64) {
        let (x, z) = self.grid.u_pos(i, j);
        Self::physical(x, z, &self.u_node[i + self.grid.nx * j])
    }
    pub fn w_phys(&self, i: usize, j: usize) -> (f64, f64) {
        let (x, z) = self.grid.w_pos(i, j);
        Self::physical(x, z, &self.w_node[i + self.grid.nx * j])
    }
    pub fn cell_phys(&self, i: usize, j: usize) -> (f64, f64) {
        let (x, z) = self.grid.cell_pos(i, j);
        Self::physical(x, z, &self.cell[i + self.grid.nx * j])
    }
    pub fn vertex_phys(&self, i: usize, j: usize) -> (f64, f64) {
        let (x, z) = self.grid.vertex_pos(i, j);
        Self::physical(x, z, &self.vertex[i + self.grid.nx * j])
    }

    /// Physical area of the domain by midpoint quadrature of `det J`.
    pub fn area(&self) -> f64 {
        self.cell.iter().map(|l| l.det()).sum::<f64>() * self.grid.dx() * self.grid.dz()
    }
}

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
pub type TensorFn = Arc<dyn Fn(f64, f64) -> [f64; 4] + Send + Sync>;
/// Boundary data as a function of the graph abscissa `x`.
pub type BoundaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const FD_STEP: f64 = 2e-3;

/// Sixth-order central difference of a scalar closure along axis `k`.
pub fn fd_partial(f: &(dyn Fn(f64, f64) -> f64 + Sync), x: f64, y: f64, k: usize) -> f64 {
    let h = FD_STEP;
    let at = |t: f64| if k == 0 { f(x + t, y) } else { f(x, y + t) };
    (45.0 * (at(h) - at(-h)) - 9.0 * (at(2.0 * h) - at(-2.0 * h)) + (at(3.0 * h) - at(-3.0 * h))) / (60.0 * h)
}

/// Row divergence `(d_1 F_i1 + d_2 F_i2)_i` of a tensor closure.
pub fn fd_div_tensor(f: &TensorFn, x: f64, y: f64) -> [f64; 2] {
    let c = |idx: usize| move |a: f64, b: f64| f(a, b)[idx];
    [
        fd_partial(&c(0), x, y, 0) + fd_partial(&c(1), x, y, 1),
        fd_partial(&c(2), x, y, 0) + fd_partial(&c(3), x, y, 1),
    ]
}

/// Divergence of a vector closure.
pub fn fd_div_vector(f: &VectorFn, x: f64, y: f64) -> f64 {
    let c = |idx: usize| move |a: f64, b: f64| f(a, b)[idx];
    fd_partial(&c(0), x, y, 0) + fd_partial(&c(1), x, y, 1)
}

/// Unit normal (outward, pointing below the graph) and tangent at the boundary point over `x`.
pub fn boundary_frame(dphi: f64) -> ([f64; 2], [f64; 2], f64) {
    let s = (1.0 + dphi * dphi).sqrt();
    ([dphi / s, -1.0 / s], [1.0 / s, dphi / s], s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(grid: &StripGrid, seed: u64) -> MacField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = MacField::zeros(grid);
        v.u.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        v.p.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let nx = grid.nx;
        for x in v.w[nx..nx * grid.nz].iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        v
    }

    fn remove_mean(x: &mut [f64]) {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter_mut().for_each(|v| *v -= m);
    }

    #[test]
    fn flat_stokes_inverts_operator() {
        let grid = StripGrid::new(1.0, 0.5, 16, 8).unwrap();
        for alpha in [0.0, 1.5] {
            let s = FlatStokes::new(grid, alpha);
            let mut v = random(&grid, 3);
            remove_mean(&mut v.p);
            if alpha == 0.0 {
                remove_mean(&mut v.u);
            }
            let r = s.apply(&v);
            let (back, defects) = s.solve(&r);
            let mut diff = back.clone();
            diff.axpy(-1.0, &v);
            let mx = |x: &[f64]| x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(diff.max_abs() < 1e-10, "alpha {alpha}: u {} w {} p {}", mx(&diff.u), mx(&diff.w), mx(&diff.p));
            assert!(defects.divergence.abs() < 1e-12);
        }
    }

    #[test]
    fn flat_poisson_inverts_operator() {
        let grid = StripGrid::new(2.0, 1.0, 32, 16).unwrap();
        let p = FlatPoisson::new(grid);
        let mut v = random(&grid, 9).u;
        remove_mean(&mut v);
        let (back, mean) = p.solve(&p.apply(&v));
        assert!(mean.abs() < 1e-12);
        assert!(back.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn robin_column_solves_tridiagonal() {
        let (nz, dz, a) = (12, 0.1, 2.0);
        let x: Vec<f64> = (0..nz).map(|j| (j as f64 * 0.7).sin()).collect();
        let mut r = vec![0.0; nz];
        for j in 0..nz {
            let up = if j + 1 < nz { x[j + 1] } else { x[j] };
            let dn = if j > 0 { x[j - 1] } else { x[j] };
            r[j] = -(up - 2.0 * x[j] + dn) / (dz * dz) + if j == 0 { a * x[0] / dz } else { 0.0 };
        }
        let y = robin_column(&r, nz, dz, a);
        assert!(x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-10));
    }
}
