//! Laplace equation with Neumann data: `Lap u = f - Div F`, `(grad u + F) . n = chi`.
//!
//! `halfspace_neumann` is the spectral reflection solver on the truncated half-space;
//! `solve_neumann_rough` is the finite-volume sweep on a flattened rough strip,
//! preconditioned by the flat cell-centred Laplacian and localized per patch.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_spaces::SobolevIndex;
use crate::fv::{boundary_frame, fd_div_vector, BoundaryFn, FlatPoisson, ScalarFn, StripDomain, StripGeometry, StripGrid, VectorFn};
use crate::grid::{forward, inverse_real, spectral_derivative, wavevector, GridField, Rank};
use crate::halfspace::{lift_divergence, reflect_component, HalfSpaceGrid, Parity};
use crate::rough_stokes::{patch_weights, strip_partition, SweepRecord};

/// Half-space solution with its measured residuals.
#[derive(Debug, Clone)]
pub struct HalfSpaceNeumann {
    pub u: GridField,
    pub grad: GridField,
    /// `int chi` seen by the solve (zero when compatible).
    pub defect: f64,
    pub residual_interior: f64,
    pub residual_boundary: f64,
}

/// Trace profile `eta(z) = exp(-z^2 / delta^2)`, used to peel the normal trace of `F` off
/// before the odd reflection.
fn eta(z: f64, delta: f64) -> [f64; 2] {
    let e = (-(z * z) / (delta * delta)).exp();
    [e, -2.0 * z / (delta * delta) * e]
}

/// Solve `Lap u = -Div F` on `[0, L) x [0, H)` with `-d_z u - F_2 = chi` at `z = 0` and a
/// padded top. `F` is split as `F~ + (0, F_2(x, 0) eta(z))`: the first part is solved by
/// parity reflection on the torus (`u` even, `F_1` even, `F_2` odd), the second by the
/// harmonic channel lift together with `chi`. The mean of `u` is zero.
pub fn halfspace_neumann(grid: &HalfSpaceGrid, f: &GridField, chi: &GridField, tol: f64) -> Result<HalfSpaceNeumann> {
    let (nx, m) = (grid.nx, grid.nz);
    if f.rank != Rank::Vector || f.nodes != [nx, m] || chi.nodes != [nx] {
        return Err(Error::Grid("halfspace_neumann expects vector F on the half grid and chi on its boundary".into()));
    }
    let delta = grid.height / 8.0;
    let trace: Vec<f64> = f.values[1][..nx].to_vec();
    let trace_x = spectral_derivative(&trace, &[nx], &[grid.length], 0);
    let mut f2 = f.values[1].clone();
    let mut h = vec![0.0; nx * m];
    for j in 0..m {
        let e = eta(j as f64 * grid.dz(), delta);
        for i in 0..nx {
            f2[i + nx * j] -= trace[i] * e[0];
            h[i + nx * j] = -(trace_x[i] * e[0] + trace[i] * e[1]);
        }
    }
    // Torus part: v^ = i xi . F^ / |xi|^2.
    let nodes = grid.torus_nodes();
    let ext = grid.torus_extent();
    let t1 = forward(&reflect_component(grid, &f.values[0], Parity::Even), &nodes);
    let t2 = forward(&reflect_component(grid, &f2, Parity::Odd), &nodes);
    let vh: Vec<_> = (0..t1.len())
        .into_par_iter()
        .map(|idx| {
            let (k1, k2) = wavevector(idx, &nodes, &ext, true);
            let s = k1 * k1 + k2 * k2;
            if s == 0.0 {
                num_complex::Complex64::new(0.0, 0.0)
            } else {
                num_complex::Complex64::new(0.0, 1.0) * (t1[idx] * k1 + t2[idx] * k2) / s
            }
        })
        .collect();
    let v = inverse_real(vh, &nodes);
    let vx = spectral_derivative(&v, &nodes, &ext, 0);
    let vz = spectral_derivative(&v, &nodes, &ext, 1);
    let g: Vec<f64> = (0..nx).map(|i| chi.values[0][i] + trace[i]).collect();
    let hf = GridField::new(&grid.half_extent(), &[nx, m], Rank::Scalar, vec![h])?;
    let gf = GridField::new(&[grid.length], &[nx], Rank::Scalar, vec![g])?;
    let lift = lift_divergence(grid, &hf, &gf, tol)?;
    let mut u: Vec<f64> = (0..nx * m).map(|k| v[k] + lift.theta.values[0][k]).collect();
    let gx: Vec<f64> = (0..nx * m).map(|k| vx[k] + lift.grad.values[0][k]).collect();
    let gz: Vec<f64> = (0..nx * m).map(|k| vz[k] + lift.grad.values[1][k]).collect();
    // Zero mean over trapezoid-in-z weights.
    let wsum: f64 = (0..nx * m).map(|k| if k < nx { 0.5 } else { 1.0 }).sum();
    let mean = u.iter().enumerate().map(|(k, x)| if k < nx { 0.5 * x } else { *x }).sum::<f64>() / wsum;
    u.iter_mut().for_each(|x| *x -= mean);
    let bres = (0..nx)
        .map(|i| (-gz[i] - f.values[1][i] - chi.values[0][i]).abs())
        .fold(0.0, f64::max);
    let scale = f
        .values
        .iter()
        .flatten()
        .chain(&chi.values[0])
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(1e-300);
    Ok(HalfSpaceNeumann {
        u: GridField::new(&grid.half_extent(), &[nx, m], Rank::Scalar, vec![u])?,
        grad: GridField::new(&grid.half_extent(), &[nx, m], Rank::Vector, vec![gx, gz])?,
        defect: lift.defect,
        residual_interior: lift.residual_interior,
        residual_boundary: bres / scale,
    })
}

/// Data of the rough Neumann problem; absent fields are zero.
#[derive(Clone, Default)]
pub struct NeumannData {
    /// Divergence-form data `F`.
    pub flux: Option<VectorFn>,
    /// Non-divergence data `f`.
    pub source: Option<ScalarFn>,
    pub chi: Option<BoundaryFn>,
}

impl std::fmt::Debug for NeumannData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeumannData")
            .field("flux", &self.flux.is_some())
            .field("source", &self.source.is_some())
            .field("chi", &self.chi.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct NeumannProblem {
    pub domain: StripDomain,
    pub data: NeumannData,
    pub index: SobolevIndex,
    pub charts: usize,
}

impl NeumannProblem {
    pub fn new(domain: StripDomain, data: NeumannData) -> Self {
        Self {
            domain,
            data,
            index: SobolevIndex { s: 1.0, p: 2.0 },
            charts: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeumannOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub localize: bool,
    pub compat_tol: f64,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 80,
            localize: true,
            compat_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeumannReport {
    pub sweeps: usize,
    pub converged: bool,
    pub residual_interior: f64,
    pub residual_bc: f64,
    pub history: Vec<SweepRecord>,
    pub compat_defect: f64,
    /// `|u|_{W^{1,2}} / (|F|_{L^2} + |f|_{L^2} + |chi|_{L^2})`; `None` for zero data.
    pub estimate_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NeumannSolution {
    pub geometry: Arc<StripGeometry>,
    /// Cell values, zero physical mean.
    pub u: Vec<f64>,
    pub report: NeumannReport,
}

/// Transformed finite-volume residual `R(v) = -Div_h P(v) + det J (f - Div F)`.
#[derive(Debug, Clone)]
pub struct NeumannOperator {
    pub geom: Arc<StripGeometry>,
    src: Vec<f64>,
    /// Bottom flux `P_2 = -s (chi - F . n)` at `x_{i+1/2}`.
    bottom: Vec<f64>,
    pub flat: FlatPoisson,
    compat_defect: f64,
}

impl NeumannOperator {
    pub fn new(geom: Arc<StripGeometry>, data: &NeumannData, compat_tol: f64) -> Result<Self> {
        let g = geom.grid;
        let (nx, nz) = (g.nx, g.nz);
        let mut src: Vec<f64> = (0..nx * nz)
            .into_par_iter()
            .map(|k| {
                let (x, y) = geom.cell_phys(k % nx, k / nx);
                let mut v = data.source.as_ref().map(|f| f(x, y)).unwrap_or(0.0);
                if let Some(ff) = &data.flux {
                    v -= fd_div_vector(ff, x, y);
                }
                geom.cell[k].det() * v
            })
            .collect();
        let bottom: Vec<f64> = (0..nx)
            .map(|i| {
                let x = g.w_pos(i, 0).0;
                let d = geom.bottom_c[i];
                let (n, _, s) = boundary_frame(d[1]);
                let mut c = data.chi.as_ref().map(|f| f(x)).unwrap_or(0.0);
                if let Some(ff) = &data.flux {
                    let fv = ff(x, d[0]);
                    c -= fv[0] * n[0] + fv[1] * n[1];
                }
                -s * c
            })
            .collect();
        let area = g.dx() * g.dz();
        let mass = src.iter().sum::<f64>() * area;
        let flux = -bottom.iter().sum::<f64>() * g.dx();
        let defect = mass - flux;
        let scale = src.iter().map(|v| v.abs()).sum::<f64>() * area + bottom.iter().map(|v| v.abs()).sum::<f64>() * g.dx();
        if defect.abs() > compat_tol * scale.max(1e-300) {
            return Err(Error::Compatibility { defect });
        }
        let shift = defect / (nx * nz) as f64 / area;
        src.iter_mut().for_each(|v| *v -= shift);
        Ok(Self {
            flat: FlatPoisson::new(g),
            geom,
            src,
            bottom,
            compat_defect: defect,
        })
    }

    pub fn grid(&self) -> &StripGrid {
        &self.geom.grid
    }

    /// Flattened gradient `[d_x v, d_z v]` at cell centres (one-sided at the walls).
    pub fn cell_gradient(&self, v: &[f64]) -> Vec<[f64; 2]> {
        let g = self.grid();
        let (nx, nz, dx, dz) = (g.nx, g.nz, g.dx(), g.dz());
        (0..nx * nz)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                [dxc(g, v, i, j, dx), dzc(v, nx, nz, i, j, dz)]
            })
            .collect()
    }

    pub fn residual(&self, v: &[f64]) -> Vec<f64> {
        let geom = &*self.geom;
        let g = &geom.grid;
        let (nx, nz, dx, dz) = (g.nx, g.nz, g.dx(), g.dz());
        let p1: Vec<f64> = (0..nx * nz)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                let im = g.im(i);
                let l = &geom.u_node[k];
                let vx = (v[k] - v[im + nx * j]) / dx;
                let vz = 0.5 * (dzc(v, nx, nz, im, j, dz) + dzc(v, nx, nz, i, j, dz));
                geom.b_u[k] * vx - l.a * vz
            })
            .collect();
        let p2: Vec<f64> = (0..nx * (nz + 1))
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                if j == 0 {
                    return self.bottom[i];
                }
                if j == nz {
                    return 0.0;
                }
                let l = &geom.w_node[k];
                let vz = (v[k] - v[k - nx]) / dz;
                let vx = 0.5 * (dxc(g, v, i, j - 1, dx) + dxc(g, v, i, j, dx));
                -geom.a_w[k] * vx + (1.0 + l.a * l.a) / l.b * vz
            })
            .collect();
        (0..nx * nz)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                let div = (p1[g.ip(i) + nx * j] - p1[k]) / dx + (p2[i + nx * (j + 1)] - p2[k]) / dz;
                -div + self.src[k]
            })
            .collect()
    }

    /// `(interior, boundary)` max-norms of a residual, mean removed; the boundary part is the first cell row.
    pub fn residual_norms(&self, r: &[f64]) -> (f64, f64) {
        let nx = self.grid().nx;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let b = r[..nx].iter().fold(0.0f64, |a, x| a.max((x - mean).abs()));
        let i = r[nx..].iter().fold(0.0f64, |a, x| a.max((x - mean).abs()));
        (i, b)
    }

    pub fn compat_defect(&self) -> f64 {
        self.compat_defect
    }
}

fn dxc(g: &StripGrid, v: &[f64], i: usize, j: usize, dx: f64) -> f64 {
    (v[g.ip(i) + g.nx * j] - v[g.im(i) + g.nx * j]) / (2.0 * dx)
}

fn dzc(v: &[f64], nx: usize, nz: usize, i: usize, j: usize, dz: f64) -> f64 {
    let at = |jj: usize| v[i + nx * jj];
    if j == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * dz)
    } else if j == nz - 1 {
        (3.0 * at(j) - 4.0 * at(j - 1) + at(j - 2)) / (2.0 * dz)
    } else {
        (at(j + 1) - at(j - 1)) / (2.0 * dz)
    }
}

fn remove_weighted_mean(v: &mut [f64], geom: &StripGeometry) {
    let w: f64 = geom.cell.iter().map(|l| l.det()).sum();
    let m = v.iter().zip(&geom.cell).map(|(x, l)| x * l.det()).sum::<f64>() / w;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Localized preconditioned sweeps `v <- sum_j S^{-1}(xi_j (S v - R) + [S, xi_j] v)`.
pub fn solve_neumann_rough(problem: &NeumannProblem, grid: StripGrid, opts: &NeumannOptions) -> Result<NeumannSolution> {
    let geom = Arc::new(StripGeometry::build(&problem.domain, grid)?);
    solve_neumann_on(problem, geom, opts)
}

pub fn solve_neumann_on(problem: &NeumannProblem, geom: Arc<StripGeometry>, opts: &NeumannOptions) -> Result<NeumannSolution> {
    let grid = geom.grid;
    let op = NeumannOperator::new(geom.clone(), &problem.data, opts.compat_tol)?;
    let patches: Option<Vec<Vec<f64>>> = if opts.localize {
        let pw = patch_weights(&grid, &strip_partition(&problem.domain, problem.charts)?)?;
        Some(pw.into_iter().map(|p| p.p).collect())
    } else {
        None
    };
    let n = grid.cells();
    let mut v = vec![0.0; n];
    let r0 = op.residual(&v);
    let (a0, b0) = op.residual_norms(&r0);
    let scale = a0.max(b0).max(1e-300);
    let mut prev = 1.0;
    let mut history = Vec::new();
    let mut converged = a0.max(b0) == 0.0;
    let mut bad = 0;
    let mut r = r0;
    while !converged && history.len() < opts.max_iter {
        v = match &patches {
            None => {
                let (d, _) = op.flat.solve(&r);
                v.iter().zip(&d).map(|(a, b)| a - b).collect()
            }
            Some(patches) => {
                let sv = op.flat.apply(&v);
                let base: Vec<f64> = sv.iter().zip(&r).map(|(a, b)| a - b).collect();
                let parts: Vec<Vec<f64>> = patches
                    .par_iter()
                    .map(|xi| {
                        let xv: Vec<f64> = v.iter().zip(xi).map(|(a, b)| a * b).collect();
                        let sxv = op.flat.apply(&xv);
                        let rhs: Vec<f64> = (0..n).map(|k| xi[k] * base[k] + sxv[k] - xi[k] * sv[k]).collect();
                        op.flat.solve(&rhs).0
                    })
                    .collect();
                let mut sum = vec![0.0; n];
                for p in parts {
                    sum.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                }
                sum
            }
        };
        remove_weighted_mean(&mut v, &geom);
        r = op.residual(&v);
        let (a, b) = op.residual_norms(&r);
        let res = a.max(b) / scale;
        let ratio = res / prev;
        history.push(SweepRecord {
            sweep: history.len() + 1,
            residual: res,
            ratio,
        });
        bad = if ratio >= 1.0 { bad + 1 } else { 0 };
        if bad >= 3 {
            return Err(Error::Divergence { factor: ratio, delta: None });
        }
        prev = res;
        converged = res <= opts.tol;
    }
    let (ri, rb) = op.residual_norms(&r);
    let mut sol = NeumannSolution {
        geometry: geom,
        u: v,
        report: NeumannReport {
            sweeps: history.len(),
            converged,
            residual_interior: ri / scale,
            residual_bc: rb / scale,
            history,
            compat_defect: op.compat_defect(),
            estimate_ratio: None,
        },
    };
    sol.report.estimate_ratio = estimate_ratio(problem, &sol);
    Ok(sol)
}

/// Physical gradient at cells: `grad_y v = [d_x v - (a/b) d_z v, d_z v / b]`.
pub fn physical_gradient(geom: &StripGeometry, v: &[f64]) -> Vec<[f64; 2]> {
    let g = &geom.grid;
    let (nx, nz, dx, dz) = (g.nx, g.nz, g.dx(), g.dz());
    (0..nx * nz)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            let l = &geom.cell[k];
            let (px, pz) = (dxc(g, v, i, j, dx), dzc(v, nx, nz, i, j, dz));
            [px - l.a / l.b * pz, pz / l.b]
        })
        .collect()
}

/// `|u|_{W^{1,2}}` over cells with weights `det J dx dz`.
pub fn w12_norm(geom: &StripGeometry, v: &[f64]) -> f64 {
    let area = geom.grid.dx() * geom.grid.dz();
    let grad = physical_gradient(geom, v);
    v.iter()
        .zip(&grad)
        .zip(&geom.cell)
        .map(|((u, d), l)| (u * u + d[0] * d[0] + d[1] * d[1]) * l.det() * area)
        .sum::<f64>()
        .sqrt()
}

/// `W^{1,2}` distance between the computed cells and a closed form (mean matched).
pub fn w12_error(geom: &StripGeometry, v: &[f64], exact: &(dyn Fn(f64, f64) -> f64 + Sync)) -> f64 {
    let nx = geom.grid.nx;
    let mut e: Vec<f64> = (0..v.len())
        .map(|k| {
            let (x, y) = geom.cell_phys(k % nx, k / nx);
            v[k] - exact(x, y)
        })
        .collect();
    remove_weighted_mean(&mut e, geom);
    w12_norm(geom, &e)
}

fn estimate_ratio(problem: &NeumannProblem, sol: &NeumannSolution) -> Option<f64> {
    let geom = &*sol.geometry;
    let g = &geom.grid;
    let nx = g.nx;
    let area = g.dx() * g.dz();
    let d = &problem.data;
    let cells = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        (0..g.cells())
            .map(|k| {
                let (x, y) = geom.cell_phys(k % nx, k / nx);
                f(x, y).powi(2) * geom.cell[k].det() * area
            })
            .sum::<f64>()
            .sqrt()
    };
    let f_norm = d.flux.as_ref().map(|f| cells(&|x, y| f(x, y)[0].hypot(f(x, y)[1]))).unwrap_or(0.0);
    let s_norm = d.source.as_ref().map(|f| cells(&|x, y| f(x, y))).unwrap_or(0.0);
    let c_norm = d
        .chi
        .as_ref()
        .map(|c| {
            (0..nx)
                .map(|i| {
                    let x = g.w_pos(i, 0).0;
                    c(x).powi(2) * boundary_frame(geom.bottom_c[i][1]).2 * g.dx()
                })
                .sum::<f64>()
                .sqrt()
        })
        .unwrap_or(0.0);
    let rhs = f_norm + s_norm + c_norm;
    (rhs > 0.0).then(|| w12_norm(geom, &sol.u) / rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::Profile;
    use std::f64::consts::PI;

    fn domain(k: f64) -> StripDomain {
        if k == 0.0 {
            return StripDomain::flat(1.0, 1.0);
        }
        StripDomain {
            profile: Profile::Cos {
                amplitude: k / (2.0 * PI),
                wavenumber: 2.0 * PI,
                phase: 0.0,
            },
            length: 1.0,
            height: 1.0,
        }
    }

    /// `u* = cos(2 pi x) exp(-y^2 / s^2) + y^2 exp(-y^2/s^2)` with its Laplacian and gradient.
    fn manufactured() -> (ScalarFn, ScalarFn, Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>) {
        let s2 = 0.08;
        let k = 2.0 * PI;
        let u = move |x: f64, y: f64| {
            let e = (-y * y / s2).exp();
            ((k * x).cos() + y * y) * e
        };
        let grad = move |x: f64, y: f64| {
            let e = (-y * y / s2).exp();
            let de = -2.0 * y / s2 * e;
            [-k * (k * x).sin() * e, (k * x).cos() * de + 2.0 * y * e + y * y * de]
        };
        let lap = move |x: f64, y: f64| {
            let e = (-y * y / s2).exp();
            let de = -2.0 * y / s2 * e;
            let dde = (-2.0 / s2 + 4.0 * y * y / (s2 * s2)) * e;
            -k * k * (k * x).cos() * e + (k * x).cos() * dde + 2.0 * e + 4.0 * y * de + y * y * dde
        };
        (Arc::new(u), Arc::new(lap), Arc::new(grad))
    }

    fn manufactured_problem(k: f64) -> (NeumannProblem, ScalarFn) {
        let d = domain(k);
        let chart = d.chart().unwrap();
        let (u, lap, grad) = manufactured();
        let chi: BoundaryFn = Arc::new(move |x: f64| {
            let p = chart.phi_derivs(x);
            let (n, _, _) = boundary_frame(p[1]);
            let gr = grad(x, p[0]);
            gr[0] * n[0] + gr[1] * n[1]
        });
        let data = NeumannData {
            source: Some(lap),
            chi: Some(chi),
            ..Default::default()
        };
        (NeumannProblem::new(d, data), u)
    }

    #[test]
    fn halfspace_zero_data_gives_zero() {
        let grid = HalfSpaceGrid::from_torus(1.0, 2.0, 16, 32);
        let f = grid.half(Rank::Vector);
        let chi = grid.boundary();
        let s = halfspace_neumann(&grid, &f, &chi, 1e-8).unwrap();
        assert!(s.u.values[0].iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn halfspace_recovers_channel_mode() {
        // u* = cos(kx) cosh(k(H - z)) / (k sinh(kH)): harmonic, -d_z u*(0) = cos(kx), d_z u*(H) = 0.
        let (l, h) = (1.0, 1.0);
        let grid = HalfSpaceGrid::from_torus(l, h, 32, 64);
        let k = 2.0 * PI;
        let chi = grid.boundary_fn(|x| (k * x).cos());
        let s = halfspace_neumann(&grid, &grid.half(Rank::Vector), &chi, 1e-8).unwrap();
        for (idx, v) in s.u.values[0].iter().enumerate() {
            let (x, z) = s.u.coords(idx);
            let exact = (k * x).cos() * (k * (h - z)).cosh() / (k * (k * h).sinh());
            assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
        }
        assert!(s.residual_boundary < 1e-8);
    }

    #[test]
    fn halfspace_balances_flux_data() {
        // F with nonzero normal trace, chi chosen so that -d_z u - F_2 = chi has zero-mean chi.
        let grid = HalfSpaceGrid::from_torus(1.0, 2.0, 32, 128);
        let k = 2.0 * PI;
        let e = |z: f64| (-z * z / 0.02).exp();
        let f1 = grid.half_fn(|x, z| (k * x).sin() * e(z));
        let f2 = grid.half_fn(|x, z| (k * x).cos() * e(z));
        let f = GridField::new(&grid.half_extent(), &[32, 64], Rank::Vector, vec![f1.values[0].clone(), f2.values[0].clone()]).unwrap();
        let chi = grid.boundary_fn(|x| 0.3 * (2.0 * k * x).cos());
        let s = halfspace_neumann(&grid, &f, &chi, 1e-8).unwrap();
        assert!(s.residual_boundary < 1e-7, "{}", s.residual_boundary);
        assert!(s.residual_interior < 1e-8, "{}", s.residual_interior);
    }

    #[test]
    fn halfspace_rejects_incompatible_flux() {
        let grid = HalfSpaceGrid::from_torus(1.0, 2.0, 16, 32);
        let chi = grid.boundary_fn(|_| 1.0);
        let r = halfspace_neumann(&grid, &grid.half(Rank::Vector), &chi, 1e-8);
        assert!(matches!(r, Err(Error::Compatibility { .. })));
    }

    #[test]
    fn flat_strip_converges_in_one_sweep() {
        let (p, _) = manufactured_problem(0.0);
        let s = solve_neumann_rough(&p, StripGrid::new(1.0, 1.0, 32, 32).unwrap(), &NeumannOptions::default()).unwrap();
        assert_eq!(s.report.sweeps, 1);
        assert!(s.report.residual_interior < 1e-10);
    }

    #[test]
    fn rough_strip_contracts_and_converges() {
        let (p, u) = manufactured_problem(0.05);
        let coarse = solve_neumann_rough(&p, StripGrid::new(1.0, 1.0, 32, 32).unwrap(), &NeumannOptions::default()).unwrap();
        assert!(coarse.report.converged);
        assert!(coarse.report.history.iter().all(|h| h.ratio < 0.5), "{:?}", coarse.report.history);
        let fine = solve_neumann_rough(&p, StripGrid::new(1.0, 1.0, 64, 64).unwrap(), &NeumannOptions::default()).unwrap();
        let e1 = w12_error(&coarse.geometry, &coarse.u, &*u);
        let e2 = w12_error(&fine.geometry, &fine.u, &*u);
        assert!((e1 / e2).log2() >= 1.0, "{e1} {e2}");
    }
}
