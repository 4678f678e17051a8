//! Corner singularities of perfect-slip Stokes flow in wedges.
//!
//! On the sector `{0 < arg z < theta}` the stream function `w = Im(z^kappa)`,
//! `kappa = pi / theta`, is biharmonic with `w = Lap w = 0` on both edges, so
//! `u = (-d_2 w, d_1 w)` is a perfect-slip Stokes flow with constant pressure. Its
//! gradient scales like `r^(kappa - 2)`, and `|grad^2 u|^p` is integrable at the corner
//! iff `p (3 - kappa) < 2`. This module samples the family, measures the exponent and
//! the integrability threshold, and checks the boundary identities.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charts::BoundaryChart;
use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WedgeDomain {
    pub theta: f64,
    pub kappa: f64,
}

impl WedgeDomain {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 2.0 * PI) {
            return Err(Error::Data(format!("opening angle {theta} outside (0, 2 pi)")));
        }
        Ok(Self { theta, kappa: PI / theta })
    }

    /// Polar angle with the branch cut placed opposite the wedge bisector.
    pub fn angle(&self, x: f64, y: f64) -> f64 {
        let mid = 0.5 * self.theta;
        let mut a = y.atan2(x);
        while a <= mid - PI {
            a += 2.0 * PI;
        }
        while a > mid + PI {
            a -= 2.0 * PI;
        }
        a
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let a = self.angle(x, y);
        (0.0..=self.theta).contains(&a)
    }

    /// `r^kappa sin(kappa phi)`, analytic off the cut.
    pub fn stream(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        r.powf(self.kappa) * (self.kappa * self.angle(x, y)).sin()
    }

    /// Gradient exponent `kappa - 2`.
    pub fn analytic_exponent(&self) -> f64 {
        self.kappa - 2.0
    }

    /// Decay rate of `int_{A_k} |grad^2 u|^p` over dyadic annuli: `p (kappa - 3) + 2`.
    pub fn analytic_gamma(&self, p: f64) -> f64 {
        p * (self.kappa - 3.0) + 2.0
    }

    /// Integer `kappa` gives the polynomial `Im z^kappa`, whose second velocity derivatives vanish.
    pub fn is_polynomial(&self) -> bool {
        (self.kappa - self.kappa.round()).abs() < 1e-12
    }

    pub fn analytic_bounded(&self, p: f64) -> bool {
        self.is_polynomial() || p * (3.0 - self.kappa) < 2.0
    }
}

/// Offset Cartesian samples on `[-R, R]^2`: node `(i, j)` sits at `(-R + (i + 1/2) h, -R + (j + 1/2) h)`,
/// so the corner is never a node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WedgeSample {
    pub domain: WedgeDomain,
    pub half_width: f64,
    pub n: usize,
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
}

impl WedgeSample {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (-self.half_width + (i as f64 + 0.5) * h, -self.half_width + (j as f64 + 0.5) * h)
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i + self.n * j]
    }

    /// Node and its stencil of radius `s` lie inside the wedge and the box.
    fn stencil_inside(&self, i: usize, j: usize, s: usize) -> bool {
        if i < s || j < s || i + s >= self.n || j + s >= self.n {
            return false;
        }
        let n = self.n;
        (i - s..=i + s).all(|a| (j - s..=j + s).all(|b| self.inside[a + n * b]))
    }
}

pub fn wedge_stream(domain: &WedgeDomain, half_width: f64, n: usize) -> Result<WedgeSample> {
    if n < 8 || n % 2 != 0 {
        return Err(Error::Grid(format!("wedge grid needs an even node count >= 8, got {n}")));
    }
    let h = 2.0 * half_width / n as f64;
    let (values, inside): (Vec<f64>, Vec<bool>) = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let x = -half_width + ((k % n) as f64 + 0.5) * h;
            let y = -half_width + ((k / n) as f64 + 0.5) * h;
            (domain.stream(x, y), domain.contains(x, y))
        })
        .unzip();
    Ok(WedgeSample {
        domain: *domain,
        half_width,
        n,
        values,
        inside,
    })
}

/// Velocity `(-d_2 w, d_1 w)` by centred differences at nodes whose 3x3 stencil is inside.
#[derive(Debug, Clone)]
pub struct VelocitySample {
    pub n: usize,
    pub h: f64,
    pub half_width: f64,
    pub u: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
    /// `max |div_h u| / max |grad_h u|` over nodes with a valid 3x3 velocity stencil.
    pub divergence: f64,
    /// `max |Lap_h u| / max |grad_h u|` for nodes farther than `8h` from the corner.
    pub momentum: f64,
}

pub fn velocity_from_stream(w: &WedgeSample) -> VelocitySample {
    let (n, h) = (w.n, w.spacing());
    let (u, valid): (Vec<[f64; 2]>, Vec<bool>) = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % n, k / n);
            if !w.stencil_inside(i, j, 1) {
                return ([0.0; 2], false);
            }
            let wx = (w.at(i + 1, j) - w.at(i - 1, j)) / (2.0 * h);
            let wy = (w.at(i, j + 1) - w.at(i, j - 1)) / (2.0 * h);
            ([-wy, wx], true)
        })
        .unzip();
    let mut v = VelocitySample {
        n,
        h,
        half_width: w.half_width,
        u,
        valid,
        divergence: 0.0,
        momentum: 0.0,
    };
    let ok = |i: usize, j: usize| i >= 1 && j >= 1 && i + 1 < n && j + 1 < n && {
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1), (i, j)]
            .iter()
            .all(|&(a, b)| v.valid[a + n * b])
    };
    let mut div: f64 = 0.0;
    let mut grad: f64 = 0.0;
    let mut lap: f64 = 0.0;
    for j in 1..n.saturating_sub(1) {
        for i in 1..n - 1 {
            if !ok(i, j) {
                continue;
            }
            let g = gradient_at(&v, i, j);
            div = div.max((g[0] + g[3]).abs());
            grad = grad.max(g.iter().fold(0.0f64, |a, x| a.max(x.abs())));
            let (x, y) = node(v.half_width, h, i, j);
            if x.hypot(y) > 8.0 * h {
                for c in 0..2 {
                    let f = |a: usize, b: usize| v.u[a + n * b][c];
                    let l = (f(i + 1, j) + f(i - 1, j) + f(i, j + 1) + f(i, j - 1) - 4.0 * f(i, j)) / (h * h);
                    lap = lap.max(l.abs());
                }
            }
        }
    }
    let grad = grad.max(1e-300);
    v.divergence = div / grad;
    v.momentum = lap / grad;
    v
}

fn node(half_width: f64, h: f64, i: usize, j: usize) -> (f64, f64) {
    (-half_width + (i as f64 + 0.5) * h, -half_width + (j as f64 + 0.5) * h)
}

/// `[d1 u1, d2 u1, d1 u2, d2 u2]` by centred differences.
fn gradient_at(v: &VelocitySample, i: usize, j: usize) -> [f64; 4] {
    let (n, h) = (v.n, v.h);
    let f = |a: usize, b: usize, c: usize| v.u[a + n * b][c];
    [
        (f(i + 1, j, 0) - f(i - 1, j, 0)) / (2.0 * h),
        (f(i, j + 1, 0) - f(i, j - 1, 0)) / (2.0 * h),
        (f(i + 1, j, 1) - f(i - 1, j, 1)) / (2.0 * h),
        (f(i, j + 1, 1) - f(i, j - 1, 1)) / (2.0 * h),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub intercept: f64,
    /// `(r, sup |grad u|)` pairs used in the fit, `r` taken at the maximizing node.
    pub points: Vec<(f64, f64)>,
}

/// Geometric radii `r0 q^k`, `k < count`.
pub fn geometric_radii(r0: f64, q: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| r0 * q.powi(k as i32)).collect()
}

/// Least-squares slope of `log sup_{|x| ~ r} |grad u|` against `log r`.
pub fn measure_exponent(u: &VelocitySample, radii: &[f64]) -> Result<ExponentFit> {
    if radii.len() < 4 {
        return Err(Error::Data(format!("exponent fit needs at least 4 radii, got {}", radii.len())));
    }
    let q = radii[1] / radii[0];
    if radii.windows(2).any(|w| ((w[1] / w[0]) / q - 1.0).abs() > 1e-9) || !(q > 1.0) {
        return Err(Error::Data("radii must be increasing and geometric".into()));
    }
    let h = u.h;
    if radii[0] < 4.0 * h - 1e-12 || radii[radii.len() - 1] + 2.0 * h > u.half_width {
        return Err(Error::Data(format!(
            "radii must lie in [4h, R - 2h] = [{}, {}]",
            4.0 * h,
            u.half_width - 2.0 * h
        )));
    }
    let n = u.n;
    let points: Vec<(f64, f64)> = radii
        .par_iter()
        .map(|&r| {
            let mut best = (r, 0.0f64);
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let (x, y) = node(u.half_width, h, i, j);
                    let rr = x.hypot(y);
                    if (rr - r).abs() > h {
                        continue;
                    }
                    let ok = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                        .iter()
                        .all(|&(a, b)| u.valid[a + n * b]);
                    if !ok {
                        continue;
                    }
                    let g = gradient_at(u, i, j);
                    let m = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if m > best.1 {
                        best = (rr, m);
                    }
                }
            }
            best
        })
        .collect();
    if points.iter().any(|p| !(p.1 > 0.0)) {
        return Err(Error::Data("no admissible nodes on one of the radii".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(ExponentFit {
        exponent: slope,
        intercept,
        points,
    })
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiharmonicReport {
    /// Max 13-point `Lap_h^2 w` over nodes with `r >= r_min` and the 5x5 stencil inside.
    pub interior: f64,
    /// Max `|w|` on both edges.
    pub edge_value: f64,
    /// Max 5-point `|Lap_h w|` centred on edge points.
    pub edge_laplacian: f64,
    pub nodes: usize,
}

/// Discrete biharmonic residual and edge traces of `w` on the annular region `r_min <= r <= r_max`.
pub fn biharmonic_check(w: &WedgeSample, r_min: f64, r_max: f64) -> BiharmonicReport {
    let (n, h) = (w.n, w.spacing());
    let hits: Vec<f64> = (0..n * n)
        .into_par_iter()
        .filter_map(|k| {
            let (i, j) = (k % n, k / n);
            let (x, y) = w.node(i, j);
            let r = x.hypot(y);
            if r < r_min || r > r_max || !w.stencil_inside(i, j, 2) {
                return None;
            }
            let f = |di: isize, dj: isize| w.at((i as isize + di) as usize, (j as isize + dj) as usize);
            let b = 20.0 * f(0, 0) - 8.0 * (f(1, 0) + f(-1, 0) + f(0, 1) + f(0, -1))
                + 2.0 * (f(1, 1) + f(1, -1) + f(-1, 1) + f(-1, -1))
                + (f(2, 0) + f(-2, 0) + f(0, 2) + f(0, -2));
            Some((b / h.powi(4)).abs())
        })
        .collect();
    let d = &w.domain;
    let mut edge_value: f64 = 0.0;
    let mut edge_laplacian: f64 = 0.0;
    let samples = 64;
    for k in 0..samples {
        let r = r_min + (r_max - r_min) * (k as f64 + 0.5) / samples as f64;
        for a in [0.0, d.theta] {
            let (x, y) = (r * a.cos(), r * a.sin());
            edge_value = edge_value.max(d.stream(x, y).abs());
            let l = (d.stream(x + h, y) + d.stream(x - h, y) + d.stream(x, y + h) + d.stream(x, y - h) - 4.0 * d.stream(x, y))
                / (h * h);
            edge_laplacian = edge_laplacian.max(l.abs());
        }
    }
    BiharmonicReport {
        interior: hits.iter().fold(0.0, |a: f64, b| a.max(*b)),
        edge_value,
        edge_laplacian,
        nodes: hits.len(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangentialReport {
    /// Max of `|d_1 w + d_2 w phi'|` along the graph.
    pub identity: f64,
    /// Max of `|phi' + d_1 w / d_2 w|` where `|d_2 w|` exceeds the floor.
    pub quotient: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

pub const POSITIVITY_FLOOR: f64 = 1e-6;

/// Evaluate the chain-rule identity `d_1 w + d_2 w phi' = 0` for `w` vanishing on the graph of
/// the chart profile, in chart coordinates, with centred differences of step `step`.
pub fn tangential_identity_check(
    w: &(dyn Fn(f64, f64) -> f64 + Sync),
    chart: &BoundaryChart,
    samples: usize,
    step: f64,
) -> Result<TangentialReport> {
    let local = |y1: f64, y2: f64| {
        let p = chart.to_physical([y1, y2]);
        w(p[0], p[1])
    };
    let mut report = TangentialReport {
        identity: 0.0,
        quotient: 0.0,
        evaluated: 0,
        skipped: 0,
    };
    for k in 0..samples {
        let y1 = -chart.r + 2.0 * chart.r * (k as f64 + 0.5) / samples as f64;
        let d = chart.phi_derivs(y1);
        let d1 = (local(y1 + step, d[0]) - local(y1 - step, d[0])) / (2.0 * step);
        let d2 = (local(y1, d[0] + step) - local(y1, d[0] - step)) / (2.0 * step);
        report.identity = report.identity.max((d1 + d2 * d[1]).abs());
        if d2 > POSITIVITY_FLOOR {
            report.quotient = report.quotient.max((d[1] + d1 / d2).abs());
            report.evaluated += 1;
        } else {
            report.skipped += 1;
        }
    }
    if report.evaluated == 0 {
        return Err(Error::Data(format!(
            "normal derivative below the positivity floor {POSITIVITY_FLOOR} at all {samples} samples"
        )));
    }
    Ok(report)
}

/// Third derivatives `[w_xxx, w_xxy, w_xyy, w_yyy]` of a closed form by centred differences.
fn third_derivatives(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> [f64; 4] {
    let d3 = |g: &dyn Fn(f64) -> f64| (g(2.0 * h) - 2.0 * g(h) + 2.0 * g(-h) - g(-2.0 * h)) / (2.0 * h.powi(3));
    let xxy = {
        let fxx = |yy: f64| (f(x + h, yy) - 2.0 * f(x, yy) + f(x - h, yy)) / (h * h);
        (fxx(y + h) - fxx(y - h)) / (2.0 * h)
    };
    let xyy = {
        let fyy = |xx: f64| (f(xx, y + h) - 2.0 * f(xx, y) + f(xx, y - h)) / (h * h);
        (fyy(x + h) - fyy(x - h)) / (2.0 * h)
    };
    [d3(&|t| f(x + t, y)), xxy, xyy, d3(&|t| f(x, y + t))]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrabilityVerdict {
    pub theta: f64,
    pub p: f64,
    /// `int_{A_k} |grad^2 u|^p` on dyadic annuli `A_k = {R 2^{-k-1} < r < R 2^{-k}}`.
    pub annuli: Vec<f64>,
    pub gamma: f64,
    pub gamma_analytic: f64,
    pub bounded: bool,
    pub bounded_analytic: bool,
}

/// Measure the dyadic decay rate of `|grad^2 u|^p` towards the corner; the local norm stays
/// bounded as the ball shrinks to the corner iff the rate is positive (geometric series).
/// Derivatives are centred differences of step `h`; quadrature is Gauss-Legendre in `log r`
/// and in the angle.
pub fn integrability(domain: &WedgeDomain, p: f64, r_max: f64, levels: usize, h: f64) -> Result<IntegrabilityVerdict> {
    if levels < 3 {
        return Err(Error::Data("at least 3 dyadic levels are needed".into()));
    }
    let r_min = r_max * 0.5f64.powi(levels as i32);
    if r_min < 16.0 * h {
        return Err(Error::Data(format!("innermost radius {r_min:e} below 16 h = {:e}", 16.0 * h)));
    }
    let radial = GaussLegendre::new(16);
    let angular = GaussLegendre::new(48);
    let (rn, rw) = (&radial.nodes, &radial.weights);
    let (an, aw) = (&angular.nodes, &angular.weights);
    let f = |x: f64, y: f64| domain.stream(x, y);
    let annuli: Vec<f64> = (0..levels)
        .into_par_iter()
        .map(|k| {
            let (lo, hi) = ((r_max * 0.5f64.powi(k as i32 + 1)).ln(), (r_max * 0.5f64.powi(k as i32)).ln());
            let mut sum = 0.0;
            for (t, wt) in rn.iter().zip(rw) {
                let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
                let r = s.exp();
                for (a, wa) in an.iter().zip(aw) {
                    let phi = 0.5 * domain.theta * (1.0 + a);
                    let d = third_derivatives(&f, r * phi.cos(), r * phi.sin(), h);
                    let m2 = d[0] * d[0] + 3.0 * d[1] * d[1] + 3.0 * d[2] * d[2] + d[3] * d[3];
                    // dA = r dr dphi = r^2 ds dphi.
                    sum += wt * wa * m2.powf(0.5 * p) * r * r;
                }
            }
            sum * 0.5 * (hi - lo) * 0.5 * domain.theta
        })
        .collect();
    let ks: Vec<f64> = (0..levels).map(|k| k as f64).collect();
    let logs: Vec<f64> = annuli.iter().map(|v| v.log2()).collect();
    let (slope, _) = least_squares(&ks, &logs);
    let gamma = -slope;
    Ok(IntegrabilityVerdict {
        theta: domain.theta,
        p,
        annuli,
        gamma,
        gamma_analytic: domain.analytic_gamma(p),
        bounded: gamma > 0.0,
        bounded_analytic: domain.analytic_bounded(p),
    })
}

/// One row of the sharpness table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub theta: f64,
    pub p: f64,
    pub exponent: f64,
    pub exponent_analytic: f64,
    pub gamma: f64,
    pub gamma_analytic: f64,
    pub bounded: bool,
    pub bounded_analytic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharpnessConfig {
    pub thetas: Vec<f64>,
    pub ps: Vec<f64>,
    /// Nodes per side of the stream-function grid on `[-1, 1]^2`.
    pub nodes: usize,
    /// Number of geometric radii (ratio 2) starting at `16 h`.
    pub radii: usize,
    /// Dyadic annuli below radius 1/2 in the integrability measurement.
    pub levels: usize,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            thetas: vec![2.0 * PI / 3.0, 3.0 * PI / 4.0, 7.0 * PI / 8.0],
            ps: vec![1.05, 1.25, 2.0],
            nodes: 1024,
            radii: 5,
            levels: 6,
        }
    }
}

pub fn sharpness_table(cfg: &SharpnessConfig) -> Result<Vec<SharpnessRow>> {
    let mut rows = Vec::new();
    for &theta in &cfg.thetas {
        let d = WedgeDomain::new(theta)?;
        let w = wedge_stream(&d, 1.0, cfg.nodes)?;
        let u = velocity_from_stream(&w);
        let h = w.spacing();
        let fit = measure_exponent(&u, &geometric_radii(16.0 * h, 2.0, cfg.radii))?;
        for &p in &cfg.ps {
            let step = 0.5f64.powi(cfg.levels as i32 + 10);
            let v = integrability(&d, p, 0.5, cfg.levels, step)?;
            rows.push(SharpnessRow {
                theta,
                p,
                exponent: fit.exponent,
                exponent_analytic: d.analytic_exponent(),
                gamma: v.gamma,
                gamma_analytic: v.gamma_analytic,
                bounded: v.bounded,
                bounded_analytic: v.bounded_analytic,
            });
        }
    }
    Ok(rows)
}
