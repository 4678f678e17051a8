//! Boundary charts, the mollified extension operator, the flattening map and
//! partitions of unity on the flattened strip.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::GaussLegendre;

/// Closed-form or sampled boundary graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    Affine { slope: f64, offset: f64 },
    Cos { amplitude: f64, wavenumber: f64, phase: f64 },
    /// `a (1 - ((x - c)/w)^2)^4` on `|x - c| < w`, zero elsewhere.
    PolyBump { amplitude: f64, center: f64, width: f64 },
    Sampled(Spline),
}

impl Profile {
    /// Value and first three derivatives.
    pub fn derivs(&self, x: f64) -> [f64; 4] {
        match self {
            Profile::Zero => [0.0; 4],
            Profile::Affine { slope, offset } => [slope * x + offset, *slope, 0.0, 0.0],
            Profile::Cos {
                amplitude: a,
                wavenumber: k,
                phase,
            } => {
                let t = k * x + phase;
                let (s, c) = t.sin_cos();
                [a * c, -a * k * s, -a * k * k * c, a * k * k * k * s]
            }
            Profile::PolyBump {
                amplitude: a,
                center,
                width: w,
            } => {
                let xi = (x - center) / w;
                if xi.abs() >= 1.0 {
                    return [0.0; 4];
                }
                let q = 1.0 - xi * xi;
                [
                    a * q.powi(4),
                    -8.0 * a * xi * q.powi(3) / w,
                    -8.0 * a * q * q * (q - 6.0 * xi * xi) / (w * w),
                    -8.0 * a * xi * q * (24.0 * xi * xi - 18.0 * q) / (w * w * w),
                ]
            }
            Profile::Sampled(s) => s.derivs(x),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.derivs(x)[0]
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.derivs(x)[1]
    }
}

/// Natural cubic spline through uniform samples; zero outside the sample range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spline {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    m: Vec<f64>,
}

impl Spline {
    pub fn new(x0: f64, dx: f64, values: Vec<f64>) -> Self {
        let m = natural_moments(&values, dx);
        Self { x0, dx, values, m }
    }

    fn moments(&self) -> std::borrow::Cow<'_, [f64]> {
        if self.m.len() == self.values.len() {
            std::borrow::Cow::Borrowed(&self.m)
        } else {
            std::borrow::Cow::Owned(natural_moments(&self.values, self.dx))
        }
    }

    pub fn derivs(&self, x: f64) -> [f64; 4] {
        let n = self.values.len();
        let u = (x - self.x0) / self.dx;
        if n < 2 || u < 0.0 || u > (n - 1) as f64 {
            return [0.0; 4];
        }
        let m = self.moments();
        let i = (u.floor() as usize).min(n - 2);
        let h = self.dx;
        let a = (i + 1) as f64 - u;
        let b = u - i as f64;
        let (y0, y1, m0, m1) = (self.values[i], self.values[i + 1], m[i], m[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        let d2 = a * m0 + b * m1;
        let d3 = (m1 - m0) / h;
        [v, d1, d2, d3]
    }
}

fn natural_moments(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the tridiagonal system m_{i-1} + 4 m_i + m_{i+1} = 6 d2y_i / h^2.
    let k = n - 2;
    let mut c = vec![0.0; k];
    let mut d = vec![0.0; k];
    for i in 0..k {
        let rhs = 6.0 * (y[i] - 2.0 * y[i + 1] + y[i + 2]) / (h * h);
        let denom = if i == 0 { 4.0 } else { 4.0 - c[i - 1] };
        c[i] = 1.0 / denom;
        d[i] = if i == 0 { rhs / denom } else { (rhs - d[i - 1]) / denom };
    }
    for i in (0..k).rev() {
        m[i + 1] = if i == k - 1 { d[i] } else { d[i] - c[i] * m[i + 2] };
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Support {
    /// `phi` vanishes at and beyond `|y'| = r`.
    Compact,
    /// `phi` is periodic with the given period; the chart covers a full period.
    Periodic { period: f64 },
    /// Closed-form graph defined on the whole line (test fixtures).
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryChart {
    pub profile: Profile,
    pub r: f64,
    pub h: f64,
    pub rotation: [[f64; 2]; 2],
    pub anchor: [f64; 2],
    pub lipschitz: f64,
    pub support: Support,
}

pub const IDENTITY: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

pub fn rotation(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, -s], [s, c]]
}

impl BoundaryChart {
    pub fn new(
        profile: Profile,
        r: f64,
        h: f64,
        rotation: [[f64; 2]; 2],
        anchor: [f64; 2],
        lipschitz: f64,
        support: Support,
    ) -> Result<Self> {
        let chart = Self {
            profile,
            r,
            h,
            rotation,
            anchor,
            lipschitz,
            support,
        };
        chart.validate()?;
        Ok(chart)
    }

    /// Chart with the Lipschitz constant measured from the profile.
    pub fn with_measured_lipschitz(profile: Profile, r: f64, h: f64, support: Support) -> Result<Self> {
        let mut chart = Self {
            profile,
            r,
            h,
            rotation: IDENTITY,
            anchor: [0.0, 0.0],
            lipschitz: 0.0,
            support,
        };
        chart.lipschitz = chart.measure_lipschitz();
        chart.validate()?;
        Ok(chart)
    }

    pub fn flat(r: f64, h: f64) -> Self {
        Self {
            profile: Profile::Zero,
            r,
            h,
            rotation: IDENTITY,
            anchor: [0.0, 0.0],
            lipschitz: 0.0,
            support: Support::Compact,
        }
    }

    fn sample_range(&self) -> (f64, f64) {
        match self.support {
            Support::Periodic { period } => (0.0, period),
            _ => (-self.r, self.r),
        }
    }

    fn measure_lipschitz(&self) -> f64 {
        let (a, b) = self.sample_range();
        let n = 4096;
        (0..=n)
            .map(|i| self.dphi(a + (b - a) * i as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.rotation;
        for i in 0..2 {
            for j in 0..2 {
                let qtq = q[0][i] * q[0][j] + q[1][i] * q[1][j];
                let target = if i == j { 1.0 } else { 0.0 };
                if (qtq - target).abs() > 1e-12 {
                    return Err(Error::Chart("rotation is not orthonormal".into()));
                }
            }
        }
        if !(self.r > 0.0 && self.h > 0.0 && self.lipschitz.is_finite() && self.lipschitz >= 0.0) {
            return Err(Error::Chart("r, h must be positive and K finite".into()));
        }
        let (a, b) = self.sample_range();
        let n = 2048;
        let dx = (b - a) / n as f64;
        for i in 0..n {
            let x = a + i as f64 * dx;
            let dq = (self.phi(x + dx) - self.phi(x)) / dx;
            if dq.abs() > self.lipschitz * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Chart(format!(
                    "difference quotient {dq:.4} at y' = {x:.4} exceeds K = {}",
                    self.lipschitz
                )));
            }
        }
        if self.support == Support::Compact {
            for x in [-self.r, self.r, -1.5 * self.r, 1.5 * self.r] {
                if self.phi(x).abs() > 1e-14 {
                    return Err(Error::Chart(format!("phi({x}) != 0 outside the chart window")));
                }
            }
        }
        Ok(())
    }

    fn wrap(&self, x: f64) -> f64 {
        match self.support {
            Support::Periodic { period } => x.rem_euclid(period),
            _ => x,
        }
    }

    pub fn phi_derivs(&self, x: f64) -> [f64; 4] {
        let d = self.profile.derivs(self.wrap(x));
        if self.support == Support::Compact && x.abs() >= self.r {
            return [0.0; 4];
        }
        d
    }

    pub fn phi(&self, x: f64) -> f64 {
        self.phi_derivs(x)[0]
    }

    pub fn dphi(&self, x: f64) -> f64 {
        self.phi_derivs(x)[1]
    }

    /// Local chart coordinates of a physical point.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let d = [p[0] - self.anchor[0], p[1] - self.anchor[1]];
        let q = self.rotation;
        [q[0][0] * d[0] + q[1][0] * d[1], q[0][1] * d[0] + q[1][1] * d[1]]
    }

    pub fn to_physical(&self, y: [f64; 2]) -> [f64; 2] {
        let q = self.rotation;
        [
            self.anchor[0] + q[0][0] * y[0] + q[0][1] * y[1],
            self.anchor[1] + q[1][0] * y[0] + q[1][1] * y[1],
        ]
    }

    /// Membership in the neighbourhood `{|y'| < r, |y_n - phi(y')| < h}`.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let y = self.to_local(p);
        let tangential = match self.support {
            Support::Periodic { .. } => true,
            _ => y[0].abs() < self.r,
        };
        tangential && (y[1] - self.phi(y[0])).abs() < self.h
    }
}

/// The even bump `exp(-1/(1 - s^2))` normalised to unit mass on [-1, 1].
#[derive(Debug, Clone)]
pub struct Mollifier {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub radius: f64,
}

pub fn bump_kernel(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

impl Mollifier {
    pub fn new(points: usize) -> Self {
        let gl = GaussLegendre::new(points);
        let raw: Vec<f64> = gl
            .nodes
            .iter()
            .zip(&gl.weights)
            .map(|(&s, &w)| w * bump_kernel(s))
            .collect();
        let mass: f64 = raw.iter().sum();
        Self {
            nodes: gl.nodes,
            weights: raw.into_iter().map(|w| w / mass).collect(),
            radius: 1.0,
        }
    }

    /// `T phi(x, t) = int zeta(s) phi(x - t s) ds` and its derivatives:
    /// `[T, d_x T, d_t T, d_xx T, d_xt T, d_tt T]`.
    pub fn extend(&self, chart: &BoundaryChart, x: f64, t: f64) -> [f64; 6] {
        if t == 0.0 {
            let d = chart.phi_derivs(x);
            return [d[0], d[1], 0.0, d[2], 0.0, 0.0];
        }
        let mut out = [0.0; 6];
        for (&s, &w) in self.nodes.iter().zip(&self.weights) {
            let d = chart.phi_derivs(x - t * s);
            out[0] += w * d[0];
            out[1] += w * d[1];
            out[2] -= w * s * d[1];
            out[3] += w * d[2];
            out[4] -= w * s * d[2];
            out[5] += w * s * s * d[2];
        }
        out
    }
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::new(200)
    }
}

/// Tensor-product half-space grid: `x_i = x0 + i lx / nx` (i < nx), `z_j = j lz / nz` (j <= nz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfGrid {
    pub x0: f64,
    pub lx: f64,
    pub nx: usize,
    pub lz: f64,
    pub nz: usize,
}

impl HalfGrid {
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.lx / self.nx as f64
    }
    pub fn z(&self, j: usize) -> f64 {
        j as f64 * self.lz / self.nz as f64
    }
    pub fn len(&self) -> usize {
        self.nx * (self.nz + 1)
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sampled `T phi(x, z)` on a half-space grid.
pub fn mollifier_extend(chart: &BoundaryChart, grid: &HalfGrid) -> Result<Vec<f64>> {
    check_coverage(chart, grid)?;
    let moll = Mollifier::default();
    Ok((0..grid.len())
        .into_par_iter()
        .map(|k| moll.extend(chart, grid.x(k % grid.nx), grid.z(k / grid.nx))[0])
        .collect())
}

fn check_coverage(chart: &BoundaryChart, grid: &HalfGrid) -> Result<()> {
    if chart.support == Support::Compact {
        let (a, b) = (grid.x0, grid.x(grid.nx - 1));
        if a < -chart.r - 1e-12 || b > chart.r + 1e-12 || grid.lz > chart.h + 1e-12 {
            return Err(Error::Coverage(format!(
                "grid [{a}, {b}] x [0, {}] exceeds the chart window r = {}, h = {}",
                grid.lz, chart.r, chart.h
            )));
        }
    }
    Ok(())
}

/// `Phi(z', z_n) = (z', z_n + T phi(z', z_n / N))` with sampled Jacobian.
#[derive(Debug, Clone)]
pub struct FlatteningMap {
    pub chart: BoundaryChart,
    pub scaling: f64,
    pub grid: HalfGrid,
    pub extension: Vec<f64>,
    /// Row-major `[J11, J12, J21, J22]` per node.
    pub jacobian: Vec<[f64; 4]>,
    pub det_jacobian: Vec<f64>,
    pub mollifier: Mollifier,
}

/// Pointwise geometry of the flattening.
#[derive(Debug, Clone, Copy)]
pub struct Local {
    /// `Phi_2(z) - z_n`, the vertical displacement.
    pub shift: f64,
    /// `d_1 Phi_2`.
    pub a: f64,
    /// `d_2 Phi_2`.
    pub b: f64,
    pub a_x: f64,
    pub a_z: f64,
    pub b_x: f64,
    pub b_z: f64,
}

impl Local {
    pub fn det(&self) -> f64 {
        self.b
    }
    /// `A = det J J^{-1} J^{-T}`, symmetric `[A11, A12, A22]`.
    pub fn a_matrix(&self) -> [f64; 3] {
        let (a, b) = (self.a, self.b);
        [b, -a, (1.0 + a * a) / b]
    }
    /// `B = det J J^{-T}` row-major.
    pub fn b_matrix(&self) -> [f64; 4] {
        [self.b, -self.a, 0.0, 1.0]
    }
}

impl FlatteningMap {
    pub fn local(&self, x: f64, z: f64) -> Local {
        local_geometry(&self.chart, &self.mollifier, self.scaling, x, z)
    }

    pub fn map(&self, x: f64, z: f64) -> [f64; 2] {
        [x, z + self.mollifier.extend(&self.chart, x, z / self.scaling)[0]]
    }

    pub fn jacobian_at(&self, x: f64, z: f64) -> [f64; 4] {
        let l = self.local(x, z);
        [1.0, 0.0, l.a, l.b]
    }

    /// Preimages `Psi(p)` by per-column bracketing and safeguarded Newton steps.
    pub fn invert(&self, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        points.par_iter().map(|p| self.invert_one(*p)).collect()
    }

    fn invert_one(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        let [x, y] = p;
        let column = (((x - self.grid.x0) / self.grid.lx * self.grid.nx as f64).round().max(0.0)) as usize;
        let f = |z: f64| z + self.mollifier.extend(&self.chart, x, z / self.scaling)[0] - y;
        let zmax = self.grid.lz;
        let (f0, f1) = (f(0.0), f(zmax));
        if f0 > 1e-13 || f1 < -1e-13 {
            return Err(Error::OutOfRange { x, y, column });
        }
        let (mut lo, mut hi) = (0.0, zmax);
        while hi - lo > 1e-12 * zmax.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..3 {
            let step = f(z) / self.local(x, z).b;
            let next = z - step;
            if next >= lo - 1e-12 && next <= hi + 1e-12 {
                z = next;
            }
        }
        Ok([x, z])
    }
}

pub fn local_geometry(chart: &BoundaryChart, moll: &Mollifier, n: f64, x: f64, z: f64) -> Local {
    let e = moll.extend(chart, x, z / n);
    Local {
        shift: e[0],
        a: e[1],
        b: 1.0 + e[2] / n,
        a_x: e[3],
        a_z: e[4] / n,
        b_x: e[4] / n,
        b_z: e[5] / (n * n),
    }
}

/// Smallest integer `N >= 2K + 2` for which `z_n -> Phi_2` is increasing on the grid,
/// with the determinant bounds certified at every node.
pub fn build_flattening(chart: &BoundaryChart, grid: &HalfGrid) -> Result<FlatteningMap> {
    check_coverage(chart, grid)?;
    let moll = Mollifier::default();
    let k = chart.lipschitz;
    let mut n = (2.0 * k + 2.0).ceil();
    loop {
        let locals: Vec<Local> = (0..grid.len())
            .into_par_iter()
            .map(|idx| local_geometry(chart, &moll, n, grid.x(idx % grid.nx), grid.z(idx / grid.nx)))
            .collect();
        let monotone = locals.iter().all(|l| l.b > 0.0);
        if !monotone {
            n += 1.0;
            if n > 1e6 {
                return Err(Error::Chart("no admissible scaling N".into()));
            }
            continue;
        }
        for (idx, l) in locals.iter().enumerate() {
            let det = l.det();
            if !(det > 0.5 && det <= 2.0) {
                return Err(Error::Jacobian {
                    ix: idx % grid.nx,
                    iz: idx / grid.nx,
                    det,
                    required_n: (2.0 * (det - 1.0).abs() * n).max(n + 1.0),
                });
            }
        }
        let extension = (0..grid.len())
            .into_par_iter()
            .map(|idx| moll.extend(chart, grid.x(idx % grid.nx), grid.z(idx / grid.nx) / n)[0])
            .collect();
        return Ok(FlatteningMap {
            chart: chart.clone(),
            scaling: n,
            grid: *grid,
            extension,
            jacobian: locals.iter().map(|l| [1.0, 0.0, l.a, l.b]).collect(),
            det_jacobian: locals.iter().map(|l| l.det()).collect(),
            mollifier: moll,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorPatch {
    /// The interior patch is `{z > z_min}` in flattened coordinates.
    pub z_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub charts: Vec<BoundaryChart>,
    pub overlap: usize,
    pub interior_patch: InteriorPatch,
    pub delta: Option<f64>,
}

impl Atlas {
    /// Boundary windows of radius `r` centred at `k L / count` on the strip `[0, L)`.
    pub fn strip(profile: &Profile, period: f64, count: usize, collar: f64) -> Result<Self> {
        let r = 0.75 * period / count as f64;
        let mut charts = Vec::with_capacity(count);
        let base = BoundaryChart::with_measured_lipschitz(profile.clone(), r, collar, Support::Periodic { period })?;
        for k in 0..count {
            let mut c = base.clone();
            c.r = r;
            c.anchor = [(k as f64 + 0.5) * period / count as f64, 0.0];
            charts.push(c);
        }
        let atlas = Self {
            charts,
            overlap: 2,
            interior_patch: InteriorPatch { z_min: collar / 3.0 },
            delta: None,
        };
        let samples: Vec<[f64; 2]> = (0..256)
            .map(|i| {
                let x = period * i as f64 / 256.0;
                [x, profile.value(x.rem_euclid(period))]
            })
            .collect();
        atlas.check_cover(&samples, Some(period))?;
        Ok(atlas)
    }

    fn window_distance(&self, chart: &BoundaryChart, x: f64, period: Option<f64>) -> f64 {
        let d = x - chart.anchor[0];
        match period {
            Some(p) => d - p * (d / p).round(),
            None => d,
        }
    }

    /// Cover check of boundary samples (flattened strip: tangential windows).
    pub fn check_cover(&self, samples: &[[f64; 2]], period: Option<f64>) -> Result<()> {
        for p in samples {
            let count = self
                .charts
                .iter()
                .filter(|c| self.window_distance(c, p[0], period).abs() < c.r)
                .count();
            if count == 0 {
                return Err(Error::Coverage(format!("boundary sample ({}, {}) is in no chart", p[0], p[1])));
            }
            if count > self.overlap {
                return Err(Error::Coverage(format!(
                    "boundary sample ({}, {}) lies in {count} > m = {} charts",
                    p[0], p[1], self.overlap
                )));
            }
        }
        Ok(())
    }
}

/// `0` for `t <= 0`, `1` for `t >= 1`, C-infinity in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// Partition of unity on the flattened periodic strip `[0, L) x [0, H]`.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub period: f64,
    pub centers: Vec<f64>,
    pub radii: Vec<f64>,
    pub collars: Vec<f64>,
    pub interior_z_min: f64,
    /// Cutoffs sampled on the requested grid (index 0 is the interior patch).
    pub cutoffs: Vec<Vec<f64>>,
    pub gradient_bound: f64,
}

impl PartitionOfUnity {
    fn raw(&self, j: usize, x: f64, z: f64) -> f64 {
        if j == 0 {
            let z0 = self.interior_z_min;
            return smooth_step((z - z0) / z0.max(1e-300));
        }
        let c = j - 1;
        let d = x - self.centers[c];
        let d = (d - self.period * (d / self.period).round()).abs();
        let r = self.radii[c];
        let h = self.collars[c];
        let tangential = if r >= self.period { 1.0 } else { smooth_step(2.0 * (1.0 - d / r)) };
        tangential * smooth_step(2.0 * (1.0 - z / h))
    }

    pub fn len(&self) -> usize {
        self.centers.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All cutoffs at a point; errors when no patch covers it.
    pub fn eval(&self, x: f64, z: f64) -> Result<Vec<f64>> {
        let raw: Vec<f64> = (0..self.len()).map(|j| self.raw(j, x, z)).collect();
        let sum: f64 = raw.iter().sum();
        if sum <= 1e-12 {
            return Err(Error::Coverage(format!("point ({x}, {z}) is covered by no patch")));
        }
        Ok(raw.into_iter().map(|r| r / sum).collect())
    }
}

pub fn build_partition(atlas: &Atlas, period: f64, grid: &HalfGrid) -> Result<PartitionOfUnity> {
    let mut pou = PartitionOfUnity {
        period,
        centers: atlas.charts.iter().map(|c| c.anchor[0]).collect(),
        radii: atlas.charts.iter().map(|c| c.r).collect(),
        collars: atlas.charts.iter().map(|c| c.h).collect(),
        interior_z_min: atlas.interior_patch.z_min,
        cutoffs: vec![],
        gradient_bound: 0.0,
    };
    let values: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|k| pou.eval(grid.x(k % grid.nx), grid.z(k / grid.nx)))
        .collect::<Result<_>>()?;
    let mut cutoffs = vec![vec![0.0; grid.len()]; pou.len()];
    for (k, v) in values.iter().enumerate() {
        for j in 0..pou.len() {
            cutoffs[j][k] = v[j];
        }
    }
    let (dx, dz) = (grid.lx / grid.nx as f64, grid.lz / grid.nz as f64);
    let mut gb: f64 = 0.0;
    for c in &cutoffs {
        for j in 0..=grid.nz {
            for i in 0..grid.nx {
                let gx = (c[(i + 1) % grid.nx + grid.nx * j] - c[(i + grid.nx - 1) % grid.nx + grid.nx * j]) / (2.0 * dx);
                let gz = if j > 0 && j < grid.nz {
                    (c[i + grid.nx * (j + 1)] - c[i + grid.nx * (j - 1)]) / (2.0 * dz)
                } else {
                    0.0
                };
                gb = gb.max(gx.hypot(gz));
            }
        }
    }
    pou.cutoffs = cutoffs;
    pou.gradient_bound = gb;
    Ok(pou)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let (fa, fb, fc) = (f(a), f(b), f(c));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
        adapt(f, a, b, fa, fb, fc, whole, tol, depth)
    }

    #[allow(clippy::too_many_arguments)]
    fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64, fc: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let c = 0.5 * (a + b);
        let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
        let (fd, fe) = (f(d), f(e));
        let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
        let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
        if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        adapt(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1) + adapt(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
    }

    fn unbounded(profile: Profile, k: f64) -> BoundaryChart {
        BoundaryChart::new(profile, 1.0, 1.0, IDENTITY, [0.0, 0.0], k, Support::Unbounded).unwrap()
    }

    #[test]
    fn extension_of_cosine_matches_adaptive_oracle() {
        let chart = unbounded(
            Profile::Cos {
                amplitude: 1.0,
                wavenumber: 1.0,
                phase: 0.0,
            },
            1.0,
        );
        let t = 0.5;
        let mass = simpson(&bump_kernel, -1.0, 1.0, 1e-15, 40);
        let num = simpson(&|s: f64| bump_kernel(s) * (0.0 - t * s).cos(), -1.0, 1.0, 1e-15, 40);
        let oracle = num / mass;
        let value = Mollifier::default().extend(&chart, 0.0, t)[0];
        assert!((value - oracle).abs() < 1e-8, "{value} vs {oracle}");
    }

    #[test]
    fn affine_is_reproduced() {
        let chart = unbounded(Profile::Affine { slope: 0.1, offset: 0.3 }, 0.1);
        let m = Mollifier::default();
        for &(x, t) in &[(0.2, 0.4), (-0.7, 0.9), (0.0, 0.05)] {
            let e = m.extend(&chart, x, t);
            assert!((e[0] - (0.1 * x + 0.3)).abs() < 1e-14);
            assert!(e[2].abs() < 1e-14);
        }
    }

    #[test]
    fn affine_flattening_jacobian_by_hand() {
        let chart = unbounded(Profile::Affine { slope: 0.1, offset: 0.0 }, 0.1);
        let grid = HalfGrid {
            x0: -0.5,
            lx: 1.0,
            nx: 8,
            lz: 0.5,
            nz: 4,
        };
        let map = build_flattening(&chart, &grid).unwrap();
        assert_eq!(map.scaling, 3.0);
        for (j, d) in map.jacobian.iter().zip(&map.det_jacobian) {
            assert!((j[2] - 0.1).abs() < 1e-14 && (j[3] - 1.0).abs() < 1e-14);
            assert!((d - 1.0).abs() < 1e-14);
        }
        // Psi in closed form: z_n = y - 0.1 x.
        let p = [[0.2, 0.35], [-0.1, 0.1]];
        let inv = map.invert(&p).unwrap();
        for (q, z) in p.iter().zip(&inv) {
            assert!((z[1] - (q[1] - 0.1 * q[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_chart_is_identity() {
        let chart = BoundaryChart::flat(1.0, 1.0);
        let grid = HalfGrid {
            x0: -1.0,
            lx: 2.0,
            nx: 16,
            lz: 1.0,
            nz: 8,
        };
        let map = build_flattening(&chart, &grid).unwrap();
        assert!(map.extension.iter().all(|&v| v == 0.0));
        assert!(map.det_jacobian.iter().all(|&d| d == 1.0));
        assert_eq!(map.invert(&[[0.3, 0.4]]).unwrap()[0], [0.3, 0.4]);
    }

    #[test]
    fn compact_grid_outside_window_is_rejected() {
        let chart = BoundaryChart::flat(0.5, 1.0);
        let grid = HalfGrid {
            x0: -1.0,
            lx: 2.0,
            nx: 16,
            lz: 1.0,
            nz: 8,
        };
        assert!(matches!(mollifier_extend(&chart, &grid), Err(Error::Coverage(_))));
    }

    #[test]
    fn spline_reproduces_cubic_interior() {
        let xs: Vec<f64> = (0..41).map(|i| -1.0 + 0.05 * i as f64).collect();
        let s = Spline::new(-1.0, 0.05, xs.iter().map(|x| (2.0 * x).sin()).collect());
        let d = s.derivs(0.123);
        assert!((d[0] - (0.246f64).sin()).abs() < 1e-5);
        assert!((d[1] - 2.0 * (0.246f64).cos()).abs() < 1e-3);
    }

    #[test]
    fn partition_sums_to_one() {
        let profile = Profile::PolyBump {
            amplitude: 0.02,
            center: 1.0,
            width: 0.5,
        };
        let atlas = Atlas::strip(&profile, 2.0, 4, 0.6).unwrap();
        let grid = HalfGrid {
            x0: 0.0,
            lx: 2.0,
            nx: 32,
            lz: 1.0,
            nz: 16,
        };
        let pou = build_partition(&atlas, 2.0, &grid).unwrap();
        for k in 0..grid.len() {
            let s: f64 = pou.cutoffs.iter().map(|c| c[k]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
