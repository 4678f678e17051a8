//! Manufactured problems shared by the CLI and the Python bindings.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::charts::Profile;
use crate::error::Result;
use crate::fv::{boundary_frame, BoundaryFn, ScalarFn, StripDomain, TensorFn, VectorFn};
use crate::halfspace::{HalfSpaceGrid, HalfSpaceProblem, TractionProfile};
use crate::neumann::NeumannData;
use crate::rough_stokes::StokesData;
use crate::{GridField, Rank};

/// Unit strip over `y = K/(2 pi) cos(2 pi x)`, whose wall has Lipschitz constant `K`.
pub fn wavy_strip(k: f64) -> StripDomain {
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

/// Seeded smooth forcing tensor concentrated around `y = y0` with Gaussian width `sqrt(width2)`.
pub fn smooth_forcing(seed: u64, y0: f64, width2: f64) -> TensorFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coef: Vec<[f64; 3]> = (0..12)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI), rng.gen_range(1..4) as f64])
        .collect();
    Arc::new(move |x: f64, y: f64| {
        let e = (-(y - y0).powi(2) / width2).exp();
        let mut out = [0.0; 4];
        for (c, o) in out.iter_mut().enumerate() {
            for t in &coef[3 * c..3 * c + 3] {
                *o += t[0] * (2.0 * PI * t[2] * x + t[1]).cos() * e;
            }
        }
        out
    })
}

/// Stokes data for the flow with stream function `exp(-y^2/0.06) (cos 2 pi x + 1/2)(y + 0.3)` and
/// pressure `exp(-y^2/0.06) sin(2 pi x) / 2`, returned with the exact velocity and pressure.
pub fn stokes_manufactured(domain: &StripDomain, alpha: f64) -> Result<(StokesData, VectorFn, ScalarFn)> {
    let s2 = 0.06;
    let k = 2.0 * PI;
    let e = move |y: f64| (-y * y / s2).exp();
    let psi = move |x: f64, y: f64| e(y) * ((k * x).cos() + 0.5) * (y + 0.3);
    let u: VectorFn = Arc::new(move |x, y| {
        let h = 1e-4;
        [
            (psi(x, y + h) - psi(x, y - h)) / (2.0 * h),
            -(psi(x + h, y) - psi(x - h, y)) / (2.0 * h),
        ]
    });
    let p: ScalarFn = Arc::new(move |x, y| 0.5 * e(y) * (k * x).sin());
    let (uu, pp) = (u.clone(), p.clone());
    let forcing: VectorFn = Arc::new(move |x, y| {
        let h = 1e-3;
        let lap = |c: usize| {
            (uu(x + h, y)[c] + uu(x - h, y)[c] + uu(x, y + h)[c] + uu(x, y - h)[c] - 4.0 * uu(x, y)[c]) / (h * h)
        };
        let px = (pp(x + 1e-4, y) - pp(x - 1e-4, y)) / 2e-4;
        let py = (pp(x, y + 1e-4) - pp(x, y - 1e-4)) / 2e-4;
        [-lap(0) + px, -lap(1) + py]
    });
    let chart = domain.chart()?;
    let (uu, ch) = (u.clone(), chart.clone());
    let g_normal: BoundaryFn = Arc::new(move |x| {
        let d = ch.phi_derivs(x);
        let (n, _, _) = boundary_frame(d[1]);
        let v = uu(x, d[0]);
        v[0] * n[0] + v[1] * n[1]
    });
    let uu = u.clone();
    let g_tangential: BoundaryFn = Arc::new(move |x| {
        let d = chart.phi_derivs(x);
        let (n, t, _) = boundary_frame(d[1]);
        let (y, h) = (d[0], 1e-4);
        let dx = |i: usize| (uu(x + h, y)[i] - uu(x - h, y)[i]) / (2.0 * h);
        let dy = |i: usize| (uu(x, y + h)[i] - uu(x, y - h)[i]) / (2.0 * h);
        let gn = [dx(0) * n[0] + dy(0) * n[1], dx(1) * n[0] + dy(1) * n[1]];
        let v = uu(x, y);
        t[0] * gn[0] + t[1] * gn[1] + alpha * (t[0] * v[0] + t[1] * v[1])
    });
    let data = StokesData {
        forcing: Some(forcing),
        g_normal: Some(g_normal),
        g_tangential: Some(g_tangential),
        ..Default::default()
    }
    .with_alpha(alpha);
    Ok((data, u, p))
}

/// Neumann data for `u = (cos 2 pi x + y^2) exp(-y^2/0.08)`, returned with `u`.
pub fn neumann_manufactured(domain: &StripDomain) -> Result<(NeumannData, ScalarFn)> {
    let s2 = 0.08;
    let k = 2.0 * PI;
    let u = move |x: f64, y: f64| ((k * x).cos() + y * y) * (-y * y / s2).exp();
    let source: ScalarFn = Arc::new(move |x, y| {
        let e = (-y * y / s2).exp();
        let de = -2.0 * y / s2 * e;
        let dde = (-2.0 / s2 + 4.0 * y * y / (s2 * s2)) * e;
        -k * k * (k * x).cos() * e + (k * x).cos() * dde + 2.0 * e + 4.0 * y * de + y * y * dde
    });
    let chart = domain.chart()?;
    let chi: BoundaryFn = Arc::new(move |x| {
        let d = chart.phi_derivs(x);
        let (n, _, _) = boundary_frame(d[1]);
        let y = d[0];
        let e = (-y * y / s2).exp();
        let de = -2.0 * y / s2 * e;
        let g = [-k * (k * x).sin() * e, (k * x).cos() * de + 2.0 * y * e + y * y * de];
        g[0] * n[0] + g[1] * n[1]
    });
    let data = NeumannData {
        source: Some(source),
        chi: Some(chi),
        ..Default::default()
    };
    Ok((data, Arc::new(u)))
}

/// Half-space problem on the unit-period, unit-height half strip with `n x n` nodes whose exact
/// solution is `curl(sin(2 pi x) P(z)) + grad theta + c`, with `theta` carrying the normal datum,
/// `c` the traction-profile field carrying the slip datum and an even Gaussian pressure.
pub fn halfspace_manufactured(n: usize) -> Result<(HalfSpaceProblem, GridField)> {
    let grid = HalfSpaceGrid::from_torus(1.0, 1.0, n, 2 * n);
    let kp = 2.0 * PI;
    let kt = 8.0 * PI;
    let a = 100.0;
    let ex = move |z: f64| (-a * z * z).exp();
    let p = move |z: f64| {
        let e = ex(z);
        [
            z * e,
            (1.0 - 2.0 * a * z * z) * e,
            (-6.0 * a * z + 4.0 * a * a * z.powi(3)) * e,
            (-6.0 * a + 24.0 * a * a * z * z - 8.0 * a.powi(3) * z.powi(4)) * e,
        ]
    };
    let g = move |z: f64| {
        let e = ex(z);
        [
            e,
            -2.0 * a * z * e,
            (-2.0 * a + 4.0 * a * a * z * z) * e,
            (12.0 * a * a * z - 8.0 * a.powi(3) * z.powi(3)) * e,
        ]
    };
    let prof = TractionProfile { delta: grid.height / 8.0 };
    let d = |x: f64| {
        let t = 2.0 * PI * x;
        [0.5 * t.cos(), -PI * t.sin(), -2.0 * PI * PI * t.cos(), 4.0 * PI.powi(3) * t.sin()]
    };
    let u1 = move |x: f64, z: f64| {
        (kp * x).sin() * p(z)[1] - kt * (kt * x).sin() * (g(z)[0] + (-kt * z).exp()) + d(x)[0] * prof.derivs(z)[1]
    };
    let u2 = move |x: f64, z: f64| {
        -kp * (kp * x).cos() * p(z)[0] + (kt * x).cos() * (g(z)[1] - kt * (-kt * z).exp()) - d(x)[1] * prof.derivs(z)[0]
    };
    let f1 = move |x: f64, z: f64| {
        let (pp, s, gg, dd) = (p(z), prof.derivs(z), g(z), d(x));
        let lap_par = (kp * x).sin() * (pp[3] - kp * kp * pp[1]);
        let dxh = -kt * (kt * x).sin() * (gg[2] - kt * kt * gg[0]);
        let lap_c = dd[2] * s[1] + dd[0] * s[3];
        -lap_par - dxh - lap_c - kp * (kp * x).sin() * gg[0]
    };
    let f2 = move |x: f64, z: f64| {
        let (pp, s, gg, dd) = (p(z), prof.derivs(z), g(z), d(x));
        let lap_par = -kp * (kp * x).cos() * (pp[2] - kp * kp * pp[0]);
        let dzh = (kt * x).cos() * (gg[3] - kt * kt * gg[1]);
        let lap_c = -dd[3] * s[0] - dd[1] * s[2];
        -lap_par - dzh - lap_c + (kp * x).cos() * gg[1]
    };
    let vector = |a: &dyn Fn(f64, f64) -> f64, b: &dyn Fn(f64, f64) -> f64| {
        GridField::new(
            &grid.half_extent(),
            &[n, n],
            Rank::Vector,
            vec![grid.half_fn(a).values[0].clone(), grid.half_fn(b).values[0].clone()],
        )
    };
    let mut prob = HalfSpaceProblem::zero(grid);
    prob.forcing = vector(&f1, &f2)?;
    prob.h = grid.half_fn(move |x, z| (kt * x).cos() * (g(z)[2] - kt * kt * g(z)[0]));
    prob.g_normal = grid.boundary_fn(|x| -u2(x, 0.0));
    prob.g_tangential = grid.boundary_fn(|x| -kt * kt * (kt * x).sin() + d(x)[0]);
    let exact = vector(&u1, &u2)?;
    Ok((prob, exact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfspace::{half_l2, solve_halfspace};

    #[test]
    fn halfspace_fixture_is_solved_to_round_off() {
        let (prob, exact) = halfspace_manufactured(64).unwrap();
        let sol = solve_halfspace(&prob).unwrap();
        let err = half_l2(&prob.grid, &sol.u.add(&exact.scaled(-1.0))) / half_l2(&prob.grid, &exact);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn wavy_strip_has_requested_lipschitz_constant() {
        let chart = wavy_strip(0.3).chart().unwrap();
        assert!((chart.lipschitz - 0.3).abs() < 1e-3, "{}", chart.lipschitz);
    }
}
