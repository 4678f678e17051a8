use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slipflow::charts::Profile;
use slipflow::function_spaces::fractional_seminorm;
use slipflow::fv::{boundary_frame, StripDomain, StripGeometry, StripGrid, TensorFn};
use slipflow::halfspace::{divergence, leray_project, solve_whole_space};
use slipflow::rough_stokes::{picard_solve, PicardOptions, StokesData, StokesProblem};
use slipflow::sharpness::WedgeDomain;
use slipflow::{GridField, Rank};

fn random_field(seed: u64, n: usize, rank: Rank) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = GridField::zeros(&[1.0, 1.0], &[n, n], rank).unwrap();
    for c in f.values.iter_mut() {
        c.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    f
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn wavy(k: f64) -> StripDomain {
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

fn forcing(seed: u64) -> TensorFn {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Arc::new(move |x: f64, y: f64| {
        let e = (-(y - 0.4).powi(2) / 0.02).exp();
        let s = (2.0 * PI * x).sin();
        let co = (2.0 * PI * x).cos();
        [c[0] * co * e, c[1] * s * e, c[2] * s * e, c[3] * co * e]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn whole_space_solve_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g1 = random_field(s1, 32, Rank::Tensor);
        let g2 = random_field(s2, 32, Rank::Tensor);
        let combo = g1.scaled(a).add(&g2.scaled(b));
        let w = solve_whole_space(&combo, None).unwrap().w;
        let w1 = solve_whole_space(&g1, None).unwrap().w;
        let w2 = solve_whole_space(&g2, None).unwrap().w;
        let expect = w1.scaled(a).add(&w2.scaled(b));
        for c in 0..2 {
            prop_assert!(max_diff(&w.values[c], &expect.values[c]) < 1e-10);
        }
    }

    #[test]
    fn leray_projection_is_idempotent(seed in 0u64..1000) {
        let v = random_field(seed, 32, Rank::Vector);
        let p = leray_project(&v);
        let pp = leray_project(&p);
        for c in 0..2 {
            prop_assert!(max_diff(&p.values[c], &pp.values[c]) < 1e-12);
        }
        let div = divergence(&p);
        prop_assert!(div.iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn isotropic_tensor_only_shifts_pressure(seed in 0u64..1000, c in -5.0f64..5.0) {
        let g = random_field(seed, 32, Rank::Tensor);
        let mut shifted = g.clone();
        shifted.values[0].iter_mut().for_each(|v| *v += c);
        shifted.values[3].iter_mut().for_each(|v| *v += c);
        let a = solve_whole_space(&g, None).unwrap();
        let b = solve_whole_space(&shifted, None).unwrap();
        for k in 0..2 {
            prop_assert!(max_diff(&a.w.values[k], &b.w.values[k]) < 1e-12);
        }
        let dq: Vec<f64> = a.q.values[0].iter().zip(&b.q.values[0]).map(|(x, y)| y - x).collect();
        let spread = dq.iter().cloned().fold(f64::MIN, f64::max) - dq.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(spread < 1e-12);
    }

    #[test]
    fn boundary_frame_is_orthonormal(slope in -20.0f64..20.0) {
        let (n, t, s) = boundary_frame(slope);
        assert_relative_eq!(n[0] * n[0] + n[1] * n[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(t[0] * t[0] + t[1] * t[1], 1.0, epsilon = 1e-14);
        prop_assert!((n[0] * t[0] + n[1] * t[1]).abs() < 1e-14);
        assert_relative_eq!(s, (1.0 + slope * slope).sqrt(), max_relative = 1e-14);
        // Outward from the fluid above the graph.
        prop_assert!(n[1] < 0.0);
    }

    #[test]
    fn strip_geometry_is_admissible(k in 0.0f64..0.6, phase in 0.0f64..std::f64::consts::TAU) {
        let domain = StripDomain {
            profile: Profile::Cos { amplitude: k / (2.0 * PI), wavenumber: 2.0 * PI, phase },
            length: 1.0,
            height: 1.0,
        };
        let geom = StripGeometry::build(&domain, StripGrid::new(1.0, 1.0, 16, 16).unwrap()).unwrap();
        prop_assert!(geom.vertex.iter().chain(&geom.cell).all(|l| l.det() > 0.5 && l.det() <= 2.0));
        // The lid is the flat line y = H.
        let nx = 16;
        for l in &geom.vertex[nx * 16..] {
            prop_assert!(l.shift.abs() < 1e-12 && l.a.abs() < 1e-12);
        }
        // The bottom row follows the wall.
        for i in 0..nx {
            let x = i as f64 / nx as f64;
            prop_assert!((geom.vertex[i].shift - domain.profile.derivs(x)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn fractional_seminorm_is_homogeneous_and_shift_invariant(seed in 0u64..1000, c in -4.0f64..4.0, shift in 0usize..16) {
        let f = random_field(seed, 16, Rank::Scalar);
        let base = fractional_seminorm(&f, 0.5, 2.0).unwrap().value;
        let scaled = fractional_seminorm(&f.scaled(c), 0.5, 2.0).unwrap().value;
        assert_relative_eq!(scaled, c.abs() * base, max_relative = 1e-10);
        let mut rolled = f.clone();
        for j in 0..16 {
            for i in 0..16 {
                rolled.values[0][(i + shift) % 16 + 16 * j] = f.values[0][i + 16 * j];
            }
        }
        let r = fractional_seminorm(&rolled, 0.5, 2.0).unwrap().value;
        assert_relative_eq!(r, base, max_relative = 1e-10);
    }

    #[test]
    fn wedge_verdict_matches_sign_of_gamma(theta in 1.7f64..3.1, p in 1.0f64..3.0) {
        let w = WedgeDomain::new(theta).unwrap();
        if !w.is_polynomial() {
            prop_assert_eq!(w.analytic_bounded(p), w.analytic_gamma(p) > 0.0);
        }
        prop_assert!(w.analytic_exponent() > -1.0 && w.analytic_exponent() < 0.0);
    }

    #[test]
    fn rough_solution_scales_with_data(seed in 0u64..1000, c in 0.1f64..10.0, alpha in prop::sample::select(vec![0.0, 1.0])) {
        let grid = StripGrid::new(1.0, 1.0, 24, 24).unwrap();
        let f = forcing(seed);
        let g = f.clone();
        let scaled: TensorFn = Arc::new(move |x, y| g(x, y).map(|v| c * v));
        let opts = PicardOptions::default();
        let a = picard_solve(&StokesProblem::new(wavy(0.05), StokesData { forcing_tensor: Some(f), ..Default::default() }.with_alpha(alpha)), grid, &opts).unwrap();
        let b = picard_solve(&StokesProblem::new(wavy(0.05), StokesData { forcing_tensor: Some(scaled), ..Default::default() }.with_alpha(alpha)), grid, &opts).unwrap();
        let mut d = a.field.clone();
        d.axpy(-1.0 / c, &b.field);
        prop_assert!(d.max_abs() <= 1e-7 * a.field.max_abs());
    }
}

/// Frictionless walls, where the flat inverse is exact at zero roughness and the rate is all perturbation.
#[test]
fn contraction_grows_with_roughness() {
    let grid = StripGrid::new(1.0, 1.0, 32, 32).unwrap();
    let opts = PicardOptions {
        localize: false,
        ..Default::default()
    };
    let rates: Vec<f64> = [0.02, 0.05, 0.1]
        .iter()
        .map(|&k| {
            let data = StokesData {
                forcing_tensor: Some(forcing(3)),
                ..Default::default()
            };
            picard_solve(&StokesProblem::new(wavy(k), data), grid, &opts).unwrap().contraction().unwrap()
        })
        .collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
}
