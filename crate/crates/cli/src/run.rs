//! Subcommand pipelines. Each returns a complete [`Report`]; nothing touches the disk here.

use std::f64::consts::PI;
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slipflow::charts::{BoundaryChart, Profile, Support};
use slipflow::fixtures::{halfspace_manufactured, neumann_manufactured, smooth_forcing, stokes_manufactured, wavy_strip};
use slipflow::function_spaces::{calibrate, fourier_seminorm, fractional_seminorm, multiplier_bound};
use slipflow::fv::{fd_div_tensor, StripGrid, VectorFn};
use slipflow::halfspace::{half_l2, solve_halfspace, HalfSpaceGrid, HalfSpaceProblem};
use slipflow::neumann::{solve_neumann_rough, w12_error, NeumannOptions, NeumannProblem};
use slipflow::rough_stokes::{
    mac_errors, nondivergence_solve, picard_solve, sample_exact, PicardOptions, StokesData, StokesProblem, StokesSolution,
};
use slipflow::sharpness::{self, sharpness_table};
use slipflow::{GridField, Rank};

use crate::config::*;
use crate::report::{num, Report, Table};
use crate::RunError;

pub fn run(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    match cfg {
        ExperimentConfig::HalfspaceVerify(c) => halfspace_verify(c),
        ExperimentConfig::RoughSolve(c) => rough_solve(c),
        ExperimentConfig::NondivSolve(c) => nondiv_solve(c),
        ExperimentConfig::NeumannVerify(c) => neumann_verify(c),
        ExperimentConfig::Sharpness(c) => sharpness(c),
        ExperimentConfig::Norms(c) => norms(c),
    }
}

fn unit_strip(n: usize) -> Result<StripGrid, RunError> {
    Ok(StripGrid::new(1.0, 1.0, n, n)?)
}

fn orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn halfspace_verify(c: &HalfspaceConfig) -> Result<Report, RunError> {
    let mut rep = Report::default();
    let mut table = Table::new(&["n", "rel_l2_error", "divergence", "normal_trace", "slip", "momentum"]);
    let cases: Vec<(HalfSpaceProblem, Option<GridField>)> = match &c.inputs {
        None => c
            .sizes
            .iter()
            .map(|&n| halfspace_manufactured(n).map(|(p, e)| (p, Some(e))))
            .collect::<Result<_, _>>()?,
        Some(inputs) => vec![(problem_from_files(inputs)?, None)],
    };
    let t = &c.tolerances;
    let (mut div, mut trace, mut slip) = (0.0f64, 0.0f64, 0.0f64);
    let mut last_err = None;
    let mut last_u = None;
    for (prob, exact) in &cases {
        let n = prob.grid.nx;
        info!("halfspace-verify: n = {n}");
        let sol = solve_halfspace(prob)?;
        let err = exact
            .as_ref()
            .map(|e| half_l2(&prob.grid, &sol.u.add(&e.scaled(-1.0))) / half_l2(&prob.grid, e));
        let r = &sol.residuals;
        div = div.max(r.divergence);
        trace = trace.max(r.normal_trace);
        slip = slip.max(r.slip);
        table.push(vec![
            n.to_string(),
            err.map_or(String::new(), num),
            num(r.divergence),
            num(r.normal_trace),
            num(r.slip),
            num(r.momentum),
        ]);
        last_err = err;
        last_u = Some(sol.u);
    }
    if let (Some(tol), Some(err)) = (t.rel_l2_error, last_err) {
        rep.at_most("rel_l2_error", err, tol);
    }
    rep.at_most("divergence", div, t.divergence);
    rep.at_most("normal_trace", trace, t.normal_trace);
    rep.at_most("slip", slip, t.slip);
    rep.tables.insert("errors".into(), table);
    if let Some(u) = last_u {
        rep.fields.push(("u".into(), u));
    }
    Ok(rep)
}

/// Assemble a problem from field files; the half-space grid is read off the first interior field.
fn problem_from_files(inputs: &HalfspaceInputs) -> Result<HalfSpaceProblem, RunError> {
    let read = |p: &Option<std::path::PathBuf>| p.as_deref().map(GridField::read).transpose();
    let fields = [
        read(&inputs.forcing_tensor)?,
        read(&inputs.forcing)?,
        read(&inputs.h)?,
        read(&inputs.g_normal)?,
        read(&inputs.g_tangential)?,
    ];
    let grid = match fields[..3].iter().flatten().next() {
        Some(f) if f.dim() == 2 => HalfSpaceGrid {
            length: f.extent[0],
            height: f.extent[1],
            nx: f.nodes[0],
            nz: f.nodes[1],
        },
        Some(_) => return Err(RunError::Input("interior fields must be 2D".into())),
        None => {
            let f = fields[3..].iter().flatten().next().expect("validated: at least one input");
            HalfSpaceGrid {
                length: f.extent[0],
                height: f.extent[0],
                nx: f.nodes[0],
                nz: f.nodes[0],
            }
        }
    };
    let mut prob = HalfSpaceProblem::zero(grid);
    let [ft, fv, h, gn, gt] = fields;
    let slots = [
        ("forcing_tensor", ft, &mut prob.forcing_tensor),
        ("forcing", fv, &mut prob.forcing),
        ("h", h, &mut prob.h),
        ("g_normal", gn, &mut prob.g_normal),
        ("g_tangential", gt, &mut prob.g_tangential),
    ];
    for (name, field, slot) in slots {
        if let Some(f) = field {
            if f.nodes != slot.nodes || f.rank != slot.rank || f.extent != slot.extent {
                return Err(RunError::Input(format!(
                    "{name}: expected {:?} nodes {:?} over {:?}, found {:?} nodes {:?} over {:?}",
                    slot.rank, slot.nodes, slot.extent, f.rank, f.nodes, f.extent
                )));
            }
            *slot = f;
        }
    }
    Ok(prob)
}

fn picard_opts(tol: f64, max_sweeps: usize) -> PicardOptions {
    PicardOptions {
        tol,
        max_iter: max_sweeps,
        ..Default::default()
    }
}

fn residual(sol: &StokesSolution) -> f64 {
    sol.residual_interior + sol.residual_bc
}

fn rough_solve(c: &RoughConfig) -> Result<Report, RunError> {
    let mut rep = Report::default();
    let domain = wavy_strip(c.roughness);
    let opts = picard_opts(c.picard_tol, c.max_sweeps);
    let mut sweeps = Table::new(&["alpha", "n", "sweeps", "converged", "contraction", "max_ratio", "residual"]);
    let mut errors = Table::new(&["alpha", "n", "velocity_l2", "velocity_h1", "pressure_l2"]);
    let (mut worst_rate, mut worst_res) = (0.0f64, 0.0f64);
    let mut min_order = f64::INFINITY;
    for &alpha in &c.alpha {
        let (data, exact) = match c.forcing {
            Forcing::Random => (
                StokesData {
                    forcing_tensor: Some(smooth_forcing(c.seed, 0.4, 0.02)),
                    ..Default::default()
                }
                .with_alpha(alpha),
                None,
            ),
            Forcing::Manufactured => {
                let (d, u, p) = stokes_manufactured(&domain, alpha)?;
                (d, Some((u, p)))
            }
        };
        let mut problem = StokesProblem::new(domain.clone(), data);
        problem.charts = c.charts;
        let mut h1 = Vec::new();
        for &n in &c.sizes {
            info!("rough-solve: alpha = {alpha}, n = {n}");
            let sol = picard_solve(&problem, unit_strip(n)?, &opts)?;
            let rate = sol.contraction().unwrap_or(0.0);
            worst_rate = worst_rate.max(rate);
            worst_res = worst_res.max(residual(&sol));
            rep.sweeps(&format!("alpha={alpha},n={n}"), &sol.history);
            sweeps.push(vec![
                num(alpha),
                n.to_string(),
                sol.sweeps.to_string(),
                sol.converged.to_string(),
                num(rate),
                num(sol.max_ratio()),
                num(residual(&sol)),
            ]);
            if let Some((u, p)) = &exact {
                let e = mac_errors(&sol.geometry, &sol.field, &sample_exact(&sol.geometry, u, p));
                h1.push(e.velocity_h1);
                errors.push(vec![num(alpha), n.to_string(), num(e.velocity_l2), num(e.velocity_h1), num(e.pressure_l2)]);
            }
        }
        min_order = orders(&h1).into_iter().fold(min_order, f64::min);
    }
    rep.at_most("max_contraction", worst_rate, c.tolerances.max_contraction);
    rep.at_most("max_residual", worst_res, c.tolerances.max_residual);
    if let Some(o) = c.tolerances.min_order {
        rep.at_least("min_order", min_order, o);
    }
    rep.tables.insert("sweeps".into(), sweeps);
    if c.forcing == Forcing::Manufactured {
        rep.tables.insert("errors".into(), errors);
    }
    Ok(rep)
}

fn nondiv_solve(c: &NondivConfig) -> Result<Report, RunError> {
    let mut rep = Report::default();
    let domain = wavy_strip(c.roughness);
    let opts = picard_opts(c.picard_tol, c.max_sweeps);
    let finest = *c.sizes.iter().max().expect("validated non-empty");

    // Interior tensor, so the divergence and non-divergence forms must coincide.
    let ft = smooth_forcing(c.seed, 0.5, 0.01);
    let ft2 = ft.clone();
    let f: VectorFn = Arc::new(move |x, y| fd_div_tensor(&ft2, x, y));
    let div_form = StokesProblem::new(
        domain.clone(),
        StokesData {
            forcing_tensor: Some(ft),
            ..Default::default()
        }
        .with_alpha(c.alpha),
    );
    let nondiv = StokesProblem::new(
        domain.clone(),
        StokesData {
            forcing: Some(f),
            ..Default::default()
        }
        .with_alpha(c.alpha),
    );
    info!("nondiv-solve: agreement at n = {finest}");
    let a = picard_solve(&div_form, unit_strip(finest)?, &opts)?;
    let b = nondivergence_solve(&nondiv, unit_strip(finest)?, &opts)?;
    rep.sweeps("agreement-divergence-form", &a.history);
    rep.sweeps("agreement-nondivergence-form", &b.history);
    let mut d = a.field.clone();
    d.axpy(-1.0, &b.field);
    let agreement = d.max_abs() / a.field.max_abs();
    let mut worst_res = residual(&a).max(residual(&b));

    let (data, u, p) = stokes_manufactured(&domain, c.alpha)?;
    let problem = StokesProblem::new(domain, data);
    let mut table = Table::new(&["n", "sweeps", "residual", "velocity_h1", "velocity_h2"]);
    let mut h2 = Vec::new();
    for &n in &c.sizes {
        info!("nondiv-solve: manufactured n = {n}");
        let sol = nondivergence_solve(&problem, unit_strip(n)?, &opts)?;
        worst_res = worst_res.max(residual(&sol));
        rep.sweeps(&format!("manufactured,n={n}"), &sol.history);
        let e = mac_errors(&sol.geometry, &sol.field, &sample_exact(&sol.geometry, &u, &p));
        h2.push(e.velocity_h2);
        table.push(vec![n.to_string(), sol.sweeps.to_string(), num(residual(&sol)), num(e.velocity_h1), num(e.velocity_h2)]);
    }
    let order = orders(&h2).into_iter().fold(f64::INFINITY, f64::min);
    rep.at_most("max_residual", worst_res, c.tolerances.max_residual);
    rep.at_least("min_h2_order", order, c.tolerances.min_h2_order);
    rep.at_most("max_agreement", agreement, c.tolerances.max_agreement);
    rep.tables.insert("errors".into(), table);
    Ok(rep)
}

fn neumann_verify(c: &NeumannConfig) -> Result<Report, RunError> {
    let mut rep = Report::default();
    let domain = wavy_strip(c.roughness);
    let (data, u) = neumann_manufactured(&domain)?;
    let problem = NeumannProblem::new(domain, data);
    let opts = NeumannOptions {
        tol: c.tol,
        max_iter: c.max_sweeps,
        ..Default::default()
    };
    let mut table = Table::new(&["n", "sweeps", "converged", "residual", "w12_error"]);
    let mut errs = Vec::new();
    let mut worst_res = 0.0f64;
    for &n in &c.sizes {
        info!("neumann-verify: n = {n}");
        let sol = solve_neumann_rough(&problem, unit_strip(n)?, &opts)?;
        let r = &sol.report;
        let res = r.residual_interior + r.residual_bc;
        worst_res = worst_res.max(res);
        let e = w12_error(&sol.geometry, &sol.u, &*u);
        errs.push(e);
        rep.sweeps(&format!("n={n}"), &r.history);
        table.push(vec![n.to_string(), r.sweeps.to_string(), r.converged.to_string(), num(res), num(e)]);
    }
    let order = orders(&errs).into_iter().fold(f64::INFINITY, f64::min);
    rep.at_least("min_order", order, c.tolerances.min_order);
    rep.at_most("max_residual", worst_res, c.tolerances.max_residual);
    rep.tables.insert("errors".into(), table);
    Ok(rep)
}

fn sharpness(c: &SharpnessConfig) -> Result<Report, RunError> {
    let mut rep = Report::default();
    info!("sharpness: {} angles x {} exponents", c.thetas.len(), c.ps.len());
    let rows = sharpness_table(&sharpness::SharpnessConfig {
        thetas: c.thetas.clone(),
        ps: c.ps.clone(),
        nodes: c.nodes,
        radii: c.radii,
        levels: c.levels,
    })?;
    let mut table = Table::new(&["theta", "p", "exponent", "exponent_analytic", "gamma", "gamma_analytic", "bounded", "bounded_analytic"]);
    let mut seen: Vec<f64> = Vec::new();
    for r in &rows {
        // The exponent depends on the angle only.
        if !seen.contains(&r.theta) {
            seen.push(r.theta);
            let tol = c.tolerances.exponent_abs.max(c.tolerances.exponent_rel * r.exponent_analytic.abs());
            rep.at_most(format!("exponent_error[theta={}]", r.theta), (r.exponent - r.exponent_analytic).abs(), tol);
        }
        rep.matches(format!("verdict[theta={},p={}]", r.theta, r.p), r.bounded == r.bounded_analytic);
        table.push(vec![
            num(r.theta),
            num(r.p),
            num(r.exponent),
            num(r.exponent_analytic),
            num(r.gamma),
            num(r.gamma_analytic),
            r.bounded.to_string(),
            r.bounded_analytic.to_string(),
        ]);
    }
    rep.tables.insert("sharpness".into(), table);
    Ok(rep)
}

fn norm_field(kind: NormField, seed: u64, n: usize) -> Result<GridField, RunError> {
    let f = match kind {
        NormField::Modes => GridField::from_fn2([1.0, 1.0], [n, n], |x, y| (2.0 * PI * x).sin() + 0.5 * (2.0 * PI * (x + y)).cos())?,
        NormField::RandomModes => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes: Vec<(f64, f64, f64, f64)> = (-3i32..=3)
                .flat_map(|a| (-3i32..=3).map(move |b| (a as f64, b as f64)))
                .filter(|(a, b)| a * a + b * b <= 9.0)
                .map(|(a, b)| (a, b, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            GridField::from_fn2([1.0, 1.0], [n, n], |x, y| {
                modes.iter().map(|(a, b, c, ph)| c * (2.0 * PI * (a * x + b * y) + ph).cos()).sum()
            })?
        }
    };
    debug_assert_eq!(f.rank, Rank::Scalar);
    Ok(f)
}

fn norms(c: &NormsConfig) -> Result<Report, RunError> {
    let mut rep = Report::default();
    let mut table = Table::new(&["s", "p", "n", "gagliardo", "fourier", "calibrated_ratio"]);
    let mut worst_band = None::<f64>;
    for &[s, p] in &c.indices {
        let fourier_form = p == 2.0;
        let mut calib = None;
        for &n in &c.sizes {
            info!("norms: s = {s}, p = {p}, n = {n}");
            let g = norm_field(c.field, c.seed, n)?;
            let gag = fractional_seminorm(&g, s, p)?.value;
            let (fourier, ratio) = if fourier_form {
                let f = fourier_seminorm(&g, s);
                match calib {
                    None => {
                        calib = Some(calibrate(gag / f, 1.0));
                        (Some(f), None)
                    }
                    Some(k) => {
                        let r = gag / f / k;
                        worst_band = Some(worst_band.unwrap_or(0.0).max((r - 1.0).abs()));
                        (Some(f), Some(r))
                    }
                }
            } else {
                (None, None)
            };
            table.push(vec![num(s), num(p), n.to_string(), num(gag), fourier.map_or(String::new(), num), ratio.map_or(String::new(), num)]);
        }
    }
    match worst_band {
        Some(b) => rep.at_most("calibrated_band", b, c.tolerances.calibrated_band),
        None => {
            // No p = 2 index: the band tolerance cannot be checked, which must not read as success.
            rep.notes.push("calibrated_band: no (s, 2) index configured".into());
            rep.at_most("calibrated_band", f64::NAN, c.tolerances.calibrated_band);
        }
    }

    let [ms, mp] = c.multiplier_index;
    let mut mult = Table::new(&["scale", "lipschitz", "bound"]);
    let mut pts = Vec::new();
    for &k in &c.multiplier_scales {
        let chart = BoundaryChart::with_measured_lipschitz(
            Profile::PolyBump {
                amplitude: 0.5 * k,
                center: 0.0,
                width: 0.5,
            },
            1.0,
            1.0,
            Support::Compact,
        )?;
        let b = multiplier_bound(&chart, ms, mp)?.value;
        mult.push(vec![num(k), num(chart.lipschitz), num(b)]);
        pts.push((k, b));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    rep.at_most("multiplier_linearity", (slope / (sxy / sxx) - 1.0).abs(), c.tolerances.multiplier_linearity);
    rep.tables.insert("seminorms".into(), table);
    rep.tables.insert("multiplier".into(), mult);
    Ok(rep)
}
