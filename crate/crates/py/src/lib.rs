//! Python bindings. Fields travel as `Field` objects holding nested lists; solvers return dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use slipflow::charts::{BoundaryChart, Profile, Support};
use slipflow::fixtures;
use slipflow::function_spaces;
use slipflow::halfspace::{self, half_l2, HalfSpaceProblem, HalfSpaceResiduals};
use slipflow::neumann::{solve_neumann_rough, w12_error, NeumannOptions, NeumannProblem};
use slipflow::rough_stokes::{self, mac_errors, sample_exact, PicardOptions, StokesData, StokesProblem, StokesSolution};
use slipflow::sharpness::{self, WedgeDomain};
use slipflow::{fv::StripGrid, GridField, Rank};

create_exception!(slipflow, SlipflowError, PyException);

fn err(e: slipflow::Error) -> PyErr {
    SlipflowError::new_err(e.to_string())
}

fn parse_rank(name: &str) -> PyResult<Rank> {
    match name {
        "scalar" => Ok(Rank::Scalar),
        "vector" => Ok(Rank::Vector),
        "tensor" => Ok(Rank::Tensor),
        _ => Err(PyValueError::new_err(format!("rank must be scalar, vector or tensor, got {name:?}"))),
    }
}

/// Periodic samples: one list per component, node index `ix + nx * iz`.
#[pyclass(module = "slipflow")]
#[derive(Clone)]
struct Field {
    inner: GridField,
}

#[pymethods]
impl Field {
    #[new]
    fn new(extent: Vec<f64>, nodes: Vec<usize>, rank: &str, values: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = GridField::new(&extent, &nodes, parse_rank(rank)?, values).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(prefix: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: GridField::read(&prefix).map_err(err)?,
        })
    }

    /// Writes `<prefix>.json` (header) and `<prefix>.bin` (little-endian f64, row-major).
    fn write(&self, prefix: PathBuf) -> PyResult<()> {
        self.inner.write(&prefix).map_err(err)
    }

    #[getter]
    fn extent(&self) -> Vec<f64> {
        self.inner.extent.clone()
    }

    #[getter]
    fn nodes(&self) -> Vec<usize> {
        self.inner.nodes.clone()
    }

    #[getter]
    fn rank(&self) -> &'static str {
        match self.inner.rank {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
            Rank::Tensor => "tensor",
        }
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.values.clone()
    }

    fn max_abs(&self) -> f64 {
        self.inner.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn __repr__(&self) -> String {
        format!("Field(rank={}, nodes={:?}, extent={:?})", self.rank(), self.inner.nodes, self.inner.extent)
    }
}

fn wrap(inner: GridField) -> Field {
    Field { inner }
}

/// Whole-space Stokes on the torus with forcing `Div G` (+ `f`); returns `(w, q)`.
#[pyfunction]
#[pyo3(signature = (g, f=None))]
fn solve_whole_space(py: Python<'_>, g: &Field, f: Option<&Field>) -> PyResult<(Field, Field)> {
    let (g, f) = (g.inner.clone(), f.map(|f| f.inner.clone()));
    let sol = py.allow_threads(|| halfspace::solve_whole_space(&g, f.as_ref())).map_err(err)?;
    Ok((wrap(sol.w), wrap(sol.q)))
}

#[pyfunction]
fn leray_project(v: &Field) -> Field {
    wrap(halfspace::leray_project(&v.inner))
}

#[pyfunction]
fn divergence(v: &Field) -> Vec<f64> {
    halfspace::divergence(&v.inner)
}

#[pyfunction]
fn fractional_seminorm(py: Python<'_>, f: &Field, s: f64, p: f64) -> PyResult<f64> {
    let f = f.inner.clone();
    Ok(py.allow_threads(|| function_spaces::fractional_seminorm(&f, s, p)).map_err(err)?.value)
}

#[pyfunction]
fn fourier_seminorm(f: &Field, s: f64) -> f64 {
    function_spaces::fourier_seminorm(&f.inner, s)
}

/// Multiplier bound of a compactly supported bump chart with Lipschitz scale `scale`.
#[pyfunction]
#[pyo3(signature = (scale, s=1.0, p=2.0))]
fn multiplier_bound(scale: f64, s: f64, p: f64) -> PyResult<(f64, f64)> {
    let chart = BoundaryChart::with_measured_lipschitz(
        Profile::PolyBump {
            amplitude: 0.5 * scale,
            center: 0.0,
            width: 0.5,
        },
        1.0,
        1.0,
        Support::Compact,
    )
    .map_err(err)?;
    let b = function_spaces::multiplier_bound(&chart, s, p).map_err(err)?;
    Ok((chart.lipschitz, b.value))
}

fn residual_dict<'py>(py: Python<'py>, r: &HalfSpaceResiduals) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("momentum", r.momentum)?;
    d.set_item("divergence", r.divergence)?;
    d.set_item("normal_trace", r.normal_trace)?;
    d.set_item("slip", r.slip)?;
    d.set_item("force_defect", r.force_defect)?;
    d.set_item("compatibility_defect", r.compatibility_defect)?;
    Ok(d)
}

/// Solve the manufactured half-space fixture on `n x n` nodes; residuals plus `rel_l2_error`.
#[pyfunction]
fn verify_halfspace(py: Python<'_>, n: usize) -> PyResult<Bound<'_, PyDict>> {
    let (prob, exact, sol) = py
        .allow_threads(|| {
            let (prob, exact) = fixtures::halfspace_manufactured(n)?;
            let sol = halfspace::solve_halfspace(&prob)?;
            Ok::<_, slipflow::Error>((prob, exact, sol))
        })
        .map_err(err)?;
    let d = residual_dict(py, &sol.residuals)?;
    let e = half_l2(&prob.grid, &sol.u.add(&exact.scaled(-1.0))) / half_l2(&prob.grid, &exact);
    d.set_item("rel_l2_error", e)?;
    d.set_item("u", wrap(sol.u).into_py(py))?;
    Ok(d)
}

/// Half-space solve for user data; interior fields share one `[L] x [H]` grid, boundary fields are 1D.
#[pyfunction]
#[pyo3(signature = (forcing=None, h=None, g_normal=None, g_tangential=None, forcing_tensor=None))]
fn solve_halfspace<'py>(
    py: Python<'py>,
    forcing: Option<&Field>,
    h: Option<&Field>,
    g_normal: Option<&Field>,
    g_tangential: Option<&Field>,
    forcing_tensor: Option<&Field>,
) -> PyResult<(Field, Bound<'py, PyDict>)> {
    let interior = [forcing, h, forcing_tensor].into_iter().flatten().next();
    let grid = match interior {
        Some(f) if f.inner.dim() == 2 => halfspace::HalfSpaceGrid {
            length: f.inner.extent[0],
            height: f.inner.extent[1],
            nx: f.inner.nodes[0],
            nz: f.inner.nodes[1],
        },
        _ => return Err(PyValueError::new_err("at least one 2D interior field is required")),
    };
    let mut prob = HalfSpaceProblem::zero(grid);
    for (name, src, slot) in [
        ("forcing", forcing, &mut prob.forcing),
        ("h", h, &mut prob.h),
        ("g_normal", g_normal, &mut prob.g_normal),
        ("g_tangential", g_tangential, &mut prob.g_tangential),
        ("forcing_tensor", forcing_tensor, &mut prob.forcing_tensor),
    ] {
        if let Some(f) = src {
            if f.inner.nodes != slot.nodes || f.inner.rank != slot.rank {
                return Err(PyValueError::new_err(format!(
                    "{name}: expected {:?} on {:?} nodes, got {:?} on {:?}",
                    slot.rank, slot.nodes, f.inner.rank, f.inner.nodes
                )));
            }
            *slot = f.inner.clone();
        }
    }
    let sol = py.allow_threads(|| halfspace::solve_halfspace(&prob)).map_err(err)?;
    Ok((wrap(sol.u.clone()), residual_dict(py, &sol.residuals)?))
}

fn solution_dict<'py>(py: Python<'py>, sol: &StokesSolution) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("sweeps", sol.sweeps)?;
    d.set_item("converged", sol.converged)?;
    d.set_item("contraction", sol.contraction())?;
    d.set_item("max_ratio", sol.max_ratio())?;
    d.set_item("residual", sol.residual_interior + sol.residual_bc)?;
    let hist: Vec<(usize, f64, f64)> = sol.history.iter().map(|h| (h.sweep, h.residual, h.ratio)).collect();
    d.set_item("history", hist)?;
    d.set_item("notes", sol.notes.clone())?;
    Ok(d)
}

/// Slip problem over the wall `y = K/(2 pi) cos(2 pi x)` on an `n x n` grid.
///
/// `forcing` is `"random"` (seeded smooth tensor) or `"manufactured"` (adds velocity/pressure errors).
#[pyfunction]
#[pyo3(signature = (roughness, alpha, n, forcing="random", seed=0, tol=1e-10, max_sweeps=80, nondivergence=false))]
#[allow(clippy::too_many_arguments)]
fn rough_solve<'py>(
    py: Python<'py>,
    roughness: f64,
    alpha: f64,
    n: usize,
    forcing: &str,
    seed: u64,
    tol: f64,
    max_sweeps: usize,
    nondivergence: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let domain = fixtures::wavy_strip(roughness);
    let (data, exact) = match forcing {
        "random" => (
            StokesData {
                forcing_tensor: Some(fixtures::smooth_forcing(seed, 0.4, 0.02)),
                ..Default::default()
            }
            .with_alpha(alpha),
            None,
        ),
        "manufactured" => {
            let (d, u, p) = fixtures::stokes_manufactured(&domain, alpha).map_err(err)?;
            (d, Some((u, p)))
        }
        other => return Err(PyValueError::new_err(format!("forcing must be random or manufactured, got {other:?}"))),
    };
    let problem = StokesProblem::new(domain, data);
    let opts = PicardOptions {
        tol,
        max_iter: max_sweeps,
        ..Default::default()
    };
    let (sol, errors) = py
        .allow_threads(|| {
            let grid = StripGrid::new(1.0, 1.0, n, n)?;
            let sol = if nondivergence {
                rough_stokes::nondivergence_solve(&problem, grid, &opts)?
            } else {
                rough_stokes::picard_solve(&problem, grid, &opts)?
            };
            let errors = exact.map(|(u, p)| mac_errors(&sol.geometry, &sol.field, &sample_exact(&sol.geometry, &u, &p)));
            Ok::<_, slipflow::Error>((sol, errors))
        })
        .map_err(err)?;
    let d = solution_dict(py, &sol)?;
    if let Some(e) = errors {
        d.set_item("velocity_l2", e.velocity_l2)?;
        d.set_item("velocity_h1", e.velocity_h1)?;
        d.set_item("velocity_h2", e.velocity_h2)?;
        d.set_item("pressure_l2", e.pressure_l2)?;
    }
    Ok(d)
}

/// Neumann problem with a manufactured solution; returns sweeps, residual and the `W^{1,2}` error.
#[pyfunction]
#[pyo3(signature = (roughness, n, tol=1e-10, max_sweeps=80))]
fn neumann_verify(py: Python<'_>, roughness: f64, n: usize, tol: f64, max_sweeps: usize) -> PyResult<Bound<'_, PyDict>> {
    let domain = fixtures::wavy_strip(roughness);
    let (sol, e) = py
        .allow_threads(|| {
            let (data, u) = fixtures::neumann_manufactured(&domain)?;
            let opts = NeumannOptions {
                tol,
                max_iter: max_sweeps,
                ..Default::default()
            };
            let sol = solve_neumann_rough(&NeumannProblem::new(domain, data), StripGrid::new(1.0, 1.0, n, n)?, &opts)?;
            let e = w12_error(&sol.geometry, &sol.u, &*u);
            Ok::<_, slipflow::Error>((sol, e))
        })
        .map_err(err)?;
    let d = PyDict::new_bound(py);
    d.set_item("sweeps", sol.report.sweeps)?;
    d.set_item("converged", sol.report.converged)?;
    d.set_item("residual", sol.report.residual_interior + sol.report.residual_bc)?;
    d.set_item("w12_error", e)?;
    Ok(d)
}

/// Measured against analytic wedge exponents and integrability verdicts, one dict per `(theta, p)`.
#[pyfunction]
#[pyo3(signature = (thetas, ps, nodes=1024, radii=5, levels=6))]
fn sharpness_table(py: Python<'_>, thetas: Vec<f64>, ps: Vec<f64>, nodes: usize, radii: usize, levels: usize) -> PyResult<Vec<PyObject>> {
    let cfg = sharpness::SharpnessConfig {
        thetas,
        ps,
        nodes,
        radii,
        levels,
    };
    let rows = py.allow_threads(|| sharpness::sharpness_table(&cfg)).map_err(err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("theta", r.theta)?;
            d.set_item("p", r.p)?;
            d.set_item("exponent", r.exponent)?;
            d.set_item("exponent_analytic", r.exponent_analytic)?;
            d.set_item("gamma", r.gamma)?;
            d.set_item("gamma_analytic", r.gamma_analytic)?;
            d.set_item("bounded", r.bounded)?;
            d.set_item("bounded_analytic", r.bounded_analytic)?;
            Ok(d.into_py(py))
        })
        .collect()
}

/// Analytic velocity-gradient exponent of the wedge with opening `theta`.
#[pyfunction]
fn wedge_exponent(theta: f64) -> PyResult<f64> {
    Ok(WedgeDomain::new(theta).map_err(err)?.analytic_exponent())
}

#[pymodule]
#[pyo3(name = "slipflow")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SlipflowError", m.py().get_type_bound::<SlipflowError>())?;
    m.add_class::<Field>()?;
    m.add_function(wrap_pyfunction!(solve_whole_space, m)?)?;
    m.add_function(wrap_pyfunction!(leray_project, m)?)?;
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add_function(wrap_pyfunction!(fractional_seminorm, m)?)?;
    m.add_function(wrap_pyfunction!(fourier_seminorm, m)?)?;
    m.add_function(wrap_pyfunction!(multiplier_bound, m)?)?;
    m.add_function(wrap_pyfunction!(verify_halfspace, m)?)?;
    m.add_function(wrap_pyfunction!(solve_halfspace, m)?)?;
    m.add_function(wrap_pyfunction!(rough_solve, m)?)?;
    m.add_function(wrap_pyfunction!(neumann_verify, m)?)?;
    m.add_function(wrap_pyfunction!(sharpness_table, m)?)?;
    m.add_function(wrap_pyfunction!(wedge_exponent, m)?)?;
    Ok(())
}
