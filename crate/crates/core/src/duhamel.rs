//! Picard iteration on the Duhamel formula: an independent local solver
//! used to cross-check the finite-difference scheme, and the rescaled
//! problem `(f_λ, g_λ, h_λ)` near a blow-up point.
//!
//! In 1D the kernel is d'Alembert's formula. In 3D radial symmetry it is
//! applied to the odd extension of `r u`, which solves the 1D equation.
//! Data are continued by zero outside the grid; spatial integrals are exact
//! integrals of the Catmull-Rom interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{central_gradient, lagrange4, CatmullRom, UniformGrid};
use crate::nonlinearity::{powr, ModelParams};
use crate::quadrature::GaussLegendre;
use crate::wave::{Geometry, WaveField};

// Line data as they are; radial data as the odd extension of r·v on the
// doubled grid.
fn line_profile(geometry: Geometry, grid: &UniformGrid, v: &[f64]) -> CatmullRom {
    match geometry {
        Geometry::Line => CatmullRom::new(*grid, v.to_vec()),
        Geometry::Radial3d => {
            let n = grid.len;
            let ext = UniformGrid::symmetric(grid.h, n - 1);
            let vals = (0..2 * n - 1)
                .map(|j| {
                    let r = ext.node(j);
                    r * v[j.abs_diff(n - 1)]
                })
                .collect();
            CatmullRom::new(ext, vals)
        }
    }
}

fn check_grid(geometry: Geometry, grid: &UniformGrid, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != grid.len) {
        return Err(Error::param("data", "length does not match the grid"));
    }
    if grid.len < 4 {
        return Err(Error::param("grid", "at least four nodes"));
    }
    if geometry == Geometry::Radial3d && grid.start != 0.0 {
        return Err(Error::param("grid", "radial grids start at r = 0"));
    }
    Ok(())
}

// Converts the 1D solution V of the extended problem back to u: V itself on
// the line, V/r (and ∂r V at r = 0) in the radial case.
fn to_physical<V: Fn(f64) -> f64, D: Fn() -> f64>(geometry: Geometry, x: f64, value: V, origin_slope: D) -> f64 {
    match geometry {
        Geometry::Line => value(x),
        Geometry::Radial3d if x == 0.0 => origin_slope(),
        Geometry::Radial3d => value(x) / x,
    }
}

/// Free evolution `∂t R(t) * u0 + R(t) * u1` at every node.
pub fn kernel_apply(geometry: Geometry, grid: &UniformGrid, t: f64, u0: &[f64], u1: &[f64]) -> Result<Vec<f64>> {
    Ok(kernel_apply_with_velocity(geometry, grid, t, u0, u1)?.0)
}

/// Free evolution together with its time derivative.
pub fn kernel_apply_with_velocity(
    geometry: Geometry,
    grid: &UniformGrid,
    t: f64,
    u0: &[f64],
    u1: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_grid(geometry, grid, &[u0.len(), u1.len()])?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", format!("must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok((u0.to_vec(), u1.to_vec()));
    }
    let a = line_profile(geometry, grid, u0);
    let b = line_profile(geometry, grid, u1);
    let mut u = Vec::with_capacity(grid.len);
    let mut ut = Vec::with_capacity(grid.len);
    for x in grid.nodes() {
        let value = |x: f64| 0.5 * (a.eval(x + t) + a.eval(x - t)) + 0.5 * b.integral(x - t, x + t);
        let rate = |x: f64| 0.5 * (a.derivative(x + t) - a.derivative(x - t)) + 0.5 * (b.eval(x + t) + b.eval(x - t));
        u.push(to_physical(geometry, x, value, || {
            0.5 * (a.derivative(t) + a.derivative(-t)) + 0.5 * (b.eval(t) - b.eval(-t))
        }));
        ut.push(to_physical(geometry, x, rate, || f64::NAN));
    }
    if geometry == Geometry::Radial3d {
        // ∂t u at the origin by even extrapolation; it carries no volume weight.
        ut[0] = (4.0 * ut[1] - ut[2]) / 3.0;
    }
    Ok((u, ut))
}

/// Linear energy `½∫(u_t² + |∇u|²)`, trapezoid rule.
pub fn linear_energy(geometry: Geometry, grid: &UniformGrid, u: &[f64], ut: &[f64]) -> f64 {
    let grad = central_gradient(grid, u, geometry.even_extension());
    let dens: Vec<f64> = (0..grid.len)
        .map(|i| {
            let w = match geometry {
                Geometry::Line => 1.0,
                Geometry::Radial3d => 4.0 * std::f64::consts::PI * grid.node(i).powi(2),
            };
            0.5 * (ut[i] * ut[i] + grad[i] * grad[i]) * w
        })
        .collect();
    let inner: f64 = dens[1..dens.len() - 1].iter().sum();
    grid.h * (inner + 0.5 * (dens[0] + dens[dens.len() - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Number of time panels on `[0, t0_local]`.
    pub levels: usize,
    pub max_iter: usize,
    /// Sup-norm Cauchy tolerance.
    pub tol: f64,
    /// Gauss points per time panel.
    pub gauss_order: usize,
    pub keep_iterates: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            levels: 40,
            max_iter: 60,
            tol: 1e-8,
            gauss_order: 4,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardState {
    pub params: ModelParams,
    pub geometry: Geometry,
    pub grid: UniformGrid,
    pub t0_local: f64,
    pub times: Vec<f64>,
    /// Final iterate, one row per time level.
    pub solution: Vec<Vec<f64>>,
    /// All iterates (only with `keep_iterates`).
    pub iterates: Vec<Vec<Vec<f64>>>,
    pub sup_diffs: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
    /// `sup |u| / (sup |u0| + t0 sup |u1|)` over the computed levels.
    pub ball_constant: f64,
}

impl PicardState {
    pub fn iterations(&self) -> usize {
        self.sup_diffs.len()
    }

    /// Per-iteration contraction report `iter,sup_diff,ratio`.
    pub fn contraction_csv(&self) -> String {
        let mut out = String::from("iter,sup_diff,ratio\n");
        for (k, d) in self.sup_diffs.iter().enumerate() {
            let ratio = if k == 0 { f64::NAN } else { self.contraction_ratios[k - 1] };
            out.push_str(&format!(
                "{},{},{}\n",
                k + 1,
                crate::io::format_number(*d),
                crate::io::format_number(ratio)
            ));
        }
        out
    }
}

fn lagrange_time(values: &[Vec<f64>], dt: f64, s: f64, out: &mut [f64]) {
    let last = values.len() - 1;
    let pos = s / dt;
    let cell = (pos.floor() as usize).min(last - 1);
    let first = cell.saturating_sub(1).min(last - 3);
    let xi = pos - first as f64;
    let d = [xi, xi - 1.0, xi - 2.0, xi - 3.0];
    let w = [
        d[1] * d[2] * d[3] / -6.0,
        d[0] * d[2] * d[3] / 2.0,
        d[0] * d[1] * d[3] / -2.0,
        d[0] * d[1] * d[2] / 6.0,
    ];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|k| w[k] * values[first + k][i]).sum();
    }
}

/// Picard iterates `u^{k+1} = Ψ(u^k)` on `[0, t0_local]`, starting from the
/// free evolution.
///
/// The Duhamel integral uses a composite Gauss rule in time over the level
/// panels, with cubic interpolation of the previous iterate between levels.
/// Stops once successive iterates differ by at most `tol` in sup norm; three
/// consecutive sup-norm ratios above one abort with
/// [`Error::ContractionFailure`].
pub fn picard_solve(
    params: &ModelParams,
    geometry: Geometry,
    grid: &UniformGrid,
    u0: &[f64],
    u1: &[f64],
    t0_local: f64,
    opts: &PicardOptions,
) -> Result<PicardState> {
    check_grid(geometry, grid, &[u0.len(), u1.len()])?;
    if params.n != geometry.dimension() {
        return Err(Error::param("dimension", "N does not match the geometry"));
    }
    if !(t0_local > 0.0 && t0_local.is_finite()) {
        return Err(Error::param("t0_local", format!("must be positive, got {t0_local}")));
    }
    if opts.levels < 3 || opts.gauss_order < 1 || opts.max_iter < 1 {
        return Err(Error::param("picard options", "need levels >= 3, gauss_order >= 1, max_iter >= 1"));
    }
    let dt = t0_local / opts.levels as f64;
    let times: Vec<f64> = (0..=opts.levels).map(|j| j as f64 * dt).collect();
    let free: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| kernel_apply(geometry, grid, t, u0, u1))
        .collect::<Result<_>>()?;
    let gl = GaussLegendre::new(opts.gauss_order);
    // Gauss times, panel by panel.
    let quad: Vec<Vec<(f64, f64)>> = (0..opts.levels)
        .map(|k| gl.mapped(times[k], times[k + 1]).collect())
        .collect();
    let nodes = grid.nodes();

    let mut current = free.clone();
    let mut state = PicardState {
        params: *params,
        geometry,
        grid: *grid,
        t0_local,
        times: times.clone(),
        solution: Vec::new(),
        iterates: Vec::new(),
        sup_diffs: Vec::new(),
        contraction_ratios: Vec::new(),
        converged: false,
        ball_constant: f64::NAN,
    };
    if opts.keep_iterates {
        state.iterates.push(current.clone());
    }
    let mut rising = 0;
    let mut scratch = vec![0.0; grid.len];
    for _ in 0..opts.max_iter {
        // Source profiles at every Gauss time.
        let sources: Vec<Vec<CatmullRom>> = quad
            .iter()
            .map(|panel| {
                panel
                    .iter()
                    .map(|&(s, _)| {
                        lagrange_time(&current, dt, s, &mut scratch);
                        let f: Vec<f64> = scratch.iter().map(|&u| params.f(u)).collect();
                        line_profile(geometry, grid, &f)
                    })
                    .collect()
            })
            .collect();
        let mut next = free.clone();
        for (j, &t) in times.iter().enumerate().skip(1) {
            for (i, &x) in nodes.iter().enumerate() {
                let mut duhamel = 0.0;
                for k in 0..j {
                    for (q, &(s, w)) in quad[k].iter().enumerate() {
                        let src = &sources[k][q];
                        let r = t - s;
                        duhamel += w * to_physical(
                            geometry,
                            x,
                            |x| 0.5 * src.integral(x - r, x + r),
                            || 0.5 * (src.eval(r) - src.eval(-r)),
                        );
                    }
                }
                next[j][i] += duhamel;
            }
        }
        let diff = next
            .iter()
            .flatten()
            .zip(current.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !diff.is_finite() {
            return Err(Error::ContractionFailure {
                ratios: state.contraction_ratios.clone(),
            });
        }
        if let Some(&prev) = state.sup_diffs.last() {
            let ratio = diff / prev;
            state.contraction_ratios.push(ratio);
            rising = if ratio > 1.0 { rising + 1 } else { 0 };
            if rising >= 3 {
                return Err(Error::ContractionFailure {
                    ratios: state.contraction_ratios.clone(),
                });
            }
        }
        state.sup_diffs.push(diff);
        current = next;
        if opts.keep_iterates {
            state.iterates.push(current.clone());
        }
        if diff <= opts.tol {
            state.converged = true;
            break;
        }
    }
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let data = sup(u0) + t0_local * sup(u1);
    let reach = current.iter().map(|l| sup(l)).fold(0.0, f64::max);
    state.ball_constant = if data > 0.0 { reach / data } else { 0.0 };
    state.solution = current;
    Ok(state)
}

/// `h_λ(f) = |f|^{p-1} f ln^a(ln(10 + λ^{-4/(p-1)} f²))`.
pub fn h_lambda(params: &ModelParams, lambda: f64, f: f64) -> f64 {
    if f == 0.0 {
        return 0.0;
    }
    let pure = powr(f.abs(), params.p - 1.0) * f;
    if params.a == 0.0 {
        return pure;
    }
    // ln(10 + e^{2L}) with L = ln|f| - β ln λ, safe for extreme λ.
    let l = f.abs().ln() - params.beta() * lambda.ln();
    let log_shift = if l > 300.0 {
        2.0 * l + (10.0 * (-2.0 * l).exp()).ln_1p()
    } else {
        (10.0 + (2.0 * l).exp()).ln()
    };
    pure * powr(log_shift.ln(), params.a)
}

/// `A(λ) = ln^{-a/(p-1)}(-ln λ)`, defined for `0 < λ < 1/e`.
pub fn a_factor(params: &ModelParams, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < (-1.0f64).exp()) {
        return Err(Error::domain("A(λ)", format!("λ = {lambda} must lie in (0, 1/e)")));
    }
    Ok(powr((-lambda.ln()).ln(), -params.a / (params.p - 1.0)))
}

/// Rescaled data `(f_λ, g_λ)(x) = λ^{2/(p-1)} (u, λ u_t)(t1, λx + x0)` on
/// `|x| <= half_width` (radial: `0 <= x <= half_width`), node spacing `h/λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledData {
    pub params: ModelParams,
    pub lambda: f64,
    pub x0: f64,
    pub t1: f64,
    pub grid: UniformGrid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// `A(λ)` when `λ < 1/e`.
    pub a_factor: Option<f64>,
}

impl RescaledData {
    pub fn h(&self, f: f64) -> f64 {
        h_lambda(&self.params, self.lambda, f)
    }
}

pub fn rescaled_problem(field: &WaveField, x0: f64, t1: f64, lambda: f64, half_width: f64) -> Result<RescaledData> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
    }
    if !(half_width > 0.0) {
        return Err(Error::param("half_width", "must be positive"));
    }
    if field.geometry == Geometry::Radial3d && x0 != 0.0 {
        return Err(Error::Geometry("radial rescaling must be centred at r = 0".into()));
    }
    let state = field
        .state_at(t1)
        .ok_or_else(|| Error::Geometry(format!("t1 = {t1} is outside the stored run")))?;
    let reach = lambda * half_width;
    if !field.interval_is_causal(state.step, x0 - reach, x0 + reach, 2) {
        return Err(Error::Geometry(format!(
            "rescaling region of radius {reach:e} around {x0} leaves the causal interior"
        )));
    }
    let h = field.grid.h / lambda;
    let half = (half_width / h).floor() as usize;
    let grid = match field.geometry {
        Geometry::Line => UniformGrid::symmetric(h, half),
        Geometry::Radial3d => UniformGrid::new(0.0, h, half + 1),
    };
    if grid.len < 4 {
        return Err(Error::Geometry("rescaled region holds fewer than four nodes".into()));
    }
    let scale = powr(lambda, field.params.beta());
    let ext = field.geometry.even_extension();
    let at = |vals: &[f64], x: f64| {
        lagrange4(&field.grid, vals, x, ext)
            .map(|v| v[0])
            .ok_or_else(|| Error::Geometry(format!("x = {x} lies outside the grid")))
    };
    let mut f = Vec::with_capacity(grid.len);
    let mut g = Vec::with_capacity(grid.len);
    for y in grid.nodes() {
        let x = lambda * y + x0;
        f.push(scale * at(&state.u, x)?);
        g.push(scale * lambda * at(&state.ut, x)?);
    }
    Ok(RescaledData {
        params: field.params,
        lambda,
        x0,
        t1,
        grid,
        f,
        g,
        a_factor: a_factor(&field.params, lambda).ok(),
    })
}
