//! Explicit finite-difference solver for `u_tt - Δu = f(u)` on a line or
//! for radially symmetric solutions in three dimensions.
//!
//! Leapfrog in time, central differences in space, first-order absorbing
//! boundary at the outer edge(s). Because the boundary closure is not
//! exact, every consumer of a [`WaveField`] must stay inside the causal
//! interior reported by [`WaveField::causal_range`]: boundary influence
//! travels at most one node per step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{central_gradient, Extension, UniformGrid};
use crate::nonlinearity::ModelParams;

/// Largest admissible Courant number per geometry.
pub const MAX_CFL_LINE: f64 = 0.95;
pub const MAX_CFL_RADIAL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Line,
    Radial3d,
}

impl Geometry {
    pub fn dimension(self) -> usize {
        match self {
            Geometry::Line => 1,
            Geometry::Radial3d => 3,
        }
    }

    pub fn max_cfl(self) -> f64 {
        match self {
            Geometry::Line => MAX_CFL_LINE,
            Geometry::Radial3d => MAX_CFL_RADIAL,
        }
    }

    /// Continuation used when interpolating even profiles near `r = 0`.
    pub fn even_extension(self) -> Extension {
        match self {
            Geometry::Line => Extension::None,
            Geometry::Radial3d => Extension::Even,
        }
    }

    pub fn odd_extension(self) -> Extension {
        match self {
            Geometry::Line => Extension::None,
            Geometry::Radial3d => Extension::Odd,
        }
    }
}

/// One time level: `u` and `u_t` at every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Latest time level that influenced this record (fixes the causal range).
    pub step: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
}

impl Snapshot {
    pub fn max_abs(&self) -> f64 {
        self.u.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub amplitude: f64,
    pub t_max: f64,
    pub max_steps: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            amplitude: 1e6,
            t_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Amplitude,
    TimeLimit,
    StepLimit,
}

/// Which time levels are kept.
///
/// Levels are stored every `every` steps and, if `growth` is set, whenever
/// `max |u|` has grown by the factor `1 + growth` since the last stored
/// level (near blow-up this spaces records uniformly in `ln(T - t)`).
/// `probes` are exact-time states obtained by cubic interpolation over
/// four consecutive levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotPlan {
    pub every: usize,
    pub growth: Option<f64>,
    pub probes: Vec<f64>,
}

impl Default for SnapshotPlan {
    fn default() -> Self {
        Self {
            every: 1,
            growth: None,
            probes: Vec::new(),
        }
    }
}

/// Record of an evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    pub params: ModelParams,
    pub geometry: Geometry,
    pub grid: UniformGrid,
    pub cfl: f64,
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    /// States at the requested probe times, in the order requested; probes
    /// past the end of the run are absent.
    pub probes: Vec<Snapshot>,
    pub steps: usize,
    pub stop_reason: StopReason,
}

fn validate(
    params: &ModelParams,
    geometry: Geometry,
    grid: &UniformGrid,
    u0: &[f64],
    u1: &[f64],
    cfl: f64,
) -> Result<()> {
    if params.n != geometry.dimension() {
        return Err(Error::param(
            "geometry",
            format!("dimension {} does not match N = {}", geometry.dimension(), params.n),
        ));
    }
    if !(grid.h > 0.0) || !grid.h.is_finite() {
        return Err(Error::param("h", "grid spacing must be positive"));
    }
    if !(cfl > 0.0 && cfl <= geometry.max_cfl()) {
        return Err(Error::param(
            "cfl",
            format!("must lie in (0, {}] for this geometry, got {cfl}", geometry.max_cfl()),
        ));
    }
    if u0.len() != grid.len || u1.len() != grid.len {
        return Err(Error::param("initial", "u0 and u1 must match the grid"));
    }
    if grid.len < 5 {
        return Err(Error::param("initial", "at least five nodes are required"));
    }
    if geometry == Geometry::Radial3d && grid.start != 0.0 {
        return Err(Error::param("grid", "radial grids start at r = 0"));
    }
    if u0.iter().chain(u1).any(|v| !v.is_finite()) {
        return Err(Error::param("initial", "data must be finite"));
    }
    Ok(())
}

// Discrete Laplacian (interior plus origin; boundary entries are unused).
fn laplacian(geometry: Geometry, grid: &UniformGrid, u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let h2 = grid.h * grid.h;
    for i in 1..n - 1 {
        out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
    }
    if geometry == Geometry::Radial3d {
        for i in 1..n - 1 {
            let r = grid.node(i);
            out[i] += (u[i + 1] - u[i - 1]) / (grid.h * r);
        }
        out[0] = 6.0 * (u[1] - u[0]) / h2;
    }
}

// First-order upwind for the outgoing characteristic at the boundary nodes.
fn absorbing_boundary(geometry: Geometry, grid: &UniformGrid, cfl: f64, cur: &[f64], next: &mut [f64]) {
    let n = cur.len();
    match geometry {
        Geometry::Line => {
            next[0] = cur[0] + cfl * (cur[1] - cur[0]);
            next[n - 1] = cur[n - 1] - cfl * (cur[n - 1] - cur[n - 2]);
        }
        Geometry::Radial3d => {
            let r1 = grid.node(n - 1);
            let r0 = grid.node(n - 2);
            let w1 = r1 * cur[n - 1];
            let w0 = r0 * cur[n - 2];
            next[n - 1] = (w1 - cfl * (w1 - w0)) / r1;
        }
    }
}

struct ProbeQueue {
    // (original index, time), sorted by time
    pending: VecDeque<(usize, f64)>,
    done: Vec<Option<Snapshot>>,
    // last four levels as (step, u)
    ring: VecDeque<(usize, Vec<f64>)>,
}

impl ProbeQueue {
    fn new(times: &[f64]) -> Self {
        let mut pending: Vec<(usize, f64)> = times.iter().copied().enumerate().collect();
        pending.sort_by(|a, b| a.1.total_cmp(&b.1));
        Self {
            pending: pending.into(),
            done: vec![None; times.len()],
            ring: VecDeque::with_capacity(4),
        }
    }

    fn active(&self) -> bool {
        !self.pending.is_empty()
    }

    // Called with every level in order; `last` marks the final level.
    fn push(&mut self, step: usize, u: &[f64], dt: f64, last: bool) {
        if !self.active() {
            return;
        }
        if self.ring.len() == 4 {
            self.ring.pop_front();
        }
        self.ring.push_back((step, u.to_vec()));
        if self.ring.len() < 4 {
            return;
        }
        let first = self.ring[0].0;
        let t_first = first as f64 * dt;
        // Centre the stencil: serve probes up to the second-to-last cell
        // unless this is the final level.
        let limit_level = if last { step } else { step - 1 };
        let t_limit = limit_level as f64 * dt;
        while let Some(&(idx, t)) = self.pending.front() {
            if t > t_limit {
                break;
            }
            self.pending.pop_front();
            if t < t_first - 1e-12 * dt.max(t.abs()) {
                continue;
            }
            let xi = (t - t_first) / dt;
            let (w, dw) = cubic_weights(xi);
            let n = u.len();
            let mut val = vec![0.0; n];
            let mut der = vec![0.0; n];
            for (k, (_, level)) in self.ring.iter().enumerate() {
                for i in 0..n {
                    val[i] += w[k] * level[i];
                    der[i] += dw[k] * level[i];
                }
            }
            for d in &mut der {
                *d /= dt;
            }
            self.done[idx] = Some(Snapshot {
                step,
                t,
                u: val,
                ut: der,
            });
        }
    }
}

fn cubic_weights(xi: f64) -> ([f64; 4], [f64; 4]) {
    let d = [xi, xi - 1.0, xi - 2.0, xi - 3.0];
    let denom = [-6.0, 2.0, -2.0, 6.0];
    let mut w = [0.0; 4];
    let mut dw = [0.0; 4];
    for k in 0..4 {
        let o: Vec<f64> = (0..4).filter(|&j| j != k).map(|j| d[j]).collect();
        w[k] = o[0] * o[1] * o[2] / denom[k];
        dw[k] = (o[1] * o[2] + o[0] * o[2] + o[0] * o[1]) / denom[k];
    }
    (w, dw)
}

/// Evolves `(u0, u1)` with `dt = cfl h` until the stop rule fires.
///
/// A non-finite value aborts with [`Error::BlowupOverrun`] carrying the last
/// complete level.
pub fn evolve(
    params: &ModelParams,
    geometry: Geometry,
    grid: UniformGrid,
    u0: &[f64],
    u1: &[f64],
    cfl: f64,
    stop: &StopRule,
    plan: &SnapshotPlan,
) -> Result<WaveField> {
    validate(params, geometry, &grid, u0, u1, cfl)?;
    if plan.every == 0 {
        return Err(Error::param("every", "snapshot interval must be at least 1"));
    }
    let n = grid.len;
    let dt = cfl * grid.h;
    let dt2 = dt * dt;
    let mut lap = vec![0.0; n];
    let mut probes = ProbeQueue::new(&plan.probes);

    let mut prev = u0.to_vec();
    let mut cur = vec![0.0; n];
    laplacian(geometry, &grid, &prev, &mut lap);
    for i in 0..n {
        cur[i] = prev[i] + dt * u1[i] + 0.5 * dt2 * (lap[i] + params.f(prev[i]));
    }
    absorbing_boundary(geometry, &grid, cfl, &prev, &mut cur);
    probes.push(0, &prev, dt, false);

    let mut snapshots = vec![Snapshot {
        step: 0,
        t: 0.0,
        u: prev.clone(),
        ut: u1.to_vec(),
    }];
    let mut last_max = snapshots[0].max_abs();
    if !cur.iter().all(|v| v.is_finite()) {
        return Err(Error::BlowupOverrun {
            t: dt,
            last_valid: Box::new(snapshots[0].clone()),
        });
    }

    let mut next = vec![0.0; n];
    let mut level = 1usize;
    let stop_reason;
    loop {
        // advance level -> level + 1
        laplacian(geometry, &grid, &cur, &mut lap);
        for i in 0..n {
            next[i] = 2.0 * cur[i] - prev[i] + dt2 * (lap[i] + params.f(cur[i]));
        }
        absorbing_boundary(geometry, &grid, cfl, &cur, &mut next);
        let t = level as f64 * dt;
        if !next.iter().all(|v| v.is_finite()) {
            let ut = cur.iter().zip(&prev).map(|(c, p)| (c - p) / dt).collect();
            return Err(Error::BlowupOverrun {
                t: t + dt,
                last_valid: Box::new(Snapshot {
                    step: level,
                    t,
                    u: cur.clone(),
                    ut,
                }),
            });
        }
        let max_abs = cur.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let reason = if max_abs >= stop.amplitude {
            Some(StopReason::Amplitude)
        } else if t >= stop.t_max * (1.0 - 1e-12) {
            Some(StopReason::TimeLimit)
        } else if level >= stop.max_steps {
            Some(StopReason::StepLimit)
        } else {
            None
        };
        probes.push(level, &cur, dt, false);
        let grew = plan.growth.is_some_and(|g| max_abs >= (1.0 + g) * last_max);
        if reason.is_some() || level % plan.every == 0 || grew {
            let ut = next.iter().zip(&prev).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
            snapshots.push(Snapshot {
                step: level,
                t,
                u: cur.clone(),
                ut,
            });
            last_max = max_abs;
        }
        if let Some(r) = reason {
            probes.push(level + 1, &next, dt, true);
            stop_reason = r;
            break;
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        level += 1;
    }

    Ok(WaveField {
        params: *params,
        geometry,
        grid,
        cfl,
        dt,
        snapshots,
        probes: probes.done.into_iter().flatten().collect(),
        steps: level,
        stop_reason,
    })
}

impl WaveField {
    /// Inclusive node range unaffected by the boundary closure after `step`
    /// steps, or `None` once the boundary influence covers the grid.
    pub fn causal_range(&self, step: usize) -> Option<(usize, usize)> {
        let n = self.grid.len;
        let hi = (n - 1).checked_sub(step)?;
        let lo = match self.geometry {
            Geometry::Line => step,
            Geometry::Radial3d => 0,
        };
        (lo <= hi).then_some((lo, hi))
    }

    /// Whether `[x_lo, x_hi]`, widened by `margin` nodes, is causal at `step`.
    pub fn interval_is_causal(&self, step: usize, x_lo: f64, x_hi: f64, margin: usize) -> bool {
        let Some((lo, hi)) = self.causal_range(step) else {
            return false;
        };
        let a = self.grid.node(lo) + margin as f64 * self.grid.h;
        let b = self.grid.node(hi) - margin as f64 * self.grid.h;
        let lo_ok = match self.geometry {
            Geometry::Line => x_lo >= a - 1e-12,
            Geometry::Radial3d => true,
        };
        lo_ok && x_hi <= b + 1e-12
    }

    /// State at time `t`: a stored level or probe if one matches, otherwise
    /// cubic Hermite interpolation between the bracketing stored levels.
    pub fn state_at(&self, t: f64) -> Option<Snapshot> {
        let tol = 1e-12 * (1.0 + t.abs());
        if let Some(s) = self
            .snapshots
            .iter()
            .chain(&self.probes)
            .find(|s| (s.t - t).abs() <= tol)
        {
            return Some(s.clone());
        }
        let k = self.snapshots.partition_point(|s| s.t < t);
        if k == 0 || k == self.snapshots.len() {
            return None;
        }
        let (a, b) = (&self.snapshots[k - 1], &self.snapshots[k]);
        let dt = b.t - a.t;
        let th = (t - a.t) / dt;
        let (t2, t3) = (th * th, th * th * th);
        let (h00, h10, h01, h11) = (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + th, -2.0 * t3 + 3.0 * t2, t3 - t2);
        let (d00, d10, d01, d11) = (6.0 * t2 - 6.0 * th, 3.0 * t2 - 4.0 * th + 1.0, -6.0 * t2 + 6.0 * th, 3.0 * t2 - 2.0 * th);
        let n = a.u.len();
        let mut u = vec![0.0; n];
        let mut ut = vec![0.0; n];
        for i in 0..n {
            u[i] = h00 * a.u[i] + h10 * dt * a.ut[i] + h01 * b.u[i] + h11 * dt * b.ut[i];
            ut[i] = (d00 * a.u[i] + d01 * b.u[i]) / dt + d10 * a.ut[i] + d11 * b.ut[i];
        }
        Some(Snapshot {
            step: b.step,
            t,
            u,
            ut,
        })
    }

    /// Free energy `∫ (u_t²/2 + |∇u|²/2 - F(u))` over the whole grid
    /// (trapezoid rule, `4πr²` weight in the radial case).
    pub fn free_energy(&self, snap: &Snapshot) -> Result<f64> {
        let grad = central_gradient(&self.grid, &snap.u, self.geometry.even_extension());
        let mut dens = Vec::with_capacity(self.grid.len);
        for i in 0..self.grid.len {
            let e = 0.5 * snap.ut[i] * snap.ut[i] + 0.5 * grad[i] * grad[i] - self.params.potential(snap.u[i])?;
            dens.push(e * self.volume_weight(self.grid.node(i)));
        }
        Ok(trapezoid(&dens, self.grid.h))
    }

    fn volume_weight(&self, x: f64) -> f64 {
        match self.geometry {
            Geometry::Line => 1.0,
            Geometry::Radial3d => 4.0 * std::f64::consts::PI * x * x,
        }
    }

    /// Ball norms `(‖u‖, ‖∇u‖, ‖u_t‖)` in `L²(B(x0, radius))`.
    ///
    /// Trapezoid rule on the nodes, with linearly interpolated end values in
    /// the partial cells; gradient by central differences. The ball (plus a
    /// one-node stencil margin) must lie in the causal interior.
    pub fn light_cone_norms(&self, snap: &Snapshot, x0: f64, radius: f64) -> Result<[f64; 3]> {
        if !(radius > 2.0 * self.grid.h) {
            return Err(Error::Geometry(format!(
                "ball radius {radius:e} is not resolved by h = {:e}",
                self.grid.h
            )));
        }
        if self.geometry == Geometry::Radial3d && x0 != 0.0 {
            return Err(Error::Geometry("radial balls must be centred at r = 0".into()));
        }
        if !self.interval_is_causal(snap.step, x0 - radius, x0 + radius, 1) {
            return Err(Error::Geometry(format!(
                "ball B({x0}, {radius:e}) at t = {} leaves the causal interior",
                snap.t
            )));
        }
        let grad = central_gradient(&self.grid, &snap.u, self.geometry.even_extension());
        let lo = match self.geometry {
            Geometry::Line => x0 - radius,
            Geometry::Radial3d => 0.0,
        };
        let hi = x0 + radius;
        let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
        let mut out = [0.0; 3];
        for (k, field) in [sq(&snap.u), sq(&grad), sq(&snap.ut)].into_iter().enumerate() {
            let dens: Vec<f64> = field
                .iter()
                .enumerate()
                .map(|(i, v)| v * self.volume_weight(self.grid.node(i)))
                .collect();
            out[k] = piecewise_linear_integral(&self.grid, &dens, lo, hi).sqrt();
        }
        Ok(out)
    }

    /// Maximum of `|u|` over the causal interior of a snapshot.
    pub fn causal_max(&self, snap: &Snapshot) -> Option<f64> {
        let (lo, hi) = self.causal_range(snap.step)?;
        Some(snap.u[lo..=hi].iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    /// Snapshot rows as CSV: `t` followed by the node values of `u`.
    pub fn snapshots_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.grid.len {
            out.push_str(&format!(",u{i}"));
        }
        out.push('\n');
        for s in &self.snapshots {
            let mut row = vec![s.t];
            row.extend_from_slice(&s.u);
            out.push_str(&crate::io::csv_row(&row));
        }
        out
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

// Integral over [a, b] of the piecewise-linear interpolant of nodal values.
fn piecewise_linear_integral(grid: &UniformGrid, vals: &[f64], a: f64, b: f64) -> f64 {
    let h = grid.h;
    let pa = ((a - grid.start) / h).clamp(0.0, (grid.len - 1) as f64);
    let pb = ((b - grid.start) / h).clamp(0.0, (grid.len - 1) as f64);
    if pb <= pa {
        return 0.0;
    }
    let lin = |p: f64| -> f64 {
        let i = (p.floor() as usize).min(grid.len - 2);
        let th = p - i as f64;
        (1.0 - th) * vals[i] + th * vals[i + 1]
    };
    let ia = pa.ceil() as usize;
    let ib = pb.floor() as usize;
    if ia > ib {
        return 0.5 * (lin(pa) + lin(pb)) * (pb - pa) * h;
    }
    let mut total = 0.5 * (lin(pa) + vals[ia]) * (ia as f64 - pa) * h;
    for i in ia..ib {
        total += 0.5 * (vals[i] + vals[i + 1]) * h;
    }
    total + 0.5 * (vals[ib] + lin(pb)) * (pb - ib as f64) * h
}

/// Fit settings for [`estimate_blowup_surface`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOptions {
    /// Number of trailing super-threshold records used per node.
    pub fit_window: usize,
    /// `|u|` above which a record counts as part of the blow-up tail.
    pub threshold: f64,
    /// Absolute slack in the pairwise Lipschitz test.
    pub lipschitz_tol: f64,
    /// A node is non-characteristic when `delta0 < 1 - margin`.
    pub characteristic_margin: f64,
    /// Minimal growth of `|u|` across a node's fit window; nodes that only
    /// graze the threshold are left unresolved.
    pub min_growth: f64,
}

impl SurfaceOptions {
    pub fn new(fit_window: usize, threshold: f64) -> Self {
        Self {
            fit_window,
            threshold,
            lipschitz_tol: 0.0,
            characteristic_margin: 0.05,
            min_growth: 1.5,
        }
    }
}

/// Fitted blow-up times on the resolved nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupSurface {
    pub node_index: Vec<usize>,
    pub nodes: Vec<f64>,
    pub t_of_x: Vec<f64>,
    /// Local Lipschitz slope of `T` (slope of the backward cone).
    pub delta0: Vec<f64>,
    pub lipschitz_ok: bool,
    pub characteristic_margin: f64,
}

impl BlowupSurface {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fitted `T` at grid node `index`, if resolved.
    pub fn time_at_node(&self, index: usize) -> Option<f64> {
        let k = self.node_index.iter().position(|&i| i == index)?;
        Some(self.t_of_x[k])
    }

    pub fn is_non_characteristic(&self, index: usize) -> Option<bool> {
        let k = self.node_index.iter().position(|&i| i == index)?;
        Some(self.delta0[k] < 1.0 - self.characteristic_margin)
    }

    /// Position of the earliest blow-up.
    pub fn argmin(&self) -> Option<(f64, f64)> {
        self.nodes
            .iter()
            .zip(&self.t_of_x)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(&x, &t)| (x, t))
    }
}

// ln psi_T(t) without the domain guard of the public evaluator; valid for
// 0 < tau < 1.
fn ln_envelope(params: &ModelParams, tau: f64) -> f64 {
    let l = -tau.ln();
    -params.beta() * tau.ln() - params.a / (params.p - 1.0) * l.ln()
}

fn fit_node(params: &ModelParams, ts: &[f64], us: &[f64]) -> Option<f64> {
    let k = -(params.p - 1.0) / 2.0;
    let ys: Vec<f64> = us.iter().map(|u| u.abs().powf(k)).collect();
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return None;
    }
    let t_lin = mt - my / slope;
    let t_last = *ts.last()?;
    if !(t_lin > t_last) {
        return None;
    }
    refine(params, ts, us, t_last, t_lin).or(Some(t_lin))
}

// Minimises the spread of ln|u| - ln psi_T over T by golden section in
// ln(T - t_last).
fn refine(params: &ModelParams, ts: &[f64], us: &[f64], t_last: f64, t_lin: f64) -> Option<f64> {
    let d = t_lin - t_last;
    let t_first = ts[0];
    let spread = |ld: f64| -> f64 {
        let big_t = t_last + ld.exp();
        let mut vals = Vec::with_capacity(ts.len());
        for (t, u) in ts.iter().zip(us) {
            let tau = big_t - t;
            if !(tau > 0.0 && tau < (-1.0f64).exp()) {
                return f64::INFINITY;
            }
            vals.push(u.abs().ln() - ln_envelope(params, tau));
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m) * (v - m)).sum()
    };
    if t_lin - t_first + 3.0 * d >= (-1.0f64).exp() {
        return None;
    }
    let (mut lo, mut hi) = ((0.25 * d).ln(), (4.0 * d).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut e = lo + g * (hi - lo);
    let (mut fc, mut fe) = (spread(c), spread(e));
    for _ in 0..200 {
        if fc < fe {
            hi = e;
            e = c;
            fe = fc;
            c = hi - g * (hi - lo);
            fc = spread(c);
        } else {
            lo = c;
            c = e;
            fc = fe;
            e = lo + g * (hi - lo);
            fe = spread(e);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let best = 0.5 * (lo + hi);
    spread(best).is_finite().then(|| t_last + best.exp())
}

/// Per-node blow-up times from the tail of an amplitude-stopped run.
///
/// Each node uses its last `fit_window` causal records with `|u|` above the
/// threshold: a linear fit of `|u|^{-(p-1)/2}` against `t` gives a first
/// estimate, refined by matching `ln |u|` to `ln ψ_T` up to a constant.
/// Only nodes in the causal interior of the last stored level are fitted;
/// nodes without enough records are left out.
pub fn estimate_blowup_surface(field: &WaveField, opts: &SurfaceOptions) -> Result<BlowupSurface> {
    if field.stop_reason != StopReason::Amplitude {
        return Err(Error::InsufficientData(
            "blow-up surface needs a run stopped by the amplitude rule".into(),
        ));
    }
    if opts.fit_window < 3 {
        return Err(Error::param("fit_window", "at least three records are needed"));
    }
    // Nodes that left the causal interior early would be fitted on windows
    // far from blow-up.
    let (lo, hi) = field
        .snapshots
        .last()
        .and_then(|s| field.causal_range(s.step))
        .unwrap_or((1, 0));
    let mut node_index = Vec::new();
    let mut t_of_x = Vec::new();
    for i in lo..=hi {
        let mut ts = Vec::new();
        let mut us = Vec::new();
        for s in &field.snapshots {
            let causal = field.causal_range(s.step).is_some_and(|(lo, hi)| lo <= i && i <= hi);
            if causal && s.u[i].abs() >= opts.threshold {
                ts.push(s.t);
                us.push(s.u[i]);
            }
        }
        if ts.len() < opts.fit_window {
            continue;
        }
        let start = ts.len() - opts.fit_window;
        if us[us.len() - 1].abs() < opts.min_growth * us[start].abs() {
            continue;
        }
        if let Some(t) = fit_node(&field.params, &ts[start..], &us[start..]) {
            node_index.push(i);
            t_of_x.push(t);
        }
    }
    let nodes: Vec<f64> = node_index.iter().map(|&i| field.grid.node(i)).collect();
    let mut delta0 = vec![0.0; nodes.len()];
    for k in 0..nodes.len() {
        for j in [k.wrapping_sub(1), k + 1] {
            if j < nodes.len() && node_index[j].abs_diff(node_index[k]) == 1 {
                let slope = (t_of_x[j] - t_of_x[k]).abs() / (nodes[j] - nodes[k]).abs();
                delta0[k] = f64::max(delta0[k], slope);
            }
        }
    }
    let mut lipschitz_ok = true;
    'outer: for k in 0..nodes.len() {
        for j in k + 1..nodes.len() {
            if (t_of_x[j] - t_of_x[k]).abs() > (nodes[j] - nodes[k]).abs() + opts.lipschitz_tol {
                lipschitz_ok = false;
                break 'outer;
            }
        }
    }
    Ok(BlowupSurface {
        node_index,
        nodes,
        t_of_x,
        delta0,
        lipschitz_ok,
        characteristic_margin: opts.characteristic_margin,
    })
}

/// Run metadata as a JSON document.
pub fn metadata_json(field: &WaveField) -> serde_json::Value {
    serde_json::json!({
        "params": field.params,
        "geometry": field.geometry,
        "grid": field.grid,
        "cfl": field.cfl,
        "dt": field.dt,
        "steps": field.steps,
        "stop_reason": field.stop_reason,
        "snapshots": field.snapshots.len(),
        "probes": field.probes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(p: f64, a: f64) -> ModelParams {
        ModelParams::new(p, a, 1).unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = UniformGrid::symmetric(0.05, 40);
        let z = vec![0.0; grid.len];
        let stop = StopRule {
            t_max: 1.0,
            ..StopRule::default()
        };
        let f = evolve(&line(3.0, 1.0), Geometry::Line, grid, &z, &z, 0.8, &stop, &SnapshotPlan::default()).unwrap();
        assert_eq!(f.stop_reason, StopReason::TimeLimit);
        assert!(f.snapshots.iter().all(|s| s.u.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_bad_cfl_and_dimension() {
        let grid = UniformGrid::symmetric(0.1, 10);
        let z = vec![0.0; grid.len];
        let err = evolve(&line(3.0, 0.0), Geometry::Line, grid, &z, &z, 1.5, &StopRule::default(), &SnapshotPlan::default())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "cfl", .. }));
        let rgrid = UniformGrid::new(0.0, 0.1, 20);
        let z = vec![0.0; 20];
        let err = evolve(&line(3.0, 0.0), Geometry::Radial3d, rgrid, &z, &z, 0.4, &StopRule::default(), &SnapshotPlan::default())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "geometry", .. }));
        let p3 = ModelParams::new(1.5, 0.0, 3).unwrap();
        let err = evolve(&p3, Geometry::Radial3d, rgrid, &z, &z, 0.6, &StopRule::default(), &SnapshotPlan::default())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { name: "cfl", .. }));
    }

    #[test]
    fn free_pulse_translates_to_second_order() {
        // Zero-amplitude limit: a tiny pulse with u1 = -u0' travels right.
        let params = ModelParams::new(3.0, 0.0, 1).unwrap();
        let bump = |x: f64| 1e-9 * (-40.0 * x * x).exp();
        let err = |h: f64| {
            let grid = UniformGrid::symmetric(h, (3.0 / h).round() as usize);
            let u0: Vec<f64> = grid.nodes().into_iter().map(bump).collect();
            let u1: Vec<f64> = grid.nodes().into_iter().map(|x| 80.0 * x * bump(x)).collect();
            let stop = StopRule {
                t_max: 1.0,
                ..StopRule::default()
            };
            let plan = SnapshotPlan {
                every: usize::MAX,
                ..SnapshotPlan::default()
            };
            let f = evolve(&params, Geometry::Line, grid, &u0, &u1, 0.5, &stop, &plan).unwrap();
            let last = f.snapshots.last().unwrap();
            assert!((last.t - 1.0).abs() < 1e-12);
            grid.nodes()
                .iter()
                .zip(&last.u)
                .map(|(x, u)| (u - bump(x - last.t)).abs())
                .fold(0.0, f64::max)
                / 1e-9
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 0.05, "{e1}");
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn causal_ranges_shrink_one_node_per_step() {
        let grid = UniformGrid::symmetric(0.1, 10);
        let z = vec![0.0; grid.len];
        let stop = StopRule {
            t_max: 0.5,
            ..StopRule::default()
        };
        let f = evolve(&line(3.0, 0.0), Geometry::Line, grid, &z, &z, 0.5, &stop, &SnapshotPlan::default()).unwrap();
        assert_eq!(f.causal_range(0), Some((0, 20)));
        assert_eq!(f.causal_range(3), Some((3, 17)));
        assert_eq!(f.causal_range(11), None);
    }

    #[test]
    fn probes_interpolate_levels() {
        let params = ModelParams::new(3.0, 0.0, 1).unwrap();
        let grid = UniformGrid::symmetric(0.05, 60);
        let u0: Vec<f64> = grid.nodes().into_iter().map(|x| 0.1 * (-10.0 * x * x).exp()).collect();
        let u1 = vec![0.0; grid.len];
        let stop = StopRule {
            t_max: 0.5,
            ..StopRule::default()
        };
        let plan = SnapshotPlan {
            every: 1,
            growth: None,
            probes: vec![0.3, 0.1, 0.123],
        };
        let f = evolve(&params, Geometry::Line, grid, &u0, &u1, 0.5, &stop, &plan).unwrap();
        assert_eq!(f.probes.len(), 3);
        let at = f.state_at(0.1).unwrap();
        let stored = f.snapshots.iter().find(|s| (s.t - 0.1).abs() < 1e-12).unwrap();
        assert!(at.u.iter().zip(&stored.u).all(|(a, b)| (a - b).abs() < 1e-12));
        // ut from the cubic agrees with the centred difference to O(dt^2)
        let err = at.ut.iter().zip(&stored.ut).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-4, "{err:e}");
    }

    #[test]
    fn constant_ball_norm() {
        let params = ModelParams::new(3.0, 0.0, 1).unwrap();
        let grid = UniformGrid::symmetric(0.1, 20);
        let c = 0.7;
        let u0 = vec![c; grid.len];
        let u1 = vec![0.0; grid.len];
        let stop = StopRule {
            t_max: 0.05,
            ..StopRule::default()
        };
        let f = evolve(&params, Geometry::Line, grid, &u0, &u1, 0.5, &stop, &SnapshotPlan::default()).unwrap();
        let [l2, g, _] = f.light_cone_norms(&f.snapshots[0], 0.03, 0.77).unwrap();
        assert!((l2 - c * (2.0 * 0.77f64).sqrt()).abs() < 1e-14);
        assert_eq!(g, 0.0);
        assert!(f.light_cone_norms(&f.snapshots[0], 0.0, 0.15).is_err());
    }

    #[test]
    fn radial_ball_norm_of_constant() {
        let params = ModelParams::new(2.0, 0.0, 3).unwrap();
        let grid = UniformGrid::new(0.0, 0.01, 200);
        let u0 = vec![1.0; grid.len];
        let u1 = vec![0.0; grid.len];
        let stop = StopRule {
            t_max: 0.01,
            ..StopRule::default()
        };
        let f = evolve(&params, Geometry::Radial3d, grid, &u0, &u1, 0.5, &stop, &SnapshotPlan::default()).unwrap();
        let [l2, _, _] = f.light_cone_norms(&f.snapshots[0], 0.0, 1.0).unwrap();
        let exact = (4.0 / 3.0 * std::f64::consts::PI).sqrt();
        assert!((l2 - exact).abs() / exact < 1e-4);
    }

    #[test]
    fn empty_surface_when_nothing_resolves() {
        let params = ModelParams::new(3.0, 0.0, 1).unwrap();
        let grid = UniformGrid::symmetric(0.05, 20);
        let u0 = vec![0.5; grid.len];
        let u1 = vec![0.0; grid.len];
        let stop = StopRule {
            amplitude: 0.5,
            ..StopRule::default()
        };
        let f = evolve(&params, Geometry::Line, grid, &u0, &u1, 0.5, &stop, &SnapshotPlan::default()).unwrap();
        let s = estimate_blowup_surface(&f, &SurfaceOptions::new(5, 1e3)).unwrap();
        assert!(s.is_empty());
        assert!(s.lipschitz_ok);
    }
}
