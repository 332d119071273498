//! Similarity variables `y = (x - x0)/(T0 - t)`, `s = -ln(T0 - t)`,
//! `u = ψ_{T0}(t) w(y, s)`, and the weighted functionals built on `w`.
//!
//! Frames sample `w` on the nodes of a ball quadrature that stops at
//! `|y| = 1 - ε`; integrals carry a tail estimate obtained by comparing the
//! cut-offs `ε` and `2ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{central_gradient, central_second, lagrange4, Extension};
use crate::nonlinearity::{powr, ModelParams};
use crate::quadrature::GaussLegendre;
use crate::wave::{Geometry, Snapshot, WaveField};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_ORDER: usize = 8;

/// Composite Gauss-Legendre rule on the truncated unit ball, graded
/// geometrically toward the sphere `|y| = 1`.
///
/// For the line the nodes are signed `y`; in the radial case they are
/// radii and the weights include `4πr²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallQuadrature {
    pub dimension: usize,
    pub epsilon: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Whether a node lies inside the smaller ball `|y| <= 1 - 2ε`.
    pub inner: Vec<bool>,
}

impl BallQuadrature {
    /// `order` Gauss points per panel; `dimension` is 1 or 3.
    pub fn new(dimension: usize, epsilon: f64, order: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.2) {
            return Err(Error::param("epsilon_w", format!("must lie in (0, 0.2], got {epsilon}")));
        }
        if dimension != 1 && dimension != 3 {
            return Err(Error::param("dimension", "ball quadrature supports N = 1 and N = 3"));
        }
        if order < 2 {
            return Err(Error::param("order", "at least two points per panel"));
        }
        // Breakpoints 1 - 2^j ε, j = J..0, with 2^J ε <= 1/2.
        let mut breaks = vec![0.0];
        let mut j = 0;
        while epsilon * 2f64.powi(j + 1) <= 0.5 {
            j += 1;
        }
        let first = 1.0 - epsilon * 2f64.powi(j);
        for k in 1..=4 {
            breaks.push(first * k as f64 / 4.0);
        }
        for k in (0..j).rev() {
            breaks.push(1.0 - epsilon * 2f64.powi(k));
        }
        let gl = GaussLegendre::new(order);
        let cut = 1.0 - 2.0 * epsilon;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut inner = Vec::new();
        for w in breaks.windows(2) {
            let is_inner = w[1] <= cut + 1e-15;
            for (r, wt) in gl.mapped(w[0], w[1]) {
                if dimension == 1 {
                    for y in [-r, r] {
                        nodes.push(y);
                        weights.push(wt);
                        inner.push(is_inner);
                    }
                } else {
                    nodes.push(r);
                    weights.push(4.0 * std::f64::consts::PI * r * r * wt);
                    inner.push(is_inner);
                }
            }
        }
        Ok(Self {
            dimension,
            epsilon,
            nodes,
            weights,
            inner,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Radius of the truncated ball.
    pub fn radius(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// A quadrature value together with the estimated contribution of the
/// excluded shell `1 - ε < |y| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedIntegral {
    pub value: f64,
    pub tail: f64,
}

impl WeightedIntegral {
    pub const ZERO: Self = Self { value: 0.0, tail: 0.0 };

    pub fn extrapolated(&self) -> f64 {
        self.value + self.tail
    }
}

/// `w` and its derivatives at one quadrature node.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sample {
    /// `y` (line) or `|y|` (radial).
    pub y: f64,
    pub w: f64,
    pub ws: f64,
    /// Derivative along `y` (radial derivative in the radial case).
    pub wy: f64,
    pub wyy: f64,
    pub wsy: f64,
}

/// `w(·, s)` on a ball quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarFrame {
    pub params: ModelParams,
    pub x0: f64,
    pub t0: f64,
    pub s: f64,
    pub quad: BallQuadrature,
    pub w: Vec<f64>,
    pub ws: Vec<f64>,
    pub wy: Vec<f64>,
    pub wyy: Vec<f64>,
    pub wsy: Vec<f64>,
}

impl SimilarFrame {
    /// Frame built from a closure returning `[w, ∂s w, ∂y w, ∂yy w, ∂y∂s w]`.
    pub fn from_fn<F: FnMut(f64) -> [f64; 5]>(
        params: &ModelParams,
        s: f64,
        quad: BallQuadrature,
        mut f: F,
    ) -> Result<Self> {
        if quad.dimension != params.n {
            return Err(Error::param("quadrature", "dimension does not match N"));
        }
        if !(s > 1.0) {
            return Err(Error::domain("similarity frame", format!("s = {s} must exceed 1")));
        }
        let n = quad.len();
        let mut frame = Self {
            params: *params,
            x0: 0.0,
            t0: f64::NAN,
            s,
            w: Vec::with_capacity(n),
            ws: Vec::with_capacity(n),
            wy: Vec::with_capacity(n),
            wyy: Vec::with_capacity(n),
            wsy: Vec::with_capacity(n),
            quad,
        };
        for &y in &frame.quad.nodes {
            let v = f(y);
            frame.w.push(v[0]);
            frame.ws.push(v[1]);
            frame.wy.push(v[2]);
            frame.wyy.push(v[3]);
            frame.wsy.push(v[4]);
        }
        Ok(frame)
    }

    pub fn sample(&self, k: usize) -> Sample {
        Sample {
            y: self.quad.nodes[k],
            w: self.w[k],
            ws: self.ws[k],
            wy: self.wy[k],
            wyy: self.wyy[k],
            wsy: self.wsy[k],
        }
    }

    fn rho(&self, y: f64, singular_power: i32) -> f64 {
        let q = 1.0 - y * y;
        q.powf(self.params.alpha() - singular_power as f64)
    }

    // Tail exponent: the integrand·weight behaves like (1-|y|)^(order) at the
    // sphere.
    fn integrate_with_order<F: FnMut(&Sample) -> f64>(
        &self,
        mut integrand: F,
        singular_power: i32,
        vanishing: f64,
    ) -> WeightedIntegral {
        let mut total = 0.0;
        let mut inner = 0.0;
        for k in 0..self.quad.len() {
            let smp = self.sample(k);
            let v = integrand(&smp) * self.rho(smp.y, singular_power) * self.quad.weights[k];
            total += v;
            if self.quad.inner[k] {
                inner += v;
            }
        }
        let order = self.params.alpha() - singular_power as f64 + vanishing;
        let tail = (total - inner) / (2f64.powf(order + 1.0) - 1.0);
        WeightedIntegral { value: total, tail }
    }

    /// `∫_{|y|<=1-ε} integrand · ρ · (1-|y|²)^{-singular_power} dy`, with a
    /// tail estimate for the excluded shell.
    pub fn weighted_integral<F: FnMut(&Sample) -> f64>(&self, integrand: F, singular_power: i32) -> WeightedIntegral {
        self.integrate_with_order(integrand, singular_power, 0.0)
    }

    /// Unweighted `∫_{|y|<=1-ε} integrand dy`.
    pub fn ball_integral<F: FnMut(&Sample) -> f64>(&self, mut integrand: F) -> f64 {
        (0..self.quad.len())
            .map(|k| integrand(&self.sample(k)) * self.quad.weights[k])
            .sum()
    }
}

/// Samples `u` from a wave state into similarity variables at vertex
/// `(x0, t0)`.
///
/// `w` and its derivatives come from cubic interpolation of the nodal
/// values of `u`, `u_t` and their central differences, and the chain rule:
/// `∂s w = (T0-t) u_t/ψ - (2/(p-1) - a/((p-1) s ln s)) w - y ∂y w`.
pub fn frame_from_state(
    field: &WaveField,
    state: &Snapshot,
    x0: f64,
    t0: f64,
    quad: &BallQuadrature,
) -> Result<SimilarFrame> {
    let params = &field.params;
    let tau = t0 - state.t;
    let psi = params.psi(t0, state.t)?;
    let s = -tau.ln();
    if field.geometry == Geometry::Radial3d && x0 != 0.0 {
        return Err(Error::Geometry("radial frames must be centred at r = 0".into()));
    }
    let reach = quad.radius() * tau;
    if !field.interval_is_causal(state.step, x0 - reach, x0 + reach, 2) {
        return Err(Error::Geometry(format!(
            "cone section of radius {reach:e} at t = {} leaves the causal interior",
            state.t
        )));
    }
    let grid = &field.grid;
    let (even, odd) = (field.geometry.even_extension(), field.geometry.odd_extension());
    let ux = central_gradient(grid, &state.u, even);
    let uxx = central_second(grid, &state.u, even);
    let utx = central_gradient(grid, &state.ut, even);
    let kappa = params.beta() - params.a / ((params.p - 1.0) * s * s.ln());
    let at = |vals: &[f64], x: f64, ext: Extension| -> Result<f64> {
        lagrange4(grid, vals, x, ext)
            .map(|v| v[0])
            .ok_or_else(|| Error::Geometry(format!("x = {x} lies outside the grid")))
    };
    SimilarFrame::from_fn(params, s, quad.clone(), |y| {
        let x = match field.geometry {
            Geometry::Line => x0 + y * tau,
            Geometry::Radial3d => y * tau,
        };
        let u = at(&state.u, x, even).unwrap_or(f64::NAN);
        let ut = at(&state.ut, x, even).unwrap_or(f64::NAN);
        let dx = at(&ux, x, odd).unwrap_or(f64::NAN);
        let dxx = at(&uxx, x, even).unwrap_or(f64::NAN);
        let dtx = at(&utx, x, odd).unwrap_or(f64::NAN);
        let w = u / psi;
        let wy = tau * dx / psi;
        let wyy = tau * tau * dxx / psi;
        let ws = tau * ut / psi - kappa * w - y * wy;
        let wsy = tau * tau * dtx / psi - kappa * wy - wy - y * wyy;
        [w, ws, wy, wyy, wsy]
    })
    .and_then(|mut f| {
        if f.w.iter().chain(&f.ws).any(|v| !v.is_finite()) {
            return Err(Error::Geometry("frame sample is not finite".into()));
        }
        f.x0 = x0;
        f.t0 = t0;
        Ok(f)
    })
}

/// [`frame_from_state`] at time `t`, using a stored level, a probe, or time
/// interpolation of stored levels.
pub fn to_similarity(field: &WaveField, x0: f64, t0: f64, t: f64, quad: &BallQuadrature) -> Result<SimilarFrame> {
    let tau = t0 - t;
    if !(tau > 0.0 && tau < (-1.0f64).exp()) {
        return Err(Error::domain("to_similarity", format!("T0 - t = {tau:e} is outside (0, 1/e)")));
    }
    let state = field
        .state_at(t)
        .ok_or_else(|| Error::InsufficientData(format!("no state recorded around t = {t}")))?;
    frame_from_state(field, &state, x0, t0, quad)
}

/// The weighted integrals every functional is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameIntegrals {
    pub s: f64,
    /// ℰ(w(s))
    pub energy: WeightedIntegral,
    /// `∫ w ∂s w ρ`
    pub cross: WeightedIntegral,
    /// `∫ (∂s w)² ρ/(1-|y|²)`
    pub dissipation: WeightedIntegral,
    /// `∫ |w|^{p+1} g(φw) ρ`
    pub potential: WeightedIntegral,
    /// `∫ |∇w|² (1-|y|²) ρ`
    pub gradient: WeightedIntegral,
    /// `∫ w² ρ`
    pub mass: WeightedIntegral,
}

/// Potential density `e^{-2(p+1)s/(p-1)} ln(s)^{2a/(p-1)} F(φw)`, written as
/// `ln(s)^{-a} |w|^{p+1} I(φ|w|)` with `F(x) = |x|^{p+1} I(|x|)`.
fn potential_density(params: &ModelParams, s: f64, phi: f64, w: f64) -> Result<f64> {
    if w == 0.0 {
        return Ok(0.0);
    }
    let scaled = params.potential_scaled(phi * w.abs())?;
    Ok(powr(s.ln(), -params.a) * powr(w.abs(), params.p + 1.0) * scaled)
}

pub fn frame_integrals(frame: &SimilarFrame) -> Result<FrameIntegrals> {
    let params = &frame.params;
    let s = frame.s;
    let phi = params.phi(s)?;
    let quad_coef = (params.p + 1.0) / ((params.p - 1.0) * (params.p - 1.0));
    let mut pot = Vec::with_capacity(frame.quad.len());
    for &w in &frame.w {
        pot.push(potential_density(params, s, phi, w)?);
    }
    let mut k = 0;
    let energy = frame.weighted_integral(
        |q| {
            let v = 0.5 * q.ws * q.ws + 0.5 * q.wy * q.wy * (1.0 - q.y * q.y) + quad_coef * q.w * q.w - pot[k];
            k += 1;
            v
        },
        0,
    );
    let ln_s_a = powr(s.ln(), -params.a);
    let potential = frame.weighted_integral(|q| ln_s_a * powr(q.w.abs(), params.p + 1.0) * params.g(phi * q.w), 0);
    let potential = WeightedIntegral {
        value: potential.value / ln_s_a,
        tail: potential.tail / ln_s_a,
    };
    Ok(FrameIntegrals {
        s,
        energy,
        cross: frame.weighted_integral(|q| q.w * q.ws, 0),
        dissipation: frame.weighted_integral(|q| q.ws * q.ws, 1),
        potential,
        gradient: frame.integrate_with_order(|q| q.wy * q.wy * (1.0 - q.y * q.y), 0, 1.0),
        mass: frame.weighted_integral(|q| q.w * q.w, 0),
    })
}

/// ℰ(w(s)).
pub fn eval_energy(frame: &SimilarFrame) -> Result<WeightedIntegral> {
    Ok(frame_integrals(frame)?.energy)
}

/// 𝒥(w(s)) = -(s ln s)^{-1} ∫ w ∂s w ρ.
pub fn eval_corrective(frame: &SimilarFrame) -> Result<WeightedIntegral> {
    if !(frame.s > 1.0) {
        return Err(Error::domain("J", "s must exceed 1"));
    }
    let c = -1.0 / (frame.s * frame.s.ln());
    let cross = frame.weighted_integral(|q| q.w * q.ws, 0);
    Ok(WeightedIntegral {
        value: c * cross.value,
        tail: c * cross.tail,
    })
}

/// Per-frame values of the Lyapunov family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub s_values: Vec<f64>,
    pub e: Vec<f64>,
    pub j: Vec<f64>,
    pub h_m: Vec<f64>,
    pub n_m: Vec<f64>,
    pub l0: Vec<f64>,
    /// ℒ₀ through `ℰ + ln^{-1/2}(s) 𝒥`.
    pub l0_alt: Vec<f64>,
    pub ltilde_m: Vec<f64>,
    pub dissipation: Vec<f64>,
    /// Absolute tail estimates propagated into 𝒩ₘ and 𝓛̃ₘ.
    pub n_tail: Vec<f64>,
    pub ltilde_tail: Vec<f64>,
    pub m: f64,
    pub s0: f64,
    pub c_lyap: f64,
    pub b: f64,
    pub epsilon_w: f64,
}

/// ℋₘ = ℰ + m𝒥, 𝒩ₘ = ln(s)^{-b} ℋₘ + m² e^{-s} with `b = m(p+3)/2`,
/// ℒ₀ = ℰ - (s ln^{3/2} s)^{-1} ∫ w ∂s w ρ and
/// 𝓛̃ₘ = e^{2C/√(ln s)} ℒ₀ + m/√s.
pub fn lyapunov_from_integrals(
    params: &ModelParams,
    integrals: &[FrameIntegrals],
    m: f64,
    c_lyap: f64,
    epsilon_w: f64,
) -> Result<FunctionalSeries> {
    if integrals.len() < 2 {
        return Err(Error::InsufficientData("the Lyapunov family needs at least two frames".into()));
    }
    if integrals.windows(2).any(|w| !(w[1].s > w[0].s)) {
        return Err(Error::param("frames", "s values must increase strictly"));
    }
    let b = m * (params.p + 3.0) / 2.0;
    let mut out = FunctionalSeries {
        s_values: Vec::new(),
        e: Vec::new(),
        j: Vec::new(),
        h_m: Vec::new(),
        n_m: Vec::new(),
        l0: Vec::new(),
        l0_alt: Vec::new(),
        ltilde_m: Vec::new(),
        dissipation: Vec::new(),
        n_tail: Vec::new(),
        ltilde_tail: Vec::new(),
        m,
        s0: integrals[0].s,
        c_lyap,
        b,
        epsilon_w,
    };
    for fi in integrals {
        let s = fi.s;
        let ln_s = s.ln();
        let e = fi.energy.value;
        let j = -fi.cross.value / (s * ln_s);
        let h = e + m * j;
        let decay = powr(ln_s, -b);
        let l0 = e - fi.cross.value / (s * ln_s.powf(1.5));
        let l0_alt = e + j / ln_s.sqrt();
        let amp = (2.0 * c_lyap / ln_s.sqrt()).exp();
        let e_tail = fi.energy.tail.abs();
        let j_tail = fi.cross.tail.abs() / (s * ln_s);
        out.s_values.push(s);
        out.e.push(e);
        out.j.push(j);
        out.h_m.push(h);
        out.n_m.push(decay * h + m * m * (-s).exp());
        out.l0.push(l0);
        out.l0_alt.push(l0_alt);
        out.ltilde_m.push(amp * l0 + m / s.sqrt());
        out.dissipation.push(fi.dissipation.value);
        out.n_tail.push(decay * (e_tail + m * j_tail));
        out.ltilde_tail.push(amp * (e_tail + j_tail / ln_s.sqrt()));
    }
    Ok(out)
}

/// Checks that all frames share vertex and model, then evaluates the family.
pub fn eval_lyapunov_family(frames: &[SimilarFrame], m: f64, c_lyap: f64) -> Result<FunctionalSeries> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData("the Lyapunov family needs at least two frames".into()));
    }
    let first = &frames[0];
    for f in frames {
        let same_vertex = f.x0 == first.x0 && (f.t0 == first.t0 || (f.t0.is_nan() && first.t0.is_nan()));
        if f.params != first.params || !same_vertex {
            return Err(Error::param("frames", "frames must share parameters and vertex"));
        }
    }
    let integrals = frames.iter().map(frame_integrals).collect::<Result<Vec<_>>>()?;
    lyapunov_from_integrals(&first.params, &integrals, m, c_lyap, first.quad.epsilon)
}

impl FunctionalSeries {
    /// `min_k (𝒩ₘ(s_k) + factor · tail_k)`; nonnegative when the bound holds.
    pub fn n_margin(&self, factor: f64) -> f64 {
        self.n_m
            .iter()
            .zip(&self.n_tail)
            .map(|(n, t)| n + factor * t)
            .fold(f64::INFINITY, f64::min)
    }

    /// `max_k (𝓛̃(s_{k+1}) - 𝓛̃(s_k) - factor · tail)`; nonpositive when the
    /// decrease holds.
    pub fn ltilde_excess(&self, factor: f64) -> f64 {
        (1..self.ltilde_m.len())
            .map(|k| {
                let tol = factor * self.ltilde_tail[k].max(self.ltilde_tail[k - 1]);
                self.ltilde_m[k] - self.ltilde_m[k - 1] - tol
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest relative gap between the two evaluations of ℒ₀.
    pub fn l0_identity_gap(&self) -> f64 {
        self.l0
            .iter()
            .zip(&self.l0_alt)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,E,J,H_m,N_m,L0,Ltilde_m,dissipation_integral\n");
        for k in 0..self.s_values.len() {
            out.push_str(&crate::io::csv_row(&[
                self.s_values[k],
                self.e[k],
                self.j[k],
                self.h_m[k],
                self.n_m[k],
                self.l0[k],
                self.ltilde_m[k],
                self.dissipation[k],
            ]));
        }
        out
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "m": self.m,
            "s0": self.s0,
            "C_lyap": self.c_lyap,
            "b": self.b,
            "epsilon_w": self.epsilon_w,
        })
    }
}

/// Smallest `m` among `candidates` (tried in increasing order) for which
/// 𝒩ₘ stays above `-factor·tail` and 𝓛̃ₘ does not increase beyond
/// `factor·tail`.
pub fn smallest_monotone_m(
    params: &ModelParams,
    integrals: &[FrameIntegrals],
    c_lyap: f64,
    candidates: &[f64],
    factor: f64,
) -> Result<Option<f64>> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    for m in sorted {
        let series = lyapunov_from_integrals(params, integrals, m, c_lyap, f64::NAN)?;
        if series.n_margin(factor) >= 0.0 && series.ltilde_excess(factor) <= 0.0 {
            return Ok(Some(m));
        }
    }
    Ok(None)
}

/// Weighted L² norm over the truncated ball of the defect in the
/// similarity-variable equation, with `∂s² w` from a centred second
/// difference of three equally spaced frames.
pub fn w_equation_residual(frames: &[SimilarFrame; 3]) -> Result<f64> {
    let [a, b, c] = frames;
    let (d1, d2) = (b.s - a.s, c.s - b.s);
    if !(d1 > 0.0) || (d1 - d2).abs() > 1e-9 * d1.max(d2) {
        return Err(Error::param("frames", "frames must be equally spaced in s"));
    }
    if a.quad != b.quad || b.quad != c.quad {
        return Err(Error::param("frames", "frames must share the ball quadrature"));
    }
    let params = &b.params;
    let (p, s) = (params.p, b.s);
    let alpha = params.alpha();
    let ln_s = s.ln();
    let drift = 2.0 * params.a / ((p - 1.0) * s * ln_s);
    let gamma = params.gamma(s)?;
    let phi = params.phi(s)?;
    let lin = 2.0 * (p + 1.0) / ((p - 1.0) * (p - 1.0));
    let damping = (p + 3.0) / (p - 1.0) - drift;
    let nonlin = powr(ln_s, -params.a);
    let dims = (params.n - 1) as f64;
    let mut defect = Vec::with_capacity(b.quad.len());
    for k in 0..b.quad.len() {
        let q = b.sample(k);
        let wss = (a.w[k] - 2.0 * q.w + c.w[k]) / (d1 * d1);
        let y = q.y;
        let mut div = (1.0 - y * y) * q.wyy - 2.0 * (alpha + 1.0) * y * q.wy;
        if dims > 0.0 {
            div += dims / y * (1.0 - y * y) * q.wy;
        }
        let rhs = div + drift * y * q.wy - lin * q.w + gamma * q.w - damping * q.ws - 2.0 * y * q.wsy
            + nonlin * powr(q.w.abs(), p - 1.0) * q.w * params.g(phi * q.w);
        defect.push(wss - rhs);
    }
    let mut k = 0;
    let norm2 = b.weighted_integral(
        |_| {
            let v = defect[k] * defect[k];
            k += 1;
            v
        },
        0,
    );
    Ok(norm2.value.max(0.0).sqrt())
}

/// The three integrals of the Hardy-type inequality
/// `∫ w² |y|²/(1-|y|²) ρ ≲ ∫ |∇w|² (1-|y|²) ρ + ∫ w² ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyTerms {
    pub lhs: WeightedIntegral,
    pub gradient: WeightedIntegral,
    pub mass: WeightedIntegral,
}

impl HardyTerms {
    /// `lhs / (gradient + mass)` using tail-extrapolated values.
    pub fn ratio(&self) -> f64 {
        let den = self.gradient.extrapolated() + self.mass.extrapolated();
        if den == 0.0 {
            return 0.0;
        }
        self.lhs.extrapolated() / den
    }
}

pub fn hardy_check(frame: &SimilarFrame) -> HardyTerms {
    HardyTerms {
        lhs: frame.weighted_integral(|q| q.w * q.w * q.y * q.y, 1),
        gradient: frame.integrate_with_order(|q| q.wy * q.wy * (1.0 - q.y * q.y), 0, 1.0),
        mass: frame.weighted_integral(|q| q.w * q.w, 0),
    }
}

/// One interval of the energy-derivative inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDerivativeTerms {
    pub s_mid: f64,
    /// Finite-difference dℰ/ds.
    pub de_ds: f64,
    /// `-(3α/2) ∫ (∂s w)² ρ/(1-|y|²)` (midpoint average).
    pub dissipation_term: f64,
    /// Multiplier of `C` on the right: potential and Σ-majorant pieces.
    pub c_coefficient: f64,
}

/// Finite-difference check of
/// `dℰ/ds <= -(3α/2) D + C [P/(s ln^{a+1} s) + (G + M)/s² + e^{-s}]`,
/// returning the per-interval terms and the smallest `C >= 0` that makes
/// every interval hold.
pub fn energy_derivative_check(params: &ModelParams, integrals: &[FrameIntegrals]) -> (Vec<EnergyDerivativeTerms>, f64) {
    let alpha = params.alpha();
    let mut terms = Vec::new();
    let mut c_needed: f64 = 0.0;
    for w in integrals.windows(2) {
        let (x, y) = (&w[0], &w[1]);
        let ds = y.s - x.s;
        let s = 0.5 * (x.s + y.s);
        let avg = |f: fn(&FrameIntegrals) -> f64| 0.5 * (f(x) + f(y));
        let de_ds = (y.energy.value - x.energy.value) / ds;
        let dissipation_term = -1.5 * alpha * avg(|f| f.dissipation.value);
        let c_coefficient = avg(|f| f.potential.value) / (s * powr(s.ln(), params.a + 1.0))
            + (avg(|f| f.gradient.value) + avg(|f| f.mass.value)) / (s * s)
            + (-s).exp();
        let excess = de_ds - dissipation_term;
        if excess > 0.0 && c_coefficient > 0.0 {
            c_needed = c_needed.max(excess / c_coefficient);
        }
        terms.push(EnergyDerivativeTerms {
            s_mid: s,
            de_ds,
            dissipation_term,
            c_coefficient,
        });
    }
    (terms, c_needed)
}
