//! Two-sided blow-up rate check and the averaged / pointwise bounds on the
//! similarity profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::SimilarFrame;
use crate::wave::{BlowupSurface, Snapshot, WaveField};

/// Window selection for [`rate_quotient`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    /// Explicit window start; by default the first stored time at which the
    /// causal sup of `|u|` exceeds `growth_factor` times its initial value.
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub growth_factor: f64,
    /// Smallest ball radius, in grid cells.
    pub min_radius_cells: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            t_start: None,
            t_end: None,
            growth_factor: 10.0,
            min_radius_cells: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub x0: f64,
    pub blowup_time: f64,
    pub t_grid: Vec<f64>,
    pub quotient: Vec<f64>,
    /// `(‖u‖, ‖∇u‖, ‖u_t‖)` on the backward cone section at each time.
    pub norms: Vec<[f64; 3]>,
    pub k_hat: f64,
    #[serde(rename = "K_hat")]
    pub big_k_hat: f64,
    pub window: (f64, f64),
}

impl RateReport {
    pub fn spread(&self) -> f64 {
        self.big_k_hat / self.k_hat
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,quotient,norm_u,norm_grad_u,norm_ut\n");
        for (k, t) in self.t_grid.iter().enumerate() {
            let [a, b, c] = self.norms[k];
            out.push_str(&crate::io::csv_row(&[*t, self.quotient[k], a, b, c]));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "x0": self.x0,
            "T": self.blowup_time,
            "k_hat": self.k_hat,
            "K_hat": self.big_k_hat,
            "window": [self.window.0, self.window.1],
            "samples": self.t_grid.len(),
        })
    }
}

/// The bracketed rate combination divided by `ψ_T(t)`.
pub fn quotient_from_norms(field: &WaveField, big_t: f64, t: f64, norms: [f64; 3]) -> Result<f64> {
    let tau = big_t - t;
    let half_n = field.params.n as f64 / 2.0;
    let psi = field.params.psi(big_t, t)?;
    Ok((tau.powf(-half_n) * norms[0] + tau.powf(1.0 - half_n) * (norms[1] + norms[2])) / psi)
}

fn stored_levels(field: &WaveField) -> Vec<&Snapshot> {
    let mut all: Vec<&Snapshot> = field.snapshots.iter().chain(&field.probes).collect();
    all.sort_by(|a, b| a.t.total_cmp(&b.t));
    all.dedup_by(|a, b| (a.t - b.t).abs() <= 1e-12 * (1.0 + a.t.abs()));
    all
}

/// Default window start: first stored level whose causal sup exceeds
/// `growth_factor` times the sup of the first level.
pub fn default_window_start(field: &WaveField, growth_factor: f64) -> Result<f64> {
    let levels = stored_levels(field);
    let first = levels
        .first()
        .and_then(|s| field.causal_max(s))
        .ok_or_else(|| Error::InsufficientData("the run stored no levels".into()))?;
    if !(first > 0.0) {
        return Err(Error::InsufficientData("initial data vanish: no blow-up to analyse".into()));
    }
    levels
        .iter()
        .find(|s| field.causal_max(s).is_some_and(|m| m > growth_factor * first))
        .map(|s| s.t)
        .ok_or_else(|| Error::InsufficientData(format!("sup |u| never grew by a factor {growth_factor}")))
}

/// Rate quotient at the surface node `x0_index` over the stored levels of
/// the window.
///
/// The window is clamped to `T - t < 1/e` and to cone sections of radius at
/// least `min_radius_cells · h`; levels whose section is not causal are
/// skipped.
pub fn rate_quotient(field: &WaveField, surface: &BlowupSurface, x0_index: usize, opts: &RateOptions) -> Result<RateReport> {
    let big_t = surface
        .time_at_node(x0_index)
        .ok_or_else(|| Error::InsufficientData(format!("T is not resolved at node {x0_index}")))?;
    let x0 = field.grid.node(x0_index);
    let t_start = match opts.t_start {
        Some(t) => t,
        None => default_window_start(field, opts.growth_factor)?,
    };
    let t_start = t_start.max(big_t - (-1.0f64).exp() * (1.0 - 1e-12));
    let t_end = opts
        .t_end
        .unwrap_or(f64::INFINITY)
        .min(big_t - opts.min_radius_cells * field.grid.h);
    if !(t_start < t_end) {
        return Err(Error::InsufficientData(format!("empty window [{t_start}, {t_end}]")));
    }
    let mut report = RateReport {
        x0,
        blowup_time: big_t,
        t_grid: Vec::new(),
        quotient: Vec::new(),
        norms: Vec::new(),
        k_hat: f64::INFINITY,
        big_k_hat: 0.0,
        window: (t_start, t_end),
    };
    for s in stored_levels(field) {
        if s.t < t_start || s.t > t_end {
            continue;
        }
        let radius = big_t - s.t;
        if !field.interval_is_causal(s.step, x0 - radius, x0 + radius, 1) {
            continue;
        }
        let norms = field.light_cone_norms(s, x0, radius)?;
        let q = quotient_from_norms(field, big_t, s.t, norms)?;
        report.t_grid.push(s.t);
        report.quotient.push(q);
        report.norms.push(norms);
        report.k_hat = report.k_hat.min(q);
        report.big_k_hat = report.big_k_hat.max(q);
    }
    if report.t_grid.len() < 2 {
        return Err(Error::InsufficientData("fewer than two causal levels in the window".into()));
    }
    if !(report.k_hat > 0.0) {
        return Err(Error::InsufficientData("quotient vanishes: degenerate (no blow-up)".into()));
    }
    Ok(report)
}

/// Relative change of `(k̂, K̂)` when the window start moves by `±shift·(T - t_start)`.
pub fn window_sensitivity(
    field: &WaveField,
    surface: &BlowupSurface,
    x0_index: usize,
    base: &RateReport,
    shift: f64,
) -> Result<(f64, f64)> {
    let d = shift * (base.blowup_time - base.window.0);
    let mut worst = (0.0f64, 0.0f64);
    for start in [base.window.0 - d, base.window.0 + d] {
        let opts = RateOptions {
            t_start: Some(start),
            t_end: Some(base.window.1),
            ..RateOptions::default()
        };
        let r = rate_quotient(field, surface, x0_index, &opts)?;
        worst.0 = worst.0.max((r.k_hat / base.k_hat - 1.0).abs());
        worst.1 = worst.1.max((r.big_k_hat / base.big_k_hat - 1.0).abs());
    }
    Ok(worst)
}

fn profile_density(frame: &SimilarFrame) -> [f64; 3] {
    [
        frame.ball_integral(|q| q.w * q.w),
        frame.ball_integral(|q| q.wy * q.wy),
        frame.ball_integral(|q| q.ws * q.ws),
    ]
}

/// Unit-interval averages `∫_s^{s+1} ∫ (∂s w)² + |∇w|² + w² dy ds'`
/// normalised by `s ln^{1+b} s`, one per frame whose interval is covered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageSeries {
    pub b: f64,
    pub s: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub const MAX_AVERAGE_SPACING: f64 = 0.05;

pub fn unit_interval_averages(frames: &[SimilarFrame], b: f64) -> Result<AverageSeries> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData("need at least two frames".into()));
    }
    let s: Vec<f64> = frames.iter().map(|f| f.s).collect();
    if s.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InsufficientData("frames must be ordered by increasing s".into()));
    }
    let dens: Vec<f64> = frames.iter().map(|f| profile_density(f).iter().sum()).collect();
    let mut out = AverageSeries {
        b,
        s: Vec::new(),
        raw: Vec::new(),
        normalized: Vec::new(),
    };
    let last = *s.last().unwrap();
    for i in 0..s.len() {
        let end = s[i] + 1.0;
        if end > last + 1e-12 {
            break;
        }
        let mut acc = 0.0;
        let mut k = i;
        while k + 1 < s.len() && s[k] < end - 1e-12 {
            let gap = s[k + 1] - s[k];
            if gap > MAX_AVERAGE_SPACING + 1e-12 {
                return Err(Error::InsufficientData(format!(
                    "frame spacing {gap} near s = {} exceeds {MAX_AVERAGE_SPACING}",
                    s[k]
                )));
            }
            let hi = s[k + 1].min(end);
            let d_hi = dens[k] + (dens[k + 1] - dens[k]) * (hi - s[k]) / gap;
            acc += 0.5 * (dens[k] + d_hi) * (hi - s[k]);
            k += 1;
        }
        out.s.push(s[i]);
        out.raw.push(acc);
        out.normalized.push(acc / (s[i] * s[i].ln().powf(1.0 + b)));
    }
    if out.s.is_empty() {
        return Err(Error::InsufficientData("frames cover less than a unit s-interval".into()));
    }
    Ok(out)
}

impl AverageSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,average,normalized\n");
        for k in 0..self.s.len() {
            out.push_str(&crate::io::csv_row(&[self.s[k], self.raw[k], self.normalized[k]]));
        }
        out
    }
}

/// Squared `H¹ × L²` norm of `(w, ∂s w)` on the truncated unit ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseNorm {
    pub s: f64,
    pub w_sq: f64,
    pub grad_sq: f64,
    pub ws_sq: f64,
}

impl PointwiseNorm {
    pub fn total(&self) -> f64 {
        self.w_sq + self.grad_sq + self.ws_sq
    }
}

pub fn pointwise_norms(frames: &[SimilarFrame]) -> Vec<PointwiseNorm> {
    frames
        .iter()
        .map(|f| {
            let [w_sq, grad_sq, ws_sq] = profile_density(f);
            PointwiseNorm { s: f.s, w_sq, grad_sq, ws_sq }
        })
        .collect()
}

pub fn pointwise_csv(norms: &[PointwiseNorm]) -> String {
    let mut out = String::from("s,w_sq,grad_sq,ws_sq,total\n");
    for n in norms {
        out.push_str(&crate::io::csv_row(&[n.s, n.w_sq, n.grad_sq, n.ws_sq, n.total()]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::UniformGrid;
    use crate::similarity::BallQuadrature;
    use crate::wave::{Geometry, StopReason};
    use crate::ModelParams;

    fn ode_field(times: &[f64], big_t: f64) -> WaveField {
        let params = ModelParams::new(3.0, 0.0, 1).unwrap();
        let grid = UniformGrid::symmetric(0.001, 1000);
        let snapshots = times
            .iter()
            .map(|&t| {
                let tau: f64 = big_t - t;
                Snapshot {
                    step: 0,
                    t,
                    u: vec![2f64.sqrt() / tau; grid.len],
                    ut: vec![2f64.sqrt() / (tau * tau); grid.len],
                }
            })
            .collect();
        WaveField {
            params,
            geometry: Geometry::Line,
            grid,
            cfl: 0.5,
            dt: 0.0005,
            snapshots,
            probes: Vec::new(),
            steps: 0,
            stop_reason: StopReason::Amplitude,
        }
    }

    fn point_surface(index: usize, x: f64, t: f64) -> BlowupSurface {
        BlowupSurface {
            node_index: vec![index],
            nodes: vec![x],
            t_of_x: vec![t],
            delta0: vec![0.0],
            lipschitz_ok: true,
            characteristic_margin: 0.05,
        }
    }

    #[test]
    fn constant_ode_field_has_quotient_four() {
        // ‖u‖ τ^{-1/2} = 2/τ and τ^{1/2}‖u_t‖ = 2/τ, with ψ = 1/τ.
        let big_t = 1.0;
        let times: Vec<f64> = (0..40).map(|k| 0.7 + 0.0075 * k as f64).collect();
        let field = ode_field(&times, big_t);
        let surface = point_surface(1000, 0.0, big_t);
        let r = rate_quotient(&field, &surface, 1000, &RateOptions { t_start: Some(0.7), ..Default::default() }).unwrap();
        assert!(r.t_grid.len() > 30);
        for q in &r.quotient {
            assert!((q - 4.0).abs() < 1e-9, "{q}");
        }
        assert!(r.k_hat > 0.0 && r.k_hat <= r.big_k_hat);
        // window clamped to T - t < 1/e
        let early = rate_quotient(&field, &surface, 1000, &RateOptions { t_start: Some(0.0), ..Default::default() }).unwrap();
        assert!(early.window.0 > 1.0 - (-1.0f64).exp());
        let (dk, dbig_k) = window_sensitivity(&field, &surface, 1000, &r, 0.1).unwrap();
        assert!(dk < 1e-9 && dbig_k < 1e-9);
        assert!(r.to_csv().lines().count() == r.t_grid.len() + 1);
    }

    #[test]
    fn unresolved_or_degenerate_runs_are_rejected() {
        let field = ode_field(&[0.7, 0.8], 1.0);
        let surface = point_surface(1000, 0.0, 1.0);
        assert!(rate_quotient(&field, &surface, 999, &RateOptions::default()).is_err());
        let mut zero = field.clone();
        for s in &mut zero.snapshots {
            s.u.iter_mut().for_each(|v| *v = 0.0);
            s.ut.iter_mut().for_each(|v| *v = 0.0);
        }
        assert!(rate_quotient(&zero, &surface, 1000, &RateOptions::default()).is_err());
        let opts = RateOptions { t_start: Some(0.7), ..Default::default() };
        assert!(matches!(rate_quotient(&zero, &surface, 1000, &opts), Err(Error::InsufficientData(_))));
    }

    fn const_frames(value: f64, s0: f64, ds: f64, count: usize) -> Vec<SimilarFrame> {
        let params = ModelParams::new(3.0, 0.0, 1).unwrap();
        let quad = BallQuadrature::new(1, 1e-3, 8).unwrap();
        (0..count)
            .map(|k| SimilarFrame::from_fn(&params, s0 + ds * k as f64, quad.clone(), |_| [value, 0.0, 0.0, 0.0, 0.0]).unwrap())
            .collect()
    }

    #[test]
    fn averages_of_constant_profiles() {
        let zero = unit_interval_averages(&const_frames(0.0, 2.0, 0.05, 41), 1.0).unwrap();
        assert!(zero.normalized.iter().all(|&v| v == 0.0));
        let frames = const_frames(2f64.sqrt(), 2.0, 0.05, 61);
        let avg = unit_interval_averages(&frames, 1.0).unwrap();
        let vol = 2.0 * (1.0 - 1e-3);
        assert_eq!(avg.s.len(), 41);
        for (s, (raw, norm)) in avg.s.iter().zip(avg.raw.iter().zip(&avg.normalized)) {
            assert!((raw - 2.0 * vol).abs() < 1e-10);
            assert!((norm - raw / (s * s.ln().powi(2))).abs() < 1e-14);
        }
        assert!(avg.normalized.windows(2).all(|w| w[1] < w[0]));
        assert!(unit_interval_averages(&const_frames(1.0, 2.0, 0.1, 20), 1.0).is_err());
        assert!(unit_interval_averages(&const_frames(1.0, 2.0, 0.05, 10), 1.0).is_err());
    }

    #[test]
    fn pointwise_norms_of_constant_profile() {
        let norms = pointwise_norms(&const_frames(2f64.sqrt(), 2.0, 0.5, 3));
        for n in &norms {
            assert!((n.w_sq - 2.0 * 2.0 * (1.0 - 1e-3)).abs() < 1e-12);
            assert_eq!((n.grad_sq, n.ws_sq), (0.0, 0.0));
        }
        assert!(pointwise_norms(&const_frames(0.0, 2.0, 0.5, 2)).iter().all(|n| n.total() == 0.0));
        assert_eq!(pointwise_csv(&norms).lines().count(), 4);
    }
}
