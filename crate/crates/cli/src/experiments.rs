//! The experiments behind each subcommand.

use std::io;

use blowup_core::duhamel::{h_lambda, picard_solve, PicardOptions};
use blowup_core::interp::UniformGrid;
use blowup_core::io::csv_row;
use blowup_core::ode::{asymptotic_rate_report, integrate_ode, trajectory_csv, OdeOptions};
use blowup_core::rate::{pointwise_csv, unit_interval_averages, pointwise_norms, rate_quotient, window_sensitivity, RateOptions, RateReport};
use blowup_core::similarity::{
    eval_lyapunov_family, frame_integrals, hardy_check, smallest_monotone_m, to_similarity, BallQuadrature, FunctionalSeries,
    SimilarFrame,
};
use blowup_core::wave::{self, estimate_blowup_surface, evolve, BlowupSurface, Geometry, SnapshotPlan, StopRule, SurfaceOptions, WaveField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{InitialData, RunConfig};
use crate::output::RunDir;

#[derive(Debug)]
pub enum Failure {
    /// A numerical routine gave up; `stage` names the step.
    Numerical { stage: &'static str, message: String },
    Io(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn numerical<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Numerical { stage, message: e.to_string() }
}

pub type Outcome = Result<Value, Failure>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Ode,
    Wave,
    Similarity,
    Rate,
    Duhamel,
    Pipeline,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ode => "ode",
            Experiment::Wave => "wave",
            Experiment::Similarity => "similarity",
            Experiment::Rate => "rate",
            Experiment::Duhamel => "duhamel",
            Experiment::Pipeline => "pipeline",
        }
    }

    pub fn run(self, cfg: &RunConfig, out: &mut RunDir) -> Outcome {
        match self {
            Experiment::Ode => ode(cfg, out),
            Experiment::Wave => wave(cfg, out),
            Experiment::Similarity => pipeline(cfg, out, true, false),
            Experiment::Rate => pipeline(cfg, out, false, true),
            Experiment::Duhamel => duhamel(cfg, out),
            Experiment::Pipeline => pipeline(cfg, out, true, true),
        }
    }
}

fn ode(cfg: &RunConfig, out: &mut RunDir) -> Outcome {
    let o = &cfg.ode;
    let opts = OdeOptions { rel_tol: o.rel_tol, abs_tol: o.abs_tol, ..OdeOptions::default() };
    let traj = integrate_ode(&cfg.params(), o.v0, o.v1, o.stop_amplitude, opts).map_err(numerical("ode"))?;
    out.write("trajectory.csv", trajectory_csv(&traj).map_err(numerical("ode"))?.as_bytes())?;
    let drift = traj.max_relative_drift().map_err(numerical("first integral"))?;
    let tail = asymptotic_rate_report(&traj).ok();
    if let Some(r) = &tail {
        let mut csv = String::from("t,tau,ratio,log_slope\n");
        for p in &r.points {
            csv.push_str(&csv_row(&[p.t, p.tau, p.ratio, p.log_slope.unwrap_or(f64::NAN)]));
        }
        out.write("ode_rate.csv", csv.as_bytes())?;
    }
    let summary = json!({
        "T_est": traj.blowup_time,
        "T_extrapolated": traj.blowup_time_extrapolated,
        "first_integral": traj.first_integral,
        "max_relative_drift": drift,
        "samples": traj.samples.len(),
        "final_value": traj.samples.last().map(|s| s.v),
    });
    out.write_json("ode.json", &summary)?;
    Ok(summary)
}

fn bump(x: f64, width: f64) -> f64 {
    let z = x / width;
    if z.abs() < 1.0 {
        (1.0 - z * z).powi(4)
    } else {
        0.0
    }
}

fn wave_grid(geometry: Geometry, h: f64, half_width: f64) -> UniformGrid {
    let n = (half_width / h).round() as usize;
    match geometry {
        Geometry::Line => UniformGrid::symmetric(h, n),
        Geometry::Radial3d => UniformGrid::new(0.0, h, n + 1),
    }
}

fn run_wave(cfg: &RunConfig, probes: Vec<f64>) -> Result<WaveField, Failure> {
    let w = &cfg.wave;
    let grid = wave_grid(cfg.geometry(), w.h, w.half_width);
    let (u0, u1): (Vec<f64>, Vec<f64>) = match w.data {
        InitialData::Bump => grid
            .nodes()
            .iter()
            .map(|&x| (w.amplitude * bump(x, w.width), w.velocity * bump(x, w.width)))
            .unzip(),
        InitialData::Constant => (vec![w.amplitude; grid.len], vec![w.velocity; grid.len]),
    };
    let stop = StopRule { amplitude: w.stop_amplitude, t_max: w.t_max, max_steps: w.max_steps };
    let plan = SnapshotPlan { every: w.every, growth: Some(w.growth), probes };
    evolve(&cfg.params(), cfg.geometry(), grid, &u0, &u1, w.cfl, &stop, &plan).map_err(numerical("wave"))
}

fn surface_of(cfg: &RunConfig, field: &WaveField) -> Result<BlowupSurface, Failure> {
    let opts = SurfaceOptions::new(cfg.wave.fit_window, cfg.wave.threshold);
    estimate_blowup_surface(field, &opts).map_err(numerical("blow-up surface"))
}

fn surface_csv(s: &BlowupSurface) -> String {
    let mut csv = String::from("x,T,delta0\n");
    for k in 0..s.nodes.len() {
        csv.push_str(&csv_row(&[s.nodes[k], s.t_of_x[k], s.delta0[k]]));
    }
    csv
}

fn surface_summary(s: &BlowupSurface) -> Value {
    let argmin = s.argmin();
    json!({
        "resolved_nodes": s.nodes.len(),
        "lipschitz_ok": s.lipschitz_ok,
        "x_min": argmin.map(|a| a.0),
        "T_min": argmin.map(|a| a.1),
    })
}

fn wave(cfg: &RunConfig, out: &mut RunDir) -> Outcome {
    let field = run_wave(cfg, Vec::new())?;
    out.write("snapshots.csv", field.snapshots_csv().as_bytes())?;
    let first = field.snapshots.first().map(|s| field.free_energy(s)).transpose().map_err(numerical("energy"))?;
    let last = field.snapshots.last().map(|s| field.free_energy(s)).transpose().map_err(numerical("energy"))?;
    let surface = surface_of(cfg, &field)?;
    out.write("surface.csv", surface_csv(&surface).as_bytes())?;
    let summary = json!({
        "run": wave::metadata_json(&field),
        "t_final": field.snapshots.last().map(|s| s.t),
        "free_energy_initial": first,
        "free_energy_final": last,
        "surface": surface_summary(&surface),
    });
    out.write_json("wave.json", &summary)?;
    Ok(summary)
}

/// Vertex `(node, x0, T0)`: the configured point or the earliest fitted one.
fn vertex(cfg: &RunConfig, field: &WaveField, surface: &BlowupSurface) -> Result<(usize, f64, f64), Failure> {
    let idx = match cfg.wave.x0 {
        Some(x) => field.grid.nearest(x),
        None => {
            let last_step = field.snapshots.last().map_or(0, |s| s.step);
            let hint = if field.causal_range(last_step).is_none() {
                "the final level has no causal node; wave.half_width must exceed (blow-up time)/cfl"
            } else {
                "raise wave.stop_amplitude or lower wave.threshold"
            };
            let (x, _) = surface.argmin().ok_or_else(|| Failure::Numerical {
                stage: "blow-up surface",
                message: format!("no node reached the blow-up tail; {hint}"),
            })?;
            field.grid.nearest(x)
        }
    };
    let t0 = surface.time_at_node(idx).ok_or_else(|| Failure::Numerical {
        stage: "blow-up surface",
        message: format!("blow-up time unresolved at x0 = {}", field.grid.node(idx)),
    })?;
    Ok((idx, field.grid.node(idx), t0))
}

fn s_values(cfg: &RunConfig) -> Vec<f64> {
    let s = &cfg.similarity;
    let count = ((s.s_end - s.s_start) / s.ds + 1e-9).floor() as usize + 1;
    (0..count).map(|k| s.s_start + s.ds * k as f64).collect()
}

/// Two passes: fit the surface, then rerun with exact-time levels on the
/// s-grid of the chosen vertex.
fn pipeline(cfg: &RunConfig, out: &mut RunDir, similarity: bool, rate: bool) -> Outcome {
    let first = run_wave(cfg, Vec::new())?;
    let surface = surface_of(cfg, &first)?;
    out.write("surface.csv", surface_csv(&surface).as_bytes())?;
    let (idx, x0, t0) = vertex(cfg, &first, &surface)?;
    let t_stop = first.snapshots.last().map_or(0.0, |s| s.t);
    let mut summary = json!({
        "run": wave::metadata_json(&first),
        "surface": surface_summary(&surface),
        "vertex": { "x0": x0, "T0": t0 },
    });

    if similarity {
        let s = s_values(cfg);
        let probes: Vec<f64> = s.iter().map(|s| t0 - (-s).exp()).collect();
        let latest = probes.last().copied().unwrap_or(0.0);
        if latest >= t_stop {
            return Err(Failure::Numerical {
                stage: "similarity",
                message: format!(
                    "s_end = {} needs t = {latest} but the run stopped at t = {t_stop}; raise wave.stop_amplitude or lower similarity.s_end",
                    cfg.similarity.s_end
                ),
            });
        }
        let second = run_wave(cfg, probes)?;
        let sim = similarity_outputs(cfg, &second, x0, t0, &s, out)?;
        summary["similarity"] = sim;
        if rate {
            summary["rate"] = rate_outputs(cfg, &second, &surface, idx, out)?;
        }
    } else if rate {
        summary["rate"] = rate_outputs(cfg, &first, &surface, idx, out)?;
    }
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

fn similarity_outputs(cfg: &RunConfig, field: &WaveField, x0: f64, t0: f64, s: &[f64], out: &mut RunDir) -> Outcome {
    let sc = &cfg.similarity;
    let quad = BallQuadrature::new(field.geometry.dimension(), sc.epsilon_w, sc.order).map_err(numerical("quadrature"))?;
    let frames: Vec<SimilarFrame> = s
        .iter()
        .map(|&s| to_similarity(field, x0, t0, t0 - (-s).exp(), &quad))
        .collect::<Result<_, _>>()
        .map_err(numerical("similarity transform"))?;
    let series: FunctionalSeries = eval_lyapunov_family(&frames, sc.m, sc.c_lyap).map_err(numerical("functionals"))?;
    out.write("functionals.csv", series.to_csv().as_bytes())?;

    let integrals = frames.iter().map(frame_integrals).collect::<Result<Vec<_>, _>>().map_err(numerical("functionals"))?;
    let candidates = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
    let smallest = smallest_monotone_m(&field.params, &integrals, sc.c_lyap, &candidates, sc.tail_factor)
        .map_err(numerical("functionals"))?;

    out.write("pointwise.csv", pointwise_csv(&pointwise_norms(&frames)).as_bytes())?;
    let averages = unit_interval_averages(&frames, sc.average_b).ok().filter(|a| !a.s.is_empty());
    if let Some(a) = &averages {
        out.write("averages.csv", a.to_csv().as_bytes())?;
    }

    let hardy = hardy_table(cfg, &frames)?;
    out.write("hardy.csv", hardy.0.as_bytes())?;

    let mut meta = series.metadata_json();
    let extra = json!({
        "s_window": [s[0], s[s.len() - 1]],
        "frames": frames.len(),
        "tail_factor": sc.tail_factor,
        "N_m_margin": series.n_margin(sc.tail_factor),
        "N_m_min": series.n_m.iter().copied().fold(f64::INFINITY, f64::min),
        "Ltilde_m_max_increase": series.ltilde_excess(sc.tail_factor),
        "L0_identity_gap": series.l0_identity_gap(),
        "smallest_monotone_m": smallest,
        "hardy_max_ratio": hardy.1,
        "hardy_samples": sc.hardy_samples,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    out.write_json("functionals.json", &meta)?;
    Ok(meta)
}

/// Hardy ratio on every frame, then on seeded random cosine series.
fn hardy_table(cfg: &RunConfig, frames: &[SimilarFrame]) -> Result<(String, f64), Failure> {
    let mut csv = String::from("source,s,ratio\n");
    let mut worst: f64 = 0.0;
    for f in frames {
        let r = hardy_check(f).ratio();
        worst = worst.max(r);
        csv.push_str(&format!("frame,{}", csv_row(&[f.s, r])));
    }
    let Some(first) = frames.first() else {
        return Ok((csv, worst));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for k in 0..cfg.similarity.hardy_samples {
        let modes: Vec<(f64, f64, f64)> = (0..6)
            .map(|j| {
                let c = rng.gen_range(-1.0..1.0) / (1.0 + j as f64);
                let freq = (j as f64 + 1.0) * rng.gen_range(0.5..2.0);
                (c, freq, rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let frame = SimilarFrame::from_fn(&first.params, first.s, first.quad.clone(), |y| {
            let (mut w, mut wy) = (0.0, 0.0);
            for &(c, f, ph) in &modes {
                w += c * (f * y + ph).cos();
                wy -= c * f * (f * y + ph).sin();
            }
            [w, 0.0, wy, 0.0, 0.0]
        })
        .map_err(numerical("hardy"))?;
        let r = hardy_check(&frame).ratio();
        worst = worst.max(r);
        csv.push_str(&format!("random,{}", csv_row(&[k as f64, r])));
    }
    Ok((csv, worst))
}

fn rate_outputs(cfg: &RunConfig, field: &WaveField, surface: &BlowupSurface, idx: usize, out: &mut RunDir) -> Outcome {
    let r = &cfg.rate;
    let opts = RateOptions {
        t_start: r.t_start,
        t_end: r.t_end,
        growth_factor: r.growth_factor,
        min_radius_cells: r.min_radius_cells,
    };
    let report: RateReport = rate_quotient(field, surface, idx, &opts).map_err(numerical("rate quotient"))?;
    out.write("rate.csv", report.to_csv().as_bytes())?;
    let sensitivity = window_sensitivity(field, surface, idx, &report, 0.1).ok();
    let mut json = report.to_json();
    json["spread"] = json!(report.spread());
    json["window_sensitivity"] = json!(sensitivity.map(|(k, big_k)| json!({ "k_hat": k, "K_hat": big_k })));
    out.write_json("rate.json", &json)?;
    Ok(json)
}

fn duhamel(cfg: &RunConfig, out: &mut RunDir) -> Outcome {
    let d = &cfg.duhamel;
    let params = cfg.params();
    let geometry = cfg.geometry();
    let grid = wave_grid(geometry, d.h, d.half_width);
    let (u0, u1): (Vec<f64>, Vec<f64>) = grid
        .nodes()
        .iter()
        .map(|&x| (d.amplitude * bump(x, d.width), d.velocity * bump(x, d.width)))
        .unzip();
    let opts = PicardOptions {
        levels: d.levels,
        max_iter: d.max_iter,
        tol: d.tol,
        gauss_order: d.gauss_order,
        keep_iterates: false,
    };
    let picard = picard_solve(&params, geometry, &grid, &u0, &u1, d.t0_local, &opts).map_err(numerical("picard"))?;
    out.write("contraction.csv", picard.contraction_csv().as_bytes())?;
    if !picard.converged {
        return Err(Failure::Numerical {
            stage: "picard",
            message: format!("no convergence to tol = {} within {} iterations", d.tol, d.max_iter),
        });
    }
    let mut csv = String::from("t");
    for i in 0..grid.len {
        csv.push_str(&format!(",u{i}"));
    }
    csv.push('\n');
    for (t, row) in picard.times.iter().zip(&picard.solution) {
        let mut values = vec![*t];
        values.extend_from_slice(row);
        csv.push_str(&csv_row(&values));
    }
    out.write("solution.csv", csv.as_bytes())?;

    // finite-difference cross-check on the causal interior
    let cfl = 0.5;
    let stop = StopRule { t_max: d.t0_local, ..StopRule::default() };
    let plan = SnapshotPlan { every: 1, ..SnapshotPlan::default() };
    let fd = evolve(&params, geometry, grid, &u0, &u1, cfl, &stop, &plan).map_err(numerical("finite differences"))?;
    let mut fd_diff: f64 = 0.0;
    for (t, row) in picard.times.iter().zip(&picard.solution) {
        let Some(snap) = fd.snapshots.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs())) else {
            continue;
        };
        if (snap.t - t).abs() > 1e-9 * t.max(1.0) {
            continue;
        }
        if let Some((lo, hi)) = fd.causal_range(snap.step) {
            for i in lo..=hi {
                fd_diff = fd_diff.max((snap.u[i] - row[i]).abs());
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut identity: f64 = 0.0;
    for _ in 0..100 {
        let u: f64 = rng.gen_range(-1e3..1e3);
        let lambda: f64 = rng.gen_range(-12.0f64..2.0).exp();
        let scale = lambda.powf(params.beta() * params.p);
        let lhs = h_lambda(&params, lambda, lambda.powf(params.beta()) * u);
        identity = identity.max((lhs - scale * params.f(u)).abs() / ((1.0 + params.f(u).abs()) * scale));
    }

    let summary = json!({
        "converged": picard.converged,
        "iterations": picard.iterations(),
        "max_contraction_ratio": picard.contraction_ratios.iter().copied().fold(0.0, f64::max),
        "final_sup_diff": picard.sup_diffs.last(),
        "ball_constant": picard.ball_constant,
        "fd_sup_difference": fd_diff,
        "h": d.h,
        "rescaling_identity_max_error": identity,
    });
    out.write_json("duhamel.json", &summary)?;
    Ok(summary)
}
