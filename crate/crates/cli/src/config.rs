//! Run configuration: TOML sections, `key=value` overrides and range checks.

use std::fmt;
use std::path::Path;

use blowup_core::wave::Geometry;
use blowup_core::ModelParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub ode: OdeSection,
    pub wave: WaveSection,
    pub similarity: SimilaritySection,
    pub rate: RateSection,
    pub duhamel: DuhamelSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub p: f64,
    pub a: f64,
    /// 1 (line) or 3 (radial).
    pub dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSection {
    pub v0: f64,
    pub v1: f64,
    pub stop_amplitude: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// `amplitude (1 - (x/width)²)⁴` with velocity `velocity` times the same bump.
    Bump,
    /// `u0 = amplitude`, `u1 = velocity` everywhere.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSection {
    pub h: f64,
    pub half_width: f64,
    pub cfl: f64,
    pub stop_amplitude: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub data: InitialData,
    pub amplitude: f64,
    pub width: f64,
    pub velocity: f64,
    /// Store a level whenever `max|u|` grew by `1 + growth`.
    pub growth: f64,
    /// Also store every `every` steps.
    pub every: usize,
    pub fit_window: usize,
    pub threshold: f64,
    /// Vertex; `None` picks the earliest fitted blow-up point.
    pub x0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilaritySection {
    pub epsilon_w: f64,
    pub order: usize,
    pub m: f64,
    pub c_lyap: f64,
    pub tail_factor: f64,
    pub s_start: f64,
    pub s_end: f64,
    pub ds: f64,
    pub hardy_samples: usize,
    /// `b` of the averaged norm `∫ (w² + |∇w|² + ws²)` / (s lnᵇ⁺¹ s).
    pub average_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub growth_factor: f64,
    pub min_radius_cells: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuhamelSection {
    pub h: f64,
    pub half_width: f64,
    pub t0_local: f64,
    pub levels: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub gauss_order: usize,
    pub amplitude: f64,
    pub width: f64,
    pub velocity: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelSection::default(),
            ode: OdeSection::default(),
            wave: WaveSection::default(),
            similarity: SimilaritySection::default(),
            rate: RateSection::default(),
            duhamel: DuhamelSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { p: 3.0, a: 1.0, dimension: 1 }
    }
}

impl Default for OdeSection {
    fn default() -> Self {
        Self {
            v0: 1.0,
            v1: 1.0,
            stop_amplitude: 1e6,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
        }
    }
}

impl Default for WaveSection {
    fn default() -> Self {
        Self {
            h: 2e-4,
            half_width: 1.0,
            cfl: 0.9,
            stop_amplitude: 600.0,
            t_max: 10.0,
            max_steps: 10_000_000,
            data: InitialData::Bump,
            amplitude: 3.0,
            width: 1.0,
            velocity: 0.0,
            growth: 0.05,
            every: 1_000_000,
            fit_window: 12,
            threshold: 30.0,
            x0: None,
        }
    }
}

impl Default for SimilaritySection {
    fn default() -> Self {
        Self {
            epsilon_w: 1e-3,
            order: 8,
            m: 10.0,
            c_lyap: 10.0,
            tail_factor: 10.0,
            s_start: 2.5,
            s_end: 5.5,
            ds: 0.05,
            hardy_samples: 100,
            average_b: 1.0,
        }
    }
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            t_start: None,
            t_end: None,
            growth_factor: 10.0,
            min_radius_cells: 4.0,
        }
    }
}

impl Default for DuhamelSection {
    fn default() -> Self {
        Self {
            h: 0.01,
            half_width: 3.0,
            t0_local: 0.5,
            levels: 25,
            max_iter: 60,
            tol: 1e-8,
            gauss_order: 4,
            amplitude: 0.3,
            width: 0.6,
            velocity: 0.2,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the defaults), applies `key=value` overrides, then
    /// validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.message().to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> ModelParams {
        // validated
        ModelParams::new(self.model.p, self.model.a, self.model.dimension).expect("validated model")
    }

    pub fn geometry(&self) -> Geometry {
        if self.model.dimension == 3 {
            Geometry::Radial3d
        } else {
            Geometry::Line
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.dimension != 1 && m.dimension != 3 {
            return Err(bad("model.dimension", format!("must be 1 or 3, got {}", m.dimension)));
        }
        ModelParams::new(m.p, m.a, m.dimension).map_err(|e| bad("model.p", e))?;
        if !m.a.is_finite() {
            return Err(bad("model.a", "must be finite"));
        }

        let o = &self.ode;
        positive("ode.stop_amplitude", o.stop_amplitude)?;
        positive("ode.rel_tol", o.rel_tol)?;
        positive("ode.abs_tol", o.abs_tol)?;
        finite("ode.v0", o.v0)?;
        finite("ode.v1", o.v1)?;

        let w = &self.wave;
        positive("wave.h", w.h)?;
        positive("wave.half_width", w.half_width)?;
        let max_cfl = self.geometry().max_cfl();
        if !(w.cfl > 0.0 && w.cfl <= max_cfl) {
            return Err(bad("wave.cfl", format!("must lie in (0, {max_cfl}], got {}", w.cfl)));
        }
        if w.half_width / w.h > 5e6 {
            return Err(bad("wave.h", "grid exceeds 10⁷ nodes"));
        }
        positive("wave.stop_amplitude", w.stop_amplitude)?;
        if !(w.t_max > 0.0) {
            return Err(bad("wave.t_max", format!("must be positive, got {}", w.t_max)));
        }
        if w.max_steps == 0 {
            return Err(bad("wave.max_steps", "must be at least 1"));
        }
        positive("wave.width", w.width)?;
        finite("wave.amplitude", w.amplitude)?;
        finite("wave.velocity", w.velocity)?;
        positive("wave.growth", w.growth)?;
        if w.every == 0 {
            return Err(bad("wave.every", "must be at least 1"));
        }
        if w.fit_window < 3 {
            return Err(bad("wave.fit_window", format!("need at least 3 records, got {}", w.fit_window)));
        }
        positive("wave.threshold", w.threshold)?;
        if let Some(x0) = w.x0 {
            let lo = if self.geometry() == Geometry::Radial3d { 0.0 } else { -w.half_width };
            if !(x0 >= lo && x0 <= w.half_width) {
                return Err(bad("wave.x0", format!("{x0} lies outside the grid [{lo}, {}]", w.half_width)));
            }
        }

        let s = &self.similarity;
        if !(s.epsilon_w > 0.0 && s.epsilon_w < 0.5) {
            return Err(bad("similarity.epsilon_w", format!("must lie in (0, 0.5), got {}", s.epsilon_w)));
        }
        if s.order == 0 || s.order > 64 {
            return Err(bad("similarity.order", format!("must lie in 1..=64, got {}", s.order)));
        }
        positive("similarity.m", s.m)?;
        positive("similarity.c_lyap", s.c_lyap)?;
        if !(s.tail_factor >= 0.0) {
            return Err(bad("similarity.tail_factor", "must be nonnegative"));
        }
        if !(s.s_start > 1.0) {
            return Err(bad("similarity.s_start", format!("need s > 1 (ln s > 0), got {}", s.s_start)));
        }
        if !(s.s_end > s.s_start) {
            return Err(bad("similarity.s_end", format!("must exceed s_start = {}, got {}", s.s_start, s.s_end)));
        }
        if !(s.ds > 0.0 && s.ds <= 0.5 * (s.s_end - s.s_start)) {
            return Err(bad("similarity.ds", format!("must lie in (0, (s_end - s_start)/2], got {}", s.ds)));
        }
        if s.hardy_samples == 0 {
            return Err(bad("similarity.hardy_samples", "must be at least 1"));
        }
        finite("similarity.average_b", s.average_b)?;

        let r = &self.rate;
        if !(r.growth_factor > 1.0) {
            return Err(bad("rate.growth_factor", format!("must exceed 1, got {}", r.growth_factor)));
        }
        positive("rate.min_radius_cells", r.min_radius_cells)?;
        if let (Some(a), Some(b)) = (r.t_start, r.t_end) {
            if !(b > a) {
                return Err(bad("rate.t_end", format!("must exceed rate.t_start = {a}, got {b}")));
            }
        }

        let d = &self.duhamel;
        positive("duhamel.h", d.h)?;
        positive("duhamel.half_width", d.half_width)?;
        positive("duhamel.t0_local", d.t0_local)?;
        if d.levels < 2 {
            return Err(bad("duhamel.levels", format!("need at least 2 levels, got {}", d.levels)));
        }
        if d.max_iter == 0 {
            return Err(bad("duhamel.max_iter", "must be at least 1"));
        }
        positive("duhamel.tol", d.tol)?;
        if !(1..=16).contains(&d.gauss_order) {
            return Err(bad("duhamel.gauss_order", format!("must lie in 1..=16, got {}", d.gauss_order)));
        }
        positive("duhamel.width", d.width)?;
        finite("duhamel.amplitude", d.amplitude)?;
        finite("duhamel.velocity", d.velocity)?;
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be finite, got {v}")))
    }
}

/// `section.key=value`; the value is read as a TOML literal, falling back
/// to a bare string.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{item}`: expected key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("override `{item}`: malformed key")));
    }
    let mut cursor = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override `{item}`: `{part}` is not a section")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
