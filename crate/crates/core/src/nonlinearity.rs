//! The loglog-perturbed power nonlinearity and every scalar function derived
//! from it.
//!
//! With `L(u) = ln(10 + u^2)` the model nonlinearity is
//! `f(u) = |u|^{p-1} u g(u)` where `g(u) = ln^a(L(u))`. The potential
//! `F(x) = \int_0^x f` has no closed form when `a != 0`; it is evaluated as
//! `F(x) = |x|^{p+1} I(|x|)` with `I(X) = \int_0^1 t^p g(X t) dt`, which keeps
//! the quadrature on a fixed interval and makes a log-space variant free.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadOptions};

/// Relative tolerance used for the potential quadratures.
pub const POTENTIAL_REL_TOL: f64 = 1e-10;

/// Model parameters: exponent `p`, loglog power `a`, spatial dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: f64,
    pub a: f64,
    pub n: usize,
}

impl ModelParams {
    /// Validated constructor; rejects exponents outside the subconformal range.
    pub fn new(p: f64, a: f64, n: usize) -> Result<Self> {
        let params = Self::new_unrestricted(p, a, n)?;
        if !params.is_subconformal() {
            return Err(Error::param(
                "p",
                format!(
                    "p = {p} is not subconformal for N = {n} (need p < {})",
                    (n as f64 + 3.0) / (n as f64 - 1.0)
                ),
            ));
        }
        Ok(params)
    }

    /// Accepts any `p > 1` and `n >= 1`, skipping the subconformal check.
    pub fn new_unrestricted(p: f64, a: f64, n: usize) -> Result<Self> {
        if !p.is_finite() || p <= 1.0 {
            return Err(Error::param("p", format!("need p > 1, got {p}")));
        }
        if !a.is_finite() {
            return Err(Error::param("a", format!("need a finite, got {a}")));
        }
        if n == 0 {
            return Err(Error::param("n", "dimension must be at least 1"));
        }
        Ok(Self { p, a, n })
    }

    pub fn is_subconformal(&self) -> bool {
        self.n < 2 || self.p < (self.n as f64 + 3.0) / (self.n as f64 - 1.0)
    }

    /// Exponent of the similarity weight `rho(y) = (1 - |y|^2)^alpha`.
    pub fn alpha(&self) -> f64 {
        2.0 / (self.p - 1.0) - (self.n as f64 - 1.0) / 2.0
    }

    /// Pure-power blow-up exponent `2/(p-1)`.
    pub fn beta(&self) -> f64 {
        2.0 / (self.p - 1.0)
    }

    /// `ln(10 + u^2)`, accurate for any finite `u`.
    pub fn log_shift(u: f64) -> f64 {
        let au = u.abs();
        if au > 1e150 {
            2.0 * au.ln() + (10.0 / au / au).ln_1p()
        } else {
            (10.0 + u * u).ln()
        }
    }

    /// `ln(ln(10 + u^2))`; always at least `ln(ln 10) > 0`.
    pub fn loglog(u: f64) -> f64 {
        Self::log_shift(u).ln()
    }

    /// `g(u) = ln^a(ln(10 + u^2))`.
    pub fn g(&self, u: f64) -> f64 {
        if self.a == 0.0 {
            return 1.0;
        }
        powr(Self::loglog(u), self.a)
    }

    /// `f(u) = |u|^{p-1} u g(u)`.
    pub fn f(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        powr(u.abs(), self.p - 1.0) * u * self.g(u)
    }

    /// `F(x) / |x|^{p+1} = \int_0^1 t^p g(|x| t) dt`.
    pub fn potential_scaled(&self, x: f64) -> Result<f64> {
        let inv = 1.0 / (self.p + 1.0);
        if self.a == 0.0 || x == 0.0 {
            return Ok(inv * if x == 0.0 { self.g(0.0) } else { 1.0 });
        }
        let ax = x.abs();
        let p = self.p;
        let r = integrate(
            |t| powr(t, p) * self.g(ax * t),
            0.0,
            1.0,
            QuadOptions::with_rel_tol(POTENTIAL_REL_TOL),
        )?;
        Ok(r.value)
    }

    /// Potential `F(x) = \int_0^x f`.
    pub fn potential(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(powr(x.abs(), self.p + 1.0) * self.potential_scaled(x)?)
    }

    /// `ln F(x)` for `x != 0`, usable far beyond the overflow threshold of `F`.
    pub fn potential_ln(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok((self.p + 1.0) * x.abs().ln() + self.potential_scaled(x)?.ln())
    }

    /// First correction in the expansion of `F`:
    /// `-(2a/(p+1)^2) |x|^{p+1} ln^{a-1}(L(x)) / L(x)`.
    pub fn potential_f1(&self, x: f64) -> f64 {
        if self.a == 0.0 || x == 0.0 {
            return 0.0;
        }
        powr(x.abs(), self.p + 1.0) * self.f1_scaled(x)
    }

    fn f1_scaled(&self, x: f64) -> f64 {
        let l = Self::log_shift(x);
        -2.0 * self.a / (self.p + 1.0).powi(2) * powr(l.ln(), self.a - 1.0) / l
    }

    /// `F2(x) / |x|^{p+1}`.
    ///
    /// Integrating by parts gives `F = x f/(p+1) - R` with
    /// `R(x) = (2a/(p+1)) \int_0^{|x|} t^{p+2} ln^{a-1}(L) / (L (10 + t^2)) dt`,
    /// so `F2 = -R - F1` is computed without subtracting two copies of `F`.
    pub fn potential_f2_scaled(&self, x: f64) -> Result<f64> {
        if self.a == 0.0 || x == 0.0 {
            return Ok(0.0);
        }
        let ax = x.abs();
        let (p, a) = (self.p, self.a);
        let r = integrate(
            |t| {
                let y = ax * t;
                let l = Self::log_shift(y);
                powr(t, p + 2.0) * (ax * ax / (10.0 + y * y)) * powr(l.ln(), a - 1.0) / l
            },
            0.0,
            1.0,
            QuadOptions::with_rel_tol(POTENTIAL_REL_TOL),
        )?;
        let remainder = 2.0 * a / (p + 1.0) * r.value;
        Ok(-remainder - self.f1_scaled(x))
    }

    /// Remainder `F2 = F - x f(x)/(p+1) - F1`.
    pub fn potential_f2(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(powr(x.abs(), self.p + 1.0) * self.potential_f2_scaled(x)?)
    }

    /// Similarity amplitude `phi(s) = e^{2s/(p-1)} ln(s)^{-a/(p-1)}`, `s > 1`.
    pub fn phi(&self, s: f64) -> Result<f64> {
        Ok(self.phi_ln(s)?.exp())
    }

    pub fn phi_ln(&self, s: f64) -> Result<f64> {
        check_similarity_time("phi", s)?;
        Ok(self.beta() * s - self.a / (self.p - 1.0) * s.ln().ln())
    }

    /// Coefficient of the zeroth-order term generated by the log correction.
    pub fn gamma(&self, s: f64) -> Result<f64> {
        check_similarity_time("gamma", s)?;
        if self.a == 0.0 {
            return Ok(0.0);
        }
        let (p, a) = (self.p, self.a);
        let l = s.ln();
        let pm1 = p - 1.0;
        Ok(a * (p + 3.0) / (pm1 * pm1 * s * l)
            - a * (a + pm1) / (pm1 * pm1 * s * s * l * l)
            - a / (pm1 * l * s * s))
    }

    /// Blow-up envelope `psi_{T0}(t) = tau^{-2/(p-1)} ln^{-a/(p-1)}(-ln tau)`,
    /// `tau = T0 - t` in `(0, 1/e)`.
    pub fn psi(&self, t0: f64, t: f64) -> Result<f64> {
        Ok(self.psi_ln(t0, t)?.exp())
    }

    pub fn psi_ln(&self, t0: f64, t: f64) -> Result<f64> {
        let tau = t0 - t;
        if !(tau > 0.0 && tau < (-1.0f64).exp()) {
            return Err(Error::domain(
                "psi",
                format!("T0 - t = {tau:e} must lie in (0, 1/e)"),
            ));
        }
        let s = -tau.ln();
        Ok(self.beta() * s - self.a / (self.p - 1.0) * s.ln().ln())
    }
}

fn check_similarity_time(function: &'static str, s: f64) -> Result<()> {
    if s > 1.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(function, format!("need s > 1, got {s}")))
    }
}

/// `x^e` for `x >= 0`, using integer powers when `e` is integral.
#[inline]
pub(crate) fn powr(x: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() < 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// Ratios probing the large-amplitude behaviour of `F` and `F2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmplitudeRatio {
    pub u: f64,
    /// `F(u) / (|u|^{p+1} g(u))`.
    pub potential_ratio: f64,
    /// `|F2(u)| / (|u|^{p+1} ln^{a-1}(L) / L^2)`.
    pub remainder_ratio: f64,
    pub potential_in_bracket: bool,
    pub remainder_in_bracket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticBoundsReport {
    pub rows: Vec<AmplitudeRatio>,
    pub potential_bracket: (f64, f64),
    pub remainder_bracket: (f64, f64),
    pub all_potential_in_bracket: bool,
    pub all_remainder_in_bracket: bool,
}

/// Default amplitude threshold above which the asymptotic estimates are probed.
pub const DEFAULT_AMPLITUDE_THRESHOLD: f64 = 10.0;

/// Evaluates the two large-amplitude ratios on `u_grid` and checks them
/// against the supplied brackets. All ratios are formed in scaled form, so
/// amplitudes far above the overflow threshold of `F` are fine.
pub fn check_asymptotic_bounds(
    params: &ModelParams,
    u_grid: &[f64],
    u_min: f64,
    potential_bracket: (f64, f64),
    remainder_bracket: (f64, f64),
) -> Result<AsymptoticBoundsReport> {
    let mut rows = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        if !(u.abs() >= u_min) {
            return Err(Error::domain(
                "check_asymptotic_bounds",
                format!("|u| = {} is below the threshold {u_min}", u.abs()),
            ));
        }
        let potential_ratio = params.potential_scaled(u)? / params.g(u);
        let l = ModelParams::log_shift(u);
        let majorant = powr(l.ln(), params.a - 1.0) / (l * l);
        let remainder_ratio = params.potential_f2_scaled(u)?.abs() / majorant;
        rows.push(AmplitudeRatio {
            u,
            potential_ratio,
            remainder_ratio,
            potential_in_bracket: within(potential_ratio, potential_bracket),
            remainder_in_bracket: within(remainder_ratio, remainder_bracket),
        });
    }
    Ok(AsymptoticBoundsReport {
        all_potential_in_bracket: rows.iter().all(|r| r.potential_in_bracket),
        all_remainder_in_bracket: rows.iter().all(|r| r.remainder_in_bracket),
        rows,
        potential_bracket,
        remainder_bracket,
    })
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn admissibility() {
        assert!(ModelParams::new(3.0, 1.0, 1).is_ok());
        assert!(ModelParams::new(2.9, 1.0, 3).is_ok());
        assert!(ModelParams::new(3.0, 1.0, 3).is_err());
        assert!(ModelParams::new(5.0, 0.0, 2).is_err());
        assert!(ModelParams::new_unrestricted(5.0, 0.0, 2).is_ok());
        assert!(ModelParams::new(1.0, 0.0, 1).is_err());
        assert!(ModelParams::new(3.0, 0.0, 0).is_err());
        let m = ModelParams::new(2.5, 0.0, 3).unwrap();
        assert!(m.alpha() > 0.0);
    }

    #[test]
    fn g_values() {
        let m = ModelParams::new(3.0, 0.0, 1).unwrap();
        assert_eq!(m.g(7.0), 1.0);
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        assert!(close(m.g(0.0), 10f64.ln().ln(), 1e-15));
        assert!((m.g(0.0) - 0.834032).abs() < 1e-6);
        let m = ModelParams::new(3.0, -2.0, 1).unwrap();
        assert!((m.g(0.0) - 1.437587).abs() < 1e-6);
    }

    #[test]
    fn f_values() {
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        assert_eq!(m.f(0.0), 0.0);
        assert!((m.f(1.0) - 0.874591).abs() < 1e-6);
        let m0 = ModelParams::new(3.0, 0.0, 1).unwrap();
        assert_eq!(m0.f(2.0), 8.0);
    }

    #[test]
    fn potential_closed_forms() {
        let m0 = ModelParams::new(3.0, 0.0, 1).unwrap();
        assert_eq!(m0.potential(0.0).unwrap(), 0.0);
        assert!(close(m0.potential(2.0).unwrap(), 4.0, 1e-14));
        assert_eq!(m0.potential_f1(5.0), 0.0);
        assert_eq!(m0.potential_f2(2.0).unwrap(), 0.0);
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        assert!((m.potential_f1(1.0) + 0.125 / 11f64.ln()).abs() < 1e-15);
        assert!((m.potential_f1(1.0) + 0.052129).abs() < 1e-6);
        assert_eq!(m.potential_f1(0.0), 0.0);
        assert_eq!(m.potential_f2(0.0).unwrap(), 0.0);
    }

    #[test]
    fn large_amplitude_log_space() {
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        let x = 1e200;
        assert!(m.potential(x).unwrap().is_infinite());
        let ln = m.potential_ln(x).unwrap();
        assert!(ln.is_finite());
        // F ~ x^4 g(x) / 4 up to a relative O(1/L) correction.
        let lead = 4.0 * x.ln() + m.g(x).ln() - 4f64.ln();
        assert!((ln - lead).abs() < 0.01, "{ln} vs {lead}");
    }

    #[test]
    fn phi_values() {
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        assert!(close(m.phi(E).unwrap(), E.exp(), 1e-14));
        assert!((m.phi(E).unwrap() - 15.15426).abs() < 1e-5);
        let m0 = ModelParams::new(3.0, 0.0, 1).unwrap();
        assert!(close(m0.phi(2.0).unwrap(), 2f64.exp(), 1e-15));
        let m5 = ModelParams::new(5.0, 2.0, 1).unwrap();
        let expected = (E * E / 2.0).exp() / 2f64.sqrt();
        assert!(close(m5.phi(E * E).unwrap(), expected, 1e-14));
        assert!(m.phi(1.0).is_err());
        assert!(m.phi(0.5).is_err());
    }

    #[test]
    fn gamma_values() {
        let m0 = ModelParams::new(3.0, 0.0, 1).unwrap();
        assert_eq!(m0.gamma(10.0).unwrap(), 0.0);
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        let expected = 6.0 / (4.0 * E) - 3.0 / (4.0 * E * E) - 1.0 / (2.0 * E * E);
        assert!(close(m.gamma(E).unwrap(), expected, 1e-14));
        assert!((m.gamma(E).unwrap() - 0.382650).abs() < 1e-6);
        assert!(m.gamma(1.0).is_err());
        // decays like 1/(s ln s)
        let mut prev = f64::INFINITY;
        for s in [1e2, 1e4, 1e6] {
            let gam = m.gamma(s).unwrap();
            assert!(gam > 0.0 && gam < prev);
            let lead = 6.0 / (4.0 * s * s.ln());
            assert!((gam / lead - 1.0).abs() < 0.05);
            prev = gam;
        }
    }

    #[test]
    fn psi_values() {
        let m0 = ModelParams::new(3.0, 0.0, 1).unwrap();
        assert!(close(m0.psi(1.0, 0.99).unwrap(), 100.0, 1e-10));
        let m = ModelParams::new(3.0, 1.0, 1).unwrap();
        let tau = (-E).exp();
        assert!(close(m.psi(tau, 0.0).unwrap(), E.exp(), 1e-13));
        let m2 = ModelParams::new(3.0, 2.0, 1).unwrap();
        let tau = (-E * E).exp();
        assert!(close(m2.psi(tau, 0.0).unwrap(), (E * E).exp() / 2.0, 1e-13));
        assert!(m.psi(1.0, 1.0).is_err());
        assert!(m.psi(1.0, 0.5).is_err());
        assert!(m.psi(1.0, 1.5).is_err());
    }

    #[test]
    fn asymptotic_report_pure_power() {
        let m0 = ModelParams::new(3.0, 0.0, 1).unwrap();
        let rep = check_asymptotic_bounds(&m0, &[100.0], 10.0, (0.2, 0.3), (0.0, 1.0)).unwrap();
        assert!(close(rep.rows[0].potential_ratio, 0.25, 1e-15));
        assert_eq!(rep.rows[0].remainder_ratio, 0.0);
        assert!(rep.all_potential_in_bracket && rep.all_remainder_in_bracket);
        assert!(check_asymptotic_bounds(&m0, &[1.0], 10.0, (0.0, 1.0), (0.0, 1.0)).is_err());
    }
}
