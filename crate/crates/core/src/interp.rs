//! Cubic reconstruction of functions sampled on uniform grids.

use serde::{Deserialize, Serialize};

/// Uniform nodes `start + i h`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub start: f64,
    pub h: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, h: f64, len: usize) -> Self {
        Self { start, h, len }
    }

    /// Grid with a node at every multiple of `h` in `[-half_len h, half_len h]`.
    pub fn symmetric(h: f64, half_len: usize) -> Self {
        Self::new(-(half_len as f64) * h, h, 2 * half_len + 1)
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.start + i as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.start) / self.h).round();
        k.clamp(0.0, (self.len - 1) as f64) as usize
    }
}

/// Continuation of a grid function to the left of node 0 (used for radial
/// profiles, which are even or odd about `r = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    None,
    Even,
    Odd,
}

// Lagrange basis on the nodes 0, 1, 2, 3 at abscissa `xi`, with derivatives.
fn lagrange4_weights(xi: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let d = [xi, xi - 1.0, xi - 2.0, xi - 3.0];
    let denom = [-6.0, 2.0, -2.0, 6.0];
    let mut w = [0.0; 4];
    let mut dw = [0.0; 4];
    let mut ddw = [0.0; 4];
    for k in 0..4 {
        let o: Vec<f64> = (0..4).filter(|&j| j != k).map(|j| d[j]).collect();
        w[k] = o[0] * o[1] * o[2] / denom[k];
        dw[k] = (o[1] * o[2] + o[0] * o[2] + o[0] * o[1]) / denom[k];
        ddw[k] = 2.0 * (o[0] + o[1] + o[2]) / denom[k];
    }
    (w, dw, ddw)
}

/// Value, first and second derivative of the local four-point cubic
/// interpolant at `x`. `None` outside the grid.
///
/// The stencil is centred on the cell containing `x` and shifted inwards at
/// the ends unless an extension supplies the missing values.
pub fn lagrange4(grid: &UniformGrid, values: &[f64], x: f64, ext: Extension) -> Option<[f64; 3]> {
    debug_assert_eq!(values.len(), grid.len);
    let n = grid.len;
    if n < 4 {
        return None;
    }
    let pos = (x - grid.start) / grid.h;
    let tol = 1e-9;
    if pos < -tol || pos > (n - 1) as f64 + tol {
        return None;
    }
    let cell = (pos.floor() as isize).clamp(0, n as isize - 2);
    let mut first = cell - 1;
    if first < 0 && ext == Extension::None {
        first = 0;
    }
    if first + 3 > n as isize - 1 {
        first = n as isize - 4;
    }
    let fetch = |j: isize| -> f64 {
        if j >= 0 {
            values[j as usize]
        } else {
            let v = values[(-j) as usize];
            if ext == Extension::Odd {
                -v
            } else {
                v
            }
        }
    };
    let (w, dw, ddw) = lagrange4_weights(pos - first as f64);
    let mut out = [0.0; 3];
    for k in 0..4 {
        let v = fetch(first + k as isize);
        out[0] += w[k] * v;
        out[1] += dw[k] * v;
        out[2] += ddw[k] * v;
    }
    out[1] /= grid.h;
    out[2] /= grid.h * grid.h;
    Some(out)
}

/// Second-order central first derivative at every node.
///
/// `ext` is the continuation of `values` below node 0. With an even
/// extension the derivative vanishes there; otherwise
/// the ends use one-sided second-order differences.
pub fn central_gradient(grid: &UniformGrid, values: &[f64], ext: Extension) -> Vec<f64> {
    let n = values.len();
    let h = grid.h;
    let mut out = vec![0.0; n];
    if n < 3 {
        return out;
    }
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    out[0] = match ext {
        Extension::Even => 0.0,
        Extension::Odd => values[1] / h,
        Extension::None => (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h),
    };
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    out
}

/// Second-order central second derivative at every node.
pub fn central_second(grid: &UniformGrid, values: &[f64], ext: Extension) -> Vec<f64> {
    let n = values.len();
    let h2 = grid.h * grid.h;
    let mut out = vec![0.0; n];
    if n < 4 {
        return out;
    }
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h2;
    }
    out[0] = match ext {
        Extension::Even => 2.0 * (values[1] - values[0]) / h2,
        Extension::Odd => 0.0,
        Extension::None => (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h2,
    };
    out[n - 1] =
        (2.0 * values[n - 1] - 5.0 * values[n - 2] + 4.0 * values[n - 3] - values[n - 4]) / h2;
    out
}

/// Catmull-Rom cubic Hermite interpolant, continued by zero outside the grid,
/// with exact integrals over arbitrary intervals.
#[derive(Debug, Clone)]
pub struct CatmullRom {
    grid: UniformGrid,
    values: Vec<f64>,
    slopes: Vec<f64>,
    // prefix[i] = integral from the first node to node i
    prefix: Vec<f64>,
}

impl CatmullRom {
    pub fn new(grid: UniformGrid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len, values.len(), "values must match the grid");
        let n = values.len();
        let h = grid.h;
        let at = |i: isize| -> f64 {
            if i < 0 || i >= n as isize {
                0.0
            } else {
                values[i as usize]
            }
        };
        let slopes: Vec<f64> = (0..n as isize)
            .map(|i| (at(i + 1) - at(i - 1)) / (2.0 * h))
            .collect();
        let mut prefix = vec![0.0; n];
        for i in 1..n {
            let cell = h * (0.5 * (values[i - 1] + values[i]) + h * (slopes[i - 1] - slopes[i]) / 12.0);
            prefix[i] = prefix[i - 1] + cell;
        }
        Self {
            grid,
            values,
            slopes,
            prefix,
        }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    fn cell(&self, x: f64) -> Option<(usize, f64)> {
        let pos = (x - self.grid.start) / self.grid.h;
        let last = (self.grid.len - 1) as f64;
        if !(0.0..=last).contains(&pos) {
            return None;
        }
        let i = (pos.floor() as usize).min(self.grid.len - 2);
        Some((i, pos - i as f64))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let Some((i, t)) = self.cell(x) else {
            return 0.0;
        };
        let h = self.grid.h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.values[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.values[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let Some((i, t)) = self.cell(x) else {
            return 0.0;
        };
        let h = self.grid.h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.values[i]
            + (3.0 * t2 - 4.0 * t + 1.0) * h * self.slopes[i]
            + (-6.0 * t2 + 6.0 * t) * self.values[i + 1]
            + (3.0 * t2 - 2.0 * t) * h * self.slopes[i + 1])
            / h
    }

    // Integral from the first node to x (x clamped to the grid).
    fn antiderivative(&self, x: f64) -> f64 {
        if x <= self.grid.start {
            return 0.0;
        }
        if x >= self.grid.end() {
            return self.prefix[self.grid.len - 1];
        }
        let (i, t) = self.cell(x).expect("x is inside the grid");
        let h = self.grid.h;
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t2 * t2;
        let partial = h
            * ((0.5 * t4 - t3 + t) * self.values[i]
                + (0.25 * t4 - 2.0 * t3 / 3.0 + 0.5 * t2) * h * self.slopes[i]
                + (-0.5 * t4 + t3) * self.values[i + 1]
                + (0.25 * t4 - t3 / 3.0) * h * self.slopes[i + 1]);
        self.prefix[i] + partial
    }

    /// Exact integral of the interpolant over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}
