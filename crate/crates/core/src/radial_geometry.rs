//! Torus-invariant Kähler potentials on the sphere.
//!
//! A potential is stored on the moment side as a smooth correction `f` on
//! [0, 1], the full symplectic potential being
//! `u(x) = x log x + (1 - x) log(1 - x) + f(x)`. The complex side is the
//! convex function `ψ(s)` on the logarithmic coordinate `s = log|z|^2`,
//! related to `u` by the Legendre transform. Areas are normalised to one, so
//! the moment map pushes the metric area forward to Lebesgue measure.

use crate::error::{Error, Result};
use crate::numerics::{
    gregory_weights, hermite5, integrate_uniform, logistic, logit, softplus, uniform_derivatives,
    UniformGrid,
};

pub const DEFAULT_NX: usize = 512;
pub const DEFAULT_NS: usize = 2048;
pub const DEFAULT_S_MAX: f64 = 18.0;

/// Metric factors below this are treated as degenerate.
pub const DEGENERACY_FLOOR: f64 = 1e-10;

/// Below this density the s-side fourth derivatives are dominated by
/// rounding; curvature integrals switch to the boundary-flux tail there.
pub const RELIABLE_DENSITY: f64 = 1e-7;

/// Reference potential `ψ₀(s) = log(1 + e^s)` and its first four derivatives.
pub fn reference_jet(s: f64) -> [f64; 5] {
    let p = logistic(s);
    let q = p * (1.0 - p);
    [
        softplus(s),
        p,
        q,
        q * (1.0 - 2.0 * p),
        q * (1.0 - 6.0 * p + 6.0 * p * p),
    ]
}

/// Inverse metric `w = 1/u''` and its first two x-derivatives, from the
/// local curvature jet `(f'', f''', f'''')` of the correction.
pub fn inverse_metric_jet(x: f64, g: [f64; 3]) -> [f64; 3] {
    let q = x * (1.0 - x);
    let q1 = 1.0 - 2.0 * x;
    let q2 = -2.0;
    let n = 1.0 + q * g[0];
    let n1 = q1 * g[0] + q * g[1];
    let n2 = q2 * g[0] + 2.0 * q1 * g[1] + q * g[2];
    let w = q / n;
    let w1 = (q1 * n - q * n1) / (n * n);
    let w2 = q2 / n - 2.0 * q1 * n1 / (n * n) - q * n2 / (n * n) + 2.0 * q * n1 * n1 / (n * n * n);
    [w, w1, w2]
}

/// Symplectic potential on a uniform grid of [0, 1].
///
/// Holds the correction `f` together with its first four derivatives at
/// every node. Potentials built from closed forms carry exact derivatives;
/// potentials built from samples get them from 9-point stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticPotential {
    grid: UniformGrid,
    jet: [Vec<f64>; 5],
}

impl SymplecticPotential {
    /// From sampled correction values on the uniform grid of [0, 1].
    pub fn from_values(f: Vec<f64>) -> Result<Self> {
        let grid = UniformGrid::new(0.0, 1.0, f.len())?;
        let [d1, d2, d3, d4] = uniform_derivatives(&f, grid.step())?;
        Self::from_parts(grid, [f, d1, d2, d3, d4])
    }

    /// From a closure returning `(f, f', f'', f''', f'''')` at x.
    pub fn from_jet<F: Fn(f64) -> [f64; 5]>(n: usize, jet: F) -> Result<Self> {
        let grid = UniformGrid::new(0.0, 1.0, n)?;
        let mut arrays: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(n));
        for x in grid.nodes() {
            let j = jet(x);
            for (a, v) in arrays.iter_mut().zip(j) {
                a.push(v);
            }
        }
        Self::from_parts(grid, arrays)
    }

    /// The round metric, `f ≡ 0`.
    pub fn round(n: usize) -> Result<Self> {
        Self::from_jet(n, |_| [0.0; 5])
    }

    fn from_parts(grid: UniformGrid, jet: [Vec<f64>; 5]) -> Result<Self> {
        let u = Self { grid, jet };
        u.validate()?;
        Ok(u)
    }

    fn validate(&self) -> Result<()> {
        for a in &self.jet {
            if a.len() != self.grid.n {
                return Err(Error::ShapeMismatch {
                    expected: self.grid.n,
                    got: a.len(),
                });
            }
            if let Some(index) = a.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        for i in 1..self.grid.n - 1 {
            let n = self.metric_factor(i);
            if n <= DEGENERACY_FLOOR {
                return Err(Error::NotConvex {
                    index: i,
                    value: n / self.q(i),
                });
            }
        }
        Ok(())
    }

    fn q(&self, i: usize) -> f64 {
        let x = self.grid.node(i);
        x * (1.0 - x)
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.n
    }

    pub fn is_empty(&self) -> bool {
        self.grid.n == 0
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    pub fn step(&self) -> f64 {
        self.grid.step()
    }

    /// Derivative of order `k` (0..=4) of the correction at every node.
    pub fn derivative(&self, k: usize) -> &[f64] {
        &self.jet[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.jet[0]
    }

    /// `x(1-x) u''(x) = 1 + x(1-x) f''(x)`; positive exactly when u'' > 0.
    pub fn metric_factor(&self, i: usize) -> f64 {
        1.0 + self.q(i) * self.jet[2][i]
    }

    pub fn min_metric_factor(&self) -> f64 {
        (0..self.grid.n)
            .map(|i| self.metric_factor(i))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest |f''| on the grid (C² proxy).
    pub fn max_abs_second(&self) -> f64 {
        self.jet[2].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Full symplectic potential `u(x)` at node i (Guillemin term included).
    pub fn full_value(&self, i: usize) -> f64 {
        let x = self.grid.node(i);
        guillemin(x) + self.jet[0][i]
    }

    /// `(f, f', f'')` at an arbitrary x by quintic Hermite interpolation.
    pub fn eval(&self, x: f64) -> [f64; 3] {
        self.interpolate(0, x)
    }

    /// `(f'', f''', f'''')` at an arbitrary x.
    pub fn eval_curvature(&self, x: f64) -> [f64; 3] {
        self.interpolate(2, x)
    }

    fn interpolate(&self, base: usize, x: f64) -> [f64; 3] {
        let (i, t) = self.grid.locate(x);
        let pick = |j: usize| {
            [
                self.jet[base][j],
                self.jet[base + 1][j],
                self.jet[base + 2][j],
            ]
        };
        hermite5(pick(i), pick(i + 1), self.grid.step(), t)
    }

    /// `(w, w', w'')` with `w = 1/u''` at node i.
    pub fn inverse_metric(&self, i: usize) -> [f64; 3] {
        let x = self.grid.node(i);
        inverse_metric_jet(x, [self.jet[2][i], self.jet[3][i], self.jet[4][i]])
    }

    /// `a·self + b·other` on the same grid, followed by validation.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if other.grid != self.grid {
            return Err(Error::ShapeMismatch {
                expected: self.grid.n,
                got: other.grid.n,
            });
        }
        let jet = std::array::from_fn(|k| {
            self.jet[k]
                .iter()
                .zip(&other.jet[k])
                .map(|(p, q)| a * p + b * q)
                .collect()
        });
        Self::from_parts(self.grid, jet)
    }

    /// Adds the affine function `c + b·x` to the correction.
    pub fn add_affine(&self, c: f64, b: f64) -> Self {
        let mut out = self.clone();
        for (i, x) in self.grid.nodes().into_iter().enumerate() {
            out.jet[0][i] += c + b * x;
            out.jet[1][i] += b;
        }
        out
    }

    /// Parses the `x,f` CSV format. Rows must be ascending on a uniform grid of [0, 1].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim().replace(' ', "") == "x,f" => {}
            Some((row, _)) => {
                return Err(Error::Parse {
                    row: row + 1,
                    message: "expected header `x,f`".into(),
                })
            }
            None => {
                return Err(Error::Parse {
                    row: 0,
                    message: "empty file".into(),
                })
            }
        }
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        for (row, line) in lines {
            let mut cols = line.split(',');
            let parse = |c: Option<&str>| -> Result<f64> {
                c.ok_or_else(|| Error::Parse {
                    row: row + 1,
                    message: "missing column".into(),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    row: row + 1,
                    message: e.to_string(),
                })
            };
            let x = parse(cols.next())?;
            let f = parse(cols.next())?;
            if cols.next().is_some() {
                return Err(Error::Parse {
                    row: row + 1,
                    message: "too many columns".into(),
                });
            }
            xs.push((row + 1, x));
            fs.push(f);
        }
        let n = xs.len();
        if n < 2 {
            return Err(Error::GridTooSmall {
                min: crate::numerics::STENCIL,
                got: n,
            });
        }
        let h = 1.0 / (n - 1) as f64;
        for (k, (row, x)) in xs.iter().enumerate() {
            if (x - k as f64 * h).abs() > 1e-9 {
                return Err(Error::Parse {
                    row: *row,
                    message: format!(
                        "x = {x} breaks the uniform grid of [0, 1] (expected {})",
                        k as f64 * h
                    ),
                });
            }
        }
        Self::from_values(fs)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x,f\n");
        for (x, f) in self.grid.nodes().iter().zip(&self.jet[0]) {
            out.push_str(&format!("{x:.17e},{f:.17e}\n"));
        }
        out
    }
}

/// Guillemin term `x log x + (1-x) log(1-x)`, with the limits at the ends.
pub fn guillemin(x: f64) -> f64 {
    let xl = |t: f64| if t <= 0.0 { 0.0 } else { t * t.ln() };
    xl(x) + xl(1.0 - x)
}

/// Complex-side potential `ψ(s)` on a uniform grid of [-S, S].
#[derive(Debug, Clone, PartialEq)]
pub struct RadialPotential {
    grid: UniformGrid,
    jet: [Vec<f64>; 5],
}

impl RadialPotential {
    /// From sampled values; derivatives of `ψ - ψ₀` come from stencils,
    /// those of `ψ₀` in closed form.
    pub fn from_values(s_max: f64, psi: Vec<f64>) -> Result<Self> {
        let grid = UniformGrid::new(-s_max, s_max, psi.len())?;
        let nodes = grid.nodes();
        let rel: Vec<f64> = psi
            .iter()
            .zip(&nodes)
            .map(|(p, s)| p - softplus(*s))
            .collect();
        let d = uniform_derivatives(&rel, grid.step())?;
        let mut jet: [Vec<f64>; 5] = [
            psi,
            vec![0.0; grid.n],
            vec![0.0; grid.n],
            vec![0.0; grid.n],
            vec![0.0; grid.n],
        ];
        for (i, s) in nodes.iter().enumerate() {
            let r = reference_jet(*s);
            for k in 1..5 {
                jet[k][i] = r[k] + d[k - 1][i];
            }
        }
        Self::from_parts(grid, jet)
    }

    /// From a closure returning `(ψ, ψ', ψ'', ψ''', ψ'''')` at s.
    pub fn from_jet<F: Fn(f64) -> [f64; 5]>(n: usize, s_max: f64, jet: F) -> Result<Self> {
        let grid = UniformGrid::new(-s_max, s_max, n)?;
        let mut arrays: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(n));
        for s in grid.nodes() {
            for (a, v) in arrays.iter_mut().zip(jet(s)) {
                a.push(v);
            }
        }
        Self::from_parts(grid, arrays)
    }

    pub fn reference(n: usize, s_max: f64) -> Result<Self> {
        Self::from_jet(n, s_max, reference_jet)
    }

    fn from_parts(grid: UniformGrid, jet: [Vec<f64>; 5]) -> Result<Self> {
        let p = Self { grid, jet };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.grid.n;
        for a in &self.jet {
            if let Some(index) = a.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        let psi = &self.jet[0];
        for i in 1..n - 1 {
            let d2 = psi[i + 1] - 2.0 * psi[i] + psi[i - 1];
            if d2 < -1e-13 * (1.0 + psi[i].abs()) {
                return Err(Error::NotConvex {
                    index: i,
                    value: d2 / self.grid.step().powi(2),
                });
            }
            let slope = self.jet[1][i];
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::SlopeOutOfRange {
                    index: i,
                    value: slope,
                });
            }
        }
        // Bounded relative to ψ₀: the relative slope must die out at both edges.
        let rel_slope = |i: usize| self.jet[1][i] - logistic(self.grid.node(i));
        if rel_slope(0).abs() > 1e-3 {
            return Err(Error::UnboundedTail { side: "left" });
        }
        if rel_slope(n - 1).abs() > 1e-3 {
            return Err(Error::UnboundedTail { side: "right" });
        }
        Ok(())
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    pub fn s_max(&self) -> f64 {
        self.grid.hi
    }

    pub fn values(&self) -> &[f64] {
        &self.jet[0]
    }

    pub fn derivative(&self, k: usize) -> &[f64] {
        &self.jet[k]
    }

    /// `ψ - ψ₀` at every node.
    pub fn relative(&self) -> Vec<f64> {
        self.jet[0]
            .iter()
            .zip(self.grid.nodes())
            .map(|(p, s)| p - softplus(s))
            .collect()
    }

    /// `(ψ, ψ', ψ'')` at an arbitrary s by Hermite interpolation of `ψ - ψ₀`.
    pub fn eval(&self, s: f64) -> [f64; 3] {
        let (i, t) = self.grid.locate(s);
        let rel = |j: usize| {
            let r = reference_jet(self.grid.node(j));
            [
                self.jet[0][j] - r[0],
                self.jet[1][j] - r[1],
                self.jet[2][j] - r[2],
            ]
        };
        let d = hermite5(rel(i), rel(i + 1), self.grid.step(), t);
        let r = reference_jet(s);
        [r[0] + d[0], r[1] + d[1], r[2] + d[2]]
    }
}

/// Area density `ρ = ψ''` on the s-grid plus the exact masses of the two
/// tails beyond the window.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDensity {
    grid: UniformGrid,
    rho: Vec<f64>,
    left_tail: f64,
    right_tail: f64,
}

impl MetricDensity {
    pub fn new(psi: &RadialPotential) -> Result<Self> {
        let rho = psi.derivative(2).to_vec();
        if let Some(index) = rho.iter().position(|r| *r < 0.0) {
            return Err(Error::NegativeDensity {
                index,
                value: rho[index],
            });
        }
        let n = rho.len();
        Ok(Self {
            grid: psi.grid(),
            rho,
            left_tail: psi.derivative(1)[0],
            right_tail: 1.0 - psi.derivative(1)[n - 1],
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn tails(&self) -> (f64, f64) {
        (self.left_tail, self.right_tail)
    }

    pub fn total_mass(&self) -> f64 {
        integrate_uniform(&self.rho, self.grid.step()) + self.left_tail + self.right_tail
    }
}

/// `∫_X g ω`: quadrature of `g ρ` over the window, the tails weighted by the
/// edge values of `g`.
pub fn integrate_x(g: &[f64], rho: &MetricDensity) -> Result<f64> {
    if g.len() != rho.rho.len() {
        return Err(Error::ShapeMismatch {
            expected: rho.rho.len(),
            got: g.len(),
        });
    }
    if let Some(index) = g.iter().chain(&rho.rho).position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            index: index % g.len(),
        });
    }
    let prod: Vec<f64> = g.iter().zip(&rho.rho).map(|(a, b)| a * b).collect();
    let n = g.len();
    Ok(
        integrate_uniform(&prod, rho.grid.step())
            + g[0] * rho.left_tail
            + g[n - 1] * rho.right_tail,
    )
}

/// Moment map `x(s) = ψ'(s)`; must be increasing with values in (0, 1).
pub fn moment_map(psi: &RadialPotential) -> Result<Vec<f64>> {
    let x = psi.derivative(1).to_vec();
    for (i, v) in x.iter().enumerate() {
        if !(*v > 0.0 && *v < 1.0) {
            return Err(Error::SlopeOutOfRange {
                index: i,
                value: *v,
            });
        }
        if i > 0 && *v < x[i - 1] {
            return Err(Error::NotConvex {
                index: i,
                value: v - x[i - 1],
            });
        }
    }
    Ok(x)
}

/// Sup distance between the cumulative metric area and the moment map,
/// i.e. between the pushforward of ρ and Lebesgue measure on [0, 1].
pub fn pushforward_deviation(psi: &RadialPotential) -> Result<f64> {
    let x = moment_map(psi)?;
    let rho = MetricDensity::new(psi)?;
    let h = psi.grid().step();
    let r = rho.values();
    // Cumulative trapezoid with a Simpson-like end correction per cell.
    let d3 = psi.derivative(3);
    let mut cum = rho.left_tail;
    let mut dev: f64 = (cum - x[0]).abs();
    for i in 1..r.len() {
        cum += 0.5 * h * (r[i] + r[i - 1]) - h * h / 12.0 * (d3[i] - d3[i - 1]);
        dev = dev.max((cum - x[i]).abs());
    }
    Ok(dev)
}

/// Scalar curvature `R = -(1/u'')''` at every node of the x-grid.
pub fn scalar_curvature(u: &SymplecticPotential) -> Result<Vec<f64>> {
    (0..u.len())
        .map(|i| {
            let n = u.metric_factor(i);
            if n <= DEGENERACY_FLOOR {
                return Err(Error::DegenerateMetric { index: i, value: n });
            }
            Ok(-u.inverse_metric(i)[2])
        })
        .collect()
}

/// `∫₀¹ R dx`; equals 2 for every metric on the sphere.
pub fn total_curvature(u: &SymplecticPotential) -> Result<f64> {
    let r = scalar_curvature(u)?;
    let w = gregory_weights(r.len(), u.step(), 8);
    Ok(w.iter().zip(&r).map(|(w, r)| w * r).sum())
}

/// Ricci form density `r = -(log ψ'')''` on the s-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RicciDensity {
    pub values: Vec<f64>,
    /// Index range `[lo, hi]` where the density is resolved.
    pub reliable: (usize, usize),
    /// `∫ r ds`, window quadrature plus boundary-flux tails.
    pub total: f64,
}

pub fn ricci_density(psi: &RadialPotential) -> Result<RicciDensity> {
    let d2 = psi.derivative(2);
    let d3 = psi.derivative(3);
    let d4 = psi.derivative(4);
    let mut values = Vec::with_capacity(d2.len());
    for i in 0..d2.len() {
        if !(d2[i] > f64::MIN_POSITIVE) {
            return Err(Error::DegenerateMetric {
                index: i,
                value: d2[i],
            });
        }
        let l1 = d3[i] / d2[i];
        values.push(-(d4[i] / d2[i] - l1 * l1));
    }
    let lo = d2.iter().position(|v| *v >= RELIABLE_DENSITY);
    let hi = d2.iter().rposition(|v| *v >= RELIABLE_DENSITY);
    let (lo, hi) = match (lo, hi) {
        (Some(a), Some(b)) if b > a + 8 => (a, b),
        _ => {
            return Err(Error::DegenerateMetric {
                index: 0,
                value: 0.0,
            })
        }
    };
    let window = integrate_uniform(&values[lo..=hi], psi.grid().step());
    let left = 1.0 - d3[lo] / d2[lo];
    let right = 1.0 + d3[hi] / d2[hi];
    Ok(RicciDensity {
        values,
        reliable: (lo, hi),
        total: window + left + right,
    })
}

/// Solves `u'(x) = s` for the moment coordinate, returning `(x, logit x)`.
fn solve_moment(u: &SymplecticPotential, s: f64) -> Result<(f64, f64)> {
    let slope_bound = u.derivative(1).iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
    let (mut lo, mut hi) = (s - slope_bound, s + slope_bound);
    let mut l = s - u.eval(logistic(s))[1];
    l = l.clamp(lo, hi);
    for _ in 0..200 {
        let x = logistic(l);
        let [_, f1, f2] = u.eval(x);
        let g = l + f1 - s;
        if g > 0.0 {
            hi = l;
        } else {
            lo = l;
        }
        let dg = 1.0 + f2 * x * (1.0 - x);
        let mut next = l - g / dg;
        if !(next > lo && next < hi) || !dg.is_finite() || dg <= 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - l).abs() <= 1e-15 * (1.0 + l.abs()) || hi - lo < 1e-15 * (1.0 + l.abs()) {
            return Ok((logistic(next), next));
        }
        l = next;
    }
    Err(Error::LegendreFailure {
        coordinate: "s",
        value: s,
    })
}

/// `ψ(s) = sup_x (x s - u(x))` on the grid of [-S, S], with derivatives
/// obtained from `ψ'' = 1/u''` along the moment map.
pub fn legendre_to_s(u: &SymplecticPotential, n_s: usize, s_max: f64) -> Result<RadialPotential> {
    let grid = UniformGrid::new(-s_max, s_max, n_s)?;
    let mut jet: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(n_s));
    for s in grid.nodes() {
        let (x, l) = solve_moment(u, s)?;
        let [f, f1, _] = u.eval(x);
        let [w, w1, w2] = inverse_metric_jet(x, u.eval_curvature(x));
        if !(w > 0.0) {
            return Err(Error::DegenerateMetric { index: 0, value: w });
        }
        // x s - u(x) with s = logit x + f'(x) and u = Guillemin + f.
        let psi = softplus(l) + x * f1 - f;
        jet[0].push(psi);
        jet[1].push(x);
        jet[2].push(w);
        jet[3].push(w1 * w);
        jet[4].push((w2 * w + w1 * w1) * w);
    }
    RadialPotential::from_parts(grid, jet)
}

/// `u(x) = sup_s (x s - ψ(s))` on the uniform grid of [0, 1], by matching
/// slopes `ψ'(s) = x`. Endpoint values use the tail limits of `ψ - ψ₀`.
pub fn legendre_to_x(psi: &RadialPotential, n_x: usize) -> Result<SymplecticPotential> {
    let grid = UniformGrid::new(0.0, 1.0, n_x)?;
    let s_grid = psi.grid();
    let rel = psi.relative();
    let mut f = vec![0.0; n_x];
    f[0] = -rel[0];
    f[n_x - 1] = -rel[rel.len() - 1];
    let d1 = psi.derivative(1);
    for (i, fi) in f.iter_mut().enumerate().take(n_x - 1).skip(1) {
        let x = grid.node(i);
        if x <= d1[0] || x >= d1[d1.len() - 1] {
            return Err(Error::LegendreFailure {
                coordinate: "x",
                value: x,
            });
        }
        // Bracket by monotone search over node slopes, then Newton.
        let k = d1.partition_point(|v| *v < x);
        let (mut lo, mut hi) = (s_grid.node(k - 1), s_grid.node(k));
        let mut s = 0.5 * (lo + hi);
        let mut converged = false;
        for _ in 0..100 {
            let [_, p1, p2] = psi.eval(s);
            let g = p1 - x;
            if g > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let mut next = s - g / p2;
            if !(next > lo && next < hi) || p2 <= 0.0 {
                next = 0.5 * (lo + hi);
            }
            if (next - s).abs() < 1e-15 * (1.0 + s.abs()) || hi - lo < 1e-15 * (1.0 + s.abs()) {
                s = next;
                converged = true;
                break;
            }
            s = next;
        }
        if !converged {
            return Err(Error::LegendreFailure {
                coordinate: "x",
                value: x,
            });
        }
        let l = logit(x);
        let phi = psi.eval(s)[0] - softplus(s);
        *fi = x * (s - l) - softplus(s) + softplus(l) - phi;
    }
    SymplecticPotential::from_values(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(eps: f64) -> impl Fn(f64) -> [f64; 5] {
        use std::f64::consts::PI;
        move |x| {
            let (s, c) = (PI * x).sin_cos();
            [
                eps * s,
                eps * PI * c,
                -eps * PI * PI * s,
                -eps * PI.powi(3) * c,
                eps * PI.powi(4) * s,
            ]
        }
    }

    #[test]
    fn round_metric_has_curvature_two() {
        let u = SymplecticPotential::round(65).unwrap();
        for r in scalar_curvature(&u).unwrap() {
            assert!((r - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn curvature_tends_to_two_with_vanishing_bump() {
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let u = SymplecticPotential::from_jet(129, bump(eps)).unwrap();
            let dev = scalar_curvature(&u)
                .unwrap()
                .iter()
                .fold(0.0f64, |m, r| m.max((r - 2.0).abs()));
            assert!(dev < last);
            last = dev;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn non_convex_potential_is_rejected() {
        let err = SymplecticPotential::from_jet(65, bump(2.0)).unwrap_err();
        assert!(matches!(err, Error::NotConvex { .. }), "{err:?}");
    }

    #[test]
    fn reference_density_has_unit_mass() {
        let psi = RadialPotential::reference(DEFAULT_NS, DEFAULT_S_MAX).unwrap();
        let rho = MetricDensity::new(&psi).unwrap();
        assert!((rho.total_mass() - 1.0).abs() < 1e-10);
        let x = moment_map(&psi).unwrap();
        assert!((integrate_x(&x, &rho).unwrap() - 0.5).abs() < 1e-10);
        let c = vec![3.5; x.len()];
        assert!((integrate_x(&c, &rho).unwrap() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn nan_input_is_rejected_by_integration() {
        let psi = RadialPotential::reference(64, 10.0).unwrap();
        let rho = MetricDensity::new(&psi).unwrap();
        let mut g = vec![0.0; 64];
        g[5] = f64::NAN;
        assert!(integrate_x(&g, &rho).is_err());
        assert!(integrate_x(&g[..10], &rho).is_err());
    }

    #[test]
    fn reference_ricci_density_matches_closed_form() {
        let psi = RadialPotential::reference(1025, DEFAULT_S_MAX).unwrap();
        let ric = ricci_density(&psi).unwrap();
        for (s, r) in psi.nodes().iter().zip(&ric.values) {
            let e = s.exp();
            let want = 2.0 * e / (1.0 + e).powi(2);
            assert!(
                (r - want).abs() < 1e-12 * (1.0 + want),
                "{s}: {r} vs {want}"
            );
        }
        assert!((ric.total - 2.0).abs() < 1e-8);
    }

    #[test]
    fn legendre_of_round_is_reference() {
        let u = SymplecticPotential::round(DEFAULT_NX).unwrap();
        let psi = legendre_to_s(&u, 513, DEFAULT_S_MAX).unwrap();
        for (s, p) in psi.nodes().iter().zip(psi.values()) {
            assert!((p - softplus(*s)).abs() < 1e-13);
        }
        let back = legendre_to_x(
            &RadialPotential::reference(DEFAULT_NS, DEFAULT_S_MAX).unwrap(),
            DEFAULT_NX,
        )
        .unwrap();
        assert!(back.values().iter().all(|f| f.abs() < 1e-7));
    }

    #[test]
    fn csv_round_trip_and_row_errors() {
        let u = SymplecticPotential::from_jet(33, bump(0.1)).unwrap();
        let text = u.to_csv_string();
        let v = SymplecticPotential::from_csv_str(&text).unwrap();
        assert_eq!(u.values(), v.values());

        let broken = text.replacen("3.12500000000000000e-2", "3.3e-2", 1);
        match SymplecticPotential::from_csv_str(&broken) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let bad = "x,f\n0,0\n0.5,abc\n1,0\n";
        assert!(matches!(
            SymplecticPotential::from_csv_str(bad),
            Err(Error::Parse { row: 3, .. })
        ));
        assert!(matches!(
            SymplecticPotential::from_csv_str("a,b\n"),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn unbounded_radial_potential_is_rejected() {
        // Slope tends to 1/2 on the left: not in the class of ψ₀.
        let r = RadialPotential::from_jet(257, 12.0, |s| {
            let r = reference_jet(s);
            let t = reference_jet(s + 40.0);
            [
                0.5 * (r[0] + t[0]),
                0.5 * (r[1] + t[1]),
                0.5 * (r[2] + t[2]),
                0.5 * (r[3] + t[3]),
                0.5 * (r[4] + t[4]),
            ]
        });
        assert!(
            matches!(r, Err(Error::UnboundedTail { side: "left" })),
            "{r:?}"
        );
    }
}
