//! Small numerical toolkit shared by the geometry modules: uniform-grid
//! quadrature and differentiation, Hermite interpolation, Gauss–Legendre
//! rules and a golden-section search.

use crate::error::{Error, Result};

/// Width of the finite-difference stencils used on uniform grids.
pub const STENCIL: usize = 9;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `e^x / (1 + e^x)`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(x / (1 - x))`.
pub fn logit(x: f64) -> f64 {
    x.ln() - (-x).ln_1p()
}

/// Quadrature weights on a uniform grid with spacing `h`.
///
/// Uses the fourth-order Gregory end corrections (3/8, 7/6, 23/24) when the
/// grid is long enough, the trapezoid rule otherwise. Works for any node
/// count, odd or even.
pub fn uniform_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n < 2 {
        return vec![0.0; n];
    }
    if n < 8 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
        return w;
    }
    let ends = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
    for (i, c) in ends.iter().enumerate() {
        w[i] = c * h;
        w[n - 1 - i] = c * h;
    }
    w
}

/// Gregory weights with `order` end corrections per side: exact for
/// polynomials of degree below `order`. Falls back to [`uniform_weights`]
/// on short grids.
pub fn gregory_weights(n: usize, h: f64, order: usize) -> Vec<f64> {
    if order <= 3 || n < 2 * order {
        return uniform_weights(n, h);
    }
    // Corrections d_j to unit weights match the Euler-Maclaurin end terms:
    // Σ d_j = -1/2, Σ d_j j^k = B_{k+1}/(k+1) for odd k, 0 for even k > 0.
    const BERNOULLI: [f64; 8] = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
        -3617.0 / 510.0,
    ];
    let p = order.min(2 * BERNOULLI.len());
    let a = nalgebra::DMatrix::from_fn(p, p, |k, j| (j as f64).powi(k as i32));
    let b = nalgebra::DVector::from_fn(p, |k, _| match k {
        0 => -0.5,
        k if k % 2 == 1 => BERNOULLI[k / 2] / (k + 1) as f64,
        _ => 0.0,
    });
    let d = a
        .lu()
        .solve(&b)
        .unwrap_or_else(|| nalgebra::DVector::zeros(p));
    let mut w = vec![h; n];
    for j in 0..p {
        w[j] += d[j] * h;
        w[n - 1 - j] += d[j] * h;
    }
    w
}

/// Integrates grid values with [`uniform_weights`]; summation runs in index order.
pub fn integrate_uniform(values: &[f64], h: f64) -> f64 {
    uniform_weights(values.len(), h)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

/// Fornberg's recursion: weights `c[k][j]` such that the k-th derivative at
/// `z` is approximated by `sum_j c[k][j] f(x[j])`, for k = 0..=m.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Derivatives of orders 1..=4 of uniformly sampled data, from 9-point
/// stencils (centred in the interior, shifted near the ends).
pub fn uniform_derivatives(values: &[f64], h: f64) -> Result<[Vec<f64>; 4]> {
    let n = values.len();
    if n < STENCIL {
        return Err(Error::GridTooSmall {
            min: STENCIL,
            got: n,
        });
    }
    let half = STENCIL / 2;
    let offsets: Vec<f64> = (0..STENCIL).map(|j| j as f64).collect();
    // Stencil weights depend only on the position of the node inside the
    // window, so there are STENCIL distinct tables.
    let tables: Vec<Vec<Vec<f64>>> = (0..STENCIL)
        .map(|pos| fornberg_weights(pos as f64, &offsets, 4))
        .collect();
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let start = i.saturating_sub(half).min(n - STENCIL);
        let pos = i - start;
        let window = &values[start..start + STENCIL];
        for (order, dst) in out.iter_mut().enumerate() {
            let k = order + 1;
            let acc: f64 = tables[pos][k].iter().zip(window).map(|(c, v)| c * v).sum();
            dst[i] = acc / h.powi(k as i32);
        }
    }
    Ok(out)
}

/// Quintic Hermite interpolation on one cell of width `h`.
///
/// `left` and `right` hold (value, first, second derivative) at the cell
/// ends; `t` is the relative position in [0, 1]. Returns value, first and
/// second derivative of the interpolant.
pub fn hermite5(left: [f64; 3], right: [f64; 3], h: f64, t: f64) -> [f64; 3] {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    // Basis and its first two t-derivatives.
    let h0 = [
        1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
        -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
        -60.0 * t + 180.0 * t2 - 120.0 * t3,
    ];
    let h1 = [
        t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
        1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
        -36.0 * t + 96.0 * t2 - 60.0 * t3,
    ];
    let h2 = [
        0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
        t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
        1.0 - 9.0 * t + 18.0 * t2 - 10.0 * t3,
    ];
    let g0 = [
        10.0 * t3 - 15.0 * t4 + 6.0 * t5,
        30.0 * t2 - 60.0 * t3 + 30.0 * t4,
        60.0 * t - 180.0 * t2 + 120.0 * t3,
    ];
    let g1 = [
        -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
        -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
        -24.0 * t + 84.0 * t2 - 60.0 * t3,
    ];
    let g2 = [
        0.5 * t3 - t4 + 0.5 * t5,
        1.5 * t2 - 4.0 * t3 + 2.5 * t4,
        3.0 * t - 12.0 * t2 + 10.0 * t3,
    ];
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let v = left[0] * h0[k]
            + h * left[1] * h1[k]
            + h * h * left[2] * h2[k]
            + right[0] * g0[k]
            + h * right[1] * g1[k]
            + h * h * right[2] * g2[k];
        *o = v / h.powi(k as i32);
    }
    out
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed Gauss–Legendre rule mapped onto an interval.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

/// Adaptive Gauss–Legendre quadrature by interval bisection.
///
/// A panel is accepted when the single-panel and two-half-panel estimates
/// agree to `abs_tol` (or to roundoff); otherwise both halves are refined. Fails after
/// `max_depth` levels.
pub fn adaptive_gauss<F: FnMut(f64) -> f64>(
    rule: &GaussRule,
    f: &mut F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_depth: usize,
) -> Result<f64> {
    let whole = rule.integrate(a, b, &mut *f);
    adaptive_step(rule, f, a, b, whole, abs_tol, max_depth)
}

fn adaptive_step<F: FnMut(f64) -> f64>(
    rule: &GaussRule,
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = rule.integrate(a, m, &mut *f);
    let right = rule.integrate(m, b, &mut *f);
    // Never ask for more than a few ulps of the panel estimate.
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if (left + right - whole).abs() <= tol.max(floor) {
        return Ok(left + right);
    }
    if depth == 0 {
        return Err(Error::QuadratureNonConvergence { a, b });
    }
    let l = adaptive_step(rule, f, a, m, left, 0.5 * tol, depth - 1)?;
    let r = adaptive_step(rule, f, m, b, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// Golden-section search for the minimiser of a unimodal function on [a, b].
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Uniform grid on [lo, hi] with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < STENCIL {
            return Err(Error::GridTooSmall {
                min: STENCIL,
                got: n,
            });
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invalid(format!("bad grid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Cell index and relative position of `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.step();
        let u = ((x - self.lo) / h).clamp(0.0, (self.n - 1) as f64);
        let i = (u.floor() as usize).min(self.n - 2);
        (i, u - i as f64)
    }

    pub fn weights(&self) -> Vec<f64> {
        uniform_weights(self.n, self.step())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn high_order_gregory() {
        let g = UniformGrid::new(0.0, 1.0, 41).unwrap();
        let w = gregory_weights(g.n, g.step(), 8);
        for k in 0..8 {
            let v: f64 = g.nodes().iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            assert!((v - 1.0 / (k + 1) as f64).abs() < 1e-13, "degree {k}: {v}");
        }
        // Eighth-order convergence on a non-periodic integrand.
        let err = |n: usize| {
            let g = UniformGrid::new(0.0, 1.0, n).unwrap();
            let w = gregory_weights(n, g.step(), 8);
            let v: f64 = g
                .nodes()
                .iter()
                .zip(&w)
                .map(|(x, w)| w * (3.0 * x).exp())
                .sum();
            (v - ((3.0f64).exp() - 1.0) / 3.0).abs()
        };
        assert!(err(33) / err(65) > 150.0);
        assert_eq!(gregory_weights(9, 0.1, 8), uniform_weights(9, 0.1));
    }

    #[test]
    fn gregory_is_exact_for_cubics() {
        let g = UniformGrid::new(0.0, 1.0, 37).unwrap();
        let v: Vec<f64> = g
            .nodes()
            .iter()
            .map(|x| x * x * x - 2.0 * x + 1.0)
            .collect();
        let exact = 0.25 - 1.0 + 1.0;
        assert!((integrate_uniform(&v, g.step()) - exact).abs() < 1e-14);
    }

    #[test]
    fn stencil_derivatives_of_sine() {
        let g = UniformGrid::new(0.0, 1.0, 257).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| (3.0 * x).sin()).collect();
        let d = uniform_derivatives(&v, g.step()).unwrap();
        for (i, x) in g.nodes().into_iter().enumerate() {
            assert!((d[0][i] - 3.0 * (3.0 * x).cos()).abs() < 1e-10);
            assert!((d[1][i] + 9.0 * (3.0 * x).sin()).abs() < 1e-8);
            assert!((d[3][i] - 81.0 * (3.0 * x).sin()).abs() < 1e-3);
        }
    }

    #[test]
    fn hermite_reproduces_quintics() {
        let p = |x: f64| {
            [
                x.powi(5) - x * x,
                5.0 * x.powi(4) - 2.0 * x,
                20.0 * x.powi(3) - 2.0,
            ]
        };
        let (a, b) = (0.3, 0.7);
        let got = hermite5(p(a), p(b), b - a, 0.37);
        let want = p(a + 0.37 * (b - a));
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() < 1e-12, "{k}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = GaussRule::new(10);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(19));
        assert!((v - 2f64.powi(20) / 20.0).abs() < 1e-9 * v);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let rule = GaussRule::new(16);
        let mut f = |x: f64| (-400.0 * (x - 0.3) * (x - 0.3)).exp();
        let v = adaptive_gauss(&rule, &mut f, 0.0, 1.0, 1e-14, 30).unwrap();
        let exact = std::f64::consts::PI.sqrt() / 20.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let m = golden_section(|t| (t - 0.3).powi(2), -2.0, 2.0, 1e-10);
        assert!((m - 0.3).abs() < 1e-8);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert!((logistic(logit(0.2)) - 0.2).abs() < 1e-15);
    }
}
