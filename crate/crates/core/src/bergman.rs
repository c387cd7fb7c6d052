//! Weighted Bergman kernels on the unit disc for radial weights.
//!
//! For a radial weight `φ(|z|)` the monomials are orthogonal, so
//! `K_{kφ}(z) = Σ |z|^{2m} / c_m` with `c_m = 4π ∫₀¹ r^{2m+1} e^{-kφ(r)} dr`
//! (the area form is `i dz∧dz̄ = 2 dA`). Families of the form
//! `Φ(τ, z) = φ_τ(|z|) + 2 Re(z β(τ)) + γ(τ)` reduce to the radial case since
//! multiplication by `e^{k z β}` is an isometry between the weighted spaces.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodesics::GeodesicPath;
use crate::numerics::{adaptive_gauss, GaussRule};
use crate::radial_geometry::{legendre_to_s, RadialPotential};

pub const DEFAULT_K_LIST: [f64; 5] = [5.0, 10.0, 20.0, 50.0, 100.0];

/// Relative tolerance of each `c_m` and of the series tail.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Radii at or beyond this are treated as boundary points.
pub const BOUNDARY_RADIUS: f64 = 0.95;

const MAX_TERMS: usize = 1 << 14;

/// Relative slack allowed in the plurisubharmonicity of a weight family.
pub const PRECONDITION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    /// Real analytic or `C^∞`.
    Smooth,
    /// `C²` with Lipschitz second derivative; curvature only bounded.
    LipschitzHessian,
}

type Jet = dyn Fn(f64) -> [f64; 3] + Send + Sync;

/// A radial weight `φ(r)` on the unit disc, given through `(φ, φ', φ'')`.
#[derive(Clone)]
pub struct RadialWeight {
    jet: Arc<Jet>,
    smoothness: Smoothness,
    label: String,
}

impl std::fmt::Debug for RadialWeight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadialWeight")
            .field("label", &self.label)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl RadialWeight {
    pub fn from_jet<F>(label: &str, smoothness: Smoothness, jet: F) -> Self
    where
        F: Fn(f64) -> [f64; 3] + Send + Sync + 'static,
    {
        Self {
            jet: Arc::new(jet),
            smoothness,
            label: label.to_string(),
        }
    }

    /// `φ = Σ a_j r^{2j}`.
    pub fn polynomial(coeffs: &[f64]) -> Self {
        let a = coeffs.to_vec();
        let label = format!("poly{a:?}");
        Self::from_jet(&label, Smoothness::Smooth, move |r| {
            let r2 = r * r;
            let mut out = [0.0; 3];
            let mut p = 1.0;
            for (j, c) in a.iter().enumerate() {
                let j = j as f64;
                out[0] += c * p;
                if j >= 1.0 {
                    // d/dr r^{2j} = 2j r^{2j-1}, d²/dr² = 2j(2j-1) r^{2j-2}
                    let pm = p / r2.max(f64::MIN_POSITIVE);
                    out[1] += c * 2.0 * j * pm * r;
                    out[2] += c * 2.0 * j * (2.0 * j - 1.0) * pm;
                }
                p *= r2;
            }
            if r == 0.0 {
                out[1] = 0.0;
                out[2] = 2.0 * a.get(1).copied().unwrap_or(0.0);
            }
            out
        })
    }

    /// `a |z|²`.
    pub fn quadratic(a: f64) -> Self {
        Self::polynomial(&[0.0, a])
    }

    /// `|z|² + κ max(|z|² - r0², 0)³`: second derivative Lipschitz but not `C¹`.
    pub fn kinked(r0: f64, kappa: f64) -> Self {
        let label = format!("kinked({r0},{kappa})");
        Self::from_jet(&label, Smoothness::LipschitzHessian, move |r| {
            let d = r * r - r0 * r0;
            let mut out = [r * r, 2.0 * r, 2.0];
            if d > 0.0 {
                out[0] += kappa * d.powi(3);
                out[1] += kappa * 6.0 * r * d * d;
                out[2] += kappa * (6.0 * d * d + 24.0 * r * r * d);
            }
            out
        })
    }

    /// `φ(r) = ψ(2 log r)`: a torus-invariant potential near the pole `x = 0`.
    /// Beyond the s-window the moment map is continued as `x ∝ e^s`.
    pub fn from_radial_potential(psi: &RadialPotential) -> Self {
        let psi = psi.clone();
        let s_lo = -psi.s_max();
        let [p0, p1, _] = psi.eval(s_lo);
        Self::from_jet("geodesic slice", Smoothness::Smooth, move |r| {
            let s = 2.0 * r.max(1e-300).ln();
            let [v, d1, d2] = if s >= s_lo {
                psi.eval(s)
            } else {
                let e = (s - s_lo).exp();
                [p0 + p1 * (e - 1.0), p1 * e, p1 * e]
            };
            if r == 0.0 {
                return [v, 0.0, 0.0];
            }
            [v, 2.0 * d1 / r, (4.0 * d2 - 2.0 * d1) / (r * r)]
        })
    }

    pub fn shifted(&self, a: f64) -> Self {
        let inner = self.jet.clone();
        Self::from_jet(&format!("{}+{a}", self.label), self.smoothness, move |r| {
            let [v, d1, d2] = inner(r);
            [v + a, d1, d2]
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn jet(&self, r: f64) -> [f64; 3] {
        (self.jet)(r)
    }

    pub fn value(&self, r: f64) -> f64 {
        (self.jet)(r)[0]
    }

    /// `∂_z ∂_z̄ φ = (φ'' + φ'/r)/4`, equal to `φ''(0)/2` at the centre.
    pub fn laplacian_density(&self, r: f64) -> f64 {
        let [_, d1, d2] = self.jet(r);
        if r == 0.0 {
            0.5 * d2
        } else {
            0.25 * (d2 + d1 / r)
        }
    }

    /// Checks `(r φ')' ≥ 0` on `n` uniform radii of `[0, r_max]`.
    pub fn check_subharmonic(&self, r_max: f64, n: usize) -> Result<()> {
        for i in 0..=n {
            let r = r_max * i as f64 / n as f64;
            let [v, d1, d2] = self.jet(r);
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if r * d2 + d1 < -1e-12 * (1.0 + d1.abs()) {
                return Err(Error::NotSubharmonic { radius: r });
            }
        }
        Ok(())
    }
}

/// `K_{kφ}` truncated at `m_max`, stored as `log c_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BergmanKernel {
    k: f64,
    log_c: Vec<f64>,
}

fn log_moment(phi: &RadialWeight, k: f64, m: usize, rule: &GaussRule) -> Result<f64> {
    let p = (2 * m + 1) as f64;
    let g = |r: f64| {
        if r > 0.0 {
            p * r.ln() - k * phi.value(r)
        } else {
            f64::NEG_INFINITY
        }
    };
    let peak = (1..=512)
        .map(|i| g(i as f64 / 512.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut f = |r: f64| (g(r) - peak).exp();
    let panels = 32;
    let rough: f64 = (0..panels)
        .map(|i| {
            rule.integrate(
                i as f64 / panels as f64,
                (i + 1) as f64 / panels as f64,
                &mut f,
            )
        })
        .sum();
    if !(rough > 0.0 && rough.is_finite()) {
        return Err(Error::QuadratureNonConvergence { a: 0.0, b: 1.0 });
    }
    let mut total = 0.0;
    for i in 0..panels {
        let (a, b) = (i as f64 / panels as f64, (i + 1) as f64 / panels as f64);
        total += adaptive_gauss(
            rule,
            &mut f,
            a,
            b,
            0.1 * TAIL_TOLERANCE * rough / panels as f64,
            30,
        )?;
    }
    Ok((4.0 * PI).ln() + peak + total.ln())
}

/// Moments `c_0, …, c_{m_max}` of `e^{-kφ}`.
pub fn bergman_coefficients(phi: &RadialWeight, k: f64, m_max: usize) -> Result<BergmanKernel> {
    if !(k > 0.0) {
        return Err(Error::Invalid(format!("k must be positive, got {k}")));
    }
    let rule = GaussRule::new(20);
    let log_c = (0..=m_max)
        .into_par_iter()
        .map(|m| log_moment(phi, k, m, &rule))
        .collect::<Result<Vec<_>>>()?;
    Ok(BergmanKernel { k, log_c })
}

impl BergmanKernel {
    /// Smallest truncation whose certified relative tail at radius `r` is
    /// below [`TAIL_TOLERANCE`].
    pub fn certified(phi: &RadialWeight, k: f64, r: f64) -> Result<Self> {
        let mut m = 64;
        loop {
            let kernel = bergman_coefficients(phi, k, m)?;
            if kernel.relative_tail(r) < TAIL_TOLERANCE {
                return Ok(kernel);
            }
            if m >= MAX_TERMS {
                return Err(Error::TailNotCertified { terms: m });
            }
            m *= 2;
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn m_max(&self) -> usize {
        self.log_c.len() - 1
    }

    pub fn log_c(&self) -> &[f64] {
        &self.log_c
    }

    fn log_terms(&self, r: f64) -> impl Iterator<Item = f64> + '_ {
        let lr = 2.0 * r.ln();
        self.log_c.iter().enumerate().map(
            move |(m, lc)| {
                if m == 0 {
                    -lc
                } else {
                    m as f64 * lr - lc
                }
            },
        )
    }

    /// `log Σ_{m ≤ m_max} r^{2m}/c_m`.
    pub fn log_partial(&self, r: f64) -> f64 {
        let max = self.log_terms(r).fold(f64::NEG_INFINITY, f64::max);
        max + self.log_terms(r).map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Upper bound on the omitted terms relative to the partial sum, from
    /// the monotone ratio `r² c_m / c_{m+1}` of a log-convex moment sequence.
    pub fn relative_tail(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let n = self.log_c.len();
        let ratio = (2.0 * r.ln() + self.log_c[n - 2] - self.log_c[n - 1]).exp();
        if ratio >= 1.0 {
            return f64::INFINITY;
        }
        let last = self.log_terms(r).last().unwrap_or(f64::NEG_INFINITY);
        (last - self.log_partial(r)).exp() * ratio / (1.0 - ratio)
    }

    /// `log K(r)` with the certified tail check.
    pub fn log_kernel(&self, r: f64) -> Result<f64> {
        if self.relative_tail(r) > TAIL_TOLERANCE {
            return Err(Error::TailNotCertified {
                terms: self.log_c.len(),
            });
        }
        Ok(self.log_partial(r))
    }
}

/// `B = K e^{-kφ}` at radius `r`, evaluated in the log domain.
pub fn bergman_b(kernel: &BergmanKernel, phi: &RadialWeight, r: f64) -> Result<f64> {
    Ok(log_bergman_b(kernel, phi, r)?.exp())
}

pub fn log_bergman_b(kernel: &BergmanKernel, phi: &RadialWeight, r: f64) -> Result<f64> {
    Ok(kernel.log_kernel(r)? - kernel.k * phi.value(r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRow {
    pub k: f64,
    pub r: f64,
    pub b: f64,
    /// `φ_{zz̄}(r) / 2π`.
    pub limit_density: f64,
    /// `|k⁻¹ B - limit_density|`.
    pub gap: f64,
}

impl LimitRow {
    pub const CSV_HEADER: &'static str = "k,z,B,limit_density,gap";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.6e}",
            self.k, self.r, self.b, self.limit_density, self.gap
        )
    }
}

/// Gaps `|k⁻¹B_{kφ}(r) - φ_{zz̄}(r)/2π|` for each k.
pub fn density_limit_check(phi: &RadialWeight, r: f64, k_list: &[f64]) -> Result<Vec<LimitRow>> {
    if !(0.0..BOUNDARY_RADIUS).contains(&r) {
        return Err(Error::NearBoundary { radius: r });
    }
    let density = phi.laplacian_density(r);
    if !(density > 0.0) {
        return Err(Error::NotSubharmonic { radius: r });
    }
    let limit = density / (2.0 * PI);
    k_list
        .iter()
        .map(|&k| {
            let kernel = BergmanKernel::certified(phi, k, r)?;
            let b = bergman_b(&kernel, phi, r)?;
            Ok(LimitRow {
                k,
                r,
                b,
                limit_density: limit,
                gap: (b / k - limit).abs(),
            })
        })
        .collect()
}

type RadialOf = dyn Fn(Complex64) -> Result<RadialWeight> + Send + Sync;

/// `Φ(τ, z) = φ_τ(|z|) + 2 Re(z β(τ)) + γ(τ)` for τ near `center`.
#[derive(Clone)]
pub struct WeightFamily {
    label: String,
    radial: Arc<RadialOf>,
    beta: Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>,
    gamma: Arc<dyn Fn(Complex64) -> f64 + Send + Sync>,
    /// Whether `φ_τ` depends on `Re τ` or not at all.
    dependence: Dependence,
    center: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dependence {
    None,
    Real,
}

impl std::fmt::Debug for WeightFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightFamily")
            .field("label", &self.label)
            .finish()
    }
}

impl WeightFamily {
    /// `φ(|z|)` for every τ.
    pub fn constant(phi: RadialWeight) -> Self {
        Self {
            label: format!("constant {}", phi.label()),
            radial: Arc::new(move |_| Ok(phi.clone())),
            beta: Arc::new(|_| Complex64::new(0.0, 0.0)),
            gamma: Arc::new(|_| 0.0),
            dependence: Dependence::None,
            center: Complex64::new(0.0, 0.0),
        }
    }

    /// `|z - τ|²`.
    pub fn translated_quadratic() -> Self {
        let phi = RadialWeight::quadratic(1.0);
        Self {
            label: "|z-tau|^2".to_string(),
            radial: Arc::new(move |_| Ok(phi.clone())),
            beta: Arc::new(|t: Complex64| -t.conj()),
            gamma: Arc::new(|t: Complex64| t.norm_sqr()),
            dependence: Dependence::None,
            center: Complex64::new(0.1, -0.05),
        }
    }

    /// `|z|² + Re(τ)|z|⁴ + c|τ|²`; not plurisubharmonic when `c = 0`.
    pub fn quartic_tilt(c: f64) -> Self {
        Self {
            label: format!("|z|^2+Re(tau)|z|^4+{c}|tau|^2"),
            radial: Arc::new(|t: Complex64| Ok(RadialWeight::polynomial(&[0.0, 1.0, t.re]))),
            beta: Arc::new(|_| Complex64::new(0.0, 0.0)),
            gamma: Arc::new(move |t: Complex64| c * t.norm_sqr()),
            dependence: Dependence::Real,
            center: Complex64::new(0.0, 0.0),
        }
    }

    /// `Φ(τ, z) = ψ_{Re τ}(log |z|²)` along a geodesic, centred at `t`.
    pub fn geodesic_localization(path: &GeodesicPath, t: f64, n_s: usize, s_max: f64) -> Self {
        let path = path.clone();
        Self {
            label: format!("geodesic at t={t}"),
            radial: Arc::new(move |tau: Complex64| {
                let u = path.slice(tau.re)?;
                Ok(RadialWeight::from_radial_potential(&legendre_to_s(
                    &u, n_s, s_max,
                )?))
            }),
            beta: Arc::new(|_| Complex64::new(0.0, 0.0)),
            gamma: Arc::new(|_| 0.0),
            dependence: Dependence::Real,
            center: Complex64::new(t, 0.0),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn center(&self) -> Complex64 {
        self.center
    }

    pub fn radial_at(&self, tau: Complex64) -> Result<RadialWeight> {
        (self.radial)(tau)
    }

    pub fn value(&self, phi: &RadialWeight, tau: Complex64, z: Complex64) -> f64 {
        phi.value(z.norm()) + 2.0 * (z * (self.beta)(tau)).re + (self.gamma)(tau)
    }

    /// `log K_{kΦ_τ}(z) = log K_{kφ_τ}(|z|) + 2k Re(z β(τ)) + k γ(τ)`.
    pub fn log_kernel(&self, kernel: &BergmanKernel, tau: Complex64, z: Complex64) -> Result<f64> {
        let k = kernel.k();
        Ok(kernel.log_kernel(z.norm())?
            + 2.0 * k * (z * (self.beta)(tau)).re
            + k * (self.gamma)(tau))
    }

    fn key(&self, tau: Complex64) -> (u64, u64) {
        match self.dependence {
            Dependence::None => (0, 0),
            Dependence::Real => (tau.re.to_bits(), 0),
        }
    }
}

/// Grid of `(τ, z)` nodes for the complex-Hessian checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductGrid {
    /// Offsets of τ from the family centre.
    pub tau_offsets: Vec<Complex64>,
    /// Evaluation points in the disc.
    pub z_points: Vec<Complex64>,
    /// Finite-difference step in τ.
    pub h_tau: f64,
    /// Finite-difference step in z.
    pub h_z: f64,
}

impl Default for ProductGrid {
    fn default() -> Self {
        let tau_offsets = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.05, 0.0),
            Complex64::new(-0.05, 0.03),
        ];
        let mut z_points = Vec::new();
        for r in [0.0, 0.15, 0.3, 0.45, 0.6] {
            for j in 0..3 {
                let a = 0.7 + 2.0 * PI * j as f64 / 3.0;
                z_points.push(Complex64::from_polar(r, a));
                if r == 0.0 {
                    break;
                }
            }
        }
        Self {
            tau_offsets,
            z_points,
            h_tau: 1e-2,
            h_z: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Certified,
    /// The plurisubharmonicity precondition on `Φ` failed.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PshReport {
    pub status: CheckStatus,
    /// Smallest eigenvalue of the complex Hessian of `log K` over the nodes.
    pub min_eig: f64,
    /// Largest absolute Hessian eigenvalue encountered.
    pub scale: f64,
    /// Smallest eigenvalue of the complex Hessian of `Φ` (the precondition).
    pub weight_min_eig: f64,
    pub node_count: usize,
    pub excluded_fraction: f64,
}

impl PshReport {
    pub const CSV_HEADER: &'static str = "min_eig,node_count,excluded_fraction";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6e},{},{}",
            self.min_eig, self.node_count, self.excluded_fraction
        )
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.status == CheckStatus::Certified && self.min_eig >= -rel_tol * self.scale
    }
}

const C1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const C2: [f64; 5] = [
    -1.0 / 12.0,
    16.0 / 12.0,
    -30.0 / 12.0,
    16.0 / 12.0,
    -1.0 / 12.0,
];

/// Min eigenvalue and spectral radius of the 2×2 complex Hessian of `f` in
/// `(τ, z) = (a + ib, x + iy)` by fourth-order differences.
fn complex_hessian<F: FnMut(f64, f64, f64, f64) -> Result<f64>>(
    mut f: F,
    ht: f64,
    hz: f64,
) -> Result<(f64, f64)> {
    let off = |k: usize| k as f64 - 2.0;
    let mut second = |axis: usize| -> Result<f64> {
        let h = if axis < 2 { ht } else { hz };
        let mut acc = 0.0;
        for (k, w) in C2.iter().enumerate() {
            let mut p = [0.0; 4];
            p[axis] = off(k) * h;
            acc += w * f(p[0], p[1], p[2], p[3])?;
        }
        Ok(acc / (h * h))
    };
    let (aa, bb, xx, yy) = (second(0)?, second(1)?, second(2)?, second(3)?);
    let mut mixed = |i: usize, j: usize| -> Result<f64> {
        let (hi, hj) = (if i < 2 { ht } else { hz }, if j < 2 { ht } else { hz });
        let mut acc = 0.0;
        for (p, wp) in C1.iter().enumerate() {
            for (q, wq) in C1.iter().enumerate() {
                if *wp == 0.0 || *wq == 0.0 {
                    continue;
                }
                let mut v = [0.0; 4];
                v[i] = off(p) * hi;
                v[j] = off(q) * hj;
                acc += wp * wq * f(v[0], v[1], v[2], v[3])?;
            }
        }
        Ok(acc / (hi * hj))
    };
    let (ax, by, ay, bx) = (mixed(0, 2)?, mixed(1, 3)?, mixed(0, 3)?, mixed(1, 2)?);
    let a = 0.25 * (aa + bb);
    let c = 0.25 * (xx + yy);
    let b = Complex64::new(0.25 * (ax + by), 0.25 * (ay - bx));
    let rad = (0.25 * (a - c).powi(2) + b.norm_sqr()).sqrt();
    let mean = 0.5 * (a + c);
    Ok((mean - rad, mean.abs() + rad))
}

/// Plurisubharmonicity of `(τ, z) ↦ log K_{kΦ_τ}(z)` on the product grid.
///
/// The complex Hessian of `Φ` is checked first; if it is not positive
/// semidefinite to [`PRECONDITION_TOLERANCE`] relative, the result is
/// `Inconclusive`.
pub fn log_psh_check(family: &WeightFamily, k: f64, grid: &ProductGrid) -> Result<PshReport> {
    let cache: Mutex<HashMap<(u64, u64), (RadialWeight, Arc<BergmanKernel>)>> =
        Mutex::new(HashMap::new());
    let r_max = grid.z_points.iter().map(|z| z.norm()).fold(0.0, f64::max) + 3.0 * grid.h_z;
    if r_max >= BOUNDARY_RADIUS {
        return Err(Error::NearBoundary { radius: r_max });
    }
    let fetch = |tau: Complex64| -> Result<(RadialWeight, Arc<BergmanKernel>)> {
        let key = family.key(tau);
        if let Some(hit) = cache.lock().expect("cache").get(&key) {
            return Ok(hit.clone());
        }
        let phi = family.radial_at(tau)?;
        let kernel = Arc::new(BergmanKernel::certified(&phi, k, r_max)?);
        cache
            .lock()
            .expect("cache")
            .insert(key, (phi.clone(), kernel.clone()));
        Ok((phi, kernel))
    };

    let nodes: Vec<(Complex64, Complex64)> = grid
        .tau_offsets
        .iter()
        .flat_map(|t| grid.z_points.iter().map(move |z| (family.center + t, *z)))
        .collect();

    let mut weight_min = f64::INFINITY;
    let mut weight_scale = 0.0f64;
    for (tau, z) in &nodes {
        let (lo, sc) = complex_hessian(
            |a, b, x, y| {
                let t = tau + Complex64::new(a, b);
                let (phi, _) = fetch(t)?;
                Ok(family.value(&phi, t, z + Complex64::new(x, y)))
            },
            grid.h_tau,
            grid.h_z,
        )?;
        weight_min = weight_min.min(lo);
        weight_scale = weight_scale.max(sc);
    }
    let certified = weight_min >= -PRECONDITION_TOLERANCE * weight_scale.max(1.0);

    let results = nodes
        .par_iter()
        .map(|(tau, z)| {
            complex_hessian(
                |a, b, x, y| {
                    let t = tau + Complex64::new(a, b);
                    let (_, kernel) = fetch(t)?;
                    family.log_kernel(&kernel, t, z + Complex64::new(x, y))
                },
                grid.h_tau,
                grid.h_z,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PshReport {
        status: if certified {
            CheckStatus::Certified
        } else {
            CheckStatus::Inconclusive
        },
        min_eig: results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        scale: results.iter().map(|r| r.1).fold(0.0, f64::max),
        weight_min_eig: weight_min,
        node_count: nodes.len(),
        excluded_fraction: 0.0,
    })
}

/// Grid of `(t, s)` nodes for [`tk_positivity`].
#[derive(Debug, Clone, PartialEq)]
pub struct TkGrid {
    /// Centre times.
    pub t_nodes: Vec<f64>,
    /// Finite-difference step in t.
    pub h_t: f64,
    /// Range of `s = log|z|²` inside the disc.
    pub s_range: (f64, f64),
    /// Every `stride`-th node of the slice grid in that range is tested.
    pub stride: usize,
    /// Slice s-grid.
    pub n_s: usize,
    pub s_max: f64,
}

impl Default for TkGrid {
    fn default() -> Self {
        Self {
            t_nodes: vec![0.25, 0.5, 0.75],
            h_t: 1e-2,
            s_range: (-6.0, -0.5),
            stride: 16,
            n_s: 4097,
            s_max: 18.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TkReport {
    /// Smallest value of `T_k` over the tested nodes.
    pub min: f64,
    /// Largest absolute value of `T_k`.
    pub scale: f64,
    pub node_count: usize,
    pub excluded_fraction: f64,
}

impl TkReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.min >= -rel_tol * self.scale
    }
}

/// `T_k = W_tt Φ_ss + W_ss Φ_tt - 2 W_ts Φ_ts` with `W = log B_{kφ_t}` and
/// `Φ = ψ_t(s)` along a geodesic, in `t = Re τ` and `s = log|z|²`.
///
/// `log B` is formed pointwise first; all second derivatives then use the
/// same fourth-order stencils so the `-k Φ` part cancels against the
/// Monge-Ampère degeneracy of `Φ` up to truncation error.
pub fn tk_positivity(path: &GeodesicPath, k: f64, grid: &TkGrid) -> Result<TkReport> {
    let ds_grid = 2.0 * grid.s_max / (grid.n_s - 1) as f64;
    let j_lo = ((grid.s_range.0 + grid.s_max) / ds_grid).ceil() as usize;
    let j_hi = ((grid.s_range.1 + grid.s_max) / ds_grid).floor() as usize;
    if j_lo < 2 || j_hi + 2 >= grid.n_s || j_hi <= j_lo {
        return Err(Error::Config(
            "s_range must lie inside the slice grid".into(),
        ));
    }
    let r_max = (0.5 * (grid.s_range.1 + 3.0 * ds_grid)).exp();
    if r_max >= BOUNDARY_RADIUS {
        return Err(Error::NearBoundary { radius: r_max });
    }
    let columns: Vec<usize> = (j_lo..=j_hi).step_by(grid.stride.max(1)).collect();

    let per_t = grid
        .t_nodes
        .par_iter()
        .map(|&t0| -> Result<(f64, f64, usize, usize)> {
            if t0 - 2.0 * grid.h_t < 0.0 || t0 + 2.0 * grid.h_t > 1.0 {
                return Err(Error::OutsideInterior { t: t0 });
            }
            // Five slices in t, log B on the s-columns and their neighbours.
            let mut phi = Vec::with_capacity(5);
            let mut log_b = Vec::with_capacity(5);
            for i in 0..5 {
                let t = t0 + (i as f64 - 2.0) * grid.h_t;
                let psi = legendre_to_s(&path.slice(t)?, grid.n_s, grid.s_max)?;
                let weight = RadialWeight::from_radial_potential(&psi);
                let kernel = BergmanKernel::certified(&weight, k, r_max)?;
                let mut row = HashMap::new();
                for &j in &columns {
                    for jj in j - 2..=j + 2 {
                        row.entry(jj).or_insert_with(|| {
                            let s = psi.nodes()[jj];
                            kernel
                                .log_kernel((0.5 * s).exp())
                                .map(|lk| lk - k * psi.values()[jj])
                        });
                    }
                }
                phi.push(psi);
                log_b.push(row);
            }
            let (mut min, mut scale, mut excluded) = (f64::INFINITY, 0.0f64, 0);
            for &j in &columns {
                if (0..5).any(|i| phi[i].derivative(2)[j] <= 1e-10) {
                    excluded += 1;
                    continue;
                }
                let w = |i: usize, jj: usize| log_b[i][&jj].clone();
                let p = |i: usize, jj: usize| phi[i].values()[jj];
                let (mut w_tt, mut w_ss, mut w_ts) = (0.0, 0.0, 0.0);
                let (mut p_tt, mut p_ss, mut p_ts) = (0.0, 0.0, 0.0);
                for a in 0..5 {
                    w_tt += C2[a] * w(a, j)?;
                    w_ss += C2[a] * w(2, j + a - 2)?;
                    p_tt += C2[a] * p(a, j);
                    p_ss += C2[a] * p(2, j + a - 2);
                    for b in 0..5 {
                        let c = C1[a] * C1[b];
                        if c != 0.0 {
                            w_ts += c * w(a, j + b - 2)?;
                            p_ts += c * p(a, j + b - 2);
                        }
                    }
                }
                let (ht, hs) = (grid.h_t, ds_grid);
                let value = (w_tt / (ht * ht)) * (p_ss / (hs * hs))
                    + (w_ss / (hs * hs)) * (p_tt / (ht * ht))
                    - 2.0 * (w_ts / (ht * hs)) * (p_ts / (ht * hs));
                min = min.min(value);
                scale = scale.max(value.abs());
            }
            Ok((min, scale, columns.len() - excluded, excluded))
        })
        .collect::<Result<Vec<_>>>()?;
    let tested: usize = per_t.iter().map(|r| r.2).sum();
    let excluded: usize = per_t.iter().map(|r| r.3).sum();
    Ok(TkReport {
        min: per_t.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        scale: per_t.iter().map(|r| r.1).fold(0.0, f64::max),
        node_count: tested,
        excluded_fraction: excluded as f64 / (tested + excluded).max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_weight_moments() {
        let kernel = bergman_coefficients(&RadialWeight::polynomial(&[0.0]), 7.0, 20).unwrap();
        for (m, lc) in kernel.log_c().iter().enumerate() {
            let exact = 2.0 * PI / (m + 1) as f64;
            assert!((lc.exp() / exact - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_weight_closed_forms() {
        let phi = RadialWeight::quadratic(1.0);
        for k in [1.0, 10.0, 100.0] {
            let kernel = BergmanKernel::certified(&phi, k, 0.3).unwrap();
            let c0 = 2.0 * PI * (1.0 - (-k as f64).exp()) / k;
            assert!((kernel.log_c()[0].exp() / c0 - 1.0).abs() < 1e-12);
            let b = bergman_b(&kernel, &phi, 0.0).unwrap();
            let exact = k / (2.0 * PI * (1.0 - (-k as f64).exp()));
            assert!((b / exact - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gauge_invariance_and_truncation() {
        let phi = RadialWeight::polynomial(&[0.0, 1.0, 0.3]);
        let k = 20.0;
        let a = BergmanKernel::certified(&phi, k, 0.5).unwrap();
        let b = BergmanKernel::certified(&phi.shifted(0.7), k, 0.5).unwrap();
        let (ba, bb) = (
            bergman_b(&a, &phi, 0.5).unwrap(),
            bergman_b(&b, &phi.shifted(0.7), 0.5).unwrap(),
        );
        assert!((ba / bb - 1.0).abs() < 1e-11);
        let more = bergman_coefficients(&phi, k, 2 * a.m_max()).unwrap();
        let (k1, k2) = (a.log_kernel(0.5).unwrap(), more.log_kernel(0.5).unwrap());
        assert!(k2 >= k1 - 1e-15 && (k2 - k1).abs() < 1e-10);
    }

    #[test]
    fn scaling_of_limit() {
        let rows = density_limit_check(&RadialWeight::quadratic(2.0), 0.0, &[100.0]).unwrap();
        assert!((rows[0].limit_density - 1.0 / PI).abs() < 1e-15);
        assert!(rows[0].gap < 1e-12);
        assert!(matches!(
            density_limit_check(&RadialWeight::quadratic(1.0), 0.97, &[10.0]),
            Err(Error::NearBoundary { .. })
        ));
    }

    #[test]
    fn subharmonicity_checks() {
        assert!(RadialWeight::kinked(0.5, 4.0)
            .check_subharmonic(0.9, 200)
            .is_ok());
        assert!(RadialWeight::polynomial(&[0.0, -1.0])
            .check_subharmonic(0.9, 200)
            .is_err());
    }

    #[test]
    fn constant_family_has_no_tau_curvature() {
        let fam = WeightFamily::constant(RadialWeight::quadratic(1.0));
        let rep = log_psh_check(&fam, 10.0, &ProductGrid::default()).unwrap();
        assert_eq!(rep.status, CheckStatus::Certified);
        assert!(rep.min_eig.abs() < 1e-6 * rep.scale, "{rep:?}");
    }

    #[test]
    fn untilted_quartic_is_inconclusive() {
        let rep = log_psh_check(
            &WeightFamily::quartic_tilt(0.0),
            10.0,
            &ProductGrid::default(),
        )
        .unwrap();
        assert_eq!(rep.status, CheckStatus::Inconclusive);
    }

    #[test]
    fn tk_vanishes_on_constant_path_and_not_negative_on_orbit() {
        use crate::geodesics::weak_geodesic;
        use crate::SymplecticPotential;
        let u = SymplecticPotential::round(256).unwrap();
        let grid = TkGrid {
            t_nodes: vec![0.5],
            stride: 64,
            ..TkGrid::default()
        };
        let flat = tk_positivity(&weak_geodesic(&u, &u, 16).unwrap(), 20.0, &grid).unwrap();
        assert!(flat.scale < 1e-10, "{flat:?}");
        let orbit = weak_geodesic(&u, &u.add_affine(0.0, -0.8), 16).unwrap();
        let rep = tk_positivity(&orbit, 20.0, &grid).unwrap();
        assert!(rep.min >= -1e-6 * rep.scale && rep.scale > 0.0, "{rep:?}");
    }
}
