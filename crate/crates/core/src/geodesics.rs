//! Weak geodesics between torus-invariant potentials.
//!
//! In moment coordinates the geodesic is the straight line `u_t = (1-t)u0 + t u1`.
//! Its Legendre transform `Ψ(t, s) = ψ_t(s)` solves the homogeneous complex
//! Monge-Ampère equation in `(t, s)`; the residuals below certify that on the
//! discrete grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::{mabuchi, mabuchi_norm};
use crate::numerics::{fornberg_weights, integrate_uniform};
use crate::radial_geometry::{
    legendre_to_s, RadialPotential, SymplecticPotential, DEFAULT_NS, DEFAULT_S_MAX,
};

pub const DEFAULT_SAMPLES: usize = 64;

/// Nodes with `ψ''` at or below this are left out of residuals.
pub const EXCLUSION_FLOOR: f64 = 1e-10;

/// Step in t used by [`second_variation_fiber_integral`].
pub const VARIATION_STEP: f64 = 1e-3;

const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const D2: [f64; 5] = [
    -1.0 / 12.0,
    16.0 / 12.0,
    -30.0 / 12.0,
    16.0 / 12.0,
    -1.0 / 12.0,
];

const T_STENCIL: usize = 9;
const T_HALF: usize = T_STENCIL / 2;

/// Centred weights on unit spacing for derivatives 0..=2.
fn t_stencil() -> &'static [Vec<f64>] {
    static W: std::sync::OnceLock<Vec<Vec<f64>>> = std::sync::OnceLock::new();
    W.get_or_init(|| {
        let x: Vec<f64> = (0..T_STENCIL).map(|k| k as f64 - T_HALF as f64).collect();
        fornberg_weights(0.0, &x, 2)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    u0: SymplecticPotential,
    u1: SymplecticPotential,
    samples: usize,
}

/// The weak geodesic from `u0` to `u1`, sampled at `samples + 1` uniform times.
pub fn weak_geodesic(
    u0: &SymplecticPotential,
    u1: &SymplecticPotential,
    samples: usize,
) -> Result<GeodesicPath> {
    if u0.grid() != u1.grid() {
        return Err(Error::ShapeMismatch {
            expected: u0.len(),
            got: u1.len(),
        });
    }
    if samples < 4 {
        return Err(Error::GridTooSmall {
            min: 4,
            got: samples,
        });
    }
    Ok(GeodesicPath {
        u0: u0.clone(),
        u1: u1.clone(),
        samples,
    })
}

impl GeodesicPath {
    pub fn endpoints(&self) -> (&SymplecticPotential, &SymplecticPotential) {
        (&self.u0, &self.u1)
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn t_grid(&self) -> Vec<f64> {
        (0..=self.samples)
            .map(|i| i as f64 / self.samples as f64)
            .collect()
    }

    pub fn slice(&self, t: f64) -> Result<SymplecticPotential> {
        self.u0.combine(1.0 - t, &self.u1, t)
    }

    /// `u̇ = u1 - u0` on the x-grid, the same at every t.
    pub fn velocity(&self) -> Vec<f64> {
        self.u1
            .values()
            .iter()
            .zip(self.u0.values())
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Speed `‖u̇‖` in the Mabuchi metric at time t.
    pub fn speed(&self, t: f64) -> Result<f64> {
        mabuchi_norm(&self.velocity(), &self.slice(t)?)
    }

    pub fn complexify(&self, n_s: usize, s_max: f64) -> Result<ComplexifiedSolution> {
        let t = self.t_grid();
        let slices = t
            .par_iter()
            .map(|t| legendre_to_s(&self.slice(*t)?, n_s, s_max))
            .collect::<Result<Vec<_>>>()?;
        Ok(ComplexifiedSolution { t, slices })
    }
}

/// `Ψ(t, s) = ψ_t(s)` on a product grid, extended trivially in `Im τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexifiedSolution {
    t: Vec<f64>,
    slices: Vec<RadialPotential>,
}

/// Second derivatives of `Ψ` at a grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hessian {
    tt: f64,
    ts: f64,
    ss: f64,
}

impl ComplexifiedSolution {
    pub fn t_grid(&self) -> &[f64] {
        &self.t
    }

    pub fn slice(&self, i: usize) -> &RadialPotential {
        &self.slices[i]
    }

    pub fn s_nodes(&self) -> Vec<f64> {
        self.slices[0].nodes()
    }

    fn dt(&self) -> f64 {
        self.t[1] - self.t[0]
    }

    /// Eighth-order centred differences in t, valid for `4 <= i <= M-4`;
    /// the s-derivatives come from the Legendre jet of each slice.
    fn hessian(&self, i: usize, j: usize) -> Hessian {
        let dt = self.dt();
        let w = t_stencil();
        let mut h = Hessian {
            tt: 0.0,
            ts: 0.0,
            ss: self.slices[i].derivative(2)[j],
        };
        for k in 0..T_STENCIL {
            let sl = &self.slices[i + k - T_HALF];
            h.tt += w[2][k] * sl.values()[j];
            h.ts += w[1][k] * sl.derivative(1)[j];
        }
        h.tt /= dt * dt;
        h.ts /= dt;
        h
    }

    fn interior(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (T_HALF..self.t.len() - T_HALF, 0..self.slices[0].grid().n)
    }

    /// Smallest eigenvalue of the discrete `(t, s)` Hessian over interior nodes.
    pub fn min_hessian_eigenvalue(&self) -> f64 {
        let (ti, si) = self.interior();
        ti.into_par_iter()
            .map(|i| {
                si.clone()
                    .map(|j| {
                        let h = self.hessian(i, j);
                        let mean = 0.5 * (h.tt + h.ss);
                        let rad = (0.25 * (h.tt - h.ss).powi(2) + h.ts * h.ts).sqrt();
                        mean - rad
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrmaReport {
    /// Sup of `|det Hess Ψ|` over interior non-degenerate nodes.
    pub sup: f64,
    /// Per-time sup, `NaN` where the stencil does not fit.
    pub per_t: Vec<f64>,
    /// Fraction of interior nodes skipped for degeneracy.
    pub excluded_fraction: f64,
}

/// `det Hess_{(t,s)} Ψ` on the complexified solution.
pub fn hrma_residual_on(sol: &ComplexifiedSolution) -> HrmaReport {
    let (ti, si) = sol.interior();
    let rows: Vec<(f64, usize, usize)> = ti
        .clone()
        .into_par_iter()
        .map(|i| {
            let d2 = sol.slices[i].derivative(2);
            let mut sup = 0.0f64;
            let (mut skipped, mut total) = (0, 0);
            for j in si.clone() {
                total += 1;
                if d2[j] <= EXCLUSION_FLOOR {
                    skipped += 1;
                    continue;
                }
                let h = sol.hessian(i, j);
                sup = sup.max((h.tt * h.ss - h.ts * h.ts).abs());
            }
            (sup, skipped, total)
        })
        .collect();
    let mut per_t = vec![f64::NAN; sol.t.len()];
    let (mut skipped, mut total) = (0, 0);
    for (i, (sup, sk, to)) in ti.zip(&rows) {
        per_t[i] = *sup;
        skipped += sk;
        total += to;
    }
    HrmaReport {
        sup: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        per_t,
        excluded_fraction: skipped as f64 / total.max(1) as f64,
    }
}

/// HRMA residual at the default s-grid.
pub fn hrma_residual(path: &GeodesicPath) -> Result<HrmaReport> {
    Ok(hrma_residual_on(
        &path.complexify(DEFAULT_NS, DEFAULT_S_MAX)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeReport {
    /// `∫∫ |ü - |∂̄u̇|²| ω_t dt` over interior times.
    pub l1: f64,
    /// Inner integral over s at each time, `NaN` where the stencil does not fit.
    pub per_t: Vec<f64>,
}

/// Geodesic equation `ü = (u̇_s)² / ψ''` on the complexified solution, where
/// `u̇` is the Kähler-potential velocity at fixed s.
pub fn geodesic_ode_residual_on(sol: &ComplexifiedSolution) -> Result<OdeReport> {
    let (ti, si) = sol.interior();
    let ds = sol.slices[0].grid().step();
    let rows = ti
        .clone()
        .into_par_iter()
        .map(|i| {
            let d2 = sol.slices[i].derivative(2);
            let mut integrand = vec![0.0; d2.len()];
            for j in si.clone() {
                if d2[j] <= EXCLUSION_FLOOR {
                    continue;
                }
                let h = sol.hessian(i, j);
                // |ü - v_s²/ψ''| ψ''
                integrand[j] = (h.tt * d2[j] - h.ts * h.ts).abs();
            }
            if let Some(index) = integrand.iter().position(|v| !v.is_finite()) {
                return Err(Error::DegenerateMetric {
                    index,
                    value: d2[index],
                });
            }
            Ok(integrate_uniform(&integrand, ds))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_t = vec![f64::NAN; sol.t.len()];
    for (i, r) in ti.zip(&rows) {
        per_t[i] = *r;
    }
    let l1 = integrate_uniform(&rows, sol.dt());
    Ok(OdeReport { l1, per_t })
}

pub fn geodesic_ode_residual(path: &GeodesicPath) -> Result<OdeReport> {
    geodesic_ode_residual_on(&path.complexify(DEFAULT_NS, DEFAULT_S_MAX)?)
}

/// `(t, M(u_t))` at every sample.
pub fn mabuchi_along(path: &GeodesicPath) -> Result<Vec<(f64, f64)>> {
    path.t_grid()
        .par_iter()
        .map(|t| Ok((*t, mabuchi(&path.slice(*t)?))))
        .collect()
}

/// Smallest scaled second difference `Δ²M_i / (1 + |M_i|)`.
pub fn min_scaled_second_difference(values: &[(f64, f64)]) -> f64 {
    values
        .windows(3)
        .map(|w| (w[0].1 - 2.0 * w[1].1 + w[2].1) / (1.0 + w[1].1.abs()))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondVariation {
    /// `∫ T ds` over the non-degenerate window.
    pub integral: f64,
    /// Smallest pointwise value of the integrand.
    pub min_integrand: f64,
    /// Largest absolute value of the integrand.
    pub scale: f64,
    /// `ψ_t`-area of the skipped nodes.
    pub excluded_mass: f64,
}

/// Fibre integral of `T = W_tt Φ_ss + W_ss Φ_tt - 2 W_ts Φ_ts` with
/// `Φ = ψ_t(s)` and `W = log ψ_t''(s)`, on the default s-grid.
pub fn second_variation_fiber_integral(path: &GeodesicPath, t: f64) -> Result<SecondVariation> {
    second_variation_on(path, t, DEFAULT_NS, DEFAULT_S_MAX)
}

pub fn second_variation_on(
    path: &GeodesicPath,
    t: f64,
    n_s: usize,
    s_max: f64,
) -> Result<SecondVariation> {
    let d = VARIATION_STEP;
    if !(t - 2.0 * d >= 0.0 && t + 2.0 * d <= 1.0) {
        return Err(Error::OutsideInterior { t });
    }
    let slices = (0..5)
        .into_par_iter()
        .map(|k| legendre_to_s(&path.slice(t + (k as f64 - 2.0) * d)?, n_s, s_max))
        .collect::<Result<Vec<_>>>()?;
    let mid = &slices[2];
    let ds = mid.grid().step();
    let (p2, p3, p4) = (mid.derivative(2), mid.derivative(3), mid.derivative(4));
    let mut integrand = vec![0.0; p2.len()];
    let mut excluded = 0.0;
    let mut min = f64::INFINITY;
    let mut scale = 0.0f64;
    for j in 0..p2.len() {
        if slices
            .iter()
            .any(|sl| sl.derivative(2)[j] <= EXCLUSION_FLOOR)
        {
            excluded += p2[j] * ds;
            continue;
        }
        let (mut phi_tt, mut phi_ts, mut w_tt, mut w_ts) = (0.0, 0.0, 0.0, 0.0);
        for (k, sl) in slices.iter().enumerate() {
            let [g2, g3] = [sl.derivative(2)[j], sl.derivative(3)[j]];
            phi_tt += D2[k] * sl.values()[j];
            phi_ts += D1[k] * sl.derivative(1)[j];
            w_tt += D2[k] * g2.ln();
            w_ts += D1[k] * g3 / g2;
        }
        let (phi_tt, phi_ts, w_tt, w_ts) = (phi_tt / (d * d), phi_ts / d, w_tt / (d * d), w_ts / d);
        let l1 = p3[j] / p2[j];
        let w_ss = p4[j] / p2[j] - l1 * l1;
        let value = w_tt * p2[j] + w_ss * phi_tt - 2.0 * w_ts * phi_ts;
        integrand[j] = value;
        min = min.min(value);
        scale = scale.max(value.abs());
    }
    Ok(SecondVariation {
        integral: integrate_uniform(&integrand, ds),
        min_integrand: min,
        scale,
        excluded_mass: excluded,
    })
}

/// `d²M/dt²` along the path from the moment-side expression
/// `∫ (u̇'' / u_t'')² dx`.
pub fn second_variation_moment(path: &GeodesicPath, t: f64) -> Result<f64> {
    let u = path.slice(t)?;
    let (a, b) = (path.u0.derivative(2), path.u1.derivative(2));
    let x = u.nodes();
    let g: Vec<f64> = (0..u.len())
        .map(|i| {
            let q = x[i] * (1.0 - x[i]);
            let v = (b[i] - a[i]) * q / u.metric_factor(i);
            v * v
        })
        .collect();
    Ok(integrate_uniform(&g, u.step()))
}
