//! The rotation/dilation subgroup acting on torus-invariant potentials, its
//! Hamiltonians, and the Lichnerowicz operator `D*D` with `D = ∂̄∇^{1,0}`.
//!
//! In moment coordinates the dilation `ψ ↦ ψ(· + 2at)` acts by
//! `u ↦ u - 2atx` up to constants; the constant is fixed by `E = 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::{e_normalize, energy, f_functional, mabuchi, VolumeForm};
use crate::geodesics::{weak_geodesic, GeodesicPath};
use crate::numerics::{golden_section, integrate_uniform, uniform_derivatives, GaussRule};
use crate::radial_geometry::{inverse_metric_jet, legendre_to_s, SymplecticPotential};

/// One-parameter orbit `u_t = u0 - 2atx + c(t)` with `E(u_t) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitPath {
    base: SymplecticPotential,
    a: f64,
    t_range: (f64, f64),
    samples: usize,
}

/// Orbit through `u0` with generator strength `a`, sampled on `[0, 1]`.
pub fn orbit_geodesic(u0: &SymplecticPotential, a: f64, samples: usize) -> OrbitPath {
    OrbitPath {
        base: e_normalize(u0),
        a,
        t_range: (0.0, 1.0),
        samples: samples.max(1),
    }
}

impl OrbitPath {
    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Self {
        self.t_range = (t_min, t_max);
        self
    }

    pub fn strength(&self) -> f64 {
        self.a
    }

    pub fn base(&self) -> &SymplecticPotential {
        &self.base
    }

    pub fn t_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.t_range;
        (0..=self.samples)
            .map(|i| lo + (hi - lo) * i as f64 / self.samples as f64)
            .collect()
    }

    /// `E` changes by `2(a - c')` per unit time along the orbit, so `c = a t`;
    /// the discrete defect of that identity is removed slice by slice.
    pub fn slice(&self, t: f64) -> SymplecticPotential {
        e_normalize(&self.base.add_affine(self.a * t, -2.0 * self.a * t))
    }

    /// The same curve as a weak geodesic between its end slices.
    pub fn as_geodesic(&self) -> Result<GeodesicPath> {
        weak_geodesic(
            &self.slice(self.t_range.0),
            &self.slice(self.t_range.1),
            self.samples,
        )
    }
}

/// `h_t = a(x - x̄)` on the x-grid; `x̄ = 1/2` since `ω_u` pushes forward to `dx`.
pub fn orbit_hamiltonian(path: &OrbitPath, _t: f64) -> Vec<f64> {
    path.base
        .nodes()
        .iter()
        .map(|x| path.a * (x - 0.5))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianCheck {
    /// `sup_s |½ ∂_t ψ_t(s) - h_t(x(s))|`.
    pub velocity: f64,
    /// `|∫ h_t ω_{u_t}|`.
    pub mean: f64,
    /// `sup |dh/dx - a|`: the moment-map identity `dh = ι_W ω` in reduced form.
    pub moment_map: f64,
}

/// Compares half the Kähler-potential velocity along the orbit with `h_t`.
pub fn hamiltonian_check(
    path: &OrbitPath,
    t: f64,
    n_s: usize,
    s_max: f64,
) -> Result<HamiltonianCheck> {
    let d = 1e-3;
    let slices = (0..5)
        .map(|k| legendre_to_s(&path.slice(t + (k as f64 - 2.0) * d), n_s, s_max))
        .collect::<Result<Vec<_>>>()?;
    let w = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
    let mid = &slices[2];
    let mut velocity = 0.0f64;
    for j in 0..mid.grid().n {
        let dpsi: f64 = (0..5).map(|k| w[k] * slices[k].values()[j]).sum::<f64>() / d;
        let h = path.a * (mid.derivative(1)[j] - 0.5);
        velocity = velocity.max((0.5 * dpsi - h).abs());
    }
    let u = path.slice(t);
    let h = orbit_hamiltonian(path, t);
    let mean = integrate_uniform(&h, u.step()).abs();
    let dh = uniform_derivatives(&h, u.step())?;
    let moment_map = dh[0].iter().map(|v| (v - path.a).abs()).fold(0.0, f64::max);
    Ok(HamiltonianCheck {
        velocity,
        mean,
        moment_map,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitRow {
    pub t: f64,
    pub mabuchi: f64,
    pub f: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitReport {
    pub rows: Vec<OrbitRow>,
    /// `max_t |M(u_t) - M(u_0)|`.
    pub mabuchi_spread: f64,
    /// Smallest second difference of `F` divided by `Δt²`.
    pub min_f_curvature: f64,
    /// Minimiser of `F` along the orbit.
    pub argmin: f64,
    pub f_min: f64,
    /// `F` increases strictly on both sides of the minimiser over the sampled range.
    pub proper: bool,
}

impl OrbitReport {
    pub fn minimizer(&self, path: &OrbitPath) -> SymplecticPotential {
        path.slice(self.argmin)
    }
}

/// `M`, `F` and `E` along the sampled orbit, with the minimiser of `F`.
pub fn orbit_flatness_and_f(path: &OrbitPath, mu: &VolumeForm) -> Result<OrbitReport> {
    let t = path.t_grid();
    if t.len() < 5 {
        return Err(Error::GridTooSmall {
            min: 5,
            got: t.len(),
        });
    }
    let rows: Vec<OrbitRow> = t
        .par_iter()
        .map(|&t| {
            let u = path.slice(t);
            OrbitRow {
                t,
                mabuchi: mabuchi(&u),
                f: f_functional(&u, mu),
                energy: energy(&u),
            }
        })
        .collect();
    let m0 = mabuchi(&path.slice(0.0));
    let mabuchi_spread = rows
        .iter()
        .map(|r| (r.mabuchi - m0).abs())
        .fold(0.0, f64::max);
    let dt = t[1] - t[0];
    let min_f_curvature = rows
        .windows(3)
        .map(|w| (w[0].f - 2.0 * w[1].f + w[2].f) / (dt * dt))
        .fold(f64::INFINITY, f64::min);
    let i_min = (0..rows.len())
        .min_by(|&i, &j| rows[i].f.total_cmp(&rows[j].f))
        .unwrap_or(0);
    let proper = i_min > 0
        && i_min + 1 < rows.len()
        && rows[..=i_min].windows(2).all(|w| w[0].f > w[1].f)
        && rows[i_min..].windows(2).all(|w| w[0].f < w[1].f);
    let (lo, hi) = (t[i_min.saturating_sub(1)], t[(i_min + 1).min(t.len() - 1)]);
    let argmin = golden_section(|s| f_functional(&path.slice(s), mu), lo, hi, 1e-10);
    Ok(OrbitReport {
        f_min: f_functional(&path.slice(argmin), mu),
        rows,
        mabuchi_spread,
        min_f_curvature,
        argmin,
        proper,
    })
}

/// Default truncation of the spherical-harmonic basis.
pub const DEFAULT_DEGREE: usize = 12;

/// Legendre polynomials and their first two derivatives at `y`.
fn legendre(n: usize, y: f64) -> Vec<[f64; 3]> {
    let mut p = vec![[1.0, 0.0, 0.0]];
    if n >= 1 {
        p.push([y, 1.0, 0.0]);
    }
    for k in 1..n {
        let (a, b) = (p[k], p[k - 1]);
        let c = (2 * k + 1) as f64;
        let kk = k as f64;
        p.push([
            (c * y * a[0] - kk * b[0]) / (kk + 1.0),
            (c * (a[0] + y * a[1]) - kk * b[1]) / (kk + 1.0),
            (c * (2.0 * a[1] + y * a[2]) - kk * b[2]) / (kk + 1.0),
        ]);
    }
    p
}

/// Basis functions `q^{|m|/2} P_j(2x - 1)`, `j < count`, with two derivatives.
fn mode_basis(m: i32, count: usize, x: f64) -> Vec<[f64; 3]> {
    let mu = 0.5 * m.unsigned_abs() as f64;
    let q = x * (1.0 - x);
    let (q1, q2) = (1.0 - 2.0 * x, -2.0);
    let g = [
        q.powf(mu),
        mu * q.powf(mu - 1.0) * q1,
        mu * (mu - 1.0) * q.powf(mu - 2.0) * q1 * q1 + mu * q.powf(mu - 1.0) * q2,
    ];
    let g = if m == 0 { [1.0, 0.0, 0.0] } else { g };
    legendre(count.saturating_sub(1), 2.0 * x - 1.0)
        .into_iter()
        .take(count)
        .map(|p| {
            let (p0, p1, p2) = (p[0], 2.0 * p[1], 4.0 * p[2]);
            [
                g[0] * p0,
                g[1] * p0 + g[0] * p1,
                g[2] * p0 + 2.0 * g[1] * p1 + g[0] * p2,
            ]
        })
        .collect()
}

/// `D` on the mode `F(x) e^{imθ/2}` up to a constant factor:
/// `wF'' - mF' + (m/2) F w'/w + (m²/4) F/w`.
fn reduced_d(m: i32, w: f64, w1: f64, f: [f64; 3]) -> f64 {
    let m = m as f64;
    w * f[2] - m * f[1] + 0.5 * m * f[0] * w1 / w + 0.25 * m * m * f[0] / w
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeBlock {
    pub m: i32,
    /// `⟨D e_i, D e_j⟩`.
    pub stiffness: DMatrix<f64>,
    /// `⟨e_i, e_j⟩` against `ω_u`.
    pub gram: DMatrix<f64>,
    /// Generalised eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

/// `L = D*D` restricted to spherical harmonics of degree at most `degree`;
/// block diagonal in the angular mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LichnerowiczOperator {
    degree: usize,
    blocks: Vec<ModeBlock>,
}

fn generalized_eigenvalues(m: i32, a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned { mode: m })?;
    let l = chol.l();
    let li = l
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned { mode: m })?;
    let c = &li * a * li.transpose();
    let c = 0.5 * (&c + c.transpose());
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Assembles every angular block `|m| ≤ degree` by Gauss–Legendre quadrature.
pub fn lichnerowicz_assemble(
    u: &SymplecticPotential,
    degree: usize,
) -> Result<LichnerowiczOperator> {
    if degree < 1 {
        return Err(Error::BasisOverflow(format!(
            "degree must be at least 1, got {degree}"
        )));
    }
    if u.min_metric_factor() <= 0.0 {
        return Err(Error::NotConvex {
            index: 0,
            value: u.min_metric_factor(),
        });
    }
    let rule = GaussRule::new(4 * degree + 64);
    let nodes: Vec<(f64, f64, [f64; 3])> = rule
        .mapped(0.0, 1.0)
        .map(|(x, wq)| (x, wq, inverse_metric_jet(x, u.eval_curvature(x))))
        .collect();
    let d = degree as i32;
    let blocks = (-d..=d)
        .into_par_iter()
        .map(|m| {
            let count = degree + 1 - m.unsigned_abs() as usize;
            let mut a = DMatrix::zeros(count, count);
            let mut g = DMatrix::zeros(count, count);
            for (x, wq, [w, w1, _]) in &nodes {
                let basis = mode_basis(m, count, *x);
                let de: Vec<f64> = basis.iter().map(|f| reduced_d(m, *w, *w1, *f)).collect();
                for i in 0..count {
                    for j in 0..count {
                        a[(i, j)] += wq * de[i] * de[j];
                        g[(i, j)] += wq * basis[i][0] * basis[j][0];
                    }
                }
            }
            let eigenvalues = generalized_eigenvalues(m, &a, &g)?;
            Ok(ModeBlock {
                m,
                stiffness: a,
                gram: g,
                eigenvalues,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LichnerowiczOperator { degree, blocks })
}

impl LichnerowiczOperator {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn blocks(&self) -> &[ModeBlock] {
        &self.blocks
    }

    pub fn block(&self, m: i32) -> Option<&ModeBlock> {
        self.blocks.iter().find(|b| b.m == m)
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.eigenvalues.last().copied())
            .fold(0.0, f64::max)
    }

    /// `min λ / max λ`; nonnegative for a positive semidefinite operator.
    pub fn psd_residual(&self) -> f64 {
        let min = self
            .blocks
            .iter()
            .flat_map(|b| b.eigenvalues.first().copied())
            .fold(f64::INFINITY, f64::min);
        (-min).max(0.0) / self.largest_eigenvalue()
    }

    /// `max_m ‖A_m - A_{-m}‖ / max_m ‖A_m‖`: zero when `L` commutes with
    /// complex conjugation.
    pub fn realness_residual(&self) -> f64 {
        let scale = self
            .blocks
            .iter()
            .map(|b| b.stiffness.norm())
            .fold(0.0, f64::max);
        let diff = (1..=self.degree as i32)
            .filter_map(|m| Some((self.block(m)?, self.block(-m)?)))
            .map(|(p, n)| (&p.stiffness - &n.stiffness).norm())
            .fold(0.0, f64::max);
        diff / scale
    }

    /// Number of eigenvalues below `tol` times the largest.
    pub fn kernel_dimension(&self, tol: f64) -> usize {
        let cut = tol * self.largest_eigenvalue();
        self.blocks
            .iter()
            .map(|b| b.eigenvalues.iter().filter(|v| **v < cut).count())
            .sum()
    }

    pub fn block_kernel_dimension(&self, m: i32, tol: f64) -> usize {
        let cut = tol * self.largest_eigenvalue();
        self.block(m)
            .map(|b| b.eigenvalues.iter().filter(|v| **v < cut).count())
            .unwrap_or(0)
    }

    /// Smallest eigenvalue above the kernel cut.
    pub fn spectral_gap(&self, tol: f64) -> f64 {
        let cut = tol * self.largest_eigenvalue();
        self.blocks
            .iter()
            .flat_map(|b| b.eigenvalues.iter().copied())
            .filter(|v| *v >= cut)
            .fold(f64::INFINITY, f64::min)
    }

    pub const CSV_HEADER: &'static str = "mode_m,eigenvalue_rank,eigenvalue";

    pub fn csv_rows(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| {
                b.eigenvalues
                    .iter()
                    .enumerate()
                    .map(move |(i, v)| format!("{},{},{:.12e}", b.m, i, v))
            })
            .collect()
    }
}

/// Kernel dimension at `degree` that agrees with the one at `degree + 2`.
pub fn stable_kernel_dimension(u: &SymplecticPotential, degree: usize, tol: f64) -> Result<usize> {
    let a = lichnerowicz_assemble(u, degree)?.kernel_dimension(tol);
    let b = lichnerowicz_assemble(u, degree + 2)?.kernel_dimension(tol);
    if a != b {
        return Err(Error::Invalid(format!(
            "kernel dimension not stable under refinement: {a} at degree {degree}, {b} at {}",
            degree + 2
        )));
    }
    Ok(a)
}

/// A function `Σ_m F_m(x) e^{imθ/2}` given by basis coefficients per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeExpansion {
    pub terms: Vec<(i32, Vec<f64>)>,
}

impl ModeExpansion {
    pub fn constant() -> Self {
        Self {
            terms: vec![(0, vec![1.0])],
        }
    }

    /// `x - 1/2`, the Hamiltonian of the rotation field at any metric.
    pub fn moment_map() -> Self {
        Self {
            terms: vec![(0, vec![0.0, 0.5])],
        }
    }

    /// `sqrt(x(1-x)) e^{±iθ/2}`.
    pub fn first_harmonic(sign: i32) -> Self {
        Self {
            terms: vec![(sign.signum(), vec![1.0])],
        }
    }

    /// The zonal harmonic of degree `l`.
    pub fn zonal(l: usize) -> Self {
        let mut c = vec![0.0; l + 1];
        c[l] = 1.0;
        Self {
            terms: vec![(0, c)],
        }
    }
}

/// `‖D_u v‖ / ‖v‖`; zero exactly when `v` is a complex Hamiltonian of a
/// holomorphic vector field.
pub fn complex_hamiltonian_check(
    v: &ModeExpansion,
    u: &SymplecticPotential,
    degree: usize,
) -> Result<f64> {
    let op = lichnerowicz_assemble(u, degree)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (m, c) in &v.terms {
        let block = op
            .block(*m)
            .ok_or_else(|| Error::BasisOverflow(format!("mode {m} exceeds degree {degree}")))?;
        if c.len() > block.gram.nrows() {
            return Err(Error::BasisOverflow(format!(
                "{} coefficients in mode {m}, block holds {}",
                c.len(),
                block.gram.nrows()
            )));
        }
        let mut full = nalgebra::DVector::zeros(block.gram.nrows());
        for (i, ci) in c.iter().enumerate() {
            full[i] = *ci;
        }
        num += full.dot(&(&block.stiffness * &full));
        den += full.dot(&(&block.gram * &full));
    }
    if den <= 0.0 {
        return Err(Error::Invalid("zero function".into()));
    }
    Ok((num.max(0.0) / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::energy;
    use crate::radial_geometry::DEFAULT_NX;

    fn round() -> SymplecticPotential {
        SymplecticPotential::round(DEFAULT_NX).unwrap()
    }

    fn generic() -> SymplecticPotential {
        SymplecticPotential::from_jet(DEFAULT_NX, |x| {
            let k = std::f64::consts::PI;
            let c = 0.08;
            let (s, co) = (k * x).sin_cos();
            [
                c * s,
                c * k * co,
                -c * k * k * s,
                -c * k.powi(3) * co,
                c * k.powi(4) * s,
            ]
        })
        .unwrap()
    }

    #[test]
    fn orbit_slices_are_normalized_and_compose() {
        let p = orbit_geodesic(&generic(), 0.7, 16);
        for t in [0.0, 0.4, 1.0, -1.3] {
            assert!(energy(&p.slice(t)).abs() < 1e-13, "{}", energy(&p.slice(t)));
        }
        let q = orbit_geodesic(&p.slice(0.3), 0.7, 16);
        let diff = q
            .slice(0.5)
            .values()
            .iter()
            .zip(p.slice(0.8).values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
        let still = orbit_geodesic(&round(), 0.0, 4);
        assert_eq!(still.slice(0.0), still.slice(1.0));
    }

    #[test]
    fn hamiltonian_of_round_orbit() {
        let p = orbit_geodesic(&round(), 1.0, 16);
        let h = orbit_hamiltonian(&p, 0.0);
        let x = p.base().nodes();
        assert!(h.iter().zip(&x).all(|(h, x)| (h - (x - 0.5)).abs() < 1e-15));
        let c = hamiltonian_check(&p, 0.3, 1025, 16.0).unwrap();
        assert!(
            c.velocity < 1e-8 && c.mean < 1e-14 && c.moment_map < 1e-10,
            "{c:?}"
        );
    }

    #[test]
    fn lichnerowicz_at_round_metric() {
        let op = lichnerowicz_assemble(&round(), 10).unwrap();
        assert_eq!(op.kernel_dimension(1e-6), 4);
        assert_eq!(op.block_kernel_dimension(0, 1e-6), 2);
        assert_eq!(op.block_kernel_dimension(1, 1e-6), 1);
        assert!(op.psd_residual() < 1e-8);
        assert!(op.realness_residual() < 1e-8, "{}", op.realness_residual());
        assert_eq!(stable_kernel_dimension(&round(), 10, 1e-6).unwrap(), 4);
    }

    #[test]
    fn lichnerowicz_away_from_round_metric() {
        let op = lichnerowicz_assemble(&generic(), 10).unwrap();
        assert_eq!(op.kernel_dimension(1e-6), 4);
        assert_eq!(op.block_kernel_dimension(0, 1e-6), 2);
        assert!(op.realness_residual() > 1e-4);
    }

    #[test]
    fn complex_hamiltonians() {
        let u = round();
        assert!(complex_hamiltonian_check(&ModeExpansion::constant(), &u, 8).unwrap() < 1e-12);
        assert!(complex_hamiltonian_check(&ModeExpansion::moment_map(), &u, 8).unwrap() < 1e-6);
        assert!(
            complex_hamiltonian_check(&ModeExpansion::first_harmonic(1), &u, 8).unwrap() < 1e-6
        );
        assert!(
            complex_hamiltonian_check(&ModeExpansion::first_harmonic(-1), &u, 8).unwrap() < 1e-6
        );
        assert!(complex_hamiltonian_check(&ModeExpansion::zonal(2), &u, 8).unwrap() > 1.0);
        assert!(matches!(
            complex_hamiltonian_check(&ModeExpansion::zonal(9), &u, 8),
            Err(Error::BasisOverflow(_))
        ));
    }

    #[test]
    fn f_along_orbit() {
        let p = orbit_geodesic(&round(), 0.5, 40).with_range(-2.0, 2.0);
        let r = orbit_flatness_and_f(&p, &VolumeForm::reference()).unwrap();
        assert!(r.mabuchi_spread < 1e-6);
        assert!(r.min_f_curvature > 0.0 && r.proper);
        assert!(r.argmin.abs() < 1e-6, "{}", r.argmin);
        let tilted = orbit_flatness_and_f(&p, &VolumeForm::tilted(0.4).unwrap()).unwrap();
        assert!(tilted.proper && tilted.argmin.abs() > 0.05);
    }
}
