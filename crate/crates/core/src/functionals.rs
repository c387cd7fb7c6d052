//! Energy functionals on the space of potentials.
//!
//! The Kähler potential of `ψ` relative to `ψ₀` is `φ = ψ - ψ₀`. All
//! functionals are evaluated two ways:
//!
//! * on the moment side, pulling every integral back along the moment map
//!   so the area form becomes `dx` and the reference area becomes `y'(x) dx`
//!   where `y = ψ₀'(u'(x))`; the integrands are smooth up to the poles.
//! * on the complex side, as quadratures over the s-grid with tail terms.

use crate::error::{Error, Result};
use crate::numerics::{integrate_uniform, uniform_weights};
use crate::radial_geometry::{
    integrate_x, reference_jet, scalar_curvature, MetricDensity, RadialPotential,
    SymplecticPotential,
};

/// Average scalar curvature of the sphere with unit area.
pub const R_BAR: f64 = 2.0;

/// Density floor for the s-side entropy integrand.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// A smooth probability measure on the sphere, given by a polynomial
/// density `m(y)` against the reference area in its moment coordinate `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeForm {
    coeffs: Vec<f64>,
}

impl VolumeForm {
    /// The reference area form `ω₀`.
    pub fn reference() -> Self {
        Self { coeffs: vec![1.0] }
    }

    /// `m(y) = 1 + β(2y - 1)`, requires |β| < 1.
    pub fn tilted(beta: f64) -> Result<Self> {
        Self::from_polynomial(vec![1.0 - beta, 2.0 * beta])
    }

    /// Density with the given monomial coefficients in `y`; must be positive
    /// on [0, 1] and have unit mass.
    pub fn from_polynomial(coeffs: Vec<f64>) -> Result<Self> {
        let mass: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c / (k + 1) as f64)
            .sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { mass });
        }
        let form = Self { coeffs };
        for i in 0..=1000 {
            let y = i as f64 / 1000.0;
            let m = form.density(y);
            if !(m > 0.0) {
                return Err(Error::NegativeDensity { index: i, value: m });
            }
        }
        Ok(form)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * y + k as f64 * c)
    }

    /// Density against `ds` on an s-grid.
    pub fn on_s_grid(&self, s_nodes: &[f64]) -> Vec<f64> {
        s_nodes
            .iter()
            .map(|s| {
                let r = reference_jet(*s);
                self.density(r[1]) * r[2]
            })
            .collect()
    }
}

/// Moment-side integrand data at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTerms {
    /// Relative Kähler potential `φ` at the point with moment coordinate x.
    pub phi: f64,
    /// Reference moment coordinate `y`.
    pub y: f64,
    /// `log y'`, so that the reference area is `e^{log y'} dx`.
    pub log_dy: f64,
}

/// Local terms from `(x, f, f', f'')`.
pub fn local_terms(x: f64, f: f64, f1: f64, f2: f64) -> LocalTerms {
    let e = f1.exp();
    let d = 1.0 - x + x * e;
    let n = 1.0 + x * (1.0 - x) * f2;
    LocalTerms {
        phi: x * f1 - f - d.ln(),
        y: x * e / d,
        log_dy: f1 + n.ln() - 2.0 * d.ln(),
    }
}

/// Local terms at the grid nodes, with the reference area rescaled to unit
/// discrete mass so that constants shift every functional exactly.
fn terms(u: &SymplecticPotential) -> Vec<LocalTerms> {
    let (f, f1, f2) = (u.derivative(0), u.derivative(1), u.derivative(2));
    let mut out: Vec<LocalTerms> = u
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, x)| local_terms(*x, f[i], f1[i], f2[i]))
        .collect();
    let w = uniform_weights(u.len(), u.step());
    let mass: f64 = out.iter().zip(&w).map(|(t, w)| w * t.log_dy.exp()).sum();
    let shift = mass.ln();
    for t in &mut out {
        t.log_dy -= shift;
    }
    out
}

fn quad(u: &SymplecticPotential, g: impl Fn(&LocalTerms) -> f64) -> f64 {
    let w = uniform_weights(u.len(), u.step());
    terms(u).iter().zip(&w).map(|(t, w)| w * g(t)).sum()
}

/// `E(φ) = ∫ φ (ω_φ + ω₀)`.
pub fn energy(u: &SymplecticPotential) -> f64 {
    quad(u, |t| t.phi * (1.0 + t.log_dy.exp()))
}

/// `E^{Ric ω₀}(φ) = ∫ φ Ric ω₀`, with `Ric ω₀ = R̄ ω₀` on the round sphere.
pub fn energy_ricci(u: &SymplecticPotential) -> f64 {
    quad(u, |t| R_BAR * t.phi * t.log_dy.exp())
}

/// Relative entropy of `ω_φ` with respect to `ω₀`.
pub fn entropy_moment(u: &SymplecticPotential) -> f64 {
    quad(u, |t| -t.log_dy)
}

/// Mabuchi K-energy `(R̄/2) E - E^{Ric} + H`.
pub fn mabuchi(u: &SymplecticPotential) -> f64 {
    quad(u, |t| {
        let dy = t.log_dy.exp();
        0.5 * R_BAR * t.phi * (1.0 + dy) - R_BAR * t.phi * dy - t.log_dy
    })
}

/// Calabi energy `∫ (R - R̄)² ω`.
pub fn calabi_energy(u: &SymplecticPotential) -> Result<f64> {
    let r = scalar_curvature(u)?;
    let sq: Vec<f64> = r.iter().map(|r| (r - R_BAR).powi(2)).collect();
    Ok(integrate_uniform(&sq, u.step()))
}

/// `∫ φ μ - E(φ)` evaluated on the representative with `E = 0`, which is
/// `∫ φ μ - E(φ)/2`; invariant under adding constants.
pub fn f_functional(u: &SymplecticPotential, mu: &VolumeForm) -> f64 {
    let mass = quad(u, |t| mu.density(t.y) * t.log_dy.exp());
    quad(u, |t| {
        let dy = t.log_dy.exp();
        t.phi * mu.density(t.y) * dy / mass - 0.5 * t.phi * (1.0 + dy)
    })
}

/// `∫ φ μ - E(φ)` on the given representative (no normalisation).
pub fn f_functional_raw(u: &SymplecticPotential, mu: &VolumeForm) -> f64 {
    let mass = quad(u, |t| mu.density(t.y) * t.log_dy.exp());
    quad(u, |t| {
        let dy = t.log_dy.exp();
        t.phi * mu.density(t.y) * dy / mass - t.phi * (1.0 + dy)
    })
}

/// Representative of `u` modulo constants with `E = 0`.
pub fn e_normalize(u: &SymplecticPotential) -> SymplecticPotential {
    // Adding c to f shifts φ by -c and E by -2c.
    u.add_affine(0.5 * energy(u), 0.0)
}

/// Mabuchi norm `sqrt(∫ v² ω_u)` of a tangent vector sampled on the x-grid.
pub fn mabuchi_norm(v: &[f64], u: &SymplecticPotential) -> Result<f64> {
    if v.len() != u.len() {
        return Err(Error::ShapeMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    if u.min_metric_factor() <= crate::radial_geometry::DEGENERACY_FLOOR {
        return Err(Error::DegenerateMetric {
            index: 0,
            value: u.min_metric_factor(),
        });
    }
    let sq: Vec<f64> = v.iter().map(|a| a * a).collect();
    Ok(integrate_uniform(&sq, u.step()).sqrt())
}

/// Length of the weak geodesic from `u0` to `u1`: its speed is constant and
/// equals `u1 - u0` in moment coordinates.
pub fn geodesic_distance(u0: &SymplecticPotential, u1: &SymplecticPotential) -> Result<f64> {
    if u0.grid() != u1.grid() {
        return Err(Error::ShapeMismatch {
            expected: u0.len(),
            got: u1.len(),
        });
    }
    let diff: Vec<f64> = u1
        .values()
        .iter()
        .zip(u0.values())
        .map(|(a, b)| a - b)
        .collect();
    mabuchi_norm(&diff, u0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalReport {
    pub energy: f64,
    pub energy_ricci: f64,
    pub entropy: f64,
    pub mabuchi: f64,
    pub calabi: f64,
    pub f: f64,
}

impl FunctionalReport {
    pub const CSV_HEADER: &'static str = "E,E_ric,entropy,mabuchi,calabi,F";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.energy, self.energy_ricci, self.entropy, self.mabuchi, self.calabi, self.f
        )
    }
}

pub fn functional_report(u: &SymplecticPotential, mu: &VolumeForm) -> Result<FunctionalReport> {
    Ok(FunctionalReport {
        energy: energy(u),
        energy_ricci: energy_ricci(u),
        entropy: entropy_moment(u),
        mabuchi: mabuchi(u),
        calabi: calabi_energy(u)?,
        f: f_functional(u, mu),
    })
}

fn check_tails(u_rel: &[f64], psi: &RadialPotential) -> Result<()> {
    let n = psi.grid().n;
    if u_rel.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: u_rel.len(),
        });
    }
    let h = psi.grid().step();
    if ((u_rel[1] - u_rel[0]) / h).abs() > 1e-3 {
        return Err(Error::UnboundedTail { side: "left" });
    }
    if ((u_rel[n - 1] - u_rel[n - 2]) / h).abs() > 1e-3 {
        return Err(Error::UnboundedTail { side: "right" });
    }
    Ok(())
}

/// Complex-side `E`: `∫ u_rel (ψ'' + ψ₀'') ds` with tail masses.
pub fn energy_e(u_rel: &[f64], psi: &RadialPotential) -> Result<f64> {
    check_tails(u_rel, psi)?;
    let reference = RadialPotential::reference(psi.grid().n, psi.s_max())?;
    Ok(integrate_x(u_rel, &MetricDensity::new(psi)?)?
        + integrate_x(u_rel, &MetricDensity::new(&reference)?)?)
}

/// Complex-side `E^α = ∫ u_rel α ds` for a (1,1)-form with density `alpha` in s.
pub fn energy_e_alpha(u_rel: &[f64], psi: &RadialPotential, alpha: &[f64]) -> Result<f64> {
    let n = psi.grid().n;
    for len in [u_rel.len(), alpha.len()] {
        if len != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let prod: Vec<f64> = u_rel.iter().zip(alpha).map(|(a, b)| a * b).collect();
    Ok(integrate_uniform(&prod, psi.grid().step()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    /// Window integral plus the tail estimate.
    pub value: f64,
    /// Size of the tail estimate included in `value`.
    pub tail_remainder: f64,
    /// Area carried by nodes skipped for having density below the floor.
    pub excluded_mass: f64,
}

/// Complex-side entropy `∫ log(ψ''/ψ₀'') ψ'' ds`.
///
/// Beyond the window the density ratio tends to a constant; the tails are
/// estimated with the edge value of the log-ratio times the tail mass.
pub fn entropy(psi: &RadialPotential) -> Result<EntropyReport> {
    let d2 = psi.derivative(2);
    if let Some(index) = d2.iter().position(|v| *v < 0.0) {
        return Err(Error::NegativeDensity {
            index,
            value: d2[index],
        });
    }
    let nodes = psi.nodes();
    let h = psi.grid().step();
    let mut integrand = vec![0.0; d2.len()];
    let mut excluded = 0.0;
    for (i, (s, rho)) in nodes.iter().zip(d2).enumerate() {
        if *rho > ENTROPY_FLOOR {
            integrand[i] = (rho / reference_jet(*s)[2]).ln() * rho;
        } else {
            excluded += rho * h;
        }
    }
    let n = d2.len();
    let log_ratio = |i: usize| (d2[i] / reference_jet(nodes[i])[2]).ln();
    let rho = MetricDensity::new(psi)?;
    let (left, right) = rho.tails();
    let tail = log_ratio(0) * left + log_ratio(n - 1) * right;
    Ok(EntropyReport {
        value: integrate_uniform(&integrand, h) + tail,
        tail_remainder: tail.abs(),
        excluded_mass: excluded,
    })
}

/// K-energy computed entirely on the complex side; used to cross-check
/// [`mabuchi`].
pub fn mabuchi_radial(psi: &RadialPotential) -> Result<f64> {
    let rel = psi.relative();
    let reference = RadialPotential::reference(psi.grid().n, psi.s_max())?;
    let e = energy_e(&rel, psi)?;
    // Ric ω₀ = R̄ ω₀ for the round metric.
    let e_ric = R_BAR * integrate_x(&rel, &MetricDensity::new(&reference)?)?;
    Ok(0.5 * R_BAR * e - e_ric + entropy(psi)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientIdentity {
    /// Centred-difference derivative of `M(u_t)`.
    pub dm_dt: f64,
    /// `∫ φ̇ (R - R̄) ω` with `φ̇` the Kähler-potential velocity.
    pub pairing: f64,
    /// `|dM/dt + pairing|`.
    pub residual: f64,
}

impl GradientIdentity {
    pub fn relative(&self) -> f64 {
        self.residual / (1.0 + self.dm_dt.abs())
    }
}

/// Checks `dM/dt = -∫ φ̇ (R - R̄) ω` at `t` for a differentiable family.
///
/// The Kähler-potential velocity at fixed `s` is minus the symplectic
/// velocity at the matching moment coordinate, so the pairing is computed
/// as `-∫ u̇ (R - R̄) dx`.
pub fn gradient_identity_check<F>(family: F, t: f64, h: f64) -> Result<GradientIdentity>
where
    F: Fn(f64) -> Result<SymplecticPotential>,
{
    let up = family(t + h)?;
    let um = family(t - h)?;
    let u = family(t)?;
    let dm_dt = (mabuchi(&up) - mabuchi(&um)) / (2.0 * h);
    let r = scalar_curvature(&u)?;
    let integrand: Vec<f64> = up
        .values()
        .iter()
        .zip(um.values())
        .zip(&r)
        .map(|((a, b), r)| -(a - b) / (2.0 * h) * (r - R_BAR))
        .collect();
    let pairing = integrate_uniform(&integrand, u.step());
    Ok(GradientIdentity {
        dm_dt,
        pairing,
        residual: (dm_dt + pairing).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_geometry::{
        legendre_to_s, ricci_density, DEFAULT_NS, DEFAULT_NX, DEFAULT_S_MAX,
    };

    fn round() -> SymplecticPotential {
        SymplecticPotential::round(DEFAULT_NX).unwrap()
    }

    #[test]
    fn round_metric_zeroes_everything() {
        let r = functional_report(&round(), &VolumeForm::reference()).unwrap();
        for v in [
            r.energy,
            r.energy_ricci,
            r.entropy,
            r.mabuchi,
            r.calabi,
            r.f,
        ] {
            assert!(v.abs() < 1e-13, "{r:?}");
        }
    }

    #[test]
    fn constants_shift_energy_by_two() {
        // f + c shifts φ by -c.
        let u = round().add_affine(-0.7, 0.0);
        assert!((energy(&u) - 1.4).abs() < 1e-13);
        assert!((energy_ricci(&u) - 1.4).abs() < 1e-13);
        assert!(mabuchi(&u).abs() < 1e-13);
        assert!(f_functional(&u, &VolumeForm::reference()).abs() < 1e-13);
        assert!((f_functional_raw(&u, &VolumeForm::reference()) + 0.7).abs() < 1e-13);
    }

    #[test]
    fn orbit_points_have_zero_k_energy_and_zero_calabi() {
        let fine = SymplecticPotential::round(2049).unwrap();
        for b in [-1.5, 0.3, 2.0] {
            let u = fine.add_affine(0.1, -b);
            assert!(mabuchi(&u).abs() < 1e-8, "{}", mabuchi(&u));
            assert!(calabi_energy(&u).unwrap() < 1e-20);
            // Closed form of the entropy along the orbit.
            let c: f64 = (-b).exp();
            let h = b + 2.0 * (c * c.ln() - c + 1.0) / (c - 1.0);
            assert!(
                (entropy_moment(&u) - h).abs() < 1e-8,
                "{} {h}",
                entropy_moment(&u)
            );
        }
    }

    #[test]
    fn norms_and_distances() {
        let u = round();
        let x = u.nodes();
        let c = vec![-2.5; x.len()];
        assert!((mabuchi_norm(&c, &u).unwrap() - 2.5).abs() < 1e-13);
        let v: Vec<f64> = x.iter().map(|x| x - 0.5).collect();
        assert!((mabuchi_norm(&v, &u).unwrap() - (1.0f64 / 12.0).sqrt()).abs() < 1e-13);
        assert_eq!(mabuchi_norm(&vec![0.0; x.len()], &u).unwrap(), 0.0);

        let bump = SymplecticPotential::from_jet(DEFAULT_NX, |x| {
            [x * (1.0 - x), 1.0 - 2.0 * x, -2.0, 0.0, 0.0]
        })
        .unwrap();
        let d = geodesic_distance(&u, &bump).unwrap();
        assert!((d - (1.0f64 / 30.0).sqrt()).abs() < 1e-9, "{d}");
        assert!((geodesic_distance(&u, &u.add_affine(0.4, 0.0)).unwrap() - 0.4).abs() < 1e-13);
    }

    #[test]
    fn volume_form_validation() {
        assert!(VolumeForm::tilted(0.5).is_ok());
        assert!(matches!(
            VolumeForm::tilted(1.5),
            Err(Error::NegativeDensity { .. })
        ));
        assert!(matches!(
            VolumeForm::from_polynomial(vec![2.0]),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn complex_side_agrees_with_moment_side() {
        let u = SymplecticPotential::from_jet(DEFAULT_NX, |x| {
            let c = 0.1;
            [c * x * (1.0 - x), c * (1.0 - 2.0 * x), -2.0 * c, 0.0, 0.0]
        })
        .unwrap();
        let psi = legendre_to_s(&u, DEFAULT_NS, DEFAULT_S_MAX).unwrap();
        let m_s = mabuchi_radial(&psi).unwrap();
        assert!((m_s - mabuchi(&u)).abs() < 1e-7, "{m_s} vs {}", mabuchi(&u));
        let e_s = energy_e(&psi.relative(), &psi).unwrap();
        assert!((e_s - energy(&u)).abs() < 1e-7);
        let h_s = entropy(&psi).unwrap();
        assert!((h_s.value - entropy_moment(&u)).abs() < 1e-7);
    }

    #[test]
    fn energy_alpha_edge_cases() {
        let psi = RadialPotential::reference(257, 12.0).unwrap();
        let z = vec![0.0; 257];
        let ric = ricci_density(&psi).unwrap().values;
        assert_eq!(energy_e_alpha(&z, &psi, &ric).unwrap(), 0.0);
        assert_eq!(energy_e_alpha(&vec![1.0; 257], &psi, &z).unwrap(), 0.0);
        assert!(energy_e_alpha(&z, &psi, &ric[..10]).is_err());
    }

    #[test]
    fn unbounded_relative_potential_is_rejected() {
        let psi = RadialPotential::reference(257, 12.0).unwrap();
        let ramp: Vec<f64> = psi.nodes().iter().map(|s| 0.5 * s).collect();
        assert!(matches!(
            energy_e(&ramp, &psi),
            Err(Error::UnboundedTail { .. })
        ));
    }

    #[test]
    fn gradient_identity_on_trivial_paths() {
        let u = round();
        let constant = gradient_identity_check(|_| Ok(u.clone()), 0.3, 1e-4).unwrap();
        assert_eq!(constant.residual, 0.0);
        let shift = gradient_identity_check(|t| Ok(u.add_affine(t, 0.0)), 0.3, 1e-4).unwrap();
        assert!(shift.residual < 1e-10, "{shift:?}");
    }
}
