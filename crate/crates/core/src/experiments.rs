//! Reproducible experiment suites: configuration, the seeded potential
//! ensemble, the `M + sF` minimiser, and drivers that turn module results
//! into CSV tables and pass/fail assertions.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bergman::{
    density_limit_check, log_psh_check, tk_positivity, CheckStatus, LimitRow, ProductGrid,
    RadialWeight, TkGrid, WeightFamily,
};
use crate::error::{Error, Result};
use crate::functionals::{
    calabi_energy, e_normalize, energy, entropy_moment, functional_report, geodesic_distance,
    local_terms, mabuchi, FunctionalReport, VolumeForm,
};
use crate::geodesics::{
    geodesic_ode_residual_on, hrma_residual_on, mabuchi_along, min_scaled_second_difference,
    second_variation_fiber_integral, second_variation_moment, weak_geodesic, GeodesicPath,
};
use crate::numerics::uniform_weights;
use crate::radial_geometry::{total_curvature, RadialPotential, SymplecticPotential};
use crate::symmetry::{
    hamiltonian_check, lichnerowicz_assemble, orbit_flatness_and_f, orbit_geodesic,
    stable_kernel_dimension, OrbitPath,
};

/// Settings shared by every suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_x: usize,
    pub n_s: usize,
    pub s_max: f64,
    /// Time samples per geodesic.
    pub samples: usize,
    pub pairs: usize,
    pub chen_pairs: usize,
    pub k_list: Vec<f64>,
    pub bergman_z: Vec<f64>,
    /// Semiclassical parameter for the positivity checks.
    pub psh_k: f64,
    pub s_list: Vec<f64>,
    pub starts: usize,
    pub sine_modes: usize,
    pub tilt: f64,
    pub orbit_strength: f64,
    pub orbit_t_min: f64,
    pub orbit_t_max: f64,
    pub degree: usize,
    pub convexity_tol: f64,
    pub chen_tol: f64,
    pub hrma_tol: f64,
    pub ode_tol: f64,
    pub gradient_tol: f64,
    pub max_iterations: usize,
    pub distance_tol: f64,
    pub svg: bool,
    pub potential_a: Option<String>,
    pub potential_b: Option<String>,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            n_x: 512,
            n_s: 2048,
            s_max: 18.0,
            samples: 64,
            pairs: 20,
            chen_pairs: 50,
            k_list: vec![5.0, 10.0, 20.0, 50.0, 100.0],
            bergman_z: vec![0.0, 0.3],
            psh_k: 50.0,
            s_list: vec![0.3, 0.1, 0.03, 0.01],
            starts: 3,
            sine_modes: 6,
            tilt: 0.3,
            orbit_strength: 0.5,
            orbit_t_min: -2.0,
            orbit_t_max: 2.0,
            degree: 12,
            convexity_tol: 1e-6,
            chen_tol: 1e-6,
            hrma_tol: 1e-4,
            ode_tol: 1e-3,
            gradient_tol: 1e-8,
            max_iterations: 10_000,
            distance_tol: 1e-4,
            svg: true,
            potential_a: None,
            potential_b: None,
            out: "out".to_string(),
        }
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("{key}: cannot parse '{}' as a number", v.trim()))
            })
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "n_x" => self.n_x = parse_num(key, v)?,
            "n_s" => self.n_s = parse_num(key, v)?,
            "s_max" => self.s_max = parse_num(key, v)?,
            "samples" => self.samples = parse_num(key, v)?,
            "pairs" => self.pairs = parse_num(key, v)?,
            "chen_pairs" => self.chen_pairs = parse_num(key, v)?,
            "k_list" => self.k_list = parse_list(key, v)?,
            "bergman_z" => self.bergman_z = parse_list(key, v)?,
            "psh_k" => self.psh_k = parse_num(key, v)?,
            "s_list" => self.s_list = parse_list(key, v)?,
            "starts" => self.starts = parse_num(key, v)?,
            "sine_modes" => self.sine_modes = parse_num(key, v)?,
            "tilt" => self.tilt = parse_num(key, v)?,
            "orbit_strength" => self.orbit_strength = parse_num(key, v)?,
            "orbit_t_min" => self.orbit_t_min = parse_num(key, v)?,
            "orbit_t_max" => self.orbit_t_max = parse_num(key, v)?,
            "degree" => self.degree = parse_num(key, v)?,
            "convexity_tol" => self.convexity_tol = parse_num(key, v)?,
            "chen_tol" => self.chen_tol = parse_num(key, v)?,
            "hrma_tol" => self.hrma_tol = parse_num(key, v)?,
            "ode_tol" => self.ode_tol = parse_num(key, v)?,
            "gradient_tol" => self.gradient_tol = parse_num(key, v)?,
            "max_iterations" => self.max_iterations = parse_num(key, v)?,
            "distance_tol" => self.distance_tol = parse_num(key, v)?,
            "svg" => self.svg = parse_num(key, v)?,
            "potential_a" => self.potential_a = Some(v.to_string()),
            "potential_b" => self.potential_b = Some(v.to_string()),
            "out" => self.out = v.to_string(),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_x", self.n_x),
            ("n_s", self.n_s),
            ("samples", self.samples),
            ("pairs", self.pairs),
            ("chen_pairs", self.chen_pairs),
            ("starts", self.starts),
            ("sine_modes", self.sine_modes),
            ("degree", self.degree),
            ("max_iterations", self.max_iterations),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        let positive = [
            ("s_max", self.s_max),
            ("psh_k", self.psh_k),
            ("convexity_tol", self.convexity_tol),
            ("chen_tol", self.chen_tol),
            ("hrma_tol", self.hrma_tol),
            ("ode_tol", self.ode_tol),
            ("gradient_tol", self.gradient_tol),
            ("distance_tol", self.distance_tol),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if self.n_x < 16 || self.n_s < 16 || self.samples < 8 {
            return Err(Error::Config(
                "grids need n_x, n_s >= 16 and samples >= 8".into(),
            ));
        }
        if self.s_list.is_empty() {
            return Err(Error::Config("s_list must not be empty".into()));
        }
        if self.s_list.iter().any(|s| !(*s > 0.0)) || self.s_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(
                "s_list must be positive and strictly descending".into(),
            ));
        }
        if self.k_list.is_empty() || self.k_list.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::Config(
                "k_list must be a non-empty list of positive numbers".into(),
            ));
        }
        if self.bergman_z.iter().any(|z| !(0.0..0.95).contains(z)) {
            return Err(Error::Config(
                "bergman_z entries must lie in [0, 0.95)".into(),
            ));
        }
        if !(self.tilt.abs() < 1.0) {
            return Err(Error::Config("tilt must lie in (-1, 1)".into()));
        }
        if !(self.orbit_t_max > self.orbit_t_min) {
            return Err(Error::Config("orbit_t_max must exceed orbit_t_min".into()));
        }
        Ok(())
    }
}

/// `f = b x + Σ_j c_j sin(jπx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPotential {
    pub linear: f64,
    pub sines: Vec<f64>,
}

impl SeriesPotential {
    pub fn jet(&self, x: f64) -> [f64; 5] {
        let mut o = [self.linear * x, self.linear, 0.0, 0.0, 0.0];
        for (j, c) in self.sines.iter().enumerate() {
            let k = (j + 1) as f64 * PI;
            let (s, co) = (k * x).sin_cos();
            o[0] += c * s;
            o[1] += c * k * co;
            o[2] -= c * k * k * s;
            o[3] -= c * k * k * k * co;
            o[4] += c * k * k * k * k * s;
        }
        o
    }

    pub fn to_potential(&self, n: usize) -> Result<SymplecticPotential> {
        SymplecticPotential::from_jet(n, |x| self.jet(x))
    }

    fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.linear)
            .chain(self.sines.iter().copied())
            .collect()
    }

    fn from_coefficients(c: &[f64]) -> Self {
        Self {
            linear: c[0],
            sines: c[1..].to_vec(),
        }
    }
}

/// Smallest admissible `1 + x(1-x) f''` for ensemble draws.
pub const ADMISSIBILITY_FLOOR: f64 = 0.1;

/// Band-limited ensemble `Σ_{j≤8} a_j sin(jπx)`, `a_j ~ U[-0.2/j², 0.2/j²]`,
/// rejecting draws whose metric factor falls below [`ADMISSIBILITY_FLOOR`].
pub fn random_series(rng: &mut ChaCha8Rng) -> SeriesPotential {
    loop {
        let sines: Vec<f64> = (1..=8)
            .map(|j| {
                let b = 0.2 / (j * j) as f64;
                rng.gen_range(-b..=b)
            })
            .collect();
        let s = SeriesPotential { linear: 0.0, sines };
        // Metric factor on a fine probe grid.
        let ok = (0..=400).all(|i| {
            let x = i as f64 / 400.0;
            1.0 + x * (1.0 - x) * s.jet(x)[2] >= ADMISSIBILITY_FLOOR
        });
        if ok {
            return s;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` random endpoint pairs, drawn sequentially from the seed.
pub fn random_pairs(
    seed: u64,
    n: usize,
    n_x: usize,
) -> Result<Vec<(SymplecticPotential, SymplecticPotential)>> {
    let mut r = rng(seed);
    let draws: Vec<(SeriesPotential, SeriesPotential)> = (0..n)
        .map(|_| (random_series(&mut r), random_series(&mut r)))
        .collect();
    draws
        .par_iter()
        .map(|(a, b)| Ok((a.to_potential(n_x)?, b.to_potential(n_x)?)))
        .collect()
}

/// `M + sF` and its exact gradient with respect to the coefficients of a
/// [`SeriesPotential`], for the discrete functionals on the x-grid.
pub struct Objective {
    n_x: usize,
    s: f64,
    mu: VolumeForm,
    modes: usize,
}

impl Objective {
    pub fn new(n_x: usize, s: f64, mu: VolumeForm, modes: usize) -> Self {
        Self { n_x, s, mu, modes }
    }

    pub fn dimension(&self) -> usize {
        self.modes + 1
    }

    fn basis_jet(&self, k: usize, x: f64) -> [f64; 3] {
        if k == 0 {
            return [x, 1.0, 0.0];
        }
        let w = k as f64 * PI;
        let (s, c) = (w * x).sin_cos();
        [s, w * c, -w * w * s]
    }

    pub fn value(&self, c: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(c)?.0)
    }

    /// Value and gradient; fails if the coefficients leave the convex cone.
    pub fn value_and_gradient(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = SeriesPotential::from_coefficients(c).to_potential(self.n_x)?;
        let x = u.nodes();
        let w = uniform_weights(u.len(), u.step());
        let (f, f1, f2) = (u.derivative(0), u.derivative(1), u.derivative(2));
        let n = x.len();
        let t: Vec<_> = (0..n)
            .map(|i| local_terms(x[i], f[i], f1[i], f2[i]))
            .collect();
        let e: Vec<f64> = t.iter().map(|t| t.log_dy.exp()).collect();
        let a: f64 = (0..n).map(|i| w[i] * e[i]).sum();
        let y_norm: Vec<f64> = e.iter().map(|v| v / a).collect();
        let phi_bar: f64 = (0..n).map(|i| w[i] * t[i].phi * y_norm[i]).sum();

        // K-energy with R̄ = 2: Σw φ - Σw φ Y - Σw L + log A.
        let m_val: f64 = (0..n)
            .map(|i| w[i] * (t[i].phi * (1.0 - y_norm[i]) - t[i].log_dy))
            .sum::<f64>()
            + a.ln();
        let mut g_phi: Vec<f64> = (0..n).map(|i| w[i] * (1.0 - y_norm[i])).collect();
        let mut g_l: Vec<f64> = (0..n)
            .map(|i| -w[i] * y_norm[i] * (t[i].phi - phi_bar) - w[i] + w[i] * y_norm[i])
            .collect();
        let mut g_y = vec![0.0; n];

        // F = Σ w φ Z - ½ Σ w φ (1 + Y), Z = m(y) e^L / B.
        let md: Vec<f64> = t.iter().map(|t| self.mu.density(t.y)).collect();
        let b: f64 = (0..n).map(|i| w[i] * md[i] * e[i]).sum();
        let z: Vec<f64> = (0..n).map(|i| md[i] * e[i] / b).collect();
        let p: f64 = (0..n).map(|i| w[i] * t[i].phi * z[i]).sum();
        let f_val = p - 0.5
            * (0..n)
                .map(|i| w[i] * t[i].phi * (1.0 + y_norm[i]))
                .sum::<f64>();
        for i in 0..n {
            g_phi[i] += self.s * (w[i] * z[i] - 0.5 * w[i] * (1.0 + y_norm[i]));
            g_l[i] += self.s
                * (w[i] * z[i] * (t[i].phi - p) - 0.5 * w[i] * y_norm[i] * (t[i].phi - phi_bar));
            let dm = self.mu.derivative(t[i].y) / md[i];
            g_y[i] += self.s * w[i] * dm * z[i] * (t[i].phi - p);
        }

        let mut grad = vec![0.0; self.dimension()];
        for (k, gk) in grad.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..n {
                let [b0, b1, b2] = self.basis_jet(k, x[i]);
                let q = x[i] * (1.0 - x[i]);
                let nn = 1.0 + q * f2[i];
                let y = t[i].y;
                acc += g_phi[i] * (-b0 + (x[i] - y) * b1)
                    + g_l[i] * ((1.0 - 2.0 * y) * b1 + q / nn * b2)
                    + g_y[i] * y * (1.0 - y) * b1;
            }
            *gk = acc;
        }
        Ok((m_val + self.s * f_val, grad))
    }
}

/// Iterate of the `M + sF` minimiser.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerState {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Largest objective increase accepted as rounding noise.
pub const ROUNDING_FLOOR: f64 = 1e-13;

/// Damped Newton iteration with Armijo backtracking. The Hessian is the
/// symmetrised difference quotient of the exact gradient; when it does not
/// give a descent direction the step falls back to steepest descent. The
/// objective never increases by more than [`ROUNDING_FLOOR`] across
/// accepted steps.
pub fn minimize(
    obj: &Objective,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<MinimizerState> {
    let dim = obj.dimension();
    let mut c = start.to_vec();
    let (mut val, mut grad) = obj.value_and_gradient(&c)?;
    let mut iterations = 0;
    while norm(&grad) >= tol && iterations < max_iter {
        iterations += 1;
        let h = 1e-5;
        let mut hess = nalgebra::DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[j] += h;
            cm[j] -= h;
            let gp = obj.value_and_gradient(&cp).map(|r| r.1);
            let gm = obj.value_and_gradient(&cm).map(|r| r.1);
            if let (Ok(gp), Ok(gm)) = (gp, gm) {
                for i in 0..dim {
                    hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
        }
        let hess = 0.5 * (&hess + hess.transpose());
        let g = nalgebra::DVector::from_column_slice(&grad);
        let newton = hess.clone().cholesky().map(|ch| -ch.solve(&g));
        let mut dir = match newton {
            Some(d) if d.dot(&g) < 0.0 => d,
            _ => -g.clone(),
        };
        let mut slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for attempt in 0..60 {
            let trial: Vec<f64> = c
                .iter()
                .zip(dir.iter())
                .map(|(a, d)| a + step * d)
                .collect();
            if let Ok((tv, tg)) = obj.value_and_gradient(&trial) {
                let armijo = tv <= val + 1e-4 * step * slope;
                // Below the rounding floor of the objective only the gradient
                // still carries information.
                let flat = tv <= val + ROUNDING_FLOOR && norm(&tg) < 0.5 * norm(&grad);
                if armijo || flat {
                    c = trial;
                    val = tv;
                    grad = tg;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
            if attempt == 30 {
                dir = -g.clone();
                slope = dir.dot(&g);
                step = 1.0;
            }
        }
        if !accepted {
            break;
        }
    }
    let gradient_norm = norm(&grad);
    Ok(MinimizerState {
        coefficients: c,
        objective: val,
        gradient_norm,
        iterations,
        converged: gradient_norm < tol,
    })
}

/// A CSV table produced by a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: String,
    pub rows: Vec<String>,
    /// Column indices to plot as `(x, y)`, if any.
    pub plot: Option<(usize, usize)>,
}

impl Table {
    fn new(file: &str, header: &str) -> Self {
        Self {
            file: file.to_string(),
            header: header.to_string(),
            rows: Vec::new(),
            plot: None,
        }
    }

    fn with_plot(mut self, x: usize, y: usize) -> Self {
        self.plot = Some((x, y));
        self
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub property: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(property: &str, passed: bool, detail: String) -> Self {
        Self {
            property: property.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutput {
    pub name: &'static str,
    pub tables: Vec<Table>,
    pub assertions: Vec<Assertion>,
}

impl SuiteOutput {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// One `PASS`/`FAIL` line per assertion.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for a in &self.assertions {
            let tag = if a.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{tag} {}: {} ({})", self.name, a.property, a.detail);
        }
        s
    }
}

/// Worst deviations of total curvature and total area over the potentials a
/// suite touches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Topology {
    pub curvature: f64,
    pub area: f64,
    pub count: usize,
}

pub const CURVATURE_TOLERANCE: f64 = 1e-6;
pub const AREA_TOLERANCE: f64 = 1e-8;
pub const AREA_RESOLUTION: f64 = 1e-10;
const MAX_AREA_NODES: usize = 1 << 17;

impl Topology {
    /// The area is integrated on the s-grid, doubling `n_s` until two
    /// successive totals agree to [`AREA_RESOLUTION`]: sharp curvature
    /// concentrations in `x` become narrow peaks of `ψ''` in `s`.
    pub fn of(u: &SymplecticPotential, n_s: usize, s_max: f64) -> Result<Self> {
        let mass = |n| -> Result<f64> {
            let psi = crate::radial_geometry::legendre_to_s(u, n, s_max)?;
            Ok(crate::radial_geometry::MetricDensity::new(&psi)?.total_mass())
        };
        let mut n = n_s;
        let mut prev = mass(n)?;
        while n < MAX_AREA_NODES {
            n = 2 * n - 1;
            let next = mass(n)?;
            let settled = (next - prev).abs() <= AREA_RESOLUTION;
            prev = next;
            if settled {
                break;
            }
        }
        Ok(Self {
            curvature: (total_curvature(u)? - 2.0).abs(),
            area: (prev - 1.0).abs(),
            count: 1,
        })
    }

    pub fn of_radial(psi: &RadialPotential) -> Result<Self> {
        let rho = crate::radial_geometry::MetricDensity::new(psi)?;
        Ok(Self {
            curvature: 0.0,
            area: (rho.total_mass() - 1.0).abs(),
            count: 1,
        })
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            curvature: self.curvature.max(o.curvature),
            area: self.area.max(o.area),
            count: self.count + o.count,
        }
    }

    pub fn passes(&self) -> bool {
        self.curvature <= CURVATURE_TOLERANCE && self.area <= AREA_TOLERANCE
    }

    fn assertion(&self) -> Assertion {
        Assertion::new(
            "total curvature 2 and unit area for every potential",
            self.passes(),
            format!(
                "max |int R - 2| = {:.3e}, max |int rho - 1| = {:.3e} over {} potentials",
                self.curvature, self.area, self.count
            ),
        )
    }
}

fn topology_all<'a, I>(us: I, cfg: &ExperimentConfig) -> Result<Topology>
where
    I: IntoParallelIterator<Item = &'a SymplecticPotential>,
{
    us.into_par_iter()
        .map(|u| Topology::of(u, cfg.n_s, cfg.s_max))
        .try_reduce(Topology::default, |a, b| Ok(a.merge(b)))
}

fn convexity_tolerance(values: &[(f64, f64)], tol: f64) -> f64 {
    let scale = values.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
    tol * (1.0 + scale)
}

/// Smallest second difference of `M` along the path divided by `Δt²`,
/// together with the allowed floor `-tol (1 + max|M|)`.
fn convexity_of(path: &GeodesicPath, tol: f64) -> Result<(Vec<(f64, f64)>, f64, f64)> {
    let m = mabuchi_along(path)?;
    let dt = 1.0 / path.samples() as f64;
    let worst = min_scaled_second_difference(&m) * dt * dt;
    Ok((m.clone(), worst, -convexity_tolerance(&m, tol)))
}

/// Endpoints for the single-path suite: the supplied pair or a seeded draw.
pub fn geodesic_suite(
    cfg: &ExperimentConfig,
    endpoints: Option<(SymplecticPotential, SymplecticPotential)>,
) -> Result<SuiteOutput> {
    let (u0, u1) = match endpoints {
        Some(p) => p,
        None => random_pairs(cfg.seed, 1, cfg.n_x)?.remove(0),
    };
    let path = weak_geodesic(&u0, &u1, cfg.samples)?;
    let sol = path.complexify(cfg.n_s, cfg.s_max)?;
    let hrma = hrma_residual_on(&sol);
    let ode = geodesic_ode_residual_on(&sol)?;
    let times = path.t_grid();
    let slices: Vec<SymplecticPotential> = times
        .iter()
        .map(|&t| path.slice(t))
        .collect::<Result<_>>()?;
    let rows: Vec<String> = slices
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            Ok(format!(
                "{},{},{},{},{},{},{}",
                times[i],
                mabuchi(u),
                energy(u),
                entropy_moment(u),
                path.speed(times[i])?,
                hrma.per_t[i],
                ode.per_t[i]
            ))
        })
        .collect::<Result<_>>()?;
    let mut table =
        Table::new("geodesic.csv", "t,mabuchi,E,entropy,speed,hrma_sup,ode_l1").with_plot(0, 1);
    table.rows = rows;

    let (_, worst, floor) = convexity_of(&path, cfg.convexity_tol)?;
    let sv = second_variation_fiber_integral(&path, 0.5)?;
    let sv_ref = second_variation_moment(&path, 0.5)?;
    let sv_rel = (sv.integral - sv_ref).abs() / sv_ref.abs().max(1e-12);
    let topo = topology_all(&slices, cfg)?;
    let assertions = vec![
        Assertion::new(
            "K-energy convex along the weak geodesic",
            worst >= floor,
            format!("min second difference {worst:.3e}, floor {floor:.3e}"),
        ),
        Assertion::new(
            "complexified path solves homogeneous Monge-Ampere",
            hrma.sup <= cfg.hrma_tol,
            format!(
                "sup residual {:.3e}, tolerance {:.1e}",
                hrma.sup, cfg.hrma_tol
            ),
        ),
        Assertion::new(
            "complexified path solves the geodesic equation",
            ode.l1 <= cfg.ode_tol,
            format!("L1 residual {:.3e}, tolerance {:.1e}", ode.l1, cfg.ode_tol),
        ),
        Assertion::new(
            "fibre integral matches second derivative of K-energy",
            sv_rel <= 1e-3 && sv.min_integrand >= -1e-6 * sv.scale,
            format!(
                "relative gap {sv_rel:.3e}, min integrand {:.3e} (scale {:.3e})",
                sv.min_integrand, sv.scale
            ),
        ),
        topo.assertion(),
    ];
    Ok(SuiteOutput {
        name: "geodesic",
        tables: vec![table],
        assertions,
    })
}

pub fn convexity_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let pairs = random_pairs(cfg.seed, cfg.pairs, cfg.n_x)?;
    let results: Vec<(Vec<(f64, f64)>, f64, f64)> = pairs
        .par_iter()
        .map(|(a, b)| convexity_of(&weak_geodesic(a, b, cfg.samples)?, cfg.convexity_tol))
        .collect::<Result<_>>()?;
    let mut along = Table::new("convexity.csv", "pair,t,mabuchi");
    let mut summary = Table::new("convexity_summary.csv", "pair,min_second_difference,floor");
    let mut violations = 0;
    for (p, (m, worst, floor)) in results.iter().enumerate() {
        for (t, v) in m {
            along.rows.push(format!("{p},{t},{v}"));
        }
        summary.rows.push(format!("{p},{worst},{floor}"));
        if worst < floor {
            violations += 1;
        }
    }
    let endpoints: Vec<&SymplecticPotential> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    let topo = topology_all(endpoints, cfg)?;
    let assertions = vec![
        Assertion::new(
            "K-energy convex along every sampled weak geodesic",
            violations == 0,
            format!("{violations} violations over {} pairs", pairs.len()),
        ),
        topo.assertion(),
    ];
    Ok(SuiteOutput {
        name: "convexity",
        tables: vec![along, summary],
        assertions,
    })
}

pub fn chen_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let pairs = random_pairs(cfg.seed.wrapping_add(1), cfg.chen_pairs, cfg.n_x)?;
    let round = SymplecticPotential::round(cfg.n_x)?;
    let rows: Vec<(f64, f64, f64, f64, f64, f64)> = pairs
        .par_iter()
        .map(|(u0, u1)| {
            let (m0, m1) = (mabuchi(u0), mabuchi(u1));
            let d = geodesic_distance(u0, u1)?;
            let c0 = calabi_energy(u0)?;
            let slack = m1 - m0 + d * c0.sqrt();
            Ok((m0, m1, d, c0, slack, mabuchi(u1) - mabuchi(&round)))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(
        "chen.csv",
        "pair,mabuchi_u0,mabuchi_u1,distance,calabi_u0,slack,mabuchi_u1_minus_round",
    );
    for (p, r) in rows.iter().enumerate() {
        table.rows.push(format!(
            "{p},{},{},{},{},{},{}",
            r.0, r.1, r.2, r.3, r.4, r.5
        ));
    }
    let min_slack = rows.iter().fold(f64::INFINITY, |m, r| m.min(r.4));
    let min_over_round = rows.iter().fold(f64::INFINITY, |m, r| m.min(r.1));
    let m_round = mabuchi(&round);
    let endpoints: Vec<&SymplecticPotential> = pairs
        .iter()
        .flat_map(|(a, b)| [a, b])
        .chain(std::iter::once(&round))
        .collect();
    let topo = topology_all(endpoints, cfg)?;
    let assertions = vec![
        Assertion::new(
            "K-energy drop bounded by distance times root Calabi energy",
            min_slack >= -cfg.chen_tol,
            format!("min slack {min_slack:.3e} over {} pairs", pairs.len()),
        ),
        Assertion::new(
            "round metric minimises the K-energy",
            min_over_round >= -cfg.chen_tol && m_round.abs() <= 1e-8,
            format!("M(round) = {m_round:.3e}, min M over samples {min_over_round:.3e}"),
        ),
        topo.assertion(),
    ];
    Ok(SuiteOutput {
        name: "chen",
        tables: vec![table],
        assertions,
    })
}

fn monotone_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn bergman_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let weights = [
        ("quadratic", RadialWeight::quadratic(1.0)),
        ("polynomial", RadialWeight::polynomial(&[0.0, 1.0, 0.5])),
        ("kinked", RadialWeight::kinked(0.2, 3.0)),
    ];
    let mut tables = Vec::new();
    let mut assertions = Vec::new();
    let k_max = cfg.k_list.iter().copied().fold(0.0, f64::max);
    for (name, phi) in &weights {
        let mut table = Table::new(&format!("bergman_{name}.csv"), LimitRow::CSV_HEADER);
        let mut all_monotone = true;
        for &r in &cfg.bergman_z {
            let rows = density_limit_check(phi, r, &cfg.k_list)?;
            all_monotone &=
                monotone_decreasing(&rows.iter().map(|row| row.gap).collect::<Vec<_>>());
            if *name == "quadratic" && r == 0.0 {
                let last = rows
                    .iter()
                    .find(|row| row.k == k_max)
                    .expect("k_max is in the list");
                let exact = k_max / (2.0 * PI * (1.0 - (-k_max).exp()));
                assertions.push(Assertion::new(
                    "Bergman density of |z|^2 at the origin approaches 1/(2 pi)",
                    last.gap <= 0.02 / (2.0 * PI) && (last.b / exact - 1.0).abs() <= 1e-10,
                    format!(
                        "gap {:.3e} at k = {k_max}, closed-form ratio - 1 = {:.1e}",
                        last.gap,
                        last.b / exact - 1.0
                    ),
                ));
            }
            table.rows.extend(rows.iter().map(LimitRow::csv_row));
        }
        if *name != "quadratic" {
            assertions.push(Assertion::new(
                &format!("density gap decays monotonically in k for the {name} weight"),
                all_monotone,
                format!("k in {:?}, |z| in {:?}", cfg.k_list, cfg.bergman_z),
            ));
        }
        tables.push(table);
    }

    let pair = random_pairs(cfg.seed, 1, cfg.n_x)?.remove(0);
    let random_path = weak_geodesic(&pair.0, &pair.1, cfg.samples)?;
    let round = SymplecticPotential::round(cfg.n_x)?;
    let orbit = orbit_geodesic(&round, cfg.orbit_strength, cfg.samples).as_geodesic()?;
    let families = [
        WeightFamily::translated_quadratic(),
        WeightFamily::quartic_tilt(2.0),
        WeightFamily::geodesic_localization(&random_path, 0.5, cfg.n_s, cfg.s_max),
        WeightFamily::quartic_tilt(0.0),
    ];
    let grid = ProductGrid::default();
    let reports: Vec<_> = families
        .par_iter()
        .map(|f| log_psh_check(f, cfg.psh_k, &grid))
        .collect::<Result<_>>()?;
    let mut psh = Table::new(
        "bergman_psh.csv",
        "family,status,min_eig,scale,node_count,excluded_fraction",
    );
    let mut certified = 0;
    let mut certified_pass = true;
    for (f, r) in families.iter().zip(&reports) {
        psh.rows.push(format!(
            "{},{:?},{:.6e},{:.6e},{},{}",
            f.label(),
            r.status,
            r.min_eig,
            r.scale,
            r.node_count,
            r.excluded_fraction
        ));
        if r.status == CheckStatus::Certified {
            certified += 1;
            certified_pass &= r.passes(1e-6);
        }
    }
    let worst = reports
        .iter()
        .filter(|r| r.status == CheckStatus::Certified)
        .map(|r| r.min_eig / r.scale.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    assertions.push(Assertion::new(
        "log Bergman kernel plurisubharmonic in (tau, z) on certified families",
        certified >= 3 && certified_pass,
        format!("{certified} certified families, worst min_eig/scale {worst:.3e}"),
    ));
    tables.push(psh);

    let tk_grid = TkGrid {
        n_s: 2 * cfg.n_s + 1,
        s_max: cfg.s_max,
        ..TkGrid::default()
    };
    let paths = [("orbit", &orbit), ("random", &random_path)];
    let tk: Vec<_> = paths
        .par_iter()
        .map(|(_, p)| tk_positivity(p, cfg.psh_k, &tk_grid))
        .collect::<Result<_>>()?;
    let mut tk_table = Table::new(
        "bergman_tk.csv",
        "path,min,scale,node_count,excluded_fraction",
    );
    for ((name, _), r) in paths.iter().zip(&tk) {
        tk_table.rows.push(format!(
            "{name},{:.6e},{:.6e},{},{}",
            r.min, r.scale, r.node_count, r.excluded_fraction
        ));
    }
    assertions.push(Assertion::new(
        "Bergman term of the second variation is nonnegative",
        tk.iter().all(|r| r.passes(1e-4)),
        tk.iter()
            .zip(&paths)
            .map(|(r, (n, _))| format!("{n}: min {:.3e} scale {:.3e}", r.min, r.scale))
            .collect::<Vec<_>>()
            .join("; "),
    ));
    tables.push(tk_table);
    let touched = [&pair.0, &pair.1, &round];
    assertions.push(topology_all(touched, cfg)?.assertion());
    Ok(SuiteOutput {
        name: "bergman",
        tables,
        assertions,
    })
}

/// Kernel cut relative to the largest eigenvalue.
pub const KERNEL_TOLERANCE: f64 = 1e-6;

pub fn lichnerowicz_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let round = SymplecticPotential::round(cfg.n_x)?;
    let mut r = rng(cfg.seed.wrapping_add(3));
    let generic = random_series(&mut r).to_potential(cfg.n_x)?;
    let (op_round, op_generic) = rayon::join(
        || lichnerowicz_assemble(&round, cfg.degree),
        || lichnerowicz_assemble(&generic, cfg.degree),
    );
    let (op_round, op_generic) = (op_round?, op_generic?);
    let stable = stable_kernel_dimension(&round, cfg.degree, KERNEL_TOLERANCE);
    let header = crate::symmetry::LichnerowiczOperator::CSV_HEADER;
    let mut t_round = Table::new("lichnerowicz.csv", header);
    t_round.rows = op_round.csv_rows();
    let mut t_generic = Table::new("lichnerowicz_generic.csv", header);
    t_generic.rows = op_generic.csv_rows();
    let kernel = op_round.kernel_dimension(KERNEL_TOLERANCE);
    let assertions = vec![
        Assertion::new(
            "round metric: four-dimensional kernel stable under refinement",
            kernel == 4 && matches!(stable, Ok(4)),
            format!(
                "kernel {kernel} at degree {}, refinement {}",
                cfg.degree,
                match &stable {
                    Ok(d) => format!("agrees ({d})"),
                    Err(e) => e.to_string(),
                }
            ),
        ),
        Assertion::new(
            "round metric: operator positive semidefinite and real",
            op_round.psd_residual() <= 1e-8 && op_round.realness_residual() <= 1e-8,
            format!(
                "psd {:.3e}, realness {:.3e}; non-extremal sample: realness {:.3e}, kernel {}",
                op_round.psd_residual(),
                op_round.realness_residual(),
                op_generic.realness_residual(),
                op_generic.kernel_dimension(KERNEL_TOLERANCE)
            ),
        ),
        topology_all([&round, &generic], cfg)?.assertion(),
    ];
    Ok(SuiteOutput {
        name: "lichnerowicz",
        tables: vec![t_round, t_generic],
        assertions,
    })
}

/// The orbit geodesic is exact, so its residuals face tighter bounds than
/// those of a general weak geodesic.
pub const ORBIT_HRMA_TOLERANCE: f64 = 1e-6;
pub const ORBIT_ODE_TOLERANCE: f64 = 1e-4;

fn orbit_path(cfg: &ExperimentConfig) -> Result<OrbitPath> {
    let round = SymplecticPotential::round(cfg.n_x)?;
    Ok(orbit_geodesic(&round, cfg.orbit_strength, cfg.samples)
        .with_range(cfg.orbit_t_min, cfg.orbit_t_max))
}

pub fn orbit_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let path = orbit_path(cfg)?;
    let mu = VolumeForm::tilted(cfg.tilt)?;
    let report = orbit_flatness_and_f(&path, &mu)?;
    let sol = path.as_geodesic()?.complexify(cfg.n_s, cfg.s_max)?;
    let hrma = hrma_residual_on(&sol);
    let ode = geodesic_ode_residual_on(&sol)?;
    let mut table = Table::new("orbit.csv", "t,mabuchi,F,E,hrma_sup").with_plot(0, 2);
    for (i, r) in report.rows.iter().enumerate() {
        table.rows.push(format!(
            "{},{},{},{},{}",
            r.t, r.mabuchi, r.f, r.energy, hrma.per_t[i]
        ));
    }
    let (lo, hi) = (cfg.orbit_t_min, cfg.orbit_t_max);
    let probe: Vec<f64> = [0.25, 0.5, 0.75]
        .iter()
        .map(|p| lo + p * (hi - lo))
        .collect();
    let ham: Vec<_> = probe
        .par_iter()
        .map(|&t| hamiltonian_check(&path, t, cfg.n_s, cfg.s_max))
        .collect::<Result<_>>()?;
    let vel = ham.iter().map(|h| h.velocity).fold(0.0, f64::max);
    let mom = ham
        .iter()
        .map(|h| h.moment_map.max(h.mean))
        .fold(0.0, f64::max);
    let slices: Vec<SymplecticPotential> = path.t_grid().iter().map(|&t| path.slice(t)).collect();
    let assertions = vec![
        Assertion::new(
            "orbit geodesic solves homogeneous Monge-Ampere and the geodesic equation",
            hrma.sup <= ORBIT_HRMA_TOLERANCE && ode.l1 <= ORBIT_ODE_TOLERANCE,
            format!("HRMA sup {:.3e}, ODE L1 {:.3e}", hrma.sup, ode.l1),
        ),
        Assertion::new(
            "half the potential velocity is the Hamiltonian of the rotation field",
            vel <= 1e-8 && mom <= 1e-8,
            format!("velocity gap {vel:.3e}, moment-map and mean defects {mom:.3e}"),
        ),
        Assertion::new(
            "K-energy constant along the orbit",
            report.mabuchi_spread <= 1e-6,
            format!("spread {:.3e}", report.mabuchi_spread),
        ),
        Assertion::new(
            "F strictly convex along the orbit with a unique interior minimiser",
            report.min_f_curvature > 0.0 && report.proper,
            format!(
                "min curvature {:.3e}, argmin t = {:.6}, F = {:.6e}",
                report.min_f_curvature, report.argmin, report.f_min
            ),
        ),
        topology_all(&slices, cfg)?.assertion(),
    ];
    Ok(SuiteOutput {
        name: "orbit",
        tables: vec![table],
        assertions,
    })
}

/// Random starts for the minimiser: ensemble draws plus a random orbit offset.
fn random_starts(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let mut r = rng(cfg.seed.wrapping_add(2));
    (0..cfg.starts)
        .map(|_| {
            let mut s = random_series(&mut r);
            s.linear = r.gen_range(-0.5..=0.5);
            s.sines.resize(cfg.sine_modes, 0.0);
            s.coefficients()
        })
        .collect()
}

pub fn uniqueness_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mu = VolumeForm::tilted(cfg.tilt)?;
    let path = orbit_path(cfg)?;
    let report = orbit_flatness_and_f(&path, &mu)?;
    let target = report.minimizer(&path);
    let starts = random_starts(cfg);
    let jobs: Vec<(usize, usize)> = (0..cfg.s_list.len())
        .flat_map(|i| (0..starts.len()).map(move |j| (i, j)))
        .collect();
    let states: Vec<MinimizerState> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let obj = Objective::new(cfg.n_x, cfg.s_list[i], mu.clone(), cfg.sine_modes);
            minimize(&obj, &starts[j], cfg.gradient_tol, cfg.max_iterations)
        })
        .collect::<Result<_>>()?;
    let potentials: Vec<SymplecticPotential> = states
        .iter()
        .map(|st| {
            Ok(e_normalize(
                &SeriesPotential::from_coefficients(&st.coefficients).to_potential(cfg.n_x)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut runs = Table::new(
        "uniqueness.csv",
        "s,start,objective,gradient_norm,iterations,converged,distance_to_orbit_minimizer",
    );
    let mut summary = Table::new(
        "uniqueness_summary.csv",
        "s,max_pairwise_distance,distance_to_orbit_minimizer",
    )
    .with_plot(0, 2);
    let mut spread_ok = true;
    let mut worst_spread = 0.0f64;
    let mut to_orbit = Vec::new();
    for (i, s) in cfg.s_list.iter().enumerate() {
        let block: Vec<usize> = (0..jobs.len()).filter(|&k| jobs[k].0 == i).collect();
        let mut spread = 0.0f64;
        for (a, &ka) in block.iter().enumerate() {
            for &kb in &block[a + 1..] {
                spread = spread.max(geodesic_distance(&potentials[ka], &potentials[kb])?);
            }
        }
        let d = geodesic_distance(&potentials[block[0]], &target)?;
        for &k in &block {
            let st = &states[k];
            runs.rows.push(format!(
                "{s},{},{},{:.3e},{},{},{}",
                jobs[k].1,
                st.objective,
                st.gradient_norm,
                st.iterations,
                st.converged,
                geodesic_distance(&potentials[k], &target)?
            ));
        }
        summary.rows.push(format!("{s},{spread:.6e},{d}"));
        spread_ok &= spread < cfg.distance_tol;
        worst_spread = worst_spread.max(spread);
        to_orbit.push(d);
    }
    let converged = states.iter().filter(|s| s.converged).count();
    let touched: Vec<&SymplecticPotential> =
        potentials.iter().chain(std::iter::once(&target)).collect();
    let assertions = vec![
        Assertion::new(
            "minimiser converged from every start",
            converged == states.len(),
            format!(
                "{converged}/{} runs reached gradient norm {:.0e}",
                states.len(),
                cfg.gradient_tol
            ),
        ),
        Assertion::new(
            "all starts reach one minimiser of M + sF",
            spread_ok,
            format!(
                "max pairwise distance {worst_spread:.3e}, tolerance {:.0e}",
                cfg.distance_tol
            ),
        ),
        Assertion::new(
            "minimiser approaches the F-minimising orbit point as s decreases",
            monotone_decreasing(&to_orbit),
            format!(
                "distances {}",
                to_orbit
                    .iter()
                    .map(|d| format!("{d:.3e}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ),
        topology_all(touched, cfg)?.assertion(),
    ];
    Ok(SuiteOutput {
        name: "uniqueness",
        tables: vec![runs, summary],
        assertions,
    })
}

/// Functional values for the supplied potential, or for the round metric
/// and one ensemble draw.
pub fn report_suite(
    cfg: &ExperimentConfig,
    potential: Option<SymplecticPotential>,
) -> Result<SuiteOutput> {
    let mu = VolumeForm::tilted(cfg.tilt)?;
    let us = match potential {
        Some(u) => vec![u],
        None => vec![
            SymplecticPotential::round(cfg.n_x)?,
            random_pairs(cfg.seed, 1, cfg.n_x)?.remove(0).0,
        ],
    };
    let reports: Vec<FunctionalReport> = us
        .par_iter()
        .map(|u| functional_report(u, &mu))
        .collect::<Result<_>>()?;
    let mut table = Table::new("report.csv", FunctionalReport::CSV_HEADER);
    table.rows = reports.iter().map(FunctionalReport::csv_row).collect();
    let nonneg = reports
        .iter()
        .all(|r| r.entropy >= -1e-12 && r.mabuchi >= -1e-6);
    let assertions = vec![
        Assertion::new(
            "entropy and K-energy nonnegative",
            nonneg,
            format!(
                "min entropy {:.3e}, min K-energy {:.3e}",
                reports
                    .iter()
                    .map(|r| r.entropy)
                    .fold(f64::INFINITY, f64::min),
                reports
                    .iter()
                    .map(|r| r.mabuchi)
                    .fold(f64::INFINITY, f64::min)
            ),
        ),
        topology_all(&us, cfg)?.assertion(),
    ];
    Ok(SuiteOutput {
        name: "report",
        tables: vec![table],
        assertions,
    })
}

/// The available experiment suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Geodesic,
    Convexity,
    Chen,
    Bergman,
    Lichnerowicz,
    Orbit,
    Uniqueness,
    Report,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Geodesic,
        Suite::Convexity,
        Suite::Chen,
        Suite::Bergman,
        Suite::Lichnerowicz,
        Suite::Orbit,
        Suite::Uniqueness,
        Suite::Report,
    ];

    /// Runs the suite on seeded inputs.
    pub fn run(self, cfg: &ExperimentConfig) -> Result<SuiteOutput> {
        match self {
            Suite::Geodesic => geodesic_suite(cfg, None),
            Suite::Convexity => convexity_suite(cfg),
            Suite::Chen => chen_suite(cfg),
            Suite::Bergman => bergman_suite(cfg),
            Suite::Lichnerowicz => lichnerowicz_suite(cfg),
            Suite::Orbit => orbit_suite(cfg),
            Suite::Uniqueness => uniqueness_suite(cfg),
            Suite::Report => report_suite(cfg, None),
        }
    }
}
