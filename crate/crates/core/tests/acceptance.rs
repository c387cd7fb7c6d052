//! Acceptance run: one PASS/FAIL line per criterion, with runtimes.
//!
//! Failing criteria are reported but only turn into a nonzero exit status
//! when `KENERGY_STRICT=1` is set; a criterion that cannot be evaluated at
//! all (an error or panic) always fails the run.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use kenergy_core::bergman::{
    density_limit_check, log_psh_check, tk_positivity, CheckStatus, ProductGrid, RadialWeight,
    TkGrid, WeightFamily,
};
use kenergy_core::experiments::{
    lichnerowicz_suite, orbit_suite, random_pairs, random_series, rng, uniqueness_suite,
    ExperimentConfig, SeriesPotential, SuiteOutput, Topology,
};
use kenergy_core::functionals::{
    calabi_energy, e_normalize, geodesic_distance, gradient_identity_check, mabuchi,
};
use kenergy_core::geodesics::{
    geodesic_ode_residual_on, hrma_residual_on, mabuchi_along, second_variation_fiber_integral,
    weak_geodesic, GeodesicPath,
};
use kenergy_core::symmetry::orbit_geodesic;
use kenergy_core::{Result, SymplecticPotential};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Runs a criterion, prints its line and returns `Some(pass)`, or `None`
/// when it could not be evaluated.
fn criterion<F>(id: usize, name: &str, budget: Option<Duration>, f: F) -> Option<bool>
where
    F: FnOnce() -> Result<Outcome>,
{
    let start = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let secs = elapsed.as_secs_f64();
    match result {
        Ok(Ok(o)) => {
            let in_time = budget.is_none_or(|b| elapsed <= b);
            let pass = o.pass && in_time;
            let budget_note = budget
                .map(|b| format!(" / budget {} s", b.as_secs()))
                .unwrap_or_default();
            println!(
                "{} {id:>2} {name}: {} [{secs:.2} s{budget_note}]",
                if pass { "PASS" } else { "FAIL" },
                o.detail
            );
            Some(pass)
        }
        Ok(Err(e)) => {
            println!("FAIL {id:>2} {name}: error: {e} [{secs:.2} s]");
            None
        }
        Err(_) => {
            println!("FAIL {id:>2} {name}: panicked [{secs:.2} s]");
            None
        }
    }
}

fn topology_line(o: &SuiteOutput) -> (bool, String) {
    o.assertions
        .iter()
        .find(|a| a.property.starts_with("total curvature"))
        .map(|a| (a.passed, format!("{}: {}", o.name, a.detail)))
        .unwrap_or((false, format!("{}: no topology report", o.name)))
}

fn topology(us: &[&SymplecticPotential], cfg: &ExperimentConfig) -> Result<Topology> {
    us.iter().try_fold(Topology::default(), |acc, u| {
        Ok(acc.merge(Topology::of(u, cfg.n_s, cfg.s_max)?))
    })
}

fn all_pass(o: &SuiteOutput, skip_topology: bool) -> bool {
    o.assertions
        .iter()
        .filter(|a| !(skip_topology && a.property.starts_with("total curvature")))
        .all(|a| a.passed)
}

fn failing(o: &SuiteOutput) -> String {
    let f: Vec<String> = o
        .assertions
        .iter()
        .filter(|a| !a.passed)
        .map(|a| format!("{} ({})", a.property, a.detail))
        .collect();
    f.join("; ")
}

fn main() {
    let cfg = ExperimentConfig::default();
    let mut results: Vec<Option<bool>> = Vec::new();
    let topo = std::sync::Mutex::new(Vec::<(bool, String)>::new());
    let record = |t: Topology, label: &str| {
        topo.lock().unwrap().push((
            t.passes(),
            format!(
                "{label}: |int R - 2| <= {:.1e}, |int rho - 1| <= {:.1e} ({} potentials)",
                t.curvature, t.area, t.count
            ),
        ));
    };
    let pairs20 = random_pairs(cfg.seed, 20, cfg.n_x).expect("ensemble");
    let pairs10: Vec<_> = pairs20[..10].to_vec();

    results.push(criterion(
        1,
        "K-energy convex along weak geodesics",
        Some(Duration::from_secs(60)),
        || {
            let mut worst = f64::INFINITY;
            let mut violations = 0;
            for (a, b) in &pairs20 {
                let m = mabuchi_along(&weak_geodesic(a, b, 64)?)?;
                for w in m.windows(3) {
                    let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
                    let floor = -1e-6 * (1.0 + w[1].1.abs());
                    worst = worst.min(d2 - floor);
                    if d2 < floor {
                        violations += 1;
                    }
                }
            }
            let us: Vec<&SymplecticPotential> = pairs20.iter().flat_map(|(a, b)| [a, b]).collect();
            record(topology(&us, &cfg)?, "convexity endpoints");
            Ok(Outcome::new(
                violations == 0,
                format!("20 pairs x 64 samples, {violations} violations, min margin {worst:.2e}"),
            ))
        },
    ));

    results.push(criterion(
        2,
        "gradient identity along random smooth paths",
        Some(Duration::from_secs(30)),
        || {
            let mut r = rng(cfg.seed.wrapping_add(17));
            let mut worst = 0.0f64;
            let mut count = 0;
            let mut touched = Vec::new();
            while count < 50 {
                let (a, b, c) = (
                    random_series(&mut r),
                    random_series(&mut r),
                    random_series(&mut r),
                );
                let t: f64 = r.gen_range(0.2..0.8);
                // Quadratic-in-t curve of coefficients.
                let family = |t: f64| {
                    let sines: Vec<f64> = (0..8)
                        .map(|j| {
                            (1.0 - t) * a.sines[j]
                                + t * b.sines[j]
                                + 0.5 * t * (1.0 - t) * c.sines[j]
                        })
                        .collect();
                    let lin = 0.3 * t * t;
                    SeriesPotential { linear: lin, sines }.to_potential(cfg.n_x)
                };
                let u = match family(t) {
                    Ok(u) if u.min_metric_factor() > 0.05 => u,
                    _ => continue,
                };
                let g = gradient_identity_check(family, t, 1e-4)?;
                worst = worst.max(g.relative());
                touched.push(u);
                count += 1;
            }
            let refs: Vec<&SymplecticPotential> = touched.iter().collect();
            record(topology(&refs, &cfg)?, "gradient-identity slices");
            Ok(Outcome::new(
                worst <= 1e-4,
                format!("50 paths, max |dM/dt + pairing| / (1 + |dM/dt|) = {worst:.2e}"),
            ))
        },
    ));

    results.push(criterion(3, "Chen inequality and minimality of the round metric", None, || {
        let pairs = random_pairs(cfg.seed.wrapping_add(1), 50, cfg.n_x)?;
        let round = SymplecticPotential::round(cfg.n_x)?;
        let mut slack = f64::INFINITY;
        let mut over_round = f64::INFINITY;
        for (u0, u1) in &pairs {
            let s = mabuchi(u1) - mabuchi(u0) + geodesic_distance(u0, u1)? * calabi_energy(u0)?.sqrt();
            slack = slack.min(s);
            over_round = over_round.min(mabuchi(u1));
        }
        let m0 = mabuchi(&round);
        let mut us: Vec<&SymplecticPotential> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
        us.push(&round);
        record(topology(&us, &cfg)?, "Chen pairs");
        Ok(Outcome::new(
            slack >= -1e-6 && over_round >= -1e-6 && m0.abs() <= 1e-8,
            format!("50 pairs, min slack {slack:.2e}; M(round) = {m0:.1e}, min M(u1) {over_round:.2e}"),
        ))
    }));

    results.push(criterion(4, "weak geodesics certified by HRMA and the geodesic equation", None, || {
        let mut coarse_worst = (0.0f64, 0.0f64);
        let mut ratio_worst = (f64::INFINITY, f64::INFINITY);
        let mut ok = true;
        let (mut over, mut stalled) = (0, 0);
        for (a, b) in &pairs10 {
            let c = weak_geodesic(a, b, 64)?.complexify(2048, 18.0)?;
            let f = weak_geodesic(a, b, 128)?.complexify(4096, 18.0)?;
            let (hc, hf) = (hrma_residual_on(&c).sup, hrma_residual_on(&f).sup);
            let (oc, of) = (geodesic_ode_residual_on(&c)?.l1, geodesic_ode_residual_on(&f)?.l1);
            coarse_worst = (coarse_worst.0.max(hc), coarse_worst.1.max(oc));
            ratio_worst = (ratio_worst.0.min(hc / hf), ratio_worst.1.min(oc / of));
            if hc > 1e-4 || oc > 1e-3 {
                over += 1;
            }
            if hf > 0.5 * hc || of > 0.5 * oc {
                stalled += 1;
            }
            ok &= hc <= 1e-4 && oc <= 1e-3 && hf <= 0.5 * hc && of <= 0.5 * oc;
        }
        Ok(Outcome::new(
            ok,
            format!(
                "10 pairs: max HRMA {:.2e}, max ODE {:.2e} ({over} over bound); min refinement ratios {:.1}, {:.1} ({stalled} not halving)",
                coarse_worst.0, coarse_worst.1, ratio_worst.0, ratio_worst.1
            ),
        ))
    }));

    results.push(criterion(5, "second variation as a fibre integral", None, || {
        let mut worst_rel = 0.0f64;
        let mut worst_pt = f64::INFINITY;
        for (a, b) in &pairs10 {
            let path = weak_geodesic(a, b, 64)?;
            let sv = second_variation_fiber_integral(&path, 0.5)?;
            let m = |t: f64| -> Result<f64> { Ok(mabuchi(&path.slice(t)?)) };
            let h = 1e-2;
            let d2 = (-m(0.5 - 2.0 * h)? + 16.0 * m(0.5 - h)? - 30.0 * m(0.5)? + 16.0 * m(0.5 + h)? - m(0.5 + 2.0 * h)?)
                / (12.0 * h * h);
            worst_rel = worst_rel.max((sv.integral - d2).abs() / d2.abs().max(1e-12));
            worst_pt = worst_pt.min(sv.min_integrand / sv.scale);
        }
        Ok(Outcome::new(
            worst_rel <= 1e-3 && worst_pt >= -1e-6,
            format!("10 paths at t = 1/2: max relative gap {worst_rel:.2e}, min integrand/scale {worst_pt:.2e}"),
        ))
    }));

    results.push(criterion(6, "Bergman density converges to the curvature form", None, || {
        let ks = [5.0, 10.0, 20.0, 50.0, 100.0];
        let rows = density_limit_check(&RadialWeight::quadratic(1.0), 0.0, &ks)?;
        let last = rows.last().expect("five rows");
        let exact = 100.0 / (2.0 * PI * (1.0 - (-100.0f64).exp()));
        let gap = (last.b / 100.0 - 1.0 / (2.0 * PI)).abs();
        let oracle = (last.b / exact - 1.0).abs();
        let mut monotone = true;
        for phi in [RadialWeight::polynomial(&[0.0, 1.0, 0.5]), RadialWeight::kinked(0.2, 3.0)] {
            for r in [0.0, 0.3] {
                let g: Vec<f64> = density_limit_check(&phi, r, &ks)?.iter().map(|x| x.gap).collect();
                monotone &= g.windows(2).all(|w| w[1] < w[0]);
            }
        }
        Ok(Outcome::new(
            gap <= 0.02 / (2.0 * PI) && oracle <= 1e-10 && monotone,
            format!("|z|^2 at 0, k = 100: gap {gap:.2e}, closed form rel {oracle:.1e}; monotone decay for 2 weights: {monotone}"),
        ))
    }));

    results.push(criterion(
        7,
        "plurisubharmonicity of log K and positivity of T_k",
        None,
        || {
            let (a, b) = &pairs10[0];
            let random_path = weak_geodesic(a, b, 64)?;
            let families = [
                WeightFamily::translated_quadratic(),
                WeightFamily::quartic_tilt(2.0),
                WeightFamily::geodesic_localization(&random_path, 0.5, 2048, 18.0),
            ];
            let grid = ProductGrid::default();
            let mut ok = true;
            let mut worst = f64::INFINITY;
            for f in &families {
                let r = log_psh_check(f, 50.0, &grid)?;
                ok &= r.status == CheckStatus::Certified && r.passes(1e-6);
                worst = worst.min(r.min_eig / r.scale);
            }
            let round = SymplecticPotential::round(cfg.n_x)?;
            let orbit = orbit_geodesic(&round, 0.5, 64).as_geodesic()?;
            let tk_grid = TkGrid::default();
            let mut tk_worst = f64::INFINITY;
            for p in [&orbit, &random_path] {
                let r = tk_positivity(p, 50.0, &tk_grid)?;
                ok &= r.passes(1e-4);
                tk_worst = tk_worst.min(r.min / r.scale);
            }
            Ok(Outcome::new(
                ok,
                format!(
                    "3 families at k = 50: min eig/scale {worst:.2e}; T_k min/scale {tk_worst:.2e}"
                ),
            ))
        },
    ));

    let orbit_out = std::cell::RefCell::new(None);
    results.push(criterion(
        8,
        "orbits of the torus complexification",
        None,
        || {
            let o = orbit_suite(&cfg)?;
            // Cross-module: the weak geodesic between two orbit points is the orbit.
            let round = SymplecticPotential::round(cfg.n_x)?;
            let orbit = orbit_geodesic(&round, 0.5, 16);
            let path: GeodesicPath = orbit.as_geodesic()?;
            let mut gap = 0.0f64;
            for k in 0..=16 {
                let t = k as f64 / 16.0;
                let a = e_normalize(&path.slice(t)?);
                let b = orbit.slice(t);
                gap = gap.max(
                    a.values()
                        .iter()
                        .zip(b.values())
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max),
                );
            }
            let pass = all_pass(&o, true) && gap <= 1e-8;
            let detail = if all_pass(&o, true) {
                format!("suite assertions pass; orbit vs weak geodesic slices {gap:.1e}")
            } else {
                format!("{}; slices {gap:.1e}", failing(&o))
            };
            *orbit_out.borrow_mut() = Some(o);
            Ok(Outcome::new(pass, detail))
        },
    ));

    let lich_out = std::cell::RefCell::new(None);
    results.push(criterion(
        9,
        "Lichnerowicz kernel at the round metric",
        Some(Duration::from_secs(60)),
        || {
            let o = lichnerowicz_suite(&cfg)?;
            let pass = all_pass(&o, true);
            let detail = o
                .assertions
                .iter()
                .take(2)
                .map(|a| a.detail.clone())
                .collect::<Vec<_>>()
                .join("; ");
            *lich_out.borrow_mut() = Some(o);
            Ok(Outcome::new(pass, detail))
        },
    ));

    let uniq_out = std::cell::RefCell::new(None);
    results.push(criterion(
        10,
        "unique minimisers of M + sF track the F-minimising orbit point",
        Some(Duration::from_secs(300)),
        || {
            let o = uniqueness_suite(&cfg)?;
            let pass = all_pass(&o, true);
            let detail = if pass {
                o.assertions
                    .iter()
                    .skip(1)
                    .take(2)
                    .map(|a| a.detail.clone())
                    .collect::<Vec<_>>()
                    .join("; ")
            } else {
                failing(&o)
            };
            *uniq_out.borrow_mut() = Some(o);
            Ok(Outcome::new(pass, detail))
        },
    ));

    results.push(criterion(
        11,
        "total curvature and area of every potential",
        None,
        || {
            let mut lines = topo.lock().unwrap().clone();
            for o in [orbit_out.borrow(), lich_out.borrow(), uniq_out.borrow()]
                .iter()
                .filter_map(|o| o.as_ref())
            {
                lines.push(topology_line(o));
            }
            let pass = lines.len() == 6 && lines.iter().all(|l| l.0);
            let detail = lines
                .iter()
                .map(|l| l.1.as_str())
                .collect::<Vec<_>>()
                .join("; ");
            Ok(Outcome::new(pass, detail))
        },
    ));

    let passed = results.iter().filter(|r| **r == Some(true)).count();
    let errored = results.iter().filter(|r| r.is_none()).count();
    println!("{passed} of {} criteria passed", results.len());
    let strict = std::env::var("KENERGY_STRICT").is_ok_and(|v| v == "1");
    if errored > 0 || (strict && passed < results.len()) {
        std::process::exit(1);
    }
}
