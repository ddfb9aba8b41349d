//! The ten acceptance criteria at their stated tolerances. Each test prints a
//! single PASS/FAIL line (visible with `--nocapture`) and then asserts.

use halfkg::evolve::{self, flat_halfkg_step, PropagatorConfig, Scheme};
use halfkg::flow::{damping_integral, damping_symbol_eval, flow_jacobian, integrate_flow, verify_damping_monotone, DampingSymbol, FlowOptions, HalfKgHamiltonian, PhasePoint};
use halfkg::grid::{make_grid, Grid, SpectralField};
use halfkg::measure::{self, admissible_pair, decay_fit};
use halfkg::metric::MetricSpec;
use halfkg::phasespace::{bargmann, bargmann_adjoint, kg_jacobian_matrix, wave_jacobian_matrix};
use halfkg::spin::flat_gammas;
use halfkg::{pdo, Error, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

static SERIAL: Mutex<()> = Mutex::new(());

/// Criteria run one at a time so each runtime budget measures that criterion alone.
fn begin() -> (MutexGuard<'static, ()>, Instant) {
    let guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    (guard, Instant::now())
}

/// Writes to the stderr handle directly: the harness only captures the print macros,
/// so the line shows up in a plain `cargo test` run too.
fn report(n: usize, pass: bool, detail: String, start: Instant) -> bool {
    let line = format!("criterion {n:>2}: {} ({detail}; {:.1}s)\n", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

#[test]
fn criterion_01_projector_algebra() {
    let (_serial, start) = begin();
    let g = make_grid(3, 64, 20.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gam = flat_gammas();
    let mut worst = 0.0f64;
    let max_entry = |m: halfkg::spin::M4| m.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    for _ in 0..1000 {
        let k: Vec<i64> = (0..3).map(|_| rng.gen_range(-32..32)).collect();
        let xi: Vec<f64> = k.iter().map(|&v| v as f64 * g.dxi()).collect();
        let p = pdo::flat_projector_matrix(&xi, 1.0, 1.0);
        let q = pdo::flat_projector_matrix(&xi, 1.0, -1.0);
        let w = (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let mut h = gam[0];
        for j in 0..3 {
            h += gam[0] * gam[j + 1] * C64::new(xi[j], 0.0);
        }
        worst = worst
            .max(max_entry(p * p - p))
            .max(max_entry(q * q - q))
            .max(max_entry(p * q))
            .max(max_entry(p + q - halfkg::spin::M4::identity()))
            .max(max_entry((p - q) * C64::new(w, 0.0) - h));
    }
    let ok = worst < 1e-12 && start.elapsed().as_secs_f64() < 1.0;
    assert!(report(1, ok, format!("max entry {worst:.2e}"), start));
}

#[test]
fn criterion_02_eigenvalue_lemma() {
    let (_serial, start) = begin();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_kg, mut worst_w) = (0.0f64, 0.0f64);
    let mut rank_ok = true;
    for m in 0..1000 {
        let d = 2 + m % 2;
        let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let a = 2f64.powf(rng.gen_range(-3.0..3.0));
        let j = kg_jacobian_matrix(&xi, a).unwrap();
        for (l, c) in j.eigenvalues.iter().zip(&j.closed_form) {
            worst_kg = worst_kg.max((l - c).abs());
        }
        let (w, rank) = wave_jacobian_matrix(&xi);
        rank_ok &= rank == d - 1;
        let v = nalgebra::DVector::from_column_slice(&xi);
        worst_w = worst_w.max((&w * v).norm());
    }
    let ok = worst_kg < 1e-12 && worst_w < 1e-12 && rank_ok && start.elapsed().as_secs_f64() < 1.0;
    assert!(report(2, ok, format!("eigenvalue error {worst_kg:.2e}, |Φ_w ξ| {worst_w:.2e}, ranks ok {rank_ok}"), start));
}

fn packet_family(g: &Grid) -> Vec<SpectralField> {
    let d = g.dim();
    let mut out = Vec::new();
    // spectra must stay well inside the Nyquist box for the ξ-window sum to be exact
    let family: [(f64, f64); 5] = if d == 1 { [(1.0, 0.0), (1.5, 0.8), (0.8, -1.2), (2.0, 1.6), (1.2, 2.0)] } else { [(1.5, 0.0), (2.0, 0.8), (1.6, -1.0), (2.0, 1.2), (1.5, 0.5)] };
    for (m, (w, k0)) in family.iter().enumerate() {
        let c = 0.7 * m as f64 - 1.0;
        out.push(SpectralField::from_fn(g, move |x| {
            let r2: f64 = x.iter().map(|v| (v - c).powi(2)).sum();
            let ph = k0 * x[0] + if d > 1 { 0.3 * k0 * x[1] } else { 0.0 };
            C64::from_polar((-r2 / (2.0 * w * w)).exp(), ph)
        }));
    }
    out
}

#[test]
fn criterion_03_fbi_unitarity() {
    let (_serial, start) = begin();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (d, n) in [(1, 256), (2, 64)] {
        let g = make_grid(d, n, 16.0).unwrap();
        for f in packet_family(&g) {
            let tf = bargmann(&f, 2.0).unwrap();
            let iso = (tf.norm_l2() / f.norm_l2() - 1.0).abs();
            let inv = bargmann_adjoint(&tf, 2.0).unwrap().sub(&f).norm_l2() / f.norm_l2();
            worst = worst.max(iso).max(inv);
            count += 1;
        }
    }
    let ok = worst < 1e-8 && count == 10 && start.elapsed().as_secs_f64() < 30.0;
    assert!(report(3, ok, format!("{count} fields, worst relative error {worst:.2e}"), start));
}

/// Sup-norm decay exponent of the exact flat evolution on t ∈ [5, 40].
fn flat_decay(u0: &SpectralField, mass: f64) -> f64 {
    let times: Vec<f64> = (0..36).map(|m| 5.0 + m as f64).collect();
    let sup: Vec<f64> = times.iter().map(|&t| flat_halfkg_step(u0, mass, t).sup_norm()).collect();
    decay_fit(&times, &sup, (5.0, 40.0)).unwrap().exponent
}

#[test]
fn criterion_04_flat_dispersive_decay() {
    let (_serial, start) = begin();
    let g = make_grid(3, 64, 80.0).unwrap();
    let kg = SpectralField::from_spectrum(&g, |xi| C64::new((-xi.iter().map(|v| v * v).sum::<f64>() / (2.0 * 0.55 * 0.55)).exp(), 0.0));
    // λ = 8 band rescaled to unit frequency: mass λ⁻¹.
    let wave = SpectralField::from_spectrum(&g, |xi| {
        let r2 = (xi[0] - 0.7).powi(2) + xi[1] * xi[1] + xi[2] * xi[2];
        C64::new((-r2 / (2.0 * 0.45 * 0.45)).exp(), 0.0)
    });
    let a = flat_decay(&kg, 1.0);
    let b = flat_decay(&wave, 1.0 / 8.0);
    let ok = (a + 1.5).abs() <= 0.1 && (b + 1.0).abs() <= 0.15 && start.elapsed().as_secs_f64() < 600.0;
    assert!(report(4, ok, format!("KG exponent {a:.3}, wave-band exponent {b:.3}"), start));
}

/// (Strichartz ratio, X_{-1}/‖u₀‖) at horizons 25 and 50 for one metric amplitude.
fn uniformity_run(eps: f64) -> [(f64, f64); 2] {
    let g = make_grid(3, 64, 64.0).unwrap();
    let u0 = SpectralField::from_spectrum(&g, |xi| {
        let r2 = (xi[0] - 0.5).powi(2) + xi[1] * xi[1] + xi[2] * xi[2];
        C64::new((-r2 / (2.0 * 0.35 * 0.35)).exp(), 0.0)
    });
    let cfg = PropagatorConfig::new(MetricSpec::inverse_square(3, eps), 1.0, 0.5, Scheme::SplitStep).unwrap();
    let pair = admissible_pair(3, 1.0, 6.0).unwrap();
    let hs = measure::sobolev_norm(&u0, pair.sigma);
    let l2 = u0.norm_l2();
    let mut series = [measure::TimeSeriesNorms::new(&[6.0], pair.sigma, 0.0), measure::TimeSeriesNorms::new(&[6.0], pair.sigma, 0.0)];
    let mut le = [measure::LocalEnergy::new(&g, &[-1], false).unwrap(), measure::LocalEnergy::new(&g, &[-1], false).unwrap()];
    let mut u = u0;
    for n in 0..=100 {
        let t = n as f64 * cfg.dt;
        for h in 0..2 {
            if t <= 25.0 * (h + 1) as f64 {
                series[h].push(t, &u);
                le[h].push(t, &u).unwrap();
            }
        }
        if n < 100 {
            u = evolve::perturbed_halfkg_step(&u, &cfg, t).unwrap();
        }
    }
    std::array::from_fn(|h| (measure::strichartz_ratio(&series[h], &pair, pair.sigma, hs).unwrap(), le[h].x_k(-1).unwrap() / l2))
}

#[test]
fn criterion_05_perturbed_uniformity() {
    let (_serial, start) = begin();
    let runs: Vec<[(f64, f64); 2]> = [0.0, 0.01, 0.05].iter().map(|&e| uniformity_run(e)).collect();
    let spread = |f: &dyn Fn(&[(f64, f64); 2]) -> f64| {
        let v: Vec<f64> = runs.iter().map(f).collect();
        v.iter().fold(0.0f64, |a, &b| a.max(b)) / v.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 1.0
    };
    let mut eps_spread = 0.0f64;
    for h in 0..2 {
        eps_spread = eps_spread.max(spread(&|r| r[h].0)).max(spread(&|r| r[h].1));
    }
    let horizon = runs.iter().map(|r| ((r[1].0 / r[0].0 - 1.0).abs()).max((r[1].1 / r[0].1 - 1.0).abs())).fold(0.0f64, f64::max);
    let ok = eps_spread < 0.25 && horizon < 0.15 && start.elapsed().as_secs_f64() < 1800.0;
    let cells: Vec<String> = runs.iter().map(|r| format!("{:.4}/{:.4}→{:.4}/{:.4}", r[0].0, r[0].1, r[1].0, r[1].1)).collect();
    assert!(report(5, ok, format!("Strichartz/X_-1 at T=25→50 for ε=0,0.01,0.05: {}; ε spread {eps_spread:.3}, horizon change {horizon:.3}", cells.join(", ")), start));
}

#[test]
fn criterion_08_parametrix_regions() {
    let (_serial, start) = begin();
    // d = 2 keeps the dense damping table (n^{2d} entries) within budget.
    let g = make_grid(2, 64, 32.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise: Vec<C64> = (0..g.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let band = |u: SpectralField| {
        u.multiply_spectrum(|xi| {
            let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            C64::new(if (0.5..=2.0).contains(&r) { 1.0 } else { 0.0 }, 0.0)
        })
    };
    // localize in frequency again after 𝒫₂ so the data itself has no mass outside the band
    let part = evolve::outgoing_partition(&g, 2).unwrap();
    let data = band(part.apply(2, &band(SpectralField::from_values(&g, noise).unwrap())).unwrap());
    let dmp = DampingSymbol::standard(1.0);
    let mut rows = Vec::new();
    let mut ok = true;
    let exact = PropagatorConfig::new(MetricSpec::flat(2), 1.0, 0.5, Scheme::ExactFlat).unwrap();
    let r = evolve::parametrix_diagnostics(&exact, None, 2, 4.0, 24.0, &data).unwrap();
    ok &= r.leakage < 1e-6;
    rows.push(format!("ε=0 exact: leakage {:.1e}", r.leakage));
    for (eps, cap) in [(0.0, f64::INFINITY), (0.01, 1e-2)] {
        let cfg = PropagatorConfig::new(MetricSpec::inverse_square(2, eps), 1.0, 0.5, Scheme::Damped).unwrap();
        let r = evolve::parametrix_diagnostics(&cfg, Some(&dmp), 2, 4.0, 24.0, &data).unwrap();
        ok &= r.inner < 1e-3 && r.outer < 1e-6 && r.leakage < cap;
        rows.push(format!("ε={eps} damped: inner {:.2e}, outer {:.1e}, leakage {:.1e}, norm {:.3}", r.inner, r.outer, r.leakage, r.norm_ratio));
    }
    ok &= start.elapsed().as_secs_f64() < 600.0;
    assert!(report(8, ok, rows.join("; "), start));
}

#[test]
fn criterion_09_cubic_dirac() {
    let (_serial, start) = begin();
    let g = make_grid(3, 64, 80.0).unwrap();
    let flat = MetricSpec::flat(3);
    let raw = pdo::SpinorField::from_fn(&g, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let z = C64::from_polar((-r2 / 18.0).exp(), 0.4 * x[0]);
        [z, C64::new(0.0, 0.0), C64::new(0.0, 0.0), z * 0.5]
    });
    let unit = pdo::flat_projector(1.0, 1.0, &g).unwrap().apply_spinor(&raw).unwrap();
    let unit = unit.clone().scale(C64::new(1.0 / unit.comps[0].sup_norm(), 0.0));
    let s = 2.0;
    let a = 0.4;
    let amps = [a, a / 2.0, a / 4.0];
    let opts = |eta: f64, nonlinear: bool| evolve::DiracOptions { s, eta, nonlinear, dealias: true, save_times: (1..=5).map(|k| 10.0 * k as f64).collect() };
    let big = evolve::spinor_sobolev(&unit, s) * a;
    let linear = evolve::cubic_dirac_solve(&unit, &flat, 1.0, 50.0, 0.5, &opts(big, false)).unwrap().last;
    let mut pts = Vec::new();
    let mut smallest = None;
    for &amp in &amps {
        let psi0 = unit.clone().scale(C64::new(amp, 0.0));
        let eta = evolve::spinor_sobolev(&psi0, s);
        let run = evolve::cubic_dirac_solve(&psi0, &flat, 1.0, 50.0, 0.5, &opts(eta, true)).unwrap();
        let dev = run.last.sub(&linear.clone().scale(C64::new(amp, 0.0))).norm_l2();
        pts.push((amp.ln(), dev.ln()));
        smallest = Some((eta, run));
    }
    let (slope, _) = measure::linear_fit(&pts);
    let (eta, run) = smallest.unwrap();
    let growth = run.hs.iter().fold(0.0f64, |m, &v| m.max(v)) / run.hs[0];
    // c(50, t′) for t′ = 10, 20, 30, 40
    let tail: Vec<f64> = evolve::scattering_tail(&run, s).into_iter().filter(|r| r.t > 49.0).map(|r| r.plus.hypot(r.minus)).collect();
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let last = *tail.last().unwrap();
    let ok = (slope - 3.0).abs() <= 0.3 && growth <= 2.0 && decreasing && last < 0.1 * eta && start.elapsed().as_secs_f64() < 1800.0;
    let tails: Vec<String> = tail.iter().map(|v| format!("{:.2e}", v / eta)).collect();
    assert!(report(9, ok, format!("deviation slope {slope:.3}, H^s growth {growth:.4} at a/4, tail c(50,t′)/η for t′=10..40: {}", tails.join(", ")), start));
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r > 0.1 && r <= 1.0 {
            return v.map(|a| a / r);
        }
    }
}

/// A unit vector making angle arccos(c) with `a`.
fn at_cosine(rng: &mut ChaCha8Rng, a: &[f64; 3], c: f64) -> [f64; 3] {
    let mut w = unit(rng);
    let p: f64 = (0..3).map(|i| w[i] * a[i]).sum();
    for i in 0..3 {
        w[i] -= p * a[i];
    }
    let r = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let s = (1.0 - c * c).max(0.0).sqrt();
    std::array::from_fn(|i| c * a[i] + s * w[i] / r)
}

#[test]
fn criterion_06_damping_symbol() {
    let (_serial, start) = begin();
    let dmp = DampingSymbol::standard(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut trajs = Vec::new();
    let (e1, eps1) = (dmp.eps.e(1.0), dmp.eps.eps(1.0));
    // The construction needs the metric's shell sizes below ε_k of the budget-0.01 profile;
    // the inverse-square shell suprema are at most the amplitude, so take half the smallest ε_k near the origin.
    let amp = 0.5 * (-8..=8).map(|k| dmp.eps.eps_j(k)).fold(f64::INFINITY, f64::min);
    for m in 0..200 {
        let metric = if m % 2 == 0 { MetricSpec::flat(3) } else { MetricSpec::inverse_square(3, amp) };
        let h = HalfKgHamiltonian::new(1.0, metric);
        let xhat = unit(&mut rng);
        let mut r = rng.gen_range(0.5..4.0);
        let mut k = 2f64.powf(rng.gen_range(-3.0..3.0));
        let mut c = rng.gen_range(-1.0..1.0);
        // The layers 0 ≤ b_j ≤ 1 are thin, so half of the starts are placed inside one of them at s = 1.
        let beta = rng.gen_range(0.05..0.95);
        match m / 2 % 10 {
            0 => {
                k = 2f64.powf(3.5) + e1 - beta * eps1;
                c = rng.gen_range(0.0..1.0);
            }
            1 => {
                k = 2f64.powf(-3.5) - dmp.c * e1 + beta * eps1;
                c = rng.gen_range(0.0..1.0);
            }
            2 => {
                k = 2f64.powf(rng.gen_range(-3.0..3.0));
                c = -(0.5f64).sqrt() + beta / (4096.0 * k);
            }
            3 => {
                r = 64.0 - beta;
                c = rng.gen_range(0.0..1.0);
            }
            4 => {
                c = rng.gen_range(-0.5..1.0);
                r = (k / 32.0 + beta / 1024.0) / (k * (1.0 + c));
            }
            _ => {}
        }
        let khat = at_cosine(&mut rng, &xhat, c);
        let p0 = PhasePoint::new(&xhat.map(|v| r * v), &khat.map(|v| k * v));
        trajs.push(integrate_flow(&h, &p0, 1.0, 64.0, FlowOptions { tol: 1e-10, samples: 256 }).unwrap());
    }
    let rep = verify_damping_monotone(&dmp, &trajs, 0.1);
    let psi_ok = trajs.iter().all(|tr| damping_integral(tr, &dmp).windows(2).all(|w| w[1] >= w[0]));
    let (mut zero_bad, mut full_bad) = (0, 0);
    for _ in 0..2000 {
        let t = 2f64.powf(rng.gen_range(0.0..7.0));
        let xhat = unit(&mut rng);
        let r = t * 2f64.powf(rng.gen_range(-1.99..1.99));
        let x = xhat.map(|v| v * r);
        let k = 2f64.powf(rng.gen_range(-2.99..2.99));
        let c = rng.gen_range(-1.0 / 16.0..1.0);
        let xi = at_cosine(&mut rng, &xhat, c).map(|v| k * v);
        if damping_symbol_eval(&dmp, t, &x, &xi) != 0.0 {
            zero_bad += 1;
        }
        let k = if rng.gen_bool(0.5) { rng.gen_range(13.0..100.0) } else { rng.gen_range(0.001..0.06) };
        let xi = unit(&mut rng).map(|v| k * v);
        let r = rng.gen_range(0.0..200.0);
        let x = unit(&mut rng).map(|v| v * r);
        if (damping_symbol_eval(&dmp, t, &x, &xi) - t.powf(-0.75)).abs() > 1e-15 {
            full_bad += 1;
        }
    }
    let ok = rep.passed() && psi_ok && zero_bad == 0 && full_bad == 0 && rep.active.iter().sum::<usize>() > 0 && start.elapsed().as_secs_f64() < 300.0;
    let detail = format!(
        "{} samples (curved amplitude {amp:.2e}), range {}, outgoing≠0 {zero_bad}, annulus-exterior≠t^(-3/4) {full_bad}, max rise of t^(3/4)B {:.2e}, active {:?}, worst rate/(2/t) {:?}, doubling {}/{}",
        rep.samples,
        rep.range_violations,
        rep.max_increase,
        rep.active,
        rep.worst_ratio.map(|v| (v * 100.0).round() / 100.0),
        rep.doubling_checked - rep.doubling_violations,
        rep.doubling_checked
    );
    assert!(report(6, ok, detail, start));
}

#[test]
fn criterion_07_flow_jacobian() {
    let (_serial, start) = begin();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_rel = 0.0f64;
    let mut worst_eig = 0.0f64;
    let mut worst_vec = 0.0f64;
    for _ in 0..6 {
        let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let xi: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
        let lambda = 2f64.powf(rng.gen_range(-1.0..2.0));
        let (s, t) = (1.0, rng.gen_range(4.0..20.0));
        let h = HalfKgHamiltonian::flat(3, lambda);
        let jac = flow_jacobian(&h, &PhasePoint::new(&x, &xi), s, t, lambda).unwrap();
        worst_rel = worst_rel.max(jac.deviation / jac.reference.norm());
        let ev = kg_jacobian_matrix(&xi, lambda).unwrap();
        let got = nalgebra::SymmetricEigen::new(jac.dxt_dxit.clone());
        let mut g: Vec<f64> = got.eigenvalues.iter().copied().collect();
        g.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in g.iter().zip(&ev.eigenvalues) {
            worst_eig = worst_eig.max((a / ((t - s) * b) - 1.0).abs());
        }
        // longitudinal eigenvector is ξ/|ξ|
        let kn = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        let dotp: f64 = (0..3).map(|i| ev.longitudinal[i] * xi[i] / kn).sum();
        let imin = (0..3).min_by(|&a, &b| got.eigenvalues[a].total_cmp(&got.eigenvalues[b])).unwrap();
        let dotg: f64 = (0..3).map(|i| got.eigenvectors[(i, imin)] * xi[i] / kn).sum();
        worst_vec = worst_vec.max(1.0 - dotp.abs()).max(1.0 - dotg.abs());
    }
    let p0 = PhasePoint::new(&[1.5, 0.5, -0.3], &[0.8, -0.4, 0.3]);
    let block = |eps: f64| {
        let h = HalfKgHamiltonian::new(1.0, MetricSpec::inverse_square(3, eps));
        flow_jacobian(&h, &p0, 1.0, 10.0, 1.0).unwrap().dxis_dxs.norm()
    };
    let (a, b, c) = (block(0.005), block(0.01), block(0.02));
    let (r1, r2) = (b / a, c / b);
    let ok = worst_rel < 1e-6 && worst_eig < 1e-6 && worst_vec < 1e-6 && (r1 / 2.0 - 1.0).abs() < 0.2 && (r2 / 2.0 - 1.0).abs() < 0.2 && start.elapsed().as_secs_f64() < 120.0;
    let detail = format!("flat relative deviation {worst_rel:.1e}, eigenvalue ratio error {worst_eig:.1e}, eigenvector {worst_vec:.1e}; ∂ξ_s/∂x_s norms {a:.3e}, {b:.3e}, {c:.3e} (ratios {r1:.3}, {r2:.3})");
    assert!(report(7, ok, detail, start));
}

#[test]
fn criterion_10_admissible_pairs() {
    let (_serial, start) = begin();
    let p = admissible_pair(3, 1.0, 6.0).unwrap();
    let mut ok = (p.p - 2.0).abs() < 1e-14 && (p.sigma - 5.0 / 6.0).abs() < 1e-14;
    ok &= matches!(admissible_pair(3, 0.0, f64::INFINITY), Err(Error::ForbiddenEndpoint));
    let mut worst = 0.0f64;
    let mut swept = 0;
    for m in 0..100 {
        let d = 2 + m % 2;
        let theta = (m / 2 % 5) as f64 / 4.0;
        let q = 2.0 + (m / 10) as f64 * 0.75 + if d == 2 && theta == 0.0 { 0.0 } else { 0.5 };
        let q = if q > 8.9 { f64::INFINITY } else { q };
        match admissible_pair(d, theta, q) {
            Ok(pair) => {
                let (r1, r2) = pair.residuals();
                worst = worst.max(r1.abs()).max(r2.abs());
                swept += 1;
            }
            Err(Error::ForbiddenEndpoint) | Err(Error::NonAdmissible(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    ok &= worst < 1e-14 && swept >= 80 && start.elapsed().as_secs_f64() < 1.0;
    assert!(report(10, ok, format!("(p,σ) = ({}, {:.6}), {swept} pairs, max residual {worst:.1e}", p.p, p.sigma), start));
}
