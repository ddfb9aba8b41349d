use crate::config::{ExperimentConfig, PacketConfig};
use crate::report::{Check, Outcome, PlotSpec, Table};
use halfkg::evolve::{self, PropagatorConfig, Scheme};
use halfkg::flow::{flow_jacobian, integrate_flow, verify_damping_monotone, DampingSymbol, FlowOptions, HalfKgHamiltonian, PhasePoint};
use halfkg::grid::{Grid, SpectralField};
use halfkg::measure::{self, admissible_pair, decay_fit, LocalEnergy, TimeSeriesNorms};
use halfkg::metric::MetricSpec;
use halfkg::pdo::{self, SpinorField};
use halfkg::phasespace::{kernel_decay_probe, Probe};
use halfkg::spin::{flat_gammas, M4};
use halfkg::{Error, Result, C64};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.experiment.as_str() {
        "decay" => decay(cfg),
        "strichartz" => strichartz(cfg),
        "local-energy" => local_energy(cfg),
        "projector" => projector(cfg),
        "flow" => flow(cfg),
        "damping" => damping(cfg),
        "kernel-probe" => kernel_probe(cfg),
        "dirac" => dirac(cfg),
        other => Err(Error::Invalid(format!("unknown experiment {other}"))),
    }
}

fn packet(g: &Grid, p: &PacketConfig) -> SpectralField {
    let (f, w) = (p.frequency, p.width);
    SpectralField::from_spectrum(g, move |xi| {
        let r2: f64 = xi.iter().enumerate().map(|(a, v)| if a == 0 { (v - f).powi(2) } else { v * v }).sum();
        C64::new((-r2 / (2.0 * w * w)).exp(), 0.0)
    })
}

fn default_packet(cfg: &ExperimentConfig) -> PacketConfig {
    cfg.params.packet.clone().unwrap_or(PacketConfig { frequency: 0.0, width: 0.55 })
}

/// Exact multiplier for flat metrics, Strang splitting otherwise, with dt adjusted to land on `span`.
fn propagator(cfg: &ExperimentConfig, spec: MetricSpec, span: f64) -> Result<(PropagatorConfig, usize)> {
    let steps = (span / cfg.dt).round().max(1.0) as usize;
    let scheme = if spec.is_flat() { Scheme::ExactFlat } else { Scheme::SplitStep };
    Ok((PropagatorConfig::new(spec, cfg.mass, span / steps as f64, scheme)?, steps))
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lo = v.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    hi / lo - 1.0
}

fn decay(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.grid();
    let d = g.dim();
    let pk = default_packet(cfg);
    let (pc, steps) = propagator(cfg, cfg.metric_spec(), cfg.horizon)?;
    let mut u = packet(&g, &pk);
    let n0 = u.norm_l2();
    let mut tab = Table::new("decay", &["t", "sup", "l2"]).comment(format!("sup and L2 norms relative to the initial L2 norm; mass {}", cfg.mass));
    let (mut times, mut sup) = (Vec::new(), Vec::new());
    for m in 0..=steps {
        let t = m as f64 * pc.dt;
        let s = u.sup_norm() / n0;
        tab.push(vec![t, s, u.norm_l2() / n0]);
        times.push(t);
        sup.push(s);
        if m < steps {
            u = evolve::step(&u, &pc, None, t)?;
        }
    }
    let w = cfg.params.window.unwrap_or([cfg.horizon / 8.0, cfg.horizon]);
    let fit = decay_fit(&times, &sup, (w[0], w[1]))?;
    let expected = cfg.params.expected.unwrap_or(-(d as f64) / 2.0);
    let tol = cfg.params.tolerance.unwrap_or(0.1);
    let mut out = Outcome::new();
    out.metric("exponent", fit.exponent);
    out.metric("stderr", fit.stderr);
    out.metric("residual", fit.residual);
    out.metric("window", vec![w[0], w[1]]);
    out.checks.push(Check::within("decay exponent", fit.exponent, expected, tol));
    out.plots.push(PlotSpec::LogLog { table: "decay".into(), x: "t".into(), y: vec!["sup".into()], reference_slope: Some(expected) });
    out.tables.push(tab);
    Ok(out)
}

fn strichartz(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.grid();
    let q = cfg.params.q.unwrap_or(6.0);
    let pair = admissible_pair(g.dim(), cfg.theta, q)?;
    let u0 = packet(&g, &default_packet(cfg));
    let hs = measure::sobolev_norm(&u0, cfg.s);
    let eps_list = cfg.params.eps_list.clone().unwrap_or(vec![0.0, 0.01, 0.05]);
    let mut tab = Table::new("strichartz", &["eps", "p", "q", "sigma", "ratio"]).comment(format!("‖⟨D⟩^(s−σ)u‖_(L^p L^q) / ‖u₀‖_(H^s) over [0, {}], s = {}, θ = {}", cfg.horizon, cfg.s, cfg.theta));
    let mut ratios = Vec::new();
    for &eps in &eps_list {
        let (pc, steps) = propagator(cfg, cfg.metric.spec(g.dim(), eps), cfg.horizon)?;
        let mut series = TimeSeriesNorms::new(&[q], cfg.s, cfg.s - pair.sigma);
        let mut u = u0.clone();
        for m in 0..=steps {
            let t = m as f64 * pc.dt;
            series.push(t, &u);
            if m < steps {
                u = evolve::step(&u, &pc, None, t)?;
            }
        }
        let r = measure::strichartz_ratio(&series, &pair, cfg.s, hs)?;
        tab.push(vec![eps, pair.p, q, pair.sigma, r]);
        ratios.push(r);
    }
    let mut out = Outcome::new();
    out.metric("p", pair.p);
    out.metric("sigma", pair.sigma);
    out.metric("ratios", ratios.clone());
    out.checks.push(Check::at_most("ratio spread across ε", spread(&ratios), cfg.params.tolerance.unwrap_or(0.25)));
    out.plots.push(PlotSpec::Line { table: "strichartz".into(), x: "eps".into(), y: vec!["ratio".into()] });
    out.tables.push(tab);
    Ok(out)
}

fn local_energy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.grid();
    let ks = cfg.params.ks.clone().unwrap_or(vec![(-g.dx().log2()).floor() as i32]);
    let u0 = packet(&g, &default_packet(cfg));
    let n0 = u0.norm_l2();
    let eps_list = cfg.params.eps_list.clone().unwrap_or(vec![0.0, 0.01, 0.05]);
    let mut cols = vec!["eps".to_string()];
    for k in &ks {
        cols.push(format!("half_k{k}"));
        cols.push(format!("full_k{k}"));
    }
    let col_refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut tab = Table::new("local_energy", &col_refs).comment(format!("X_k/‖u₀‖ over [0, T/2] and [0, T], T = {}", cfg.horizon));
    let mut full: Vec<Vec<f64>> = vec![Vec::new(); ks.len()];
    let mut horizon_change = 0.0f64;
    for &eps in &eps_list {
        let (pc, steps) = propagator(cfg, cfg.metric.spec(g.dim(), eps), cfg.horizon)?;
        let mut acc = [LocalEnergy::new(&g, &ks, false)?, LocalEnergy::new(&g, &ks, false)?];
        let mut u = u0.clone();
        for m in 0..=steps {
            let t = m as f64 * pc.dt;
            if 2 * m <= steps {
                acc[0].push(t, &u)?;
            }
            acc[1].push(t, &u)?;
            if m < steps {
                u = evolve::step(&u, &pc, None, t)?;
            }
        }
        let mut row = vec![eps];
        for (i, &k) in ks.iter().enumerate() {
            let (a, b) = (acc[0].x_k(k)? / n0, acc[1].x_k(k)? / n0);
            row.push(a);
            row.push(b);
            full[i].push(b);
            horizon_change = horizon_change.max((b / a - 1.0).abs());
        }
        tab.push(row);
    }
    let eps_spread = full.iter().map(|v| spread(v)).fold(0.0f64, f64::max);
    let mut out = Outcome::new();
    out.metric("ks", ks.clone());
    out.checks.push(Check::at_most("X_k spread across ε", eps_spread, cfg.params.tolerance.unwrap_or(0.25)));
    out.checks.push(Check::at_most("X_k change under horizon doubling", horizon_change, 0.15));
    out.plots.push(PlotSpec::Line { table: "local_energy".into(), x: "eps".into(), y: ks.iter().map(|k| format!("full_k{k}")).collect() });
    out.tables.push(tab);
    Ok(out)
}

fn max_entry(m: M4) -> f64 {
    m.iter().fold(0.0f64, |a, z| a.max(z.norm()))
}

fn projector(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.grid();
    let d = g.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gam = flat_gammas();
    let half = (g.n() / 2) as i64;
    let mut worst = [0.0f64; 4];
    for _ in 0..cfg.params.samples.unwrap_or(1000) {
        let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-half..half) as f64 * g.dxi()).collect();
        let p = pdo::flat_projector_matrix(&xi, cfg.mass, 1.0);
        let q = pdo::flat_projector_matrix(&xi, cfg.mass, -1.0);
        let w = (cfg.mass * cfg.mass + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let mut h = gam[0] * C64::new(cfg.mass, 0.0);
        for j in 0..d {
            h += gam[0] * gam[j + 1] * C64::new(xi[j], 0.0);
        }
        let vals = [max_entry(p * p - p).max(max_entry(q * q - q)), max_entry(p * q), max_entry(p + q - M4::identity()), max_entry((p - q) * C64::new(w, 0.0) - h)];
        for (a, b) in worst.iter_mut().zip(vals) {
            *a = a.max(b);
        }
    }
    let names = ["idempotent", "orthogonal", "complete", "diagonalizes"];
    let mut tab = Table::new("projector_identities", &["identity", "max_entry"]).comment("identities: 0 Π±²−Π±, 1 Π₊Π₋, 2 Π₊+Π₋−I, 3 ⟨ξ⟩(Π₊−Π₋) − (ξ_jγ⁰γ^j + Mγ⁰)");
    let mut out = Outcome::new();
    for (i, v) in worst.iter().enumerate() {
        tab.push(vec![i as f64, *v]);
        out.checks.push(Check::at_most(names[i], *v, 1e-12));
    }
    out.plots.push(PlotSpec::Bars { table: "projector_identities".into(), label: "identity".into(), y: "max_entry".into(), log: true });
    out.tables.push(tab);
    let spec = cfg.metric_spec();
    if !spec.is_flat() {
        let width = g.half_width() / 4.0;
        let ks = cfg.params.ks.clone().unwrap_or(vec![0, 1]);
        let tests: Vec<(i32, SpinorField)> = ks
            .iter()
            .map(|&k| {
                let f = 2f64.powi(k);
                (k, SpinorField::from_fn(&g, move |x| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    let z = C64::from_polar((-r2 / (2.0 * width * width)).exp(), f * x[0]);
                    [z, C64::new(0.0, 0.0), z * 0.5, C64::new(0.0, 0.0)]
                }))
            })
            .collect();
        let rows = pdo::projector_defect(&spec, cfg.mass, 1.0, &g, 0.0, &tests)?;
        let mut dt = Table::new("projector_defect", &["k", "defect", "reduced", "cross"]).comment("‖(Π₊Π₊ − Π₊)u_k‖/‖u_k‖, the same after removing the leading-order proxy, and the cross term");
        for r in &rows {
            dt.push(vec![r.k as f64, r.defect, r.reduced, r.cross]);
        }
        out.metric("defect_slope", rows.last().map(|r| r.slope_so_far).unwrap_or(f64::NAN));
        out.plots.push(PlotSpec::Line { table: "projector_defect".into(), x: "k".into(), y: vec!["defect".into(), "reduced".into()] });
        out.tables.push(dt);
    }
    Ok(out)
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, rx: f64, rxi: f64) -> PhasePoint {
    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-rx..rx)).collect();
    let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-rxi..rxi)).collect();
    PhasePoint::new(&x, &xi)
}

/// ‖FᵀΩF − Ω‖ for the forward phase-space Jacobian.
fn symplectic_defect(f: &DMatrix<f64>) -> f64 {
    let n = f.nrows() / 2;
    let omega = DMatrix::from_fn(2 * n, 2 * n, |i, j| if j == i + n { 1.0 } else if i == j + n { -1.0 } else { 0.0 });
    (f.transpose() * &omega * f - &omega).norm()
}

fn flow(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.grid.dim;
    let spec = cfg.metric_spec();
    let lambda = 1.0 / cfg.mass;
    let h = HalfKgHamiltonian::new(lambda, spec.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (s, t) = (1.0, 1.0 + cfg.horizon);
    let mut tab = Table::new("flow_jacobian", &["sample", "relative_deviation", "prefactor", "fd_error", "dxis_dxs_norm", "symplectic_defect"]).comment(format!("s = {s}, t = {t}; deviation of ∂x_t/∂ξ_s from (t−s)Φ_KG(ξ_t)"));
    let (mut worst_dev, mut worst_symp) = (0.0f64, 0.0f64);
    let mut first = None;
    for m in 0..cfg.params.samples.unwrap_or(8) {
        let p0 = random_point(&mut rng, d, 2.0, 1.5);
        let jac = flow_jacobian(&h, &p0, s, t, lambda)?;
        let rel = jac.deviation / jac.reference.norm();
        let symp = symplectic_defect(&jac.forward);
        worst_dev = worst_dev.max(rel);
        worst_symp = worst_symp.max(symp);
        tab.push(vec![m as f64, rel, jac.prefactor, jac.fd_error, jac.dxis_dxs.norm(), symp]);
        first.get_or_insert(p0);
    }
    let mut out = Outcome::new();
    if let Some(p0) = first {
        let traj = integrate_flow(&h, &p0, s, t, FlowOptions { tol: 1e-10, samples: 128 })?;
        let mut cols = vec!["t".to_string()];
        cols.extend((0..d).map(|a| format!("x{a}")));
        cols.extend((0..d).map(|a| format!("xi{a}")));
        let col_refs: Vec<&str> = cols.iter().map(|c| c.as_str()).collect();
        let mut tt = Table::new("trajectory", &col_refs).comment("Hamilton trajectory of the first sample");
        for (tm, p) in traj.times.iter().zip(&traj.states) {
            let mut row = vec![*tm];
            row.extend_from_slice(&p.x[..d]);
            row.extend_from_slice(&p.xi[..d]);
            tt.push(row);
        }
        out.metric("accepted_steps", traj.accepted);
        out.metric("rejected_steps", traj.rejected);
        out.tables.push(tt);
        out.plots.push(PlotSpec::Line { table: "trajectory".into(), x: "t".into(), y: (0..d).map(|a| format!("x{a}")).collect() });
    }
    if spec.is_flat() {
        out.checks.push(Check::at_most("flat Jacobian vs (t−s)Φ_KG", worst_dev, 1e-6));
    }
    out.checks.push(Check::at_most("symplectic defect", worst_symp, 1e-6));
    out.tables.insert(0, tab);
    Ok(out)
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if r > 0.1 && r <= 1.0 {
            return v.iter().map(|a| a / r).collect();
        }
    }
}

/// A unit vector making angle arccos(c) with `a`; in d = 1 only c = ±1 is possible.
fn at_cosine(rng: &mut ChaCha8Rng, a: &[f64], c: f64) -> Vec<f64> {
    if a.len() == 1 {
        return vec![a[0] * c.signum()];
    }
    let mut w = unit(rng, a.len());
    let p: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
    for (x, y) in w.iter_mut().zip(a) {
        *x -= p * y;
    }
    let r = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = (1.0 - c * c).max(0.0).sqrt();
    a.iter().zip(&w).map(|(x, y)| c * x + s * y / r).collect()
}

fn damping(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.grid.dim;
    let lambda = 1.0 / cfg.mass;
    let dmp = DampingSymbol::standard(lambda);
    let spec = cfg.metric_spec();
    let t1 = cfg.horizon.max(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (e1, eps1) = (dmp.eps.e(1.0), dmp.eps.eps(1.0));
    let mut trajs = Vec::new();
    let n = cfg.params.samples.unwrap_or(200);
    for m in 0..n {
        let metric = if m % 2 == 0 { MetricSpec::flat(d) } else { spec.clone() };
        let h = HalfKgHamiltonian::new(lambda, metric);
        let xhat = unit(&mut rng, d);
        let mut r = rng.gen_range(0.5..4.0);
        let mut k = 2f64.powf(rng.gen_range(-3.0..3.0));
        let mut c = rng.gen_range(-1.0..1.0);
        // half of the starts sit inside one of the thin layers 0 ≤ b_j ≤ 1
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
        let x: Vec<f64> = xhat.iter().map(|v| r * v).collect();
        let xi: Vec<f64> = khat.iter().map(|v| k * v).collect();
        trajs.push(integrate_flow(&h, &PhasePoint::new(&x, &xi), 1.0, t1, FlowOptions { tol: 1e-10, samples: 256 })?);
    }
    let rep = verify_damping_monotone(&dmp, &trajs, 0.1);
    let mut tab = Table::new("damping_active", &["j", "active_samples", "worst_rate_ratio"]).comment("per factor b_j: samples in the layer 0 ≤ b_j ≤ 1 and the worst (db_j/dt)/(2/t)");
    for j in 0..5 {
        tab.push(vec![(j + 1) as f64, rep.active[j] as f64, rep.worst_ratio[j]]);
    }
    let mut out = Outcome::new();
    out.metric("samples", rep.samples);
    out.metric("max_increase", rep.max_increase);
    out.metric("doubling_checked", rep.doubling_checked);
    out.checks.push(Check::at_most("range violations", rep.range_violations as f64, 0.0));
    out.checks.push(Check::at_most("monotonicity violations", rep.monotone_violations as f64, 0.0));
    out.checks.push(Check::at_most("rate violations on active sets", rep.derivative_violations as f64, 0.0));
    out.checks.push(Check::at_most("doubling violations", rep.doubling_violations as f64, 0.0));
    let active: usize = rep.active.iter().sum();
    out.checks.push(Check::holds("active samples", active as f64, "> 0", active > 0));
    out.plots.push(PlotSpec::Bars { table: "damping_active".into(), label: "j".into(), y: "active_samples".into(), log: false });
    out.tables.push(tab);
    Ok(out)
}

fn kernel_probe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.grid();
    let d = g.dim();
    let spec = cfg.metric_spec();
    let s = cfg.params.start.unwrap_or((4.0 * g.dx() * g.dx()).max(2.0));
    let t = s + cfg.horizon;
    let (pc, steps) = propagator(cfg, spec.clone(), t - s)?;
    let lambda = 1.0 / cfg.mass;
    let ham = HalfKgHamiltonian::new(lambda, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probes = Vec::new();
    for m in 0..cfg.params.samples.unwrap_or(6) {
        let p0 = random_point(&mut rng, d, g.half_width() / 8.0, 1.0);
        let end = integrate_flow(&ham, &p0, s, t, FlowOptions { tol: 1e-10, samples: 16 })?.last().clone();
        // probe the flow endpoint and increasingly distant points
        let off = (m % 3) as f64;
        let mut x = end.x[..d].to_vec();
        let mut xi = end.xi[..d].to_vec();
        x[0] += off * t.sqrt();
        xi[0] += off / s.sqrt();
        probes.push(Probe { x_s: p0.x[..d].to_vec(), xi_s: p0.xi[..d].to_vec(), x, xi });
    }
    let evolve_fn = |u: &SpectralField| -> Result<SpectralField> {
        let mut v = u.clone();
        for m in 0..steps {
            v = evolve::step(&v, &pc, None, s + m as f64 * pc.dt)?;
        }
        Ok(v)
    };
    let n_exp = cfg.params.n_exp.unwrap_or(1.0);
    let rows = kernel_decay_probe(&evolve_fn, &ham, &g, t, s, &probes, n_exp, None)?;
    let mut tab = Table::new("kernel_probe", &["probe", "t", "s", "measured", "bound", "ratio"]).comment(format!("|K| at phase points against the pointwise bound with N = {n_exp}"));
    let mut worst = 0.0f64;
    for (i, r) in rows.iter().enumerate() {
        tab.push(vec![i as f64, r.t, r.s, r.measured, r.bound, r.ratio]);
        worst = worst.max(r.ratio);
    }
    let mut out = Outcome::new();
    out.metric("max_ratio", worst);
    out.checks.push(Check::at_most("max measured/bound", worst, cfg.params.max_ratio.unwrap_or(10.0)));
    out.plots.push(PlotSpec::Bars { table: "kernel_probe".into(), label: "probe".into(), y: "ratio".into(), log: true });
    out.tables.push(tab);
    Ok(out)
}

fn dirac(cfg: &ExperimentConfig) -> Result<Outcome> {
    let g = cfg.grid();
    let spec = cfg.metric_spec();
    let raw = SpinorField::from_fn(&g, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let z = C64::from_polar((-r2 / 18.0).exp(), 0.4 * x[0]);
        [z, C64::new(0.0, 0.0), C64::new(0.0, 0.0), z * 0.5]
    });
    let unit = pdo::flat_projector(cfg.mass, 1.0, &g)?.apply_spinor(&raw)?;
    let unit = unit.clone().scale(C64::new(1.0 / unit.comps[0].sup_norm(), 0.0));
    let s = cfg.s;
    let a = cfg.params.amplitude.unwrap_or(0.4);
    let amps = [a, a / 2.0, a / 4.0];
    let saves: Vec<f64> = (1..=5).map(|k| cfg.horizon * k as f64 / 5.0).collect();
    let opts = |eta: f64, nonlinear: bool| evolve::DiracOptions { s, eta, nonlinear, dealias: true, save_times: saves.clone() };
    let top = evolve::spinor_sobolev(&unit, s) * a;
    let linear = evolve::cubic_dirac_solve(&unit, &spec, cfg.mass, cfg.horizon, cfg.dt, &opts(top, false))?;
    let mut norms = Table::new("dirac_norms", &["t", "hs_a", "hs_a2", "hs_a4"]).comment(format!("‖ψ(t)‖_(H^s), s = {s}, for amplitudes {a}, {}, {}", a / 2.0, a / 4.0));
    let mut devs = Table::new("dirac_deviation", &["amplitude", "deviation"]).comment(format!("‖ψ_cubic(T) − ψ_linear(T)‖_(L²) at T = {}", cfg.horizon));
    let mut hs_cols = Vec::new();
    let mut pts = Vec::new();
    let mut smallest = None;
    for &amp in &amps {
        let psi0 = unit.clone().scale(C64::new(amp, 0.0));
        let eta = evolve::spinor_sobolev(&psi0, s);
        let run = evolve::cubic_dirac_solve(&psi0, &spec, cfg.mass, cfg.horizon, cfg.dt, &opts(eta, true))?;
        let dev = run.last.sub(&linear.last.clone().scale(C64::new(amp, 0.0))).norm_l2();
        devs.push(vec![amp, dev]);
        pts.push((amp.ln(), dev.ln()));
        hs_cols.push(run.hs.clone());
        smallest = Some((eta, run));
    }
    let (eta, run) = smallest.expect("three amplitudes");
    for (i, t) in run.times.iter().enumerate() {
        norms.push(vec![*t, hs_cols[0][i], hs_cols[1][i], hs_cols[2][i]]);
    }
    let (slope, _) = measure::linear_fit(&pts);
    let growth = run.hs.iter().fold(0.0f64, |m, &v| m.max(v)) / run.hs[0];
    let rows = evolve::scattering_tail(&run, s);
    let mut tail = Table::new("dirac_tail", &["t", "t_prime", "plus", "minus"]).comment(format!("c(t,t′) for the smallest amplitude, η = {eta:e}"));
    for r in &rows {
        tail.push(vec![r.t, r.t_prime, r.plus, r.minus]);
    }
    let t_end = saves[saves.len() - 1];
    let last_col: Vec<f64> = rows.iter().filter(|r| (r.t - t_end).abs() < cfg.dt).map(|r| r.plus.hypot(r.minus)).collect();
    let decreasing = last_col.windows(2).all(|w| w[1] < w[0]);
    let final_tail = last_col.last().copied().unwrap_or(f64::NAN);
    let mut out = Outcome::new();
    out.metric("eta", eta);
    out.metric("slope", slope);
    out.checks.push(Check::within("cubic deviation slope", slope, 3.0, 0.3));
    out.checks.push(Check::at_most("H^s growth at a/4", growth, 2.0));
    out.checks.push(Check::holds("tail decreasing in t′", if decreasing { 1.0 } else { 0.0 }, "= 1", decreasing));
    out.checks.push(Check::at_most("final tail / η", final_tail / eta, 0.1));
    out.plots.push(PlotSpec::LogLog { table: "dirac_deviation".into(), x: "amplitude".into(), y: vec!["deviation".into()], reference_slope: Some(3.0) });
    out.plots.push(PlotSpec::Line { table: "dirac_norms".into(), x: "t".into(), y: vec!["hs_a".into(), "hs_a2".into(), "hs_a4".into()] });
    out.tables.extend([norms, devs, tail]);
    Ok(out)
}
