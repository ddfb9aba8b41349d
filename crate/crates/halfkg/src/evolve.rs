use crate::error::{Error, Result};
use crate::exec;
use crate::flow::DampingSymbol;
use crate::grid::{norm, Grid, SpectralField};
use crate::metric::MetricSpec;
use crate::pdo::{self, QuantizedOperator, SpinorField};
use crate::spin::M4;
use crate::profile::{dyadic_low, dyadic_piece, smooth_step};
use crate::C64;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    ExactFlat,
    SplitStep,
    Damped,
}

#[derive(Clone, Debug)]
pub struct PropagatorConfig {
    pub metric: MetricSpec,
    pub mass: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// 2/3-rule truncation after every step.
    pub dealias: bool,
    /// Optional sharp frequency window enforced after every step.
    pub window: Option<(f64, f64)>,
}

impl PropagatorConfig {
    pub fn new(metric: MetricSpec, mass: f64, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0) || !(mass > 0.0) {
            return Err(Error::NotPositive(vec![dt, mass]));
        }
        Ok(PropagatorConfig { metric, mass, dt, scheme, dealias: false, window: None })
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        if self.dt > grid.dx() {
            return Err(Error::StepTooLarge(format!("dt = {} exceeds the grid spacing {}", self.dt, grid.dx())));
        }
        Ok(())
    }

    fn finish(&self, u: SpectralField) -> SpectralField {
        let u = if self.dealias { dealias(u) } else { u };
        match self.window {
            Some((lo, hi)) => u.multiply_spectrum(move |xi| {
                let r = norm(xi);
                C64::new(if r >= lo && r <= hi { 1.0 } else { 0.0 }, 0.0)
            }),
            None => u,
        }
    }
}

/// Zero every coefficient with |k_a| > n/3 on some axis.
pub fn dealias(u: SpectralField) -> SpectralField {
    let g = u.grid().clone();
    let cut = (g.n() / 3) as i64;
    let mut c = u.into_coeffs();
    for (i, v) in c.data_mut().iter_mut().enumerate() {
        let idx = g.unravel(i);
        if (0..g.dim()).any(|a| g.k_index(idx[a]).abs() > cut) {
            *v = C64::new(0.0, 0.0);
        }
    }
    c
}

fn japanese(mass: f64, xi: &[f64]) -> f64 {
    (mass * mass + xi.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// e^{-i sign dt ⟨D⟩_M}.
pub fn flat_halfkg_step_signed(u: &SpectralField, mass: f64, dt: f64, sign: f64) -> SpectralField {
    u.clone().multiply_spectrum(move |xi| C64::from_polar(1.0, -sign * dt * japanese(mass, xi)))
}

pub fn flat_halfkg_step(u: &SpectralField, mass: f64, dt: f64) -> SpectralField {
    flat_halfkg_step_signed(u, mass, dt, 1.0)
}

/// P = Σ h^{jk}(t,x)a_{jk}(D) symmetrized, with a_{jk}(ξ) = ξ_jξ_k/(2⟨ξ⟩_M), and a bound on ‖P‖.
/// The denominator √(M²+g^{ij}ξ_iξ_j) + ⟨ξ⟩_M is frozen at g = δ so that P stays separable.
pub fn perturbation_operator(grid: &Grid, spec: &MetricSpec, mass: f64, t: f64) -> Result<(QuantizedOperator, f64)> {
    let d = grid.dim();
    let h: Vec<[[f64; 3]; 3]> = exec::map(grid.len(), |i| spec.perturbation(t, &grid.point(i)[..d]));
    let sym = |j: usize, k: usize| -> Vec<f64> {
        (0..grid.len())
            .map(|q| {
                let xi = grid.freq(q);
                xi[j] * xi[k] / (2.0 * japanese(mass, &xi[..d]))
            })
            .collect()
    };
    let mut terms = Vec::new();
    let mut bound = 0.0;
    if spec.is_isotropic() {
        let f: Vec<f64> = h.iter().map(|m| m[0][0]).collect();
        let m: Vec<f64> = (0..grid.len())
            .map(|q| {
                let xi = grid.freq(q);
                let r2: f64 = xi[..d].iter().map(|v| v * v).sum();
                r2 / (2.0 * japanese(mass, &xi[..d]))
            })
            .collect();
        bound = f.iter().fold(0.0f64, |a, v| a.max(v.abs())) * m.iter().fold(0.0f64, |a, v| a.max(*v));
        terms.push((f, m));
    } else {
        for j in 0..d {
            for k in j..d {
                let w = if j == k { 1.0 } else { 2.0 };
                let f: Vec<f64> = h.iter().map(|m| w * m[j][k]).collect();
                let m = sym(j, k);
                bound += f.iter().fold(0.0f64, |a, v| a.max(v.abs())) * m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                terms.push((f, m));
            }
        }
    }
    Ok((pdo::separable(grid, terms, true)?, bound))
}

/// e^{-i c P}u by a Taylor series summed to machine precision; requires |c|‖P‖ ≤ 0.5.
fn exp_apply<F>(apply: F, u: &SpectralField, c: C64, bound: f64) -> Result<SpectralField>
where
    F: Fn(&SpectralField) -> Result<SpectralField>,
{
    if c.norm() * bound > 0.5 {
        return Err(Error::StepTooLarge(format!("‖P‖dt = {:.3} > 0.5", c.norm() * bound)));
    }
    let nu = u.norm_l2();
    let mut acc = u.clone();
    let mut term = u.clone();
    for m in 1..60 {
        term = apply(&term)?.scale(c / m as f64);
        acc = acc.add(&term);
        if term.norm_l2() <= 1e-16 * nu {
            break;
        }
    }
    Ok(acc)
}

/// One Strang step of ∂_t u = −i sign(⟨D⟩_M + P)u with P frozen at the midpoint.
pub fn perturbed_halfkg_step_signed(u: &SpectralField, cfg: &PropagatorConfig, t0: f64, sign: f64) -> Result<SpectralField> {
    cfg.check(u.grid())?;
    let h = cfg.dt / 2.0;
    let mut v = flat_halfkg_step_signed(u, cfg.mass, h, sign);
    if !cfg.metric.is_flat() {
        let (op, bound) = perturbation_operator(u.grid(), &cfg.metric, cfg.mass, t0 + h)?;
        v = exp_apply(|w| op.apply(w), &v, C64::new(0.0, -sign * cfg.dt), bound)?;
    }
    Ok(cfg.finish(flat_halfkg_step_signed(&v, cfg.mass, h, sign)))
}

pub fn perturbed_halfkg_step(u: &SpectralField, cfg: &PropagatorConfig, t0: f64) -> Result<SpectralField> {
    perturbed_halfkg_step_signed(u, cfg, t0, 1.0)
}

/// Kohn-Nirenberg quantization of √𝔅 at a fixed time, tabulated on the full (x, ξ) lattice.
/// The damping generator is B = S*S, which is nonnegative by construction.
pub struct DampingOperator {
    grid: Grid,
    pub t: f64,
    table: Vec<f32>,
    phase: Vec<C64>,
    /// sup √𝔅, so ‖B‖ ≤ bound² up to quantization error.
    pub bound: f64,
}

pub const DAMPING_TABLE_BUDGET: usize = 1 << 26;

impl DampingOperator {
    pub fn new(grid: &Grid, dmp: &DampingSymbol, t: f64) -> Result<Self> {
        let nn = grid.len();
        if nn.saturating_mul(nn) > DAMPING_TABLE_BUDGET {
            return Err(Error::Budget(format!("damping table needs {} entries", nn * nn)));
        }
        if t < 1.0 {
            return Err(Error::Invalid(format!("damping is defined for t ≥ 1, got {t}")));
        }
        let d = grid.dim();
        let (et, epst) = (dmp.eps.e(t), dmp.eps.eps(t));
        let amp = t.powf(-0.375);
        let table: Vec<f32> = exec::map(nn, |i| {
            let x = grid.point(i);
            (0..nn)
                .map(|k| {
                    let xi = grid.freq(k);
                    let b = dmp.factors_with(t, et, epst, &x[..d], &xi[..d]);
                    (amp * DampingSymbol::combine(&b).sqrt()) as f32
                })
                .collect::<Vec<f32>>()
        })
        .into_iter()
        .flatten()
        .collect();
        let n = grid.n();
        let mut phase = Vec::with_capacity(n * n);
        for m in 0..n {
            for k in 0..n {
                phase.push(C64::from_polar(1.0, grid.x_axis()[m] * grid.xi_axis()[k]));
            }
        }
        Ok(DampingOperator { grid: grid.clone(), t, table, phase, bound: amp })
    }

    fn ph(&self, i: &[usize; 3], k: &[usize; 3]) -> C64 {
        let n = self.grid.n();
        let mut p = C64::new(1.0, 0.0);
        for a in 0..self.grid.dim() {
            p *= self.phase[i[a] * n + k[a]];
        }
        p
    }

    /// Su(x_i) = (dξ/√2π)^d Σ_k s(x_i,ξ_k)û_k e^{ix_i·ξ_k}.
    pub fn apply_s(&self, u: &SpectralField) -> SpectralField {
        let g = &self.grid;
        let nn = g.len();
        let uc = u.coeffs();
        let nz: Vec<(usize, [usize; 3])> = (0..nn).filter(|&k| uc[k].norm_sqr() > 0.0).map(|k| (k, g.unravel(k))).collect();
        let c = (g.dxi() / (2.0 * PI).sqrt()).powi(g.dim() as i32);
        let out = exec::map(nn, |i| {
            let ii = g.unravel(i);
            let row = &self.table[i * nn..(i + 1) * nn];
            let mut acc = C64::new(0.0, 0.0);
            for (k, kk) in &nz {
                let s = row[*k];
                if s != 0.0 {
                    acc += uc[*k] * self.ph(&ii, kk) * s as f64;
                }
            }
            acc * c
        });
        SpectralField::from_values(g, out).unwrap()
    }

    /// S*v with coefficients (dx/√2π)^d Σ_i s(x_i,ξ_k)v_i e^{-ix_i·ξ_k}.
    pub fn apply_s_adjoint(&self, v: &SpectralField) -> SpectralField {
        let g = &self.grid;
        let nn = g.len();
        let vv = v.values();
        let nz: Vec<(usize, [usize; 3])> = (0..nn).filter(|&i| vv[i].norm_sqr() > 0.0).map(|i| (i, g.unravel(i))).collect();
        let c = (g.dx() / (2.0 * PI).sqrt()).powi(g.dim() as i32);
        let out = exec::map(nn, |k| {
            let kk = g.unravel(k);
            let mut acc = C64::new(0.0, 0.0);
            for (i, ii) in &nz {
                let s = self.table[i * nn + k];
                if s != 0.0 {
                    acc += vv[*i] * self.ph(ii, &kk).conj() * s as f64;
                }
            }
            acc * c
        });
        SpectralField::from_coeffs(g, out).unwrap()
    }

    pub fn apply_b(&self, u: &SpectralField) -> SpectralField {
        self.apply_s_adjoint(&self.apply_s(u))
    }
}

/// Strang step of (D_t + ⟨D⟩_M + P − i𝔅)u = 0: half flat, perturbation, e^{-dt B}, half flat.
pub fn damped_step(u: &SpectralField, cfg: &PropagatorConfig, dmp: &DampingSymbol, t0: f64) -> Result<SpectralField> {
    cfg.check(u.grid())?;
    if t0 < 1.0 {
        return Err(Error::Invalid(format!("damped evolution starts at t ≥ 1, got {t0}")));
    }
    let h = cfg.dt / 2.0;
    let mut v = flat_halfkg_step(u, cfg.mass, h);
    if !cfg.metric.is_flat() {
        let (op, bound) = perturbation_operator(u.grid(), &cfg.metric, cfg.mass, t0 + h)?;
        v = exp_apply(|w| op.apply(w), &v, C64::new(0.0, -cfg.dt), bound)?;
    }
    let b = DampingOperator::new(u.grid(), dmp, t0 + h)?;
    v = exp_apply(|w| Ok(b.apply_b(w)), &v, C64::new(-cfg.dt, 0.0), b.bound * b.bound)?;
    Ok(cfg.finish(flat_halfkg_step(&v, cfg.mass, h)))
}

/// Step according to `cfg.scheme`.
pub fn step(u: &SpectralField, cfg: &PropagatorConfig, dmp: Option<&DampingSymbol>, t0: f64) -> Result<SpectralField> {
    match (cfg.scheme, dmp) {
        (Scheme::ExactFlat, _) => Ok(cfg.finish(flat_halfkg_step(u, cfg.mass, cfg.dt))),
        (Scheme::SplitStep, _) => perturbed_halfkg_step(u, cfg, t0),
        (Scheme::Damped, Some(d)) => damped_step(u, cfg, d, t0),
        (Scheme::Damped, None) => Err(Error::Invalid("damped scheme needs a damping symbol".into())),
    }
}

/// p_j(x,ξ) = χ_j(|x|)ρ(ξ)c(x̂·ξ̂): χ₀ = S_{<0}, χ_j dyadic for j ≥ 1, ρ = ρ₋₁+ρ₀+ρ₁ and
/// c rising from 0 at x̂·ξ̂ = −2^{-5} to 1 at x̂·ξ̂ = 0.
#[derive(Clone, Debug)]
pub struct OutgoingPartition {
    pub j_max: i32,
}

pub fn outgoing_partition(grid: &Grid, j_max: i32) -> Result<OutgoingPartition> {
    if j_max < 0 || 2f64.powi(j_max + 1) > grid.half_width() {
        return Err(Error::BoxTooSmall(format!("2^(j_max+1) = {} exceeds the half width {}", 2f64.powi(j_max + 1), grid.half_width())));
    }
    Ok(OutgoingPartition { j_max })
}

impl OutgoingPartition {
    pub fn annulus(xi: &[f64]) -> f64 {
        let r = norm(xi);
        dyadic_low(r / 2.0) - dyadic_low(4.0 * r)
    }

    pub fn cone(x: &[f64], xi: &[f64]) -> f64 {
        let (rx, rxi) = (norm(x), norm(xi));
        if rx == 0.0 || rxi == 0.0 {
            return 1.0;
        }
        let c = crate::grid::dot(x, xi) / (rx * rxi);
        smooth_step((c + 1.0 / 32.0) * 32.0)
    }

    pub fn radial(&self, j: i32, r: f64) -> f64 {
        if j == 0 {
            dyadic_low(r)
        } else {
            dyadic_piece(r, j)
        }
    }

    pub fn eval(&self, j: i32, x: &[f64], xi: &[f64]) -> f64 {
        if j < 0 || j > self.j_max {
            return 0.0;
        }
        self.radial(j, norm(x)) * Self::annulus(xi) * Self::cone(x, xi)
    }

    pub fn sum(&self, x: &[f64], xi: &[f64]) -> f64 {
        (0..=self.j_max).map(|j| self.eval(j, x, xi)).sum()
    }

    pub fn symbol(&self, dim: usize, j: i32) -> pdo::Symbol {
        let me = self.clone();
        pdo::Symbol::scalar(dim, 0.0, move |_, x, xi| C64::new(me.eval(j, x, xi), 0.0))
    }

    /// 𝒫_j u = p_j^w u.
    pub fn apply(&self, j: i32, u: &SpectralField) -> Result<SpectralField> {
        let op = pdo::quantize(&self.symbol(u.grid().dim(), j), pdo::Flavor::Weyl, u.grid(), 0.0)?;
        op.apply(u)
    }
}

#[derive(Clone, Debug)]
pub struct ParametrixReport {
    pub j: i32,
    pub s: f64,
    pub t: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// ‖1_{|x|<r_in}u(t)‖/‖data‖.
    pub inner: f64,
    pub outer: f64,
    /// ‖(1 − P_{[1/16,16]})u(t)‖/‖data‖.
    pub leakage: f64,
    pub norm_ratio: f64,
    /// (t, ‖u(t)‖_∞/‖data‖) at every step.
    pub sup: Vec<(f64, f64)>,
}

fn region_norm<F: Fn(f64) -> bool>(u: &SpectralField, keep: F) -> f64 {
    let g = u.grid();
    let d = g.dim();
    let v = u.values();
    let s: f64 = v.iter().enumerate().filter(|(i, _)| keep(norm(&g.point(*i)[..d]))).map(|(_, z)| z.norm_sqr()).sum();
    (s * g.cell_volume()).sqrt()
}

pub fn band_leakage(u: &SpectralField, lo: f64, hi: f64) -> f64 {
    let g = u.grid();
    let d = g.dim();
    let c = u.coeffs();
    let s: f64 = c
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let r = norm(&g.freq(*k)[..d]);
            r < lo || r > hi
        })
        .map(|(_, z)| z.norm_sqr())
        .sum();
    (s * g.dual_cell_volume()).sqrt()
}

/// Evolve 𝒫_j-localized data from s to t and report region masses.
pub fn parametrix_diagnostics(cfg: &PropagatorConfig, dmp: Option<&DampingSymbol>, j: i32, s: f64, t: f64, data: &SpectralField) -> Result<ParametrixReport> {
    let g = data.grid();
    if !(t > s) {
        return Err(Error::Invalid(format!("need t > s, got s={s}, t={t}")));
    }
    let reach = 2f64.powi(j + 1) + (t - s);
    if reach > g.half_width() {
        return Err(Error::BoxTooSmall(format!("support can reach |x| = {reach}, beyond the half width {}", g.half_width())));
    }
    let n0 = data.norm_l2();
    let steps = ((t - s) / cfg.dt).round().max(1.0) as usize;
    let mut c = cfg.clone();
    c.dt = (t - s) / steps as f64;
    let mut u = data.clone();
    let mut sup = vec![(s, u.sup_norm() / n0)];
    for m in 0..steps {
        let t0 = s + m as f64 * c.dt;
        u = step(&u, &c, dmp, t0)?;
        sup.push((t0 + c.dt, u.sup_norm() / n0));
    }
    let scale = (t - s).abs() + 2f64.powi(j);
    let (r_in, r_out) = (scale / 1024.0, scale * 1024.0);
    Ok(ParametrixReport {
        j,
        s,
        t,
        inner_radius: r_in,
        outer_radius: r_out,
        inner: region_norm(&u, |r| r < r_in) / n0,
        outer: region_norm(&u, |r| r > r_out) / n0,
        leakage: band_leakage(&u, 1.0 / 16.0, 16.0) / n0,
        norm_ratio: u.norm_l2() / n0,
        sup,
    })
}

#[derive(Clone, Debug)]
pub struct DiracOptions {
    /// Sobolev index of the small-data guard.
    pub s: f64,
    /// Small-data scale η; the run aborts once ‖ψ‖_{H^s} > 4η.
    pub eta: f64,
    pub nonlinear: bool,
    pub dealias: bool,
    /// Times at which Π±ψ snapshots are kept (rounded to the step grid).
    pub save_times: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DiracSnapshot {
    pub t: f64,
    pub plus: SpinorField,
    pub minus: SpinorField,
}

#[derive(Clone, Debug)]
pub struct DiracSeries {
    pub mass: f64,
    pub times: Vec<f64>,
    pub hs: Vec<f64>,
    pub l2: Vec<f64>,
    pub snapshots: Vec<DiracSnapshot>,
    pub last: SpinorField,
}

pub fn spinor_sobolev(psi: &SpinorField, s: f64) -> f64 {
    psi.comps.iter().map(|c| crate::measure::sobolev_norm(c, s).powi(2)).sum::<f64>().sqrt()
}

/// e^{-itH(ξ)} = Π₊e^{-it⟨ξ⟩_M} + Π₋e^{it⟨ξ⟩_M} per frequency.
fn flat_dirac_propagator(grid: &Grid, mass: f64, t: f64) -> Vec<M4> {
    let d = grid.dim();
    exec::map(grid.len(), |k| {
        let xi = grid.freq(k);
        let w = japanese(mass, &xi[..d]);
        pdo::flat_projector_matrix(&xi[..d], mass, 1.0) * C64::from_polar(1.0, -t * w) + pdo::flat_projector_matrix(&xi[..d], mass, -1.0) * C64::from_polar(1.0, t * w)
    })
}

/// ψ ← e^{i dt ψ†ψ}ψ pointwise; |ψ(x)|² is unchanged.
pub fn nonlinear_substep(psi: &SpinorField, dt: f64) -> SpinorField {
    let vals: Vec<Vec<C64>> = psi.comps.iter().map(|c| c.values()).collect();
    let n = vals[0].len();
    let rho: Vec<f64> = (0..n).map(|i| (0..4).map(|c| vals[c][i].norm_sqr()).sum()).collect();
    let g = psi.grid();
    SpinorField {
        comps: std::array::from_fn(|c| SpectralField::from_values(g, (0..n).map(|i| vals[c][i] * C64::from_polar(1.0, dt * rho[i])).collect()).unwrap()),
    }
}

fn dealias_spinor(psi: SpinorField) -> SpinorField {
    psi.map(dealias)
}

struct CurvedLinear {
    cfg: PropagatorConfig,
    plus: QuantizedOperator,
    minus: QuantizedOperator,
}

impl CurvedLinear {
    /// Half-KG step of each projected component with the (1+𝓔)⁻¹[⟨D⟩_M, 𝓔] correction, Neumann order 2.
    fn step(&self, psi: &SpinorField, t0: f64, dt: f64) -> Result<SpinorField> {
        let mut cfg = self.cfg.clone();
        cfg.dt = dt;
        let spec = &self.cfg.metric;
        let m = self.cfg.mass;
        let mut out = SpinorField::zeros(psi.grid());
        for (sign, proj) in [(1.0, &self.plus), (-1.0, &self.minus)] {
            let v = proj.apply_spinor(psi)?;
            let mut w = SpinorField { comps: std::array::from_fn(|c| perturbed_halfkg_step_signed(&v.comps[c], &cfg, t0, sign).unwrap()) };
            let jd = |f: &SpinorField| f.clone().map(|c| c.multiply_spectrum(move |xi| C64::new(japanese(m, xi), 0.0)));
            let e = |f: &SpinorField| pdo::e0_proxy(spec, m, t0 + dt / 2.0, f);
            let comm = jd(&e(&w)).sub(&e(&jd(&w)));
            let corr = comm.sub(&e(&comm)).add(&e(&e(&comm)));
            w = w.axpy(C64::new(0.0, -sign * dt), &corr);
            out = out.add(&w);
        }
        Ok(out)
    }
}

/// Strang splitting for (−iγ^μ𝐃_μ + M)ψ = (ψ†ψ)γ⁰ψ in the projected form: linear half step,
/// nonlinear substep, linear half step, then 2/3 truncation.
pub fn cubic_dirac_solve(psi0: &SpinorField, spec: &MetricSpec, mass: f64, horizon: f64, dt: f64, opts: &DiracOptions) -> Result<DiracSeries> {
    let grid = psi0.grid().clone();
    if !(dt > 0.0 && horizon > 0.0 && mass > 0.0) {
        return Err(Error::NotPositive(vec![dt, horizon, mass]));
    }
    let steps = (horizon / dt).round().max(1.0) as usize;
    let dt = horizon / steps as f64;
    let flat = spec.is_flat();
    let half = if flat { flat_dirac_propagator(&grid, mass, dt / 2.0) } else { Vec::new() };
    let curved = if flat {
        None
    } else {
        let cfg = PropagatorConfig::new(spec.clone(), mass, dt / 2.0, Scheme::SplitStep)?;
        Some(CurvedLinear { cfg, plus: pdo::curved_projector(spec, mass, 1.0, &grid, 0.0)?, minus: pdo::curved_projector(spec, mass, -1.0, &grid, 0.0)? })
    };
    let linear = |psi: &SpinorField, t0: f64| -> Result<SpinorField> {
        match &curved {
            None => Ok(psi.apply_multiplier(&half)),
            Some(c) => c.step(psi, t0, dt / 2.0),
        }
    };
    let project = |psi: &SpinorField| -> Result<(SpinorField, SpinorField)> {
        match &curved {
            None => {
                let p = pdo::flat_projector(mass, 1.0, &grid)?.apply_spinor(psi)?;
                Ok((p.clone(), psi.sub(&p)))
            }
            Some(c) => Ok((c.plus.apply_spinor(psi)?, c.minus.apply_spinor(psi)?)),
        }
    };
    let limit = 4.0 * opts.eta;
    let mut psi = if opts.dealias { dealias_spinor(psi0.clone()) } else { psi0.clone() };
    let mut series = DiracSeries { mass, times: vec![0.0], hs: vec![spinor_sobolev(&psi, opts.s)], l2: vec![psi.norm_l2()], snapshots: Vec::new(), last: psi.clone() };
    let mut pending: Vec<f64> = opts.save_times.clone();
    pending.sort_by(f64::total_cmp);
    let mut save = |t: f64, psi: &SpinorField, series: &mut DiracSeries| -> Result<()> {
        while let Some(&ts) = pending.first() {
            if ts <= t + dt / 2.0 {
                let (plus, minus) = project(psi)?;
                series.snapshots.push(DiracSnapshot { t, plus, minus });
                pending.remove(0);
            } else {
                break;
            }
        }
        Ok(())
    };
    save(0.0, &psi, &mut series)?;
    for m in 0..steps {
        let t0 = m as f64 * dt;
        psi = linear(&psi, t0)?;
        if opts.nonlinear {
            psi = nonlinear_substep(&psi, dt);
        }
        psi = linear(&psi, t0 + dt / 2.0)?;
        if opts.dealias {
            psi = dealias_spinor(psi);
        }
        let t = t0 + dt;
        let hs = spinor_sobolev(&psi, opts.s);
        if !hs.is_finite() || hs > limit {
            return Err(Error::LeftSmallData { norm: hs, limit });
        }
        series.times.push(t);
        series.hs.push(hs);
        series.l2.push(psi.norm_l2());
        save(t, &psi, &mut series)?;
    }
    series.last = psi;
    Ok(series)
}

#[derive(Clone, Debug)]
pub struct TailRow {
    pub t: f64,
    pub t_prime: f64,
    pub plus: f64,
    pub minus: f64,
}

/// c(t,t′) = ‖U₀(−t)Π±ψ(t) − U₀(−t′)Π±ψ(t′)‖_{H^s} over all saved pairs t > t′.
pub fn scattering_tail(series: &DiracSeries, s: f64) -> Vec<TailRow> {
    let m = series.mass;
    let pull = |f: &SpinorField, t: f64, sign: f64| f.clone().map(|c| flat_halfkg_step_signed(&c, m, -t, sign));
    let back: Vec<(f64, SpinorField, SpinorField)> = series.snapshots.iter().map(|sn| (sn.t, pull(&sn.plus, sn.t, 1.0), pull(&sn.minus, sn.t, -1.0))).collect();
    let mut rows = Vec::new();
    for (a, (t, p, q)) in back.iter().enumerate() {
        for (tp, pp, qp) in back.iter().take(a) {
            rows.push(TailRow { t: *t, t_prime: *tp, plus: spinor_sobolev(&p.sub(pp), s), minus: spinor_sobolev(&q.sub(qp), s) });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::metric::Profile;

    fn packet(g: &Grid) -> SpectralField {
        SpectralField::from_fn(g, |x| C64::from_polar((-(x.iter().map(|v| v * v).sum::<f64>()) / 8.0).exp(), 0.8 * x[0]))
    }

    #[test]
    fn flat_step_examples() {
        let g = make_grid(2, 32, 8.0).unwrap();
        let u = SpectralField::plane_wave(&g, &[3, -1]);
        let xi = [3.0 * g.dxi(), -g.dxi()];
        let t = 2.7;
        let v = flat_halfkg_step(&u, 1.0, t).into_values();
        let ph = C64::from_polar(1.0, -t * (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).sqrt());
        let uv = u.values();
        assert!(v.data().iter().zip(&uv).all(|(a, b)| (a - b * ph).norm() < 1e-12));
        let w = packet(&g);
        assert!(flat_halfkg_step(&w, 1.0, 0.0).sub(&w).norm_l2() < 1e-15);
        assert!((flat_halfkg_step(&w, 1.0, 13.0).norm_l2() / w.norm_l2() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn perturbed_reduces_to_flat() {
        let g = make_grid(2, 32, 16.0).unwrap();
        let cfg = PropagatorConfig::new(MetricSpec::flat(2), 1.0, 0.5, Scheme::SplitStep).unwrap();
        let u = packet(&g);
        let a = perturbed_halfkg_step(&u, &cfg, 0.0).unwrap();
        let b = flat_halfkg_step(&u, 1.0, 0.5);
        assert!(a.sub(&b).norm_l2() < 1e-14);
        let big = PropagatorConfig::new(MetricSpec::flat(2), 1.0, 2.0, Scheme::SplitStep).unwrap();
        assert!(matches!(perturbed_halfkg_step(&u, &big, 0.0), Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn perturbed_second_order() {
        let g = make_grid(2, 32, 16.0).unwrap();
        let spec = MetricSpec::new(2, 0.01, Profile::RadialBump { width: 3.0 });
        let u = packet(&g);
        let run = |dt: f64| {
            let cfg = PropagatorConfig::new(spec.clone(), 1.0, dt, Scheme::SplitStep).unwrap();
            let mut v = u.clone();
            let n = (2.0 / dt).round() as usize;
            for m in 0..n {
                v = perturbed_halfkg_step(&v, &cfg, m as f64 * dt).unwrap();
            }
            v
        };
        let (a, b, c) = (run(0.5), run(0.25), run(0.125));
        let order = (a.sub(&b).norm_l2() / b.sub(&c).norm_l2()).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
        assert!((c.norm_l2() / u.norm_l2() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn partition_support_and_sum() {
        let g = make_grid(2, 64, 32.0).unwrap();
        let p = outgoing_partition(&g, 3).unwrap();
        assert!(outgoing_partition(&g, 4).is_ok() && outgoing_partition(&g, 5).is_err());
        let xi = [0.6, 0.8];
        let x = [2.4, 3.2];
        assert!((p.sum(&x, &xi) - OutgoingPartition::annulus(&xi)).abs() < 1e-12);
        let inc = [-2.4, -3.2];
        assert!((0..=3).all(|j| p.eval(j, &inc, &xi) == 0.0));
        for j in 0..=3 {
            for k in (j + 2)..=3 {
                for r in [0.3, 1.0, 1.7, 3.0, 5.5, 9.0, 14.0] {
                    assert_eq!(p.eval(j, &[r, 0.0], &[1.0, 0.0]) * p.eval(k, &[r, 0.0], &[1.0, 0.0]), 0.0);
                }
            }
        }
    }

    #[test]
    fn nonlinear_substep_is_pointwise_unitary() {
        let g = make_grid(1, 32, 8.0).unwrap();
        let psi = SpinorField::from_fn(&g, |x| [C64::new(x[0].cos(), 0.2), C64::new(0.0, 0.5), C64::new(0.1 * x[0], 0.0), C64::new(0.3, -0.1)]);
        let out = nonlinear_substep(&psi, 0.7);
        let a: Vec<Vec<C64>> = psi.comps.iter().map(|c| c.values()).collect();
        let b: Vec<Vec<C64>> = out.comps.iter().map(|c| c.values()).collect();
        for i in 0..g.len() {
            let ra: f64 = (0..4).map(|c| a[c][i].norm_sqr()).sum();
            let rb: f64 = (0..4).map(|c| b[c][i].norm_sqr()).sum();
            assert!((ra - rb).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_and_linear_tail() {
        let g = make_grid(1, 64, 32.0).unwrap();
        let opts = DiracOptions { s: 1.5, eta: 1.0, nonlinear: true, dealias: true, save_times: vec![0.0, 2.0, 4.0] };
        let z = cubic_dirac_solve(&SpinorField::zeros(&g), &MetricSpec::flat(1), 1.0, 4.0, 0.5, &opts).unwrap();
        assert_eq!(z.last.norm_l2(), 0.0);
        let psi = SpinorField::from_fn(&g, |x| {
            let e = (-x[0] * x[0] / 8.0).exp();
            [C64::new(e, 0.0), C64::new(0.0, 0.5 * e), C64::new(0.0, 0.0), C64::new(0.2 * e, 0.0)]
        });
        let lin = DiracOptions { nonlinear: false, ..opts };
        let run = cubic_dirac_solve(&psi, &MetricSpec::flat(1), 1.0, 4.0, 0.5, &lin).unwrap();
        assert_eq!(run.snapshots.len(), 3);
        assert!(scattering_tail(&run, 1.5).iter().all(|r| r.plus < 1e-12 && r.minus < 1e-12));
        assert!((run.l2.last().unwrap() / run.l2[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn damping_decays_norm() {
        let g = make_grid(1, 64, 32.0).unwrap();
        let dmp = DampingSymbol::standard(1.0);
        let cfg = PropagatorConfig::new(MetricSpec::flat(1), 1.0, 0.5, Scheme::Damped).unwrap();
        // incoming packet: fully damped at rate t^{-3/4}
        let u = SpectralField::from_fn(&g, |x| C64::from_polar((-(x[0] - 8.0).powi(2) / 8.0).exp(), -x[0]));
        let mut v = u.clone();
        let mut prev = v.norm_l2();
        for m in 0..8 {
            v = damped_step(&v, &cfg, &dmp, 4.0 + 0.5 * m as f64).unwrap();
            let nv = v.norm_l2();
            assert!(nv <= prev * (1.0 + 1e-12));
            prev = nv;
        }
        let expect = (-4.0 * (8f64.powf(0.25) - 4f64.powf(0.25))).exp();
        assert!((prev / u.norm_l2() / expect - 1.0).abs() < 0.05, "{} vs {}", prev / u.norm_l2(), expect);
    }
}
