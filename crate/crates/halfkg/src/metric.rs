use crate::error::{Error, Result};
use crate::exec;
use crate::flow::EpsProfile;
use crate::grid::{self, Grid, SpectralField};
use crate::jet::{Jet, NV};
use crate::profile;
use crate::C64;
use std::f64::consts::PI;
use std::sync::Arc;

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct AnisoTerm {
    pub matrix: Mat3,
    pub center: [f64; 3],
    pub width: f64,
}

/// Metric perturbation sampled on a grid and differentiated spectrally.
#[derive(Debug)]
pub struct SampledProfile {
    pub grid: Grid,
    /// Fourier coefficients of h^{ij} for i ≤ j, packed row-wise.
    pub coeffs: Vec<Vec<C64>>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub enum Profile {
    Flat,
    /// exp(-|x|²/w²) δ^{ij}
    RadialBump { width: f64 },
    /// (1+|x|²)^{-p/2} δ^{ij}
    InversePower { power: f64 },
    /// cos(2^{l₀}x₁) exp(-|x|²/w²) δ^{ij}
    DyadicBump { l0: i32, width: f64 },
    /// (1+|x|²)^{1/2} δ^{ij}, violates the decay conditions
    Growing,
    /// Σ_m A_m exp(-|x-c_m|²/w_m²)
    Anisotropic { terms: Vec<AnisoTerm> },
    Sampled(Arc<SampledProfile>),
}

/// g^{ij} = δ^{ij} + ε τ(t) h^{ij}(x), τ(t) = 1 + a sin(ω t).
#[derive(Clone, Debug)]
pub struct MetricSpec {
    pub dim: usize,
    pub eps: f64,
    pub profile: Profile,
    pub time_amp: f64,
    pub time_freq: f64,
}

fn packed(i: usize, j: usize, d: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * d - a * (a + 1) / 2 + b
}

impl MetricSpec {
    pub fn flat(dim: usize) -> Self {
        MetricSpec { dim, eps: 0.0, profile: Profile::Flat, time_amp: 0.0, time_freq: 0.0 }
    }

    pub fn new(dim: usize, eps: f64, profile: Profile) -> Self {
        MetricSpec { dim, eps, profile, time_amp: 0.0, time_freq: 0.0 }
    }

    pub fn inverse_square(dim: usize, eps: f64) -> Self {
        Self::new(dim, eps, Profile::InversePower { power: 2.0 })
    }

    pub fn with_time_modulation(mut self, amp: f64, freq: f64) -> Self {
        self.time_amp = amp;
        self.time_freq = freq;
        self
    }

    pub fn is_flat(&self) -> bool {
        self.eps == 0.0 || matches!(self.profile, Profile::Flat)
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_amp != 0.0 && !self.is_flat()
    }

    /// Highest total derivative order the profile supports.
    pub fn max_order(&self) -> usize {
        Jet::max_degree()
    }

    /// Whether h^{ij} = ρ(t,x) δ^{ij}.
    pub fn is_isotropic(&self) -> bool {
        !matches!(self.profile, Profile::Anisotropic { .. } | Profile::Sampled(_))
    }

    fn tau(&self, t: f64) -> f64 {
        1.0 + self.time_amp * (self.time_freq * t).sin()
    }

    fn radial(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().take(self.dim).map(|v| v * v).sum();
        match &self.profile {
            Profile::Flat => 0.0,
            Profile::RadialBump { width } => (-r2 / (width * width)).exp(),
            Profile::InversePower { power } => (1.0 + r2).powf(-power / 2.0),
            Profile::DyadicBump { l0, width } => (2f64.powi(*l0) * x[0]).cos() * (-r2 / (width * width)).exp(),
            Profile::Growing => (1.0 + r2).sqrt(),
            _ => 0.0,
        }
    }

    /// ε τ(t) ρ(x) for isotropic profiles.
    pub fn isotropic_factor(&self, t: f64, x: &[f64]) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        self.eps * self.tau(t) * self.radial(x)
    }

    /// h^{ij}(x) before the ε τ(t) scaling.
    fn shape(&self, x: &[f64]) -> Mat3 {
        let d = self.dim;
        let mut h = [[0.0; 3]; 3];
        match &self.profile {
            Profile::Flat => {}
            Profile::Anisotropic { terms } => {
                for term in terms {
                    let r2: f64 = (0..d).map(|a| (x[a] - term.center[a]).powi(2)).sum();
                    let f = (-r2 / (term.width * term.width)).exp();
                    for i in 0..d {
                        for j in 0..d {
                            h[i][j] += term.matrix[i][j] * f;
                        }
                    }
                }
            }
            Profile::Sampled(sp) => {
                for i in 0..d {
                    for j in 0..d {
                        h[i][j] = sp.eval(packed(i, j, d), x, &[0; 3]);
                    }
                }
            }
            _ => {
                let f = self.radial(x);
                for (i, row) in h.iter_mut().enumerate().take(d) {
                    row[i] = f;
                }
            }
        }
        h
    }

    /// ε h^{ij}(t,x) without derivatives.
    pub fn perturbation(&self, t: f64, x: &[f64]) -> Mat3 {
        if self.is_flat() {
            return [[0.0; 3]; 3];
        }
        let s = self.eps * self.tau(t);
        self.shape(x).map(|r| r.map(|v| s * v))
    }

    /// ∂_t g^{ij}(t,x).
    pub fn time_derivative(&self, t: f64, x: &[f64]) -> Mat3 {
        if !self.is_time_dependent() {
            return [[0.0; 3]; 3];
        }
        let s = self.eps * self.time_amp * self.time_freq * (self.time_freq * t).cos();
        self.shape(x).map(|r| r.map(|v| s * v))
    }

    /// g^{ij}(t,x).
    pub fn inverse_metric(&self, t: f64, x: &[f64]) -> Mat3 {
        let mut g = self.perturbation(t, x);
        for (i, row) in g.iter_mut().enumerate().take(self.dim) {
            row[i] += 1.0;
        }
        g
    }

    /// ∂_{x_a} g^{ij}(t,x) for a < d, closed form for isotropic profiles.
    pub fn gradient(&self, t: f64, x: &[f64]) -> Result<[Mat3; 3]> {
        let d = self.dim;
        let mut out = [[[0.0; 3]; 3]; 3];
        if self.is_flat() {
            return Ok(out);
        }
        if self.is_isotropic() {
            let r2: f64 = x.iter().take(d).map(|v| v * v).sum();
            let s = self.eps * self.tau(t);
            for a in 0..d {
                let da = match &self.profile {
                    Profile::RadialBump { width } => -2.0 * x[a] / (width * width) * (-r2 / (width * width)).exp(),
                    Profile::InversePower { power } => -power * x[a] * (1.0 + r2).powf(-power / 2.0 - 1.0),
                    Profile::DyadicBump { l0, width } => {
                        let k = 2f64.powi(*l0);
                        let g = (-r2 / (width * width)).exp();
                        let mut v = -2.0 * x[a] / (width * width) * (k * x[0]).cos() * g;
                        if a == 0 {
                            v -= k * (k * x[0]).sin() * g;
                        }
                        v
                    }
                    Profile::Growing => x[a] / (1.0 + r2).sqrt(),
                    _ => 0.0,
                };
                for i in 0..d {
                    out[a][i][i] = s * da;
                }
            }
            return Ok(out);
        }
        let jets = self.jets(t, x)?;
        for (a, block) in out.iter_mut().enumerate().take(d) {
            let mut e = [0usize; NV];
            e[a + 1] = 1;
            for i in 0..d {
                for j in 0..d {
                    block[i][j] = jets[i][j].derivative(&e).unwrap_or(0.0);
                }
            }
        }
        Ok(out)
    }

    /// Jets of g^{ij} in (t, x) at the point; entries beyond d are zero.
    pub fn jets(&self, t: f64, x: &[f64]) -> Result<[[Jet; 3]; 3]> {
        let d = self.dim;
        let zero = Jet::constant(0.0);
        let mut out = [[zero; 3]; 3];
        let tj = Jet::var(0, t);
        let xs: Vec<Jet> = (0..d).map(|a| Jet::var(a + 1, x[a])).collect();
        let tau = tj.scale(self.time_freq).sin().scale(self.time_amp).add_const(1.0);
        let r2 = xs.iter().fold(Jet::constant(0.0), |acc, v| acc.add(&v.mul(v)));
        let iso = |f: Jet| {
            let mut o = [[zero; 3]; 3];
            let s = f.mul(&tau).scale(self.eps);
            for (i, row) in o.iter_mut().enumerate().take(d) {
                row[i] = s;
            }
            o
        };
        let mut h = match &self.profile {
            Profile::Flat => out,
            Profile::RadialBump { width } => iso(r2.scale(-1.0 / (width * width)).exp()),
            Profile::InversePower { power } => iso(r2.add_const(1.0).powf(-power / 2.0)),
            Profile::DyadicBump { l0, width } => {
                iso(xs[0].scale(2f64.powi(*l0)).cos().mul(&r2.scale(-1.0 / (width * width)).exp()))
            }
            Profile::Growing => iso(r2.add_const(1.0).sqrt()),
            Profile::Anisotropic { terms } => {
                let mut o = [[zero; 3]; 3];
                for term in terms {
                    let rr = (0..d).fold(Jet::constant(0.0), |acc, a| {
                        let y = xs[a].add_const(-term.center[a]);
                        acc.add(&y.mul(&y))
                    });
                    let f = rr.scale(-1.0 / (term.width * term.width)).exp().mul(&tau).scale(self.eps);
                    for i in 0..d {
                        for j in 0..d {
                            o[i][j] = o[i][j].add(&f.scale(term.matrix[i][j]));
                        }
                    }
                }
                o
            }
            Profile::Sampled(sp) => {
                let mut o = [[zero; 3]; 3];
                for i in 0..d {
                    for j in i..d {
                        let jet = sp.jet(packed(i, j, d), x).mul(&tau).scale(self.eps);
                        o[i][j] = jet;
                        o[j][i] = jet;
                    }
                }
                o
            }
        };
        if self.eps == 0.0 {
            h = out;
        }
        for i in 0..d {
            for j in 0..d {
                out[i][j] = h[i][j];
            }
            out[i][i] = out[i][i].add_const(1.0);
        }
        Ok(out)
    }
}

impl SampledProfile {
    fn eval(&self, comp: usize, x: &[f64], alpha: &[usize; 3]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        if alpha.iter().all(|&a| a == 0) {
            // exact at grid points
            let i = g.nearest_index(x);
            let p = g.point(i);
            if (0..d).all(|a| (p[a] - x[a]).abs() < 1e-12) {
                return self.values[comp][i];
            }
        }
        let c = (g.dxi() / (2.0 * PI).sqrt()).powi(d as i32);
        let mut acc = C64::new(0.0, 0.0);
        for (k, v) in self.coeffs[comp].iter().enumerate() {
            let xi = g.freq(k);
            let mut factor = C64::new(1.0, 0.0);
            let mut phase = 0.0;
            for a in 0..d {
                factor *= C64::new(0.0, xi[a]).powu(alpha[a] as u32);
                phase += xi[a] * x[a];
            }
            acc += v * factor * C64::from_polar(1.0, phase);
        }
        (acc * c).re
    }

    fn jet(&self, comp: usize, x: &[f64]) -> Jet {
        let mut j = Jet::constant(0.0);
        let d = self.grid.dim();
        // Fill coefficients by spectral derivatives: c_α = ∂^α h / α!.
        for a0 in 0..=4usize {
            for a1 in 0..=(4 - a0) {
                for a2 in 0..=(4 - a0 - a1) {
                    let e = [0usize, a0, a1, a2];
                    if (d < 2 && a1 > 0) || (d < 3 && a2 > 0) {
                        continue;
                    }
                    if let Some(i) = crate::jet::index_of(&e) {
                        let fact: f64 = [a0, a1, a2].iter().map(|&a| (1..=a).product::<usize>() as f64).product();
                        j.c[i] = self.eval(comp, x, &[a0, a1, a2]) / fact;
                    }
                }
            }
        }
        j
    }
}

fn check_alpha(spec: &MetricSpec, alpha: &[usize]) -> Result<[usize; NV]> {
    let d = spec.dim;
    if alpha.len() != d + 1 {
        return Err(Error::Invalid(format!("multi-index must have {} entries", d + 1)));
    }
    let order: usize = alpha.iter().sum();
    let max = (d / 2 + 3).min(spec.max_order());
    if order > max || alpha[0] > 2 {
        return Err(Error::DerivativeOrder { order, max });
    }
    let mut e = [0usize; NV];
    e[..(d + 1)].copy_from_slice(alpha);
    Ok(e)
}

/// ∂^α g^{ij}(t,x) with α = (α₀, α₁, …, α_d).
pub fn eval_metric(spec: &MetricSpec, t: f64, x: &[f64], alpha: &[usize]) -> Result<Vec<Vec<f64>>> {
    let e = check_alpha(spec, alpha)?;
    let jets = spec.jets(t, x)?;
    let d = spec.dim;
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = jets[i][j].derivative(&e).unwrap_or(0.0);
        }
    }
    Ok(out)
}

/// All multi-indices α ∈ N^{1+d} with |α| in [lo, hi] and α₀ ≤ 2.
pub fn multi_indices(d: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(prefix: &mut Vec<usize>, left: usize, slots: usize, out: &mut Vec<Vec<usize>>) {
        if slots == 0 {
            out.push(prefix.clone());
            return;
        }
        for a in 0..=left {
            prefix.push(a);
            rec(prefix, left - a, slots - 1, out);
            prefix.pop();
        }
    }
    for total in lo..=hi {
        let mut all = Vec::new();
        rec(&mut Vec::new(), total, d + 1, &mut all);
        out.extend(all.into_iter().filter(|a| a.iter().sum::<usize>() == total && a[0] <= 2));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SeminormReport {
    pub shells: Vec<i32>,
    pub alphas: Vec<Vec<usize>>,
    /// c[a][k]: C_{α,k} for |α| ≤ 2
    pub c: Vec<Vec<f64>>,
    pub alphas_prime: Vec<Vec<usize>>,
    pub c_prime: Vec<Vec<f64>>,
    /// regular-ball constants C_α for |α| ≤ [d/2]+3
    pub regular_alphas: Vec<Vec<usize>>,
    pub regular: Vec<f64>,
    pub sums: Vec<f64>,
    pub sums_prime: Vec<f64>,
    pub budget: f64,
    pub decay_pass: bool,
    pub decay_prime_pass: bool,
}

fn halton(i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut n = i + 1;
    while n > 0 {
        f /= base as f64;
        r += f * (n % base) as f64;
        n /= base;
    }
    r
}

/// Deterministic prefix-stable sample point with |x| in (r_lo, r_hi).
fn shell_point(d: usize, i: usize, r_lo: f64, r_hi: f64) -> [f64; 3] {
    let u = halton(i, 2);
    let r = r_lo * (r_hi / r_lo).powf(0.001 + 0.998 * u);
    let mut p = [0.0; 3];
    match d {
        1 => p[0] = if halton(i, 3) < 0.5 { r } else { -r },
        2 => {
            let th = 2.0 * PI * halton(i, 3);
            p[0] = r * th.cos();
            p[1] = r * th.sin();
        }
        _ => {
            let z = 2.0 * halton(i, 3) - 1.0;
            let th = 2.0 * PI * halton(i, 5);
            let s = (1.0 - z * z).sqrt();
            p[0] = r * s * th.cos();
            p[1] = r * s * th.sin();
            p[2] = r * z;
        }
    }
    p
}

const SEMINORM_TIMES: [f64; 3] = [0.0, 0.7, 2.1];

/// Sampled C_{α,k}, C'_{α,k} over dyadic shells A_k and regular-ball constants.
/// Flags compare shell sums against `budget` (the flatness budget ε).
pub fn flatness_seminorms(spec: &MetricSpec, shells: std::ops::RangeInclusive<i32>, samples: usize, budget: f64) -> SeminormReport {
    let d = spec.dim;
    let top = d / 2 + 3;
    let alphas = multi_indices(d, 0, 2);
    let alphas_prime = multi_indices(d, 3, top);
    let regular_alphas = multi_indices(d, 0, top);
    let shells: Vec<i32> = shells.collect();
    let times: &[f64] = if spec.is_time_dependent() { &SEMINORM_TIMES } else { &SEMINORM_TIMES[..1] };
    let sup_over = |pts: &(dyn Fn(usize) -> [f64; 3] + Sync), count: usize, alist: &[Vec<usize>], weight: &(dyn Fn(f64, usize) -> f64 + Sync)| {
        let per_point = exec::map(count * times.len(), |s| {
            let x = pts(s / times.len());
            let t = times[s % times.len()];
            let r = grid::norm(&x[..d]);
            let jets = spec.jets(t, &x).expect("profile jets");
            alist
                .iter()
                .map(|a| {
                    let mut e = [0usize; NV];
                    e[..(d + 1)].copy_from_slice(a);
                    let mut m: f64 = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            let mut v = jets[i][j].derivative(&e).unwrap_or(0.0);
                            if a.iter().all(|&z| z == 0) && i == j {
                                v -= 1.0;
                            }
                            m = m.max(v.abs());
                        }
                    }
                    m * weight(r, a.iter().sum())
                })
                .collect::<Vec<f64>>()
        });
        let mut sup = vec![0.0f64; alist.len()];
        for row in per_point {
            for (s, v) in sup.iter_mut().zip(row) {
                *s = s.max(v);
            }
        }
        sup
    };
    let mut c = vec![vec![0.0; shells.len()]; alphas.len()];
    let mut c_prime = vec![vec![0.0; shells.len()]; alphas_prime.len()];
    for (ki, &k) in shells.iter().enumerate() {
        let lo = 2f64.powi(k - 1);
        let hi = 2f64.powi(k + 1);
        let pts = |i: usize| shell_point(d, i, lo, hi);
        let s = sup_over(&pts, samples, &alphas, &|r, n| r.powi(n as i32));
        for (a, v) in s.into_iter().enumerate() {
            c[a][ki] = v;
        }
        let s = sup_over(&pts, samples, &alphas_prime, &|r, n| r.powf((n as f64 + 1.0) / 2.0));
        for (a, v) in s.into_iter().enumerate() {
            c_prime[a][ki] = v;
        }
    }
    let ball = |i: usize| shell_point(d, i, 1e-3, 1.0);
    let regular = sup_over(&ball, samples, &regular_alphas, &|r, n| r.powi(n as i32));
    let sums: Vec<f64> = c.iter().map(|row| row.iter().sum()).collect();
    let sums_prime: Vec<f64> = c_prime.iter().map(|row| row.iter().sum()).collect();
    let tol = 1.0 + 1e-9;
    let decay_pass = sums.iter().all(|&s| s <= budget * tol);
    let decay_prime_pass = sums_prime.iter().all(|&s| s <= budget * tol);
    SeminormReport {
        shells,
        alphas,
        c,
        alphas_prime,
        c_prime,
        regular_alphas,
        regular,
        sums,
        sums_prime,
        budget,
        decay_pass,
        decay_prime_pass,
    }
}

/// g_(k) = δ + Σ_{l<k-4} S_{<l} χ_{<k-2l} S_l (g - δ), sampled on `grid` at time t.
/// S_{<l} is taken as the low-pass that is the identity on the support of S_l.
pub fn mollify_metric(spec: &MetricSpec, k: i32, grid: &Grid, t: f64) -> Result<MetricSpec> {
    if grid.dim() != spec.dim {
        return Err(Error::GridMismatch);
    }
    let top = k - 5;
    if top > grid::max_band(grid) {
        return Err(Error::Band(format!("k={k} needs band 2^{} beyond Nyquist {:.4}", top + 1, grid.nyquist())));
    }
    let d = spec.dim;
    if spec.is_flat() {
        return Ok(MetricSpec::flat(d));
    }
    let l_min = (grid.dxi() / 4.0).log2().floor() as i32;
    let ncomp = d * (d + 1) / 2;
    let mut coeffs = Vec::with_capacity(ncomp);
    let mut values = Vec::with_capacity(ncomp);
    for i in 0..d {
        for j in i..d {
            let h = SpectralField::from_fn(grid, |x| C64::new(spec.perturbation(t, x)[i][j] / spec.eps, 0.0));
            let hc = h.clone().into_coeffs();
            let low = 2f64.powi(l_min - 1);
            let mut acc = hc.clone().multiply_spectrum(|xi| C64::new(profile::dyadic_low(grid::norm(xi) / low), 0.0));
            for l in l_min..=top {
                let sl = grid::littlewood_paley(&hc, l)?;
                let radius = 2f64.powi(k - 2 * l);
                let cut = sl.multiply_space(|x| C64::new(profile::dyadic_low(grid::norm(x) / radius), 0.0));
                let hi = 2f64.powi(l + 1);
                let smooth = cut.multiply_spectrum(|xi| C64::new(profile::dyadic_low(grid::norm(xi) / hi), 0.0));
                acc = acc.add(&smooth);
            }
            let acc = acc.into_coeffs();
            coeffs.push(acc.data().to_vec());
            values.push(acc.values().iter().map(|v| v.re).collect());
        }
    }
    let sp = SampledProfile { grid: grid.clone(), coeffs, values };
    Ok(MetricSpec { dim: d, eps: spec.eps, profile: Profile::Sampled(Arc::new(sp)), time_amp: 0.0, time_freq: 0.0 })
}

/// Largest ratio |∂^α(g_(k)-δ)| / (ε_k(|x|) 2^{|α|k} (1+2^k|x|)^{-|α|}) for |α| ≤ 2 and
/// |∂^α g_(k)| / (ε_k(|x|) 2^{|α|k} (1+2^k|x|)^{-1-|α|/2}) for |α| ≥ 2, per spatial α.
pub fn mollified_bound_constants(mollified: &MetricSpec, k: i32, eps: &EpsProfile, points: &[[f64; 3]]) -> Vec<(Vec<usize>, f64)> {
    let d = mollified.dim;
    let alphas: Vec<Vec<usize>> = multi_indices(d, 0, d / 2 + 3).into_iter().filter(|a| a[0] == 0).collect();
    let two_k = 2f64.powi(k);
    let mut out: Vec<(Vec<usize>, f64)> = alphas.iter().map(|a| (a.clone(), 0.0)).collect();
    for x in points {
        let r = grid::norm(&x[..d]);
        let ek = eps.eps_k(k, r);
        let jets = mollified.jets(0.0, x).expect("jets");
        for (a, slot) in alphas.iter().zip(out.iter_mut()) {
            let n = a.iter().sum::<usize>() as i32;
            let mut e = [0usize; NV];
            e[..(d + 1)].copy_from_slice(a);
            let mut m: f64 = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let mut v = jets[i][j].derivative(&e).unwrap_or(0.0);
                    if n == 0 && i == j {
                        v -= 1.0;
                    }
                    m = m.max(v.abs());
                }
            }
            let base = ek * two_k.powi(n);
            let bound = if n <= 2 {
                base * (1.0 + two_k * r).powi(-n)
            } else {
                base * (1.0 + two_k * r).powf(-1.0 - n as f64 / 2.0)
            };
            slot.1 = slot.1.max(m / bound);
        }
    }
    out
}
