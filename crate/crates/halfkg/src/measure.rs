use crate::error::{Error, Result};
use crate::grid::{littlewood_paley, norm, Grid, SpectralField};
use crate::C64;

/// Least-squares line through (x, y): returns (slope, intercept).
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

/// (∫|u|^q dx)^{1/q}; q = ∞ gives the grid maximum.
pub fn lq_norm(u: &SpectralField, q: f64) -> f64 {
    let v = u.values();
    if q.is_infinite() {
        return v.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    }
    let s: f64 = v.iter().map(|z| z.norm().powf(q)).sum();
    (s * u.grid().cell_volume()).powf(1.0 / q)
}

/// (Σ⟨ξ⟩^{2s}|û|² dξ^d)^{1/2}.
pub fn sobolev_norm(f: &SpectralField, s: f64) -> f64 {
    let g = f.grid();
    let d = g.dim();
    let c = f.coeffs();
    let sum: f64 = c
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let xi = g.freq(k);
            let w = 1.0 + xi[..d].iter().map(|v| v * v).sum::<f64>();
            w.powf(s) * z.norm_sqr()
        })
        .sum();
    (sum * g.dual_cell_volume()).sqrt()
}

/// ⟨D⟩^w u.
pub fn bessel(u: &SpectralField, w: f64) -> SpectralField {
    if w == 0.0 {
        return u.clone();
    }
    u.clone().multiply_spectrum(move |xi| C64::new((1.0 + xi.iter().map(|v| v * v).sum::<f64>()).powf(w / 2.0), 0.0))
}

/// Per-time L^q norms of ⟨D⟩^w u, together with H^s and sup norms of u.
#[derive(Clone, Debug)]
pub struct TimeSeriesNorms {
    pub times: Vec<f64>,
    pub qs: Vec<f64>,
    /// lq[m][n] = ‖⟨D⟩^w u(t_n)‖_{L^{q_m}}.
    pub lq: Vec<Vec<f64>>,
    pub s: f64,
    pub hs: Vec<f64>,
    pub sup: Vec<f64>,
    pub weight: f64,
    /// Cleared when the run carried a forcing term.
    pub homogeneous: bool,
}

impl TimeSeriesNorms {
    pub fn new(qs: &[f64], s: f64, weight: f64) -> Self {
        TimeSeriesNorms { times: Vec::new(), qs: qs.to_vec(), lq: vec![Vec::new(); qs.len()], s, hs: Vec::new(), sup: Vec::new(), weight, homogeneous: true }
    }

    pub fn push(&mut self, t: f64, u: &SpectralField) {
        let w = bessel(u, self.weight);
        self.times.push(t);
        for (m, &q) in self.qs.iter().enumerate() {
            self.lq[m].push(lq_norm(&w, q));
        }
        self.hs.push(sobolev_norm(u, self.s));
        self.sup.push(lq_norm(u, f64::INFINITY));
    }

    fn q_index(&self, q: f64) -> Result<usize> {
        self.qs
            .iter()
            .position(|&v| v == q || (v - q).abs() < 1e-12 * q.abs().max(1.0))
            .ok_or_else(|| Error::Invalid(format!("q = {q} not recorded (have {:?})", self.qs)))
    }
}

/// ‖u‖_{L^p_t L^q_x} by the trapezoid rule on the sample times; p = ∞ takes the maximum.
pub fn mixed_norm(series: &TimeSeriesNorms, p: f64, q: f64) -> Result<f64> {
    let m = series.q_index(q)?;
    let v = &series.lq[m];
    if p.is_infinite() {
        return Ok(v.iter().fold(0.0f64, |a, &b| a.max(b)));
    }
    if !(p >= 1.0) {
        return Err(Error::Invalid(format!("p = {p} < 1")));
    }
    let f: Vec<f64> = v.iter().map(|x| x.powf(p)).collect();
    Ok(trapezoid(&series.times, &f).powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissiblePair {
    pub d: usize,
    pub theta: f64,
    pub q: f64,
    pub p: f64,
    pub sigma: f64,
}

impl AdmissiblePair {
    /// (2/p + (d−1+θ)/q − (d−1+θ)/2, σ − ((d+1+θ)/4)(1−2/q)).
    pub fn residuals(&self) -> (f64, f64) {
        let k = self.d as f64 - 1.0 + self.theta;
        let r1 = 2.0 / self.p + k / self.q - k / 2.0;
        let r2 = self.sigma - (self.d as f64 + 1.0 + self.theta) / 4.0 * (1.0 - 2.0 / self.q);
        (r1, r2)
    }
}

/// Solve 2/p + (d−1+θ)/q = (d−1+θ)/2 for p and set σ = ((d+1+θ)/4)(1−2/q).
pub fn admissible_pair(d: usize, theta: f64, q: f64) -> Result<AdmissiblePair> {
    if !(q >= 2.0) || !(0.0..=1.0).contains(&theta) || d == 0 {
        return Err(Error::Invalid(format!("need q ≥ 2, θ ∈ [0,1], d ≥ 1; got d={d}, θ={theta}, q={q}")));
    }
    let k = d as f64 - 1.0 + theta;
    let inv_p = k * (0.5 - 1.0 / q) / 2.0;
    let p = if inv_p == 0.0 { f64::INFINITY } else { 1.0 / inv_p };
    if p < 2.0 {
        return Err(Error::NonAdmissible(p));
    }
    if p == 2.0 && q.is_infinite() {
        return Err(Error::ForbiddenEndpoint);
    }
    let sigma = (d as f64 + 1.0 + theta) / 4.0 * (1.0 - 2.0 / q);
    Ok(AdmissiblePair { d, theta, q, p, sigma })
}

/// ‖⟨D⟩^{s−σ}u‖_{L^pL^q}/‖u₀‖_{H^s} for a homogeneous run recorded with weight s − σ.
pub fn strichartz_ratio(series: &TimeSeriesNorms, pair: &AdmissiblePair, s: f64, data_hs: f64) -> Result<f64> {
    if !series.homogeneous {
        return Err(Error::Invalid("strichartz ratio needs a homogeneous run".into()));
    }
    if (series.weight - (s - pair.sigma)).abs() > 1e-12 {
        return Err(Error::Invalid(format!("series weight {} differs from s − σ = {}", series.weight, s - pair.sigma)));
    }
    Ok(mixed_norm(series, pair.p, pair.q)? / data_hs)
}

#[derive(Clone, Debug)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub samples: usize,
}

/// Least-squares slope of log‖u‖_∞ against log t over the window.
pub fn decay_fit(times: &[f64], sup: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = times.iter().zip(sup).filter(|(t, _)| **t >= window.0 && **t <= window.1).map(|(t, v)| (t.ln(), v.ln())).collect();
    if pts.len() < 6 {
        return Err(Error::Invalid(format!("only {} samples inside window [{}, {}]", pts.len(), window.0, window.1)));
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return Err(Error::NotPositive(sup.to_vec()));
    }
    let (slope, icpt) = linear_fit(&pts);
    let n = pts.len() as f64;
    let ss: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - icpt).powi(2)).sum();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(DecayFit { exponent: slope, intercept: icpt, residual: (ss / n).sqrt(), stderr: (ss / (n - 2.0) / sxx).sqrt(), samples: pts.len() })
}

/// Space-time local energy accumulator for ‖·‖_{X_k}, optionally of S_k u.
#[derive(Clone, Debug)]
pub struct LocalEnergy {
    grid: Grid,
    pub ks: Vec<i32>,
    /// Apply S_k before measuring (needed for X^s).
    pub band: bool,
    pub times: Vec<f64>,
    /// Per k: shells j = −k..=j_top.
    pub j_top: i32,
    low: Vec<Vec<f64>>,
    shells: Vec<Vec<Vec<f64>>>,
}

impl LocalEnergy {
    pub fn new(grid: &Grid, ks: &[i32], band: bool) -> Result<Self> {
        let j_top = (grid.half_width().log2() + 1.0).ceil() as i32 - 1;
        for &k in ks {
            let j = -k;
            if 1.5 * 2f64.powi(j) < grid.dx() || 2f64.powi(-k) < grid.dx() {
                return Err(Error::Unresolved(format!("shell A_{j} is thinner than the grid spacing {}", grid.dx())));
            }
            if j > j_top {
                return Err(Error::BoxTooSmall(format!("no shell A_j with j ≥ {j} fits in the box")));
            }
        }
        let nj = |k: i32| (j_top + k + 1) as usize;
        Ok(LocalEnergy {
            grid: grid.clone(),
            ks: ks.to_vec(),
            band,
            times: Vec::new(),
            j_top,
            low: vec![Vec::new(); ks.len()],
            shells: ks.iter().map(|&k| vec![Vec::new(); nj(k)]).collect(),
        })
    }

    pub fn push(&mut self, t: f64, u: &SpectralField) -> Result<()> {
        let g = &self.grid;
        let d = g.dim();
        self.times.push(t);
        for (m, &k) in self.ks.iter().enumerate() {
            let v = if self.band { littlewood_paley(u, k)?.values() } else { u.values() };
            let r_low = 2f64.powi(-k);
            let mut low = 0.0;
            let mut sh = vec![0.0; self.shells[m].len()];
            for (i, z) in v.iter().enumerate() {
                let r = norm(&g.point(i)[..d]);
                let a = z.norm_sqr();
                if r < r_low {
                    low += a;
                }
                if r > 0.0 {
                    for (q, s) in sh.iter_mut().enumerate() {
                        let j = q as i32 - k;
                        if r > 2f64.powi(j - 1) && r < 2f64.powi(j + 1) {
                            *s += a / r;
                        }
                    }
                }
            }
            let dv = g.cell_volume();
            self.low[m].push(low * dv);
            for (q, s) in sh.into_iter().enumerate() {
                self.shells[m][q].push(s * dv);
            }
        }
        Ok(())
    }

    /// 2^k‖u‖_{L²(A_{<−k})} + 2^{k/2}sup_{j≥−k}‖|x|^{-1/2}u‖_{L²(A_j)} over the recorded horizon.
    pub fn x_k(&self, k: i32) -> Result<f64> {
        let m = self.ks.iter().position(|&v| v == k).ok_or_else(|| Error::Invalid(format!("k = {k} not recorded")))?;
        let low = trapezoid(&self.times, &self.low[m]).sqrt();
        let sup = self.shells[m].iter().map(|s| trapezoid(&self.times, s).sqrt()).fold(0.0f64, f64::max);
        Ok(2f64.powi(k) * low + 2f64.powf(k as f64 / 2.0) * sup)
    }

    /// (Σ_k ⟨2^k⟩^{2s}‖S_k u‖²_{X_k})^{1/2} over the recorded k.
    pub fn x_s(&self, s: f64) -> Result<f64> {
        if !self.band {
            return Err(Error::Invalid("X^s needs band-localized accumulation".into()));
        }
        let mut acc = 0.0;
        for &k in &self.ks {
            acc += (1.0 + 4f64.powi(k)).powf(s) * self.x_k(k)?.powi(2);
        }
        Ok(acc.sqrt())
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn pair_examples() {
        let p = admissible_pair(3, 1.0, 6.0).unwrap();
        assert!((p.p - 2.0).abs() < 1e-14 && (p.sigma - 5.0 / 6.0).abs() < 1e-14);
        let e = admissible_pair(3, 1.0, 2.0).unwrap();
        assert!(e.p.is_infinite() && e.sigma == 0.0);
        assert!(matches!(admissible_pair(3, 0.0, f64::INFINITY), Err(Error::ForbiddenEndpoint)));
        assert!(matches!(admissible_pair(1, 0.0, 4.0), Err(Error::NonAdmissible(_))) || admissible_pair(1, 0.0, 4.0).unwrap().p.is_infinite());
        assert!(matches!(admissible_pair(5, 1.0, 4.0), Err(Error::NonAdmissible(_))));
    }

    #[test]
    fn mixed_norm_examples() {
        let g = make_grid(1, 32, 0.5).unwrap();
        let one = SpectralField::from_fn(&g, |_| C64::new(1.0, 0.0));
        let mut s = TimeSeriesNorms::new(&[2.0, 4.0, f64::INFINITY], 0.0, 0.0);
        for m in 0..=10 {
            s.push(m as f64 / 10.0, &one);
        }
        for p in [1.0, 2.0, 7.0, f64::INFINITY] {
            for q in [2.0, 4.0, f64::INFINITY] {
                assert!((mixed_norm(&s, p, q).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        assert!(mixed_norm(&s, 2.0, 3.0).is_err());

        let g = make_grid(1, 128, 16.0).unwrap();
        let gauss = SpectralField::from_fn(&g, |x| C64::new((-x[0] * x[0]).exp(), 0.0));
        let mut s = TimeSeriesNorms::new(&[3.0], 0.0, 0.0);
        let nt = 4000;
        let tmax = 2.0;
        for m in 0..=nt {
            let t = tmax * m as f64 / nt as f64;
            s.push(t, &gauss.clone().scale(C64::new((-t).exp(), 0.0)));
        }
        let expect = lq_norm(&gauss, 3.0) * ((1.0 - (-2.0 * tmax).exp()) / 2.0).sqrt();
        assert!((mixed_norm(&s, 2.0, 3.0).unwrap() / expect - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sobolev_examples() {
        let g = make_grid(1, 128, 16.0).unwrap();
        let gauss = SpectralField::from_fn(&g, |x| C64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
        assert!((sobolev_norm(&gauss, 0.0) - gauss.norm_l2()).abs() < 1e-12);
        let pw = SpectralField::plane_wave(&g, &[5]);
        let xi = 5.0 * g.dxi();
        assert!((sobolev_norm(&pw, 1.0) / pw.norm_l2() - (1.0 + xi * xi).sqrt()).abs() < 1e-12);
        // ĝ = e^{-ξ²/2}: ∫(1+ξ²)²e^{-ξ²}dξ = √π(1 + 1 + 3/4)
        let expect = (PI_SQRT * 2.75).sqrt();
        assert!((sobolev_norm(&gauss, 2.0) - expect).abs() < 1e-10);
    }

    const PI_SQRT: f64 = 1.772_453_850_905_516;

    #[test]
    fn power_law_fit() {
        let t: Vec<f64> = (1..=40).map(|m| m as f64).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * t.powf(-1.5)).collect();
        let f = decay_fit(&t, &v, (5.0, 40.0)).unwrap();
        assert!((f.exponent + 1.5).abs() < 1e-6);
        assert!(decay_fit(&t, &v, (50.0, 90.0)).is_err());
    }

    #[test]
    fn local_energy_single_shell() {
        let g = make_grid(2, 128, 16.0).unwrap();
        let u = SpectralField::from_fn(&g, |x| {
            let r = norm(x);
            C64::new(if r > 4.5 && r < 7.5 { 1.0 } else { 0.0 }, 0.0)
        });
        let mut le = LocalEnergy::new(&g, &[-1], false).unwrap();
        le.push(0.0, &u).unwrap();
        le.push(1.0, &u).unwrap();
        let j0 = 6f64.log2(); // |x| ≈ 2^{j0}
        let expect = 2f64.powf(-0.5) * 2f64.powf(-j0 / 2.0) * u.norm_l2();
        let got = le.x_k(-1).unwrap();
        assert!((got / expect - 1.0).abs() < 0.1, "{got} vs {expect}");
        let mut le2 = LocalEnergy::new(&g, &[-1], false).unwrap();
        let u2 = u.clone().scale(C64::new(2.0, 0.0));
        le2.push(0.0, &u2).unwrap();
        le2.push(1.0, &u2).unwrap();
        assert!((le2.x_k(-1).unwrap() / got - 2.0).abs() < 1e-12);
        assert!(LocalEnergy::new(&g, &[4], false).is_err());
    }
}
