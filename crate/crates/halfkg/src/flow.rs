use crate::error::{Error, Result};
use crate::exec;
use crate::metric::MetricSpec;
use crate::profile::smooth_step;
use nalgebra::DMatrix;
use std::f64::consts::LN_2;
use std::ops::RangeInclusive;

/// Log-slope of ε(s) in ln s beyond the shell range.
const TAIL_RATE: f64 = 1.0 / 64.0;
/// Consecutive log-ratio of the smoothed shell sequence.
const SLOW: f64 = 1.0 / 1024.0;

/// Slowly varying envelope ε(s) with shell values ε_j and e(s) = ε⁻¹∫₀^s ε(σ)/σ dσ.
///
/// ln ε is piecewise linear in ln s through the knots (2^{j+1/2}, ln 1.5ε_j) and
/// decays like s^{∓1/64} outside the shell range, which keeps ε_j < ε(s) < 2ε_j.
#[derive(Clone, Debug)]
pub struct EpsProfile {
    budget: f64,
    j_min: i32,
    eps_j: Vec<f64>,
    knot_u: Vec<f64>,
    knot_l: Vec<f64>,
    /// ∫_{-∞}^{u_i} ε du at each knot.
    cumulative: Vec<f64>,
    total: f64,
}

pub fn make_eps_profile(budget: f64, sigma_p: f64, shells: RangeInclusive<i32>) -> Result<EpsProfile> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::NotPositive(vec![budget]));
    }
    let (j_min, j_max) = (*shells.start(), *shells.end());
    if j_max - j_min < 2 {
        return Err(Error::Invalid(format!("shell range {j_min}..={j_max} too short to normalize")));
    }
    let base: Vec<f64> = (j_min..=j_max).map(|j| (1.0 + j.abs() as f64).powf(-sigma_p)).collect();
    let n = base.len();
    // log-smoothing: ε_j = max_i b_i e^{-2^{-10}|i-j|}
    let smooth: Vec<f64> = (0..n)
        .map(|j| {
            (0..n).map(|i| base[i] * (-SLOW * (i as f64 - j as f64).abs()).exp()).fold(0.0, f64::max)
        })
        .collect();
    let knot_u: Vec<f64> = (j_min..=j_max).map(|j| (j as f64 + 0.5) * LN_2).collect();
    let mut p = EpsProfile {
        budget,
        j_min,
        eps_j: smooth.clone(),
        knot_u,
        knot_l: smooth.iter().map(|e| (1.5 * e).ln()).collect(),
        cumulative: vec![0.0; n],
        total: 0.0,
    };
    p.integrate();
    let shift = (budget / p.total).ln();
    for (l, e) in p.knot_l.iter_mut().zip(p.eps_j.iter_mut()) {
        *l += shift;
        *e *= budget / p.total;
    }
    p.integrate();
    Ok(p)
}

fn segment_integral(du: f64, la: f64, lb: f64) -> f64 {
    let dl = lb - la;
    if dl.abs() < 1e-12 {
        du * (0.5 * (la + lb)).exp()
    } else {
        du * (lb.exp() - la.exp()) / dl
    }
}

impl EpsProfile {
    fn integrate(&mut self) {
        let n = self.knot_u.len();
        let mut acc = self.knot_l[0].exp() / TAIL_RATE;
        self.cumulative[0] = acc;
        for i in 1..n {
            acc += segment_integral(self.knot_u[i] - self.knot_u[i - 1], self.knot_l[i - 1], self.knot_l[i]);
            self.cumulative[i] = acc;
        }
        self.total = acc + self.knot_l[n - 1].exp() / TAIL_RATE;
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn shells(&self) -> RangeInclusive<i32> {
        self.j_min..=(self.j_min + self.eps_j.len() as i32 - 1)
    }

    /// Shell value ε_j; outside the stored range it is ε(2^{j+1/2})/1.5.
    pub fn eps_j(&self, j: i32) -> f64 {
        let i = j - self.j_min;
        if i >= 0 && (i as usize) < self.eps_j.len() {
            self.eps_j[i as usize]
        } else {
            self.eps(2f64.powf(j as f64 + 0.5)) / 1.5
        }
    }

    /// (ln ε, d ln ε / d ln s) at u = ln s.
    fn log_eps(&self, u: f64) -> (f64, f64) {
        let n = self.knot_u.len();
        if u <= self.knot_u[0] {
            return (self.knot_l[0] + TAIL_RATE * (u - self.knot_u[0]), TAIL_RATE);
        }
        if u >= self.knot_u[n - 1] {
            return (self.knot_l[n - 1] - TAIL_RATE * (u - self.knot_u[n - 1]), -TAIL_RATE);
        }
        let i = self.knot_u.partition_point(|&k| k <= u).max(1) - 1;
        let slope = (self.knot_l[i + 1] - self.knot_l[i]) / (self.knot_u[i + 1] - self.knot_u[i]);
        (self.knot_l[i] + slope * (u - self.knot_u[i]), slope)
    }

    pub fn eps(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        self.log_eps(s.ln()).0.exp()
    }

    pub fn eps_prime(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let (l, slope) = self.log_eps(s.ln());
        l.exp() * slope / s
    }

    /// e(s) = ε⁻¹ ∫₀^s ε(σ)/σ dσ, increasing from 0 to 1.
    pub fn e(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let u = s.ln();
        let n = self.knot_u.len();
        let raw = if u <= self.knot_u[0] {
            self.log_eps(u).0.exp() / TAIL_RATE
        } else if u >= self.knot_u[n - 1] {
            let (l, _) = self.log_eps(u);
            self.cumulative[n - 1] + (self.knot_l[n - 1].exp() - l.exp()) / TAIL_RATE
        } else {
            let i = self.knot_u.partition_point(|&k| k <= u).max(1) - 1;
            let (l, _) = self.log_eps(u);
            self.cumulative[i] + segment_integral(u - self.knot_u[i], self.knot_l[i], l)
        };
        raw / self.budget
    }

    /// ∫₀^∞ ε(s)/s ds.
    pub fn integral(&self) -> f64 {
        self.total
    }

    /// Frozen envelope at scale 2^{-k}: ε_k(r) = ε(max(r, 2^{-k})).
    pub fn eps_k(&self, k: i32, r: f64) -> f64 {
        self.eps(r.max(2f64.powi(-k)))
    }

    /// Largest consecutive |ln ε_j − ln ε_{j−1}| over the stored shells.
    pub fn max_log_ratio(&self) -> f64 {
        self.eps_j.windows(2).map(|w| (w[1] / w[0]).ln().abs()).fold(0.0, f64::max)
    }
}

/// Phase space Hamiltonian with first derivatives.
pub trait Hamiltonian: Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64], xi: &[f64]) -> f64;
    /// (∂_x H, ∂_ξ H).
    fn gradient(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<([f64; 3], [f64; 3])>;
}

/// H = √(λ⁻² + g^{ij}(t,x)ξ_iξ_j) = ⟨ξ⟩_λ + 𝔄_λ.
#[derive(Clone, Debug)]
pub struct HalfKgHamiltonian {
    pub lambda: f64,
    pub metric: MetricSpec,
}

impl HalfKgHamiltonian {
    pub fn new(lambda: f64, metric: MetricSpec) -> Self {
        HalfKgHamiltonian { lambda, metric }
    }

    pub fn flat(dim: usize, lambda: f64) -> Self {
        Self::new(lambda, MetricSpec::flat(dim))
    }
}

fn quad(g: &[[f64; 3]; 3], xi: &[f64], d: usize) -> f64 {
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += g[i][j] * xi[i] * xi[j];
        }
    }
    q
}

impl Hamiltonian for HalfKgHamiltonian {
    fn dim(&self) -> usize {
        self.metric.dim
    }

    fn value(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        let g = self.metric.inverse_metric(t, x);
        (self.lambda.powi(-2) + quad(&g, xi, self.dim())).sqrt()
    }

    fn gradient(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<([f64; 3], [f64; 3])> {
        let d = self.dim();
        let g = self.metric.inverse_metric(t, x);
        let q = self.lambda.powi(-2) + quad(&g, xi, d);
        if !(q > 0.0) {
            return Err(Error::Invalid("symbol not differentiable: ⟨ξ⟩ vanishes".into()));
        }
        let h = q.sqrt();
        let mut dxi = [0.0; 3];
        for i in 0..d {
            dxi[i] = (0..d).map(|j| g[i][j] * xi[j]).sum::<f64>() / h;
        }
        let mut dx = [0.0; 3];
        if !self.metric.is_flat() {
            let grad = self.metric.gradient(t, x)?;
            for a in 0..d {
                dx[a] = quad(&grad[a], xi, d) / (2.0 * h);
            }
        }
        Ok((dx, dxi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: [f64; 3],
    pub xi: [f64; 3],
}

impl PhasePoint {
    pub fn new(x: &[f64], xi: &[f64]) -> Self {
        let mut p = PhasePoint { x: [0.0; 3], xi: [0.0; 3] };
        p.x[..x.len()].copy_from_slice(x);
        p.xi[..xi.len()].copy_from_slice(xi);
        p
    }
}

/// ẋ = ∂_ξ H, ξ̇ = −∂_x H.
pub fn hamiltonian_field(h: &dyn Hamiltonian, t: f64, p: &PhasePoint) -> Result<([f64; 3], [f64; 3])> {
    let (dx, dxi) = h.gradient(t, &p.x[..h.dim()], &p.xi[..h.dim()])?;
    let mut xdot = [0.0; 3];
    let mut xidot = [0.0; 3];
    for a in 0..h.dim() {
        xdot[a] = dxi[a];
        xidot[a] = -dx[a];
    }
    if xdot.iter().chain(xidot.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok((xdot, xidot))
}

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    /// Local error tolerance per step.
    pub tol: f64,
    /// Number of output intervals between s and t.
    pub samples: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { tol: 1e-10, samples: 256 }
    }
}

#[derive(Clone, Debug)]
pub struct PhaseTrajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    /// Phase velocities (ẋ, ξ̇) at the samples.
    pub velocities: Vec<PhasePoint>,
    /// Accumulated damping integral; zero until `damping_integral` is attached.
    pub psi: Vec<f64>,
    pub tol: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
}

type State = [f64; 6];

fn to_state(p: &PhasePoint) -> State {
    [p.x[0], p.x[1], p.x[2], p.xi[0], p.xi[1], p.xi[2]]
}

fn from_state(y: &State) -> PhasePoint {
    PhasePoint { x: [y[0], y[1], y[2]], xi: [y[3], y[4], y[5]] }
}

fn rhs(h: &dyn Hamiltonian, t: f64, y: &State) -> Result<State> {
    let (a, b) = hamiltonian_field(h, t, &from_state(y))?;
    Ok([a[0], a[1], a[2], b[0], b[1], b[2]])
}

fn rk4(h: &dyn Hamiltonian, t: f64, y: &State, dt: f64) -> Result<State> {
    let comb = |y: &State, k: &State, c: f64| {
        let mut o = *y;
        for i in 0..6 {
            o[i] += c * k[i];
        }
        o
    };
    let k1 = rhs(h, t, y)?;
    let k2 = rhs(h, t + dt / 2.0, &comb(y, &k1, dt / 2.0))?;
    let k3 = rhs(h, t + dt / 2.0, &comb(y, &k2, dt / 2.0))?;
    let k4 = rhs(h, t + dt, &comb(y, &k3, dt))?;
    let mut o = *y;
    for i in 0..6 {
        o[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(o)
}

/// Integrate the Hamilton flow from time s to time t (either direction) with
/// step-doubling RK4 and local extrapolation.
pub fn integrate_flow(h: &dyn Hamiltonian, p0: &PhasePoint, s: f64, t: f64, opts: FlowOptions) -> Result<PhaseTrajectory> {
    if !(s > 0.0 && t > 0.0) || s == t {
        return Err(Error::Invalid(format!("need distinct positive times, got s={s}, t={t}")));
    }
    let n = opts.samples.max(1);
    let mut traj = PhaseTrajectory {
        dim: h.dim(),
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        velocities: Vec::with_capacity(n + 1),
        psi: vec![0.0; n + 1],
        tol: opts.tol,
        accepted: 0,
        rejected: 0,
        min_step: f64::INFINITY,
    };
    let mut y = to_state(p0);
    let mut tc = s;
    let span = t - s;
    let mut step = span / n as f64;
    let record = |traj: &mut PhaseTrajectory, tc: f64, y: &State| -> Result<()> {
        traj.times.push(tc);
        traj.states.push(from_state(y));
        traj.velocities.push(from_state(&rhs(h, tc, y)?));
        Ok(())
    };
    record(&mut traj, tc, &y)?;
    for k in 1..=n {
        let target = s + span * k as f64 / n as f64;
        while (target - tc).abs() > 1e-14 * target.abs().max(1.0) {
            let remaining = target - tc;
            let dt = if step.abs() > remaining.abs() { remaining } else { step };
            if dt.abs() < 1e-13 * tc.abs().max(1.0) {
                return Err(Error::StepUnderflow(dt.abs()));
            }
            let full = rk4(h, tc, &y, dt)?;
            let half = rk4(h, tc, &y, dt / 2.0)?;
            let two = rk4(h, tc + dt / 2.0, &half, dt / 2.0)?;
            let err = (0..6).map(|i| (two[i] - full[i]).abs()).fold(0.0, f64::max) / 15.0;
            if err <= opts.tol {
                for i in 0..6 {
                    y[i] = two[i] + (two[i] - full[i]) / 15.0;
                }
                tc += dt;
                traj.accepted += 1;
                traj.min_step = traj.min_step.min(dt.abs());
                let grow = if err == 0.0 { 2.0 } else { (0.9 * (opts.tol / err).powf(0.2)).min(2.0) };
                if dt == step {
                    step *= grow.max(1.0);
                }
            } else {
                traj.rejected += 1;
                step = dt * (0.9 * (opts.tol / err).powf(0.2)).max(0.2);
            }
        }
        tc = target;
        record(&mut traj, tc, &y)?;
    }
    Ok(traj)
}

impl PhaseTrajectory {
    pub fn last(&self) -> &PhasePoint {
        self.states.last().expect("trajectory has samples")
    }

    /// Cubic Hermite interpolation of the state at time τ inside the sampled range.
    pub fn state_at(&self, tau: f64) -> PhasePoint {
        let n = self.times.len();
        let forward = self.times[n - 1] >= self.times[0];
        let key = |t: f64| if forward { t } else { -t };
        let i = self.times.partition_point(|&t| key(t) <= key(tau)).clamp(1, n - 1) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (tau - t0) / h;
        let (h00, h10, h01, h11) =
            (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s, -2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        let (a, b) = (to_state(&self.states[i]), to_state(&self.states[i + 1]));
        let (va, vb) = (to_state(&self.velocities[i]), to_state(&self.velocities[i + 1]));
        let mut y = [0.0; 6];
        for k in 0..6 {
            y[k] = h00 * a[k] + h10 * h * va[k] + h01 * b[k] + h11 * h * vb[k];
        }
        from_state(&y)
    }

    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut out = String::from("t");
        for a in 0..d {
            out.push_str(&format!(",x{}", a + 1));
        }
        for a in 0..d {
            out.push_str(&format!(",xi{}", a + 1));
        }
        out.push_str(",psi\n");
        for (k, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for a in 0..d {
                out.push_str(&format!(",{}", self.states[k].x[a]));
            }
            for a in 0..d {
                out.push_str(&format!(",{}", self.states[k].xi[a]));
            }
            out.push_str(&format!(",{}\n", self.psi[k]));
        }
        out
    }
}

/// ∂(x_t, ξ_s)/∂(x_s, ξ_t) and the forward Jacobian, with the flat-case reference.
#[derive(Clone, Debug)]
pub struct FlowJacobian {
    /// ∂(x_t, ξ_t)/∂(x_s, ξ_s).
    pub forward: DMatrix<f64>,
    pub dxt_dxs: DMatrix<f64>,
    pub dxt_dxit: DMatrix<f64>,
    pub dxis_dxs: DMatrix<f64>,
    pub dxis_dxit: DMatrix<f64>,
    /// (t−s)⟨ξ_t⟩_λ⁻³(⟨ξ_t⟩_λ² I − ξ_t⊗ξ_t).
    pub reference: DMatrix<f64>,
    /// Frobenius norm of dxt_dxit − reference.
    pub deviation: f64,
    /// Best scalar c with dxt_dxit ≈ c·reference.
    pub prefactor: f64,
    /// Largest Richardson disagreement between the h and h/2 differences.
    pub fd_error: f64,
}

/// ⟨ξ⟩_λ⁻³(⟨ξ⟩_λ² I − ξ⊗ξ), the ξ-Hessian of ⟨ξ⟩_λ.
pub fn phi_kg(xi: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = xi.len();
    let w2 = lambda.powi(-2) + xi.iter().map(|v| v * v).sum::<f64>();
    let w = w2.sqrt();
    DMatrix::from_fn(d, d, |i, j| ((if i == j { w2 } else { 0.0 }) - xi[i] * xi[j]) / (w2 * w))
}

pub fn flow_jacobian(h: &dyn Hamiltonian, p0: &PhasePoint, s: f64, t: f64, lambda: f64) -> Result<FlowJacobian> {
    let d = h.dim();
    let opts = FlowOptions { tol: 1e-13, samples: 1 };
    let end = |p: &PhasePoint| -> Result<State> { Ok(to_state(integrate_flow(h, p, s, t, opts)?.last())) };
    let base = end(p0)?;
    let y0 = to_state(p0);
    let idx = |k: usize| if k < d { k } else { 3 + k - d };
    let cols: Vec<Result<(Vec<f64>, f64)>> = exec::map(2 * d, |k| {
        let c = idx(k);
        let hk = 1e-3 * (1.0 + y0[c].abs());
        let diff = |hh: f64| -> Result<State> {
            let (mut a, mut b) = (y0, y0);
            a[c] += hh;
            b[c] -= hh;
            let (fa, fb) = (end(&from_state(&a))?, end(&from_state(&b))?);
            let mut o = [0.0; 6];
            for i in 0..6 {
                o[i] = (fa[i] - fb[i]) / (2.0 * hh);
            }
            Ok(o)
        };
        let (d1, d2) = (diff(hk)?, diff(hk / 2.0)?);
        let mut col = Vec::with_capacity(2 * d);
        let mut err: f64 = 0.0;
        for r in 0..2 * d {
            let i = idx(r);
            col.push((4.0 * d2[i] - d1[i]) / 3.0);
            err = err.max((d2[i] - d1[i]).abs() / 3.0 / (1.0 + d2[i].abs()));
        }
        Ok((col, err))
    });
    let mut forward = DMatrix::zeros(2 * d, 2 * d);
    let mut fd_error: f64 = 0.0;
    for (k, c) in cols.into_iter().enumerate() {
        let (col, err) = c?;
        fd_error = fd_error.max(err);
        for r in 0..2 * d {
            forward[(r, k)] = col[r];
        }
    }
    if fd_error > 1e-3 || forward.iter().any(|v| !v.is_finite()) {
        return Err(Error::FiniteDifference(format!("Richardson disagreement {fd_error:.3e}")));
    }
    let a = forward.view((0, 0), (d, d)).into_owned();
    let b = forward.view((0, d), (d, d)).into_owned();
    let c = forward.view((d, 0), (d, d)).into_owned();
    let dm = forward.view((d, d), (d, d)).into_owned();
    let dinv = dm.clone().try_inverse().ok_or_else(|| Error::FiniteDifference("singular ∂ξ_t/∂ξ_s".into()))?;
    let dxt_dxit = &b * &dinv;
    let xi_t: Vec<f64> = base[3..3 + d].to_vec();
    let reference = phi_kg(&xi_t, lambda) * (t - s);
    let deviation = (&dxt_dxit - &reference).norm();
    let prefactor = if reference.norm_squared() > 0.0 { dxt_dxit.dot(&reference) / reference.norm_squared() } else { 0.0 };
    Ok(FlowJacobian {
        dxt_dxs: &a - &dxt_dxit * &c,
        dxis_dxs: -(&dinv * &c),
        dxis_dxit: dinv,
        dxt_dxit,
        forward,
        reference,
        deviation,
        prefactor,
        fd_error,
    })
}

/// 𝔅_λ = t^{-3/4}(1 − Πφ(b_j)), or the disc variant 𝔅_{≤1} without b₂ and with b₁ cut at 8.
#[derive(Clone, Debug)]
pub struct DampingSymbol {
    pub lambda: f64,
    pub eps: EpsProfile,
    /// The small constant in b₂.
    pub c: f64,
    pub disc: bool,
}

pub const DEFAULT_DAMPING_C: f64 = 0.022097086912079608; // 2^{-5.5}

impl DampingSymbol {
    pub fn new(lambda: f64, eps: EpsProfile) -> Self {
        DampingSymbol { lambda, eps, c: DEFAULT_DAMPING_C, disc: false }
    }

    pub fn disc(lambda: f64, eps: EpsProfile) -> Self {
        DampingSymbol { lambda, eps, c: DEFAULT_DAMPING_C, disc: true }
    }

    /// Default flat-run symbol: budget 0.01 over shells −20..=20.
    pub fn standard(lambda: f64) -> Self {
        Self::new(lambda, make_eps_profile(0.01, 2.0, -20..=20).expect("valid default profile"))
    }

    /// b₁…b₅ at (t, x, ξ). For the disc variant b₂ is +∞.
    pub fn factors(&self, t: f64, x: &[f64], xi: &[f64]) -> [f64; 5] {
        self.factors_with(t, self.eps.e(t), self.eps.eps(t), x, xi)
    }

    /// As `factors`, with e(t) and ε(t) supplied by the caller.
    pub fn factors_with(&self, t: f64, et: f64, epst: f64, x: &[f64], xi: &[f64]) -> [f64; 5] {
        let rx = crate::grid::norm(x);
        let rxi = crate::grid::norm(xi);
        let dot = crate::grid::dot(x, xi);
        let b1 = if self.disc { (8.0 + et - rxi) / epst } else { (2f64.powf(3.5) + et - rxi) / epst };
        let b2 = if self.disc { f64::INFINITY } else { (rxi - 2f64.powf(-3.5) + self.c * et) / epst };
        let b3 = if rx > 0.0 { (2f64.powf(-0.5) * rx * rxi + dot) / (2f64.powi(-12) * rx) } else { 0.0 };
        let b4 = (64.0 * t - rx) / t;
        let b5 = (rx * rxi - t * rxi / 32.0 + dot) / (t / 1024.0);
        [b1, b2, b3, b4, b5]
    }

    /// t^{3/4}𝔅 = 1 − Πφ(b_j) ∈ [0, 1].
    pub fn normalized(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        Self::combine(&self.factors(t, x, xi))
    }

    /// 1 − Πφ(b_j), clamped to [0, 1].
    pub fn combine(b: &[f64; 5]) -> f64 {
        let prod: f64 = b.iter().map(|&b| if b == f64::INFINITY { 1.0 } else { smooth_step(b) }).product();
        (1.0 - prod).clamp(0.0, 1.0)
    }
}

pub fn damping_symbol_eval(dmp: &DampingSymbol, t: f64, x: &[f64], xi: &[f64]) -> f64 {
    t.powf(-0.75) * dmp.normalized(t, x, xi)
}

/// D_t = {1/16 < |ξ| < 16} ∩ {2^{-6}t < |x| < 2⁶t} ∩ {x·ξ > −2^{-1/2}|x||ξ|}.
pub fn in_damping_domain(t: f64, x: &[f64], xi: &[f64]) -> bool {
    let rx = crate::grid::norm(x);
    let rxi = crate::grid::norm(xi);
    rxi > 1.0 / 16.0 && rxi < 16.0 && rx > t / 64.0 && rx < 64.0 * t && crate::grid::dot(x, xi) > -(0.5f64).sqrt() * rx * rxi
}

/// Ψ(t) = ∫_{max(1,s)}^t 𝔅(σ, x_σ, ξ_σ) dσ on the trajectory samples, by 3-point
/// Gauss-Legendre on each sample interval with Hermite-interpolated states.
pub fn damping_integral(traj: &PhaseTrajectory, dmp: &DampingSymbol) -> Vec<f64> {
    let d = traj.dim;
    let gauss = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
    let mut out = Vec::with_capacity(traj.times.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..traj.times.len() {
        let (a, b) = (traj.times[k - 1].max(1.0), traj.times[k].max(1.0));
        if b > a {
            let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
            for (z, w) in gauss {
                let tau = mid + half * z;
                let p = traj.state_at(tau);
                acc += w * half * damping_symbol_eval(dmp, tau, &p.x[..d], &p.xi[..d]);
            }
        }
        out.push(acc);
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct DampingReport {
    pub samples: usize,
    /// Samples with 𝔅 outside [0, t^{-3/4}].
    pub range_violations: usize,
    /// Active-set samples per b_j and the worst ratio (db_j/dt)/(2/t) among them.
    pub active: [usize; 5],
    pub worst_ratio: [f64; 5],
    pub derivative_violations: usize,
    /// Largest increase of t^{3/4}𝔅 between consecutive samples.
    pub max_increase: f64,
    pub monotone_violations: usize,
    pub doubling_checked: usize,
    pub doubling_violations: usize,
}

impl DampingReport {
    pub fn passed(&self) -> bool {
        self.range_violations == 0 && self.derivative_violations == 0 && self.monotone_violations == 0 && self.doubling_violations == 0
    }
}

/// Check 0 ≤ 𝔅 ≤ t^{-3/4}, db_j/dt ≥ (1 − tol)·2/t on D_t ∩ {0 ≤ b_j ≤ 1},
/// t^{3/4}𝔅 nonincreasing up to tol, and the doubling property on sampled pairs.
pub fn verify_damping_monotone(dmp: &DampingSymbol, trajectories: &[PhaseTrajectory], tol: f64) -> DampingReport {
    let mut rep = DampingReport { worst_ratio: [f64::INFINITY; 5], ..Default::default() };
    for traj in trajectories {
        let d = traj.dim;
        let mut prev: Option<f64> = None;
        let norm: Vec<f64> = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, p)| if t >= 1.0 { dmp.normalized(t, &p.x[..d], &p.xi[..d]) } else { f64::NAN })
            .collect();
        for (k, &t) in traj.times.iter().enumerate() {
            if t < 1.0 {
                continue;
            }
            rep.samples += 1;
            let p = &traj.states[k];
            let v = &traj.velocities[k];
            let value = damping_symbol_eval(dmp, t, &p.x[..d], &p.xi[..d]);
            if !(value >= 0.0 && value <= t.powf(-0.75) * (1.0 + 1e-12)) {
                rep.range_violations += 1;
            }
            let nv = norm[k];
            if let Some(pv) = prev {
                let inc = nv - pv;
                rep.max_increase = rep.max_increase.max(inc);
                if inc > tol {
                    rep.monotone_violations += 1;
                }
            }
            prev = Some(nv);
            if in_damping_domain(t, &p.x[..d], &p.xi[..d]) {
                let b = dmp.factors(t, &p.x[..d], &p.xi[..d]);
                let delta = 1e-6 * t;
                let shifted = |sgn: f64| {
                    let mut x = [0.0; 3];
                    let mut xi = [0.0; 3];
                    for a in 0..d {
                        x[a] = p.x[a] + sgn * delta * v.x[a];
                        xi[a] = p.xi[a] + sgn * delta * v.xi[a];
                    }
                    dmp.factors(t + sgn * delta, &x[..d], &xi[..d])
                };
                let (bp, bm) = (shifted(1.0), shifted(-1.0));
                for j in 0..5 {
                    if (0.0..=1.0).contains(&b[j]) {
                        let rate = (bp[j] - bm[j]) / (2.0 * delta);
                        let ratio = rate * t / 2.0;
                        rep.active[j] += 1;
                        rep.worst_ratio[j] = rep.worst_ratio[j].min(ratio);
                        if ratio < 1.0 - tol {
                            rep.derivative_violations += 1;
                        }
                    }
                }
            }
            if nv > 1e-9 && nv < 1.0 - 1e-9 {
                let target = 2.0 * t;
                let idx = traj.times.partition_point(|&s| s < target);
                if idx < traj.times.len() {
                    rep.doubling_checked += 1;
                    if norm[idx] > 1e-9 {
                        rep.doubling_violations += 1;
                    }
                }
            }
        }
    }
    rep
}
