use crate::error::{Error, Result};
use crate::exec;
use crate::flow::{damping_integral, integrate_flow, DampingSymbol, FlowOptions, Hamiltonian, PhasePoint};
use crate::grid::{Grid, SpectralField};
use crate::C64;
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// c_d = 2^{-d/2}π^{-3d/4}.
pub fn bargmann_constant(d: usize) -> f64 {
    2f64.powf(-(d as f64) / 2.0) * PI.powf(-0.75 * d as f64)
}

/// Memory cap (complex entries) for a full phase-space table.
pub const PHASE_BUDGET: usize = 1 << 25;

/// T_{1/s}u sampled on the field grid in x and on a decimated dual lattice in ξ.
#[derive(Clone, Debug)]
pub struct PhaseFunction {
    pub grid: Grid,
    pub scale: f64,
    /// Decimation of the dual lattice along every axis.
    pub stride: usize,
    /// Indices (into the field's dual lattice) of the sampled frequencies.
    pub xi_index: Vec<usize>,
    /// values[m][i] = T_{1/s}u(x_i, ξ_{xi_index[m]}).
    pub values: Vec<Vec<C64>>,
}

impl PhaseFunction {
    /// ‖F‖² = ∫∫|F|² dx dξ by lattice quadrature.
    pub fn norm_l2(&self) -> f64 {
        let dxi = (self.stride as f64 * self.grid.dxi()).powi(self.grid.dim() as i32);
        let s: f64 = self.values.iter().flat_map(|v| v.iter()).map(|v| v.norm_sqr()).sum();
        (s * dxi * self.grid.cell_volume()).sqrt()
    }

    pub fn xi(&self, m: usize) -> [f64; 3] {
        self.grid.freq(self.xi_index[m])
    }
}

fn check_resolved(grid: &Grid, s: f64) -> Result<()> {
    if !(s > 0.0) {
        return Err(Error::NotPositive(vec![s]));
    }
    if s.sqrt() < 2.0 * grid.dx() {
        return Err(Error::Unresolved(format!("Gaussian width √s = {:.3e} below two cells ({:.3e})", s.sqrt(), 2.0 * grid.dx())));
    }
    Ok(())
}

/// Largest stride with stride·dξ ≤ 1/(4√s).
pub fn phase_stride(grid: &Grid, s: f64) -> usize {
    ((1.0 / (4.0 * s.sqrt())) / grid.dxi()).floor().max(1.0) as usize
}

fn decimated_indices(grid: &Grid, stride: usize) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| {
            let u = grid.unravel(i);
            (0..grid.dim()).all(|a| grid.k_index(u[a]).rem_euclid(stride as i64) == 0)
        })
        .collect()
}

/// f̂(η)·(2πs)^{d/2}e^{-s|η-ξ|²/2} for one sampled ξ.
fn windowed(grid: &Grid, coeffs: &[C64], xi: &[f64], s: f64) -> Vec<C64> {
    let d = grid.dim();
    let pref = (2.0 * PI * s).powf(d as f64 / 2.0);
    coeffs
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let eta = grid.freq(k);
            let r2: f64 = (0..d).map(|a| (eta[a] - xi[a]).powi(2)).sum();
            v * pref * (-s * r2 / 2.0).exp()
        })
        .collect()
}

/// T_{1/s}f(x,ξ) = c_d s^{-d/4}∫e^{-|x-y|²/2s}e^{iξ·(x-y)}f(y)dy, by one convolution per sampled ξ.
pub fn bargmann(f: &SpectralField, s: f64) -> Result<PhaseFunction> {
    let grid = f.grid().clone();
    check_resolved(&grid, s)?;
    let stride = phase_stride(&grid, s);
    let xi_index = decimated_indices(&grid, stride);
    let entries = xi_index.len().saturating_mul(grid.len());
    if entries > PHASE_BUDGET {
        return Err(Error::Budget(format!("phase table needs {entries} entries (budget {PHASE_BUDGET})")));
    }
    let d = grid.dim();
    let coeffs = f.coeffs();
    let c = bargmann_constant(d) * s.powf(-(d as f64) / 4.0);
    let values = exec::map(xi_index.len(), |m| {
        let xi = grid.freq(xi_index[m]);
        let w = windowed(&grid, &coeffs, &xi[..d], s);
        let v = SpectralField::from_coeffs(&grid, w).unwrap().into_values();
        v.data().iter().map(|z| z * c).collect()
    });
    Ok(PhaseFunction { grid, scale: s, stride, xi_index, values })
}

/// T*_{1/s}F(y) = c_d s^{-d/4}∫∫e^{-|x-y|²/2s}e^{-iξ·(x-y)}F(x,ξ)dx dξ.
pub fn bargmann_adjoint(big_f: &PhaseFunction, s: f64) -> Result<SpectralField> {
    if (big_f.scale - s).abs() > 1e-14 * s.abs() {
        return Err(Error::ScaleMismatch(big_f.scale, s));
    }
    let grid = &big_f.grid;
    let d = grid.dim();
    let c = bargmann_constant(d) * s.powf(-(d as f64) / 4.0) * (big_f.stride as f64 * grid.dxi()).powi(d as i32);
    let parts: Vec<Vec<C64>> = exec::map(big_f.xi_index.len(), |m| {
        let xi = big_f.xi(m);
        let fc = SpectralField::from_values(grid, big_f.values[m].clone()).unwrap().coeffs();
        windowed(grid, &fc, &xi[..d], s)
    });
    let mut acc = vec![C64::new(0.0, 0.0); grid.len()];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v * c;
        }
    }
    SpectralField::from_coeffs(grid, acc)
}

fn wrapped(grid: &Grid, a: f64) -> f64 {
    let l = grid.half_width();
    (a + l).rem_euclid(2.0 * l) - l
}

/// T_{1/s}u at a single phase point by direct quadrature with periodic differences.
pub fn bargmann_at(u: &SpectralField, s: f64, x: &[f64], xi: &[f64]) -> Result<C64> {
    let grid = u.grid();
    check_resolved(grid, s)?;
    let d = grid.dim();
    let vals = u.values();
    let c = bargmann_constant(d) * s.powf(-(d as f64) / 4.0) * grid.cell_volume();
    let mut acc = C64::new(0.0, 0.0);
    for (j, v) in vals.iter().enumerate() {
        let y = grid.point(j);
        let mut r2 = 0.0;
        let mut ph = 0.0;
        for a in 0..d {
            let z = wrapped(grid, x[a] - y[a]);
            r2 += z * z;
            ph += xi[a] * z;
        }
        if r2 < 60.0 * s {
            acc += v * C64::from_polar((-r2 / (2.0 * s)).exp(), ph);
        }
    }
    Ok(acc * c)
}

/// T*_{1/s}δ_{(x_s,ξ_s)}(y) = c_d s^{-d/4}e^{-|y-x_s|²/2s}e^{iξ_s·(y-x_s)}.
pub fn coherent_state(grid: &Grid, s: f64, x_s: &[f64], xi_s: &[f64]) -> Result<SpectralField> {
    check_resolved(grid, s)?;
    let d = grid.dim();
    let c = bargmann_constant(d) * s.powf(-(d as f64) / 4.0);
    let g = grid.clone();
    let (x0, k0) = (x_s.to_vec(), xi_s.to_vec());
    Ok(SpectralField::from_fn(grid, move |y| {
        let mut r2 = 0.0;
        let mut ph = 0.0;
        for a in 0..d {
            let z = wrapped(&g, y[a] - x0[a]);
            r2 += z * z;
            ph += k0[a] * z;
        }
        C64::from_polar(c * (-r2 / (2.0 * s)).exp(), ph)
    }))
}

#[derive(Clone, Debug)]
pub struct KgJacobian {
    pub matrix: DMatrix<f64>,
    /// Numerical eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// ⟨ξ⟩_a^{-1} (d−1 times) then a^{-2}⟨ξ⟩_a^{-3}, sorted descending.
    pub closed_form: Vec<f64>,
    /// Unit eigenvector of the smallest-eigenvalue branch μ_d.
    pub longitudinal: Vec<f64>,
}

/// Φ^d_KG(ξ) = ⟨ξ⟩_a^{-3}(⟨ξ⟩_a²I − ξ⊗ξ) with ⟨ξ⟩_a = √(a^{-2} + |ξ|²).
pub fn kg_jacobian_matrix(xi: &[f64], a: f64) -> Result<KgJacobian> {
    if !(a > 0.0) {
        return Err(Error::NotPositive(vec![a]));
    }
    let d = xi.len();
    let matrix = crate::flow::phi_kg(xi, a);
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let w = (a.powi(-2) + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut closed_form = vec![1.0 / w; d - 1];
    closed_form.push(a.powi(-2) / w.powi(3));
    closed_form.sort_by(|x, y| y.total_cmp(x));
    let last = order[d - 1];
    let longitudinal = eig.eigenvectors.column(last).iter().copied().collect();
    Ok(KgJacobian { matrix, eigenvalues, closed_form, longitudinal })
}

/// Φ^d_w(ξ) = |ξ|²I − ξ⊗ξ and its rank.
pub fn wave_jacobian_matrix(xi: &[f64]) -> (DMatrix<f64>, usize) {
    let d = xi.len();
    let r2: f64 = xi.iter().map(|v| v * v).sum();
    let m = DMatrix::from_fn(d, d, |i, j| if i == j { r2 } else { 0.0 } - xi[i] * xi[j]);
    let eig = SymmetricEigen::new(m.clone());
    let tol = 1e-12 * r2.max(1e-300);
    let rank = eig.eigenvalues.iter().filter(|&&l| l.abs() > tol).count();
    (m, if r2 == 0.0 { 0 } else { rank })
}

/// d_t((x,ξ),(y,η))² = t⁻¹|x−y|² + t|ξ−η|².
pub fn phase_distance(p: &PhasePoint, q: &PhasePoint, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NotPositive(vec![t]));
    }
    let dx: f64 = (0..3).map(|a| (p.x[a] - q.x[a]).powi(2)).sum();
    let dxi: f64 = (0..3).map(|a| (p.xi[a] - q.xi[a]).powi(2)).sum();
    Ok((dx / t + t * dxi).sqrt())
}

/// ‖x‖_δ = √(x₁² + … + x_{d−1}² + δ²x_d²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortedNorm {
    pub delta: f64,
}

impl DistortedNorm {
    pub fn norm(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut s: f64 = x[..d - 1].iter().map(|v| v * v).sum();
        s += (self.delta * x[d - 1]).powi(2);
        s.sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub x_s: Vec<f64>,
    pub xi_s: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ProbeRow {
    pub t: f64,
    pub s: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub measured: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// |K| at target phase points, from the evolution of scale-s coherent states
/// FBI-transformed at scale t, against (2π)^{-d}(t/s)^{-d/4}(1 + ΔΨ² + t⁻¹|x−x_t|² + s|ξ−ξ_t|²)^{-N}.
pub fn kernel_decay_probe(
    evolve: &dyn Fn(&SpectralField) -> Result<SpectralField>,
    ham: &dyn Hamiltonian,
    grid: &Grid,
    t: f64,
    s: f64,
    probes: &[Probe],
    n_exp: f64,
    damping: Option<&DampingSymbol>,
) -> Result<Vec<ProbeRow>> {
    check_resolved(grid, s)?;
    check_resolved(grid, t)?;
    let d = grid.dim();
    let mut rows = Vec::with_capacity(probes.len());
    for p in probes {
        let phi = coherent_state(grid, s, &p.x_s, &p.xi_s)?;
        let out = evolve(&phi)?;
        let measured = bargmann_at(&out, t, &p.x, &p.xi)?.norm();
        let start = PhasePoint::new(&p.x_s, &p.xi_s);
        let traj = integrate_flow(ham, &start, s, t, FlowOptions { tol: 1e-10, samples: 64 })?;
        let end = traj.last();
        let dpsi = damping.map(|dmp| *damping_integral(&traj, dmp).last().unwrap()).unwrap_or(0.0);
        let mut bracket = 1.0 + dpsi * dpsi;
        for a in 0..d {
            bracket += (p.x[a] - end.x[a]).powi(2) / t + s * (p.xi[a] - end.xi[a]).powi(2);
        }
        let bound = (2.0 * PI).powi(-(d as i32)) * (t / s).powf(-(d as f64) / 4.0) * bracket.powf(-n_exp);
        rows.push(ProbeRow { t, s, x: p.x.clone(), xi: p.xi.clone(), measured, bound, ratio: measured / bound });
    }
    Ok(rows)
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("t,s,x,xi,measured,bound_N,ratio\n");
    let join = |v: &[f64]| v.iter().map(|a| format!("{a}")).collect::<Vec<_>>().join(" ");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{},{}\n", r.t, r.s, join(&r.x), join(&r.xi), r.measured, r.bound, r.ratio));
    }
    out
}
