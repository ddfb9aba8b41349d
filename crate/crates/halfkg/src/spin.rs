//! Vierbein, curved gamma matrices and the spin connection of the decoupled
//! metric g = -dt² + g_{ij}dx^i dx^j. Spatial dimensions below 3 are padded
//! with flat directions so that spinors stay 4-component.

use crate::error::{Error, Result};
use crate::metric::{Mat3, MetricSpec};
use crate::C64;
use nalgebra::{Matrix3, Matrix4, SymmetricEigen};

pub type M4 = Matrix4<C64>;

/// Minkowski m = diag(-1, 1, 1, 1).
pub const MINKOWSKI: [f64; 4] = [-1.0, 1.0, 1.0, 1.0];

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli() -> [[[C64; 2]; 2]; 3] {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    [[[z, o], [o, z]], [[z, -i], [i, z]], [[o, z], [z, -o]]]
}

/// Dirac representation: γ̃⁰ = diag(I, -I), γ̃^j = [[0, σ_j], [-σ_j, 0]],
/// so that {γ̃^α, γ̃^β} = -2m^{αβ}.
pub fn flat_gammas() -> [M4; 4] {
    let mut g = [M4::zeros(); 4];
    for a in 0..4 {
        g[0][(a, a)] = c(if a < 2 { 1.0 } else { -1.0 }, 0.0);
    }
    let s = pauli();
    for j in 0..3 {
        for r in 0..2 {
            for q in 0..2 {
                g[j + 1][(r, q + 2)] = s[j][r][q];
                g[j + 1][(r + 2, q)] = -s[j][r][q];
            }
        }
    }
    g
}

/// γ̃_α = m_{αβ}γ̃^β.
pub fn flat_gammas_lower() -> [M4; 4] {
    let mut g = flat_gammas();
    g[0] = -g[0];
    g
}

#[derive(Clone, Debug)]
pub struct SpinFrame {
    /// b^α_μ, row α, column μ.
    pub vierbein: Matrix4<f64>,
    /// b^μ_α, row μ, column α.
    pub inverse: Matrix4<f64>,
    pub g_low: Matrix4<f64>,
    pub g_up: Matrix4<f64>,
    /// Spatial eigen-decomposition of g_{ij} used for derivatives of the square root.
    eig_values: [f64; 3],
    eig_vectors: Matrix3<f64>,
}

fn padded(x: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[..x.len()].copy_from_slice(x);
    p
}

fn spatial_up(spec: &MetricSpec, t: f64, x: &[f64]) -> Matrix3<f64> {
    let g = spec.inverse_metric(t, x);
    let mut m = Matrix3::identity();
    for i in 0..spec.dim {
        for j in 0..spec.dim {
            m[(i, j)] = g[i][j];
        }
    }
    m
}

fn mat3(a: &Mat3, d: usize) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = a[i][j];
        }
    }
    m
}

/// b⁰₀ = 1 and the spatial block is the principal square root of g_{ij}.
pub fn vierbein(spec: &MetricSpec, t: f64, x: &[f64]) -> Result<SpinFrame> {
    let x = padded(x);
    let up = spatial_up(spec, t, &x);
    let eu = SymmetricEigen::new(up);
    if eu.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositive(eu.eigenvalues.iter().copied().collect()));
    }
    // g_{ij} shares eigenvectors with g^{ij}.
    let q = eu.eigenvectors;
    let lam = [1.0 / eu.eigenvalues[0], 1.0 / eu.eigenvalues[1], 1.0 / eu.eigenvalues[2]];
    let low = q * Matrix3::from_diagonal(&lam.into()) * q.transpose();
    let root = q * Matrix3::from_diagonal(&lam.map(f64::sqrt).into()) * q.transpose();
    let root_inv = q * Matrix3::from_diagonal(&lam.map(|l| 1.0 / l.sqrt()).into()) * q.transpose();
    let mut b = Matrix4::zeros();
    let mut bi = Matrix4::zeros();
    let mut gl = Matrix4::zeros();
    let mut gu = Matrix4::zeros();
    b[(0, 0)] = 1.0;
    bi[(0, 0)] = 1.0;
    gl[(0, 0)] = -1.0;
    gu[(0, 0)] = -1.0;
    for i in 0..3 {
        for j in 0..3 {
            b[(i + 1, j + 1)] = root[(i, j)];
            bi[(i + 1, j + 1)] = root_inv[(i, j)];
            gl[(i + 1, j + 1)] = low[(i, j)];
            gu[(i + 1, j + 1)] = up[(i, j)];
        }
    }
    Ok(SpinFrame { vierbein: b, inverse: bi, g_low: gl, g_up: gu, eig_values: lam, eig_vectors: q })
}

/// γ^μ = b^μ_α γ̃^α.
pub fn gamma_matrices(frame: &SpinFrame) -> [M4; 4] {
    let flat = flat_gammas();
    let mut out = [M4::zeros(); 4];
    for mu in 0..4 {
        for a in 0..4 {
            let w = frame.inverse[(mu, a)];
            if w != 0.0 {
                out[mu] += flat[a] * c(w, 0.0);
            }
        }
    }
    out
}

/// γ_ν = b^α_ν γ̃_α.
pub fn gamma_matrices_lower(frame: &SpinFrame) -> [M4; 4] {
    let flat = flat_gammas_lower();
    let mut out = [M4::zeros(); 4];
    for nu in 0..4 {
        for a in 0..4 {
            let w = frame.vierbein[(a, nu)];
            if w != 0.0 {
                out[nu] += flat[a] * c(w, 0.0);
            }
        }
    }
    out
}

/// max over (μ,ν) of ‖γ^μγ^ν + γ^νγ^μ + 2g^{μν}I‖.
pub fn clifford_residual(frame: &SpinFrame) -> f64 {
    let g = gamma_matrices(frame);
    let mut worst: f64 = 0.0;
    for mu in 0..4 {
        for nu in 0..4 {
            let r = g[mu] * g[nu] + g[nu] * g[mu] + M4::identity() * c(2.0 * frame.g_up[(mu, nu)], 0.0);
            worst = worst.max(r.norm());
        }
    }
    worst
}

/// max |m_{αβ}b^α_μ b^β_ν − g_{μν}|.
pub fn vierbein_residual(frame: &SpinFrame) -> f64 {
    let m = Matrix4::from_diagonal(&MINKOWSKI.into());
    (frame.vierbein.transpose() * m * frame.vierbein - frame.g_low).amax()
}

/// First derivatives of the frame: ∂_μ g_{ρλ}, ∂_μ b^α_λ and Γ^σ_{μλ}.
pub struct FrameDerivatives {
    pub dg_low: [Matrix4<f64>; 4],
    pub dvierbein: [Matrix4<f64>; 4],
    /// christoffel[σ][(μ, λ)].
    pub christoffel: [Matrix4<f64>; 4],
}

pub fn frame_derivatives(spec: &MetricSpec, frame: &SpinFrame, t: f64, x: &[f64]) -> Result<FrameDerivatives> {
    let d = spec.dim;
    let x = padded(x);
    let grad = spec.gradient(t, &x)?;
    let dt = spec.time_derivative(t, &x);
    let low3 = frame.g_low.fixed_view::<3, 3>(1, 1).into_owned();
    let q = frame.eig_vectors;
    let lam = frame.eig_values;
    let mut dg_low = [Matrix4::zeros(); 4];
    let mut db = [Matrix4::zeros(); 4];
    for mu in 0..4 {
        let dup = if mu == 0 { mat3(&dt, d) } else if mu <= d { mat3(&grad[mu - 1], d) } else { Matrix3::zeros() };
        let dlow = -(low3 * dup * low3);
        let m = q.transpose() * dlow * q;
        let droot = q * Matrix3::from_fn(|i, j| m[(i, j)] / (lam[i].sqrt() + lam[j].sqrt())) * q.transpose();
        for i in 0..3 {
            for j in 0..3 {
                dg_low[mu][(i + 1, j + 1)] = dlow[(i, j)];
                db[mu][(i + 1, j + 1)] = droot[(i, j)];
            }
        }
    }
    let mut chr = [Matrix4::zeros(); 4];
    for (sigma, cs) in chr.iter_mut().enumerate() {
        for mu in 0..4 {
            for la in 0..4 {
                let mut v = 0.0;
                for rho in 0..4 {
                    let w = frame.g_up[(sigma, rho)];
                    if w != 0.0 {
                        v += w * (dg_low[mu][(rho, la)] + dg_low[la][(rho, mu)] - dg_low[rho][(mu, la)]);
                    }
                }
                cs[(mu, la)] = 0.5 * v;
            }
        }
    }
    Ok(FrameDerivatives { dg_low, dvierbein: db, christoffel: chr })
}

/// Sign in front of ¼γ̃_αγ̃_β b^{αλ}𝐃_μ b^β_λ that makes the spinor covariant
/// derivative 𝐃_μ = ∂_μ − Γ_μ annihilate the gammas with these conventions.
pub const CONNECTION_SIGN: f64 = 0.25;

/// Γ_μ = ±¼ γ̃_α γ̃_β b^{αλ} 𝐃_μ b^β_λ with 𝐃_μ b^β_λ = ∂_μ b^β_λ − Γ^σ_{μλ} b^β_σ.
pub fn spin_connection(spec: &MetricSpec, t: f64, x: &[f64]) -> Result<[M4; 4]> {
    let frame = vierbein(spec, t, x)?;
    let der = frame_derivatives(spec, &frame, t, x)?;
    Ok(connection_from(&frame, &der))
}

pub fn connection_from(frame: &SpinFrame, der: &FrameDerivatives) -> [M4; 4] {
    let gl = flat_gammas_lower();
    let b = &frame.vierbein;
    // b^{αλ} = g^{λσ} b^α_σ
    let b_up = b * frame.g_up;
    let mut out = [M4::zeros(); 4];
    for mu in 0..4 {
        // 𝐃_μ b^β_λ as a matrix (β, λ)
        let cov = Matrix4::from_fn(|beta, la| {
            let mut v = der.dvierbein[mu][(beta, la)];
            for sigma in 0..4 {
                v -= der.christoffel[sigma][(mu, la)] * b[(beta, sigma)];
            }
            v
        });
        // w_{αβ} = Σ_λ b^{αλ} 𝐃_μ b^β_λ
        let w = b_up * cov.transpose();
        for a in 0..4 {
            for be in 0..4 {
                let coef = w[(a, be)];
                if coef.abs() > 0.0 {
                    out[mu] += gl[a] * gl[be] * c(CONNECTION_SIGN * coef, 0.0);
                }
            }
        }
    }
    out
}

/// max over (μ,ν) of ‖∂_μγ_ν − Γ^λ_{μν}γ_λ − Γ_μγ_ν + γ_νΓ_μ‖.
pub fn affine_spin_residual(spec: &MetricSpec, t: f64, x: &[f64]) -> Result<f64> {
    let frame = vierbein(spec, t, x)?;
    let der = frame_derivatives(spec, &frame, t, x)?;
    let conn = connection_from(&frame, &der);
    let lower = gamma_matrices_lower(&frame);
    let gl = flat_gammas_lower();
    let mut worst: f64 = 0.0;
    for mu in 0..4 {
        for nu in 0..4 {
            let mut r = M4::zeros();
            for a in 0..4 {
                r += gl[a] * c(der.dvierbein[mu][(a, nu)], 0.0);
            }
            for la in 0..4 {
                r -= lower[la] * c(der.christoffel[la][(mu, nu)], 0.0);
            }
            r += lower[nu] * conn[mu] - conn[mu] * lower[nu];
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{AnisoTerm, Profile};

    fn random_spec() -> MetricSpec {
        let terms = vec![
            AnisoTerm { matrix: [[1.0, 0.3, -0.2], [0.3, -0.5, 0.4], [-0.2, 0.4, 0.8]], center: [0.2, -0.1, 0.3], width: 1.3 },
            AnisoTerm { matrix: [[0.2, -0.6, 0.1], [-0.6, 0.9, 0.0], [0.1, 0.0, -0.7]], center: [-0.5, 0.4, 0.0], width: 0.8 },
        ];
        MetricSpec::new(3, 0.05, Profile::Anisotropic { terms }).with_time_modulation(0.4, 1.3)
    }

    #[test]
    fn flat_frame_is_trivial() {
        let f = vierbein(&MetricSpec::flat(3), 0.5, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(f.vierbein, Matrix4::identity());
        let g = gamma_matrices(&f);
        let flat = flat_gammas();
        for mu in 0..4 {
            assert!((g[mu] - flat[mu]).norm() < 1e-15);
        }
        let conn = spin_connection(&MetricSpec::flat(3), 0.5, &[0.1, 0.2, 0.3]).unwrap();
        assert!(conn.iter().all(|m| m.norm() == 0.0));
    }

    #[test]
    fn clifford_and_reconstruction() {
        let spec = random_spec();
        for k in 0..20 {
            let x = [0.3 * k as f64 - 2.0, (k as f64).sin(), (k as f64 * 0.7).cos()];
            let f = vierbein(&spec, 0.1 * k as f64, &x).unwrap();
            assert!(vierbein_residual(&f) < 1e-10);
            assert!(clifford_residual(&f) < 1e-10);
        }
    }

    #[test]
    fn affine_spin_property() {
        let spec = random_spec();
        for k in 0..10 {
            let x = [0.21 * k as f64 - 1.0, 0.5 - 0.1 * k as f64, 0.3];
            assert!(affine_spin_residual(&spec, 0.4 + 0.3 * k as f64, &x).unwrap() < 1e-8);
        }
    }

    #[test]
    fn static_conformal_has_no_time_component() {
        let spec = MetricSpec::new(3, 0.1, Profile::RadialBump { width: 1.5 });
        let conn = spin_connection(&spec, 2.0, &[0.4, -0.3, 0.8]).unwrap();
        assert!(conn[0].norm() < 1e-14);
        assert!(conn[1].norm() > 1e-4);
    }
}
