//! Truncated multivariate Taylor arithmetic in the variables (t, x₁, x₂, x₃)
//! up to total degree 4. Used to evaluate analytic metric profiles together
//! with all their partial derivatives exactly.

use std::sync::OnceLock;

pub const NV: usize = 4;
pub const DEG: usize = 4;
pub const NM: usize = 70;

struct Table {
    monos: Vec<[u8; NV]>,
    deg: Vec<u8>,
    prod: Vec<(u8, u8, u8)>,
}

fn table() -> &'static Table {
    static T: OnceLock<Table> = OnceLock::new();
    T.get_or_init(|| {
        let mut monos = Vec::new();
        for total in 0..=DEG {
            for a in (0..=total).rev() {
                for b in (0..=total - a).rev() {
                    for c in (0..=total - a - b).rev() {
                        let e = total - a - b - c;
                        monos.push([a as u8, b as u8, c as u8, e as u8]);
                    }
                }
            }
        }
        assert_eq!(monos.len(), NM);
        let deg: Vec<u8> = monos.iter().map(|m| m.iter().sum()).collect();
        let mut prod = Vec::new();
        for i in 0..NM {
            for j in 0..NM {
                if (deg[i] + deg[j]) as usize <= DEG {
                    let mut s = [0u8; NV];
                    for v in 0..NV {
                        s[v] = monos[i][v] + monos[j][v];
                    }
                    let k = monos.iter().position(|m| *m == s).unwrap();
                    prod.push((i as u8, j as u8, k as u8));
                }
            }
        }
        Table { monos, deg, prod }
    })
}

/// Position of the monomial with exponents α in the coefficient array.
pub fn index_of(alpha: &[usize; NV]) -> Option<usize> {
    if alpha.iter().sum::<usize>() > DEG {
        return None;
    }
    table().monos.iter().position(|m| (0..NV).all(|v| m[v] as usize == alpha[v]))
}

#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub c: [f64; NM],
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        let mut c = [0.0; NM];
        c[0] = v;
        Jet { c }
    }

    /// Independent variable number `v` (0 = t, 1..=3 = x) at value `at`.
    pub fn var(v: usize, at: f64) -> Jet {
        let mut j = Jet::constant(at);
        let mut e = [0; NV];
        e[v] = 1;
        j.c[index_of(&e).unwrap()] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// ∂^α of the expanded function at the base point.
    pub fn derivative(&self, alpha: &[usize; NV]) -> Option<f64> {
        let i = index_of(alpha)?;
        let fact: f64 = alpha.iter().map(|&a| (1..=a).product::<usize>() as f64).product();
        Some(self.c[i] * fact)
    }

    pub fn add(&self, o: &Jet) -> Jet {
        let mut r = *self;
        for i in 0..NM {
            r.c[i] += o.c[i];
        }
        r
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        let mut r = *self;
        for i in 0..NM {
            r.c[i] -= o.c[i];
        }
        r
    }

    pub fn scale(&self, a: f64) -> Jet {
        let mut r = *self;
        r.c.iter_mut().for_each(|v| *v *= a);
        r
    }

    pub fn add_const(&self, a: f64) -> Jet {
        let mut r = *self;
        r.c[0] += a;
        r
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let mut r = [0.0; NM];
        for &(i, j, k) in &table().prod {
            r[k as usize] += self.c[i as usize] * o.c[j as usize];
        }
        Jet { c: r }
    }

    /// f(self) given f and its derivatives f^{(k)} at the base value, k = 0..=DEG.
    pub fn compose(&self, derivs: &[f64; DEG + 1]) -> Jet {
        let mut delta = *self;
        delta.c[0] = 0.0;
        let mut out = Jet::constant(derivs[0]);
        let mut power = Jet::constant(1.0);
        let mut fact = 1.0;
        for (k, d) in derivs.iter().enumerate().skip(1) {
            power = power.mul(&delta);
            fact *= k as f64;
            out = out.add(&power.scale(d / fact));
        }
        out
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&[e; DEG + 1])
    }

    /// self^p for positive base value.
    pub fn powf(&self, p: f64) -> Jet {
        let x = self.value();
        let mut d = [0.0; DEG + 1];
        let mut coef = 1.0;
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = coef * x.powf(p - k as f64);
            coef *= p - k as f64;
        }
        self.compose(&d)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn recip(&self) -> Jet {
        self.powf(-1.0)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose(&[s, c, -s, -c, s])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.compose(&[c, -s, -c, s, c])
    }

    pub fn max_degree() -> usize {
        DEG
    }

    pub fn degree_of(i: usize) -> usize {
        table().deg[i] as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_derivatives() {
        let x = Jet::var(1, 0.7);
        let y = Jet::var(2, -0.3);
        let f = x.mul(&x).mul(&y).add(&x.scale(3.0));
        assert!((f.value() - (0.49 * -0.3 + 2.1)).abs() < 1e-15);
        assert!((f.derivative(&[0, 1, 0, 0]).unwrap() - (2.0 * 0.7 * -0.3 + 3.0)).abs() < 1e-15);
        assert!((f.derivative(&[0, 2, 1, 0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(f.derivative(&[0, 2, 1, 0]).unwrap(), 2.0);
        assert!(f.derivative(&[0, 3, 2, 0]).is_none());
    }

    #[test]
    fn elementary_functions_match_closed_forms() {
        let x = Jet::var(1, 0.4);
        let e = x.scale(2.0).exp();
        for k in 0..=4usize {
            let d = e.derivative(&[0, k, 0, 0]).unwrap();
            assert!((d - 2f64.powi(k as i32) * 0.8f64.exp()).abs() < 1e-12);
        }
        let r = x.mul(&x).add_const(1.0).recip();
        // d/dx (1+x²)^{-1} = -2x/(1+x²)²
        let exact = -0.8 / (1.16f64 * 1.16);
        assert!((r.derivative(&[0, 1, 0, 0]).unwrap() - exact).abs() < 1e-14);
        let s = Jet::var(0, 1.1).sin();
        assert!((s.derivative(&[3, 0, 0, 0]).unwrap() + 1.1f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn mixed_partials_match_finite_differences() {
        let f = |a: f64, b: f64| ((a * a + 2.0 * b * b + 1.0).powf(-0.75)) * (0.3 * a).cos();
        let a = Jet::var(1, 0.5);
        let b = Jet::var(2, -0.2);
        let j = a.mul(&a).add(&b.mul(&b).scale(2.0)).add_const(1.0).powf(-0.75).mul(&a.scale(0.3).cos());
        let h = 1e-4;
        let fd = (f(0.5 + h, -0.2 + h) - f(0.5 + h, -0.2 - h) - f(0.5 - h, -0.2 + h) + f(0.5 - h, -0.2 - h)) / (4.0 * h * h);
        assert!((j.derivative(&[0, 1, 1, 0]).unwrap() - fd).abs() < 1e-6);
    }
}
