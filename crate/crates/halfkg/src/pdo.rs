use crate::error::{Error, Result};
use crate::exec;
use crate::flow::Hamiltonian;
use crate::grid::{Grid, SpectralField};
use crate::metric::MetricSpec;
use crate::spin::{self, M4};
use crate::C64;
use std::f64::consts::PI;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> C64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> M4 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> [C64; 3] + Send + Sync>;

#[derive(Clone)]
enum Value {
    Scalar(ScalarFn),
    Matrix(MatrixFn),
}

/// Phase space symbol a(t, x, ξ), scalar or 4×4, with optional first derivatives.
#[derive(Clone)]
pub struct Symbol {
    dim: usize,
    /// Class tag m of S^m, for reporting.
    pub order: f64,
    value: Value,
    grad_x: Option<GradFn>,
    grad_xi: Option<GradFn>,
    x_independent: bool,
}

impl std::fmt::Debug for Symbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Symbol(d={}, m={}, matrix={}, x_independent={})", self.dim, self.order, self.is_matrix(), self.x_independent)
    }
}

fn zero3() -> [C64; 3] {
    [C64::new(0.0, 0.0); 3]
}

impl Symbol {
    pub fn scalar<F>(dim: usize, order: f64, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> C64 + Send + Sync + 'static,
    {
        Symbol { dim, order, value: Value::Scalar(Arc::new(f)), grad_x: None, grad_xi: None, x_independent: false }
    }

    pub fn matrix<F>(dim: usize, order: f64, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> M4 + Send + Sync + 'static,
    {
        Symbol { dim, order, value: Value::Matrix(Arc::new(f)), grad_x: None, grad_xi: None, x_independent: false }
    }

    /// Fourier multiplier m(ξ); ∂_x vanishes identically.
    pub fn multiplier<F>(dim: usize, order: f64, f: F) -> Self
    where
        F: Fn(&[f64]) -> C64 + Send + Sync + 'static,
    {
        let mut s = Self::scalar(dim, order, move |_, _, xi| f(xi));
        s.x_independent = true;
        s.grad_x = Some(Arc::new(|_, _, _| zero3()));
        s
    }

    pub fn with_gradients<Gx, Gxi>(mut self, gx: Gx, gxi: Gxi) -> Self
    where
        Gx: Fn(f64, &[f64], &[f64]) -> [C64; 3] + Send + Sync + 'static,
        Gxi: Fn(f64, &[f64], &[f64]) -> [C64; 3] + Send + Sync + 'static,
    {
        self.grad_x = Some(Arc::new(gx));
        self.grad_xi = Some(Arc::new(gxi));
        self
    }

    pub fn with_grad_xi<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64], &[f64]) -> [C64; 3] + Send + Sync + 'static,
    {
        self.grad_xi = Some(Arc::new(g));
        self
    }

    /// ⟨ξ⟩_M = √(M² + |ξ|²).
    pub fn japanese(dim: usize, mass: f64) -> Self {
        let m2 = mass * mass;
        Self::multiplier(dim, 1.0, move |xi| C64::new((m2 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt(), 0.0)).with_grad_xi(
            move |_, _, xi| {
                let w = (m2 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
                let mut g = zero3();
                for (a, v) in xi.iter().enumerate() {
                    g[a] = C64::new(v / w, 0.0);
                }
                g
            },
        )
    }

    /// The coordinate function x_a.
    pub fn coordinate(dim: usize, a: usize) -> Self {
        Self::scalar(dim, 0.0, move |_, x, _| C64::new(x[a], 0.0)).with_gradients(
            move |_, _, _| {
                let mut g = zero3();
                g[a] = C64::new(1.0, 0.0);
                g
            },
            |_, _, _| zero3(),
        )
    }

    /// The frequency function ξ_a.
    pub fn frequency(dim: usize, a: usize) -> Self {
        Self::multiplier(dim, 1.0, move |xi| C64::new(xi[a], 0.0)).with_grad_xi(move |_, _, _| {
            let mut g = zero3();
            g[a] = C64::new(1.0, 0.0);
            g
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self.value, Value::Matrix(_))
    }

    pub fn is_x_independent(&self) -> bool {
        self.x_independent
    }

    pub fn has_gradients(&self) -> bool {
        self.grad_x.is_some() && self.grad_xi.is_some()
    }

    pub fn eval(&self, t: f64, x: &[f64], xi: &[f64]) -> C64 {
        match &self.value {
            Value::Scalar(f) => f(t, x, xi),
            Value::Matrix(f) => f(t, x, xi)[(0, 0)],
        }
    }

    pub fn eval_matrix(&self, t: f64, x: &[f64], xi: &[f64]) -> M4 {
        match &self.value {
            Value::Scalar(f) => M4::identity() * f(t, x, xi),
            Value::Matrix(f) => f(t, x, xi),
        }
    }

    pub fn grad_x(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<[C64; 3]> {
        self.grad_x.as_ref().map(|g| g(t, x, xi)).ok_or_else(|| Error::Invalid("symbol has no x-derivatives".into()))
    }

    pub fn grad_xi(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<[C64; 3]> {
        self.grad_xi.as_ref().map(|g| g(t, x, xi)).ok_or_else(|| Error::Invalid("symbol has no ξ-derivatives".into()))
    }

    /// Entry (r, c) of a matrix symbol as a scalar symbol.
    pub fn entry(&self, r: usize, c: usize) -> Symbol {
        let me = self.clone();
        let mut s = Symbol::scalar(self.dim, self.order, move |t, x, xi| me.eval_matrix(t, x, xi)[(r, c)]);
        s.x_independent = self.x_independent;
        s
    }

    /// Pointwise product with the Leibniz rule for derivatives.
    pub fn product(a: &Symbol, b: &Symbol) -> Symbol {
        let (a1, b1) = (a.clone(), b.clone());
        let mut s = Symbol::scalar(a.dim, a.order + b.order, move |t, x, xi| a1.eval(t, x, xi) * b1.eval(t, x, xi));
        s.x_independent = a.x_independent && b.x_independent;
        if a.has_gradients() && b.has_gradients() {
            let (a2, b2, a3, b3) = (a.clone(), b.clone(), a.clone(), b.clone());
            s = s.with_gradients(
                move |t, x, xi| leibniz(&a2, &b2, t, x, xi, true),
                move |t, x, xi| leibniz(&a3, &b3, t, x, xi, false),
            );
        }
        s
    }
}

fn leibniz(a: &Symbol, b: &Symbol, t: f64, x: &[f64], xi: &[f64], in_x: bool) -> [C64; 3] {
    let (va, vb) = (a.eval(t, x, xi), b.eval(t, x, xi));
    let (ga, gb) = if in_x {
        (a.grad_x(t, x, xi).unwrap(), b.grad_x(t, x, xi).unwrap())
    } else {
        (a.grad_xi(t, x, xi).unwrap(), b.grad_xi(t, x, xi).unwrap())
    };
    let mut g = zero3();
    for k in 0..3 {
        g[k] = ga[k] * vb + va * gb[k];
    }
    g
}

impl Hamiltonian for Symbol {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        self.eval(t, x, xi).re
    }

    fn gradient(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<([f64; 3], [f64; 3])> {
        let gx = self.grad_x(t, x, xi)?;
        let gxi = self.grad_xi(t, x, xi)?;
        Ok((gx.map(|v| v.re), gxi.map(|v| v.re)))
    }
}

/// {a, b} = ∂_ξa·∂_xb − ∂_xa·∂_ξb.
pub fn poisson_bracket(a: &Symbol, b: &Symbol) -> Result<Symbol> {
    if !a.has_gradients() || !b.has_gradients() {
        return Err(Error::Invalid("Poisson bracket needs first derivatives of both symbols".into()));
    }
    let d = a.dim;
    let (a1, b1) = (a.clone(), b.clone());
    let mut s = Symbol::scalar(d, a.order + b.order - 1.0, move |t, x, xi| {
        let (axi, ax) = (a1.grad_xi(t, x, xi).unwrap(), a1.grad_x(t, x, xi).unwrap());
        let (bxi, bx) = (b1.grad_xi(t, x, xi).unwrap(), b1.grad_x(t, x, xi).unwrap());
        (0..d).map(|k| axi[k] * bx[k] - ax[k] * bxi[k]).sum()
    });
    s.x_independent = a.x_independent && b.x_independent;
    Ok(s)
}

/// a∘b truncated after the leading term (order 1) or after ab + (1/i)∂_ξa·∂_xb (order 2).
pub fn compose_leading(a: &Symbol, b: &Symbol, order: usize) -> Result<Symbol> {
    match order {
        1 => Ok(Symbol::product(a, b)),
        2 => {
            if a.grad_xi.is_none() || b.grad_x.is_none() {
                return Err(Error::Invalid("second-order composition needs ∂_ξa and ∂_xb".into()));
            }
            let d = a.dim;
            let (a1, b1) = (a.clone(), b.clone());
            let mut s = Symbol::scalar(d, a.order + b.order, move |t, x, xi| {
                let (axi, bx) = (a1.grad_xi(t, x, xi).unwrap(), b1.grad_x(t, x, xi).unwrap());
                let corr: C64 = (0..d).map(|k| axi[k] * bx[k]).sum();
                a1.eval(t, x, xi) * b1.eval(t, x, xi) - C64::new(0.0, 1.0) * corr
            });
            s.x_independent = a.x_independent && b.x_independent;
            Ok(s)
        }
        _ => Err(Error::Invalid(format!("composition order {order} not supported (1 or 2)"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    KohnNirenberg,
    Weyl,
}

/// Four-component spinor field.
#[derive(Clone, Debug)]
pub struct SpinorField {
    pub comps: [SpectralField; 4],
}

impl SpinorField {
    pub fn zeros(grid: &Grid) -> Self {
        let z = SpectralField::zeros(grid);
        SpinorField { comps: [z.clone(), z.clone(), z.clone(), z] }
    }

    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> [C64; 4] + Sync + Send,
    {
        let d = grid.dim();
        let vals: Vec<[C64; 4]> = exec::map(grid.len(), |i| f(&grid.point(i)[..d]));
        let comp = |c: usize| SpectralField::from_values(grid, vals.iter().map(|v| v[c]).collect()).expect("grid length");
        SpinorField { comps: [comp(0), comp(1), comp(2), comp(3)] }
    }

    pub fn grid(&self) -> &Grid {
        self.comps[0].grid()
    }

    pub fn into_values(self) -> Self {
        let [a, b, c, d] = self.comps;
        SpinorField { comps: [a.into_values(), b.into_values(), c.into_values(), d.into_values()] }
    }

    pub fn into_coeffs(self) -> Self {
        let [a, b, c, d] = self.comps;
        SpinorField { comps: [a.into_coeffs(), b.into_coeffs(), c.into_coeffs(), d.into_coeffs()] }
    }

    pub fn norm_l2(&self) -> f64 {
        self.comps.iter().map(|c| c.norm_l2().powi(2)).sum::<f64>().sqrt()
    }

    pub fn inner(&self, o: &SpinorField) -> C64 {
        (0..4).map(|c| self.comps[c].inner(&o.comps[c])).sum()
    }

    pub fn axpy(&self, a: C64, o: &SpinorField) -> SpinorField {
        SpinorField { comps: std::array::from_fn(|c| self.comps[c].axpy(a, &o.comps[c])) }
    }

    pub fn sub(&self, o: &SpinorField) -> SpinorField {
        self.axpy(C64::new(-1.0, 0.0), o)
    }

    pub fn add(&self, o: &SpinorField) -> SpinorField {
        self.axpy(C64::new(1.0, 0.0), o)
    }

    pub fn scale(self, s: C64) -> SpinorField {
        let [a, b, c, d] = self.comps;
        SpinorField { comps: [a.scale(s), b.scale(s), c.scale(s), d.scale(s)] }
    }

    pub fn map<F: Fn(SpectralField) -> SpectralField>(self, f: F) -> SpinorField {
        let [a, b, c, d] = self.comps;
        SpinorField { comps: [f(a), f(b), f(c), f(d)] }
    }

    /// Pointwise 4×4 matrix field applied in physical space.
    pub fn apply_pointwise(&self, mats: &[M4]) -> SpinorField {
        let vals: Vec<Vec<C64>> = self.comps.iter().map(|c| c.values()).collect();
        let n = vals[0].len();
        let out: Vec<[C64; 4]> = exec::map(n, |i| {
            let m = &mats[i];
            std::array::from_fn(|r| (0..4).map(|c| m[(r, c)] * vals[c][i]).sum())
        });
        let g = self.grid();
        SpinorField { comps: std::array::from_fn(|c| SpectralField::from_values(g, out.iter().map(|v| v[c]).collect()).unwrap()) }
    }

    /// Per-frequency 4×4 multiplier applied to the coefficients.
    pub fn apply_multiplier(&self, mats: &[M4]) -> SpinorField {
        let co: Vec<Vec<C64>> = self.comps.iter().map(|c| c.coeffs()).collect();
        let n = co[0].len();
        let out: Vec<[C64; 4]> = exec::map(n, |i| {
            let m = &mats[i];
            std::array::from_fn(|r| (0..4).map(|c| m[(r, c)] * co[c][i]).sum())
        });
        let g = self.grid();
        SpinorField { comps: std::array::from_fn(|c| SpectralField::from_coeffs(g, out.iter().map(|v| v[c]).collect()).unwrap()) }
    }
}

/// Upper bound on symbol evaluations for one dense application.
pub const WORK_BUDGET: usize = 1 << 28;

/// Per-point fields of the curved projector: Yψ = Σ_j A_j ∂_jψ + Cψ.
#[derive(Clone, Debug)]
struct CurvedFields {
    a: Vec<Vec<M4>>,
    c: Vec<M4>,
}

#[derive(Clone, Debug)]
enum OpKind {
    Symbolic { symbol: Symbol, flavor: Flavor },
    MatrixMultiplier(Arc<Vec<M4>>),
    Curved { sign: f64, mass: f64, fields: Arc<CurvedFields> },
    /// Σ_m ½(f_m g_m(D) + g_m(D) f_m) when symmetric, Σ_m f_m g_m(D) otherwise.
    Separable { terms: Vec<(Vec<f64>, Vec<f64>)>, symmetric: bool },
}

#[derive(Clone, Debug)]
pub struct QuantizedOperator {
    grid: Grid,
    /// Time at which the symbol is frozen.
    pub t: f64,
    kind: OpKind,
}

fn work_check(grid: &Grid, flavor: Flavor) -> Result<()> {
    let n = grid.len();
    let work = match flavor {
        Flavor::KohnNirenberg => n.saturating_mul(n),
        Flavor::Weyl => n.saturating_mul(n).saturating_mul(1 << grid.dim()),
    };
    if work > WORK_BUDGET {
        return Err(Error::Budget(format!(
            "{flavor:?} quantization on d={} n={} needs {work} symbol evaluations per application (budget {WORK_BUDGET})",
            grid.dim(),
            grid.n()
        )));
    }
    Ok(())
}

pub fn quantize(sym: &Symbol, flavor: Flavor, grid: &Grid, t: f64) -> Result<QuantizedOperator> {
    if sym.dim != grid.dim() {
        return Err(Error::GridMismatch);
    }
    if !sym.x_independent {
        work_check(grid, flavor)?;
    }
    Ok(QuantizedOperator { grid: grid.clone(), t, kind: OpKind::Symbolic { symbol: sym.clone(), flavor } })
}

/// Quantize through the dense kernel even when the symbol is x-independent.
pub fn quantize_dense(sym: &Symbol, flavor: Flavor, grid: &Grid, t: f64) -> Result<QuantizedOperator> {
    work_check(grid, flavor)?;
    let mut s = sym.clone();
    s.x_independent = false;
    quantize(&s, flavor, grid, t)
}

/// Σ_m ½(f_m(x) g_m(D) + g_m(D) f_m(x)) or the left-quantized Σ_m f_m(x) g_m(D).
pub fn separable(grid: &Grid, terms: Vec<(Vec<f64>, Vec<f64>)>, symmetric: bool) -> Result<QuantizedOperator> {
    if terms.iter().any(|(f, g)| f.len() != grid.len() || g.len() != grid.len()) {
        return Err(Error::GridMismatch);
    }
    Ok(QuantizedOperator { grid: grid.clone(), t: 0.0, kind: OpKind::Separable { terms, symmetric } })
}

fn dirac_alpha_beta() -> ([M4; 3], M4) {
    let g = spin::flat_gammas();
    ([g[0] * g[1], g[0] * g[2], g[0] * g[3]], g[0])
}

/// Π±(ξ) = ½(I ± (ξ_jγ⁰γ^j + Mγ⁰)/⟨ξ⟩_M).
pub fn flat_projector_matrix(xi: &[f64], mass: f64, sign: f64) -> M4 {
    let (alpha, beta) = dirac_alpha_beta();
    let w = (mass * mass + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut h = beta * C64::new(mass, 0.0);
    for (j, v) in xi.iter().enumerate() {
        h += alpha[j] * C64::new(*v, 0.0);
    }
    (M4::identity() + h * C64::new(sign / w, 0.0)) * C64::new(0.5, 0.0)
}

pub fn flat_projector(mass: f64, sign: f64, grid: &Grid) -> Result<QuantizedOperator> {
    if !(mass > 0.0) {
        return Err(Error::NotPositive(vec![mass]));
    }
    let d = grid.dim();
    let mats = exec::map(grid.len(), |i| flat_projector_matrix(&grid.freq(i)[..d], mass, sign.signum()));
    Ok(QuantizedOperator { grid: grid.clone(), t: 0.0, kind: OpKind::MatrixMultiplier(Arc::new(mats)) })
}

/// Π± = ½(I ± ⟨D⟩_M⁻¹(−i(γ⁰γ^j𝐃_j + Γ₀) + γ⁰M)) with the spin frame of `spec` frozen at time t.
pub fn curved_projector(spec: &MetricSpec, mass: f64, sign: f64, grid: &Grid, t: f64) -> Result<QuantizedOperator> {
    if !(mass > 0.0) {
        return Err(Error::NotPositive(vec![mass]));
    }
    if spec.dim != grid.dim() {
        return Err(Error::GridMismatch);
    }
    let fields = curved_fields(spec, mass, grid, t)?;
    Ok(QuantizedOperator { grid: grid.clone(), t, kind: OpKind::Curved { sign: sign.signum(), mass, fields: Arc::new(fields) } })
}

fn curved_fields(spec: &MetricSpec, mass: f64, grid: &Grid, t: f64) -> Result<CurvedFields> {
    let d = grid.dim();
    let flat = spin::flat_gammas();
    let i = C64::new(0.0, 1.0);
    let per: Vec<Result<(Vec<M4>, M4)>> = exec::map(grid.len(), |k| {
        let x = grid.point(k);
        let frame = spin::vierbein(spec, t, &x[..d])?;
        let gam = spin::gamma_matrices(&frame);
        let conn = if spec.is_flat() {
            [M4::zeros(); 4]
        } else {
            let der = spin::frame_derivatives(spec, &frame, t, &x[..d])?;
            spin::connection_from(&frame, &der)
        };
        let g0 = flat[0];
        let mut c = g0 * C64::new(mass, 0.0) - conn[0] * i;
        let mut a = Vec::with_capacity(d);
        for j in 0..d {
            let g0gj = g0 * gam[j + 1];
            a.push(-g0gj * i);
            c += g0gj * conn[j + 1] * i;
        }
        Ok((a, c))
    });
    let mut fa = vec![Vec::with_capacity(grid.len()); d];
    let mut fc = Vec::with_capacity(grid.len());
    for r in per {
        let (a, c) = r?;
        for j in 0..d {
            fa[j].push(a[j]);
        }
        fc.push(c);
    }
    Ok(CurvedFields { a: fa, c: fc })
}

/// ∂_a u computed spectrally.
pub fn spectral_derivative(u: &SpectralField, axis: usize) -> SpectralField {
    u.clone().multiply_spectrum(move |xi| C64::new(0.0, xi[axis]))
}

/// Per-axis phase tables e^{i x_i ξ_k}.
fn phase_table(grid: &Grid) -> Vec<C64> {
    let n = grid.n();
    let (xs, ks) = (grid.x_axis(), grid.xi_axis());
    let mut t = Vec::with_capacity(n * n);
    for x in xs {
        for k in ks {
            t.push(C64::from_polar(1.0, x * k));
        }
    }
    t
}

impl QuantizedOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_matrix(&self) -> bool {
        match &self.kind {
            OpKind::Symbolic { symbol, .. } => symbol.is_matrix(),
            OpKind::MatrixMultiplier(_) | OpKind::Curved { .. } => true,
            OpKind::Separable { .. } => false,
        }
    }

    /// Apply a scalar operator.
    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        match &self.kind {
            OpKind::Symbolic { symbol, flavor } if !symbol.is_matrix() => {
                if symbol.x_independent {
                    let t = self.t;
                    let s = symbol.clone();
                    let z = [0.0; 3];
                    return Ok(u.clone().multiply_spectrum(move |xi| s.eval(t, &z[..xi.len()], xi)));
                }
                match flavor {
                    Flavor::KohnNirenberg => Ok(self.kn_apply(symbol, u, false)),
                    Flavor::Weyl => Ok(self.weyl_apply(symbol, u)),
                }
            }
            OpKind::Separable { terms, symmetric } => Ok(self.separable_apply(terms, *symmetric, u)),
            _ => Err(Error::Invalid("matrix operator applied to a scalar field".into())),
        }
    }

    /// Apply the formal L² adjoint of a scalar operator.
    pub fn apply_adjoint(&self, u: &SpectralField) -> Result<SpectralField> {
        match &self.kind {
            OpKind::Symbolic { symbol, flavor } if !symbol.is_matrix() => {
                if symbol.x_independent {
                    let t = self.t;
                    let s = symbol.clone();
                    let z = [0.0; 3];
                    return Ok(u.clone().multiply_spectrum(move |xi| s.eval(t, &z[..xi.len()], xi).conj()));
                }
                match flavor {
                    Flavor::KohnNirenberg => Ok(self.kn_apply(symbol, u, true)),
                    Flavor::Weyl => {
                        let s = symbol.clone();
                        let conj = Symbol::scalar(s.dim, s.order, move |t, x, xi| s.eval(t, x, xi).conj());
                        Ok(self.weyl_apply(&conj, u))
                    }
                }
            }
            OpKind::Separable { terms, symmetric } if *symmetric => Ok(self.separable_apply(terms, true, u)),
            OpKind::Separable { terms, .. } => {
                // (f g(D))* = g(D) f for real f, g
                let mut acc = SpectralField::zeros(&self.grid).into_coeffs();
                for (f, g) in terms {
                    let fu = u.clone().into_values();
                    let fu = SpectralField::from_values(&self.grid, fu.data().iter().zip(f).map(|(v, w)| v * w).collect())?;
                    let mut c = fu.into_coeffs();
                    c.data_mut().iter_mut().zip(g).for_each(|(v, w)| *v *= w);
                    acc = acc.add(&c);
                }
                Ok(acc)
            }
            _ => Err(Error::Invalid("adjoint only available for scalar operators".into())),
        }
    }

    /// Apply to a spinor; scalar operators act componentwise.
    pub fn apply_spinor(&self, u: &SpinorField) -> Result<SpinorField> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        match &self.kind {
            OpKind::MatrixMultiplier(mats) => Ok(u.apply_multiplier(mats)),
            OpKind::Curved { sign, mass, fields } => {
                let y = self.curved_y(fields, u);
                let m2 = mass * mass;
                let inv = y.map(|c| c.multiply_spectrum(move |xi| C64::new(1.0 / (m2 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt(), 0.0)));
                Ok(u.clone().into_coeffs().axpy(C64::new(*sign, 0.0), &inv).scale(C64::new(0.5, 0.0)))
            }
            OpKind::Symbolic { symbol, .. } if symbol.is_matrix() => {
                let mut out = SpinorField::zeros(&self.grid);
                for r in 0..4 {
                    for c in 0..4 {
                        let entry = symbol.entry(r, c);
                        let op = QuantizedOperator { grid: self.grid.clone(), t: self.t, kind: OpKind::Symbolic { symbol: entry, flavor: self.flavor() } };
                        let v = op.apply(&u.comps[c])?;
                        out.comps[r] = out.comps[r].add(&v);
                    }
                }
                Ok(out)
            }
            _ => {
                let mut comps = Vec::with_capacity(4);
                for c in &u.comps {
                    comps.push(self.apply(c)?);
                }
                Ok(SpinorField { comps: comps.try_into().expect("four components") })
            }
        }
    }

    fn flavor(&self) -> Flavor {
        match &self.kind {
            OpKind::Symbolic { flavor, .. } => *flavor,
            _ => Flavor::KohnNirenberg,
        }
    }

    /// Yψ = Σ_j A_j ∂_jψ + Cψ for the curved projector.
    fn curved_y(&self, fields: &CurvedFields, u: &SpinorField) -> SpinorField {
        let mut y = u.apply_pointwise(&fields.c);
        for (j, a) in fields.a.iter().enumerate() {
            let du = u.clone().map(|c| spectral_derivative(&c, j));
            y = y.add(&du.apply_pointwise(a));
        }
        y
    }

    /// ⟨D⟩_M(Π₊ − Π₋)ψ = Yψ, available for projector operators.
    pub fn projector_generator(&self, u: &SpinorField) -> Result<SpinorField> {
        match &self.kind {
            OpKind::Curved { fields, .. } => Ok(self.curved_y(fields, u)),
            OpKind::MatrixMultiplier(_) => Err(Error::Invalid("use the flat symbol directly".into())),
            _ => Err(Error::Invalid("not a projector".into())),
        }
    }

    fn separable_apply(&self, terms: &[(Vec<f64>, Vec<f64>)], symmetric: bool, u: &SpectralField) -> SpectralField {
        let g = &self.grid;
        let uc = u.clone().into_coeffs();
        let uv = u.clone().into_values();
        let mut acc = vec![C64::new(0.0, 0.0); g.len()];
        for (f, m) in terms {
            let mut gu = uc.clone();
            gu.data_mut().iter_mut().zip(m).for_each(|(v, w)| *v *= w);
            let gu = gu.into_values();
            let w = if symmetric { 0.5 } else { 1.0 };
            for (i, v) in gu.data().iter().enumerate() {
                acc[i] += v * f[i] * w;
            }
            if symmetric {
                let fu: Vec<C64> = uv.data().iter().zip(f).map(|(v, w)| v * w).collect();
                let mut c = SpectralField::from_values(g, fu).unwrap().into_coeffs();
                c.data_mut().iter_mut().zip(m).for_each(|(v, w)| *v *= w);
                let c = c.into_values();
                for (i, v) in c.data().iter().enumerate() {
                    acc[i] += v * 0.5;
                }
            }
        }
        SpectralField::from_values(g, acc).unwrap()
    }

    /// Kohn-Nirenberg: a(x,D)u(x_i) = (dξ/√2π)^d Σ_k a(x_i,ξ_k)û_k e^{ix_i·ξ_k}.
    /// The adjoint has coefficients (dx/√2π)^d Σ_i conj(a(x_i,ξ_k)) v_i e^{-ix_i·ξ_k}.
    fn kn_apply(&self, sym: &Symbol, u: &SpectralField, adjoint: bool) -> SpectralField {
        let g = &self.grid;
        let (d, n, t) = (g.dim(), g.n(), self.t);
        let phase = phase_table(g);
        let ph = |i: &[usize; 3], k: &[usize; 3]| -> C64 {
            let mut p = C64::new(1.0, 0.0);
            for a in 0..d {
                p *= phase[i[a] * n + k[a]];
            }
            p
        };
        if !adjoint {
            let uc = u.coeffs();
            let c = (g.dxi() / (2.0 * PI).sqrt()).powi(d as i32);
            let out = exec::map(g.len(), |i| {
                let ii = g.unravel(i);
                let x = g.point(i);
                let mut acc = C64::new(0.0, 0.0);
                for (k, v) in uc.iter().enumerate() {
                    if v.norm_sqr() == 0.0 {
                        continue;
                    }
                    let kk = g.unravel(k);
                    acc += sym.eval(t, &x[..d], &g.freq(k)[..d]) * v * ph(&ii, &kk);
                }
                acc * c
            });
            SpectralField::from_values(g, out).unwrap()
        } else {
            let uv = u.values();
            let c = (g.dx() / (2.0 * PI).sqrt()).powi(d as i32);
            let out = exec::map(g.len(), |k| {
                let kk = g.unravel(k);
                let xi = g.freq(k);
                let mut acc = C64::new(0.0, 0.0);
                for (i, v) in uv.iter().enumerate() {
                    if v.norm_sqr() == 0.0 {
                        continue;
                    }
                    let ii = g.unravel(i);
                    acc += sym.eval(t, &g.point(i)[..d], &xi[..d]).conj() * v * ph(&ii, &kk).conj();
                }
                acc * c
            });
            SpectralField::from_coeffs(g, out).unwrap()
        }
    }

    /// Weyl: a^w u(x_i) = Σ_j K(m_ij, r_ij) u_j dx^d with K(m, r) = (2π)^{-d}Σ_k a(m,ξ_k)e^{iξ_k·r}dξ^d,
    /// r the periodic difference x_i − y_j and m = y_j + r/2 on the half grid.
    /// At |r_a| = L both midpoints are used with weight ½, which keeps real symbols self-adjoint.
    fn weyl_apply(&self, sym: &Symbol, u: &SpectralField) -> SpectralField {
        let g = &self.grid;
        let (d, n, t) = (g.dim(), g.n(), self.t);
        let uv = u.values();
        let two_n = 2 * n;
        let n_mid = two_n.pow(d as u32);
        let scale = (g.dxi() / (2.0 * PI)).powi(d as i32) * g.cell_volume();
        let half = (n / 2) as i64;
        let blocks = 64.min(n_mid);
        let per_block = n_mid.div_ceil(blocks);
        let partials: Vec<Vec<C64>> = exec::map(blocks, |b| {
            let mut out = vec![C64::new(0.0, 0.0); g.len()];
            let mut table = vec![C64::new(0.0, 0.0); g.len()];
            for mu in b * per_block..((b + 1) * per_block).min(n_mid) {
                let mut midx = [0usize; 3];
                let mut rem = mu;
                for a in (0..d).rev() {
                    midx[a] = rem % two_n;
                    rem /= two_n;
                }
                let mut m = [0.0; 3];
                for a in 0..d {
                    m[a] = -g.half_width() + midx[a] as f64 * g.dx() / 2.0;
                }
                for (k, v) in table.iter_mut().enumerate() {
                    *v = sym.eval(t, &m[..d], &g.freq(k)[..d]);
                }
                // Σ_k F_k e^{2πi k·q/n}
                g.dft_raw(&mut table, true);
                // per-axis admissible offsets q ≡ μ (mod 2), with endpoint weights
                let mut axes: Vec<Vec<(i64, f64)>> = Vec::with_capacity(d);
                for a in 0..d {
                    let par = (midx[a] % 2) as i64;
                    let mut v = Vec::new();
                    let mut q = -half;
                    while q <= half {
                        if q.rem_euclid(2) == par {
                            v.push((q, if q.abs() == half { 0.5 } else { 1.0 }));
                        }
                        q += 1;
                    }
                    axes.push(v);
                }
                let counts: Vec<usize> = axes.iter().map(|v| v.len()).collect();
                let total: usize = counts.iter().product();
                for c in 0..total {
                    let mut rem = c;
                    let mut w = 1.0;
                    let mut ii = [0usize; 3];
                    let mut jj = [0usize; 3];
                    let mut qi = [0usize; 3];
                    for a in (0..d).rev() {
                        let (q, wq) = axes[a][rem % counts[a]];
                        rem /= counts[a];
                        w *= wq;
                        let j = ((midx[a] as i64 - q) / 2).rem_euclid(n as i64) as usize;
                        jj[a] = j;
                        ii[a] = (j as i64 + q).rem_euclid(n as i64) as usize;
                        qi[a] = q.rem_euclid(n as i64) as usize;
                    }
                    let i = g.ravel(&ii[..d]);
                    let j = g.ravel(&jj[..d]);
                    let k = g.ravel(&qi[..d]);
                    out[i] += table[k] * uv[j] * w;
                }
            }
            out
        });
        let mut out = vec![C64::new(0.0, 0.0); g.len()];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        SpectralField::from_values(g, out).unwrap()
    }
}

/// ‖A‖ by power iteration on A*A from a deterministic start.
pub fn operator_norm(op: &QuantizedOperator, start: &SpectralField, iters: usize, tol: f64) -> Result<f64> {
    let mut v = start.clone();
    let n0 = v.norm_l2();
    if n0 == 0.0 {
        return Err(Error::Invalid("power iteration needs a nonzero start".into()));
    }
    v = v.scale(C64::new(1.0 / n0, 0.0));
    let mut est = 0.0;
    for _ in 0..iters {
        let w = op.apply_adjoint(&op.apply(&v)?)?;
        let nw = w.norm_l2();
        if nw == 0.0 {
            return Ok(0.0);
        }
        let new = nw.sqrt();
        v = w.scale(C64::new(1.0 / nw, 0.0));
        if (new - est).abs() <= tol * new {
            return Ok(new);
        }
        est = new;
    }
    Ok(est)
}

/// ¼⟨D⟩_M⁻²(g^{jk} − δ^{jk})D_jD_k, the leading part of Π±Π± − Π±.
pub fn e0_proxy(spec: &MetricSpec, mass: f64, t: f64, u: &SpinorField) -> SpinorField {
    let g = u.grid().clone();
    let d = g.dim();
    let h: Vec<[[f64; 3]; 3]> = exec::map(g.len(), |i| spec.perturbation(t, &g.point(i)[..d]));
    let m2 = mass * mass;
    u.clone().map(|c| {
        let mut acc = SpectralField::zeros(&g);
        for j in 0..d {
            for k in 0..d {
                // D_jD_k = −∂_j∂_k
                let dd = c.clone().multiply_spectrum(move |xi| C64::new(xi[j] * xi[k], 0.0)).into_values();
                let vals: Vec<C64> = dd.data().iter().enumerate().map(|(i, v)| v * h[i][j][k]).collect();
                acc = acc.add(&SpectralField::from_values(&g, vals).unwrap());
            }
        }
        acc.multiply_spectrum(move |xi| C64::new(0.25 / (m2 + xi.iter().map(|v| v * v).sum::<f64>()), 0.0))
    })
}

#[derive(Clone, Debug)]
pub struct DefectRow {
    pub k: i32,
    pub defect: f64,
    /// Defect after removing the 𝓔⁰ proxy.
    pub reduced: f64,
    /// Cross-defect ‖(Π₊Π₋ + 𝓔⁰-proxy)u‖/‖u‖.
    pub cross: f64,
    pub slope_so_far: f64,
}

/// ‖(Π±Π± − Π± − 𝓔⁰-proxy)u_k‖/‖u_k‖ over test spinors at |ξ| ≈ 2^k.
pub fn projector_defect(spec: &MetricSpec, mass: f64, sign: f64, grid: &Grid, t: f64, tests: &[(i32, SpinorField)]) -> Result<Vec<DefectRow>> {
    let p = curved_projector(spec, mass, sign, grid, t)?;
    let q = curved_projector(spec, mass, -sign, grid, t)?;
    let mut rows: Vec<DefectRow> = Vec::new();
    for (k, u) in tests {
        let nu = u.norm_l2();
        let pu = p.apply_spinor(u)?;
        let ppu = p.apply_spinor(&pu)?;
        let e0 = e0_proxy(spec, mass, t, u);
        let raw = ppu.sub(&pu);
        let reduced = raw.sub(&e0).norm_l2() / nu;
        let cross = q.apply_spinor(&pu)?.add(&e0).norm_l2() / nu;
        let mut row = DefectRow { k: *k, defect: raw.norm_l2() / nu, reduced, cross, slope_so_far: f64::NAN };
        if !rows.is_empty() {
            let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, r.reduced.log2())).collect();
            pts.push((*k as f64, reduced.log2()));
            row.slope_so_far = crate::measure::linear_fit(&pts).0;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn defect_csv(rows: &[DefectRow]) -> String {
    let mut s = String::from("k,defect,slope_so_far\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.k, r.reduced, r.slope_so_far));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Repr};

    fn packet(g: &Grid, center: f64, width: f64, k0: f64) -> SpectralField {
        SpectralField::from_fn(g, move |x| {
            let r2: f64 = x.iter().map(|v| (v - center).powi(2)).sum();
            C64::from_polar((-r2 / (width * width)).exp(), k0 * x[0])
        })
    }

    #[test]
    fn japanese_multiplier_on_plane_wave() {
        let g = make_grid(2, 16, 4.0).unwrap();
        let u = SpectralField::plane_wave(&g, &[2, -1]);
        let xi = [2.0 * g.dxi(), -g.dxi()];
        let f = (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        for flavor in [Flavor::KohnNirenberg, Flavor::Weyl] {
            for op in [quantize(&Symbol::japanese(2, 1.0), flavor, &g, 0.0).unwrap(), quantize_dense(&Symbol::japanese(2, 1.0), flavor, &g, 0.0).unwrap()] {
                let v = op.apply(&u).unwrap();
                assert!(v.sub(&u.clone().scale(C64::new(f, 0.0))).norm_l2() < 1e-10 * u.norm_l2());
            }
        }
    }

    #[test]
    fn kn_coordinate_is_multiplication() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let u = packet(&g, 0.5, 1.0, 1.0);
        let v = quantize(&Symbol::coordinate(1, 0), Flavor::KohnNirenberg, &g, 0.0).unwrap().apply(&u).unwrap();
        let w = u.clone().multiply_space(|x| C64::new(x[0], 0.0));
        assert!(v.sub(&w).norm_l2() < 1e-10);
    }

    #[test]
    fn weyl_x_xi_is_self_adjoint_and_symmetrized() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let a = Symbol::product(&Symbol::coordinate(1, 0), &Symbol::frequency(1, 0));
        let op = quantize(&a, Flavor::Weyl, &g, 0.0).unwrap();
        let u = packet(&g, 0.7, 1.0, 2.0);
        let v = packet(&g, -0.4, 1.3, -1.0);
        let lhs = op.apply(&u).unwrap().inner(&v);
        let rhs = u.inner(&op.apply(&v).unwrap());
        assert!((lhs - rhs).norm() < 1e-10);
        // (xD + Dx)/2 with D = −i∂
        let du = spectral_derivative(&u, 0).scale(C64::new(0.0, -1.0));
        let xdu = du.multiply_space(|x| C64::new(x[0], 0.0));
        let xu = u.clone().multiply_space(|x| C64::new(x[0], 0.0));
        let dxu = spectral_derivative(&xu, 0).scale(C64::new(0.0, -1.0));
        let expect = xdu.add(&dxu).scale(C64::new(0.5, 0.0));
        // xξ is not periodic; compare where the midpoint never wraps
        let diff = op.apply(&u).unwrap().sub(&expect).into_values();
        let worst = (0..g.len()).filter(|&i| g.point(i)[0].abs() < 3.0).map(|i| diff.data()[i].norm()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn flat_projector_algebra() {
        let mut s = 0x2545F4914F6CDD1Du64;
        let mut rnd = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 8.0 - 4.0
        };
        let (alpha, beta) = dirac_alpha_beta();
        for _ in 0..50 {
            let xi = [rnd(), rnd(), rnd()];
            let p = flat_projector_matrix(&xi, 1.0, 1.0);
            let m = flat_projector_matrix(&xi, 1.0, -1.0);
            assert!((p * p - p).norm() < 1e-12 && (m * m - m).norm() < 1e-12);
            assert!((p * m).norm() < 1e-12 && (p + m - M4::identity()).norm() < 1e-12);
            let w = (1.0 + xi.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let h = alpha[0] * C64::new(xi[0], 0.0) + alpha[1] * C64::new(xi[1], 0.0) + alpha[2] * C64::new(xi[2], 0.0) + beta;
            assert!(((p - m) * C64::new(w, 0.0) - h).norm() < 1e-12);
            assert!((p.trace() - C64::new(2.0, 0.0)).norm() < 1e-12);
        }
        let p0 = flat_projector_matrix(&[0.0; 3], 1.0, 1.0);
        assert!((p0 - (M4::identity() + beta) * C64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn curved_flat_matches_multiplier() {
        let g = make_grid(3, 8, 4.0).unwrap();
        let u = SpinorField::from_fn(&g, |x| {
            let e = (-x.iter().map(|v| v * v).sum::<f64>()).exp();
            [C64::new(e, 0.0), C64::new(0.0, e * x[0]), C64::new(e * x[1], 0.0), C64::new(0.3 * e, -0.2 * e)]
        });
        let a = curved_projector(&MetricSpec::flat(3), 1.0, 1.0, &g, 0.0).unwrap().apply_spinor(&u).unwrap();
        let b = flat_projector(1.0, 1.0, &g).unwrap().apply_spinor(&u).unwrap();
        assert!(a.sub(&b).norm_l2() < 1e-12);
    }

    #[test]
    fn bracket_examples() {
        let xi2 = Symbol::product(&Symbol::frequency(1, 0), &Symbol::frequency(1, 0));
        let x = Symbol::coordinate(1, 0);
        let b = poisson_bracket(&xi2, &x).unwrap();
        assert!((b.eval(0.0, &[0.3], &[1.7]) - C64::new(3.4, 0.0)).norm() < 1e-14);
        let ba = poisson_bracket(&x, &xi2).unwrap();
        assert_eq!(ba.eval(0.0, &[0.3], &[1.7]), -b.eval(0.0, &[0.3], &[1.7]));
        let c = compose_leading(&Symbol::frequency(1, 0), &x, 2).unwrap();
        assert!((c.eval(0.0, &[0.5], &[2.0]) - C64::new(1.0, -1.0)).norm() < 1e-15);
        assert!(poisson_bracket(&Symbol::scalar(1, 0.0, |_, _, _| C64::new(1.0, 0.0)), &x).is_err());
    }

    #[test]
    fn work_budget_reported() {
        let g = make_grid(3, 64, 8.0).unwrap();
        let e = quantize(&Symbol::coordinate(3, 0), Flavor::Weyl, &g, 0.0).unwrap_err();
        assert!(matches!(e, Error::Budget(_)));
    }

    #[test]
    fn repr_is_preserved() {
        let g = make_grid(1, 16, 4.0).unwrap();
        let u = packet(&g, 0.0, 1.0, 0.0).into_coeffs();
        let v = quantize(&Symbol::japanese(1, 1.0), Flavor::Weyl, &g, 0.0).unwrap().apply(&u).unwrap();
        assert_eq!(v.repr(), Repr::Coeffs);
    }
}
