use crate::error::{Error, Result};
use crate::exec;
use crate::profile;
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Periodic box [-L, L)^d sampled with n points per axis.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    half_width: f64,
    xs: Arc<Vec<f64>>,
    ks: Arc<Vec<f64>>,
    plans: Arc<Plans>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid(d={}, n={}, L={})", self.dim, self.n, self.half_width)
    }
}

impl PartialEq for Grid {
    fn eq(&self, o: &Self) -> bool {
        self.dim == o.dim && self.n == o.n && self.half_width == o.half_width
    }
}

pub fn make_grid(d: usize, n: usize, l: f64) -> Result<Grid> {
    Grid::new(d, n, l)
}

impl Grid {
    pub fn new(d: usize, n: usize, l: f64) -> Result<Grid> {
        if !(1..=3).contains(&d) {
            return Err(Error::Grid(format!("dimension {d} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Grid(format!("n={n} is not a power of two >= 8")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Grid(format!("half width {l} must be positive")));
        }
        let xs = (0..n).map(|m| -l + 2.0 * l * m as f64 / n as f64).collect();
        let ks = (0..n)
            .map(|i| {
                let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
                PI * k / l
            })
            .collect();
        let mut planner = FftPlanner::new();
        let plans = Plans { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) };
        Ok(Grid { dim: d, n, half_width: l, xs: Arc::new(xs), ks: Arc::new(ks), plans: Arc::new(plans) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }
    pub fn dxi(&self) -> f64 {
        PI / self.half_width
    }
    pub fn nyquist(&self) -> f64 {
        self.n as f64 * PI / (2.0 * self.half_width)
    }
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }
    pub fn dual_cell_volume(&self) -> f64 {
        self.dxi().powi(self.dim as i32)
    }
    /// Sample coordinates along one axis.
    pub fn x_axis(&self) -> &[f64] {
        &self.xs
    }
    /// Frequencies along one axis in FFT storage order.
    pub fn xi_axis(&self) -> &[f64] {
        &self.ks
    }
    /// Signed integer frequency index for a storage index.
    pub fn k_index(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    pub fn unravel(&self, mut i: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for a in (0..self.dim).rev() {
            out[a] = i % self.n;
            i /= self.n;
        }
        out
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.dim).fold(0, |acc, &m| acc * self.n + m)
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        let m = self.unravel(i);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.xs[m[a]];
        }
        p
    }

    pub fn freq(&self, i: usize) -> [f64; 3] {
        let m = self.unravel(i);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.ks[m[a]];
        }
        p
    }

    /// Index of the grid point nearest to x (periodically wrapped).
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            let m = ((x[a] + self.half_width) / self.dx()).round() as i64;
            idx[a] = m.rem_euclid(self.n as i64) as usize;
        }
        self.ravel(&idx)
    }

    /// Storage index of the lattice frequency with integer coordinates k.
    pub fn freq_index(&self, k: &[i64]) -> usize {
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            idx[a] = k[a].rem_euclid(self.n as i64) as usize;
        }
        self.ravel(&idx)
    }

    fn fft_nd(&self, data: &mut [C64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.plans.inv } else { &self.plans.fwd };
        let lines_per_chunk = (4096 / n).max(1);
        exec::for_chunks(data, n * lines_per_chunk, |_, c| plan.process(c));
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = n * stride;
            let nblocks = data.len() / block;
            let mut lines = vec![C64::new(0.0, 0.0); data.len()];
            for b in 0..nblocks {
                for i in 0..n {
                    let src = &data[b * block + i * stride..b * block + (i + 1) * stride];
                    for (r, v) in src.iter().enumerate() {
                        lines[(b * stride + r) * n + i] = *v;
                    }
                }
            }
            exec::for_chunks(&mut lines, n * lines_per_chunk, |_, c| plan.process(c));
            for b in 0..nblocks {
                for i in 0..n {
                    let dst = &mut data[b * block + i * stride..b * block + (i + 1) * stride];
                    for (r, v) in dst.iter_mut().enumerate() {
                        *v = lines[(b * stride + r) * n + i];
                    }
                }
            }
        }
    }

    /// Unnormalized d-dimensional DFT over the index lattice, in place.
    pub fn dft_raw(&self, data: &mut [C64], inverse: bool) {
        self.fft_nd(data, inverse);
    }

    fn parity(&self, i: usize) -> f64 {
        let s: usize = self.unravel(i).iter().take(self.dim).sum();
        if s % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Samples to continuum-normalized Fourier coefficients, in place.
    pub fn forward(&self, data: &mut [C64]) {
        self.fft_nd(data, false);
        let c = (self.dx() / (2.0 * PI).sqrt()).powi(self.dim as i32);
        exec::for_chunks(data, 4096, |b, ch| {
            for (j, v) in ch.iter_mut().enumerate() {
                *v *= c * self.parity(b * 4096 + j);
            }
        });
    }

    /// Fourier coefficients back to samples, in place.
    pub fn inverse(&self, data: &mut [C64]) {
        exec::for_chunks(data, 4096, |b, ch| {
            for (j, v) in ch.iter_mut().enumerate() {
                *v *= self.parity(b * 4096 + j);
            }
        });
        self.fft_nd(data, true);
        let c = (self.dxi() / (2.0 * PI).sqrt()).powi(self.dim as i32);
        exec::for_chunks(data, 4096, |_, ch| ch.iter_mut().for_each(|v| *v *= c));
    }

    /// |ξ| at every storage index.
    pub fn xi_norms(&self) -> Vec<f64> {
        exec::map(self.len(), |i| norm(&self.freq(i)[..self.dim]))
    }

    /// |x| at every grid point.
    pub fn x_norms(&self) -> Vec<f64> {
        exec::map(self.len(), |i| norm(&self.point(i)[..self.dim]))
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repr {
    Values,
    Coeffs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharpness {
    Smooth,
    Sharp,
}

/// Complex field on a grid, held either as samples or as Fourier coefficients.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Grid,
    data: Vec<C64>,
    repr: Repr,
}

impl SpectralField {
    pub fn zeros(grid: &Grid) -> Self {
        SpectralField { grid: grid.clone(), data: vec![C64::new(0.0, 0.0); grid.len()], repr: Repr::Values }
    }

    pub fn from_values(grid: &Grid, data: Vec<C64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(SpectralField { grid: grid.clone(), data, repr: Repr::Values })
    }

    pub fn from_coeffs(grid: &Grid, data: Vec<C64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(SpectralField { grid: grid.clone(), data, repr: Repr::Coeffs })
    }

    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> C64 + Sync + Send,
    {
        let d = grid.dim();
        let data = exec::map(grid.len(), |i| f(&grid.point(i)[..d]));
        SpectralField { grid: grid.clone(), data, repr: Repr::Values }
    }

    pub fn from_spectrum<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> C64 + Sync + Send,
    {
        let d = grid.dim();
        let data = exec::map(grid.len(), |i| f(&grid.freq(i)[..d]));
        SpectralField { grid: grid.clone(), data, repr: Repr::Coeffs }
    }

    /// e^{iξ_k·x} for the lattice frequency with integer coordinates k.
    pub fn plane_wave(grid: &Grid, k: &[i64]) -> Self {
        let xi: Vec<f64> = k.iter().map(|&kk| kk as f64 * grid.dxi()).collect();
        Self::from_fn(grid, |x| C64::from_polar(1.0, dot(&xi, x)))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn repr(&self) -> Repr {
        self.repr
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn into_coeffs(mut self) -> Self {
        if self.repr == Repr::Values {
            self.grid.forward(&mut self.data);
            self.repr = Repr::Coeffs;
        }
        self
    }

    pub fn into_values(mut self) -> Self {
        if self.repr == Repr::Coeffs {
            self.grid.inverse(&mut self.data);
            self.repr = Repr::Values;
        }
        self
    }

    pub fn values(&self) -> Vec<C64> {
        self.clone().into_values().data
    }

    pub fn coeffs(&self) -> Vec<C64> {
        self.clone().into_coeffs().data
    }

    fn weight(&self) -> f64 {
        match self.repr {
            Repr::Values => self.grid.cell_volume(),
            Repr::Coeffs => self.grid.dual_cell_volume(),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        (self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.weight()).sqrt()
    }

    /// L² inner product ⟨self, other⟩ (conjugate-linear in the first slot).
    pub fn inner(&self, other: &SpectralField) -> C64 {
        let o = match self.repr {
            Repr::Values => other.values(),
            Repr::Coeffs => other.coeffs(),
        };
        self.data.iter().zip(&o).map(|(a, b)| a.conj() * b).sum::<C64>() * self.weight()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(mut self, c: C64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= c);
        self
    }

    pub fn axpy(&self, a: C64, other: &SpectralField) -> SpectralField {
        let o = match self.repr {
            Repr::Values => other.values(),
            Repr::Coeffs => other.coeffs(),
        };
        let data = self.data.iter().zip(&o).map(|(x, y)| x + a * y).collect();
        SpectralField { grid: self.grid.clone(), data, repr: self.repr }
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        self.axpy(C64::new(-1.0, 0.0), other)
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        self.axpy(C64::new(1.0, 0.0), other)
    }

    /// Applies a Fourier multiplier m(ξ).
    pub fn multiply_spectrum<F>(self, m: F) -> SpectralField
    where
        F: Fn(&[f64]) -> C64 + Sync + Send,
    {
        let mut f = self.into_coeffs();
        let grid = f.grid.clone();
        let d = grid.dim();
        exec::for_chunks(&mut f.data, 4096, |b, ch| {
            for (j, v) in ch.iter_mut().enumerate() {
                *v *= m(&grid.freq(b * 4096 + j)[..d]);
            }
        });
        f
    }

    /// Pointwise multiplication by a function of x.
    pub fn multiply_space<F>(self, m: F) -> SpectralField
    where
        F: Fn(&[f64]) -> C64 + Sync + Send,
    {
        let mut f = self.into_values();
        let grid = f.grid.clone();
        let d = grid.dim();
        exec::for_chunks(&mut f.data, 4096, |b, ch| {
            for (j, v) in ch.iter_mut().enumerate() {
                *v *= m(&grid.point(b * 4096 + j)[..d]);
            }
        });
        f
    }
}

pub fn transform(field: &SpectralField, direction: Direction) -> Result<SpectralField> {
    if !field.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(match direction {
        Direction::Forward => field.clone().into_coeffs(),
        Direction::Inverse => field.clone().into_values(),
    })
}

/// Largest j with 2^{j+1} ≤ Nyquist.
pub fn max_band(grid: &Grid) -> i32 {
    (grid.nyquist().log2() - 1.0).floor() as i32
}

pub fn littlewood_paley(field: &SpectralField, j: i32) -> Result<SpectralField> {
    if j > max_band(field.grid()) {
        return Err(Error::Band(format!(
            "2^{} exceeds Nyquist {:.4}",
            j + 1,
            field.grid().nyquist()
        )));
    }
    if !field.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(field.clone().multiply_spectrum(|xi| C64::new(profile::dyadic_piece(norm(xi), j), 0.0)))
}

/// Low-frequency projection S_{<j}: profile 1 for |ξ| ≤ 2^{j-1}, 0 beyond 2^j.
pub fn littlewood_paley_low(field: &SpectralField, j: i32) -> SpectralField {
    let c = 2f64.powi(j - 1);
    field.clone().multiply_spectrum(|xi| C64::new(profile::dyadic_low(norm(xi) / c), 0.0))
}

pub fn cutoff_multiplier(r: f64, lo: f64, hi: f64, sharpness: Sharpness) -> f64 {
    match sharpness {
        Sharpness::Smooth => profile::band_window(r, lo, hi),
        Sharpness::Sharp => {
            if r >= lo && r <= hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn frequency_cutoff(field: &SpectralField, lo: f64, hi: f64, sharpness: Sharpness) -> Result<SpectralField> {
    if !(lo >= 0.0 && lo < hi) {
        return Err(Error::Invalid(format!("cutoff needs 0 <= lo < hi, got [{lo}, {hi}]")));
    }
    if !field.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(field.clone().multiply_spectrum(|xi| C64::new(cutoff_multiplier(norm(xi), lo, hi, sharpness), 0.0)))
}

/// Field dump in the grid CSV format.
pub fn dump_csv(field: &SpectralField) -> String {
    let g = field.grid();
    let repr = match field.repr() {
        Repr::Values => "values",
        Repr::Coeffs => "coeffs",
    };
    let mut s = format!("# grid d={} n={} L={} repr={}\n", g.dim(), g.n(), g.half_width(), repr);
    for (i, v) in field.data().iter().enumerate() {
        let idx = g.unravel(i);
        for m in idx.iter().take(g.dim()) {
            s.push_str(&format!("{m},"));
        }
        s.push_str(&format!("{:e},{:e}\n", v.re, v.im));
    }
    s
}

pub fn parse_dump(text: &str) -> Result<SpectralField> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty dump".into()))?;
    let rest = header
        .strip_prefix("# grid ")
        .ok_or_else(|| Error::Parse("missing grid header".into()))?;
    let mut d = None;
    let mut n = None;
    let mut l = None;
    let mut repr = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse(format!("bad token {tok}")))?;
        match k {
            "d" => d = v.parse::<usize>().ok(),
            "n" => n = v.parse::<usize>().ok(),
            "L" => l = v.parse::<f64>().ok(),
            "repr" => {
                repr = match v {
                    "values" => Some(Repr::Values),
                    "coeffs" => Some(Repr::Coeffs),
                    _ => None,
                }
            }
            _ => {}
        }
    }
    let (d, n, l, repr) = match (d, n, l, repr) {
        (Some(d), Some(n), Some(l), Some(r)) => (d, n, l, r),
        _ => return Err(Error::Parse("incomplete grid header".into())),
    };
    let grid = Grid::new(d, n, l)?;
    let mut data = vec![C64::new(0.0, 0.0); grid.len()];
    let mut seen = 0;
    for (ln, line) in lines.enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != d + 2 {
            return Err(Error::Parse(format!("line {}: expected {} columns", ln + 2, d + 2)));
        }
        let mut idx = [0usize; 3];
        for a in 0..d {
            idx[a] = cols[a].trim().parse().map_err(|_| Error::Parse(format!("line {}: bad index", ln + 2)))?;
            if idx[a] >= n {
                return Err(Error::Parse(format!("line {}: index out of range", ln + 2)));
            }
        }
        let re: f64 = cols[d].trim().parse().map_err(|_| Error::Parse(format!("line {}: bad value", ln + 2)))?;
        let im: f64 = cols[d + 1].trim().parse().map_err(|_| Error::Parse(format!("line {}: bad value", ln + 2)))?;
        data[grid.ravel(&idx)] = C64::new(re, im);
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::Parse(format!("expected {} rows, found {seen}", grid.len())));
    }
    Ok(SpectralField { grid, data, repr })
}
