//! Uniform 1-D spatial grids, sampled fields, norms, derivatives, and the
//! variational functionals (action, energy) used by every other module.

use crate::error::{Error, Result};
use crate::imex::Trajectory;

/// A uniform grid on `[x_min, x_max]` with `n` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if x_min >= x_max {
            return Err(Error::InvalidGrid(format!(
                "x_min = {x_min} must be < x_max = {x_max}"
            )));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("n = {n} must be >= 3")));
        }
        Ok(Grid { x_min, x_max, n })
    }

    /// Default working grid: `[-30, 30]` with 3001 samples (dx = 0.02).
    /// Wide enough that the 6/x^2 equilibrium tails are ~6.7e-3 at the ends.
    pub fn standard() -> Self {
        Grid { x_min: -30.0, x_max: 30.0, n: 3001 }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + self.dx() * i as f64
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Index of the sample nearest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let i = ((x - self.x_min) / self.dx()).round();
        (i.max(0.0) as usize).min(self.n - 1)
    }

    /// Refinement `n -> 2n - 1` (same endpoints, halved spacing).
    pub fn refined(&self) -> Grid {
        Grid { x_min: self.x_min, x_max: self.x_max, n: 2 * self.n - 1 }
    }

    /// Grid covering `[1.5 x_min, 1.5 x_max]` at the same spacing, for
    /// truncation-independence checks.
    pub fn enlarged(&self) -> Grid {
        let pad = ((0.25 * (self.x_max - self.x_min)) / self.dx()).ceil() as usize;
        Grid {
            x_min: self.x_min - pad as f64 * self.dx(),
            x_max: self.x_max + pad as f64 * self.dx(),
            n: self.n + 2 * pad,
        }
    }
}

/// A real field sampled on a [`Grid`]; the universal value type of the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidGrid(format!(
                "value count {} does not match grid.n = {}",
                values.len(),
                grid.n()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.xs().map(f).collect();
        GridFunction { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.n()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        GridFunction { grid, values: vec![c; grid.n()] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation inside the grid; clamps to the end samples outside.
    pub fn interp(&self, x: f64) -> f64 {
        let dx = self.grid.dx();
        let s = (x - self.grid.x_min()) / dx;
        if s <= 0.0 {
            return self.values[0];
        }
        let last = (self.grid.n() - 1) as f64;
        if s >= last {
            return self.values[self.grid.n() - 1];
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values =
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        GridFunction { grid: self.grid, values }
    }

    /// Sup-norm distance to another field on the same grid.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Resample onto `target` by linear interpolation (clamped outside).
    pub fn resampled(&self, target: Grid) -> GridFunction {
        GridFunction::from_fn(target, |x| self.interp(x))
    }
}

/// The forcing phi: closed-form families plus tabulated data with a declared
/// limit at spatial infinity.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialProfile {
    /// `(x^2 - c) e^{-x^2/2}`
    GaussianQuadratic { c: f64 },
    /// `c e^{-x^2/2}`
    Gaussian { c: f64 },
    /// `P` everywhere
    Constant { p: f64 },
    /// Sampled data, linearly interpolated, equal to `limit` outside its grid.
    Tabulated { table: GridFunction, limit: f64 },
}

impl PotentialProfile {
    /// Builds a tabulated profile, checking that the sampled ends agree with
    /// the declared limit to within `tol`.
    pub fn tabulated(table: GridFunction, limit: f64, tol: f64) -> Result<Self> {
        let first = table.values()[0];
        let last = table.values()[table.grid().n() - 1];
        let err = (first - limit).abs().max((last - limit).abs());
        if err > tol {
            return Err(Error::TabulatedLimitMismatch(err));
        }
        Ok(PotentialProfile::Tabulated { table, limit })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            PotentialProfile::GaussianQuadratic { c } => (x * x - c) * (-0.5 * x * x).exp(),
            PotentialProfile::Gaussian { c } => c * (-0.5 * x * x).exp(),
            PotentialProfile::Constant { p } => *p,
            PotentialProfile::Tabulated { table, limit } => {
                if x < table.grid().x_min() || x > table.grid().x_max() {
                    *limit
                } else {
                    table.interp(x)
                }
            }
        }
    }

    /// Declared limit at x -> +-infinity.
    pub fn limit(&self) -> f64 {
        match self {
            PotentialProfile::GaussianQuadratic { .. } | PotentialProfile::Gaussian { .. } => 0.0,
            PotentialProfile::Constant { p } => *p,
            PotentialProfile::Tabulated { limit, .. } => *limit,
        }
    }

    pub fn sample(&self, grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }

    /// Sup of |phi| over the grid (and the limit value beyond it).
    pub fn sup_abs(&self, grid: Grid) -> f64 {
        grid.xs()
            .map(|x| self.eval(x).abs())
            .fold(self.limit().abs(), f64::max)
    }
}

/// Trapezoid-rule L1, L2, and sup norms of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

/// Trapezoid approximations of the three norms used throughout the crate.
pub fn norms(f: &GridFunction) -> Result<Norms> {
    if !f.is_finite() {
        return Err(Error::NonFiniteField);
    }
    let dx = f.grid().dx();
    let v = f.values();
    let n = v.len();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        l1 += w * x.abs();
        l2 += w * x * x;
        linf = linf.max(x.abs());
    }
    Ok(Norms { l1: l1 * dx, l2: (l2 * dx).sqrt(), linf })
}

/// Trapezoid integral of a field (signed).
pub fn integrate(f: &GridFunction) -> f64 {
    let dx = f.grid().dx();
    let v = f.values();
    let n = v.len();
    let sum: f64 = v.iter().sum();
    dx * (sum - 0.5 * (v[0] + v[n - 1]))
}

/// Second derivative: second-order central differences at interior points,
/// second-order one-sided stencils at the two boundary points.
pub fn diff2(f: &GridFunction) -> GridFunction {
    let n = f.grid().n();
    let dx2 = f.grid().dx() * f.grid().dx();
    let v = f.values();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (v[i - 1] - 2.0 * v[i] + v[i + 1]) / dx2;
    }
    if n >= 4 {
        out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / dx2;
        out[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / dx2;
    } else {
        // n = 3: only the first-order-accurate central value is available.
        out[0] = out[1];
        out[2] = out[1];
    }
    GridFunction::from_values(f.grid(), out).expect("length preserved")
}

/// First derivative: central differences inside, second-order one-sided at
/// the ends.
pub fn diff1(f: &GridFunction) -> GridFunction {
    let n = f.grid().n();
    let dx = f.grid().dx();
    let v = f.values();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
    }
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx);
    GridFunction::from_values(f.grid(), out).expect("length preserved")
}

/// Action value together with a tail-decay warning flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionValue {
    pub value: f64,
    /// False when the field does not decay below the tail tolerance at the
    /// grid ends; the value is still returned.
    pub decaying: bool,
}

pub const DEFAULT_TAIL_TOL: f64 = 1e-3;

/// Action functional `A(f) = ∫ 1/2 (f')^2 + 1/3 f^3 - f phi dx`.
///
/// Along the parabolic flow this quantity is non-increasing, and for a
/// heteroclinic run `E =~ A(start) - A(end)`.
pub fn action(f: &GridFunction, phi: &PotentialProfile, tail_tol: f64) -> ActionValue {
    let fp = diff1(f);
    let grid = f.grid();
    let integrand = GridFunction::from_values(
        grid,
        f.values()
            .iter()
            .zip(fp.values())
            .zip(grid.xs())
            .map(|((&u, &up), x)| 0.5 * up * up + u * u * u / 3.0 - u * phi.eval(x))
            .collect(),
    )
    .expect("length preserved");
    let n = grid.n();
    let tail = f.values()[0].abs().max(f.values()[n - 1].abs());
    ActionValue { value: integrate(&integrand), decaying: tail <= tail_tol }
}

/// Action for the generic polynomial reaction `G(u) = sum_i a_i u^i`:
/// `A(f) = ∫ 1/2 (f')^2 - sum_i a_i/(i+1) f^{i+1} dx`.
///
/// The quadratic flagship (`a_0 = phi`, `a_2 = -1`) reduces to [`action`].
/// Exposed as a hook; only the quadratic specialization is exercised by the
/// rest of the crate.
pub fn action_general(f: &GridFunction, coefficients: &[GridFunction]) -> ActionValue {
    let grid = f.grid();
    let fp = diff1(f);
    let mut vals = Vec::with_capacity(grid.n());
    for j in 0..grid.n() {
        let u = f.values()[j];
        let up = fp.values()[j];
        let mut s = 0.5 * up * up;
        let mut upow = u; // u^{i+1}
        for (i, a) in coefficients.iter().enumerate() {
            s -= a.values()[j] * upow / (i as f64 + 1.0);
            upow *= u;
        }
        vals.push(s);
    }
    let integrand = GridFunction::from_values(grid, vals).expect("length preserved");
    let n = grid.n();
    let tail = f.values()[0].abs().max(f.values()[n - 1].abs());
    ActionValue { value: integrate(&integrand), decaying: tail <= DEFAULT_TAIL_TOL }
}

/// Energy functional `E(u) = 1/2 ∫∫ (u_t)^2 + (u_xx - u^2 + phi)^2 dx dt`
/// over the span of a trajectory. `u_t` is taken by forward differences
/// between snapshots; the squared PDE residual is trapezoided in time.
pub fn energy(traj: &Trajectory, phi: &PotentialProfile) -> Result<f64> {
    if traj.blowup().is_some() {
        return Err(Error::EnergyAfterBlowup);
    }
    let snaps = traj.snapshots();
    let times = traj.times();
    if snaps.len() < 2 {
        return Err(Error::TooFewSnapshots { need: 2, have: snaps.len() });
    }
    let grid = snaps[0].grid();
    let phi_s = phi.sample(grid);
    let residual_sq = |u: &GridFunction| -> f64 {
        let uxx = diff2(u);
        let r = GridFunction::from_values(
            grid,
            u.values()
                .iter()
                .zip(uxx.values())
                .zip(phi_s.values())
                .map(|((&v, &vxx), &p)| {
                    let r = vxx - v * v + p;
                    r * r
                })
                .collect(),
        )
        .expect("length preserved");
        integrate(&r)
    };
    let mut res_prev = residual_sq(&snaps[0]);
    let mut total = 0.0;
    for k in 0..snaps.len() - 1 {
        let dt = times[k + 1] - times[k];
        let ut_sq = {
            let d = snaps[k + 1].zip_map(&snaps[k], |a, b| {
                let ut = (a - b) / dt;
                ut * ut
            });
            integrate(&d)
        };
        let res_next = residual_sq(&snaps[k + 1]);
        total += dt * (ut_sq + 0.5 * (res_prev + res_next));
        res_prev = res_next;
    }
    Ok(0.5 * total)
}
