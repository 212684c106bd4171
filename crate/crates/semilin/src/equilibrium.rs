//! Global solutions of `0 = f'' - f^2 + phi(x)` by asymptotic-numeric
//! matching: series tails, phase-plane shooting with asymptotic boundary
//! conditions, Z/Z' curve tracing, polyline intersection, and 2-D Newton
//! refinement of the matching mismatch.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, PotentialProfile};
use rayon::prelude::*;

/// A point of the phase vector field `V(f, f', x) = (f', f^2 - phi(x), 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub f: f64,
    pub fp: f64,
    pub x: f64,
}

/// How to evaluate the Hamiltonian's `2/3 phi^{3/2}` term where `phi < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativePhiMode {
    /// Reject: the term is undefined for negative phi.
    #[default]
    Reject,
    /// Drop the term where phi < 0.
    DropTerm,
    /// Use `sign(phi) |phi|^{3/2}`.
    SignedPower,
}

/// `H(f, f', x) = 1/3 f^3 - 1/2 f'^2 - f phi(x) + 2/3 phi^{3/2}(x)`.
/// Conserved along orbits when phi is constant.
pub fn hamiltonian(
    s: &PhaseState,
    phi: &PotentialProfile,
    mode: NegativePhiMode,
) -> Result<f64> {
    let p = phi.eval(s.x);
    let last = if p >= 0.0 {
        p.powf(1.5)
    } else {
        match mode {
            NegativePhiMode::Reject => {
                return Err(Error::NegativePotential { x: s.x, value: p })
            }
            NegativePhiMode::DropTerm => 0.0,
            NegativePhiMode::SignedPower => -(-p).powf(1.5),
        }
    };
    Ok(s.f * s.f * s.f / 3.0 - 0.5 * s.fp * s.fp - s.f * p + 2.0 / 3.0 * last)
}

/// Outcome of a phase-plane integration: either the state at the target
/// plane or the x at which the orbit tripped the blow-up guard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseOutcome {
    Global(PhaseState),
    Nonglobal { x_blow: f64 },
}

impl PhaseOutcome {
    pub fn global(self) -> Option<PhaseState> {
        match self {
            PhaseOutcome::Global(s) => Some(s),
            PhaseOutcome::Nonglobal { .. } => None,
        }
    }
}

pub const DEFAULT_PHASE_STEP: f64 = 1e-3;
pub const DEFAULT_PHASE_GUARD: f64 = 1e6;

/// Classical RK4 on the phase vector field, in either x direction, with
/// step halving once |f| exceeds 10 (one halving per decade) and a blow-up
/// guard declaring the orbit nonglobal.
pub fn integrate_phase(
    s: &PhaseState,
    x_target: f64,
    step: f64,
    phi: &PotentialProfile,
) -> PhaseOutcome {
    integrate_phase_recording(s, x_target, step, phi, DEFAULT_PHASE_GUARD, &mut |_| {})
}

pub fn integrate_phase_recording(
    s: &PhaseState,
    x_target: f64,
    step: f64,
    phi: &PotentialProfile,
    guard: f64,
    record: &mut dyn FnMut(&PhaseState),
) -> PhaseOutcome {
    let eval = |x: f64| phi.eval(x);
    integrate_phase_impl(s, x_target, step, &eval, guard, record)
}

fn integrate_phase_impl(
    s: &PhaseState,
    x_target: f64,
    step: f64,
    phi: &dyn Fn(f64) -> f64,
    guard: f64,
    record: &mut dyn FnMut(&PhaseState),
) -> PhaseOutcome {
    assert!(step > 0.0, "step must be positive");
    let dir = if x_target >= s.x { 1.0 } else { -1.0 };
    let mut f = s.f;
    let mut fp = s.fp;
    let mut x = s.x;
    record(&PhaseState { f, fp, x });
    loop {
        let remaining = (x_target - x) * dir;
        if remaining <= 0.0 {
            break;
        }
        // Halve the step once per decade of |f| past 10.
        let mut dx = step;
        let mag = f.abs();
        if mag > 10.0 {
            let decades = (mag / 10.0).log10().floor() as i32 + 1;
            dx = step / (2.0_f64).powi(decades.min(40));
        }
        dx = dx.min(remaining) * dir;

        let acc = |f: f64, x: f64| f * f - phi(x);
        let k1f = fp;
        let k1p = acc(f, x);
        let k2f = fp + 0.5 * dx * k1p;
        let k2p = acc(f + 0.5 * dx * k1f, x + 0.5 * dx);
        let k3f = fp + 0.5 * dx * k2p;
        let k3p = acc(f + 0.5 * dx * k2f, x + 0.5 * dx);
        let k4f = fp + dx * k3p;
        let k4p = acc(f + dx * k3f, x + dx);
        f += dx / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
        fp += dx / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        x += dx;
        if !f.is_finite() || !fp.is_finite() || f.abs() > guard {
            return PhaseOutcome::Nonglobal { x_blow: x };
        }
        record(&PhaseState { f, fp, x });
    }
    PhaseOutcome::Global(PhaseState { f, fp, x })
}

/// Which tail the asymptotic boundary condition describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `Z` at `x = +x0`: orbits surviving to +infinity.
    Plus,
    /// `Z'` at `x = -x0`: orbits surviving to -infinity.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BcOrder {
    Leading,
    #[default]
    Corrected,
}

/// Derivative prescribed by the decaying-tail ansatz at the matching plane
/// `x = x0` (Plus side): leading `f' = -sqrt(2/3) f^{3/2}`; the corrected
/// form adds `(x0-d)^3 \int_{x0}^inf phi(s)/(s-d)^3 ds` with
/// `d = x0 - sqrt(6/f)` (K = 0 convention). The quadrature is truncated
/// where |phi| falls below 1e-14.
pub fn asymptotic_bc(
    f: f64,
    x0: f64,
    phi: &PotentialProfile,
    order: BcOrder,
) -> Result<f64> {
    let eval = |x: f64| phi.eval(x);
    asymptotic_bc_impl(f, x0, &eval, order)
}

/// Same ansatz on the Minus side: the derivative at `x = -x0` for orbits
/// decaying toward -infinity (the reflected problem).
pub fn asymptotic_bc_minus(
    f: f64,
    x0: f64,
    phi: &PotentialProfile,
    order: BcOrder,
) -> Result<f64> {
    let mirrored = |x: f64| phi.eval(-x);
    Ok(-asymptotic_bc_impl(f, x0, &mirrored, order)?)
}

fn asymptotic_bc_impl(
    f: f64,
    x0: f64,
    phi: &dyn Fn(f64) -> f64,
    order: BcOrder,
) -> Result<f64> {
    if f <= 0.0 || !f.is_finite() {
        return Err(Error::NonPositiveTailValue(f));
    }
    let leading = -(2.0f64 / 3.0).sqrt() * f.powf(1.5);
    if order == BcOrder::Leading {
        return Ok(leading);
    }
    let d = x0 - (6.0 / f).sqrt();
    // Find where phi has decayed below 1e-14, stepping outward.
    let mut x_hi = x0;
    let mut span = 1.0;
    while phi(x_hi).abs() >= 1e-14 && x_hi < x0 + 1e4 {
        x_hi += span;
        span *= 1.5;
    }
    if x_hi <= x0 {
        return Ok(leading);
    }
    let integrand = |s: f64| phi(s) / (s - d).powi(3);
    let integral = adaptive_simpson(&integrand, x0, x_hi, 1e-14);
    Ok(leading + (x0 - d).powi(3) * integral)
}

pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth > 48 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, left, 0.5 * tol, depth + 1) + rec(f, m, b, right, 0.5 * tol, depth + 1)
        }
    }
    rec(f, a, b, simpson(f, a, b), tol, 0)
}

/// A polyline in the (f, f') plane at the matching plane `x = 0`,
/// approximating the global-existence initial-condition set.
#[derive(Debug, Clone)]
pub struct ZCurve {
    pub x0: f64,
    pub side: Side,
    /// Endpoint (f, f') at x = 0 of each surviving seed orbit, in seed order.
    pub points: Vec<(f64, f64)>,
    /// Tail amplitude at the anchor plane that produced each point.
    pub seeds: Vec<f64>,
    /// Indices at which a new polyline piece starts (survivor-set gaps).
    pub breaks: Vec<usize>,
}

impl ZCurve {
    /// Consecutive-index segments, skipping break boundaries.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.points.len().saturating_sub(1) {
            if !self.breaks.contains(&(i + 1)) {
                out.push((i, i + 1));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    pub step: f64,
    pub guard: f64,
    /// Plane-distance resolution of the polyline; larger gaps between the
    /// images of adjacent seeds are bisected in seed space.
    pub resolution: f64,
    pub max_refine_depth: u32,
    pub bc_order: BcOrder,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            step: DEFAULT_PHASE_STEP,
            guard: DEFAULT_PHASE_GUARD,
            resolution: 0.05,
            max_refine_depth: 12,
            bc_order: BcOrder::default(),
        }
    }
}

/// Default seed amplitudes: 400 logarithmically spaced values in [1e-4, 5].
pub fn default_f_samples() -> Vec<f64> {
    let n = 400;
    let (lo, hi) = (1e-4_f64, 5.0_f64);
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn shoot_to_zero(
    seed: f64,
    x0: f64,
    side: Side,
    phi: &PotentialProfile,
    opts: &TraceOptions,
) -> Option<(f64, f64)> {
    let (start_x, fp) = match side {
        Side::Plus => (x0, asymptotic_bc(seed, x0, phi, opts.bc_order).ok()?),
        Side::Minus => (-x0, asymptotic_bc_minus(seed, x0, phi, opts.bc_order).ok()?),
    };
    let s = PhaseState { f: seed, fp, x: start_x };
    let eval = |x: f64| phi.eval(x);
    integrate_phase_impl(&s, 0.0, opts.step, &eval, opts.guard, &mut |_| {})
        .global()
        .map(|st| (st.f, st.fp))
}

/// Extend the asymptotic initial-condition set at `x = +-x0` to the plane
/// `x = 0`: seed each sample with the tail derivative, integrate to 0, and
/// record the surviving endpoints as an ordered polyline. Seed gaps whose
/// images exceed the resolution are bisected; survivor-set edges are
/// localized the same way.
pub fn trace_z(
    x0: f64,
    phi: &PotentialProfile,
    f_samples: &[f64],
    side: Side,
    opts: &TraceOptions,
) -> Result<ZCurve> {
    // Parallel map over the raw seeds.
    let raw: Vec<(f64, Option<(f64, f64)>)> = f_samples
        .par_iter()
        .map(|&s| (s, shoot_to_zero(s, x0, side, phi, opts)))
        .collect();
    if raw.iter().all(|(_, p)| p.is_none()) {
        return Err(Error::NoGlobalSeeds);
    }

    // Walk seed order, refining gaps (survivor-survivor with distant images,
    // or survivor-dead edges) by bisection in seed space.
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut seeds: Vec<f64> = Vec::new();
    let mut breaks: Vec<usize> = Vec::new();
    let dist =
        |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();

    let mut push = |seed: f64, pt: (f64, f64), seeds: &mut Vec<f64>, pts: &mut Vec<(f64, f64)>| {
        seeds.push(seed);
        pts.push(pt);
    };

    for w in 0..raw.len() {
        let (s_here, p_here) = raw[w];
        let Some(pt_here) = p_here else { continue };
        // Refine the gap back toward the previous processed seed.
        if let (Some(&s_prev), Some(&pt_prev)) = (seeds.last(), points.last()) {
            if dist(pt_prev, pt_here) > opts.resolution {
                // Bisect recursively in seed space.
                let mut stack = vec![(s_prev, pt_prev, s_here, pt_here, 0u32)];
                let mut inserted: Vec<(f64, (f64, f64))> = Vec::new();
                while let Some((sa, pa, sb, pb, depth)) = stack.pop() {
                    if depth >= opts.max_refine_depth || dist(pa, pb) <= opts.resolution {
                        inserted.push((sb, pb));
                        continue;
                    }
                    let sm = 0.5 * (sa + sb);
                    match shoot_to_zero(sm, x0, side, phi, opts) {
                        Some(pm) => {
                            stack.push((sm, pm, sb, pb, depth + 1));
                            stack.push((sa, pa, sm, pm, depth + 1));
                        }
                        None => {
                            // A dead pocket between survivors: cut the line.
                            inserted.push((f64::NAN, (f64::NAN, f64::NAN)));
                            inserted.push((sb, pb));
                        }
                    }
                }
                // The stack pops right-to-left; restore seed order.
                inserted.sort_by(|a, b| match (a.0.is_nan(), b.0.is_nan()) {
                    (true, _) | (_, true) => std::cmp::Ordering::Equal,
                    _ => a.0.partial_cmp(&b.0).unwrap(),
                });
                for (s, p) in inserted {
                    if s.is_nan() {
                        breaks.push(points.len());
                    } else if points.last() != Some(&p) {
                        if dist(*points.last().unwrap(), p) > opts.resolution
                            && !breaks.contains(&points.len())
                        {
                            breaks.push(points.len());
                        }
                        push(s, p, &mut seeds, &mut points);
                    }
                }
                continue;
            }
        }
        push(s_here, pt_here, &mut seeds, &mut points);
    }

    if points.is_empty() {
        return Err(Error::NoGlobalSeeds);
    }
    Ok(ZCurve { x0, side, points, seeds, breaks })
}

/// A transversal crossing of the Z and Z' polylines, before refinement.
#[derive(Debug, Clone, Copy)]
pub struct Candidate {
    pub f0: f64,
    pub fp0: f64,
    /// Interpolated tail amplitudes at -x0 / +x0.
    pub seed_minus: f64,
    pub seed_plus: f64,
    /// Crossing angle in radians.
    pub angle: f64,
}

/// Candidate that 2-D Newton failed to refine, with its last mismatch size.
#[derive(Debug, Clone, Copy)]
pub struct UnrefinedCandidate {
    pub f0: f64,
    pub fp0: f64,
    pub mismatch: f64,
}

/// A refined global solution of the equilibrium equation.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub profile: GridFunction,
    pub f0: f64,
    pub fp0: f64,
    /// Sup-norm of `f'' - f^2 + phi` measured on the fine integration mesh.
    pub residual: f64,
    pub n_unstable: Option<usize>,
    /// Spectral count carried an edge-ambiguity flag.
    pub ambiguous: bool,
    /// Tail amplitudes at the matching planes (continuation restarts here).
    pub seed_minus: f64,
    pub seed_plus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NecessaryCondition {
    /// `integral > 0` (within a quadrature-noise floor).
    pub passes: bool,
    pub integral: f64,
    /// True when some window [A, B] violates the windowed integral bound,
    /// certifying that no bounded solution exists.
    pub window_test: bool,
}

/// Integral test `∫ phi > 0` plus the windowed refinement: a window [A, B]
/// with `-∫_A^B phi > sqrt(8/3) (sup_{<=A} |phi|^{3/4} + sup_{>=B} |phi|^{3/4})`
/// rules out bounded solutions.
pub fn necessary_condition(phi: &PotentialProfile, grid: Grid) -> NecessaryCondition {
    let sampled = phi.sample(grid);
    let integral = crate::grid::integrate(&sampled);
    let scale: f64 = sampled.values().iter().fold(phi.limit().abs(), |m, &v| m.max(v.abs()));
    let floor = 1e-10 * scale.max(1e-30) * (grid.x_max() - grid.x_min());
    let passes = integral > floor;

    // Windowed test on a subsample of window endpoints.
    let n = grid.n();
    let k = 120.min(n - 1);
    let idxs: Vec<usize> = (0..=k).map(|j| j * (n - 1) / k).collect();
    // Prefix integrals and prefix/suffix sups of |phi| (limit included).
    let v = sampled.values();
    let dx = grid.dx();
    let mut prefix_int = vec![0.0; n];
    for i in 1..n {
        prefix_int[i] = prefix_int[i - 1] + 0.5 * dx * (v[i - 1] + v[i]);
    }
    let mut prefix_sup = vec![0.0; n];
    let mut acc = phi.limit().abs();
    for i in 0..n {
        acc = acc.max(v[i].abs());
        prefix_sup[i] = acc;
    }
    let mut suffix_sup = vec![0.0; n];
    let mut acc = phi.limit().abs();
    for i in (0..n).rev() {
        acc = acc.max(v[i].abs());
        suffix_sup[i] = acc;
    }
    let coef = (8.0f64 / 3.0).sqrt();
    let mut violated = false;
    'outer: for (ai, &a) in idxs.iter().enumerate() {
        for &b in &idxs[ai + 1..] {
            let minus_int = -(prefix_int[b] - prefix_int[a]);
            let bound = coef * (prefix_sup[a].powf(0.75) + suffix_sup[b].powf(0.75));
            if minus_int > bound {
                violated = true;
                break 'outer;
            }
        }
    }
    NecessaryCondition { passes, integral, window_test: violated }
}

/// Bound coefficients for the decaying-tail series, with validity flags.
#[derive(Debug, Clone)]
pub struct SeriesTail {
    pub d: f64,
    pub k_param: f64,
    pub r: f64,
    pub alpha: f64,
    pub m: f64,
    /// `a[k]` bounds the k-th series term; `a[0]` is unused (leading 6/(x-d)^2).
    pub a: Vec<f64>,
    /// `A_1 <= 8R` and `M < 8 (alpha+2)(alpha-5) R^{alpha-4}`.
    pub valid: bool,
    /// Max of `A_{k+1}/A_k` over 2 <= k < order (0 when the tail vanishes).
    pub max_ratio: f64,
}

/// Fit the tail-decay envelope `|phi| < M/(x-d)^alpha` on `|x-d| > R` by
/// least squares on `log |phi|`, then run the bound-coefficient recursion
/// `A_k = sum A_m A_{k-m} / ((k+6)(k-1))`.
pub fn series_tail(
    d: f64,
    k_param: f64,
    phi: &PotentialProfile,
    order: usize,
) -> Result<SeriesTail> {
    series_tail_with(d, k_param, phi, order, 1.0)
}

pub fn series_tail_with(
    d: f64,
    k_param: f64,
    phi: &PotentialProfile,
    order: usize,
    r: f64,
) -> Result<SeriesTail> {
    assert!(order >= 1, "order must be >= 1");
    assert!(r > 0.0, "R must be positive");
    // Sample the tail region |x - d| > R on the plus side.
    let n_samples = 240;
    let x_lo = d + r;
    let x_hi = d + (50.0 * r).max(r + 40.0);
    let mut pairs = Vec::new();
    for i in 0..n_samples {
        let x = x_lo + (x_hi - x_lo) * i as f64 / (n_samples - 1) as f64;
        let p = phi.eval(x).abs();
        if p > 1e-280 {
            pairs.push(((x - d).ln(), p.ln()));
        }
    }
    let (alpha, m) = if pairs.len() < 4 {
        // Tail numerically zero: infinitely fast decay.
        (f64::INFINITY, 0.0)
    } else {
        let n = pairs.len() as f64;
        let sx: f64 = pairs.iter().map(|p| p.0).sum();
        let sy: f64 = pairs.iter().map(|p| p.1).sum();
        let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let alpha = -slope;
        if !(alpha > 5.0) {
            return Err(Error::DecayTooSlow(alpha));
        }
        // M = sup |phi| (x-d)^alpha over the samples, computed in logs.
        let log_m = pairs
            .iter()
            .map(|&(lx, lp)| lp + alpha * lx)
            .fold(f64::NEG_INFINITY, f64::max);
        (alpha, log_m.exp())
    };

    let a1 = if m == 0.0 {
        k_param.abs()
    } else {
        k_param.abs() + m / ((2.0 + alpha) * (alpha - 5.0) * r.powf(alpha - 5.0))
    };
    let mut a = vec![0.0; order + 1];
    if order >= 1 {
        a[1] = a1;
    }
    for k in 2..=order {
        let mut s = 0.0;
        for mm in 1..k {
            s += a[mm] * a[k - mm];
        }
        a[k] = s / ((k as f64 + 6.0) * (k as f64 - 1.0));
    }
    let mut max_ratio: f64 = 0.0;
    for k in 2..order {
        if a[k] > 0.0 {
            max_ratio = max_ratio.max(a[k + 1] / a[k]);
        }
    }
    let cond = if m == 0.0 {
        true
    } else {
        m < 8.0 * (alpha + 2.0) * (alpha - 5.0) * r.powf(alpha - 4.0)
    };
    let valid = a1 <= 8.0 * r && cond;
    Ok(SeriesTail { d, k_param, r, alpha, m, a, valid, max_ratio })
}

/// Shooting/matching machinery shared by the finder and the continuation.
#[derive(Debug, Clone)]
pub struct Matcher {
    pub phi: PotentialProfile,
    pub x0: f64,
    pub step: f64,
    pub guard: f64,
    pub bc_order: BcOrder,
}

impl Matcher {
    pub fn new(phi: PotentialProfile, x0: f64) -> Self {
        Matcher {
            phi,
            x0,
            step: DEFAULT_PHASE_STEP,
            guard: DEFAULT_PHASE_GUARD,
            bc_order: BcOrder::default(),
        }
    }

    /// State at x = 0 reached from the +x0 tail seed (integrating backward).
    pub fn shoot_plus(&self, seed: f64) -> Option<(f64, f64)> {
        shoot_to_zero(
            seed,
            self.x0,
            Side::Plus,
            &self.phi,
            &TraceOptions {
                step: self.step,
                guard: self.guard,
                bc_order: self.bc_order,
                ..Default::default()
            },
        )
    }

    /// State at x = 0 reached from the -x0 tail seed (integrating forward).
    pub fn shoot_minus(&self, seed: f64) -> Option<(f64, f64)> {
        shoot_to_zero(
            seed,
            self.x0,
            Side::Minus,
            &self.phi,
            &TraceOptions {
                step: self.step,
                guard: self.guard,
                bc_order: self.bc_order,
                ..Default::default()
            },
        )
    }

    /// Matching mismatch `(f(0-) - f(0+), f'(0-) - f'(0+))`.
    pub fn mismatch(&self, seed_minus: f64, seed_plus: f64) -> Option<[f64; 2]> {
        let (fm, fpm) = self.shoot_minus(seed_minus)?;
        let (fp_, fpp) = self.shoot_plus(seed_plus)?;
        Some([fm - fp_, fpm - fpp])
    }

    /// 2-D Newton on the mismatch map with a finite-difference Jacobian and
    /// step halving; seeds must stay positive.
    pub fn refine(
        &self,
        seed_minus: f64,
        seed_plus: f64,
        tol: f64,
        max_iter: usize,
    ) -> std::result::Result<RefinedMatch, f64> {
        let mut s = [seed_minus, seed_plus];
        let mut r = self.mismatch(s[0], s[1]).ok_or(f64::INFINITY)?;
        let mut rn = r[0].hypot(r[1]);
        for _ in 0..max_iter {
            if rn < tol {
                let (f0m, fp0m) = self.shoot_minus(s[0]).ok_or(rn)?;
                let (f0p, fp0p) = self.shoot_plus(s[1]).ok_or(rn)?;
                return Ok(RefinedMatch {
                    seed_minus: s[0],
                    seed_plus: s[1],
                    f0: 0.5 * (f0m + f0p),
                    fp0: 0.5 * (fp0m + fp0p),
                    mismatch: rn,
                });
            }
            // Finite-difference Jacobian.
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let delta = 1e-7 * (1.0 + s[j].abs());
                let mut sp = s;
                sp[j] += delta;
                let rp = self.mismatch(sp[0], sp[1]).ok_or(rn)?;
                jac[0][j] = (rp[0] - r[0]) / delta;
                jac[1][j] = (rp[1] - r[1]) / delta;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-300 {
                return Err(rn);
            }
            let dx = [
                (r[0] * jac[1][1] - r[1] * jac[0][1]) / det,
                (r[1] * jac[0][0] - r[0] * jac[1][0]) / det,
            ];
            // Damped update keeping seeds positive.
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                let cand = [s[0] - lambda * dx[0], s[1] - lambda * dx[1]];
                if cand[0] > 0.0 && cand[1] > 0.0 {
                    if let Some(rc) = self.mismatch(cand[0], cand[1]) {
                        let rcn = rc[0].hypot(rc[1]);
                        if rcn < rn {
                            s = cand;
                            r = rc;
                            rn = rcn;
                            accepted = true;
                            break;
                        }
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(rn);
            }
        }
        if rn < tol {
            let (f0m, fp0m) = self.shoot_minus(s[0]).ok_or(rn)?;
            let (f0p, fp0p) = self.shoot_plus(s[1]).ok_or(rn)?;
            Ok(RefinedMatch {
                seed_minus: s[0],
                seed_plus: s[1],
                f0: 0.5 * (f0m + f0p),
                fp0: 0.5 * (fp0m + fp0p),
                mismatch: rn,
            })
        } else {
            Err(rn)
        }
    }

    /// Assemble the matched profile on `grid` by integrating outward from
    /// the two matched seeds (four stable half-segments), and measure the
    /// ODE residual with central differences on the fine integration mesh.
    pub fn assemble(&self, m: &RefinedMatch, grid: Grid) -> (GridFunction, f64) {
        let mut values = vec![f64::NAN; grid.n()];
        let mut residual: f64 = 0.0;
        let fine = self.step;

        let mut run = |from: PhaseState, to_x: f64| {
            let mut mesh: Vec<(f64, f64)> = Vec::new();
            let eval = |x: f64| self.phi.eval(x);
            let _ = integrate_phase_impl(&from, to_x, fine, &eval, self.guard, &mut |s| {
                mesh.push((s.x, s.f));
            });
            // Residual on the fine mesh (uniform except possibly last step).
            for w in mesh.windows(3) {
                let (x0, f0) = w[0];
                let (x1, f1) = w[1];
                let (x2, f2) = w[2];
                let h1 = x1 - x0;
                let h2 = x2 - x1;
                if (h1 - h2).abs() > 1e-12 * h1.abs() {
                    continue;
                }
                let second = (f0 - 2.0 * f1 + f2) / (h1 * h2);
                residual = residual.max((second - f1 * f1 + self.phi.eval(x1)).abs());
            }
            // Fill grid nodes covered by this segment by linear interpolation
            // of the fine mesh (mesh spacing << dx keeps this second-order
            // beyond the grid's own accuracy).
            if mesh.len() < 2 {
                return;
            }
            let (xa, xb) = (mesh.first().unwrap().0, mesh.last().unwrap().0);
            let (lo, hi) = if xa <= xb { (xa, xb) } else { (xb, xa) };
            let mut sorted = mesh;
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for i in 0..grid.n() {
                let x = grid.x(i);
                if x < lo - 1e-12 || x > hi + 1e-12 {
                    continue;
                }
                let j = sorted.partition_point(|&(mx, _)| mx < x).min(sorted.len() - 1);
                let (x1, f1) = sorted[j.saturating_sub(1)];
                let (x2, f2) = sorted[j];
                values[i] = if (x2 - x1).abs() < 1e-300 {
                    f2
                } else {
                    f1 + (f2 - f1) * (x - x1) / (x2 - x1)
                };
            }
        };

        let fp_minus = asymptotic_bc_minus(m.seed_minus, self.x0, &self.phi, self.bc_order)
            .unwrap_or(0.0);
        let fp_plus =
            asymptotic_bc(m.seed_plus, self.x0, &self.phi, self.bc_order).unwrap_or(0.0);
        let start_minus = PhaseState { f: m.seed_minus, fp: fp_minus, x: -self.x0 };
        let start_plus = PhaseState { f: m.seed_plus, fp: fp_plus, x: self.x0 };
        run(start_minus, 0.0);
        run(start_minus, grid.x_min());
        run(start_plus, 0.0);
        run(start_plus, grid.x_max());

        // Anything still uncovered (outside integration range) uses the tail.
        for i in 0..grid.n() {
            if values[i].is_nan() {
                let x = grid.x(i);
                let (seed, anchor) =
                    if x > 0.0 { (m.seed_plus, self.x0) } else { (m.seed_minus, -self.x0) };
                let d = if x > 0.0 {
                    anchor - (6.0 / seed).sqrt()
                } else {
                    anchor + (6.0 / seed).sqrt()
                };
                values[i] = 6.0 / ((x - d) * (x - d));
            }
        }
        (GridFunction::from_values(grid, values).expect("length preserved"), residual)
    }
}

/// Result of Newton refinement of a matching candidate.
#[derive(Debug, Clone, Copy)]
pub struct RefinedMatch {
    pub seed_minus: f64,
    pub seed_plus: f64,
    pub f0: f64,
    pub fp0: f64,
    pub mismatch: f64,
}

/// Everything the equilibrium finder reports.
#[derive(Debug, Clone)]
pub struct FindReport {
    pub solutions: Vec<EquilibriumSolution>,
    pub unrefined: Vec<UnrefinedCandidate>,
    pub tangential: Vec<Candidate>,
    pub necessary: NecessaryCondition,
    /// Set when the search was skipped or vacuous (with the reason).
    pub reason: Option<String>,
    /// Segment pairs closer than the trace resolution that do not cross;
    /// possible missed intersections under the finitely-many conjecture.
    pub possible_missed: usize,
}

#[derive(Debug, Clone)]
pub struct FindOptions {
    pub grid: Grid,
    pub samples: Option<Vec<f64>>,
    pub trace: TraceOptions,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub dedupe_tol: f64,
    /// Crossing angle below which a candidate is only reported as tangential.
    pub transversality_angle: f64,
    /// Annotate each solution with its positive-eigenvalue count.
    pub with_spectrum: bool,
}

impl Default for FindOptions {
    fn default() -> Self {
        FindOptions {
            grid: Grid::standard(),
            samples: None,
            trace: TraceOptions::default(),
            newton_tol: 1e-10,
            newton_max_iter: 50,
            dedupe_tol: 1e-4,
            transversality_angle: 1e-3,
            with_spectrum: true,
        }
    }
}

/// Segment-segment intersection; returns (t, u) parameters when the open
/// segments properly cross.
fn segment_intersection(
    p1: (f64, f64),
    p2: (f64, f64),
    q1: (f64, f64),
    q2: (f64, f64),
) -> Option<(f64, f64)> {
    let r = (p2.0 - p1.0, p2.1 - p1.1);
    let s = (q2.0 - q1.0, q2.1 - q1.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-300 {
        return None;
    }
    let qp = (q1.0 - p1.0, q1.1 - p1.1);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some((t, u))
    } else {
        None
    }
}

fn segment_distance(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> f64 {
    fn point_seg(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
        let ab = (b.0 - a.0, b.1 - a.1);
        let ap = (p.0 - a.0, p.1 - a.1);
        let len2 = ab.0 * ab.0 + ab.1 * ab.1;
        let t = if len2 > 0.0 { ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let c = (a.0 + t * ab.0, a.1 + t * ab.1);
        (p.0 - c.0).hypot(p.1 - c.1)
    }
    point_seg(p1, q1, q2)
        .min(point_seg(p2, q1, q2))
        .min(point_seg(q1, p1, p2))
        .min(point_seg(q2, p1, p2))
}

/// All transversal intersections of the traced Z and Z' curves at `x = 0`,
/// refined by 2-D Newton on the matching mismatch, assembled on the working
/// grid, and (optionally) annotated with unstable counts.
pub fn find_equilibria(phi: &PotentialProfile, x0: f64) -> FindReport {
    find_equilibria_with(phi, x0, &FindOptions::default())
}

pub fn find_equilibria_with(
    phi: &PotentialProfile,
    x0: f64,
    opts: &FindOptions,
) -> FindReport {
    let necessary = necessary_condition(phi, opts.grid);
    if !necessary.passes || necessary.window_test {
        return FindReport {
            solutions: Vec::new(),
            unrefined: Vec::new(),
            tangential: Vec::new(),
            necessary,
            reason: Some(if necessary.window_test {
                "windowed integral bound rules out bounded solutions".into()
            } else {
                format!("necessary condition failed: integral = {:.3e}", necessary.integral)
            }),
            possible_missed: 0,
        };
    }

    let samples = opts.samples.clone().unwrap_or_else(default_f_samples);
    let z = trace_z(x0, phi, &samples, Side::Plus, &opts.trace);
    let zp = trace_z(x0, phi, &samples, Side::Minus, &opts.trace);
    let (z, zp) = match (z, zp) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            return FindReport {
                solutions: Vec::new(),
                unrefined: Vec::new(),
                tangential: Vec::new(),
                necessary,
                reason: Some("no global seeds on one of the matching sides".into()),
                possible_missed: 0,
            }
        }
    };

    // Collect polyline crossings.
    let mut candidates = Vec::new();
    let mut possible_missed = 0;
    for &(i1, i2) in &z.segments() {
        for &(j1, j2) in &zp.segments() {
            let (p1, p2) = (z.points[i1], z.points[i2]);
            let (q1, q2) = (zp.points[j1], zp.points[j2]);
            match segment_intersection(p1, p2, q1, q2) {
                Some((t, u)) => {
                    let f0 = p1.0 + t * (p2.0 - p1.0);
                    let fp0 = p1.1 + t * (p2.1 - p1.1);
                    let d1 = (p2.0 - p1.0, p2.1 - p1.1);
                    let d2 = (q2.0 - q1.0, q2.1 - q1.1);
                    let cross = (d1.0 * d2.1 - d1.1 * d2.0).abs();
                    let angle = (cross
                        / (d1.0.hypot(d1.1) * d2.0.hypot(d2.1)).max(1e-300))
                    .asin();
                    candidates.push(Candidate {
                        f0,
                        fp0,
                        seed_plus: z.seeds[i1] + t * (z.seeds[i2] - z.seeds[i1]),
                        seed_minus: zp.seeds[j1] + u * (zp.seeds[j2] - zp.seeds[j1]),
                        angle,
                    });
                }
                None => {
                    if segment_distance(p1, p2, q1, q2) < opts.trace.resolution {
                        possible_missed += 1;
                    }
                }
            }
        }
    }

    let matcher = Matcher {
        phi: phi.clone(),
        x0,
        step: opts.trace.step,
        guard: opts.trace.guard,
        bc_order: opts.trace.bc_order,
    };

    let mut solutions: Vec<EquilibriumSolution> = Vec::new();
    let mut unrefined = Vec::new();
    let mut tangential = Vec::new();
    for cand in candidates {
        if cand.angle <= opts.transversality_angle {
            tangential.push(cand);
            continue;
        }
        match matcher.refine(cand.seed_minus, cand.seed_plus, opts.newton_tol, opts.newton_max_iter)
        {
            Ok(refined) => {
                let dup = solutions.iter().any(|s| {
                    (s.f0 - refined.f0).hypot(s.fp0 - refined.fp0) < opts.dedupe_tol
                });
                if dup {
                    continue;
                }
                let (profile, residual) = matcher.assemble(&refined, opts.grid);
                let (n_unstable, ambiguous) = if opts.with_spectrum {
                    let (n, amb) = crate::spectrum::count_positive(&profile);
                    (Some(n), amb)
                } else {
                    (None, false)
                };
                solutions.push(EquilibriumSolution {
                    profile,
                    f0: refined.f0,
                    fp0: refined.fp0,
                    residual,
                    n_unstable,
                    ambiguous,
                    seed_minus: refined.seed_minus,
                    seed_plus: refined.seed_plus,
                });
            }
            Err(mismatch) => {
                unrefined.push(UnrefinedCandidate { f0: cand.f0, fp0: cand.fp0, mismatch });
            }
        }
    }
    solutions.sort_by(|a, b| a.f0.partial_cmp(&b.f0).unwrap());
    FindReport {
        solutions,
        unrefined,
        tangential,
        necessary,
        reason: None,
        possible_missed,
    }
}
