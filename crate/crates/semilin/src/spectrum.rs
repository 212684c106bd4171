//! Discrete spectrum of Schrodinger operators `H = d^2/dx^2 - W(x)` above
//! the essential edge: Sturm-sequence bisection on the finite-difference
//! tridiagonal, eigenfunctions by inverse iteration, positive-eigenvalue
//! counts (unstable dimension), and spectrum-along-orbit tables.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::imex::Trajectory;
use rayon::prelude::*;

/// `H = d^2/dx^2 - W(x)` discretized with homogeneous far-field conditions.
/// For the linearization about an equilibrium `f`, `W = 2f`.
#[derive(Debug, Clone)]
pub struct SchrodingerOp {
    w: GridFunction,
    essential_edge: f64,
}

impl SchrodingerOp {
    /// Builds the operator, checking the declared edge against the tail
    /// averages of `W` (`edge = -lim W`).
    pub fn new(w: GridFunction, essential_edge: f64, tail_tol: f64) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::NonFiniteField);
        }
        let v = w.values();
        let n = v.len();
        let k = (n / 50).max(2);
        let left: f64 = v[..k].iter().sum::<f64>() / k as f64;
        let right: f64 = v[n - k..].iter().sum::<f64>() / k as f64;
        let err = (left + essential_edge).abs().max((right + essential_edge).abs());
        if err > tail_tol {
            return Err(Error::InvalidGrid(format!(
                "declared edge {essential_edge} inconsistent with W tails (off by {err:.3e})"
            )));
        }
        Ok(SchrodingerOp { w, essential_edge })
    }

    /// Linearization about a decaying equilibrium profile: `W = 2f`, edge 0.
    pub fn linearization(f: &GridFunction) -> Self {
        SchrodingerOp { w: f.map(|v| 2.0 * v), essential_edge: 0.0 }
    }

    pub fn w(&self) -> &GridFunction {
        &self.w
    }

    pub fn grid(&self) -> Grid {
        self.w.grid()
    }

    pub fn essential_edge(&self) -> f64 {
        self.essential_edge
    }

    /// Interior-point tridiagonal (diagonal, off-diagonal) of the discrete H.
    fn tridiagonal(&self) -> (Vec<f64>, f64) {
        let g = self.grid();
        let dx2 = g.dx() * g.dx();
        let diag: Vec<f64> =
            (1..g.n() - 1).map(|i| -2.0 / dx2 - self.w.values()[i]).collect();
        (diag, 1.0 / dx2)
    }

    /// Same operator on a domain enlarged 1.5x, padding W with its tail value.
    fn enlarged(&self) -> SchrodingerOp {
        let g = self.grid();
        let big = g.enlarged();
        let pad = -self.essential_edge;
        let w = GridFunction::from_fn(big, |x| {
            if x < g.x_min() || x > g.x_max() {
                pad
            } else {
                self.w.interp(x)
            }
        });
        SchrodingerOp { w, essential_edge: self.essential_edge }
    }
}

/// Count of eigenvalues of the symmetric tridiagonal matrix strictly less
/// than `lambda`, via the Sturm sequence (number of negative LDL^T pivots).
/// Exact at machine precision, which is the primary counting query.
fn sturm_count_less(diag: &[f64], off: f64, lambda: f64) -> usize {
    let guard = 1e-300_f64;
    let off2 = off * off;
    let mut count = 0;
    let mut q = f64::INFINITY;
    for &d in diag {
        let coupling = if q.is_infinite() {
            0.0
        } else {
            let prev = if q.abs() < guard { guard.copysign(q) } else { q };
            off2 / prev
        };
        q = (d - lambda) - coupling;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Locate the k-th smallest eigenvalue (0-based) by bisection on the count.
fn bisect_eigenvalue(diag: &[f64], off: f64, k: usize, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= 2.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
        if sturm_count_less(diag, off, mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn gershgorin(diag: &[f64], off: f64) -> (f64, f64) {
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    let m = diag.len();
    for (i, &d) in diag.iter().enumerate() {
        let r = if i == 0 || i == m - 1 { off.abs() } else { 2.0 * off.abs() };
        lo = lo.min(d - r);
        hi = hi.max(d + r);
    }
    (lo - 1.0, hi + 1.0)
}

/// Solve `(T - lambda) x = b` for tridiagonal `T` (constant off-diagonal)
/// with partial pivoting; used by inverse iteration.
fn solve_shifted(diag: &[f64], off: f64, lambda: f64, b: &[f64]) -> Vec<f64> {
    let m = diag.len();
    // Banded LU with partial pivoting: three working diagonals.
    let mut d0: Vec<f64> = diag.iter().map(|&d| d - lambda).collect();
    let mut d1 = vec![off; m.saturating_sub(1)];
    let mut d2 = vec![0.0; m.saturating_sub(2)];
    let mut sub = vec![off; m.saturating_sub(1)];
    let mut x: Vec<f64> = b.to_vec();
    let tiny = 1e-300_f64;
    for i in 0..m - 1 {
        if sub[i].abs() > d0[i].abs() {
            // Swap row i and i+1.
            x.swap(i, i + 1);
            std::mem::swap(&mut d0[i], &mut sub[i]);
            let t = d1[i];
            d1[i] = d0[i + 1];
            d0[i + 1] = t;
            if i + 2 < m {
                let t = if i < d2.len() { d2[i] } else { 0.0 };
                if i < d2.len() {
                    d2[i] = d1[i + 1];
                }
                d1[i + 1] = t;
            }
        }
        let p = if d0[i].abs() < tiny { tiny.copysign(d0[i]) } else { d0[i] };
        let l = sub[i] / p;
        d0[i + 1] -= l * d1[i];
        if i + 2 < m && i < d2.len() {
            d1[i + 1] -= l * d2[i];
        }
        x[i + 1] -= l * x[i];
    }
    // Back substitution.
    for i in (0..m).rev() {
        let mut s = x[i];
        if i + 1 < m {
            s -= d1[i] * x[i + 1];
        }
        if i + 2 < m {
            s -= d2[i] * x[i + 2];
        }
        let p = if d0[i].abs() < tiny { tiny.copysign(d0[i]) } else { d0[i] };
        x[i] = s / p;
    }
    x
}

fn trapezoid_l2(grid: Grid, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        s += w * x * x;
    }
    (s * grid.dx()).sqrt()
}

/// Sign changes of a sampled function, ignoring entries below a relative
/// floor (Sturm oscillation diagnostics).
pub fn sign_changes(values: &[f64]) -> usize {
    let peak = values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let floor = 1e-8 * peak;
    let mut count = 0;
    let mut last = 0.0_f64;
    for &v in values {
        if v.abs() <= floor {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            count += 1;
        }
        last = v;
    }
    count
}

/// One eigenpair of the discrete operator.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// Unit-L2 eigenfunction on the full grid (zero at the truncated ends).
    pub function: GridFunction,
    /// Within `margin` of the essential edge: reported but not counted.
    pub edge_ambiguous: bool,
    /// Sign changes of the eigenfunction (j-th from the top has j-1).
    pub sign_changes: usize,
}

/// Discrete eigenvalues above the essential edge, with eigenfunctions and
/// the positive count.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Decreasing in eigenvalue; edge-ambiguous entries come last.
    pub pairs: Vec<EigenPair>,
    /// Count of unambiguous eigenvalues > 0.
    pub n_positive: usize,
    /// True when any eigenvalue sits within `margin` of the edge (or of 0
    /// when counting positives).
    pub ambiguous: bool,
}

impl SpectrumReport {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EigOptions {
    /// Quarantine band around the essential edge; eigenvalues inside are
    /// flagged instead of resolved. Default `1e-3 * max(1, ||W||_inf)`.
    pub margin: Option<f64>,
    /// Re-run on a 1.5x domain and flag eigenvalues that move by more than
    /// `margin`; costs a second solve.
    pub verify_truncation: bool,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions { margin: None, verify_truncation: true }
    }
}

fn default_margin(op: &SchrodingerOp) -> f64 {
    let scale = op.w.values().iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    1e-3 * scale.max(1.0)
}

fn solve_above(op: &SchrodingerOp, cutoff: f64) -> Vec<(f64, Vec<f64>)> {
    let (diag, off) = op.tridiagonal();
    let m = diag.len();
    let (glo, ghi) = gershgorin(&diag, off);
    let lo = cutoff.max(glo);
    if lo >= ghi {
        return Vec::new();
    }
    let below_lo = sturm_count_less(&diag, off, lo);
    let total = m;
    let count = total - below_lo;
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let k = below_lo + j; // 0-based index from the bottom
        let lam = bisect_eigenvalue(&diag, off, k, lo, ghi);
        // Inverse iteration with a deterministic start.
        let mut v: Vec<f64> = (0..m)
            .map(|i| {
                let t = (i + 1) as f64 / (m + 1) as f64;
                (std::f64::consts::PI * t * (j + 1) as f64).sin() + 1e-3 * (i % 7) as f64
            })
            .collect();
        let shift = lam + 1e-10 * lam.abs().max(1.0);
        for _ in 0..3 {
            v = solve_shifted(&diag, off, shift, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm.is_finite() && norm > 0.0 {
                for x in &mut v {
                    *x /= norm;
                }
            }
        }
        out.push((lam, v));
    }
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    out
}

/// All discrete eigenvalues above `essential_edge + margin`, located by
/// Sturm bisection; eigenvectors by inverse iteration. Eigenvalues within
/// `margin` of the edge are flagged "edge-ambiguous", reported, and excluded
/// from `n_positive`.
pub fn eigs_above_edge(op: &SchrodingerOp, opts: EigOptions) -> SpectrumReport {
    let margin = opts.margin.unwrap_or_else(|| default_margin(op));
    let edge = op.essential_edge();
    let grid = op.grid();
    let solved = solve_above(op, edge - margin);

    let verified: Vec<f64> = if opts.verify_truncation {
        solve_above(&op.enlarged(), edge - margin).iter().map(|p| p.0).collect()
    } else {
        Vec::new()
    };

    let mut pairs = Vec::new();
    for (rank, (lam, v)) in solved.iter().enumerate() {
        let mut full = vec![0.0; grid.n()];
        full[1..grid.n() - 1].copy_from_slice(v);
        let l2 = trapezoid_l2(grid, &full);
        if l2 > 0.0 {
            for x in &mut full {
                *x /= l2;
            }
        }
        let changes = sign_changes(&full);
        let near_edge = (lam - edge).abs() <= margin;
        let truncation_moved = opts.verify_truncation
            && verified
                .get(rank)
                .map(|big| (big - lam).abs() > margin)
                .unwrap_or(true);
        pairs.push(EigenPair {
            value: *lam,
            function: GridFunction::from_values(grid, full).expect("length preserved"),
            edge_ambiguous: near_edge || truncation_moved,
            sign_changes: changes,
        });
    }
    // Near-zero quarantine for the positive count.
    let n_positive = pairs
        .iter()
        .filter(|p| !p.edge_ambiguous && p.value > 0.0 && p.value.abs() > margin)
        .count();
    let ambiguous = pairs.iter().any(|p| p.edge_ambiguous)
        || pairs.iter().any(|p| p.value.abs() <= margin);
    SpectrumReport { pairs, n_positive, ambiguous }
}

/// Positive-eigenvalue count of `H = d^2/dx^2 - 2f` for a decaying
/// equilibrium profile: the unstable-manifold dimension. The flag is set
/// when an eigenvalue falls within the quarantine band around 0.
pub fn count_positive(f: &GridFunction) -> (usize, bool) {
    count_positive_with(f, EigOptions { verify_truncation: false, ..Default::default() })
}

pub fn count_positive_with(f: &GridFunction, opts: EigOptions) -> (usize, bool) {
    let op = SchrodingerOp::linearization(f);
    let report = eigs_above_edge(&op, opts);
    (report.n_positive, report.ambiguous)
}

/// Expected dimension of the manifold of connections from `f_minus` to
/// `f_plus`: `dim V+(f_minus) - dim V+(f_plus)`. Nonpositive values are
/// reported as-is (no transversal connection expected).
pub fn connecting_dimension(f_minus: &GridFunction, f_plus: &GridFunction) -> (i64, bool) {
    let (a, amb_a) = count_positive(f_minus);
    let (b, amb_b) = count_positive(f_plus);
    (a as i64 - b as i64, amb_a || amb_b)
}

/// Top-k eigenvalue curves along a trajectory.
#[derive(Debug, Clone)]
pub struct OrbitSpectrum {
    pub times: Vec<f64>,
    /// `lambdas[s][j]` = j-th eigenvalue from the top at `times[s]`.
    pub lambdas: Vec<Vec<f64>>,
    /// Minimum gap between adjacent eigenvalue curves over the table.
    pub min_gap: f64,
}

/// For every `stride`-th snapshot `u(t)`, the top-k eigenvalues of
/// `H = d^2/dx^2 - 2u(t)`; reports the minimum gap between adjacent curves
/// (an eigenvalue-simplicity diagnostic).
pub fn spectrum_along_orbit(traj: &Trajectory, k: usize, stride: usize) -> OrbitSpectrum {
    let stride = stride.max(1);
    let picks: Vec<(f64, &GridFunction)> = traj
        .times()
        .iter()
        .zip(traj.snapshots())
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i == traj.times().len() - 1)
        .map(|(_, (t, s))| (*t, s))
        .collect();
    let rows: Vec<(f64, Vec<f64>)> = picks
        .par_iter()
        .map(|(t, u)| {
            let op = SchrodingerOp::linearization(u);
            let (diag, off) = op.tridiagonal();
            let m = diag.len();
            let (glo, ghi) = gershgorin(&diag, off);
            let take = k.min(m);
            let mut lams = Vec::with_capacity(take);
            for j in 0..take {
                let idx = m - 1 - j; // j-th from the top
                lams.push(bisect_eigenvalue(&diag, off, idx, glo, ghi));
            }
            (*t, lams)
        })
        .collect();
    let mut min_gap = f64::INFINITY;
    for (_, lams) in &rows {
        for w in lams.windows(2) {
            min_gap = min_gap.min(w[0] - w[1]);
        }
    }
    OrbitSpectrum {
        times: rows.iter().map(|r| r.0).collect(),
        lambdas: rows.into_iter().map(|r| r.1).collect(),
        min_gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PotentialProfile;
    use crate::imex::{evolve, EvolveOptions, Reaction};

    #[test]
    fn poschl_teller_bound_state() {
        // (d^2/dx^2 + 2 sech^2) sech = sech: top eigenvalue 1, eigenfunction
        // proportional to sech(x).
        let g = Grid::new(-20.0, 20.0, 2001).unwrap();
        let w = GridFunction::from_fn(g, |x| -2.0 / x.cosh().powi(2));
        let op = SchrodingerOp::new(w, 0.0, 1e-6).unwrap();
        let report = eigs_above_edge(&op, EigOptions::default());
        assert!(!report.pairs.is_empty());
        let top = &report.pairs[0];
        assert!(
            (top.value - 1.0).abs() < 1e-3,
            "Poschl-Teller eigenvalue {} should be 1.000 +- 1e-3",
            top.value
        );
        assert!(!top.edge_ambiguous);
        // Eigenfunction matches normalized sech.
        let l2_sech = {
            let s = GridFunction::from_fn(g, |x| 1.0 / x.cosh());
            let n = crate::grid::norms(&s).unwrap().l2;
            s.map(move |v| v / n)
        };
        let dist = top
            .function
            .sup_distance(&l2_sech)
            .min(top.function.map(|v| -v).sup_distance(&l2_sech));
        assert!(dist < 1e-3, "eigenfunction differs from sech by {dist}");
        assert_eq!(top.sign_changes, 0);
        assert_eq!(report.n_positive, 1);
    }

    #[test]
    fn constant_potential_has_no_discrete_spectrum() {
        // W = 6 (f = 3, phi = 9): purely essential spectrum below -6.
        let g = Grid::new(-20.0, 20.0, 1001).unwrap();
        let w = GridFunction::constant(g, 6.0);
        let op = SchrodingerOp::new(w, -6.0, 1e-6).unwrap();
        let report = eigs_above_edge(&op, EigOptions::default());
        let solid: Vec<_> = report.pairs.iter().filter(|p| !p.edge_ambiguous).collect();
        assert!(solid.is_empty(), "found {} unexpected eigenvalues", solid.len());
        assert_eq!(report.n_positive, 0);
    }

    #[test]
    fn sturm_bisection_agrees_with_dense_oracle() {
        // Dense symmetric eigensolver as the independent oracle, n <= 200.
        let g = Grid::new(-10.0, 10.0, 162).unwrap();
        let w = GridFunction::from_fn(g, |x| -3.0 * (-0.5 * x * x).exp() + 0.2 * (x / 5.0).sin());
        let op = SchrodingerOp { w, essential_edge: 0.0 };
        let (diag, off) = op.tridiagonal();
        let m = diag.len();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            dense[(i, i)] = diag[i];
            if i + 1 < m {
                dense[(i, i + 1)] = off;
                dense[(i + 1, i)] = off;
            }
        }
        let mut oracle: Vec<f64> =
            dense.symmetric_eigen().eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (glo, ghi) = gershgorin(&diag, off);
        for (k, expect) in oracle.iter().enumerate() {
            let lam = bisect_eigenvalue(&diag, off, k, glo, ghi);
            assert!(
                (lam - expect).abs() < 1e-8 * expect.abs().max(1.0),
                "k = {k}: sturm {lam} vs dense {expect}"
            );
        }
    }

    #[test]
    fn oscillation_counts_on_harmonic_oscillator() {
        // W = x^2: eigenvalues of d^2/dx^2 - x^2 are -(2j+1); the j-th from
        // the top has j sign changes.
        let g = Grid::new(-12.0, 12.0, 2401).unwrap();
        let w = GridFunction::from_fn(g, |x| x * x);
        let op = SchrodingerOp { w, essential_edge: -144.0 };
        let report = eigs_above_edge(
            &op,
            EigOptions { margin: Some(0.5), verify_truncation: false },
        );
        assert!(report.pairs.len() >= 8);
        for (j, pair) in report.pairs.iter().take(8).enumerate() {
            let expect = -(2.0 * j as f64 + 1.0);
            assert!(
                (pair.value - expect).abs() < 1e-3,
                "oscillator level {j}: {} vs {expect}",
                pair.value
            );
            assert_eq!(pair.sign_changes, j, "level {j} sign changes");
        }
    }

    #[test]
    fn potential_shift_moves_spectrum_exactly() {
        let g = Grid::new(-15.0, 15.0, 601).unwrap();
        let w = GridFunction::from_fn(g, |x| -2.0 * (-0.3 * x * x).exp());
        let shift = 0.7;
        let op = SchrodingerOp { w: w.clone(), essential_edge: 0.0 };
        let op_shifted =
            SchrodingerOp { w: w.map(|v| v + shift), essential_edge: -shift };
        let opts = EigOptions { margin: Some(1e-6), verify_truncation: false };
        let a = eigs_above_edge(&op, opts);
        let b = eigs_above_edge(&op_shifted, opts);
        assert_eq!(a.pairs.len(), b.pairs.len());
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert!(
                ((pa.value - shift) - pb.value).abs() < 1e-9,
                "{} - {shift} vs {}",
                pa.value,
                pb.value
            );
        }
    }

    #[test]
    fn eigenvalues_stable_under_domain_enlargement() {
        let g = Grid::new(-20.0, 20.0, 1001).unwrap();
        let w = GridFunction::from_fn(g, |x| -2.0 / x.cosh().powi(2));
        let op = SchrodingerOp { w, essential_edge: 0.0 };
        let small = solve_above(&op, 0.05);
        let big = solve_above(&op.enlarged(), 0.05);
        assert_eq!(small.len(), big.len());
        for (s, b) in small.iter().zip(&big) {
            assert!((s.0 - b.0).abs() < 1e-6, "{} vs {}", s.0, b.0);
        }
    }

    #[test]
    fn connecting_dimension_base_case_and_additivity() {
        let g = Grid::new(-20.0, 20.0, 801).unwrap();
        let a = GridFunction::from_fn(g, |x| 1.5 / x.cosh().powi(2));
        let b = GridFunction::from_fn(g, |x| 0.3 / x.cosh().powi(2));
        let c = GridFunction::from_fn(g, |x| -0.8 / x.cosh().powi(2));
        assert_eq!(connecting_dimension(&a, &a).0, 0);
        let ab = connecting_dimension(&a, &b).0;
        let bc = connecting_dimension(&b, &c).0;
        let ac = connecting_dimension(&a, &c).0;
        assert_eq!(ac, ab + bc, "additivity across three profiles");
    }

    #[test]
    fn orbit_spectrum_constant_at_equilibrium() {
        let g = Grid::new(-20.0, 20.0, 801).unwrap();
        let f = GridFunction::from_fn(g, |x| (-0.2 * x * x).exp());
        let phi = {
            // phi = f^2 - f'' makes f an exact equilibrium of the flagship.
            let fxx = crate::grid::diff2(&f);
            let table = f.zip_map(&fxx, |v, vxx| v * v - vxx);
            PotentialProfile::tabulated(table, 0.0, 1e-2).unwrap()
        };
        let reaction = Reaction::flagship(&phi, g);
        let traj = evolve(&f, 1e-3, 0.5, &reaction, EvolveOptions::default()).unwrap();
        let orbit = spectrum_along_orbit(&traj, 2, 50);
        for lams in &orbit.lambdas {
            for (j, l) in lams.iter().enumerate() {
                let first = orbit.lambdas[0][j];
                assert!(
                    (l - first).abs() < 5e-3,
                    "curve {j} drifted: {l} vs {first}"
                );
            }
        }
        assert!(orbit.min_gap > 0.0);
    }
}
