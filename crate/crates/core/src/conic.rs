//! Risk-penalized allocation over the simplex-box polytope.
//!
//! The inner problem is
//!
//! ```text
//! f(t) = max_{pi in Pi} { pi'z - t * sqrt(pi' Sigma pi) }
//! ```
//!
//! which is concave in `pi`. It is solved by accelerated projected gradient
//! ascent (monotone FISTA with backtracking and restart) interleaved with an
//! active-set Newton polish on the current face. Optimality is certified by the
//! Frank-Wolfe gap `max_{y in Pi} g'(y - pi)`, which bounds `f(t) - F(pi)` from
//! above for any concave objective.
//!
//! `f` is strictly decreasing with `f'(t) = -sqrt(pi*' Sigma pi*)`, so its
//! nonnegative root `t*` equals `max_pi pi'z / sqrt(pi' Sigma pi)` and is found
//! by Newton's method safeguarded with bisection.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::estimates::{Allocation, Polytope};

/// Default optimality tolerance of the inner solver (objective scale).
pub const SOLVER_TOL: f64 = 1e-7;
/// Default tolerance on `|f(t*)|`.
pub const ROOT_TOL: f64 = 1e-6;
/// Newton iteration cap in [`find_root`].
pub const ROOT_MAX_ITER: usize = 100;

const INNER_MAX_ITER: usize = 50_000;
const FISTA_BLOCK: usize = 40;
const NEWTON_MAX_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub pi_star: Allocation,
    /// `f(t)` at the returned allocation.
    pub objective: f64,
    /// `sqrt(pi*' Sigma pi*)`.
    pub risk_at_opt: f64,
    pub iterations: usize,
    /// Certified upper bound on `f(t) - objective`.
    pub gap: f64,
    /// Whether `Sigma` was singular and received a small ridge.
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RootResult {
    Root {
        t_star: f64,
        residual: f64,
        pi_at_root: Allocation,
        iterations: usize,
    },
    /// `f(0) = max_pi pi'z < 0`: the decreasing function never reaches zero on `t >= 0`.
    NoNonnegativeRoot { f_at_zero: f64 },
}

impl RootResult {
    pub fn t_star(&self) -> Option<f64> {
        match self {
            RootResult::Root { t_star, .. } => Some(*t_star),
            RootResult::NoNonnegativeRoot { .. } => None,
        }
    }
}

/// Solve the inner concave program at penalty `t`.
pub fn solve_inner(
    z: &[f64],
    sigma: &DMatrix<f64>,
    space: &Polytope,
    t: f64,
    tol: f64,
) -> Result<InnerSolution> {
    InnerProblem::new(sigma, space)?.solve(z, t, tol, None)
}

/// `(f(t), f'(t))` using the envelope derivative.
pub fn f_and_derivative(
    z: &[f64],
    sigma: &DMatrix<f64>,
    space: &Polytope,
    t: f64,
) -> Result<(f64, f64)> {
    let sol = solve_inner(z, sigma, space, t, SOLVER_TOL)?;
    Ok((sol.objective, -sol.risk_at_opt))
}

/// Unique nonnegative root of `f`, or [`RootResult::NoNonnegativeRoot`] when `f(0) < 0`.
pub fn find_root(
    z: &[f64],
    sigma: &DMatrix<f64>,
    space: &Polytope,
    tol: f64,
) -> Result<RootResult> {
    InnerProblem::new(sigma, space)?.find_root(z, tol)
}

/// Euclidean projection of `v` onto the simplex-box polytope.
pub fn project_simplex_box(v: &[f64], space: &Polytope) -> Result<Allocation> {
    if v.len() != space.dim() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for {} programs",
            v.len(),
            space.dim()
        )));
    }
    if let Some(j) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("coordinate {j} of projection input")));
    }
    let mut out = vec![0.0; v.len()];
    project_into(v, space.lower(), space.upper(), &mut out);
    Ok(Allocation::from_trusted(out))
}

/// Projection by bisection on the multiplier of `sum(pi) = 1`, finished exactly
/// once the clamping pattern is fixed on the bracket.
fn project_into(v: &[f64], lower: &[f64], upper: &[f64], out: &mut [f64]) {
    let n = v.len();
    let h = |mu: f64| -> f64 {
        (0..n)
            .map(|j| (v[j] - mu).clamp(lower[j], upper[j]))
            .sum::<f64>()
    };
    let pattern_eq = |a: f64, b: f64| -> bool {
        (0..n).all(|j| clamp_state(v[j] - a, lower[j], upper[j]) == clamp_state(v[j] - b, lower[j], upper[j]))
    };
    // h(lo) = sum(upper) >= 1 and h(hi) = sum(lower) <= 1
    let mut lo = (0..n).map(|j| v[j] - upper[j]).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|j| v[j] - lower[j]).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        if pattern_eq(lo, hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let hm = h(mid);
        if hm > 1.0 {
            lo = mid;
        } else if hm < 1.0 {
            hi = mid;
        } else {
            lo = mid;
            hi = mid;
            break;
        }
    }
    // h is affine on [lo, hi]: solve it exactly using the pattern at the midpoint
    let mid = 0.5 * (lo + hi);
    let mut fixed = 0.0;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for j in 0..n {
        match clamp_state(v[j] - mid, lower[j], upper[j]) {
            0 => fixed += lower[j],
            2 => fixed += upper[j],
            _ => {
                free_sum += v[j];
                free += 1;
            }
        }
    }
    let mu = if free > 0 {
        ((free_sum + fixed - 1.0) / free as f64).clamp(lo, hi)
    } else {
        mid
    };
    for j in 0..n {
        out[j] = (v[j] - mu).clamp(lower[j], upper[j]);
    }
}

fn clamp_state(x: f64, a: f64, b: f64) -> u8 {
    if x <= a {
        0
    } else if x >= b {
        2
    } else {
        1
    }
}

/// A fixed `(Sigma, Pi)` pair, reusable across many `z` and `t`.
#[derive(Debug, Clone)]
pub struct InnerProblem {
    dim: usize,
    /// Row-major, possibly ridge-regularized.
    sigma: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lambda_max: f64,
    min_diag: f64,
    regularized: bool,
}

/// Relative eigenvalue floor below which `Sigma` is treated as singular.
const SINGULAR_RELATIVE: f64 = 1e-10;
const RIDGE_RELATIVE: f64 = 1e-10;

impl InnerProblem {
    pub fn new(sigma: &DMatrix<f64>, space: &Polytope) -> Result<Self> {
        let j = space.dim();
        if sigma.nrows() != j || sigma.ncols() != j {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, polytope has {} programs",
                sigma.nrows(),
                sigma.ncols(),
                j
            )));
        }
        let mut s = sigma.clone();
        for a in 0..j {
            for b in 0..j {
                if !s[(a, b)].is_finite() {
                    return Err(Error::NonFinite(format!("covariance entry ({a}, {b})")));
                }
            }
        }
        let scale = (0..j).map(|a| s[(a, a)]).sum::<f64>() / j as f64;
        if scale <= 0.0 {
            return Err(Error::NotPsd {
                min_eigenvalue: scale,
            });
        }
        for a in 0..j {
            for b in (a + 1)..j {
                if (s[(a, b)] - s[(b, a)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidConfig(format!(
                        "covariance is not symmetric at ({a}, {b})"
                    )));
                }
                let m = 0.5 * (s[(a, b)] + s[(b, a)]);
                s[(a, b)] = m;
                s[(b, a)] = m;
            }
        }
        let eig = SymmetricEigen::new(s.clone()).eigenvalues;
        let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let max_eig = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if min_eig < -1e-8 * scale {
            return Err(Error::NotPsd {
                min_eigenvalue: min_eig,
            });
        }
        let regularized = min_eig <= SINGULAR_RELATIVE * scale;
        if regularized {
            let ridge = RIDGE_RELATIVE * scale;
            for a in 0..j {
                s[(a, a)] += ridge;
            }
        }
        let min_diag = (0..j).map(|a| s[(a, a)]).fold(f64::INFINITY, f64::min);
        let mut row_major = Vec::with_capacity(j * j);
        for a in 0..j {
            for b in 0..j {
                row_major.push(s[(a, b)]);
            }
        }
        Ok(Self {
            dim: j,
            sigma: row_major,
            lower: space.lower().to_vec(),
            upper: space.upper().to_vec(),
            lambda_max: max_eig.max(min_diag),
            min_diag,
            regularized,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_regularized(&self) -> bool {
        self.regularized
    }

    fn sigma_times(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for (a, o) in out.iter_mut().enumerate() {
            let row = &self.sigma[a * n..(a + 1) * n];
            *o = row.iter().zip(x).map(|(s, v)| s * v).sum();
        }
    }

    /// Objective, risk, and `Sigma x` (into `u`).
    fn eval(&self, x: &[f64], z: &[f64], t: f64, u: &mut [f64]) -> (f64, f64) {
        self.sigma_times(x, u);
        let q: f64 = x.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let s = q.max(0.0).sqrt();
        let lin: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
        (lin - t * s, s)
    }

    fn gradient(z: &[f64], t: f64, s: f64, u: &[f64], g: &mut [f64]) {
        for k in 0..g.len() {
            g[k] = z[k] - t * u[k] / s;
        }
    }

    /// `argmax_{y in Pi} c'y` by filling the highest coefficients first.
    fn lp_argmax(&self, c: &[f64], order: &mut Vec<usize>, y: &mut [f64]) {
        order.clear();
        order.extend(0..self.dim);
        order.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
        y.copy_from_slice(&self.lower);
        let mut rem = 1.0 - self.lower.iter().sum::<f64>();
        for &k in order.iter() {
            if rem <= 0.0 {
                break;
            }
            let add = (self.upper[k] - self.lower[k]).min(rem);
            y[k] += add;
            rem -= add;
        }
    }

    fn fw_gap(&self, x: &[f64], g: &[f64], order: &mut Vec<usize>, y: &mut [f64]) -> f64 {
        self.lp_argmax(g, order, y);
        y.iter()
            .zip(x)
            .zip(g)
            .map(|((yv, xv), gv)| gv * (yv - xv))
            .sum::<f64>()
            .max(0.0)
    }

    fn finish(&self, x: Vec<f64>, z: &[f64], t: f64, iterations: usize, gap: f64) -> InnerSolution {
        let mut u = vec![0.0; self.dim];
        let (objective, risk) = self.eval(&x, z, t, &mut u);
        InnerSolution {
            pi_star: Allocation::from_trusted(x),
            objective,
            risk_at_opt: risk,
            iterations,
            gap,
            regularized: self.regularized,
        }
    }

    /// Maximize `pi'z - t sqrt(pi' Sigma pi)`, optionally warm-started.
    pub fn solve(&self, z: &[f64], t: f64, tol: f64, warm: Option<&[f64]>) -> Result<InnerSolution> {
        let n = self.dim;
        if z.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "z has length {}, problem has {} programs",
                z.len(),
                n
            )));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidConfig(format!("penalty t = {t} must be finite and >= 0")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance {tol} must be > 0")));
        }
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("z[{k}]")));
        }
        let mut order = Vec::with_capacity(n);
        let mut y = vec![0.0; n];
        if n == 1 {
            return Ok(self.finish(vec![1.0], z, t, 0, 0.0));
        }
        if t == 0.0 {
            self.lp_argmax(z, &mut order, &mut y);
            return Ok(self.finish(y, z, t, 0, 0.0));
        }

        let mut x = match warm {
            Some(w) if w.len() == n && self.feasible(w) => w.to_vec(),
            _ => {
                self.lp_argmax(z, &mut order, &mut y);
                y.clone()
            }
        };
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut lipschitz = None;
        let mut iterations = 0usize;
        let mut best_gap = f64::INFINITY;

        while iterations < INNER_MAX_ITER {
            iterations += self.active_set_newton(&mut x, z, t);
            let (obj, s) = self.eval(&x, z, t, &mut u);
            Self::gradient(z, t, s, &u, &mut g);
            let gap = self.fw_gap(&x, &g, &mut order, &mut y);
            best_gap = best_gap.min(gap);
            if gap <= tol * (1.0 + obj.abs()) {
                return Ok(self.finish(x, z, t, iterations, gap));
            }
            iterations += self.fista(&mut x, z, t, FISTA_BLOCK, &mut lipschitz);
        }
        let mut u = vec![0.0; n];
        let (obj, _) = self.eval(&x, z, t, &mut u);
        Err(Error::IterationLimit {
            what: "inner solver",
            iterations,
            best: obj,
        })
    }

    fn feasible(&self, w: &[f64]) -> bool {
        let sum: f64 = w.iter().sum();
        (sum - 1.0).abs() <= 1e-12
            && w
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    /// Monotone FISTA with backtracking; `x` is replaced by the best iterate.
    fn fista(&self, x: &mut [f64], z: &[f64], t: f64, steps: usize, lip: &mut Option<f64>) -> usize {
        let n = self.dim;
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut point = vec![0.0; n];
        let (mut fx, sx) = self.eval(x, z, t, &mut u);
        let mut l = lip.unwrap_or_else(|| (t * self.lambda_max / sx.max(1e-300)).max(1e-12));
        let mut yv = x.to_vec();
        let mut theta = 1.0f64;
        for _ in 0..steps {
            let (fy, sy) = self.eval(&yv, z, t, &mut u);
            Self::gradient(z, t, sy, &u, &mut g);
            let mut fnew;
            loop {
                for k in 0..n {
                    point[k] = yv[k] + g[k] / l;
                }
                project_into(&point, &self.lower, &self.upper, &mut trial);
                let mut lin = 0.0;
                let mut sq = 0.0;
                for k in 0..n {
                    let d = trial[k] - yv[k];
                    lin += g[k] * d;
                    sq += d * d;
                }
                fnew = self.eval(&trial, z, t, &mut u).0;
                if fnew >= fy + lin - 0.5 * l * sq - 1e-15 * fy.abs() || l > 1e300 {
                    break;
                }
                l *= 2.0;
            }
            if fnew > fx {
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let beta = (theta - 1.0) / theta_next;
                for k in 0..n {
                    yv[k] = trial[k] + beta * (trial[k] - x[k]);
                }
                project_into(&yv.clone(), &self.lower, &self.upper, &mut yv);
                x.copy_from_slice(&trial);
                fx = fnew;
                theta = theta_next;
            } else {
                // restart from the best point
                yv.copy_from_slice(x);
                theta = 1.0;
            }
            l *= 0.9;
        }
        *lip = Some(l);
        steps
    }

    /// Newton steps on the free coordinates of the current face, with bound
    /// blocking and multiplier-based release. Never decreases the objective.
    fn active_set_newton(&self, x: &mut [f64], z: &[f64], t: f64) -> usize {
        let n = self.dim;
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        let movable: Vec<bool> = (0..n).map(|k| self.upper[k] > self.lower[k]).collect();
        let mut free: Vec<bool> = (0..n)
            .map(|k| movable[k] && x[k] > self.lower[k] && x[k] < self.upper[k])
            .collect();
        let mut steps = 0;
        let mut cand = vec![0.0; n];
        while steps < NEWTON_MAX_STEPS {
            steps += 1;
            let (fx, s) = self.eval(x, z, t, &mut u);
            Self::gradient(z, t, s, &u, &mut g);
            let idx: Vec<usize> = (0..n).filter(|&k| free[k]).collect();
            let m = idx.len();
            let mut moved = false;
            if m >= 2 {
                let Some(d) = self.newton_direction(&idx, &g, &u, s, t) else {
                    return steps;
                };
                let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if dmax > 1e-15 {
                    let mut alpha_max = f64::INFINITY;
                    let mut blocking = None;
                    for (i, &k) in idx.iter().enumerate() {
                        let step = if d[i] < 0.0 {
                            (x[k] - self.lower[k]) / -d[i]
                        } else if d[i] > 0.0 {
                            (self.upper[k] - x[k]) / d[i]
                        } else {
                            f64::INFINITY
                        };
                        if step < alpha_max {
                            alpha_max = step;
                            blocking = Some(k);
                        }
                    }
                    let mut alpha = alpha_max.min(1.0);
                    let hits_bound = alpha_max <= 1.0;
                    let mut accepted = false;
                    for _ in 0..40 {
                        cand.copy_from_slice(x);
                        for (i, &k) in idx.iter().enumerate() {
                            cand[k] = (x[k] + alpha * d[i]).clamp(self.lower[k], self.upper[k]);
                        }
                        let mut uc = vec![0.0; n];
                        let fc = self.eval(&cand, z, t, &mut uc).0;
                        if fc >= fx - 1e-15 * fx.abs().max(1.0) {
                            accepted = true;
                            break;
                        }
                        alpha *= 0.5;
                    }
                    if !accepted {
                        return steps;
                    }
                    let full = hits_bound && alpha == alpha_max.min(1.0);
                    x.copy_from_slice(&cand);
                    if full {
                        if let Some(k) = blocking {
                            x[k] = if d[idx.iter().position(|&i| i == k).unwrap()] < 0.0 {
                                self.lower[k]
                            } else {
                                self.upper[k]
                            };
                            free[k] = false;
                        }
                    }
                    renormalize(x, &free, &self.lower, &self.upper);
                    moved = dmax * alpha > 1e-15;
                }
            }
            if moved {
                continue;
            }
            // stationary on this face: release the worst multiplier violator
            let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let eps = 1e-12 * (1.0 + gmax);
            if m >= 1 {
                let mu = idx.iter().map(|&k| g[k]).sum::<f64>() / m as f64;
                let mut worst = None;
                let mut worst_v = eps;
                for k in 0..n {
                    if free[k] || !movable[k] {
                        continue;
                    }
                    let viol = if x[k] <= self.lower[k] { g[k] - mu } else { mu - g[k] };
                    if viol > worst_v {
                        worst_v = viol;
                        worst = Some(k);
                    }
                }
                match worst {
                    Some(k) => free[k] = true,
                    None => return steps,
                }
            } else {
                // vertex of the box: pair the best raise with the best cut
                let raise = (0..n)
                    .filter(|&k| movable[k] && x[k] <= self.lower[k])
                    .max_by(|&a, &b| g[a].total_cmp(&g[b]));
                let cut = (0..n)
                    .filter(|&k| movable[k] && x[k] >= self.upper[k])
                    .min_by(|&a, &b| g[a].total_cmp(&g[b]));
                match (raise, cut) {
                    (Some(a), Some(b)) if g[a] - g[b] > eps => {
                        free[a] = true;
                        free[b] = true;
                    }
                    _ => return steps,
                }
            }
        }
        steps
    }

    /// Solve `[H 1; 1' 0] [d; nu] = [-g; 0]` on the free index set.
    fn newton_direction(&self, idx: &[usize], g: &[f64], u: &[f64], s: f64, t: f64) -> Option<Vec<f64>> {
        let m = idx.len();
        let n = self.dim;
        let size = m + 1;
        let mut a = vec![0.0; size * size];
        let mut rhs = vec![0.0; size];
        let s3 = s * s * s;
        for (i, &ki) in idx.iter().enumerate() {
            for (j, &kj) in idx.iter().enumerate() {
                // H = -t (Sigma / s - u u' / s^3)
                a[i * size + j] = -t * (self.sigma[ki * n + kj] / s - u[ki] * u[kj] / s3);
            }
            a[i * size + m] = 1.0;
            a[m * size + i] = 1.0;
            rhs[i] = -g[ki];
        }
        let sol = solve_dense(&mut a, &mut rhs, size)?;
        Some(sol[..m].to_vec())
    }

    /// Nonnegative root of `f` via safeguarded Newton.
    pub fn find_root(&self, z: &[f64], tol: f64) -> Result<RootResult> {
        self.find_root_with(z, tol, SOLVER_TOL.min(tol * 0.1), ROOT_MAX_ITER)
    }

    pub fn find_root_with(
        &self,
        z: &[f64],
        tol: f64,
        inner_tol: f64,
        max_iter: usize,
    ) -> Result<RootResult> {
        if !(tol > 0.0) {
            return Err(Error::InvalidConfig(format!("root tolerance {tol} must be > 0")));
        }
        let at_zero = self.solve(z, 0.0, inner_tol, None)?;
        let f0 = at_zero.objective;
        if f0 < 0.0 {
            return Ok(RootResult::NoNonnegativeRoot { f_at_zero: f0 });
        }
        if f0 <= tol {
            return Ok(RootResult::Root {
                t_star: 0.0,
                residual: f0.abs(),
                pi_at_root: at_zero.pi_star,
                iterations: 0,
            });
        }
        let t0 = f0 / self.min_diag.sqrt();
        let mut t_lo = 0.0f64;
        let mut t_hi: Option<f64> = None;
        let mut t = t0;
        let mut warm = at_zero.pi_star.into_weights();
        let mut prev_abs_f = f64::INFINITY;
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for iter in 1..=max_iter {
            let sol = self.solve(z, t, inner_tol, Some(&warm))?;
            let f = sol.objective;
            let df = -sol.risk_at_opt;
            warm = sol.pi_star.weights().to_vec();
            if best.as_ref().is_none_or(|b| f.abs() < b.1) {
                best = Some((t, f.abs(), warm.clone()));
            }
            if f.abs() <= tol {
                return Ok(RootResult::Root {
                    t_star: t,
                    residual: f.abs(),
                    pi_at_root: sol.pi_star,
                    iterations: iter,
                });
            }
            if f > 0.0 {
                t_lo = t_lo.max(t);
            } else {
                t_hi = Some(t_hi.map_or(t, |h| h.min(t)));
            }
            if let Some(h) = t_hi {
                if h - t_lo <= 1e-15 * h.max(1.0) {
                    let (bt, bf, bw) = best.expect("at least one evaluation");
                    return Ok(RootResult::Root {
                        t_star: bt,
                        residual: bf,
                        pi_at_root: Allocation::from_trusted(bw),
                        iterations: iter,
                    });
                }
            }
            let newton = if df < 0.0 { t - f / df } else { f64::NAN };
            let slow = f.abs() > 0.5 * prev_abs_f;
            prev_abs_f = f.abs();
            t = match t_hi {
                Some(h) => {
                    if newton.is_finite() && newton > t_lo && newton < h && !slow {
                        newton
                    } else {
                        0.5 * (t_lo + h)
                    }
                }
                None => {
                    if newton.is_finite() && newton > t_lo && !slow {
                        newton
                    } else {
                        // expand the bracket geometrically
                        2.0 * t.max(t0)
                    }
                }
            };
        }
        Err(Error::IterationLimit {
            what: "root finder",
            iterations: max_iter,
            best: best.map_or(f64::NAN, |b| b.0),
        })
    }
}

/// Push the rounding drift of `sum(x) = 1` onto a free coordinate.
fn renormalize(x: &mut [f64], free: &[bool], lower: &[f64], upper: &[f64]) {
    let drift = 1.0 - x.iter().sum::<f64>();
    if drift == 0.0 {
        return;
    }
    if let Some(k) = (0..x.len())
        .filter(|&k| free[k])
        .max_by(|&a, &b| x[a].total_cmp(&x[b]))
    {
        x[k] = (x[k] + drift).clamp(lower[k], upper[k]);
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in (col + 1)..n {
            let factor = a[r * n + col] / a[col * n + col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= factor * a[col * n + k];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for k in (r + 1)..n {
            acc -= a[r * n + k] * x[k];
        }
        x[r] = acc / a[r * n + r];
        if !x[r].is_finite() {
            return None;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
    }

    #[test]
    fn t_zero_is_the_best_vertex() {
        let space = Polytope::simplex(3).unwrap();
        let sol = solve_inner(&[0.3, 1.2, -0.5], &diag(&[1.0, 4.0, 0.1]), &space, 0.0, 1e-9).unwrap();
        assert_eq!(sol.pi_star.weights(), &[0.0, 1.0, 0.0]);
        assert_eq!(sol.objective, 1.2);
    }

    #[test]
    fn single_program_is_closed_form() {
        let space = Polytope::simplex(1).unwrap();
        let sol = solve_inner(&[2.0], &diag(&[0.25]), &space, 3.0, 1e-9).unwrap();
        assert_eq!(sol.pi_star.weights(), &[1.0]);
        assert!((sol.objective - (2.0 - 3.0 * 0.5)).abs() < 1e-15);
        let (f, df) = f_and_derivative(&[2.0], &diag(&[0.25]), &space, 7.0).unwrap();
        assert!((f - (2.0 - 3.5)).abs() < 1e-15);
        assert!((df + 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_program_root() {
        let space = Polytope::simplex(1).unwrap();
        let r = find_root(&[2.0], &diag(&[0.25]), &space, ROOT_TOL).unwrap();
        assert!((r.t_star().unwrap() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn negative_start_has_no_root() {
        let space = Polytope::simplex(3).unwrap();
        let r = find_root(&[-1.0, -0.2, -3.0], &diag(&[1.0, 1.0, 1.0]), &space, ROOT_TOL).unwrap();
        assert!(matches!(r, RootResult::NoNonnegativeRoot { f_at_zero } if f_at_zero == -0.2));
    }

    #[test]
    fn projection_examples() {
        let space = Polytope::simplex(2).unwrap();
        let p = project_simplex_box(&[2.0, 0.0], &space).unwrap();
        assert_eq!(p.weights(), &[1.0, 0.0]);
        let p = project_simplex_box(&[0.3, 0.7], &space).unwrap();
        assert!((p.weights()[0] - 0.3).abs() < 1e-15 && (p.weights()[1] - 0.7).abs() < 1e-15);
        let boxed = Polytope::new(vec![0.1, 0.0, 0.2], vec![0.5, 0.6, 0.9]).unwrap();
        let p = project_simplex_box(&[5.0, -3.0, 0.4], &boxed).unwrap();
        assert!(boxed.contains(p.weights(), 1e-12));
    }

    #[test]
    fn singular_covariance_is_regularized() {
        let space = Polytope::simplex(2).unwrap();
        let sigma = DMatrix::from_element(2, 2, 1.0);
        let sol = solve_inner(&[1.0, 0.5], &sigma, &space, 1.0, 1e-9).unwrap();
        assert!(sol.regularized);
        assert!(sol.risk_at_opt > 0.0);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let space = Polytope::simplex(2).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            solve_inner(&[1.0, 0.5], &sigma, &space, 1.0, 1e-9),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn box_bounds_bind() {
        // with t = 0 the LP fills the best program up to its cap
        let space = Polytope::new(vec![0.1, 0.0, 0.0], vec![0.5, 0.6, 1.0]).unwrap();
        let sol = solve_inner(&[3.0, 2.0, 1.0], &diag(&[1.0, 1.0, 1.0]), &space, 0.0, 1e-9).unwrap();
        let w = sol.pi_star.weights();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15 && w[2] == 0.0);
    }
}
