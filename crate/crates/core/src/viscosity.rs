//! Classical verification lab for smooth sub/supersolution candidates: the
//! radial test functions, pointwise generator residuals, neighborhood
//! certificates around degenerate points, and the comparison diagnostic for
//! lattice solutions.
//!
//! Everything here is pointwise and closed-form; the only grids involved are
//! sampling grids for minimization, never discretizations of the operator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientField;
use crate::domain::ProbeWindow;
use crate::error::{CoreError, Result};
use crate::fd::LatticeFunction;
use crate::rng::Stream;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateKind {
    SupersolutionCandidate,
    SubsolutionCandidate,
}

/// A C^{1,2} function of (x, t) with caller-supplied exact derivatives.
/// The residual machinery trusts them; `consistency_check` is the gate that
/// they match centered differences of the value.
#[derive(Clone)]
pub struct SmoothCandidate<T> {
    pub name: String,
    pub kind: CandidateKind,
    pub dim: usize,
    value: Arc<dyn Fn(&[T], T) -> T + Send + Sync>,
    gradient: Arc<dyn Fn(&[T], T, &mut [T]) + Send + Sync>,
    /// row-major n x n
    hessian: Arc<dyn Fn(&[T], T, &mut [T]) + Send + Sync>,
    time_derivative: Arc<dyn Fn(&[T], T) -> T + Send + Sync>,
}

impl<T: Real> SmoothCandidate<T> {
    pub fn new(
        name: impl Into<String>,
        kind: CandidateKind,
        dim: usize,
        value: impl Fn(&[T], T) -> T + Send + Sync + 'static,
        gradient: impl Fn(&[T], T, &mut [T]) + Send + Sync + 'static,
        hessian: impl Fn(&[T], T, &mut [T]) + Send + Sync + 'static,
        time_derivative: impl Fn(&[T], T) -> T + Send + Sync + 'static,
    ) -> Self {
        SmoothCandidate {
            name: name.into(),
            kind,
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
            time_derivative: Arc::new(time_derivative),
        }
    }

    pub fn constant(name: impl Into<String>, kind: CandidateKind, dim: usize, c: T) -> Self {
        Self::new(
            name,
            kind,
            dim,
            move |_, _| c,
            |_, _, g| g.iter_mut().for_each(|v| *v = T::zero()),
            |_, _, h| h.iter_mut().for_each(|v| *v = T::zero()),
            |_, _| T::zero(),
        )
    }

    /// `x^T Q x + p . x + c + slope * t` with `Q` symmetrized.
    pub fn quadratic(
        name: impl Into<String>,
        kind: CandidateKind,
        q: Vec<T>,
        p: Vec<T>,
        c: T,
        slope: T,
    ) -> Result<Self> {
        let n = p.len();
        if q.len() != n * n || n == 0 {
            return Err(CoreError::domain("quadratic needs q of shape n x n"));
        }
        let mut qs = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                qs[i * n + j] = (q[i * n + j] + q[j * n + i]) * T::half();
            }
        }
        let q_val = qs.clone();
        let q_grad = qs.clone();
        let p_val = p.clone();
        let p_grad = p;
        Ok(Self::new(
            name,
            kind,
            n,
            move |x: &[T], t: T| {
                let mut acc = c + slope * t;
                for i in 0..n {
                    acc += p_val[i] * x[i];
                    for j in 0..n {
                        acc += q_val[i * n + j] * x[i] * x[j];
                    }
                }
                acc
            },
            move |x: &[T], _t: T, g: &mut [T]| {
                for i in 0..n {
                    let mut acc = p_grad[i];
                    for j in 0..n {
                        acc += T::two() * q_grad[i * n + j] * x[j];
                    }
                    g[i] = acc;
                }
            },
            move |_x: &[T], _t: T, h: &mut [T]| {
                for (o, &v) in h.iter_mut().zip(&qs) {
                    *o = T::two() * v;
                }
            },
            move |_, _| slope,
        ))
    }

    pub fn value(&self, x: &[T], t: T) -> T {
        (self.value)(x, t)
    }

    pub fn gradient_vec(&self, x: &[T], t: T) -> Vec<T> {
        let mut g = vec![T::zero(); self.dim];
        (self.gradient)(x, t, &mut g);
        g
    }

    pub fn hessian_mat(&self, x: &[T], t: T) -> Vec<T> {
        let mut h = vec![T::zero(); self.dim * self.dim];
        (self.hessian)(x, t, &mut h);
        h
    }

    pub fn time_derivative(&self, x: &[T], t: T) -> T {
        (self.time_derivative)(x, t)
    }

    /// Pointwise sum; derivative maps add.  Keeps `self`'s kind.
    pub fn add(&self, other: &SmoothCandidate<T>) -> Result<SmoothCandidate<T>> {
        if self.dim != other.dim {
            return Err(CoreError::domain("candidate dimensions differ"));
        }
        let n = self.dim;
        let (av, ag, ah, at) = (
            self.value.clone(),
            self.gradient.clone(),
            self.hessian.clone(),
            self.time_derivative.clone(),
        );
        let (bv, bg, bh, bt) = (
            other.value.clone(),
            other.gradient.clone(),
            other.hessian.clone(),
            other.time_derivative.clone(),
        );
        Ok(SmoothCandidate {
            name: format!("{}+{}", self.name, other.name),
            kind: self.kind,
            dim: n,
            value: Arc::new(move |x, t| av(x, t) + bv(x, t)),
            gradient: Arc::new(move |x, t, g: &mut [T]| {
                ag(x, t, g);
                let mut tmp = vec![T::zero(); n];
                bg(x, t, &mut tmp);
                for (o, v) in g.iter_mut().zip(tmp) {
                    *o += v;
                }
            }),
            hessian: Arc::new(move |x, t, h: &mut [T]| {
                ah(x, t, h);
                let mut tmp = vec![T::zero(); n * n];
                bh(x, t, &mut tmp);
                for (o, v) in h.iter_mut().zip(tmp) {
                    *o += v;
                }
            }),
            time_derivative: Arc::new(move |x, t| at(x, t) + bt(x, t)),
        })
    }

    pub fn scale(&self, factor: T) -> SmoothCandidate<T> {
        let (av, ag, ah, at) = (
            self.value.clone(),
            self.gradient.clone(),
            self.hessian.clone(),
            self.time_derivative.clone(),
        );
        SmoothCandidate {
            name: format!("{}*{}", factor.as_f64(), self.name),
            kind: self.kind,
            dim: self.dim,
            value: Arc::new(move |x, t| factor * av(x, t)),
            gradient: Arc::new(move |x, t, g: &mut [T]| {
                ag(x, t, g);
                g.iter_mut().for_each(|v| *v *= factor);
            }),
            hessian: Arc::new(move |x, t, h: &mut [T]| {
                ah(x, t, h);
                h.iter_mut().for_each(|v| *v *= factor);
            }),
            time_derivative: Arc::new(move |x, t| factor * at(x, t)),
        }
    }
}

impl<T> std::fmt::Debug for SmoothCandidate<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SmoothCandidate({}, {:?})", self.name, self.kind)
    }
}

/// The radial profile `K (||x - x*||^2 + theta)^{gamma/2}` with exact
/// derivatives.  With `theta = 0` it may be evaluated anywhere but
/// differentiated only away from `x*`.
pub fn make_psi<T: Real>(
    x_star: Vec<T>,
    k_amp: T,
    gamma: T,
    theta: T,
) -> Result<SmoothCandidate<T>> {
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(CoreError::domain("gamma must lie in (0, 1)"));
    }
    if !(k_amp > T::zero()) {
        return Err(CoreError::domain("amplitude must be positive"));
    }
    if theta < T::zero() {
        return Err(CoreError::domain("theta must be nonnegative"));
    }
    let n = x_star.len();
    if n == 0 {
        return Err(CoreError::domain("x_star must be nonempty"));
    }
    let s_of = move |c: &[T], x: &[T]| {
        let mut s = theta;
        for i in 0..x.len() {
            let d = x[i] - c[i];
            s += d * d;
        }
        s
    };
    let c_val = x_star.clone();
    let c_grad = x_star.clone();
    let c_hess = x_star.clone();
    let half_g = gamma * T::half();
    Ok(SmoothCandidate::new(
        format!("psi(gamma={}, theta={})", gamma.as_f64(), theta.as_f64()),
        CandidateKind::SupersolutionCandidate,
        n,
        move |x: &[T], _t: T| k_amp * s_of(&c_val, x).powf(half_g),
        move |x: &[T], _t: T, g: &mut [T]| {
            let s = s_of(&c_grad, x);
            let coef = k_amp * gamma * s.powf(half_g - T::one());
            for i in 0..x.len() {
                g[i] = coef * (x[i] - c_grad[i]);
            }
        },
        move |x: &[T], _t: T, h: &mut [T]| {
            let s = s_of(&c_hess, x);
            let lead = k_amp * gamma * s.powf(half_g - T::one());
            let cross = k_amp * gamma * (gamma - T::two()) * s.powf(half_g - T::two());
            let nn = x.len();
            for i in 0..nn {
                let di = x[i] - c_hess[i];
                for j in 0..nn {
                    let dj = x[j] - c_hess[j];
                    h[i * nn + j] = cross * di * dj + if i == j { lead } else { T::zero() };
                }
            }
        },
        |_, _| T::zero(),
    ))
}

/// Admissibility threshold for the radial profile's exponent.
pub fn gamma_threshold<T: Real>(alpha: T, beta: T) -> Result<T> {
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v > T::zero() && v <= T::one()) {
            return Err(CoreError::domain(format!("{name} must lie in (0, 1]")));
        }
    }
    Ok((T::two() * (T::one() - beta)).max(T::one() - alpha))
}

/// `d_t w - b . grad w - Tr(A D2 w)`, `A = (1/2) sigma sigma^T`.  Nonnegative
/// at a point means `w` is a classical supersolution there.
pub fn residual<T: Real>(
    cand: &SmoothCandidate<T>,
    field: &CoefficientField<T>,
    x: &[T],
    t: T,
) -> T {
    debug_assert_eq!(cand.dim, field.dim_state);
    let n = cand.dim;
    let g = cand.gradient_vec(x, t);
    let h = cand.hessian_mat(x, t);
    let b = field.drift_vec(x);
    let a = field.a_matrix(x);
    let mut acc = cand.time_derivative(x, t);
    for i in 0..n {
        acc -= b[i] * g[i];
        for j in 0..n {
            acc -= a[[i, j]] * h[i * n + j];
        }
    }
    acc
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub worst_gradient_rel: f64,
    pub worst_hessian_rel: f64,
    pub pass: bool,
}

/// Gate that the declared derivatives match centered differences of `value`
/// at the samples, to relative tolerance `rel_tol` at difference step `fd_h`.
pub fn consistency_check<T: Real>(
    cand: &SmoothCandidate<T>,
    samples: &[(Vec<T>, T)],
    fd_h: T,
    rel_tol: f64,
) -> Result<ConsistencyReport> {
    if samples.is_empty() {
        return Err(CoreError::domain("no sample points"));
    }
    if !(fd_h > T::zero()) {
        return Err(CoreError::domain("difference step must be positive"));
    }
    let n = cand.dim;
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    for (x, t) in samples {
        if x.len() != n {
            return Err(CoreError::domain("sample dimension mismatch"));
        }
        let g = cand.gradient_vec(x, *t);
        let h = cand.hessian_mat(x, *t);
        let scale_g = g.iter().fold(T::one(), |m, v| m.max(v.abs())).as_f64();
        let scale_h = h.iter().fold(T::one(), |m, v| m.max(v.abs())).as_f64();
        let mut xp = x.clone();
        let mut xm = x.clone();
        for i in 0..n {
            xp[i] = x[i] + fd_h;
            xm[i] = x[i] - fd_h;
            let num = (cand.value(&xp, *t) - cand.value(&xm, *t)) / (T::two() * fd_h);
            worst_g = worst_g.max((num - g[i]).abs().as_f64() / scale_g);
            // pure second difference for the diagonal
            let num_ii = (cand.value(&xp, *t) - T::two() * cand.value(x, *t)
                + cand.value(&xm, *t))
                / (fd_h * fd_h);
            worst_h = worst_h.max((num_ii - h[i * n + i]).abs().as_f64() / scale_h);
            for j in 0..i {
                // mixed centered difference
                let mut pp = x.clone();
                let mut pm = x.clone();
                let mut mp = x.clone();
                let mut mm = x.clone();
                pp[i] += fd_h;
                pp[j] += fd_h;
                pm[i] += fd_h;
                pm[j] -= fd_h;
                mp[i] -= fd_h;
                mp[j] += fd_h;
                mm[i] -= fd_h;
                mm[j] -= fd_h;
                let num_ij = (cand.value(&pp, *t) - cand.value(&pm, *t)
                    - cand.value(&mp, *t)
                    + cand.value(&mm, *t))
                    / (T::of(4.0) * fd_h * fd_h);
                worst_h = worst_h.max((num_ij - h[i * n + j]).abs().as_f64() / scale_h);
            }
            xp[i] = x[i];
            xm[i] = x[i];
        }
    }
    Ok(ConsistencyReport {
        worst_gradient_rel: worst_g,
        worst_hessian_rel: worst_h,
        pass: worst_g <= rel_tol && worst_h <= rel_tol,
    })
}

// ---------------------------------------------------------------------------
// neighborhood certificate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellRow {
    pub radius: f64,
    /// Smallest sampled residual on the shell, over directions and the whole
    /// theta schedule.
    pub min_residual: f64,
    /// Closed-form lower-bound curve (theta -> 0 form) at this radius.
    pub analytic_bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub field: String,
    pub x_star: Vec<f64>,
    pub k_amp: f64,
    pub gamma: f64,
    pub theta_list: Vec<f64>,
    pub xi: f64,
    pub r_declared: f64,
    /// Largest sampled radius such that every shell inside it clears `-3 xi`.
    pub r_certified: f64,
    /// Smallest residual over the certified region (innermost shell when
    /// nothing certifies).
    pub min_residual: f64,
    pub boundary_case: bool,
    pub shells: Vec<ShellRow>,
}

/// Certify `psi_theta` as a classical supersolution on a punctured
/// neighborhood of a declared degenerate point, uniformly over the theta
/// schedule, to slack `3 xi`.
pub fn supersolution_neighborhood<T: Real>(
    field: &CoefficientField<T>,
    x_star: &[T],
    k_amp: T,
    gamma: T,
    theta_list: &[T],
    xi: T,
    num_points: usize,
) -> Result<Certificate> {
    let n = field.dim_state;
    if x_star.len() != n {
        return Err(CoreError::domain("x_star dimension mismatch"));
    }
    let threshold = gamma_threshold(field.meta.alpha, field.meta.beta)?;
    if !(gamma > threshold) {
        return Err(CoreError::domain(format!(
            "gamma = {} does not exceed the admissibility threshold {}",
            gamma.as_f64(),
            threshold.as_f64()
        )));
    }
    let slack = T::one() + field.meta.alpha - T::two() * field.meta.beta;
    if slack < -T::of(1e-9) {
        return Err(CoreError::domain(
            "drift regularity is too weak against the diffusion decay (1 + alpha - 2 beta < 0)",
        ));
    }
    let boundary_case = slack.abs() <= T::of(1e-9);
    if theta_list.is_empty() || theta_list.iter().any(|&t| !(t > T::zero())) {
        return Err(CoreError::domain("theta schedule must be positive"));
    }
    if theta_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(CoreError::domain("theta schedule must be strictly decreasing"));
    }
    if !(xi > T::zero()) {
        return Err(CoreError::domain("xi must be positive"));
    }
    let r_declared = field
        .degenerate_points
        .iter()
        .find(|p| {
            p.point
                .iter()
                .zip(x_star)
                .all(|(a, b)| (*a - *b).abs() <= T::of(1e-12))
        })
        .map(|p| p.radius)
        .ok_or_else(|| {
            CoreError::domain("x_star is not a declared degenerate point of the field")
        })?;

    // directions: axis pairs, padded with stream directions in n >= 2
    let mut dirs: Vec<Vec<T>> = Vec::new();
    for i in 0..n {
        let mut d = vec![T::zero(); n];
        d[i] = T::one();
        dirs.push(d.clone());
        d[i] = -T::one();
        dirs.push(d);
    }
    if n >= 2 {
        let mut stream = Stream::new(0x5eed, 7);
        for _ in 0..4 * n {
            dirs.push(stream.next_direction(n));
        }
    }

    let per_shell = dirs.len() * theta_list.len();
    let num_shells = (num_points / per_shell).max(8);
    let log_lo = -6.0f64;
    let radii: Vec<T> = (0..num_shells)
        .map(|j| {
            let frac = j as f64 / (num_shells - 1) as f64;
            r_declared * T::of(10f64.powf(log_lo * (1.0 - frac)))
        })
        .collect();

    let psis: Vec<SmoothCandidate<T>> = theta_list
        .iter()
        .map(|&th| make_psi(x_star.to_vec(), k_amp, gamma, th))
        .collect::<Result<_>>()?;

    let a = field.meta.alpha;
    let b = field.meta.beta;
    let cb = field.meta.c_b;
    let cs = field.meta.c_sigma;
    let nn = T::from_usize_(n);
    let analytic = |r: T| {
        let t_drift = -gamma * cb * r.powf(a + gamma - T::one());
        let t_upper = -(gamma * cs / nn) * r.powf(T::two() * b + gamma - T::one());
        let t_lower = (T::two() * gamma * (T::one() - gamma * T::half()) / (nn * cs))
            * r.powf(T::two() * b + gamma - T::two());
        k_amp * (t_drift + t_upper + t_lower)
    };

    let floor = -T::of(3.0) * xi;
    let mut shells = Vec::with_capacity(num_shells);
    let mut r_certified = T::zero();
    let mut min_certified = T::infinity();
    let mut prefix_intact = true;
    let mut x = vec![T::zero(); n];
    for &r in &radii {
        let mut shell_min = T::infinity();
        for dir in &dirs {
            for i in 0..n {
                x[i] = x_star[i] + r * dir[i];
            }
            for psi in &psis {
                shell_min = shell_min.min(residual(psi, field, &x, T::zero()));
            }
        }
        shells.push(ShellRow {
            radius: r.as_f64(),
            min_residual: shell_min.as_f64(),
            analytic_bound: analytic(r).as_f64(),
        });
        if prefix_intact {
            if shell_min > floor {
                r_certified = r;
                min_certified = min_certified.min(shell_min);
            } else {
                prefix_intact = false;
            }
        }
    }
    let min_residual = if r_certified > T::zero() {
        min_certified
    } else {
        T::of(shells[0].min_residual)
    };
    Ok(Certificate {
        field: field.tag.clone(),
        x_star: x_star.iter().map(|v| v.as_f64()).collect(),
        k_amp: k_amp.as_f64(),
        gamma: gamma.as_f64(),
        theta_list: theta_list.iter().map(|v| v.as_f64()).collect(),
        xi: xi.as_f64(),
        r_declared: r_declared.as_f64(),
        r_certified: r_certified.as_f64(),
        min_residual: min_residual.as_f64(),
        boundary_case,
        shells,
    })
}

// ---------------------------------------------------------------------------
// comparison diagnostic

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// sup over the window of (u - v) across all probed slices.
    pub lhs: f64,
    /// sup over the window of (u - v) at time zero, clipped at zero.
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks that the worst exceedance of `u` over `v` happens at time zero, up
/// to discretization slack `2 (h + dt) * Lip(initial data)`.
pub fn comparison_diagnostic<T: Real>(
    u: &LatticeFunction<T>,
    v: &LatticeFunction<T>,
    window: &ProbeWindow<T>,
) -> Result<ComparisonReport> {
    let lhs = signed_window_sup(u, v, window)?;
    let (rhs, lip) = initial_gap_and_lip(u, v, window)?;
    let tol = T::two() * (u.grid.h + u.grid.dt()) * lip;
    Ok(ComparisonReport {
        lhs: lhs.as_f64(),
        rhs: rhs.as_f64(),
        tolerance: tol.as_f64(),
        pass: lhs <= rhs + tol,
    })
}

fn signed_window_sup<T: Real>(
    u: &LatticeFunction<T>,
    v: &LatticeFunction<T>,
    window: &ProbeWindow<T>,
) -> Result<T> {
    let diff = u.window_signed_sup(v, window)?;
    Ok(diff)
}

fn initial_gap_and_lip<T: Real>(
    u: &LatticeFunction<T>,
    v: &LatticeFunction<T>,
    window: &ProbeWindow<T>,
) -> Result<(T, T)> {
    let rhs = u.initial_window_gap(v, window)?;
    let lip = u.initial_lipschitz().max(v.initial_lipschitz());
    Ok((rhs, lip))
}

// ---------------------------------------------------------------------------
// additivity of the generator residual

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub worst_rel_defect: f64,
    pub pass: bool,
}

/// `residual(w + v) = residual(w) + residual(v)` exactly (the operator is
/// linear); checked pointwise on the samples to 1e-12 relative.
pub fn residual_additivity_check<T: Real>(
    field: &CoefficientField<T>,
    w: &SmoothCandidate<T>,
    v: &SmoothCandidate<T>,
    samples: &[(Vec<T>, T)],
) -> Result<AdditivityReport> {
    if samples.is_empty() {
        return Err(CoreError::domain("no sample points"));
    }
    let sum = w.add(v)?;
    let mut worst = 0.0f64;
    for (x, t) in samples {
        let rw = residual(w, field, x, *t);
        let rv = residual(v, field, x, *t);
        let rs = residual(&sum, field, x, *t);
        let scale = (T::one() + rw.abs() + rv.abs()).as_f64();
        worst = worst.max((rs - rw - rv).abs().as_f64() / scale);
    }
    Ok(AdditivityReport { worst_rel_defect: worst, pass: worst <= 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{DegeneratePoint, FieldMeta};
    use crate::domain::BoxDomain;
    use crate::fd::{solve, suggest_steps, BoundaryRule, GridSpec};
    use crate::mc::Payoff;
    use proptest::prelude::*;

    fn power_field(
        tag: &str,
        drift_amp: f64,
        alpha: f64,
        beta: f64,
        sigma_amp: f64,
        c_b: f64,
        c_sigma: f64,
        radius: f64,
    ) -> CoefficientField<f64> {
        CoefficientField::scalar(
            tag,
            move |x: f64| drift_amp * x.signum() * x.abs().powf(alpha).min(1.0),
            move |x: f64| sigma_amp * x.abs().powf(beta).min(1.0),
            FieldMeta {
                sup_b: drift_amp.abs(),
                sup_sigma: sigma_amp,
                alpha,
                beta,
                c_b,
                c_sigma,
            },
            vec![DegeneratePoint { point: vec![0.0], radius }],
        )
        .unwrap()
    }

    #[test]
    fn psi_values_at_center_and_on_axis() {
        let psi = make_psi(vec![0.0], 1.0, 0.7, 0.0).unwrap();
        assert!((psi.value(&[2.0], 0.0) - 2f64.powf(0.7)).abs() < 1e-12);
        let psi_t = make_psi(vec![0.5], 2.0, 0.6, 1e-2).unwrap();
        let at_center = psi_t.value(&[0.5], 0.3);
        assert!((at_center - 2.0 * 1e-2f64.powf(0.3)).abs() < 1e-12);
        let g = psi_t.gradient_vec(&[0.5], 0.0);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn psi_rejects_bad_parameters() {
        assert!(make_psi(vec![0.0], 1.0, 1.0, 0.1).is_err());
        assert!(make_psi(vec![0.0], 1.0, 0.0, 0.1).is_err());
        assert!(make_psi(vec![0.0], -1.0, 0.5, 0.1).is_err());
        assert!(make_psi(vec![0.0], 1.0, 0.5, -0.1).is_err());
    }

    #[test]
    fn psi_derivatives_match_centered_differences() {
        let psi = make_psi(vec![0.3, -0.2], 1.4, 0.81, 1e-2).unwrap();
        let samples: Vec<(Vec<f64>, f64)> = vec![
            (vec![0.8, 0.1], 0.0),
            (vec![0.35, -0.15], 0.2),
            (vec![-0.4, 0.6], 0.5),
        ];
        let rep = consistency_check(&psi, &samples, 1e-4, 1e-6).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn thresholds_on_reference_exponent_pairs() {
        assert!((gamma_threshold(1.0f64 / 3.0, 2.0 / 3.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(gamma_threshold(1.0f64, 1.0).unwrap(), 0.0);
        assert!((gamma_threshold(0.5f64, 0.6).unwrap() - 0.8).abs() < 1e-15);
        assert!(gamma_threshold(0.0f64, 0.5).is_err());
        assert!(gamma_threshold(0.5f64, 1.1).is_err());
    }

    #[test]
    fn caloric_polynomial_has_zero_residual() {
        // sigma = 1 keeps A = 1/2 exact in floating point
        let heat = CoefficientField::scalar(
            "unit_heat",
            |_| 0.0,
            |_| 1.0,
            FieldMeta { sup_b: 0.0, sup_sigma: 1.0, alpha: 1.0, beta: 1.0, c_b: 1.0, c_sigma: 1.0 },
            vec![],
        )
        .unwrap();
        // w = x^2 + t: d_t w = 1, Tr(A D2 w) = (1/2) * 2
        let w = SmoothCandidate::quadratic(
            "caloric",
            CandidateKind::SubsolutionCandidate,
            vec![1.0],
            vec![0.0],
            0.0,
            1.0,
        )
        .unwrap();
        for x in [-1.5, 0.0, 0.7, 2.0] {
            assert_eq!(residual(&w, &heat, &[x], 0.3), 0.0);
        }
        let c = SmoothCandidate::constant("c", CandidateKind::SupersolutionCandidate, 1, 4.0);
        assert_eq!(residual(&c, &heat, &[0.5], 0.1), 0.0);
        // sqrt(2) diffusion pairs with w = x^2 + 2 t up to one rounding step
        let heat2 = CoefficientField::scalar(
            "heat",
            |_| 0.0,
            |_| std::f64::consts::SQRT_2,
            FieldMeta { sup_b: 0.0, sup_sigma: 1.5, alpha: 1.0, beta: 1.0, c_b: 1.0, c_sigma: 1.0 },
            vec![],
        )
        .unwrap();
        let w2 = SmoothCandidate::quadratic(
            "caloric2",
            CandidateKind::SubsolutionCandidate,
            vec![1.0],
            vec![0.0],
            0.0,
            2.0,
        )
        .unwrap();
        assert!(residual(&w2, &heat2, &[0.7], 0.3).abs() < 1e-14);
    }

    #[test]
    fn degenerate_power_field_residual_stays_above_slack_on_tiny_ball() {
        // b = |x|^0.5 outward, sigma = |x|^0.75; near the origin the theta
        // floor keeps the residual above -3 xi only on a very small ball
        let f = power_field("halfpow", 1.0, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0);
        let psi = make_psi(vec![0.0], 1.0, 0.81, 1e-4).unwrap();
        let mut min_res = f64::INFINITY;
        for k in 1..=100 {
            let r = 2e-4 * k as f64 / 100.0;
            for s in [-1.0, 1.0] {
                min_res = min_res.min(residual(&psi, &f, &[s * r], 0.0));
            }
        }
        assert!(min_res >= -3e-3, "min residual {min_res}");
        assert!(min_res < 0.0, "the dip below zero is real");
    }

    #[test]
    fn pure_diffusion_certifies_a_positive_radius() {
        let f = power_field("pure_diff", 0.0, 1.0, 0.75, 1.0, 1.0, 1.0, 1.0);
        let cert = supersolution_neighborhood(
            &f,
            &[0.0],
            1.0,
            0.81,
            &[1e-2, 1e-3, 1e-4],
            1e-3,
            10_000,
        )
        .unwrap();
        assert!(cert.r_certified > 0.0, "{cert:?}");
        assert!(cert.min_residual >= -3e-3);
        assert!(!cert.boundary_case);
        assert!(cert.shells.len() >= 100);
    }

    #[test]
    fn cubic_constants_certify_a_positive_radius_in_the_boundary_case() {
        // alpha = 1/3, beta = 2/3: 1 + alpha - 2 beta = 0 exactly
        let f = power_field("cubiclike", 3.0, 1.0 / 3.0, 2.0 / 3.0, 3.0, 3.0, 9.0, 1.0);
        let gamma = 2.0 / 3.0 + 0.05;
        let cert = supersolution_neighborhood(
            &f,
            &[0.0],
            1.0,
            gamma,
            &[1e-2, 1e-3, 1e-4],
            1e-3,
            10_000,
        )
        .unwrap();
        assert!(cert.boundary_case);
        assert!(cert.r_certified > 0.0, "{cert:?}");
    }

    #[test]
    fn gamma_below_threshold_is_refused() {
        let f = power_field("halfpow", 1.0, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0);
        // threshold = max(0.5, 0.5) = 0.5
        let err = supersolution_neighborhood(&f, &[0.0], 1.0, 0.4, &[1e-2], 1e-3, 1000);
        assert!(matches!(err, Err(CoreError::Domain(_))));
        let err = supersolution_neighborhood(&f, &[0.0], 1.0, 0.5, &[1e-2], 1e-3, 1000);
        assert!(matches!(err, Err(CoreError::Domain(_))));
    }

    #[test]
    fn undeclared_center_is_refused() {
        let f = power_field("halfpow", 1.0, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0);
        let err = supersolution_neighborhood(&f, &[0.5], 1.0, 0.81, &[1e-2], 1e-3, 1000);
        assert!(matches!(err, Err(CoreError::Domain(_))));
    }

    #[test]
    fn psi_theta_converges_uniformly_at_rate_theta_half_gamma() {
        let k_amp = 1.3;
        let gamma = 0.7f64;
        let sharp = make_psi(vec![0.0], k_amp, gamma, 0.0).unwrap();
        for theta in [1e-2, 1e-3, 1e-4] {
            let smooth = make_psi(vec![0.0], k_amp, gamma, theta).unwrap();
            let mut worst = 0.0f64;
            let mut x = -2.0;
            while x <= 2.0 {
                worst = worst.max((smooth.value(&[x], 0.0) - sharp.value(&[x], 0.0)).abs());
                x += 0.01;
            }
            assert!(
                worst <= k_amp * theta.powf(gamma / 2.0) + 1e-12,
                "theta {theta}: worst {worst}"
            );
        }
    }

    #[test]
    fn comparison_diagnostic_on_scheme_solutions() {
        let f = CoefficientField::scalar(
            "mix",
            |x: f64| 0.4 * x.sin(),
            |x: f64| 0.5 + 0.2 * x.cos(),
            FieldMeta { sup_b: 0.4, sup_sigma: 0.7, alpha: 1.0, beta: 1.0, c_b: 1.0, c_sigma: 1.0 },
            vec![],
        )
        .unwrap();
        let dom = BoxDomain::interval(-3.0, 3.0).unwrap();
        let steps = suggest_steps(&f, &dom, 0.1, 0.25, &[], 0.95).unwrap();
        let g = GridSpec::new(dom, 0.1, 0.25, steps, BoundaryRule::FrozenDirichlet).unwrap();
        let u = solve(&f, &Payoff::of_scalar("f1", |x: f64| x.tanh() + 0.3), &g).unwrap();
        let v = solve(&f, &Payoff::of_scalar("f2", f64::tanh), &g).unwrap();
        let w = ProbeWindow::new(BoxDomain::interval(-1.0, 1.0).unwrap(), 0.25).unwrap();
        let rep = comparison_diagnostic(&u, &v, &w).unwrap();
        assert!(rep.pass, "{rep:?}");
        // initial gap is exactly 0.3 and the scheme preserves it
        assert!((rep.rhs - 0.3).abs() < 1e-12);
        assert!(rep.lhs <= 0.3 + 1e-12);
        // identical solutions: both sides zero
        let same = comparison_diagnostic(&u, &u, &w).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert_eq!(same.rhs, 0.0);
        assert!(same.pass);
    }

    #[test]
    fn shifted_solution_compares_trivially() {
        let f = CoefficientField::scalar(
            "heat",
            |_| 0.0,
            |_| 1.0,
            FieldMeta { sup_b: 0.0, sup_sigma: 1.0, alpha: 1.0, beta: 1.0, c_b: 1.0, c_sigma: 1.0 },
            vec![],
        )
        .unwrap();
        let dom = BoxDomain::interval(-3.0, 3.0).unwrap();
        let steps = suggest_steps(&f, &dom, 0.1, 0.25, &[], 0.95).unwrap();
        let g = GridSpec::new(dom, 0.1, 0.25, steps, BoundaryRule::FrozenDirichlet).unwrap();
        let u = solve(&f, &Payoff::of_scalar("f", f64::tanh), &g).unwrap();
        let v = solve(&f, &Payoff::of_scalar("f+c", |x: f64| x.tanh() + 0.5), &g).unwrap();
        let w = ProbeWindow::new(BoxDomain::interval(-1.0, 1.0).unwrap(), 0.25).unwrap();
        let rep = comparison_diagnostic(&u, &v, &w).unwrap();
        // u - v = -0.5 uniformly: lhs negative, rhs zero
        assert!((rep.lhs + 0.5).abs() < 1e-12);
        assert_eq!(rep.rhs, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn additivity_of_caloric_and_deficient_candidates() {
        let heat = CoefficientField::scalar(
            "unit_heat",
            |_| 0.0,
            |_| 1.0,
            FieldMeta { sup_b: 0.0, sup_sigma: 1.0, alpha: 1.0, beta: 1.0, c_b: 1.0, c_sigma: 1.0 },
            vec![],
        )
        .unwrap();
        let caloric = SmoothCandidate::quadratic(
            "caloric",
            CandidateKind::SubsolutionCandidate,
            vec![1.0],
            vec![0.0],
            0.0,
            1.0,
        )
        .unwrap();
        // d_t = 1/2, second order term 1: residual = -1/2 exactly
        let lagging = SmoothCandidate::quadratic(
            "lagging",
            CandidateKind::SubsolutionCandidate,
            vec![1.0],
            vec![0.0],
            0.0,
            0.5,
        )
        .unwrap();
        let sum = caloric.add(&lagging).unwrap();
        for x in [-1.0, 0.2, 1.7] {
            assert_eq!(residual(&lagging, &heat, &[x], 0.1), -0.5);
            assert_eq!(residual(&sum, &heat, &[x], 0.1), -0.5);
        }
        let samples: Vec<(Vec<f64>, f64)> =
            (0..20).map(|i| (vec![-2.0 + 0.2 * i as f64], 0.05 * i as f64)).collect();
        let rep = residual_additivity_check(&heat, &caloric, &lagging, &samples).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn residual_is_linear_in_the_candidate() {
        let f = CoefficientField::scalar(
            "mix",
            |x: f64| 0.3 * x.cos(),
            |x: f64| 0.6 + 0.1 * x.sin(),
            FieldMeta { sup_b: 0.3, sup_sigma: 0.7, alpha: 1.0, beta: 1.0, c_b: 1.0, c_sigma: 1.0 },
            vec![],
        )
        .unwrap();
        let w1 = make_psi(vec![0.4], 1.2, 0.6, 1e-2).unwrap();
        let w2 = SmoothCandidate::quadratic(
            "q",
            CandidateKind::SupersolutionCandidate,
            vec![0.7],
            vec![-0.2],
            0.1,
            0.5,
        )
        .unwrap();
        let combo = w1.scale(2.5).add(&w2).unwrap();
        for x in [-1.0, 0.1, 0.9] {
            let lhs = residual(&combo, &f, &[x], 0.2);
            let rhs = 2.5 * residual(&w1, &f, &[x], 0.2) + residual(&w2, &f, &[x], 0.2);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn additivity_holds_for_random_quadratics(
            q1 in -1.0f64..1.0,
            q2 in -1.0f64..1.0,
            p1 in -1.0f64..1.0,
            p2 in -1.0f64..1.0,
            s1 in -1.0f64..1.0,
            s2 in -1.0f64..1.0,
            amp in 0.1f64..1.0,
        ) {
            let f = CoefficientField::scalar(
                "randfield",
                move |x: f64| amp * (x * 1.7).sin(),
                move |x: f64| 0.2 + amp * 0.5 * (x * 0.9).cos().abs(),
                FieldMeta { sup_b: amp, sup_sigma: 0.2 + amp * 0.5, alpha: 1.0, beta: 1.0, c_b: 2.0, c_sigma: 2.0 },
                vec![],
            )
            .unwrap();
            let w = SmoothCandidate::quadratic("w", CandidateKind::SubsolutionCandidate, vec![q1], vec![p1], 0.3, s1).unwrap();
            let v = SmoothCandidate::quadratic("v", CandidateKind::SubsolutionCandidate, vec![q2], vec![p2], -0.1, s2).unwrap();
            let samples: Vec<(Vec<f64>, f64)> =
                (0..100).map(|i| (vec![-2.5 + 0.05 * i as f64], 0.01 * i as f64)).collect();
            let rep = residual_additivity_check(&f, &w, &v, &samples).unwrap();
            prop_assert!(rep.pass, "worst defect {}", rep.worst_rel_defect);
        }
    }
}
