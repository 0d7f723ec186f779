//! Euler-Maruyama simulation of the (regularised) dynamics and Monte Carlo
//! estimation of path functionals.
//!
//! Every normal increment is a pure function of `(seed, path, step, k)`
//! through the counter generator in [`crate::rng`], and every reduction goes
//! through [`crate::scalar::pairwise_sum`] in path order.  Together these make
//! all estimates bit-identical across rerun, thread count and scheduling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientField;
use crate::error::{CoreError, Result};
use crate::rng::normal;
use crate::scalar::{mean_and_sd, Real};

/// Named scalar function of the state.  `declared_sup` is the caller's bound
/// on `|f|`; it is trusted, not measured, and gates the fdd functionals that
/// require `|f| <= 1`.
#[derive(Clone)]
pub struct Payoff<T> {
    pub name: String,
    pub declared_sup: Option<T>,
    f: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
}

impl<T: Real> Payoff<T> {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Payoff { name: name.into(), declared_sup: None, f: Arc::new(f) }
    }

    pub fn bounded(
        name: impl Into<String>,
        sup: T,
        f: impl Fn(&[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Payoff { name: name.into(), declared_sup: Some(sup), f: Arc::new(f) }
    }

    /// Payoff of the first coordinate; enough for the scalar catalog.
    pub fn of_scalar(
        name: impl Into<String>,
        f: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        Payoff {
            name: name.into(),
            declared_sup: None,
            f: Arc::new(move |x: &[T]| f(x[0])),
        }
    }

    pub fn with_sup(mut self, sup: T) -> Self {
        self.declared_sup = Some(sup);
        self
    }

    pub fn eval(&self, x: &[T]) -> T {
        (self.f)(x)
    }
}

impl<T> std::fmt::Debug for Payoff<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Payoff({})", self.name)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MCEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub num_samples: usize,
    pub seed: u64,
}

impl<T: Real> MCEstimate<T> {
    /// `|value - target| <= k * std_error + slack`
    pub fn within(&self, target: T, k: T, slack: T) -> bool {
        (self.value - target).abs() <= k * self.std_error + slack
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig<T> {
    pub x0: Vec<T>,
    pub t_final: T,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl<T: Real> SimConfig<T> {
    pub fn dt(&self) -> T {
        self.t_final / T::from_usize_(self.steps)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.x0.len() != dim {
            return Err(CoreError::domain("x0 dimension mismatch"));
        }
        if !(self.t_final > T::zero()) {
            return Err(CoreError::domain("t_final must be positive"));
        }
        if self.steps == 0 || self.n_paths == 0 {
            return Err(CoreError::domain("steps and n_paths must be >= 1"));
        }
        Ok(())
    }
}

/// Map a probe time onto the step grid; the time must sit on a node.
pub fn snap_index<T: Real>(t: T, dt: T, steps: usize) -> Result<usize> {
    let ratio = (t / dt).as_f64();
    let idx = ratio.round();
    if idx < 0.0 || idx > steps as f64 {
        return Err(CoreError::domain(format!("time {t} outside [0, {steps} steps]")));
    }
    let idx = idx as usize;
    let tol = T::of(1e-9) * T::one().max(dt * T::from_usize_(steps));
    if (dt * T::from_usize_(idx) - t).abs() > tol {
        return Err(CoreError::domain(format!(
            "time {t} does not sit on the step grid (dt = {dt})"
        )));
    }
    Ok(idx)
}

/// States of `n_paths` independent trajectories recorded at a fixed list of
/// grid times.  Layout is path-major: each path owns a contiguous block of
/// `record_times.len() * dim` scalars, so joint functionals read one slice.
pub struct PathEnsemble<T> {
    pub dim: usize,
    pub record_times: Vec<T>,
    pub n_paths: usize,
    pub dt: T,
    pub seed: u64,
    data: Vec<T>,
}

impl<T: Real> PathEnsemble<T> {
    /// Simulate `field` from `cfg.x0` and record the state at each of
    /// `record_times` (grid nodes, strictly sorted, time 0 allowed).
    pub fn simulate(
        field: &CoefficientField<T>,
        cfg: &SimConfig<T>,
        record_times: &[T],
    ) -> Result<Self> {
        cfg.validate(field.dim_state)?;
        if record_times.is_empty() {
            return Err(CoreError::domain("record_times must be nonempty"));
        }
        if record_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CoreError::domain("record_times must be strictly increasing"));
        }
        let dt = cfg.dt();
        let record_steps: Vec<usize> = record_times
            .iter()
            .map(|&t| snap_index(t, dt, cfg.steps))
            .collect::<Result<_>>()?;

        let n = field.dim_state;
        let m = field.dim_noise;
        let block = record_steps.len() * n;
        let mut data = vec![T::zero(); cfg.n_paths * block];
        let sqrt_dt = dt.sqrt();

        data.par_chunks_mut(block).enumerate().for_each(|(path, out)| {
            let mut x = cfg.x0.clone();
            let mut b = vec![T::zero(); n];
            let mut s = vec![T::zero(); n * m];
            let mut rec = 0usize;
            let path = path as u64;
            for step in 0..=cfg.steps {
                while rec < record_steps.len() && record_steps[rec] == step {
                    out[rec * n..(rec + 1) * n].copy_from_slice(&x);
                    rec += 1;
                }
                if step == cfg.steps {
                    break;
                }
                field.drift_into(&x, &mut b);
                field.diffusion_into(&x, &mut s);
                for k in 0..m {
                    let z: T = normal(cfg.seed, path, step as u64, k as u64);
                    let dw = sqrt_dt * z;
                    for i in 0..n {
                        x[i] += s[i * m + k] * dw;
                    }
                }
                for i in 0..n {
                    x[i] += b[i] * dt;
                }
            }
            debug_assert_eq!(rec, record_steps.len());
        });

        Ok(PathEnsemble {
            dim: n,
            record_times: record_times.to_vec(),
            n_paths: cfg.n_paths,
            dt,
            seed: cfg.seed,
            data,
        })
    }

    /// Record every `stride`-th step (plus the final time), for modulus and
    /// other whole-path diagnostics.
    pub fn simulate_dense(
        field: &CoefficientField<T>,
        cfg: &SimConfig<T>,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(CoreError::domain("stride must be >= 1"));
        }
        let dt = cfg.dt();
        let mut times: Vec<T> = (0..=cfg.steps)
            .step_by(stride)
            .map(|k| dt * T::from_usize_(k))
            .collect();
        if *times.last().expect("nonempty") < cfg.t_final {
            times.push(cfg.t_final);
        }
        Self::simulate(field, cfg, &times)
    }

    pub fn state(&self, path: usize, time_index: usize) -> &[T] {
        let block = self.record_times.len() * self.dim;
        let off = path * block + time_index * self.dim;
        &self.data[off..off + self.dim]
    }

    fn reduce(&self, values: Vec<T>) -> MCEstimate<T> {
        let (mean, sd) = mean_and_sd(&values);
        MCEstimate {
            value: mean,
            std_error: sd / T::from_usize_(values.len()).sqrt(),
            num_samples: values.len(),
            seed: self.seed,
        }
    }

    /// Estimate `E f(X_t)` at the recorded time with the given index.
    pub fn estimate(&self, time_index: usize, payoff: &Payoff<T>) -> MCEstimate<T> {
        assert!(time_index < self.record_times.len(), "time index out of range");
        let values: Vec<T> = (0..self.n_paths)
            .into_par_iter()
            .map(|p| payoff.eval(self.state(p, time_index)))
            .collect();
        self.reduce(values)
    }

    /// Estimate `E g(X_{t_1}, ..., X_{t_r})`; `g` sees the concatenation of
    /// the recorded states in time order.
    pub fn estimate_joint(&self, g: impl Fn(&[T]) -> T + Sync) -> MCEstimate<T> {
        let block = self.record_times.len() * self.dim;
        let values: Vec<T> = self.data.par_chunks(block).map(|path| g(path)).collect();
        self.reduce(values)
    }

    /// Estimate `E |X_t - X_s|^4` between two recorded times.
    pub fn fourth_moment_increment(&self, i: usize, j: usize) -> MCEstimate<T> {
        let dim = self.dim;
        let block = self.record_times.len() * dim;
        let values: Vec<T> = self
            .data
            .par_chunks(block)
            .map(|path| {
                let a = &path[i * dim..(i + 1) * dim];
                let b = &path[j * dim..(j + 1) * dim];
                let mut sq = T::zero();
                for k in 0..dim {
                    let d = a[k] - b[k];
                    sq += d * d;
                }
                sq * sq
            })
            .collect();
        self.reduce(values)
    }

    fn recorded_index(&self, t: T) -> Result<usize> {
        let tol = T::of(1e-9) * T::one().max(*self.record_times.last().expect("nonempty"));
        self.record_times
            .iter()
            .position(|&u| (u - t).abs() <= tol)
            .ok_or_else(|| CoreError::domain(format!("time {t} was not recorded")))
    }
}

// ---------------------------------------------------------------------------
// u^eps estimation

/// Estimate `u(x, t) = E f(X_t)` for paths started at `x` (elapsed-time
/// convention).  `t = 0` evaluates the payoff directly.
pub fn estimate_u<T: Real>(
    field: &CoefficientField<T>,
    payoff: &Payoff<T>,
    x: &[T],
    t: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate<T>> {
    if t < T::zero() {
        return Err(CoreError::domain("t must be nonnegative"));
    }
    if !(dt > T::zero()) {
        return Err(CoreError::domain("dt must be positive"));
    }
    if t == T::zero() {
        return Ok(MCEstimate {
            value: payoff.eval(x),
            std_error: T::zero(),
            num_samples: n_paths,
            seed,
        });
    }
    let steps = {
        let raw = (t / dt).as_f64().round();
        if raw < 1.0 {
            return Err(CoreError::domain("dt must not exceed t"));
        }
        snap_index(t, dt, raw as usize)?
    };
    let cfg = SimConfig { x0: x.to_vec(), t_final: t, steps, n_paths, seed };
    let ens = PathEnsemble::simulate(field, &cfg, &[t])?;
    Ok(ens.estimate(0, payoff))
}

/// Halve `dt` until the estimate moves by less than one combined standard
/// error, returning the converged estimate and the dt it used.
pub fn estimate_u_refined<T: Real>(
    field: &CoefficientField<T>,
    payoff: &Payoff<T>,
    x: &[T],
    t: T,
    dt0: T,
    n_paths: usize,
    seed: u64,
    max_halvings: usize,
) -> Result<(MCEstimate<T>, T)> {
    let mut dt = dt0;
    let mut prev = estimate_u(field, payoff, x, t, dt, n_paths, seed)?;
    for _ in 0..max_halvings {
        dt = dt * T::half();
        let next = estimate_u(field, payoff, x, t, dt, n_paths, seed.wrapping_add(1))?;
        let combined = (prev.std_error * prev.std_error + next.std_error * next.std_error).sqrt();
        let moved = (next.value - prev.value).abs();
        prev = next;
        if moved < combined.max(T::of(1e-12)) {
            return Ok((prev, dt));
        }
    }
    Ok((prev, dt))
}

/// Estimate `E prod_i f_i(X_{t_i})` along single trajectories.  Every payoff
/// must declare a sup bound `<= 1`, and times must be strictly increasing
/// grid times below the horizon.
pub fn estimate_fdd<T: Real>(
    field: &CoefficientField<T>,
    payoffs: &[Payoff<T>],
    times: &[T],
    x0: &[T],
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate<T>> {
    if payoffs.is_empty() || payoffs.len() != times.len() {
        return Err(CoreError::domain("need one payoff per time, at least one"));
    }
    for p in payoffs {
        match p.declared_sup {
            Some(s) if s <= T::one() => {}
            Some(_) => {
                return Err(CoreError::domain(format!(
                    "payoff {} declares sup > 1; fdd functionals require |f| <= 1",
                    p.name
                )))
            }
            None => {
                return Err(CoreError::domain(format!(
                    "payoff {} has no declared sup bound",
                    p.name
                )))
            }
        }
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CoreError::domain("times must be strictly increasing"));
    }
    if !(*times.last().expect("nonempty") < horizon) {
        return Err(CoreError::domain("times must stay below the horizon"));
    }
    if times[0] < T::zero() {
        return Err(CoreError::domain("times must be nonnegative"));
    }
    let steps = snap_index(horizon, dt, usize::MAX >> 1)?;
    let cfg = SimConfig { x0: x0.to_vec(), t_final: horizon, steps, n_paths, seed };
    let ens = PathEnsemble::simulate(field, &cfg, times)?;
    let dim = field.dim_state;
    let k = payoffs.len();
    Ok(ens.estimate_joint(|xs| {
        let mut prod = T::one();
        for i in 0..k {
            prod *= payoffs[i].eval(&xs[i * dim..(i + 1) * dim]);
        }
        prod
    }))
}

// ---------------------------------------------------------------------------
// fourth moment increment bound

/// `E |X_t - X_s|^4 <= 8 K^4 |t-s|^4 + 24 K^4 |t-s|^2` with
/// `K = max(sup_b, sup_sigma)` of the simulated field.
pub fn increment_bound<T: Real>(k_bound: T, gap: T) -> T {
    let k4 = k_bound.powi(4);
    let g2 = gap * gap;
    T::of(8.0) * k4 * g2 * g2 + T::of(24.0) * k4 * g2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRow {
    pub s: f64,
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// One increment-moment comparison on an already simulated ensemble; `s` and
/// `t` must be recorded times.
pub fn increment_moment_check<T: Real>(
    ensemble: &PathEnsemble<T>,
    s: T,
    t: T,
    k_bound: T,
) -> Result<MomentRow> {
    if !(s < t) {
        return Err(CoreError::domain("need s < t"));
    }
    let i = ensemble.recorded_index(s)?;
    let j = ensemble.recorded_index(t)?;
    let est = ensemble.fourth_moment_increment(i, j);
    let bound = increment_bound(k_bound, t - s);
    let rel_se = if est.value > T::zero() { est.std_error / est.value } else { T::zero() };
    let pass = est.value <= bound * (T::one() + T::of(5.0) * rel_se);
    Ok(MomentRow {
        s: s.as_f64(),
        t: t.as_f64(),
        estimate: est.value.as_f64(),
        std_error: est.std_error.as_f64(),
        bound: bound.as_f64(),
        pass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub field: String,
    pub k_bound: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub rows: Vec<MomentRow>,
    pub pass: bool,
}

/// Check the fourth-moment increment bound on the given `(s, t)` pairs.  A row
/// passes when the estimate stays below the bound with statistical slack
/// `bound * 5 * rel_SE`.
pub fn check_fourth_moment_bound<T: Real>(
    field: &CoefficientField<T>,
    cfg: &SimConfig<T>,
    pairs: &[(T, T)],
) -> Result<MomentReport> {
    if pairs.is_empty() {
        return Err(CoreError::domain("no (s, t) pairs given"));
    }
    for &(s, t) in pairs {
        if !(s < t) {
            return Err(CoreError::domain("pairs must satisfy s < t"));
        }
    }
    let mut times: Vec<T> = Vec::new();
    for &(s, t) in pairs {
        times.push(s);
        times.push(t);
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup_by(|a, b| *a == *b);
    let ensemble = PathEnsemble::simulate(field, cfg, &times)?;
    let k = field.k_bound();
    let mut rows = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        rows.push(increment_moment_check(&ensemble, s, t, k)?);
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(MomentReport {
        field: field.tag.clone(),
        k_bound: k.as_f64(),
        n_paths: cfg.n_paths,
        dt: cfg.dt().as_f64(),
        rows,
        pass,
    })
}

// ---------------------------------------------------------------------------
// pathwise modulus of continuity

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulusReport {
    pub delta: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub n_paths: usize,
}

/// Quantiles over paths of `sup { |X_t - X_s| : |t - s| <= delta }` computed
/// on the ensemble's recorded times.
pub fn modulus_diagnostic<T: Real>(
    ensemble: &PathEnsemble<T>,
    delta: T,
) -> Result<ModulusReport> {
    let times = &ensemble.record_times;
    let spacing = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(T::infinity(), |a, b| a.min(b));
    if delta < spacing {
        return Err(CoreError::domain("delta below the recorded time resolution"));
    }
    let tol = T::of(1e-12) * T::one().max(delta);
    let r = times.len();
    let dim = ensemble.dim;
    let mut moduli: Vec<T> = (0..ensemble.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut worst = T::zero();
            for i in 0..r {
                for j in (i + 1)..r {
                    if times[j] - times[i] > delta + tol {
                        break;
                    }
                    let a = ensemble.state(p, i);
                    let b = ensemble.state(p, j);
                    let mut sq = T::zero();
                    for k in 0..dim {
                        let d = a[k] - b[k];
                        sq += d * d;
                    }
                    worst = worst.max(sq.sqrt());
                }
            }
            worst
        })
        .collect();
    moduli.sort_by(|a, b| a.partial_cmp(b).expect("finite moduli"));
    let pick = |q: f64| {
        let idx = ((q * moduli.len() as f64).ceil() as usize).clamp(1, moduli.len()) - 1;
        moduli[idx].as_f64()
    };
    Ok(ModulusReport {
        delta: delta.as_f64(),
        q50: pick(0.50),
        q90: pick(0.90),
        q99: pick(0.99),
        n_paths: ensemble.n_paths,
    })
}
