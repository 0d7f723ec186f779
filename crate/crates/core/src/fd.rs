//! Monotone explicit finite differences for the backward equation
//! `du/dt = Tr(a D2 u) + b . grad u`, `a = (1/2) sigma sigma^T`, plus the
//! epsilon-sweep and semilimit machinery built on top of it.
//!
//! The update at every node is a convex combination of the previous slice
//! (Kushner-Dupuis weights: upwinded drift, diagonally dominant second-order
//! splitting), which is what makes the discrete maximum and comparison
//! principles exact rather than approximate.  The solver refuses any field or
//! step size for which that structure would break.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientField, PerturbationFamily};
use crate::domain::{BoxDomain, ProbeWindow, WindowSummary};
use crate::error::{CoreError, Result};
use crate::mc::Payoff;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryRule {
    /// Boundary nodes keep their initial value for all time.
    FrozenDirichlet,
    /// Stencil arms leaving the box are dropped (constant extrapolation of
    /// the ghost value); still monotone.
    OneSidedExtrapolation,
}

/// Uniform space-time grid on an axis-aligned box.  `dt = t_final / steps`
/// exactly, so probe times that divide the horizon land on slices.
#[derive(Clone, Debug)]
pub struct GridSpec<T> {
    pub domain: BoxDomain<T>,
    pub h: T,
    pub t_final: T,
    pub steps: usize,
    pub boundary: BoundaryRule,
    per_axis: Vec<usize>,
    strides: Vec<usize>,
}

impl<T: Real> GridSpec<T> {
    pub fn new(
        domain: BoxDomain<T>,
        h: T,
        t_final: T,
        steps: usize,
        boundary: BoundaryRule,
    ) -> Result<Self> {
        if !(h > T::zero()) {
            return Err(CoreError::domain("h must be positive"));
        }
        if !(t_final > T::zero()) || steps == 0 {
            return Err(CoreError::domain("need t_final > 0 and steps >= 1"));
        }
        let mut per_axis = Vec::with_capacity(domain.dim());
        for d in 0..domain.dim() {
            let span = (domain.hi_at(d) - domain.lo_at(d)) / h;
            let n = span.as_f64().round();
            if (span - T::of(n)).abs() > T::of(1e-6) * T::one().max(span) {
                return Err(CoreError::GridMismatch(format!(
                    "box extent on axis {d} is not a multiple of h = {h}"
                )));
            }
            per_axis.push(n as usize + 1);
        }
        let mut strides = vec![1usize; per_axis.len()];
        for d in (0..per_axis.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * per_axis[d + 1];
        }
        Ok(GridSpec { domain, h, t_final, steps, boundary, per_axis, strides })
    }

    pub fn with_dt(
        domain: BoxDomain<T>,
        h: T,
        t_final: T,
        dt: T,
        boundary: BoundaryRule,
    ) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(CoreError::domain("dt must be positive"));
        }
        let ratio = (t_final / dt).as_f64();
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * steps.max(1.0) || steps < 1.0 {
            return Err(CoreError::GridMismatch(format!(
                "horizon {t_final} is not a multiple of dt = {dt}"
            )));
        }
        Self::new(domain, h, t_final, steps as usize, boundary)
    }

    pub fn dim(&self) -> usize {
        self.per_axis.len()
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_usize_(self.steps)
    }

    pub fn per_axis(&self) -> &[usize] {
        &self.per_axis
    }

    pub fn num_nodes(&self) -> usize {
        self.per_axis.iter().product()
    }

    /// Bytes one full space-time solution occupies.
    pub fn solution_bytes(&self) -> u64 {
        (self.num_nodes() as u64) * (self.steps as u64 + 1) * std::mem::size_of::<T>() as u64
    }

    pub fn node_coords(&self, flat: usize, out: &mut Vec<T>) {
        out.clear();
        let mut rem = flat;
        for d in 0..self.dim() {
            let idx = rem / self.strides[d];
            rem %= self.strides[d];
            out.push(self.domain.lo_at(d) + self.h * T::from_usize_(idx));
        }
    }

    pub fn axis_indices(&self, flat: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut rem = flat;
        for d in 0..self.dim() {
            out.push(rem / self.strides[d]);
            rem %= self.strides[d];
        }
    }

    pub fn time_of(&self, slice: usize) -> T {
        self.dt() * T::from_usize_(slice)
    }

    /// Slice index of a probe time; the time must sit on the step grid.
    pub fn snap_time(&self, t: T) -> Result<usize> {
        crate::mc::snap_index(t, self.dt(), self.steps)
    }

    fn same_lattice(&self, other: &Self) -> bool {
        self.per_axis == other.per_axis
            && self.steps == other.steps
            && (self.h - other.h).abs() <= T::of(1e-12)
            && (self.t_final - other.t_final).abs() <= T::of(1e-12)
            && (0..self.dim()).all(|d| {
                (self.domain.lo_at(d) - other.domain.lo_at(d)).abs() <= T::of(1e-12)
            })
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            lo: (0..self.dim()).map(|d| self.domain.lo_at(d).as_f64()).collect(),
            hi: (0..self.dim()).map(|d| self.domain.hi_at(d).as_f64()).collect(),
            h: self.h.as_f64(),
            dt: self.dt().as_f64(),
            t_final: self.t_final.as_f64(),
            steps: self.steps,
            nodes: self.num_nodes(),
            boundary: self.boundary,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSummary {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub nodes: usize,
    pub boundary: BoundaryRule,
}

/// Extent of the frozen-boundary error: paths started inside the window stay
/// away from the boundary by this much with overwhelming probability.
pub fn influence_margin<T: Real>(t_final: T, sup_b: T, sup_sigma: T, eps_max: T) -> T {
    t_final * sup_b + T::of(6.0) * (t_final * (sup_sigma * sup_sigma + eps_max)).sqrt()
}

// ---------------------------------------------------------------------------
// stepper

enum NodeKind<T> {
    Frozen,
    Active { entries: Vec<(usize, T)> },
}

/// Precomputed update weights for one field on one grid.  Construction is
/// where monotonicity (diagonal dominance) and the step-size bound are
/// checked; stepping afterwards is a pure stencil sweep.
pub struct Stepper<T> {
    nodes: Vec<NodeKind<T>>,
    dt: T,
    pub max_ratio: T,
}

/// Weight rates (units 1/time) of the monotone stencil at one state point.
/// Returns (entries as (axis offsets, rate), total rate); errors when the
/// second-order block is not diagonally dominant.
fn stencil_rates<T: Real>(
    field: &CoefficientField<T>,
    x: &[T],
    h: T,
    node: &[usize],
) -> Result<(Vec<(Vec<isize>, T)>, T)> {
    let n = field.dim_state;
    let a = field.a_matrix(x);
    let b = field.drift_vec(x);
    let h2 = h * h;
    let tol = T::of(1e-12) * (T::one() + a.iter().fold(T::zero(), |m, &v| m.max(v.abs())));
    let mut entries: Vec<(Vec<isize>, T)> = Vec::new();
    let mut total = T::zero();
    for i in 0..n {
        let mut off_diag = T::zero();
        for j in 0..n {
            if j != i {
                off_diag += a[[i, j]].abs();
            }
        }
        let dom = a[[i, i]] - off_diag;
        if dom < -tol {
            return Err(CoreError::Monotonicity {
                node: node.to_vec(),
                coords: x.iter().map(|v| v.as_f64()).collect(),
                detail: format!(
                    "a[{i}][{i}] = {} is below its off-diagonal row sum {}",
                    a[[i, i]].as_f64(),
                    off_diag.as_f64()
                ),
            });
        }
        let diag = dom.max(T::zero()) / h2;
        let bp = b[i].max(T::zero()) / h;
        let bm = (-b[i]).max(T::zero()) / h;
        let mut plus = vec![0isize; n];
        plus[i] = 1;
        let mut minus = vec![0isize; n];
        minus[i] = -1;
        entries.push((plus, diag + bp));
        entries.push((minus, diag + bm));
        total += T::two() * diag + bp + bm;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let ap = a[[i, j]].max(T::zero()) / h2;
            let am = (-a[[i, j]]).max(T::zero()) / h2;
            for (wij, si, sj) in [(ap, 1isize, 1isize), (ap, -1, -1), (am, 1, -1), (am, -1, 1)] {
                if wij > T::zero() {
                    let mut off = vec![0isize; n];
                    off[i] = si;
                    off[j] = sj;
                    entries.push((off, wij));
                    total += wij;
                }
            }
        }
    }
    entries.retain(|(_, w)| *w > T::zero());
    Ok((entries, total))
}

impl<T: Real> Stepper<T> {
    pub fn new(field: &CoefficientField<T>, grid: &GridSpec<T>) -> Result<Self> {
        if field.dim_state != grid.dim() {
            return Err(CoreError::GridMismatch(
                "field dimension does not match the grid".into(),
            ));
        }
        let dt = grid.dt();
        let n_nodes = grid.num_nodes();
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut x = Vec::new();
        let mut idx = Vec::new();
        let mut max_ratio = T::zero();
        for flat in 0..n_nodes {
            grid.axis_indices(flat, &mut idx);
            grid.node_coords(flat, &mut x);
            let edge = idx
                .iter()
                .zip(grid.per_axis())
                .any(|(&i, &n)| i == 0 || i + 1 == n);
            if edge && grid.boundary == BoundaryRule::FrozenDirichlet {
                nodes.push(NodeKind::Frozen);
                continue;
            }
            let (rates, total) = stencil_rates(field, &x, grid.h, &idx)?;
            let ratio = dt * total;
            if ratio > T::one() + T::of(1e-9) {
                return Err(CoreError::Cfl { node: idx.clone(), ratio: ratio.as_f64() });
            }
            max_ratio = max_ratio.max(ratio);
            let mut entries = Vec::with_capacity(rates.len());
            'rate: for (off, rate) in rates {
                let mut target = 0isize;
                for d in 0..off.len() {
                    let moved = idx[d] as isize + off[d];
                    if moved < 0 || moved >= grid.per_axis()[d] as isize {
                        // arm leaves the box: ghost value equals the node's
                        // own value, so the term vanishes
                        continue 'rate;
                    }
                    target += moved * grid.strides[d] as isize;
                }
                entries.push((target as usize, dt * rate));
            }
            nodes.push(NodeKind::Active { entries });
        }
        Ok(Stepper { nodes, dt, max_ratio })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// One explicit step; `next` is overwritten.
    pub fn step(&self, prev: &[T], next: &mut [T]) {
        let apply = |(i, out): (usize, &mut T)| match &self.nodes[i] {
            NodeKind::Frozen => *out = prev[i],
            NodeKind::Active { entries } => {
                let u = prev[i];
                let mut acc = u;
                for &(j, w) in entries {
                    acc += w * (prev[j] - u);
                }
                *out = acc;
            }
        };
        if prev.len() >= 4096 {
            next.par_iter_mut().enumerate().for_each(apply);
        } else {
            next.iter_mut().enumerate().for_each(apply);
        }
    }
}

/// One explicit step from a raw slice (convenience over [`Stepper`]).
pub fn step_once<T: Real>(
    field: &CoefficientField<T>,
    grid: &GridSpec<T>,
    slice: &[T],
) -> Result<Vec<T>> {
    if slice.len() != grid.num_nodes() {
        return Err(CoreError::GridMismatch("slice length != node count".into()));
    }
    let stepper = Stepper::new(field, grid)?;
    let mut next = vec![T::zero(); slice.len()];
    stepper.step(slice, &mut next);
    Ok(next)
}

/// Largest total stencil rate over the grid nodes; `dt * rate <= 1` is the
/// exact stability condition of the scheme (it implies the coarser
/// `dt * (sum a_ii / h^2 + sum |b_i| / h) <= 1`).
pub fn max_step_rate<T: Real>(
    field: &CoefficientField<T>,
    domain: &BoxDomain<T>,
    h: T,
) -> Result<T> {
    let grid = GridSpec::new(domain.clone(), h, T::one(), 1, BoundaryRule::OneSidedExtrapolation)?;
    let mut x = Vec::new();
    let mut idx = Vec::new();
    let mut worst = T::zero();
    for flat in 0..grid.num_nodes() {
        grid.axis_indices(flat, &mut idx);
        grid.node_coords(flat, &mut x);
        let (_, total) = stencil_rates(field, &x, h, &idx)?;
        worst = worst.max(total);
    }
    Ok(worst)
}

/// Step count obeying `dt * rate <= safety`, bumped until every probe time
/// lands on a slice.
pub fn suggest_steps<T: Real>(
    field: &CoefficientField<T>,
    domain: &BoxDomain<T>,
    h: T,
    t_final: T,
    probes: &[T],
    safety: T,
) -> Result<usize> {
    if !(safety > T::zero() && safety <= T::one()) {
        return Err(CoreError::domain("safety must lie in (0, 1]"));
    }
    let rate = max_step_rate(field, domain, h)?;
    let base = (t_final * rate / safety).as_f64().ceil().max(1.0) as usize;
    'steps: for steps in base..base + 100_000 {
        for &p in probes {
            let frac = (p / t_final).as_f64() * steps as f64;
            if (frac - frac.round()).abs() > 1e-9 * (steps as f64) {
                continue 'steps;
            }
            if p < T::zero() || p > t_final {
                return Err(CoreError::domain("probe time outside [0, t_final]"));
            }
        }
        return Ok(steps);
    }
    Err(CoreError::domain("no step count snaps all probe times"))
}

// ---------------------------------------------------------------------------
// lattice solutions

/// A function on the full space-time lattice (every slice kept), tagged with
/// which payoff and which perturbation level produced it.
#[derive(Clone)]
pub struct LatticeFunction<T> {
    pub grid: GridSpec<T>,
    pub payoff_tag: String,
    pub field_tag: String,
    pub eps: Option<T>,
    values: Vec<T>,
}

impl<T: Real> LatticeFunction<T> {
    pub fn from_values(
        grid: GridSpec<T>,
        payoff_tag: impl Into<String>,
        field_tag: impl Into<String>,
        eps: Option<T>,
        values: Vec<T>,
    ) -> Result<Self> {
        if values.len() != grid.num_nodes() * (grid.steps + 1) {
            return Err(CoreError::GridMismatch("value count != nodes x slices".into()));
        }
        Ok(LatticeFunction {
            grid,
            payoff_tag: payoff_tag.into(),
            field_tag: field_tag.into(),
            eps,
            values,
        })
    }

    pub fn slice(&self, t_idx: usize) -> &[T] {
        let n = self.grid.num_nodes();
        &self.values[t_idx * n..(t_idx + 1) * n]
    }

    pub fn raw_values(&self) -> &[T] {
        &self.values
    }

    pub fn initial_bounds(&self) -> (T, T) {
        let s0 = self.slice(0);
        let lo = s0.iter().fold(T::infinity(), |m, &v| m.min(v));
        let hi = s0.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        (lo, hi)
    }

    /// Worst excursion of any slice outside the initial bounds; `<= 0` is the
    /// discrete maximum principle.
    pub fn max_principle_margin(&self) -> T {
        let (lo, hi) = self.initial_bounds();
        let mut worst = T::neg_infinity();
        for t in 0..=self.grid.steps {
            for &v in self.slice(t) {
                worst = worst.max((v - hi).max(lo - v));
            }
        }
        worst
    }

    /// Value at an arbitrary point: the time must sit on a slice, space is
    /// interpolated multilinearly between nodes.
    pub fn value_at(&self, x: &[T], t: T) -> Result<T> {
        if x.len() != self.grid.dim() {
            return Err(CoreError::domain("point dimension mismatch"));
        }
        let slice = self.grid.snap_time(t)?;
        let vals = self.slice(slice);
        let n = self.grid.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![T::zero(); n];
        for d in 0..n {
            let rel = (x[d] - self.grid.domain.lo_at(d)) / self.grid.h;
            let f = rel.as_f64();
            if f < -1e-9 || f > (self.grid.per_axis()[d] - 1) as f64 + 1e-9 {
                return Err(CoreError::domain(format!("point leaves the box on axis {d}")));
            }
            let i0 = f.floor().clamp(0.0, self.grid.per_axis()[d].saturating_sub(2) as f64) as usize;
            base[d] = i0;
            frac[d] = (rel - T::from_usize_(i0)).max(T::zero()).min(T::one());
        }
        let mut acc = T::zero();
        for corner in 0..(1usize << n) {
            let mut w = T::one();
            let mut flat = 0usize;
            for d in 0..n {
                let up = (corner >> d) & 1 == 1;
                let idx = base[d] + if up { 1 } else { 0 };
                let idx = idx.min(self.grid.per_axis()[d] - 1);
                w *= if up { frac[d] } else { T::one() - frac[d] };
                flat += idx * self.grid.strides[d];
            }
            acc += w * vals[flat];
        }
        Ok(acc)
    }

    /// Sup of |self - other| over window nodes and slices up to the window
    /// horizon.  Grids must coincide.
    pub fn window_sup_diff(&self, other: &Self, window: &ProbeWindow<T>) -> Result<T> {
        if !self.grid.same_lattice(&other.grid) {
            return Err(CoreError::GridMismatch(
                "cannot compare lattice functions on different grids".into(),
            ));
        }
        let t_hi = last_slice_within(&self.grid, window.t_max)?;
        let keep = window_mask(&self.grid, &window.space)?;
        let mut worst = T::zero();
        for t in 0..=t_hi {
            let a = self.slice(t);
            let b = other.slice(t);
            for &i in &keep {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        Ok(worst)
    }

    pub fn sup_diff(&self, other: &Self) -> Result<T> {
        if !self.grid.same_lattice(&other.grid) {
            return Err(CoreError::GridMismatch(
                "cannot compare lattice functions on different grids".into(),
            ));
        }
        let mut worst = T::zero();
        for (&a, &b) in self.values.iter().zip(&other.values) {
            worst = worst.max((a - b).abs());
        }
        Ok(worst)
    }

    /// Signed sup of (self - other) over window nodes and slices up to the
    /// window horizon.  Can be negative when `self` sits below `other`.
    pub fn window_signed_sup(&self, other: &Self, window: &ProbeWindow<T>) -> Result<T> {
        if !self.grid.same_lattice(&other.grid) {
            return Err(CoreError::GridMismatch(
                "cannot compare lattice functions on different grids".into(),
            ));
        }
        let t_hi = last_slice_within(&self.grid, window.t_max)?;
        let keep = window_mask(&self.grid, &window.space)?;
        let mut worst = T::neg_infinity();
        for t in 0..=t_hi {
            let a = self.slice(t);
            let b = other.slice(t);
            for &i in &keep {
                worst = worst.max(a[i] - b[i]);
            }
        }
        Ok(worst)
    }

    /// Sup over window nodes of (self - other) at time zero, clipped at zero.
    pub fn initial_window_gap(&self, other: &Self, window: &ProbeWindow<T>) -> Result<T> {
        if !self.grid.same_lattice(&other.grid) {
            return Err(CoreError::GridMismatch(
                "cannot compare lattice functions on different grids".into(),
            ));
        }
        let keep = window_mask(&self.grid, &window.space)?;
        let a = self.slice(0);
        let b = other.slice(0);
        let mut worst = T::zero();
        for &i in &keep {
            worst = worst.max(a[i] - b[i]);
        }
        Ok(worst)
    }

    /// Largest |u(node + h e_d) - u(node)| over in-window adjacent node
    /// pairs at the slice nearest `t`.
    pub fn adjacent_modulus(&self, window: &ProbeWindow<T>, t: T) -> Result<T> {
        let t_idx = self.grid.snap_time(t)?;
        let keep = window_mask(&self.grid, &window.space)?;
        let in_window: std::collections::HashSet<usize> = keep.iter().copied().collect();
        let slice = self.slice(t_idx);
        let mut worst = T::zero();
        for d in 0..self.grid.dim() {
            let stride = self.grid.strides[d];
            let per = self.grid.per_axis[d];
            for &flat in &keep {
                let idx_d = (flat / stride) % per;
                if idx_d + 1 < per && in_window.contains(&(flat + stride)) {
                    worst = worst.max((slice[flat + stride] - slice[flat]).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Largest discrete gradient of the initial slice over adjacent node
    /// pairs, across all axes.
    pub fn initial_lipschitz(&self) -> T {
        let slice = self.slice(0);
        let mut worst = T::zero();
        for d in 0..self.grid.dim() {
            let stride = self.grid.strides[d];
            let per = self.grid.per_axis[d];
            for flat in 0..self.grid.num_nodes() {
                let idx_d = (flat / stride) % per;
                if idx_d + 1 < per {
                    worst = worst.max((slice[flat + stride] - slice[flat]).abs());
                }
            }
        }
        worst / self.grid.h
    }
}

fn last_slice_within<T: Real>(grid: &GridSpec<T>, t_max: T) -> Result<usize> {
    if t_max < T::zero() || t_max > grid.t_final + T::of(1e-9) {
        return Err(CoreError::domain("window horizon outside [0, t_final]"));
    }
    let f = (t_max / grid.dt()).as_f64() + 1e-9;
    Ok((f.floor() as usize).min(grid.steps))
}

/// Flat indices of the nodes inside the spatial window.
pub(crate) fn window_mask<T: Real>(grid: &GridSpec<T>, space: &BoxDomain<T>) -> Result<Vec<usize>> {
    if space.dim() != grid.dim() {
        return Err(CoreError::domain("window dimension mismatch"));
    }
    let tol = grid.h * T::of(1e-9);
    let mut keep = Vec::new();
    let mut x = Vec::new();
    for flat in 0..grid.num_nodes() {
        grid.node_coords(flat, &mut x);
        let inside = (0..grid.dim())
            .all(|d| x[d] >= space.lo_at(d) - tol && x[d] <= space.hi_at(d) + tol);
        if inside {
            keep.push(flat);
        }
    }
    if keep.is_empty() {
        return Err(CoreError::domain("window contains no grid nodes"));
    }
    Ok(keep)
}

/// Run the scheme from `f` to the horizon, keeping every slice.
pub fn solve<T: Real>(
    field: &CoefficientField<T>,
    f: &Payoff<T>,
    grid: &GridSpec<T>,
) -> Result<LatticeFunction<T>> {
    let stepper = Stepper::new(field, grid)?;
    let n = grid.num_nodes();
    let mut values = vec![T::zero(); n * (grid.steps + 1)];
    let mut x = Vec::new();
    for flat in 0..n {
        grid.node_coords(flat, &mut x);
        values[flat] = f.eval(&x);
    }
    for t in 0..grid.steps {
        let (lo, hi) = values.split_at_mut((t + 1) * n);
        let prev = &lo[t * n..];
        stepper.step(prev, &mut hi[..n]);
    }
    LatticeFunction::from_values(grid.clone(), f.name.clone(), field.tag.clone(), None, values)
}

// ---------------------------------------------------------------------------
// eps sweep

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub field: String,
    pub payoff: String,
    pub eps: Vec<f64>,
    /// cauchy[i][j] = sup over the window of |u^{eps_i} - u^{eps_j}|, i < j.
    pub cauchy: Vec<Vec<f64>>,
    /// D(i, i+1) down the schedule.
    pub successive: Vec<f64>,
    /// Error bar attached to the selected limit: the last successive gap.
    pub error_bar: f64,
    pub converging: bool,
    pub window: WindowSummary,
    pub grid: GridSummary,
}

/// Solutions across a decreasing perturbation schedule plus their Cauchy
/// statistics on a window.  The selected limit is the solution at the
/// smallest level.
pub struct EpsSweep<T> {
    pub eps: Vec<T>,
    pub solutions: Vec<LatticeFunction<T>>,
    pub window: ProbeWindow<T>,
    pub summary: SweepSummary,
}

impl<T: Real> EpsSweep<T> {
    pub fn selected(&self) -> &LatticeFunction<T> {
        self.solutions.last().expect("schedule nonempty")
    }
}

pub fn eps_sweep<T: Real>(
    family: &PerturbationFamily<T>,
    f: &Payoff<T>,
    eps_list: &[T],
    grid: &GridSpec<T>,
    window: &ProbeWindow<T>,
) -> Result<EpsSweep<T>> {
    if eps_list.len() < 3 {
        return Err(CoreError::domain("schedule needs at least three levels"));
    }
    if eps_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(CoreError::domain("schedule must be strictly decreasing"));
    }
    if eps_list.iter().any(|&e| !(e > T::zero())) {
        return Err(CoreError::domain("levels must be positive"));
    }
    if window.t_max > grid.t_final + T::of(1e-9) {
        return Err(CoreError::domain("window horizon exceeds the grid horizon"));
    }
    let eps_max = eps_list[0];
    let top = family.perturb(eps_max)?;
    let margin = influence_margin(
        grid.t_final,
        top.meta.sup_b,
        family.base.meta.sup_sigma,
        eps_max,
    );
    for d in 0..grid.dim() {
        let ok = window.space.lo_at(d) >= grid.domain.lo_at(d) + margin
            && window.space.hi_at(d) <= grid.domain.hi_at(d) - margin;
        if !ok {
            return Err(CoreError::domain(format!(
                "window touches the boundary influence margin {} on axis {d}",
                margin.as_f64()
            )));
        }
    }
    let mut solutions = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let pert = family.perturb(eps)?;
        let mut sol = solve(&pert, f, grid)?;
        sol.eps = Some(eps);
        solutions.push(sol);
    }
    let m = eps_list.len();
    let mut cauchy = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = solutions[i].window_sup_diff(&solutions[j], window)?.as_f64();
            cauchy[i][j] = d;
            cauchy[j][i] = d;
        }
    }
    let successive: Vec<f64> = (0..m - 1).map(|i| cauchy[i][i + 1]).collect();
    let error_bar = successive[m - 2];
    let converging = successive[m - 2] < successive[m - 3];
    let summary = SweepSummary {
        field: family.base.tag.clone(),
        payoff: f.name.clone(),
        eps: eps_list.iter().map(|e| e.as_f64()).collect(),
        cauchy,
        successive,
        error_bar,
        converging,
        window: window.summary(),
        grid: grid.summary(),
    };
    Ok(EpsSweep { eps: eps_list.to_vec(), solutions, window: window.clone(), summary })
}

// ---------------------------------------------------------------------------
// relaxed semilimits

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemilimitRow {
    pub delta: f64,
    pub num_eps_used: usize,
    /// sup over the window of (upper semilimit - lower semilimit).
    pub gap: f64,
}

pub struct SemilimitReport<T> {
    pub rows: Vec<SemilimitRow>,
    /// Upper semilimit at the smallest delta, on the window lattice.
    pub u_star: LatticeFunction<T>,
    /// Lower semilimit at the smallest delta.
    pub u_lower: LatticeFunction<T>,
}

/// Sliding max (or min) over slice index windows `|t' - t| <= radius`.
fn sliding_extreme<T: Real>(series: &[T], radius: usize, take_max: bool, out: &mut [T]) {
    // monotone deque over a window of width 2 * radius + 1
    let n = series.len();
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let better = |a: T, b: T| if take_max { a >= b } else { a <= b };
    let mut right = 0usize;
    for t in 0..n {
        let hi = (t + radius).min(n - 1);
        while right <= hi {
            while let Some(&back) = deque.back() {
                if better(series[right], series[back]) {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(right);
            right += 1;
        }
        while let Some(&front) = deque.front() {
            if front + radius < t {
                deque.pop_front();
            } else {
                break;
            }
        }
        out[t] = series[*deque.front().expect("window nonempty")];
    }
}

/// Discrete relaxed semilimits of a sweep over shrinking space-time-level
/// neighborhoods `||x - y|| + |t - s| < delta`, levels `eps < delta` only.
pub fn semilimits<T: Real>(
    sweep: &EpsSweep<T>,
    delta_list: &[T],
) -> Result<SemilimitReport<T>> {
    if delta_list.is_empty() {
        return Err(CoreError::domain("need at least one delta"));
    }
    if delta_list.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(CoreError::domain("delta list must be strictly decreasing"));
    }
    let grid = &sweep.solutions[0].grid;
    let h = grid.h;
    let dt = grid.dt();
    let coarse = h.max(dt);
    for &delta in delta_list {
        let k = (delta / coarse).as_f64();
        if (k - k.round()).abs() > 1e-6 * k.max(1.0) || k < 0.5 {
            return Err(CoreError::domain(format!(
                "delta {} is not a positive multiple of max(h, dt) = {}",
                delta.as_f64(),
                coarse.as_f64()
            )));
        }
    }

    // window lattice the semilimits live on
    let t_hi = last_slice_within(grid, sweep.window.t_max)?;
    if t_hi == 0 {
        return Err(CoreError::domain("window horizon below one time step"));
    }
    let centers = window_mask(grid, &sweep.window.space)?;
    let w_grid = window_grid(grid, &sweep.window, t_hi)?;
    let n_centers = centers.len();
    debug_assert_eq!(n_centers, w_grid.num_nodes());

    let n_nodes = grid.num_nodes();
    let n_slices = grid.steps + 1;
    let mut rows = Vec::with_capacity(delta_list.len());
    let mut final_star: Option<Vec<T>> = None;
    let mut final_lower: Option<Vec<T>> = None;

    for &delta in delta_list {
        let used: Vec<usize> = (0..sweep.eps.len()).filter(|&i| sweep.eps[i] < delta).collect();
        if used.is_empty() {
            return Err(CoreError::domain(format!(
                "no swept level lies below delta = {}",
                delta.as_f64()
            )));
        }
        let space_reach = (delta / h).as_f64().ceil() as isize;
        let mut star = vec![T::neg_infinity(); n_centers * (t_hi + 1)];
        let mut lower = vec![T::infinity(); n_centers * (t_hi + 1)];
        let mut series_max = vec![T::zero(); n_slices];
        let mut series_min = vec![T::zero(); n_slices];
        let mut series = vec![T::zero(); n_slices];
        let mut idx = Vec::new();
        for &sol_i in &used {
            let sol = &sweep.solutions[sol_i];
            for (ci, &center) in centers.iter().enumerate() {
                grid.axis_indices(center, &mut idx);
                // spatial offsets within the diamond, per axis sum
                for off in spatial_offsets(grid, &idx, space_reach, h, delta) {
                    let (flat, dist) = off;
                    // strict inequality: |t' - t| < delta - dist, exact
                    // multiples of dt excluded
                    let room = delta - dist;
                    let radius = (((room / dt).as_f64() - 1e-9).ceil() as isize - 1).max(0) as usize;
                    for t in 0..n_slices {
                        series[t] = sol.raw_values()[t * n_nodes + flat];
                    }
                    sliding_extreme(&series, radius, true, &mut series_max);
                    sliding_extreme(&series, radius, false, &mut series_min);
                    for t in 0..=t_hi {
                        let at = t * n_centers + ci;
                        star[at] = star[at].max(series_max[t]);
                        lower[at] = lower[at].min(series_min[t]);
                    }
                }
            }
        }
        let mut gap = T::zero();
        for i in 0..star.len() {
            gap = gap.max(star[i] - lower[i]);
        }
        rows.push(SemilimitRow {
            delta: delta.as_f64(),
            num_eps_used: used.len(),
            gap: gap.as_f64(),
        });
        final_star = Some(star);
        final_lower = Some(lower);
    }

    let star = final_star.expect("at least one delta");
    let lower = final_lower.expect("at least one delta");
    let payoff = &sweep.summary.payoff;
    Ok(SemilimitReport {
        rows,
        u_star: LatticeFunction::from_values(
            w_grid.clone(),
            format!("upper_semilimit({payoff})"),
            sweep.summary.field.clone(),
            None,
            star,
        )?,
        u_lower: LatticeFunction::from_values(
            w_grid,
            format!("lower_semilimit({payoff})"),
            sweep.summary.field.clone(),
            None,
            lower,
        )?,
    })
}

/// Neighbor flat indices within spatial reach of the diamond, with their
/// distance `||x - y||`; clipped at the box.
fn spatial_offsets<T: Real>(
    grid: &GridSpec<T>,
    center_idx: &[usize],
    reach: isize,
    h: T,
    delta: T,
) -> Vec<(usize, T)> {
    let n = grid.dim();
    let mut out = Vec::new();
    let mut offsets = vec![-reach; n];
    'outer: loop {
        let mut flat = 0isize;
        let mut sq = T::zero();
        let mut ok = true;
        for d in 0..n {
            let moved = center_idx[d] as isize + offsets[d];
            if moved < 0 || moved >= grid.per_axis()[d] as isize {
                ok = false;
                break;
            }
            flat += moved * grid.strides[d] as isize;
            let dd = h * T::of(offsets[d] as f64);
            sq += dd * dd;
        }
        if ok {
            let dist = sq.sqrt();
            if dist < delta {
                out.push((flat as usize, dist));
            }
        }
        for d in 0..n {
            offsets[d] += 1;
            if offsets[d] <= reach {
                continue 'outer;
            }
            offsets[d] = -reach;
        }
        break;
    }
    out
}

/// Sub-grid covering the window's nodes; the window edges must sit on parent
/// nodes.
fn window_grid<T: Real>(
    parent: &GridSpec<T>,
    window: &ProbeWindow<T>,
    t_hi: usize,
) -> Result<GridSpec<T>> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let tol = parent.h * T::of(1e-6);
    for d in 0..parent.dim() {
        let snap = |v: T| {
            let k = ((v - parent.domain.lo_at(d)) / parent.h).as_f64().round();
            parent.domain.lo_at(d) + parent.h * T::of(k)
        };
        let l = snap(window.space.lo_at(d));
        let u = snap(window.space.hi_at(d));
        if (l - window.space.lo_at(d)).abs() > tol || (u - window.space.hi_at(d)).abs() > tol {
            return Err(CoreError::domain(
                "window edges must sit on grid nodes for semilimits",
            ));
        }
        lo.push(l);
        hi.push(u);
    }
    let t_final = parent.dt() * T::from_usize_(t_hi.max(1));
    GridSpec::new(
        BoxDomain::new(lo, hi)?,
        parent.h,
        t_final,
        t_hi.max(1),
        parent.boundary,
    )
}
