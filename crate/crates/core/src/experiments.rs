//! The built-in problem catalog and the end-to-end studies that run on it:
//! selection sweeps with tightness, Feller, and cross-method diagnostics,
//! splitting probabilities at a degenerate start, finite-dimensional
//! convergence tables, and the density-extension consistency check.

use serde::{Deserialize, Serialize};

use crate::coeffs::{
    check_degenerate_point, check_exponents, check_holder, verify_perturbation_assumption,
    CoefficientField, DegeneracyReport, DegeneratePoint, ExponentReport, FieldMeta, HolderReport,
    PerturbationFamily, PerturbationReport,
};
use crate::domain::{BoxDomain, ProbeWindow, WindowSummary};
use crate::error::{CoreError, Result};
use crate::fd::{
    eps_sweep, influence_margin, solve, suggest_steps, window_mask, GridSpec, GridSummary,
    LatticeFunction, SweepSummary,
};
use crate::mc::{check_fourth_moment_bound, estimate_fdd, estimate_u, MomentReport, Payoff};
use crate::mc::SimConfig;
use crate::rng::Stream;
use crate::scalar::Real;

/// Where the process starts.  Catalog studies use point masses; a spread of
/// starting points is expressed by looping problems over Dirac laws.
#[derive(Clone, Debug)]
pub enum InitLaw<T> {
    Dirac(Vec<T>),
}

impl<T: Real> InitLaw<T> {
    pub fn point(&self) -> &[T] {
        match self {
            InitLaw::Dirac(x) => x,
        }
    }
}

#[derive(Clone)]
pub struct Problem<T: Real> {
    pub tag: String,
    pub field: CoefficientField<T>,
    pub family: PerturbationFamily<T>,
    pub init_law: InitLaw<T>,
    pub payoff_set: Vec<Payoff<T>>,
    pub notes: String,
    /// Set when the field knowingly violates the degeneracy assumption
    /// (vanishing diffusion): checks may fail without disqualifying the
    /// problem.
    pub waiver: bool,
}

impl<T: Real> std::fmt::Debug for Problem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Problem({}, waiver: {})", self.tag, self.waiver)
    }
}

fn standard_payoffs<T: Real>() -> Vec<Payoff<T>> {
    vec![
        Payoff::of_scalar("tanh", |x: T| x.tanh()).with_sup(T::one()),
        Payoff::of_scalar("gauss", |x: T| (-x * x).exp()).with_sup(T::one()),
    ]
}

/// Elliptic baseline: no drift, constant diffusion sqrt(2), no degeneracy.
pub fn constant_heat<T: Real>() -> Problem<T> {
    let field = CoefficientField::scalar(
        "constant_heat",
        |_| T::zero(),
        |_| T::two().sqrt(),
        FieldMeta {
            sup_b: T::zero(),
            sup_sigma: T::two().sqrt(),
            alpha: T::one(),
            beta: T::one(),
            c_b: T::one(),
            c_sigma: T::one(),
        },
        vec![],
    )
    .expect("constant coefficients are always admissible");
    Problem {
        tag: "constant_heat".into(),
        family: PerturbationFamily::additive(field.clone()),
        field,
        init_law: InitLaw::Dirac(vec![T::zero()]),
        payoff_set: standard_payoffs(),
        notes: "uniformly elliptic reference problem; closed-form Gaussian solution".into(),
        waiver: false,
    }
}

/// Degenerate ODE with non-unique solutions from 0: `b = min(|x|^alpha, 1)`,
/// no diffusion.  Carries a waiver: zero diffusion has no two-sided
/// nondegeneracy bound, yet the problem is the canonical selection example.
pub fn peano<T: Real>(alpha: f64) -> Result<Problem<T>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoreError::domain("peano exponent must lie in (0, 1)"));
    }
    let a = T::of(alpha);
    let field = CoefficientField::scalar(
        format!("peano_alpha_{alpha}"),
        move |x: T| x.abs().powf(a).min(T::one()),
        |_| T::zero(),
        FieldMeta {
            sup_b: T::one(),
            sup_sigma: T::zero(),
            alpha: a,
            beta: T::of(0.6),
            c_b: T::one(),
            c_sigma: T::one(),
        },
        vec![DegeneratePoint { point: vec![T::zero()], radius: T::one() }],
    )?;
    Ok(Problem {
        tag: format!("peano_alpha_{alpha}"),
        family: PerturbationFamily::additive(field.clone()),
        field,
        init_law: InitLaw::Dirac(vec![T::zero()]),
        payoff_set: standard_payoffs(),
        notes: "nonnegative power drift, zero diffusion; waiver: the lower diffusion \
                bound fails by construction, small noise still selects a limit"
            .into(),
        waiver: true,
    })
}

/// `b = 3 sgn(x) min(|x|^{1/3}, 1)`, `sigma = 3 min(|x|^{2/3}, 1)`: both
/// regularity slacks demanded of the exponents sit exactly on the boundary
/// (1 + 1/3 - 4/3 = 0), yet the two-sided diffusion bound holds and the
/// problem passes every check.
pub fn cubic<T: Real>() -> Problem<T> {
    let third = T::one() / T::of(3.0);
    let two_thirds = T::two() / T::of(3.0);
    let three = T::of(3.0);
    let field = CoefficientField::scalar(
        "cubic",
        move |x: T| three * x.signum() * x.abs().powf(third).min(T::one()),
        move |x: T| three * x.abs().powf(two_thirds).min(T::one()),
        FieldMeta {
            sup_b: three,
            sup_sigma: three,
            alpha: third,
            beta: two_thirds,
            // odd cube root doubles across the origin: 3 * 2^{2/3}
            c_b: three * T::two().powf(two_thirds),
            c_sigma: T::of(9.0),
        },
        vec![DegeneratePoint { point: vec![T::zero()], radius: T::one() }],
    )
    .expect("power coefficients are admissible");
    Problem {
        tag: "cubic".into(),
        family: PerturbationFamily::additive(field.clone()),
        field,
        init_law: InitLaw::Dirac(vec![T::zero()]),
        payoff_set: standard_payoffs(),
        notes: "boundary case of the exponent slack (1 + alpha - 2 beta = 0); \
                strong solution (x^{1/3} + W)^3 available as an oracle"
            .into(),
        waiver: false,
    }
}

/// Odd counterexample drift `sgn(x) min(|x|^{1/2}, 1)`, no diffusion: the
/// zero-noise limit splits and its transition kernel is discontinuous at 0.
pub fn signed_sqrt<T: Real>() -> Problem<T> {
    let half = T::half();
    let field = CoefficientField::scalar(
        "signed_sqrt",
        move |x: T| x.signum() * x.abs().powf(half).min(T::one()),
        |_| T::zero(),
        FieldMeta {
            sup_b: T::one(),
            sup_sigma: T::zero(),
            alpha: half,
            beta: T::of(0.6),
            c_b: T::two().sqrt(),
            c_sigma: T::one(),
        },
        vec![DegeneratePoint { point: vec![T::zero()], radius: T::one() }],
    )
    .expect("power coefficients are admissible");
    Problem {
        tag: "signed_sqrt".into(),
        family: PerturbationFamily::additive(field.clone()),
        field,
        init_law: InitLaw::Dirac(vec![T::zero()]),
        payoff_set: standard_payoffs(),
        notes: "outward odd drift; waiver: zero diffusion, and the selected limit \
                is not Feller (kernel jump at the origin)"
            .into(),
        waiver: true,
    }
}

/// Every built-in problem, in reporting order.
pub fn catalog<T: Real>() -> Vec<Problem<T>> {
    vec![
        constant_heat(),
        peano(0.3).expect("fixed exponent"),
        peano(0.5).expect("fixed exponent"),
        peano(0.7).expect("fixed exponent"),
        cubic(),
        signed_sqrt(),
    ]
}

pub fn find_problem<T: Real>(tag: &str) -> Result<Problem<T>> {
    catalog()
        .into_iter()
        .find(|p| p.tag == tag)
        .ok_or_else(|| CoreError::domain(format!("unknown problem tag: {tag}")))
}

// ---------------------------------------------------------------------------
// assumption audit

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemCheck {
    pub tag: String,
    pub waiver: bool,
    pub exponents: ExponentReport,
    pub holder: HolderReport,
    pub degeneracy: Vec<DegeneracyReport>,
    pub perturbation: PerturbationReport,
    /// All checks pass outright (boundary exponent slack counts as a pass
    /// with a note, not a failure).
    pub pass: bool,
    /// Passes, or the failures are covered by the waiver.
    pub acceptable: bool,
    pub notes: Vec<String>,
}

/// Audit a problem's declared metadata on a box: Holder constants, exponent
/// slacks, degenerate-point bounds, and the perturbation scheme.
pub fn validate_problem<T: Real>(
    problem: &Problem<T>,
    domain: &BoxDomain<T>,
    eps_list: &[T],
    seed: u64,
) -> Result<ProblemCheck> {
    let field = &problem.field;
    let exponents = check_exponents(field.meta.alpha, field.meta.beta)?;
    let holder = check_holder(field, domain, 400, seed)?;
    let mut degeneracy = Vec::new();
    for p in &field.degenerate_points {
        degeneracy.push(check_degenerate_point(field, &p.point, p.radius, 200, seed)?);
    }
    // the finest level's gram gap is exactly eps_min * sqrt(n) for the
    // additive scheme; the convergence tolerance must admit it
    let eps_min = eps_list
        .last()
        .copied()
        .ok_or_else(|| CoreError::domain("empty eps schedule"))?;
    let tol = eps_min * T::from_usize_(field.dim_state).sqrt() * T::of(1.0 + 1e-9) + T::of(1e-12);
    let perturbation = verify_perturbation_assumption(&problem.family, eps_list, domain, tol)?;
    let mut notes = Vec::new();
    if exponents.boundary {
        notes.push("exponent slack sits on the boundary of the admissible region".into());
    }
    let exp_ok = exponents.pass || exponents.boundary;
    let degen_ok = degeneracy.iter().all(|d| d.pass);
    let pass = exp_ok && holder.pass && degen_ok && perturbation.pass;
    if !pass && problem.waiver {
        notes.push("failures covered by the problem's waiver".into());
    }
    Ok(ProblemCheck {
        tag: problem.tag.clone(),
        waiver: problem.waiver,
        exponents,
        holder,
        degeneracy,
        perturbation,
        pass,
        acceptable: pass || problem.waiver,
        notes,
    })
}

// ---------------------------------------------------------------------------
// selection run

/// Physical halfwidth of the jump straddle near a degenerate point: just
/// inside the commitment scale eps^{2/3} of the finest schedules we run, and
/// a few cells wide on the default grids.
pub const STRADDLE_HALFWIDTH: f64 = 0.06;
/// Deterministic part of the MC-vs-FD cross-check tolerance.
pub const CROSS_TOL: f64 = 2e-2;
/// Steps used by the selection run's internal Monte Carlo calls.
const MC_STEPS: usize = 500;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub n_paths: usize,
    pub mc_dt: f64,
    pub grid: GridSummary,
    pub window: WindowSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TightnessBlock {
    pub eps: f64,
    pub report: MomentReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub x: Vec<f64>,
    pub t: f64,
    pub u_selected: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FellerRow {
    pub eps: f64,
    pub t: f64,
    /// |u(x* + d) - u(x* - d)| at the straddle halfwidth d.
    pub straddle: f64,
    /// Max adjacent-node increment over the window.
    pub window_modulus: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FellerDiagnostics {
    pub rows: Vec<FellerRow>,
    /// (t, adjacent modulus) of the elliptic reference solved on the same
    /// box and spacing.
    pub baseline: Vec<(f64, f64)>,
    pub straddle_halfwidth: f64,
    pub flagged: bool,
    pub flag_detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossRow {
    pub x: Vec<f64>,
    pub t: f64,
    pub fd_value: f64,
    pub mc_value: f64,
    pub mc_std_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FddRow {
    pub eps: f64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FddTable {
    pub payoffs: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<FddRow>,
    /// Successive |difference| <= 3 combined-sigma, per adjacent pair.
    pub within_band: Vec<bool>,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionFlags {
    pub tightness_pass: bool,
    pub cauchy_converging: bool,
    pub feller_flag: bool,
    pub fdd_converged: bool,
    pub cross_check_pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    pub problem: String,
    pub eps_schedule: Vec<f64>,
    pub provenance: Provenance,
    pub tightness: Vec<TightnessBlock>,
    pub cauchy: SweepSummary,
    pub probes: Vec<ProbeRow>,
    pub feller: FellerDiagnostics,
    pub fdd: FddTable,
    pub cross_checks: Vec<CrossRow>,
    pub flags: SelectionFlags,
}

/// Reporting window: the grid box shrunk by the influence margin of the
/// noisiest field plus one cell, horizon three quarters of the grid horizon.
pub fn reporting_window<T: Real>(
    family: &PerturbationFamily<T>,
    eps_max: T,
    grid: &GridSpec<T>,
) -> Result<ProbeWindow<T>> {
    let pert = family.perturb(eps_max)?;
    let margin = influence_margin(
        grid.t_final,
        pert.meta.sup_b,
        family.base.meta.sup_sigma,
        eps_max,
    );
    let space = grid.domain.shrunk(margin + grid.h).map_err(|_| {
        CoreError::domain(format!(
            "influence margin {} swallows the whole box; enlarge the grid",
            margin.as_f64()
        ))
    })?;
    ProbeWindow::new(space, grid.t_final * T::of(0.75))
}

fn probe_points<T: Real>(window: &ProbeWindow<T>, count: usize) -> Vec<Vec<T>> {
    let c = window.space.center();
    let lo = window.space.lo_at(0);
    let hi = window.space.hi_at(0);
    (0..count)
        .map(|k| {
            let frac = T::from_usize_(k) / T::from_usize_(count - 1);
            let mut x = c.clone();
            x[0] = lo + (hi - lo) * frac;
            x
        })
        .collect()
}

fn probe_times<T: Real>(t_final: T) -> Vec<T> {
    [0.25, 0.5, 0.75].iter().map(|&f| t_final * T::of(f)).collect()
}

/// The straddle center: first declared degenerate point, else the window
/// center.
fn straddle_center<T: Real>(field: &CoefficientField<T>, window: &ProbeWindow<T>) -> Vec<T> {
    field
        .degenerate_points
        .first()
        .map(|p| p.point.clone())
        .unwrap_or_else(|| window.space.center())
}

pub fn feller_diagnostics<T: Real>(
    problem: &Problem<T>,
    eps_list: &[T],
    solutions: &[LatticeFunction<T>],
    grid: &GridSpec<T>,
    window: &ProbeWindow<T>,
    payoff: &Payoff<T>,
) -> Result<FellerDiagnostics> {
    let times = probe_times(grid.t_final);
    let center = straddle_center(&problem.field, window);
    let cells = ((STRADDLE_HALFWIDTH / grid.h.as_f64()).round() as usize).max(1);
    let delta = grid.h * T::from_usize_(cells);

    // elliptic reference on the same box and spacing, with its own stable dt
    let heat = constant_heat::<T>();
    let baseline_fn = if problem.tag == heat.field.tag {
        None
    } else {
        let steps = suggest_steps(&heat.field, &grid.domain, grid.h, grid.t_final, &times, T::of(0.95))?;
        let bg = GridSpec::new(grid.domain.clone(), grid.h, grid.t_final, steps, grid.boundary)?;
        Some(solve(&heat.field, payoff, &bg)?)
    };
    let mut baseline = Vec::new();
    for &t in &times {
        let m = match &baseline_fn {
            Some(f) => f.adjacent_modulus(window, t)?,
            None => solutions
                .last()
                .ok_or_else(|| CoreError::domain("empty sweep"))?
                .adjacent_modulus(window, t)?,
        };
        baseline.push((t.as_f64(), m.as_f64()));
    }

    let mut xp = center.clone();
    let mut xm = center.clone();
    xp[0] = center[0] + delta;
    xm[0] = center[0] - delta;
    let mut rows = Vec::new();
    for (&eps, sol) in eps_list.iter().zip(solutions) {
        for &t in &times {
            let straddle = (sol.value_at(&xp, t)? - sol.value_at(&xm, t)?).abs();
            rows.push(FellerRow {
                eps: eps.as_f64(),
                t: t.as_f64(),
                straddle: straddle.as_f64(),
                window_modulus: sol.adjacent_modulus(window, t)?.as_f64(),
            });
        }
    }

    // A jump is flagged at a probe time when the finest-eps straddle clears
    // ten times the elliptic baseline AND keeps growing as eps shrinks; the
    // growth gate keeps merely-steep continuous limits (cube-root cusps)
    // from false-flagging.
    let mut flagged = false;
    let mut detail = String::new();
    for (k, &t) in times.iter().enumerate() {
        let j: Vec<f64> = eps_list
            .iter()
            .enumerate()
            .map(|(i, _)| rows[i * times.len() + k].straddle)
            .collect();
        let base = baseline[k].1;
        let finest = *j.last().expect("nonempty schedule");
        let coarsest = j[0];
        let above = finest > 10.0 * base;
        let monotone = j.windows(2).all(|w| w[1] >= 0.99 * w[0]);
        let growing = finest >= 1.25 * coarsest;
        if above && monotone && growing {
            flagged = true;
            detail.push_str(&format!(
                "t={}: straddle {:.4} > 10 x baseline {:.4}, growth x{:.2}; ",
                t.as_f64(),
                finest,
                base,
                if coarsest > 0.0 { finest / coarsest } else { f64::INFINITY },
            ));
        }
    }
    if !flagged {
        detail = "no straddle clears the baseline with sustained growth".into();
    }
    Ok(FellerDiagnostics {
        rows,
        baseline,
        straddle_halfwidth: delta.as_f64(),
        flagged,
        flag_detail: detail,
    })
}

/// The full selection study: tightness per eps, the Cauchy sweep, probe
/// values of the selected limit, Feller diagnostics against the elliptic
/// baseline, a k=3 fdd table, and MC-vs-FD cross rows.
pub fn run_selection<T: Real>(
    problem: &Problem<T>,
    eps_list: &[T],
    grid: &GridSpec<T>,
    mc_budget: usize,
    seed: u64,
) -> Result<SelectionReport> {
    let payoff = problem
        .payoff_set
        .first()
        .ok_or_else(|| CoreError::domain("problem has no payoffs"))?;
    if mc_budget == 0 {
        return Err(CoreError::domain("mc_budget must be positive"));
    }
    let eps_max = eps_list
        .first()
        .copied()
        .ok_or_else(|| CoreError::domain("empty eps schedule"))?;
    let window = reporting_window(&problem.family, eps_max, grid)?;
    let t_final = grid.t_final;
    let mc_dt = t_final / T::from_usize_(MC_STEPS);

    let sweep = eps_sweep(&problem.family, payoff, eps_list, grid, &window)?;

    let times = probe_times(t_final);
    let probes = probe_points(&window, 5);
    let mut probe_rows = Vec::new();
    for &t in &times {
        for x in &probes {
            probe_rows.push(ProbeRow {
                x: x.iter().map(|v| v.as_f64()).collect(),
                t: t.as_f64(),
                u_selected: sweep.selected().value_at(x, t)?.as_f64(),
            });
        }
    }

    // tightness shadow: fourth-moment increments on a handful of recorded
    // pairs, independent seeds per eps
    let mut tightness = Vec::new();
    let mut pair_stream = Stream::new(seed, 2);
    for (i, &eps) in eps_list.iter().enumerate() {
        let pert = problem.family.perturb(eps)?;
        let cfg = SimConfig {
            x0: problem.init_law.point().to_vec(),
            t_final,
            steps: MC_STEPS,
            n_paths: mc_budget.min(10_000),
            seed: seed.wrapping_add(100 + i as u64),
        };
        let mut pairs = Vec::new();
        for _ in 0..5 {
            let a = (pair_stream.next_uniform() * 0.8 * MC_STEPS as f64) as usize;
            let gap = 1 + (pair_stream.next_uniform() * 0.2 * MC_STEPS as f64) as usize;
            let b = (a + gap).min(MC_STEPS);
            if b > a {
                pairs.push((mc_dt * T::from_usize_(a), mc_dt * T::from_usize_(b)));
            }
        }
        let report = check_fourth_moment_bound(&pert, &cfg, &pairs)?;
        tightness.push(TightnessBlock { eps: eps.as_f64(), report });
    }

    let feller =
        feller_diagnostics(problem, eps_list, &sweep.solutions, grid, &window, payoff)?;

    // fdd table at k = 3 with the first payoff at the probe times
    let triple = vec![payoff.clone(), payoff.clone(), payoff.clone()];
    let fdd = fdd_table(
        problem,
        &triple,
        &times,
        eps_list,
        t_final,
        mc_dt,
        mc_budget,
        seed.wrapping_add(500),
    )?;

    // MC-vs-FD cross rows at the finest eps, mid horizon
    let finest = *eps_list.last().expect("nonempty schedule");
    let pert = problem.family.perturb(finest)?;
    let t_mid = times[1];
    let mut cross_checks = Vec::new();
    for (k, x) in probes.iter().enumerate() {
        let fd_value = sweep.selected().value_at(x, t_mid)?;
        let est = estimate_u(
            &pert,
            payoff,
            x,
            t_mid,
            mc_dt,
            mc_budget,
            seed.wrapping_add(900 + k as u64),
        )?;
        let tol = T::of(3.0) * est.std_error + T::of(CROSS_TOL);
        cross_checks.push(CrossRow {
            x: x.iter().map(|v| v.as_f64()).collect(),
            t: t_mid.as_f64(),
            fd_value: fd_value.as_f64(),
            mc_value: est.value.as_f64(),
            mc_std_error: est.std_error.as_f64(),
            pass: (est.value - fd_value).abs() <= tol,
        });
    }

    let flags = SelectionFlags {
        tightness_pass: tightness.iter().all(|b| b.report.pass),
        cauchy_converging: sweep.summary.converging,
        feller_flag: feller.flagged,
        fdd_converged: fdd.converged,
        cross_check_pass: cross_checks.iter().all(|r| r.pass),
    };
    Ok(SelectionReport {
        problem: problem.tag.clone(),
        eps_schedule: eps_list.iter().map(|v| v.as_f64()).collect(),
        provenance: Provenance {
            seed,
            n_paths: mc_budget,
            mc_dt: mc_dt.as_f64(),
            grid: grid.summary(),
            window: window.summary(),
        },
        tightness,
        cauchy: sweep.summary,
        probes: probe_rows,
        feller,
        fdd,
        cross_checks,
        flags,
    })
}

// ---------------------------------------------------------------------------
// splitting probability

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplittingRow {
    pub eps: f64,
    pub p_up: f64,
    pub std_error: f64,
    /// (p_up - 1/2) / std_error
    pub sigmas_from_half: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplittingTable {
    pub problem: String,
    pub t_final: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub drift_odd: bool,
    pub rows: Vec<SplittingRow>,
}

/// `P(X_T > 0 | X_0 = 0)` per eps.  For odd drift the exact answer is 1/2 at
/// every eps; the table records the trend for asymmetric fields.
pub fn splitting_probability<T: Real>(
    problem: &Problem<T>,
    eps_list: &[T],
    t_final: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<SplittingTable> {
    if problem.field.dim_state != 1 {
        return Err(CoreError::domain("splitting probabilities are one-dimensional"));
    }
    let at_zero = problem
        .field
        .degenerate_points
        .iter()
        .any(|p| p.point[0].abs() <= T::of(1e-12));
    if !at_zero && !problem.waiver {
        return Err(CoreError::domain(
            "0 is not a declared degenerate point (and the problem carries no waiver)",
        ));
    }
    let indicator = Payoff::of_scalar("above_zero", |x: T| {
        if x > T::zero() {
            T::one()
        } else {
            T::zero()
        }
    })
    .with_sup(T::one());
    let mut drift_odd = true;
    for k in 1..=8 {
        let x = T::of(0.25 * k as f64);
        let plus = problem.field.drift_vec(&[x])[0];
        let minus = problem.field.drift_vec(&[-x])[0];
        if (plus + minus).abs() > T::of(1e-12) * (T::one() + plus.abs()) {
            drift_odd = false;
        }
    }
    let mut rows = Vec::new();
    for (i, &eps) in eps_list.iter().enumerate() {
        let pert = problem.family.perturb(eps)?;
        let est = estimate_u(
            &pert,
            &indicator,
            &[T::zero()],
            t_final,
            dt,
            n_paths,
            seed.wrapping_add(i as u64),
        )?;
        let se = est.std_error.as_f64();
        rows.push(SplittingRow {
            eps: eps.as_f64(),
            p_up: est.value.as_f64(),
            std_error: se,
            sigmas_from_half: if se > 0.0 {
                (est.value.as_f64() - 0.5) / se
            } else {
                0.0
            },
        });
    }
    Ok(SplittingTable {
        problem: problem.tag.clone(),
        t_final: t_final.as_f64(),
        n_paths,
        seed,
        drift_odd,
        rows,
    })
}

// ---------------------------------------------------------------------------
// fdd convergence

fn fdd_table<T: Real>(
    problem: &Problem<T>,
    payoffs: &[Payoff<T>],
    times: &[T],
    eps_list: &[T],
    horizon: T,
    dt: T,
    n_paths: usize,
    seed: u64,
) -> Result<FddTable> {
    let mut rows = Vec::new();
    for (i, &eps) in eps_list.iter().enumerate() {
        let pert = problem.family.perturb(eps)?;
        let est = estimate_fdd(
            &pert,
            payoffs,
            times,
            problem.init_law.point(),
            horizon,
            dt,
            n_paths,
            seed.wrapping_add(i as u64),
        )?;
        rows.push(FddRow {
            eps: eps.as_f64(),
            estimate: est.value.as_f64(),
            std_error: est.std_error.as_f64(),
        });
    }
    let within_band: Vec<bool> = rows
        .windows(2)
        .map(|w| {
            let band = 3.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
            (w[1].estimate - w[0].estimate).abs() <= band
        })
        .collect();
    let converged = within_band.last().copied().unwrap_or(false);
    Ok(FddTable {
        payoffs: payoffs.iter().map(|p| p.name.clone()).collect(),
        times: times.iter().map(|t| t.as_f64()).collect(),
        rows,
        within_band,
        converged,
    })
}

/// Cauchy table of three-time product functionals across the eps schedule,
/// one independent seed per eps.
pub fn fdd_convergence<T: Real>(
    problem: &Problem<T>,
    payoffs: &[Payoff<T>],
    times: &[T],
    eps_list: &[T],
    n_paths: usize,
    seed: u64,
) -> Result<FddTable> {
    if payoffs.len() != 3 || times.len() != 3 {
        return Err(CoreError::domain("the three-time case is what ships: give 3 payoffs, 3 times"));
    }
    if !(times[0] > T::zero() && times[1] > times[0] && times[2] > times[1]) {
        return Err(CoreError::domain("times must be strictly increasing and positive"));
    }
    // all times must land on one step lattice
    let dt = times[0] / T::of(64.0);
    for &t in times {
        let k = (t / dt).as_f64();
        if (k - k.round()).abs() > 1e-9 {
            return Err(CoreError::domain(
                "times are incommensurate with the step lattice (t1/64)",
            ));
        }
    }
    let horizon = times[2] + dt;
    fdd_table(problem, payoffs, times, eps_list, horizon, dt, n_paths, seed)
}

// ---------------------------------------------------------------------------
// density extension

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityRow {
    pub payoff: String,
    /// sup |f_n - f| over window nodes.
    pub payoff_gap_window: f64,
    /// sup |f_n - f| over all grid nodes (what the contraction bound uses).
    pub payoff_gap_full: f64,
    /// sup |u_{f_n} - u_f| over the window, all probed slices.
    pub solution_gap: f64,
    pub contraction_ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityReport {
    pub problem: String,
    pub eps: f64,
    pub rows: Vec<DensityRow>,
    /// Window gaps between successive approximants' solutions.
    pub cauchy: Vec<f64>,
    pub pass: bool,
}

/// Checks that solving for an approximating payoff sequence is Cauchy and
/// lands on the sharp payoff's solution, within the scheme's contraction
/// bound sup|f_n - f|.
pub fn density_extension_check<T: Real>(
    problem: &Problem<T>,
    f: &Payoff<T>,
    f_seq: &[Payoff<T>],
    eps: T,
    grid: &GridSpec<T>,
) -> Result<DensityReport> {
    if f_seq.is_empty() {
        return Err(CoreError::domain("empty approximating sequence"));
    }
    let window = reporting_window(&problem.family, eps, grid)?;
    let keep = window_mask(grid, &window.space)?;
    let n = grid.num_nodes();
    let mut coords = Vec::new();
    let mut f_nodes = vec![T::zero(); n];
    for flat in 0..n {
        grid.node_coords(flat, &mut coords);
        f_nodes[flat] = f.eval(&coords);
    }
    let mut window_gaps = Vec::new();
    let mut full_gaps = Vec::new();
    for fn_k in f_seq {
        let mut wg = T::zero();
        let mut fg = T::zero();
        for flat in 0..n {
            grid.node_coords(flat, &mut coords);
            let d = (fn_k.eval(&coords) - f_nodes[flat]).abs();
            fg = fg.max(d);
            if keep.binary_search(&flat).is_ok() {
                wg = wg.max(d);
            }
        }
        window_gaps.push(wg);
        full_gaps.push(fg);
    }
    // refuse unless the sequence is actually converging on the window
    let nonincreasing = window_gaps.windows(2).all(|w| w[1] <= w[0] + T::of(1e-12));
    let shrinks = *window_gaps.last().expect("nonempty")
        <= *window_gaps.first().expect("nonempty") * T::half() + T::of(1e-12);
    if !(nonincreasing && shrinks) {
        return Err(CoreError::domain(
            "approximating sequence does not converge uniformly on the window",
        ));
    }

    let pert = problem.family.perturb(eps)?;
    let u_f = solve(&pert, f, grid)?;
    let mut rows = Vec::new();
    let mut cauchy = Vec::new();
    let mut prev: Option<LatticeFunction<T>> = None;
    let mut pass = true;
    for (k, fn_k) in f_seq.iter().enumerate() {
        let u_n = solve(&pert, fn_k, grid)?;
        let gap = u_n.window_sup_diff(&u_f, &window)?;
        let bound = full_gaps[k] + T::of(1e-12);
        let ok = gap <= bound;
        pass &= ok;
        if let Some(p) = &prev {
            cauchy.push(u_n.window_sup_diff(p, &window)?.as_f64());
        }
        rows.push(DensityRow {
            payoff: fn_k.name.clone(),
            payoff_gap_window: window_gaps[k].as_f64(),
            payoff_gap_full: full_gaps[k].as_f64(),
            solution_gap: gap.as_f64(),
            contraction_ok: ok,
        });
        prev = Some(u_n);
    }
    Ok(DensityReport {
        problem: problem.tag.clone(),
        eps: eps.as_f64(),
        rows,
        cauchy,
        pass,
    })
}
