//! Coefficient fields `(b, sigma)` with their regularity metadata, the
//! perturbation families used to regularise degenerate problems, and the
//! checkers for the standing assumptions:
//!
//! * Hoelder continuity of `b` (exponent `alpha`) and `sigma` (exponent
//!   `beta`) with declared constants,
//! * at each declared degenerate point `x*`: `b(x*) = 0`, `sigma(x*) = 0` and
//!   the two-sided power bound
//!   `C^-1 |x*-y|^(2 beta) |v|^2 <= v' sigma sigma' v <= C |x*-y|^(2 beta) |v|^2`
//!   on a ball around `x*`,
//! * the exponent slacks `1 + alpha - 2 beta > 0` and `beta > 1/2`.
//!
//! Checkers sample deterministically from a seeded counter stream, so reports
//! are reproducible.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{CoreError, Result};
use crate::linalg::{euclidean, euclidean_diff, frobenius, frobenius_diff, gram, min_eigenvalue};
use crate::rng::Stream;
use crate::scalar::Real;

pub type VectorFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;

/// Relative tolerance for exact-identity checks (values that should vanish or
/// match a closed form up to rounding).
pub const EXACT_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct DegeneratePoint<T> {
    pub point: Vec<T>,
    pub radius: T,
}

/// Hoelder and boundedness metadata declared alongside a field.
#[derive(Clone, Debug)]
pub struct FieldMeta<T> {
    pub sup_b: T,
    pub sup_sigma: T,
    pub alpha: T,
    pub beta: T,
    pub c_b: T,
    pub c_sigma: T,
}

/// Bounded coefficient pair `b : R^n -> R^n`, `sigma : R^n -> R^(n x m)`.
///
/// Evaluation closures write into caller buffers to keep the Monte Carlo
/// inner loop allocation-free; `sigma` is row-major `n x m`.
#[derive(Clone)]
pub struct CoefficientField<T: Real> {
    pub tag: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    drift: VectorFn<T>,
    diffusion: VectorFn<T>,
    pub meta: FieldMeta<T>,
    pub degenerate_points: Vec<DegeneratePoint<T>>,
}

impl<T: Real> std::fmt::Debug for CoefficientField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("tag", &self.tag)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .finish()
    }
}

fn check_exponent_range<T: Real>(name: &str, e: T) -> Result<()> {
    if !(e > T::zero() && e <= T::one()) {
        return Err(CoreError::domain(format!(
            "{name} exponent {e} outside (0, 1]"
        )));
    }
    Ok(())
}

impl<T: Real> CoefficientField<T> {
    pub fn new(
        tag: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        drift: VectorFn<T>,
        diffusion: VectorFn<T>,
        meta: FieldMeta<T>,
        degenerate_points: Vec<DegeneratePoint<T>>,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(CoreError::domain("state and noise dimensions must be >= 1"));
        }
        check_exponent_range("alpha", meta.alpha)?;
        check_exponent_range("beta", meta.beta)?;
        if !(meta.c_b > T::zero()) || !(meta.c_sigma > T::zero()) {
            return Err(CoreError::domain("Hoelder constants must be positive"));
        }
        if meta.sup_b < T::zero() || meta.sup_sigma < T::zero() {
            return Err(CoreError::domain("sup bounds must be nonnegative"));
        }
        for p in &degenerate_points {
            if p.point.len() != dim_state {
                return Err(CoreError::domain("degenerate point dimension mismatch"));
            }
            if !(p.radius > T::zero()) {
                return Err(CoreError::domain("degenerate point radius must be positive"));
            }
        }
        Ok(CoefficientField {
            tag: tag.into(),
            dim_state,
            dim_noise,
            drift,
            diffusion,
            meta,
            degenerate_points,
        })
    }

    /// Scalar field on the line from plain closures.
    pub fn scalar(
        tag: impl Into<String>,
        b: impl Fn(T) -> T + Send + Sync + 'static,
        sigma: impl Fn(T) -> T + Send + Sync + 'static,
        meta: FieldMeta<T>,
        degenerate_points: Vec<DegeneratePoint<T>>,
    ) -> Result<Self> {
        Self::new(
            tag,
            1,
            1,
            Arc::new(move |x: &[T], out: &mut [T]| out[0] = b(x[0])),
            Arc::new(move |x: &[T], out: &mut [T]| out[0] = sigma(x[0])),
            meta,
            degenerate_points,
        )
    }

    pub fn drift_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim_state);
        debug_assert_eq!(out.len(), self.dim_state);
        (self.drift)(x, out);
    }

    pub fn diffusion_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim_state);
        debug_assert_eq!(out.len(), self.dim_state * self.dim_noise);
        (self.diffusion)(x, out);
    }

    pub fn drift_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim_state];
        self.drift_into(x, &mut out);
        out
    }

    pub fn sigma(&self, x: &[T]) -> Array2<T> {
        let mut out = vec![T::zero(); self.dim_state * self.dim_noise];
        self.diffusion_into(x, &mut out);
        Array2::from_shape_vec((self.dim_state, self.dim_noise), out).expect("shape")
    }

    /// `sigma(x) sigma(x)^T`.
    pub fn gram_sigma(&self, x: &[T]) -> Array2<T> {
        gram(&self.sigma(x).view())
    }

    /// `A(x) = 1/2 sigma sigma^T`, the second-order coefficient of the
    /// generator.
    pub fn a_matrix(&self, x: &[T]) -> Array2<T> {
        self.gram_sigma(x).mapv_into(|v| v * T::half())
    }

    /// Evaluate on a lattice over `domain` and verify finiteness and the
    /// declared sup bounds.
    pub fn validate_on(&self, domain: &BoxDomain<T>, per_axis: usize) -> Result<()> {
        if domain.dim() != self.dim_state {
            return Err(CoreError::domain("box dimension mismatch"));
        }
        let slack = T::one() + T::of(EXACT_TOL);
        for x in domain.lattice(per_axis) {
            let b = self.drift_vec(&x);
            let s = self.sigma(&x);
            if b.iter().any(|v| !v.is_finite()) || s.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::domain(format!(
                    "field {} evaluates non-finite at {:?}",
                    self.tag,
                    x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
                )));
            }
            if euclidean(&b) > self.meta.sup_b * slack {
                return Err(CoreError::domain(format!(
                    "drift exceeds declared sup {} at {:?}",
                    self.meta.sup_b.as_f64(),
                    x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
                )));
            }
            if frobenius(&s.view()) > self.meta.sup_sigma * slack {
                return Err(CoreError::domain(format!(
                    "diffusion exceeds declared sup {} at {:?}",
                    self.meta.sup_sigma.as_f64(),
                    x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    /// Largest `K = max(sup_b, sup_sigma)`, the constant entering the
    /// fourth-moment increment bound.
    pub fn k_bound(&self) -> T {
        self.meta.sup_b.max(self.meta.sup_sigma)
    }
}

/// How a family `(b_eps, sigma_eps)` approaches the base field as
/// `eps -> 0`.
#[derive(Clone)]
pub enum PerturbationScheme<T: Real> {
    /// `b_eps = b`, `sigma_eps = [sigma | sqrt(eps) I]`, the canonical block
    /// augmentation realising `sigma_eps sigma_eps^T = sigma sigma^T + eps I`.
    AdditiveIsotropic,
    /// Caller-supplied rules; closures receive `eps` first.
    Custom {
        drift_rule: Arc<dyn Fn(T, &[T], &mut [T]) + Send + Sync>,
        diffusion_rule: Arc<dyn Fn(T, &[T], &mut [T]) + Send + Sync>,
        dim_noise: usize,
        sup_b_bump: T,
        sup_sigma_bump: T,
    },
}

#[derive(Clone)]
pub struct PerturbationFamily<T: Real> {
    pub base: CoefficientField<T>,
    pub scheme: PerturbationScheme<T>,
}

impl<T: Real> PerturbationFamily<T> {
    pub fn additive(base: CoefficientField<T>) -> Self {
        PerturbationFamily {
            base,
            scheme: PerturbationScheme::AdditiveIsotropic,
        }
    }

    /// The regularised field at level `eps >= 0`. Degenerate-point
    /// declarations are dropped: the perturbed diffusion no longer vanishes
    /// anywhere.
    pub fn perturb(&self, eps: T) -> Result<CoefficientField<T>> {
        if !(eps >= T::zero()) || !eps.is_finite() {
            return Err(CoreError::domain(format!("eps must be finite and >= 0, got {eps}")));
        }
        let n = self.base.dim_state;
        let meta = &self.base.meta;
        match &self.scheme {
            PerturbationScheme::AdditiveIsotropic => {
                let m = self.base.dim_noise;
                let root = eps.sqrt();
                let base_sigma = self.base.diffusion.clone();
                let diffusion: VectorFn<T> = Arc::new(move |x: &[T], out: &mut [T]| {
                    let n_loc = x.len();
                    let m_tot = m + n_loc;
                    // base block, then scaled identity block per row
                    let mut base = vec![T::zero(); n_loc * m];
                    (base_sigma)(x, &mut base);
                    for i in 0..n_loc {
                        out[i * m_tot..i * m_tot + m].copy_from_slice(&base[i * m..(i + 1) * m]);
                        for j in 0..n_loc {
                            out[i * m_tot + m + j] = if i == j { root } else { T::zero() };
                        }
                    }
                });
                CoefficientField::new(
                    format!("{}+eps{}", self.base.tag, eps.as_f64()),
                    n,
                    m + n,
                    self.base.drift.clone(),
                    diffusion,
                    FieldMeta {
                        sup_sigma: meta.sup_sigma + (eps * T::from_usize_(n)).sqrt(),
                        ..meta.clone()
                    },
                    Vec::new(),
                )
            }
            PerturbationScheme::Custom {
                drift_rule,
                diffusion_rule,
                dim_noise,
                sup_b_bump,
                sup_sigma_bump,
            } => {
                let dr = drift_rule.clone();
                let df = diffusion_rule.clone();
                let drift: VectorFn<T> = Arc::new(move |x: &[T], out: &mut [T]| dr(eps, x, out));
                let diffusion: VectorFn<T> = Arc::new(move |x: &[T], out: &mut [T]| df(eps, x, out));
                CoefficientField::new(
                    format!("{}+eps{}", self.base.tag, eps.as_f64()),
                    n,
                    *dim_noise,
                    drift,
                    diffusion,
                    FieldMeta {
                        sup_b: meta.sup_b + *sup_b_bump,
                        sup_sigma: meta.sup_sigma + *sup_sigma_bump,
                        ..meta.clone()
                    },
                    Vec::new(),
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// exponent check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentReport {
    pub alpha: f64,
    pub beta: f64,
    /// `1 + alpha - 2 beta`
    pub slack_drift_vs_diffusion: f64,
    /// `beta - 1/2`
    pub slack_beta: f64,
    pub pass: bool,
    /// Some slack vanished exactly: the assumption holds only in the
    /// boundary sense.
    pub boundary: bool,
}

pub fn check_exponents<T: Real>(alpha: T, beta: T) -> Result<ExponentReport> {
    check_exponent_range("alpha", alpha)?;
    check_exponent_range("beta", beta)?;
    let s1 = (T::one() + alpha - T::two() * beta).as_f64();
    let s2 = (beta - T::half()).as_f64();
    let boundary_tol = 1e-12;
    let boundary = s1.abs() <= boundary_tol || s2.abs() <= boundary_tol;
    Ok(ExponentReport {
        alpha: alpha.as_f64(),
        beta: beta.as_f64(),
        slack_drift_vs_diffusion: s1,
        slack_beta: s2,
        pass: s1 > boundary_tol && s2 > boundary_tol,
        boundary,
    })
}

// ---------------------------------------------------------------------------
// Hoelder check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolderReport {
    pub field: String,
    pub pairs_evaluated: usize,
    pub min_pair_distance: f64,
    pub max_ratio_b: f64,
    pub worst_pair_b: (Vec<f64>, Vec<f64>),
    pub max_ratio_sigma: f64,
    pub worst_pair_sigma: (Vec<f64>, Vec<f64>),
    pub c_b: f64,
    pub c_sigma: f64,
    pub pass_b: bool,
    pub pass_sigma: bool,
    pub pass: bool,
}

/// Sample pair ratios `|b(x)-b(y)| / |x-y|^alpha` (and the sigma analogue)
/// over `domain`. Pairs mix uniform draws with pairs forced down to 1e-6 of
/// the box diameter around the center, the corners and any declared
/// degenerate points, so cusp violations at small scales are not missed.
pub fn check_holder<T: Real>(
    field: &CoefficientField<T>,
    domain: &BoxDomain<T>,
    num_pairs: usize,
    seed: u64,
) -> Result<HolderReport> {
    if domain.dim() != field.dim_state {
        return Err(CoreError::domain("box dimension mismatch"));
    }
    if num_pairs == 0 {
        return Err(CoreError::domain("num_pairs must be >= 1"));
    }
    field.validate_on(domain, 9)?;

    let diam = euclidean_diff(domain.lo(), domain.hi());
    let mut pairs: Vec<(Vec<T>, Vec<T>)> = Vec::new();

    let mut centers: Vec<Vec<T>> = vec![domain.center()];
    centers.extend(domain.corners());
    for p in &field.degenerate_points {
        if domain.contains(&p.point) {
            centers.push(p.point.clone());
        }
    }
    let mut stream = Stream::new(seed, 0);
    for _ in 0..4 {
        centers.push(stream.next_point(domain.lo(), domain.hi()));
    }

    let clamp = |x: Vec<T>| -> Vec<T> {
        x.into_iter()
            .enumerate()
            .map(|(i, v)| v.max(domain.lo()[i]).min(domain.hi()[i]))
            .collect()
    };

    for c in &centers {
        for k in 1..=6 {
            // absolute scales down to 1e-6, capped by the box size
            let d = T::of(10f64.powi(-k)).min(diam * T::half());
            let mut dirs: Vec<Vec<T>> = Vec::new();
            for axis in 0..domain.dim() {
                let mut e = vec![T::zero(); domain.dim()];
                e[axis] = T::one();
                dirs.push(e);
            }
            if domain.dim() > 1 {
                dirs.push(stream.next_direction(domain.dim()));
            }
            for dir in dirs {
                let plus: Vec<T> = c.iter().zip(&dir).map(|(ci, di)| *ci + d * *di).collect();
                let minus: Vec<T> = c
                    .iter()
                    .zip(&dir)
                    .map(|(ci, di)| *ci - d * T::half() * *di)
                    .collect();
                pairs.push((c.clone(), clamp(plus.clone())));
                pairs.push((clamp(minus), clamp(plus)));
            }
        }
    }
    while pairs.len() < num_pairs {
        let x = stream.next_point(domain.lo(), domain.hi());
        let y = stream.next_point(domain.lo(), domain.hi());
        pairs.push((x, y));
    }

    let mut max_ratio_b = T::zero();
    let mut max_ratio_sigma = T::zero();
    let mut worst_b = (vec![], vec![]);
    let mut worst_sigma = (vec![], vec![]);
    let mut min_dist = T::infinity();
    let mut evaluated = 0usize;

    for (x, y) in &pairs {
        let dist = euclidean_diff(x, y);
        if !(dist > T::zero()) {
            continue;
        }
        evaluated += 1;
        min_dist = min_dist.min(dist);
        let db = euclidean_diff(&field.drift_vec(x), &field.drift_vec(y));
        let ds = frobenius_diff(&field.sigma(x).view(), &field.sigma(y).view());
        let rb = db / dist.powf(field.meta.alpha);
        let rs = ds / dist.powf(field.meta.beta);
        if rb > max_ratio_b {
            max_ratio_b = rb;
            worst_b = (x.clone(), y.clone());
        }
        if rs > max_ratio_sigma {
            max_ratio_sigma = rs;
            worst_sigma = (x.clone(), y.clone());
        }
    }

    let slack = T::one() + T::of(EXACT_TOL);
    let pass_b = max_ratio_b <= field.meta.c_b * slack;
    let pass_sigma = max_ratio_sigma <= field.meta.c_sigma * slack;
    let as_f64 = |v: &Vec<T>| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    Ok(HolderReport {
        field: field.tag.clone(),
        pairs_evaluated: evaluated,
        min_pair_distance: min_dist.as_f64(),
        max_ratio_b: max_ratio_b.as_f64(),
        worst_pair_b: (as_f64(&worst_b.0), as_f64(&worst_b.1)),
        max_ratio_sigma: max_ratio_sigma.as_f64(),
        worst_pair_sigma: (as_f64(&worst_sigma.0), as_f64(&worst_sigma.1)),
        c_b: field.meta.c_b.as_f64(),
        c_sigma: field.meta.c_sigma.as_f64(),
        pass_b,
        pass_sigma,
        pass: pass_b && pass_sigma,
    })
}

// ---------------------------------------------------------------------------
// degenerate point check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub field: String,
    pub x_star: Vec<f64>,
    pub radius: f64,
    pub norm_b_at_star: f64,
    pub norm_sigma_at_star: f64,
    pub vanishes_at_star: bool,
    pub samples: usize,
    /// Worst relative margin of the two-sided bound
    /// `min(q - lower, upper - q) / upper`; negative means violated.
    pub worst_margin: f64,
    pub worst_sample: Vec<f64>,
    pub pass: bool,
}

/// Verify that the field vanishes at `x_star` and that
/// `v' sigma(y) sigma(y)' v` stays inside the two-sided `|y - x*|^(2 beta)`
/// envelope with the declared constant, for sampled `y` in the ball of the
/// given radius and sampled directions `v`.  `x_star` must be one of the
/// field's declared degenerate points.
pub fn check_degenerate_point<T: Real>(
    field: &CoefficientField<T>,
    x_star: &[T],
    radius: T,
    num_samples: usize,
    seed: u64,
) -> Result<DegeneracyReport> {
    if x_star.len() != field.dim_state {
        return Err(CoreError::domain("x_star dimension mismatch"));
    }
    if !(radius > T::zero()) {
        return Err(CoreError::domain("radius must be positive"));
    }
    let declared = field
        .degenerate_points
        .iter()
        .any(|p| euclidean_diff(&p.point, x_star) <= T::of(1e-12));
    if !declared {
        return Err(CoreError::domain(format!(
            "x_star {:?} is not a declared degenerate point of {}",
            x_star.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            field.tag
        )));
    }
    if num_samples == 0 {
        return Err(CoreError::domain("num_samples must be >= 1"));
    }
    let n = field.dim_state;
    let tol = T::of(EXACT_TOL);
    let b_star = euclidean(&field.drift_vec(x_star));
    let s_star = frobenius(&field.sigma(x_star).view());
    let vanish_scale_b = T::one().max(field.meta.sup_b);
    let vanish_scale_s = T::one().max(field.meta.sup_sigma);
    let vanishes = b_star <= tol * vanish_scale_b && s_star <= tol * vanish_scale_s;

    let c = field.meta.c_sigma;
    let two_beta = T::two() * field.meta.beta;
    let mut worst_margin = T::infinity();
    let mut worst_sample: Vec<T> = x_star.to_vec();
    let mut stream = Stream::new(seed, 1);
    let mut accepted = 0usize;
    while accepted < num_samples {
        // uniform radius keeps small scales represented
        let r = radius * T::of(stream.next_uniform());
        if !(r > T::zero()) {
            continue;
        }
        let dir = stream.next_direction::<T>(n);
        let y: Vec<T> = x_star.iter().zip(&dir).map(|(xi, di)| *xi + r * *di).collect();
        // stay clear of other declared degenerate points: the bound is only
        // claimed away from them
        let near_other = field.degenerate_points.iter().any(|p| {
            euclidean_diff(&p.point, x_star) > tol && euclidean_diff(&p.point, &y) < radius * T::of(1e-9)
        });
        if near_other {
            continue;
        }
        accepted += 1;
        let g = field.gram_sigma(&y);
        let v = if n == 1 {
            vec![T::one()]
        } else {
            stream.next_direction::<T>(n)
        };
        let mut q = T::zero();
        for i in 0..n {
            for j in 0..n {
                q += v[i] * g[[i, j]] * v[j];
            }
        }
        let envelope = r.powf(two_beta);
        let lower = envelope / c;
        let upper = envelope * c;
        let margin = (q - lower).min(upper - q) / upper;
        if margin < worst_margin {
            worst_margin = margin;
            worst_sample = y;
        }
    }

    let pass = vanishes && worst_margin >= -tol;
    Ok(DegeneracyReport {
        field: field.tag.clone(),
        x_star: x_star.iter().map(|v| v.as_f64()).collect(),
        radius: radius.as_f64(),
        norm_b_at_star: b_star.as_f64(),
        norm_sigma_at_star: s_star.as_f64(),
        vanishes_at_star: vanishes,
        samples: accepted,
        worst_margin: worst_margin.as_f64(),
        worst_sample: worst_sample.iter().map(|v| v.as_f64()).collect(),
        pass,
    })
}

// ---------------------------------------------------------------------------
// perturbation family check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub eps: f64,
    pub sup_diff_drift: f64,
    /// Frobenius distance of `sigma_eps sigma_eps^T` from `sigma sigma^T`.
    pub sup_diff_gram: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub field: String,
    pub rows: Vec<PerturbationRow>,
    pub tol: f64,
    pub uniformly_elliptic: bool,
    pub converges: bool,
    pub pass: bool,
}

/// Verify on a lattice over `domain` that the family converges uniformly to
/// the base field along `eps_list` (strictly decreasing) and that every
/// perturbed `sigma_eps sigma_eps^T` is positive definite.
pub fn verify_perturbation_assumption<T: Real>(
    family: &PerturbationFamily<T>,
    eps_list: &[T],
    domain: &BoxDomain<T>,
    tol: T,
) -> Result<PerturbationReport> {
    if eps_list.is_empty() {
        return Err(CoreError::domain("eps_list must be nonempty"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CoreError::domain("eps_list must be strictly decreasing"));
    }
    if eps_list.iter().any(|e| !(*e > T::zero())) {
        return Err(CoreError::domain("eps values must be positive"));
    }
    if domain.dim() != family.base.dim_state {
        return Err(CoreError::domain("box dimension mismatch"));
    }
    let per_axis = match family.base.dim_state {
        1 => 101,
        2 => 21,
        _ => 7,
    };
    let points = domain.lattice(per_axis);
    let base_drift: Vec<Vec<T>> = points.iter().map(|x| family.base.drift_vec(x)).collect();
    let base_gram: Vec<Array2<T>> = points.iter().map(|x| family.base.gram_sigma(x)).collect();

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let pert = family.perturb(eps)?;
        let mut sup_b = T::zero();
        let mut sup_a = T::zero();
        let mut min_eig = T::infinity();
        for (i, x) in points.iter().enumerate() {
            let db = euclidean_diff(&pert.drift_vec(x), &base_drift[i]);
            let g = pert.gram_sigma(x);
            let da = frobenius_diff(&g.view(), &base_gram[i].view());
            sup_b = sup_b.max(db);
            sup_a = sup_a.max(da);
            min_eig = min_eig.min(min_eigenvalue(&g.view()));
        }
        rows.push(PerturbationRow {
            eps: eps.as_f64(),
            sup_diff_drift: sup_b.as_f64(),
            sup_diff_gram: sup_a.as_f64(),
            min_eigenvalue: min_eig.as_f64(),
        });
    }

    let uniformly_elliptic = rows.iter().all(|r| r.min_eigenvalue > 0.0);
    let jitter = 1e-12;
    let monotone = rows.windows(2).all(|w| {
        w[1].sup_diff_drift <= w[0].sup_diff_drift + jitter
            && w[1].sup_diff_gram <= w[0].sup_diff_gram + jitter
    });
    let last = rows.last().expect("nonempty");
    let converges =
        monotone && last.sup_diff_drift <= tol.as_f64() && last.sup_diff_gram <= tol.as_f64();
    Ok(PerturbationReport {
        field: family.base.tag.clone(),
        rows,
        tol: tol.as_f64(),
        uniformly_elliptic,
        converges,
        pass: uniformly_elliptic && converges,
    })
}

/// Exact-identity check for the additive scheme:
/// `sigma_eps sigma_eps^T == sigma sigma^T + eps I` at `x` up to a few ulps.
pub fn isotropic_identity_gap<T: Real>(
    family: &PerturbationFamily<T>,
    eps: T,
    x: &[T],
) -> Result<T> {
    let pert = family.perturb(eps)?;
    let got: Array2<T> = pert.gram_sigma(x);
    let mut want: Array2<T> = family.base.gram_sigma(x);
    for i in 0..family.base.dim_state {
        want[[i, i]] += eps;
    }
    Ok(frobenius_diff(&got.view(), &want.view()))
}

pub fn sigma_view<T: Real>(m: &Array2<T>) -> ArrayView2<'_, T> {
    m.view()
}
