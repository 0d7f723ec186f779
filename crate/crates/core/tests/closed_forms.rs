//! Cross-checks of both solution routes against closed forms that live
//! outside the library: the Gaussian convolution for the constant-diffusion
//! field, and the pathwise strong solution (x^{1/3} + W_t)^3 of the cubic
//! field before its caps bind.

use smallnoise::experiments::{constant_heat, cubic};
use smallnoise::fd::{solve, suggest_steps, BoundaryRule, GridSpec};
use smallnoise::mc::estimate_u;
use smallnoise::{BoxDomain64, Payoff64};

/// E[g(x + sqrt(2t) Z)] for g = exp(-x^2): variance doubles per unit time.
fn heat_closed_form(x: f64, t: f64) -> f64 {
    (1.0 + 4.0 * t).powf(-0.5) * (-x * x / (1.0 + 4.0 * t)).exp()
}

/// Trapezoid over [-8, 8] standard deviations; superexponentially accurate
/// for smooth integrands against a Gaussian weight.
fn gauss_expect(mut f: impl FnMut(f64) -> f64) -> f64 {
    let n = 4000;
    let lo = -8.0f64;
    let step = 16.0 / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let z = lo + step * i as f64;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += w * f(z) * (-0.5 * z * z).exp();
    }
    sum * step / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn monte_carlo_heat_matches_the_gaussian_convolution() {
    let field = constant_heat::<f64>().field;
    let payoff = Payoff64::of_scalar("gauss", |x: f64| (-x * x).exp()).with_sup(1.0);
    for (x, t) in [(0.0, 0.25), (0.7, 0.5), (-1.3, 1.0)] {
        let est = estimate_u(&field, &payoff, &[x], t, 1e-3, 40_000, 99).unwrap();
        let exact = heat_closed_form(x, t);
        let gap = (est.value - exact).abs();
        // Brownian increments are exact at every step size; only sampling
        // error remains
        assert!(
            gap <= 3.5 * est.std_error,
            "x {x} t {t}: mc {} vs exact {exact}, gap {gap} se {}",
            est.value,
            est.std_error
        );
    }
}

#[test]
fn cubic_routes_match_the_strong_solution_while_paths_stay_uncapped() {
    // X_t = (x^{1/3} + W_t)^3 solves the uncapped dynamics; with x = -0.3
    // and t = 0.0225 the caps at |x| = 1 bind with probability ~1e-2, so
    // both routes must sit within a few millis of the formula.
    let x0 = -0.3f64;
    let t = 0.0225f64;
    let root = x0.signum() * x0.abs().powf(1.0 / 3.0);
    let payoff = Payoff64::of_scalar("tanh", |x: f64| x.tanh()).with_sup(1.0);
    let exact = gauss_expect(|z| {
        let y = root + t.sqrt() * z;
        (y * y * y).tanh()
    });

    let problem = cubic::<f64>();
    let mc = estimate_u(&problem.field, &payoff, &[x0], t, 1e-4, 60_000, 5).unwrap();
    let mc_gap = (mc.value - exact).abs();
    assert!(
        mc_gap <= 3.0 * mc.std_error + 8e-3,
        "mc {} vs exact {exact}, gap {mc_gap} se {}",
        mc.value,
        mc.std_error
    );

    let domain = BoxDomain64::interval(-4.0, 4.0).unwrap();
    let steps = suggest_steps(&problem.field, &domain, 0.01, t, &[t], 0.95).unwrap();
    let grid = GridSpec::new(domain, 0.01, t, steps, BoundaryRule::FrozenDirichlet).unwrap();
    let u = solve(&problem.field, &payoff, &grid).unwrap();
    let fd_gap = (u.value_at(&[x0], t).unwrap() - exact).abs();
    assert!(fd_gap <= 8e-3, "fd gap {fd_gap} vs exact {exact}");
}
