//! Experiment configuration: flat TOML, mandatory seed, tags resolved
//! against the problem catalog.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use smallnoise::domain::BoxDomain;
use smallnoise::experiments::{cubic, find_problem, peano, signed_sqrt, constant_heat, Problem};
use smallnoise::fd::{suggest_steps, BoundaryRule, GridSpec};

/// One experiment = one problem, one eps schedule, one grid, one seed.
/// Parse -> serialize is the identity (unknown keys are rejected, absent
/// optionals stay absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog tag (e.g. "cubic").  Exactly one of `tag` / `family` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// Inline problem family ("constant_heat", "peano", "cubic",
    /// "signed_sqrt") for parameters the catalog does not enumerate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Drift exponent for the inline "peano" family.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,

    /// Perturbation schedule, strictly decreasing.
    pub eps: Vec<f64>,

    pub box_lo: f64,
    pub box_hi: f64,
    pub h: f64,
    pub t_final: f64,
    /// Explicit time step; omitted means the stability-suggested step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,

    /// No wall-clock seeding: reruns must reproduce bytes.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc_budget: Option<usize>,

    /// Explicit acknowledgement that the problem violates an assumption and
    /// the run should proceed anyway.  The experiment config is the
    /// authority: absent means no waiver, whatever the catalog entry says.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waiver: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Memory ceiling for lattice allocations, GiB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_gib: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("config does not parse")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn validate(&self) -> Result<()> {
        match (&self.tag, &self.family) {
            (Some(_), Some(_)) => bail!("give either tag or family, not both"),
            (None, None) => bail!("config names no problem: set tag or family"),
            _ => {}
        }
        if self.eps.is_empty() {
            bail!("eps schedule is empty");
        }
        if self.eps.windows(2).any(|w| !(w[0] > w[1])) {
            bail!("eps schedule must be strictly decreasing");
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            bail!("eps levels must be positive");
        }
        if !(self.box_hi > self.box_lo) {
            bail!("box_hi must exceed box_lo");
        }
        if !(self.h > 0.0) || !(self.t_final > 0.0) {
            bail!("h and t_final must be positive");
        }
        Ok(())
    }

    pub fn mc_budget(&self) -> usize {
        self.mc_budget.unwrap_or(10_000)
    }

    pub fn budget_bytes(&self) -> u64 {
        let gib = self.budget_gib.unwrap_or(2.0);
        (gib * (1u64 << 30) as f64) as u64
    }

    /// The configured problem, from the catalog or built inline, with the
    /// waiver taken from this config rather than the catalog entry.
    pub fn problem(&self) -> Result<Problem<f64>> {
        let mut problem = if let Some(tag) = &self.tag {
            find_problem(tag)?
        } else {
            match self.family.as_deref().expect("validated") {
                "constant_heat" => constant_heat(),
                "peano" => {
                    let alpha = self
                        .alpha
                        .ok_or_else(|| anyhow::anyhow!("inline peano needs alpha"))?;
                    peano(alpha)?
                }
                "cubic" => cubic(),
                "signed_sqrt" => signed_sqrt(),
                other => bail!("unknown family {other:?}"),
            }
        };
        problem.waiver = self.waiver.unwrap_or(false);
        Ok(problem)
    }

    pub fn domain(&self) -> Result<BoxDomain<f64>> {
        Ok(BoxDomain::interval(self.box_lo, self.box_hi)?)
    }

    /// Grid for the sweep: explicit dt when given, else the monotone step
    /// for the coarsest perturbed field with the probe times snapped.
    pub fn grid(&self, problem: &Problem<f64>) -> Result<GridSpec<f64>> {
        let domain = self.domain()?;
        if let Some(dt) = self.dt {
            return Ok(GridSpec::with_dt(
                domain,
                self.h,
                self.t_final,
                dt,
                BoundaryRule::FrozenDirichlet,
            )?);
        }
        let eps_max = self.eps[0];
        let pert = problem.family.perturb(eps_max)?;
        let probes: Vec<f64> = [0.25, 0.5, 0.75]
            .iter()
            .map(|f| f * self.t_final)
            .collect();
        let steps = suggest_steps(&pert, &domain, self.h, self.t_final, &probes, 0.95)?;
        Ok(GridSpec::new(
            domain,
            self.h,
            self.t_final,
            steps,
            BoundaryRule::FrozenDirichlet,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
tag = "cubic"
eps = [0.2, 0.1, 0.05]
box_lo = -6.0
box_hi = 6.0
h = 0.05
t_final = 0.5
seed = 42
"#;

    #[test]
    fn round_trip_is_identity() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn seed_is_mandatory() {
        let without = SAMPLE.replace("seed = 42", "");
        assert!(ExperimentConfig::from_toml(&without).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let with = format!("{SAMPLE}\nmystery = 3\n");
        assert!(ExperimentConfig::from_toml(&with).is_err());
    }

    #[test]
    fn tag_and_family_are_exclusive() {
        let both = format!("{SAMPLE}\nfamily = \"peano\"\nalpha = 0.5\n");
        assert!(ExperimentConfig::from_toml(&both).is_err());
    }

    #[test]
    fn inline_peano_resolves() {
        let text = SAMPLE
            .replace("tag = \"cubic\"", "family = \"peano\"\nalpha = 0.4");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let p = cfg.problem().unwrap();
        assert!(p.tag.contains("peano"));
    }

    #[test]
    fn increasing_eps_is_rejected() {
        let text = SAMPLE.replace("[0.2, 0.1, 0.05]", "[0.05, 0.1]");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }
}
