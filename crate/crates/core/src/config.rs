//! TOML run configuration, embedded presets, and assembly into model, gains and scheme.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{grid_axis, Parity};
use crate::attack::{
    periodic_trace, random_trace, Attacker, DoSBudget, DoSTrace, GreedyAttackParams,
    GreedyAttacker, NoAttack, ScriptedAttacker, ZoomOutPolicy,
};
use crate::coder::{ErrorDynamics, SchemeConstants, SchemeVariant};
use crate::error::{Error, Result};
use crate::numerics::{
    kalman_predictor_gain, lqr_gain, spectral_radius, zoh_discretize, RMat, RVec, C64,
};
use crate::plantloop::{CodingScheme, Gains, InitialBound, SystemModel};
use crate::quantizer::QuantizerSpec;
use crate::transform::{
    fit_norm_bounds, scaled_jordan_transform, NormBoundCert, RhoChoice, Transform, TransformTarget,
};

/// Row-major matrix.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum PlantSpec {
    /// Sampled with a zero-order hold at period `h`.
    Continuous {
        a: Rows,
        b: Rows,
        c: Rows,
        h: f64,
    },
    Discrete {
        a: Rows,
        b: Rows,
        c: Rows,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum GainSpec {
    /// LQR weights (q, r) and predictor Kalman covariances (w, v).
    Design {
        q: Rows,
        r: Rows,
        w: Rows,
        v: Rows,
    },
    Explicit {
        k: Rows,
        l: Rows,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", deny_unknown_fields)]
pub enum TransformPolicy {
    /// A − LC for estimate-simple, A for estimate-full, A_cl for origin variants.
    #[default]
    Auto,
    DiagonalizeA,
    DiagonalizeAMinusLc,
    DiagonalizeACl,
    Explicit {
        matrix: Rows,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum RhoSpec {
    Margin { margin: f64 },
    Fixed { value: f64 },
}

impl Default for RhoSpec {
    fn default() -> Self {
        RhoSpec::Margin { margin: 1e-3 }
    }
}

fn default_eps() -> f64 {
    1e-3
}

fn default_parity() -> Parity {
    Parity::Odd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub variant: SchemeVariant,
    pub levels: u64,
    /// Parity of the minimum-N search.
    #[serde(default = "default_parity")]
    pub parity: Parity,
    /// Slack of the transform: ‖RΞR⁻¹‖∞ ≤ ρ(Ξ) + eps.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub transform: TransformPolicy,
    #[serde(default)]
    pub rho: RhoSpec,
}

/// Missing frequency fields mean "no frequency constraint", stored as (1, 1/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub pi_d: f64,
    pub nu_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_f: Option<f64>,
}

impl BudgetSpec {
    pub fn budget(&self) -> Result<DoSBudget> {
        match (self.pi_f, self.nu_f) {
            (None, None) => DoSBudget::duration_only(self.pi_d, self.nu_d),
            (Some(pi_f), Some(nu_f)) => DoSBudget::new(self.pi_d, self.nu_d, pi_f, nu_f),
            _ => Err(Error::Config(
                "attack.budget: give both pi_f and nu_f or neither".into(),
            )),
        }
    }
}

fn default_zoom_out_policy() -> ZoomOutPolicy {
    ZoomOutPolicy::Saturate
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum AttackSpec {
    #[default]
    None,
    Greedy {
        budget: BudgetSpec,
        alpha1: f64,
        alpha2: f64,
        #[serde(default = "default_zoom_out_policy")]
        zoom_out: ZoomOutPolicy,
    },
    /// Adaptive Bernoulli trace drawn from the run seed.
    Random { budget: BudgetSpec },
    Periodic {
        budget: BudgetSpec,
        period: usize,
        offset: usize,
    },
    /// `pattern` is a string of 0/1 per step.
    Scripted { budget: BudgetSpec, pattern: String },
}

impl AttackSpec {
    pub fn budget(&self) -> Result<DoSBudget> {
        match self {
            AttackSpec::None => Ok(DoSBudget::none()),
            AttackSpec::Greedy { budget, .. }
            | AttackSpec::Random { budget }
            | AttackSpec::Periodic { budget, .. }
            | AttackSpec::Scripted { budget, .. } => budget.budget(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        grid_axis(self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub nu_d: AxisSpec,
    pub nu_f: AxisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub name: String,
    pub x0: Vec<f64>,
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantSpec,
    pub gains: GainSpec,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    pub initial: InitialBound,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

pub const PRESETS: &[(&str, &str)] = &[
    (
        "batch-reactor",
        include_str!("../presets/batch-reactor.toml"),
    ),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    ("fig8", include_str!("../presets/fig8.toml")),
];

fn matrix(rows: &Rows, field: &str) -> Result<RMat> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!(
            "{field}: expected a non-empty rectangular matrix"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{field}: entries must be finite")));
    }
    Ok(RMat::from_fn(n, m, |i, j| rows[i][j]))
}

fn square(rows: &Rows, n: usize, field: &str) -> Result<RMat> {
    let m = matrix(rows, field)?;
    if m.shape() != (n, n) {
        return Err(Error::Config(format!(
            "{field}: expected {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

/// Coding scheme and (full variants) its norm-bound certificate.
pub fn build_scheme(
    variant: SchemeVariant,
    model: &SystemModel,
    gains: &Gains,
    spec: &SchemeSpec,
) -> Result<(CodingScheme, Option<NormBoundCert>)> {
    let dynamics = ErrorDynamics::for_variant(variant, model, gains);
    let default_target = match variant {
        SchemeVariant::EstimateSimple => TransformTarget::AMinusLc,
        SchemeVariant::EstimateFull => TransformTarget::A,
        _ => TransformTarget::ClosedLoop,
    };
    let target_matrix = |t: TransformTarget| match t {
        TransformTarget::A => model.a.clone(),
        _ => dynamics.closed.clone(),
    };
    let incompatible = || {
        Error::Config(format!(
            "scheme.transform: policy does not apply to {variant}"
        ))
    };
    let transform = match &spec.transform {
        TransformPolicy::Auto => {
            scaled_jordan_transform(&target_matrix(default_target), spec.eps, default_target)?
        }
        TransformPolicy::DiagonalizeA if !variant.is_origin() => {
            scaled_jordan_transform(&model.a, spec.eps, TransformTarget::A)?
        }
        TransformPolicy::DiagonalizeAMinusLc if !variant.is_origin() => {
            scaled_jordan_transform(&dynamics.closed, spec.eps, TransformTarget::AMinusLc)?
        }
        TransformPolicy::DiagonalizeACl if variant.is_origin() => {
            scaled_jordan_transform(&dynamics.closed, spec.eps, TransformTarget::ClosedLoop)?
        }
        TransformPolicy::Explicit { matrix: rows } => {
            let n = dynamics.closed.nrows();
            let r = square(rows, n, "scheme.transform.matrix")?;
            Transform::from_matrix(
                r.map(|v| C64::new(v, 0.0)),
                TransformTarget::Explicit,
                &target_matrix(default_target),
            )?
        }
        _ => return Err(incompatible()),
    };
    let cert = if variant.is_full() {
        let rho = match spec.rho {
            RhoSpec::Margin { margin } => RhoChoice::Margin(margin),
            RhoSpec::Fixed { value } => RhoChoice::Fixed(value),
        };
        Some(fit_norm_bounds(
            &transform,
            &dynamics.closed,
            &dynamics.injection,
            rho,
        )?)
    } else {
        None
    };
    let consts =
        SchemeConstants::derive(variant, &dynamics, &transform, cert.as_ref(), spec.levels)?;
    let quant = QuantizerSpec::new(spec.levels, model.n_y())?;
    Ok((
        CodingScheme {
            consts,
            transform,
            dynamics,
            spec: quant,
        },
        cert,
    ))
}

/// Everything a run needs, assembled from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: SystemModel,
    pub gains: Gains,
    pub scheme: CodingScheme,
    pub cert: Option<NormBoundCert>,
    pub budget: DoSBudget,
    pub x0: RVec,
    pub warnings: Vec<String>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml(text)
    }

    pub fn with_variant(&self, variant: SchemeVariant) -> Self {
        let mut c = self.clone();
        c.scheme.variant = variant;
        c
    }

    /// Structural checks that need no numerics.
    pub fn validate(&self) -> Result<()> {
        if self.scheme.levels < 3 || self.scheme.levels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "scheme.levels: must be odd and ≥ 3, got {}",
                self.scheme.levels
            )));
        }
        if !(self.scheme.eps > 0.0) {
            return Err(Error::Config("scheme.eps: must be positive".into()));
        }
        self.attack
            .budget()
            .map_err(|e| Error::Config(format!("attack.budget: {e}")))?;
        match &self.attack {
            AttackSpec::Greedy { alpha1, alpha2, .. } => {
                GreedyAttackParams::new(*alpha1, *alpha2)
                    .map_err(|e| Error::Config(format!("attack: {e}")))?;
            }
            AttackSpec::Periodic { period, .. } if *period == 0 => {
                return Err(Error::Config("attack.period: must be positive".into()));
            }
            AttackSpec::Scripted { pattern, .. }
                if pattern.chars().any(|ch| ch != '0' && ch != '1') =>
            {
                return Err(Error::Config(
                    "attack.pattern: only 0 and 1 are allowed".into(),
                ));
            }
            _ => {}
        }
        match self.initial {
            InitialBound::ZoomOut(p) => p
                .check()
                .map_err(|e| Error::Config(format!("initial: {e}")))?,
            InitialBound::Known { e0 } if !(e0 >= 0.0) => {
                return Err(Error::Config("initial.e0: must be ≥ 0".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SystemModel> {
        let (a, b, c) = match &self.plant {
            PlantSpec::Continuous { a, b, c, h } => {
                if !(*h > 0.0) {
                    return Err(Error::Config(
                        "plant.h: sampling period must be positive".into(),
                    ));
                }
                let ac = matrix(a, "plant.a")?;
                let (ad, bd) = zoh_discretize(&ac, &matrix(b, "plant.b")?, *h)?;
                (ad, bd, matrix(c, "plant.c")?)
            }
            PlantSpec::Discrete { a, b, c } => (
                matrix(a, "plant.a")?,
                matrix(b, "plant.b")?,
                matrix(c, "plant.c")?,
            ),
        };
        SystemModel::new(a, b, c).map_err(|e| Error::Config(format!("plant: {e}")))
    }

    pub fn gains(&self, model: &SystemModel) -> Result<Gains> {
        let (nx, nu, ny) = (model.n_x(), model.n_u(), model.n_y());
        let g = match &self.gains {
            GainSpec::Design { q, r, w, v } => Gains {
                k: lqr_gain(
                    &model.a,
                    &model.b,
                    &square(q, nx, "gains.q")?,
                    &square(r, nu, "gains.r")?,
                )?,
                l: kalman_predictor_gain(
                    &model.a,
                    &model.c,
                    &square(w, nx, "gains.w")?,
                    &square(v, ny, "gains.v")?,
                )?,
            },
            GainSpec::Explicit { k, l } => Gains {
                k: matrix(k, "gains.k")?,
                l: matrix(l, "gains.l")?,
            },
        };
        g.check(model)
            .map_err(|e| Error::Config(format!("gains: {e}")))?;
        Ok(g)
    }

    pub fn build(&self) -> Result<Setup> {
        self.validate()?;
        let model = self.model()?;
        let gains = self.gains(&model)?;
        if self.x0.len() != model.n_x() {
            return Err(Error::Config(format!(
                "x0: expected {} entries, got {}",
                model.n_x(),
                self.x0.len()
            )));
        }
        let mut warnings = Vec::new();
        let rho_a = spectral_radius(&model.a)?;
        if rho_a < 1.0 {
            warnings.push(format!(
                "A is Schur stable (spectral radius {rho_a}): trivially stabilizable; A must not be Schur stable for the coding schemes to be meaningful"
            ));
        }
        let (scheme, cert) = build_scheme(self.scheme.variant, &model, &gains, &self.scheme)?;
        Ok(Setup {
            model,
            gains,
            scheme,
            cert,
            budget: self.attack.budget()?,
            x0: RVec::from_column_slice(&self.x0),
            warnings,
        })
    }

    pub fn attacker(&self) -> Result<Box<dyn Attacker>> {
        let budget = self.attack.budget()?;
        let len = self.horizon as usize;
        Ok(match &self.attack {
            AttackSpec::None => Box::new(NoAttack),
            AttackSpec::Greedy {
                alpha1,
                alpha2,
                zoom_out,
                ..
            } => Box::new(GreedyAttacker {
                params: GreedyAttackParams::new(*alpha1, *alpha2)?,
                budget,
                zoom_out: *zoom_out,
            }),
            AttackSpec::Random { .. } => {
                Box::new(ScriptedAttacker(random_trace(budget, self.seed, len)?))
            }
            AttackSpec::Periodic { period, offset, .. } => Box::new(ScriptedAttacker(
                periodic_trace(*period, *offset, len, budget)?,
            )),
            AttackSpec::Scripted { pattern, .. } => {
                let attacked = pattern.chars().map(|ch| ch == '1').collect();
                Box::new(ScriptedAttacker(DoSTrace::new(attacked, budget)?))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn presets_round_trip() {
        for (name, _) in PRESETS {
            let cfg = Config::preset(name).unwrap();
            let again = Config::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again, "{name}");
            assert_eq!(cfg.hash(), again.hash());
            assert_eq!(cfg.hash().len(), 64);
        }
    }

    #[test]
    fn batch_reactor_constants() {
        let cfg = Config::preset("batch-reactor").unwrap();
        let simple = cfg
            .with_variant(SchemeVariant::EstimateSimple)
            .build()
            .unwrap();
        assert!(simple.warnings.is_empty());
        assert_abs_diff_eq!(simple.scheme.consts.growth_attack, 2.901, epsilon = 0.03);
        let full = cfg
            .with_variant(SchemeVariant::EstimateFull)
            .build()
            .unwrap();
        assert_abs_diff_eq!(full.scheme.consts.growth_attack, 1.489, epsilon = 0.005);
        assert!(full.cert.is_some());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let cfg = Config::preset("batch-reactor").unwrap();
        let text = cfg.to_toml().replace("levels = 71", "levels = 70");
        let err = Config::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("scheme.levels"), "{err}");
        let text = cfg
            .to_toml()
            .replace("levels = 71", "levels = 71\nbogus = 1");
        let err = Config::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let mut bad = cfg.clone();
        bad.x0.pop();
        assert!(bad.build().unwrap_err().to_string().contains("x0"));
        let mut bad = cfg.with_variant(SchemeVariant::OriginSimple);
        bad.scheme.transform = TransformPolicy::DiagonalizeA;
        assert!(bad
            .build()
            .unwrap_err()
            .to_string()
            .contains("scheme.transform"));
    }

    #[test]
    fn schur_stable_plant_warns() {
        let mut cfg = Config::preset("batch-reactor").unwrap();
        cfg.plant = PlantSpec::Discrete {
            a: vec![vec![0.5, 0.0], vec![0.0, 0.4]],
            b: vec![vec![1.0], vec![0.0]],
            c: vec![vec![1.0, 1.0]],
        };
        cfg.gains = GainSpec::Explicit {
            k: vec![vec![0.1, 0.0]],
            l: vec![vec![0.1], vec![0.1]],
        };
        cfg.x0 = vec![0.1, 0.1];
        let setup = cfg.build().unwrap();
        assert!(setup.warnings[0].contains("trivially stabilizable"));
    }

    #[test]
    fn missing_frequency_means_unconstrained() {
        let b = BudgetSpec {
            pi_d: 2.0,
            nu_d: 0.1,
            pi_f: None,
            nu_f: None,
        }
        .budget()
        .unwrap();
        assert_eq!((b.pi_f, b.nu_f), (1.0, 0.5));
        assert!(BudgetSpec {
            pi_d: 2.0,
            nu_d: 0.1,
            pi_f: Some(1.0),
            nu_f: None
        }
        .budget()
        .is_err());
    }
}
