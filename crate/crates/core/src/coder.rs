//! Zooming-in bound automata for the four scheme variants and the
//! synchronized encoder/decoder pair.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RMat, RVec};
use crate::plantloop::{Gains, SystemModel};
use crate::quantizer::{
    decode, deserialize_index, encode, serialize_index, QuantRegion, QuantizerSpec,
};
use crate::transform::{NormBoundCert, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeVariant {
    EstimateFull,
    EstimateSimple,
    OriginFull,
    OriginSimple,
}

impl SchemeVariant {
    pub const ALL: [SchemeVariant; 4] = [
        SchemeVariant::EstimateFull,
        SchemeVariant::EstimateSimple,
        SchemeVariant::OriginFull,
        SchemeVariant::OriginSimple,
    ];

    /// Full variants carry the separate first-step rate and use the frequency bound.
    pub fn is_full(self) -> bool {
        matches!(
            self,
            SchemeVariant::EstimateFull | SchemeVariant::OriginFull
        )
    }

    pub fn is_origin(self) -> bool {
        matches!(
            self,
            SchemeVariant::OriginFull | SchemeVariant::OriginSimple
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeVariant::EstimateFull => "estimate-full",
            SchemeVariant::EstimateSimple => "estimate-simple",
            SchemeVariant::OriginFull => "origin-full",
            SchemeVariant::OriginSimple => "origin-simple",
        }
    }
}

impl fmt::Display for SchemeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ZoomOut,
    ZoomIn,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::ZoomOut => "zoom-out",
            Stage::ZoomIn => "zoom-in",
        }
    }
}

/// The matrices driving the bounded quantity of a variant: the estimation error e
/// (estimate-centered) or the stacked z = [x; e] (origin-centered).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    /// Evolution on clear steps (A − LC, or A_cl).
    pub closed: RMat,
    /// Evolution on attacked steps (A, or A_op).
    pub open: RMat,
    /// Gain on the quantization error y − q (L, or L_cl).
    pub injection: RMat,
    /// Map to the quantized output's deviation from the center (C, or C_cl).
    pub output: RMat,
}

impl ErrorDynamics {
    pub fn estimate(model: &SystemModel, gains: &Gains) -> Self {
        Self {
            closed: &model.a - &gains.l * &model.c,
            open: model.a.clone(),
            injection: gains.l.clone(),
            output: model.c.clone(),
        }
    }

    /// A_cl = [[A−BK, BK], [0, A−LC]], A_op = [[A−BK, BK], [0, A]], L_cl = [0; L], C_cl = [C 0].
    pub fn origin(model: &SystemModel, gains: &Gains) -> Self {
        let n = model.n_x();
        let bk = &model.b * &gains.k;
        let mut closed = RMat::zeros(2 * n, 2 * n);
        closed.view_mut((0, 0), (n, n)).copy_from(&(&model.a - &bk));
        closed.view_mut((0, n), (n, n)).copy_from(&bk);
        let mut open = closed.clone();
        closed
            .view_mut((n, n), (n, n))
            .copy_from(&(&model.a - &gains.l * &model.c));
        open.view_mut((n, n), (n, n)).copy_from(&model.a);
        let mut injection = RMat::zeros(2 * n, model.n_y());
        injection
            .view_mut((n, 0), (n, model.n_y()))
            .copy_from(&gains.l);
        let mut output = RMat::zeros(model.n_y(), 2 * n);
        output
            .view_mut((0, 0), (model.n_y(), n))
            .copy_from(&model.c);
        Self {
            closed,
            open,
            injection,
            output,
        }
    }

    pub fn for_variant(variant: SchemeVariant, model: &SystemModel, gains: &Gains) -> Self {
        if variant.is_origin() {
            Self::origin(model, gains)
        } else {
            Self::estimate(model, gains)
        }
    }

    /// The bounded state: e for estimate variants, [x; e] for origin variants.
    pub fn state(variant: SchemeVariant, x: &RVec, x_hat: &RVec) -> RVec {
        let e = x - x_hat;
        if variant.is_origin() {
            let mut z = RVec::zeros(2 * x.len());
            z.rows_mut(0, x.len()).copy_from(x);
            z.rows_mut(x.len(), x.len()).copy_from(&e);
            z
        } else {
            e
        }
    }
}

/// Growth/contraction rates of one variant at a fixed level count N.
///
/// Full variants: attack θ_a = ‖RΞ_opR⁻¹‖∞, first step θ_0 = M0ρ + M·g/N, otherwise
/// θ = ρ + M·g/N, with g = ‖C R⁻¹‖∞. Simple variants take M0 = 1, ρ = ‖RΞR⁻¹‖∞,
/// M = ‖RL‖∞, so the first-step rate coincides with the contraction rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConstants {
    pub variant: SchemeVariant,
    pub growth_attack: f64,
    pub growth_first: f64,
    pub contraction: f64,
    pub levels: u64,
    pub output_gain: f64,
    pub decay: f64,
    pub overshoot: f64,
    pub injection_gain: f64,
}

impl SchemeConstants {
    pub fn from_parts(
        variant: SchemeVariant,
        growth_attack: f64,
        decay: f64,
        overshoot: f64,
        injection_gain: f64,
        output_gain: f64,
        levels: u64,
    ) -> Self {
        let mut c = Self {
            variant,
            growth_attack,
            growth_first: 0.0,
            contraction: 0.0,
            levels,
            output_gain,
            decay,
            overshoot,
            injection_gain,
        };
        c.set_levels(levels);
        c
    }

    /// Full variants need a certificate for `dynamics.closed`; simple variants ignore it.
    pub fn derive(
        variant: SchemeVariant,
        dynamics: &ErrorDynamics,
        transform: &Transform,
        cert: Option<&NormBoundCert>,
        levels: u64,
    ) -> Result<Self> {
        if transform.dim() != dynamics.closed.nrows() {
            return Err(Error::Dimension(format!(
                "transform is {0}x{0} but the {variant} error state has dimension {1}",
                transform.dim(),
                dynamics.closed.nrows()
            )));
        }
        let growth_attack = transform.conjugated_norm(&dynamics.open);
        let output_gain = transform.right_norm(&dynamics.output);
        let (decay, overshoot, injection_gain) = if variant.is_full() {
            let cert = cert.ok_or_else(|| {
                Error::InvalidParameter(format!("{variant} needs a norm-bound certificate"))
            })?;
            (cert.rho, cert.m0, cert.m)
        } else {
            (
                transform.conjugated_norm(&dynamics.closed),
                1.0,
                transform.left_norm(&dynamics.injection),
            )
        };
        Ok(Self::from_parts(
            variant,
            growth_attack,
            decay,
            overshoot,
            injection_gain,
            output_gain,
            levels,
        ))
    }

    pub fn set_levels(&mut self, levels: u64) {
        let q = self.injection_gain * self.output_gain / levels as f64;
        self.levels = levels;
        self.contraction = self.decay + q;
        self.growth_first = if self.variant.is_full() {
            self.overshoot * self.decay + q
        } else {
            self.contraction
        };
    }

    pub fn with_levels(&self, levels: u64) -> Self {
        let mut c = *self;
        c.set_levels(levels);
        c
    }

    /// N must exceed M·‖CR⁻¹‖∞/(1 − ρ).
    pub fn n_floor(&self) -> f64 {
        if self.decay >= 1.0 {
            f64::INFINITY
        } else {
            self.injection_gain * self.output_gain / (1.0 - self.decay)
        }
    }

    pub fn floor_ok(&self) -> bool {
        (self.levels as f64) > self.n_floor()
    }

    /// Next bound: attack rate if attacked, first-step rate at the first zoom-in step or
    /// right after an attack (full variants), contraction otherwise.
    pub fn rate(&self, attacked: bool, first_or_after_attack: bool) -> f64 {
        if attacked {
            self.growth_attack
        } else if first_or_after_attack && self.variant.is_full() {
            self.growth_first
        } else {
            self.contraction
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoderState {
    pub bound: f64,
    pub last_step_attacked: bool,
    pub stage: Stage,
    /// Absolute time.
    pub k: u64,
    /// Steps taken since zoom-in started.
    pub zoom_in_steps: u64,
}

impl CoderState {
    pub fn zoom_in(bound: f64, k: u64) -> Self {
        Self {
            bound,
            last_step_attacked: false,
            stage: Stage::ZoomIn,
            k,
            zoom_in_steps: 0,
        }
    }
}

pub fn update_bound(state: &CoderState, attacked: bool, consts: &SchemeConstants) -> f64 {
    let first = state.zoom_in_steps == 0 || state.last_step_attacked;
    consts.rate(attacked, first) * state.bound
}

fn advance(state: &mut CoderState, attacked: bool, consts: &SchemeConstants) {
    state.bound = update_bound(state, attacked, consts);
    state.last_step_attacked = attacked;
    state.k += 1;
    state.zoom_in_steps += 1;
}

/// Quantization region for the current bound.
pub fn coder_region(state: &CoderState, center: &RVec, consts: &SchemeConstants) -> QuantRegion {
    QuantRegion {
        center: center.clone(),
        half_width: consts.output_gain * state.bound,
    }
}

/// One zoom-in step of the encoder/decoder pair. On a clear step the encoder's
/// index crosses the channel as a little-endian payload and the decoder returns the
/// cell center; on an attacked step nothing is delivered. The acknowledgment makes
/// the attack known to both sides, so both automata take the same branch.
pub fn coder_pair_step(
    enc: &mut CoderState,
    dec: &mut CoderState,
    y: &RVec,
    center: &RVec,
    attacked: bool,
    consts: &SchemeConstants,
    spec: &QuantizerSpec,
) -> Result<Option<RVec>> {
    if enc != dec {
        return Err(Error::InvariantBreach {
            k: enc.k,
            what: "encoder and decoder states diverged".into(),
        });
    }
    if enc.stage != Stage::ZoomIn {
        return Err(Error::InvariantBreach {
            k: enc.k,
            what: "coder pair stepped outside zoom-in".into(),
        });
    }
    let q = if attacked {
        None
    } else {
        let index = encode(y, &coder_region(enc, center, consts), spec)?;
        let payload = serialize_index(index, spec);
        let received = deserialize_index(&payload, spec)?;
        Some(decode(received, &coder_region(dec, center, consts), spec)?)
    };
    advance(enc, attacked, consts);
    advance(dec, attacked, consts);
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_consts(variant: SchemeVariant) -> SchemeConstants {
        // a = 2, c = 1, l = 1.5, R = 1: a − lc = 0.5
        SchemeConstants::from_parts(variant, 2.0, 0.5, 1.0, 1.5, 1.0, 15)
    }

    #[test]
    fn scalar_simple_constants() {
        let c = scalar_consts(SchemeVariant::EstimateSimple);
        assert_abs_diff_eq!(c.contraction, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(c.growth_first, 0.6, epsilon = 1e-15);
        assert_eq!(c.growth_attack, 2.0);
        assert_abs_diff_eq!(c.n_floor(), 3.0, epsilon = 1e-15);
        assert!(c.floor_ok());
    }

    #[test]
    fn unit_overshoot_collapses_first_step_rate() {
        let c =
            SchemeConstants::from_parts(SchemeVariant::EstimateFull, 1.7, 0.6, 1.0, 0.8, 2.0, 21);
        assert_abs_diff_eq!(c.growth_first, c.contraction, epsilon = 1e-15);
    }

    #[test]
    fn hand_recursion_example() {
        // (θ_a, θ_0, θ) = (1.5, 0.8, 0.7)
        let c = SchemeConstants {
            variant: SchemeVariant::EstimateFull,
            growth_attack: 1.5,
            growth_first: 0.8,
            contraction: 0.7,
            levels: 3,
            output_gain: 1.0,
            decay: 0.0,
            overshoot: 1.0,
            injection_gain: 0.0,
        };
        let mut s = CoderState::zoom_in(1.0, 0);
        let mut seen = Vec::new();
        for attacked in [false, false, true, false] {
            advance(&mut s, attacked, &c);
            seen.push(s.bound);
        }
        for (got, want) in seen.iter().zip([0.8, 0.56, 0.84, 0.672]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn attack_free_full_recursion() {
        let c = SchemeConstants::from_parts(SchemeVariant::OriginFull, 3.0, 0.7, 2.5, 1.2, 1.1, 31);
        let mut s = CoderState::zoom_in(2.0, 5);
        for k in 1..40 {
            advance(&mut s, false, &c);
            let want = c.contraction.powi(k - 1) * c.growth_first * 2.0;
            assert_abs_diff_eq!(s.bound, want, epsilon = 1e-12 * want);
        }
    }

    #[test]
    fn pair_step_examples() {
        let c = scalar_consts(SchemeVariant::EstimateSimple);
        let spec = QuantizerSpec::new(15, 1).unwrap();
        let mut enc = CoderState::zoom_in(1.0, 0);
        let mut dec = enc;
        let yhat = RVec::from_element(1, 0.37);
        let q = coder_pair_step(&mut enc, &mut dec, &yhat, &yhat, false, &c, &spec).unwrap();
        assert_eq!(q, Some(yhat.clone()));
        let q = coder_pair_step(&mut enc, &mut dec, &yhat, &yhat, true, &c, &spec).unwrap();
        assert_eq!(q, None);
        assert_eq!(enc, dec);
        assert!(enc.last_step_attacked);
        dec.bound *= 2.0;
        assert!(matches!(
            coder_pair_step(&mut enc, &mut dec, &yhat, &yhat, false, &c, &spec),
            Err(Error::InvariantBreach { .. })
        ));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SchemeVariant::ALL {
            assert_eq!(v.as_str().parse::<SchemeVariant>().unwrap(), v);
        }
        assert!("estimate".parse::<SchemeVariant>().is_err());
    }

    #[test]
    fn origin_dynamics_blocks() {
        let model = SystemModel::new(
            RMat::from_row_slice(2, 2, &[1.1, 0.2, 0.0, 0.9]),
            RMat::from_row_slice(2, 1, &[0.0, 1.0]),
            RMat::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let gains = Gains {
            k: RMat::from_row_slice(1, 2, &[0.3, 0.4]),
            l: RMat::from_row_slice(2, 1, &[0.5, 0.1]),
        };
        let d = ErrorDynamics::origin(&model, &gains);
        let x = RVec::from_column_slice(&[0.3, -0.2]);
        let xh = RVec::from_column_slice(&[0.1, 0.4]);
        let z = ErrorDynamics::state(SchemeVariant::OriginFull, &x, &xh);
        // One clear step with exact output: x⁺ = Ax − BKx̂, x̂⁺ = Ax̂ − BKx̂ + LC(x − x̂).
        let u = -&gains.k * &xh;
        let x1 = &model.a * &x + &model.b * &u;
        let xh1 = &model.a * &xh + &model.b * &u + &gains.l * (&model.c * (&x - &xh));
        let z1 = ErrorDynamics::state(SchemeVariant::OriginFull, &x1, &xh1);
        assert_abs_diff_eq!(&d.closed * &z, z1, epsilon = 1e-14);
        assert_abs_diff_eq!(&d.output * &z, &model.c * &x, epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn encoder_and_decoder_stay_synchronized(
            attacks in prop::collection::vec(any::<bool>(), 1..200),
            offsets in prop::collection::vec(-1.0f64..=1.0, 200),
        ) {
            let c = scalar_consts(SchemeVariant::EstimateFull).with_levels(15);
            let spec = QuantizerSpec::new(15, 1).unwrap();
            let mut enc = CoderState::zoom_in(1.0, 0);
            let mut dec = enc;
            for (&a, &u) in attacks.iter().zip(&offsets) {
                let center = RVec::from_element(1, 0.25);
                let y = &center + RVec::from_element(1, u * c.output_gain * enc.bound);
                let q = coder_pair_step(&mut enc, &mut dec, &y, &center, a, &c, &spec).unwrap();
                prop_assert_eq!(enc, dec);
                prop_assert_eq!(q.is_none(), a);
            }
        }
    }
}
