//! Plant, observer-based controller and the two-stage closed-loop engine.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackContext, Attacker, DoSCounters};
use crate::coder::{
    coder_pair_step, coder_region, CoderState, ErrorDynamics, SchemeConstants, Stage,
};
use crate::error::{Error, Result};
use crate::numerics::{RMat, RVec, ToComplex};
use crate::quantizer::{decode, encode, QuantizerSpec};
use crate::transform::Transform;
use crate::zoomout::{zoomout_step, ZoomOutParams, ZoomOutState};

/// Absolute-plus-relative tolerance of the per-step invariant checks.
pub const INVARIANT_TOL: f64 = 1e-10;

/// x⁺ = Ax + Bu, y = Cx.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: RMat,
    pub b: RMat,
    pub c: RMat,
}

impl SystemModel {
    pub fn new(a: RMat, b: RMat, c: RMat) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() || c.ncols() != a.nrows() {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B is {}x{}, C is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
}

/// Feedback gain K (u = −Kx̂) and observer gain L.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub k: RMat,
    pub l: RMat,
}

impl Gains {
    pub fn check(&self, model: &SystemModel) -> Result<()> {
        if self.k.shape() != (model.n_u(), model.n_x())
            || self.l.shape() != (model.n_x(), model.n_y())
        {
            return Err(Error::Dimension(
                "K must be n_u x n_x and L must be n_x x n_y".into(),
            ));
        }
        Ok(())
    }
}

pub fn plant_step(x: &RVec, u: &RVec, model: &SystemModel) -> (RVec, RVec) {
    (&model.a * x + &model.b * u, &model.c * x)
}

/// u = −Kx̂; x̂⁺ = Ax̂ + Bu + L(q − Cx̂) when q arrived, Ax̂ + Bu otherwise.
pub fn controller_step(
    x_hat: &RVec,
    q: Option<&RVec>,
    model: &SystemModel,
    gains: &Gains,
) -> (RVec, RVec) {
    let u = -(&gains.k * x_hat);
    let mut next = &model.a * x_hat + &model.b * &u;
    if let Some(q) = q {
        next += &gains.l * (q - &model.c * x_hat);
    }
    (next, u)
}

/// Everything the engine needs about the coding scheme.
#[derive(Debug, Clone)]
pub struct CodingScheme {
    pub consts: SchemeConstants,
    pub transform: Transform,
    pub dynamics: ErrorDynamics,
    pub spec: QuantizerSpec,
}

impl CodingScheme {
    /// E_{R,0} = ‖R‖∞·E₀ from a bound |x₀|∞ ≤ E₀ (with x̂₀ = 0).
    pub fn initial_bound(&self, e0: f64) -> f64 {
        self.transform.r_norm() * e0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialBound {
    /// Acquire a bound by zooming out first.
    ZoomOut(ZoomOutParams),
    /// |x₀|∞ ≤ e0 is known; start zoomed in.
    Known { e0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub x: RVec,
    pub x_hat: RVec,
    pub k: u64,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub k: u64,
    pub stage: Stage,
    pub attacked: bool,
    pub u: RVec,
    pub y: RVec,
    pub q: Option<RVec>,
    pub x_hat: RVec,
    pub x: RVec,
    /// Envelope E^x_k during zoom-out, transformed bound E_{R,k} during zoom-in.
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    /// First step from which every zoom-out output stayed inside the envelope.
    pub capture_time: Option<u64>,
    /// First zoom-in step.
    pub acquisition_time: Option<u64>,
    /// State bound emitted by the zoom-out stage.
    pub acquired_bound: Option<f64>,
    pub zoom_in_initial_bound: Option<f64>,
    pub final_bound: f64,
    pub max_state: f64,
    pub terminal_state: f64,
    /// Least-squares slope of ln E over the zoom-in stage.
    pub bound_log_slope: Option<f64>,
    pub attacks: u64,
    pub attack_runs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub records: Vec<SimRecord>,
    pub summary: SimSummary,
}

fn push_vec(s: &mut String, v: &RVec) {
    for x in v.iter() {
        let _ = write!(s, ",{x}");
    }
}

impl SimTrace {
    pub fn attack_flags(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.attacked).collect()
    }

    /// Transformed bounds of the zoom-in stage, in time order.
    pub fn zoom_in_bounds(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == Stage::ZoomIn)
            .map(|r| r.bound)
            .collect()
    }

    /// CSV with columns `k,stage,attacked,u…,y…,q…,xhat…,x…,E`; absent q is left empty.
    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = config_hash {
            let _ = writeln!(s, "# config_sha256={h}");
        }
        let Some(first) = self.records.first() else {
            s.push_str("k,stage,attacked,E\n");
            return s;
        };
        s.push_str("k,stage,attacked");
        for (name, n) in [
            ("u", first.u.len()),
            ("y", first.y.len()),
            ("q", first.y.len()),
            ("xhat", first.x.len()),
            ("x", first.x.len()),
        ] {
            for i in 0..n {
                let _ = write!(s, ",{name}{i}");
            }
        }
        s.push_str(",E\n");
        for r in &self.records {
            let _ = write!(s, "{},{},{}", r.k, r.stage.as_str(), u8::from(r.attacked));
            push_vec(&mut s, &r.u);
            push_vec(&mut s, &r.y);
            match &r.q {
                Some(q) => push_vec(&mut s, q),
                None => s.push_str(&",".repeat(r.y.len())),
            }
            push_vec(&mut s, &r.x_hat);
            push_vec(&mut s, &r.x);
            let _ = writeln!(s, ",{}", r.bound);
        }
        s
    }
}

/// Least-squares slope of ln(v) against the index; None for fewer than two positive points.
pub fn log_slope(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(i, v)| (i as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

fn breach(k: u64, what: String) -> Error {
    Error::InvariantBreach { k, what }
}

fn transformed(t: &Transform, z: &RVec) -> f64 {
    (&t.r * z.to_cmat())
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
}

enum Phase {
    ZoomOut(ZoomOutState),
    ZoomIn { enc: CoderState, dec: CoderState },
}

/// Run zoom-out (if requested) then zoom-in up to `horizon` steps, checking the
/// bound-overapproximation and error-dynamics invariants at every step.
pub fn run_closed_loop(
    model: &SystemModel,
    gains: &Gains,
    scheme: &CodingScheme,
    attacker: &mut dyn Attacker,
    x0: &RVec,
    initial: InitialBound,
    horizon: u64,
) -> Result<SimTrace> {
    gains.check(model)?;
    if x0.len() != model.n_x() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, plant has {} states",
            x0.len(),
            model.n_x()
        )));
    }
    let variant = scheme.consts.variant;
    let t = &scheme.transform;
    let dyn_ = &scheme.dynamics;
    let closed_r = t.conjugate(&dyn_.closed);
    let open_r = t.conjugate(&dyn_.open);
    let inj_r = &t.r * dyn_.injection.to_cmat();

    let mut x = x0.clone();
    let mut x_hat = RVec::zeros(model.n_x());
    let mut counters = DoSCounters::default();
    let mut summary = SimSummary::default();
    let mut records = Vec::with_capacity(horizon as usize);
    let mut capture_candidate: Option<u64> = None;

    let mut phase = match initial {
        InitialBound::ZoomOut(p) => Phase::ZoomOut(ZoomOutState::new(&model.a, &model.c, p, 0)?),
        InitialBound::Known { e0 } => {
            if x0.amax() > e0 {
                return Err(Error::InvalidParameter(format!(
                    "|x0| = {} exceeds the known bound {e0}",
                    x0.amax()
                )));
            }
            let s = CoderState::zoom_in(scheme.initial_bound(e0), 0);
            summary.acquisition_time = Some(0);
            summary.zoom_in_initial_bound = Some(s.bound);
            Phase::ZoomIn { enc: s, dec: s }
        }
    };

    for k in 0..horizon {
        let bound = match &phase {
            Phase::ZoomOut(zs) => zs.e_x,
            Phase::ZoomIn { enc, .. } => enc.bound,
        };
        if !bound.is_finite() || !x.iter().chain(x_hat.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericRange {
                k,
                what: format!("bound {bound:e} or state left the floating-point range"),
            });
        }
        let y = &model.c * &x;
        let e = &x - &x_hat;
        summary.max_state = summary.max_state.max(x.amax());
        match &mut phase {
            Phase::ZoomOut(zs) => {
                let envelope = zs.e_x;
                if y.amax() <= zs.e_y() {
                    capture_candidate.get_or_insert(k);
                } else {
                    capture_candidate = None;
                }
                let ctx = AttackContext {
                    k,
                    stage: Stage::ZoomOut,
                    a: &model.a,
                    e: &e,
                    y: &y,
                    q_clear: None,
                    cell_scale: 0.0,
                };
                let attacked = attacker.decide(&ctx, &counters);
                counters.record(attacked);
                let step = zoomout_step(zs, &y, attacked)?;
                let u = RVec::zeros(model.n_u());
                records.push(SimRecord {
                    k,
                    stage: Stage::ZoomOut,
                    attacked,
                    u: u.clone(),
                    y,
                    q: None,
                    x_hat: x_hat.clone(),
                    x: x.clone(),
                    bound: envelope,
                });
                x = plant_step(&x, &u, model).0;
                if let Some(bound) = step.acquired {
                    if x.amax() > bound * (1.0 + INVARIANT_TOL) + INVARIANT_TOL {
                        return Err(breach(
                            k + 1,
                            format!("acquired bound {bound} misses |x| = {}", x.amax()),
                        ));
                    }
                    x_hat = RVec::zeros(model.n_x());
                    let s = CoderState::zoom_in(scheme.initial_bound(bound), k + 1);
                    summary.capture_time = capture_candidate;
                    summary.acquisition_time = Some(k + 1);
                    summary.acquired_bound = Some(bound);
                    summary.zoom_in_initial_bound = Some(s.bound);
                    phase = Phase::ZoomIn { enc: s, dec: s };
                }
            }
            Phase::ZoomIn { enc, dec } => {
                let z = ErrorDynamics::state(variant, &x, &x_hat);
                let z_r = transformed(t, &z);
                let bound = enc.bound;
                if z_r > bound * (1.0 + INVARIANT_TOL) + INVARIANT_TOL {
                    return Err(breach(
                        k,
                        format!("transformed error {z_r} exceeds bound {bound}"),
                    ));
                }
                let center = if variant.is_origin() {
                    RVec::zeros(model.n_y())
                } else {
                    &model.c * &x_hat
                };
                let region = coder_region(enc, &center, &scheme.consts);
                let q_clear = encode(&y, &region, &scheme.spec)
                    .and_then(|i| decode(i, &region, &scheme.spec))
                    .map_err(|err| breach(k, err.to_string()))?;
                let ctx = AttackContext {
                    k,
                    stage: Stage::ZoomIn,
                    a: &model.a,
                    e: &e,
                    y: &y,
                    q_clear: Some(&q_clear),
                    cell_scale: region.half_width / scheme.spec.levels as f64,
                };
                let attacked = attacker.decide(&ctx, &counters);
                counters.record(attacked);
                let q = coder_pair_step(
                    enc,
                    dec,
                    &y,
                    &center,
                    attacked,
                    &scheme.consts,
                    &scheme.spec,
                )
                .map_err(|err| breach(k, err.to_string()))?;
                let (x_hat_next, u) = controller_step(&x_hat, q.as_ref(), model, gains);
                let x_next = plant_step(&x, &u, model).0;

                let z_next = ErrorDynamics::state(variant, &x_next, &x_hat_next);
                let zr = &t.r * z.to_cmat();
                let predicted = match &q {
                    Some(q) => &closed_r * &zr + &inj_r * (&y - q).to_cmat(),
                    None => &open_r * &zr,
                };
                let actual = &t.r * z_next.to_cmat();
                let gap = (&actual - &predicted)
                    .iter()
                    .map(|v| v.norm())
                    .fold(0.0, f64::max);
                let scale = 1.0 + z_r + actual.iter().map(|v| v.norm()).fold(0.0, f64::max);
                if gap > INVARIANT_TOL * scale {
                    return Err(breach(k, format!("error-dynamics identity off by {gap:e}")));
                }

                records.push(SimRecord {
                    k,
                    stage: Stage::ZoomIn,
                    attacked,
                    u,
                    y,
                    q,
                    x_hat: x_hat.clone(),
                    x: x.clone(),
                    bound,
                });
                x = x_next;
                x_hat = x_hat_next;
            }
        }
    }

    if let Phase::ZoomIn { enc, .. } = &phase {
        let z_r = transformed(t, &ErrorDynamics::state(variant, &x, &x_hat));
        if z_r > enc.bound * (1.0 + INVARIANT_TOL) + INVARIANT_TOL {
            return Err(breach(
                horizon,
                format!("transformed error {z_r} exceeds bound {}", enc.bound),
            ));
        }
        summary.final_bound = enc.bound;
    } else {
        summary.capture_time = capture_candidate;
        if let Phase::ZoomOut(zs) = &phase {
            summary.final_bound = zs.e_x;
        }
    }
    summary.max_state = summary.max_state.max(x.amax());
    summary.terminal_state = x.amax();
    summary.attacks = counters.phi_d;
    summary.attack_runs = counters.phi_f;
    let trace = SimTrace { records, summary };
    let mut bounds = trace.zoom_in_bounds();
    if summary_has_zoom_in(&trace) {
        bounds.push(trace.summary.final_bound);
    }
    let slope = log_slope(&bounds);
    Ok(SimTrace {
        summary: SimSummary {
            bound_log_slope: slope,
            ..trace.summary
        },
        records: trace.records,
    })
}

fn summary_has_zoom_in(trace: &SimTrace) -> bool {
    trace.summary.acquisition_time.is_some()
}
