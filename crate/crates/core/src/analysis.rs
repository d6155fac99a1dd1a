//! Closed-form stability conditions, minimum level counts, (ν_d, ν_f) frontiers and
//! run classification.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::DoSBudget;
use crate::coder::SchemeConstants;
use crate::error::{Error, Result};
use crate::plantloop::{log_slope, SimTrace};

/// Upper limit of the level-count search.
pub const N_CAP: u64 = 1_000_000;

/// ν_d < intercept + slope·ν_f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierLine {
    pub intercept: f64,
    pub slope: f64,
}

impl FrontierLine {
    pub fn nu_d_max(&self, nu_f: f64) -> f64 {
        self.intercept + self.slope * nu_f
    }
}

fn line_from_rates(
    attack: f64,
    first: f64,
    contraction: f64,
    ignore_frequency: bool,
) -> FrontierLine {
    let denom = (attack / contraction).ln();
    let slope = if ignore_frequency {
        0.0
    } else {
        -(first / contraction).ln() / denom
    };
    FrontierLine {
        intercept: (1.0 / contraction).ln() / denom,
        slope,
    }
}

/// Frontier at the constants' own N.
pub fn frontier_line(c: &SchemeConstants) -> FrontierLine {
    line_from_rates(
        c.growth_attack,
        c.growth_first,
        c.contraction,
        !c.variant.is_full(),
    )
}

/// Limit of the frontier as N → ∞ (θ → ρ, θ₀ → M0·ρ).
pub fn asymptote(c: &SchemeConstants) -> FrontierLine {
    let first = if c.variant.is_full() {
        c.overshoot * c.decay
    } else {
        c.decay
    };
    line_from_rates(c.growth_attack, first, c.decay, !c.variant.is_full())
}

/// θ·(θ₀/θ)^{ν_f}·(θ_a/θ)^{ν_d}; simple variants take ν_f = 0.
pub fn product_form(c: &SchemeConstants, nu_d: f64, nu_f: f64) -> f64 {
    let nu_f = if c.variant.is_full() { nu_f } else { 0.0 };
    let t = c.contraction;
    t * (c.growth_first / t).powf(nu_f) * (c.growth_attack / t).powf(nu_d)
}

fn feasible(c: &SchemeConstants, nu_d: f64, nu_f: f64) -> bool {
    c.floor_ok() && product_form(c, nu_d, nu_f) < 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub constants: SchemeConstants,
    pub budget: DoSBudget,
    pub n_floor: f64,
    pub floor_ok: bool,
    pub line: FrontierLine,
    pub asymptote: FrontierLine,
    pub product: f64,
    pub feasible: bool,
}

impl StabilityVerdict {
    pub fn to_kv(&self) -> String {
        let c = &self.constants;
        let mut s = String::new();
        let _ = writeln!(s, "scheme={}", c.variant);
        let _ = writeln!(s, "N={}", c.levels);
        let _ = writeln!(s, "growth_attack={}", c.growth_attack);
        let _ = writeln!(s, "growth_first={}", c.growth_first);
        let _ = writeln!(s, "contraction={}", c.contraction);
        let _ = writeln!(s, "decay={}", c.decay);
        let _ = writeln!(s, "overshoot={}", c.overshoot);
        let _ = writeln!(s, "injection_gain={}", c.injection_gain);
        let _ = writeln!(s, "output_gain={}", c.output_gain);
        let _ = writeln!(s, "N_floor={}", self.n_floor);
        let _ = writeln!(s, "floor_ok={}", self.floor_ok);
        let _ = writeln!(s, "nu_d_max_intercept={}", self.line.intercept);
        let _ = writeln!(s, "nu_d_max_slope={}", self.line.slope);
        let _ = writeln!(s, "asymptote_intercept={}", self.asymptote.intercept);
        let _ = writeln!(s, "asymptote_slope={}", self.asymptote.slope);
        let _ = writeln!(s, "nu_d={}", self.budget.nu_d);
        let _ = writeln!(s, "nu_f={}", self.budget.nu_f);
        let _ = writeln!(s, "product={}", self.product);
        let _ = writeln!(s, "feasible={}", self.feasible);
        s
    }
}

pub fn verdict(c: &SchemeConstants, budget: &DoSBudget) -> StabilityVerdict {
    StabilityVerdict {
        constants: *c,
        budget: *budget,
        n_floor: c.n_floor(),
        floor_ok: c.floor_ok(),
        line: frontier_line(c),
        asymptote: asymptote(c),
        product: product_form(c, budget.nu_d, budget.nu_f),
        feasible: feasible(c, budget.nu_d, budget.nu_f),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    Any,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "n")]
pub enum MinN {
    Found(u64),
    /// The budget lies on or beyond the N → ∞ asymptote.
    Infeasible,
    /// Feasible in the limit but above the search cap.
    AboveCap,
}

/// Least N meeting the variant's conditions; feasibility is monotone in N.
pub fn min_n(c: &SchemeConstants, nu_d: f64, nu_f: f64, parity: Parity) -> MinN {
    if c.decay >= 1.0 {
        return MinN::Infeasible;
    }
    let limit = asymptote(c);
    let nu_f_eff = if c.variant.is_full() { nu_f } else { 0.0 };
    let limit_ok = if c.growth_attack > c.decay {
        nu_d < limit.nu_d_max(nu_f_eff)
    } else {
        // attacks never grow the bound faster than ρ; only the θ₀ term can bind
        let t = c.decay;
        let first = if c.variant.is_full() {
            c.overshoot * t
        } else {
            t
        };
        t * (first / t).powf(nu_f_eff) * (c.growth_attack / t).powf(nu_d) < 1.0
    };
    if !limit_ok {
        return MinN::Infeasible;
    }
    let ok = |n: u64| feasible(&c.with_levels(n), nu_d, nu_f);
    let mut hi = 1u64;
    while !ok(hi) {
        if hi >= N_CAP {
            return MinN::AboveCap;
        }
        hi = (hi * 2).min(N_CAP);
    }
    let mut lo = hi / 2;
    // invariant: ok(hi), and lo == 0 or !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let n = match parity {
        Parity::Any => hi,
        Parity::Odd => hi | 1,
    };
    if n > N_CAP {
        MinN::AboveCap
    } else {
        MinN::Found(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub nu_d: f64,
    pub nu_f: f64,
    pub min_n: MinN,
}

impl FrontierRow {
    pub fn feasible(&self) -> bool {
        matches!(self.min_n, MinN::Found(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub constants: SchemeConstants,
    pub rows: Vec<FrontierRow>,
    pub asymptote: FrontierLine,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    scheme: &'a str,
    asymptote: FrontierLine,
    n_cap: u64,
    rows: usize,
}

impl Frontier {
    /// Columns `nu_d,nu_f,min_N,feasible`; min_N is empty when no N works.
    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = config_hash {
            let _ = writeln!(s, "# config_sha256={h}");
        }
        s.push_str("nu_d,nu_f,min_N,feasible\n");
        for r in &self.rows {
            let n = match r.min_n {
                MinN::Found(n) => n.to_string(),
                _ => String::new(),
            };
            let _ = writeln!(s, "{},{},{},{}", r.nu_d, r.nu_f, n, r.feasible());
        }
        s
    }

    pub fn sidecar_json(&self) -> String {
        let side = Sidecar {
            scheme: self.constants.variant.as_str(),
            asymptote: self.asymptote,
            n_cap: N_CAP,
            rows: self.rows.len(),
        };
        serde_json::to_string_pretty(&side).expect("sidecar serializes")
    }
}

/// Evenly spaced values `start, start+step, …` not exceeding `stop`.
pub fn grid_axis(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 || !(start.is_finite() && stop.is_finite()) {
        return Err(Error::InvalidParameter(
            "grid needs finite bounds and a positive step".into(),
        ));
    }
    let count = ((stop - start) / step + 1e-9).floor();
    if count < 0.0 {
        return Ok(Vec::new());
    }
    Ok((0..=count as usize)
        .map(|i| start + i as f64 * step)
        .collect())
}

/// min_N for every (ν_d, ν_f) pair, row-major in ν_d.
pub fn sweep_frontier(c: &SchemeConstants, nu_d: &[f64], nu_f: &[f64], parity: Parity) -> Frontier {
    let points: Vec<(f64, f64)> = nu_d
        .iter()
        .flat_map(|&d| nu_f.iter().map(move |&f| (d, f)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(d, f)| FrontierRow {
            nu_d: d,
            nu_f: f,
            min_n: min_n(c, d, f, parity),
        })
        .collect();
    Frontier {
        constants: *c,
        rows,
        asymptote: asymptote(c),
    }
}

/// θ₀^{Π_f+1}·θ_a^{Π_d}/θ^{Π_f+Π_d+1}·γ^k with γ the product form: dominates E_k/E_0 on
/// every trace respecting the budget.
pub fn trace_growth_bound(c: &SchemeConstants, budget: &DoSBudget, k: u64) -> f64 {
    let (t, t0, ta) = (c.contraction, c.growth_first, c.growth_attack);
    let (pi_f, nu_f) = if c.variant.is_full() {
        (budget.pi_f, budget.nu_f)
    } else {
        (0.0, 0.0)
    };
    let gamma = product_form(c, budget.nu_d, nu_f);
    t0.powf(pi_f + 1.0) * ta.powf(budget.pi_d) / t.powf(pi_f + budget.pi_d + 1.0)
        * gamma.powf(k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunClass {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunClassification {
    pub class: RunClass,
    pub post_acquisition: f64,
    pub final_bound: f64,
    pub tail_max: f64,
    pub tail_slope: f64,
    pub terminal_state: f64,
    /// Informational: E_R at the horizon against its post-acquisition value.
    pub endpoint_decreased: bool,
}

/// Stable: the last `tail` bounds stay below the post-acquisition bound, their log-slope is
/// negative and |x_H|∞ < 1e-2. Unstable: E_R at the horizon exceeds 10³× the
/// post-acquisition bound.
pub fn classify_run(trace: &SimTrace, tail: usize) -> RunClassification {
    let s = &trace.summary;
    let mut bounds = trace.zoom_in_bounds();
    let post = s.zoom_in_initial_bound.unwrap_or(f64::NAN);
    if s.acquisition_time.is_some() {
        bounds.push(s.final_bound);
    }
    let last = &bounds[bounds.len().saturating_sub(tail)..];
    let tail_max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail_slope = log_slope(last).unwrap_or(f64::NAN);
    let class = if s.acquisition_time.is_none() || last.len() < tail {
        RunClass::Inconclusive
    } else if tail_max < post && tail_slope < 0.0 && s.terminal_state < 1e-2 {
        RunClass::Stable
    } else if s.final_bound > 1e3 * post {
        RunClass::Unstable
    } else {
        RunClass::Inconclusive
    };
    RunClassification {
        class,
        post_acquisition: post,
        final_bound: s.final_bound,
        tail_max,
        tail_slope,
        terminal_state: s.terminal_state,
        endpoint_decreased: s.final_bound < post,
    }
}
