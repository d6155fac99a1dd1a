//! DoS models: budgets (duration and frequency), running counters, trace
//! generators, the greedy adversary and the trace file format.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coder::Stage;
use crate::error::{Error, Result};
use crate::numerics::{RMat, RVec};

/// Absorbs round-off in Π + ν·k when comparing against integer counts.
const BUDGET_EPS: f64 = 1e-9;

/// Φ_d(k) ≤ Π_d + ν_d·k and Φ_f(k) ≤ Π_f + ν_f·k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoSBudget {
    pub pi_d: f64,
    pub nu_d: f64,
    pub pi_f: f64,
    pub nu_f: f64,
}

impl DoSBudget {
    pub fn new(pi_d: f64, nu_d: f64, pi_f: f64, nu_f: f64) -> Result<Self> {
        let b = Self {
            pi_d,
            nu_d,
            pi_f,
            nu_f,
        };
        b.check()?;
        Ok(b)
    }

    /// No frequency constraint: at most ⌈k/2⌉ runs can start in [0, k), so (1, 1/2) never binds.
    pub fn duration_only(pi_d: f64, nu_d: f64) -> Result<Self> {
        Self::new(pi_d, nu_d, 1.0, 0.5)
    }

    pub fn none() -> Self {
        Self {
            pi_d: 0.0,
            nu_d: 0.0,
            pi_f: 0.0,
            nu_f: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.pi_d >= 0.0
            && (0.0..=1.0).contains(&self.nu_d)
            && self.pi_f >= 0.0
            && (0.0..=0.5).contains(&self.nu_f);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "budget out of range: Pi_d={} nu_d={} Pi_f={} nu_f={}",
                self.pi_d, self.nu_d, self.pi_f, self.nu_f
            )))
        }
    }

    pub fn duration_allows(&self, phi_d: u64, k: u64) -> bool {
        phi_d as f64 <= self.pi_d + self.nu_d * k as f64 + BUDGET_EPS
    }

    pub fn frequency_allows(&self, phi_f: u64, k: u64) -> bool {
        phi_f as f64 <= self.pi_f + self.nu_f * k as f64 + BUDGET_EPS
    }
}

/// Running Φ_d, Φ_f over [0, k). A run is counted at its first attacked step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DoSCounters {
    pub k: u64,
    pub phi_d: u64,
    pub phi_f: u64,
    pub last_attacked: bool,
}

impl DoSCounters {
    /// Whether attacking at step k keeps both prefix inequalities at k + 1.
    pub fn can_attack(&self, budget: &DoSBudget) -> bool {
        let k1 = self.k + 1;
        budget.duration_allows(self.phi_d + 1, k1)
            && (self.last_attacked || budget.frequency_allows(self.phi_f + 1, k1))
    }

    pub fn record(&mut self, attacked: bool) {
        if attacked {
            self.phi_d += 1;
            if !self.last_attacked {
                self.phi_f += 1;
            }
        }
        self.last_attacked = attacked;
        self.k += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    Duration,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetViolation {
    pub k: u64,
    pub kind: BudgetKind,
}

/// First prefix length k (0..=len) at which Φ_d(k) or Φ_f(k) exceeds the budget.
pub fn validate(attacked: &[bool], budget: &DoSBudget) -> std::result::Result<(), BudgetViolation> {
    let mut c = DoSCounters::default();
    for k in 0..=attacked.len() as u64 {
        if !budget.duration_allows(c.phi_d, k) {
            return Err(BudgetViolation {
                k,
                kind: BudgetKind::Duration,
            });
        }
        if !budget.frequency_allows(c.phi_f, k) {
            return Err(BudgetViolation {
                k,
                kind: BudgetKind::Frequency,
            });
        }
        if let Some(&a) = attacked.get(k as usize) {
            c.record(a);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoSTrace {
    pub attacked: Vec<bool>,
    pub budget: DoSBudget,
}

impl DoSTrace {
    pub fn new(attacked: Vec<bool>, budget: DoSBudget) -> Result<Self> {
        validate(&attacked, &budget).map_err(|v| {
            Error::InvalidParameter(format!(
                "trace violates the {:?} budget at k = {}",
                v.kind, v.k
            ))
        })?;
        Ok(Self { attacked, budget })
    }

    pub fn len(&self) -> usize {
        self.attacked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attacked.is_empty()
    }

    /// Counters Φ_d(k), Φ_f(k) for the prefix [0, k).
    pub fn counters_at(&self, k: usize) -> DoSCounters {
        let mut c = DoSCounters::default();
        for &a in self.attacked.iter().take(k) {
            c.record(a);
        }
        c
    }

    /// `#Pi_d,nu_d,Pi_f,nu_f` header, a `#values` line, then `k,attacked` lines.
    pub fn to_file_string(&self) -> String {
        let b = &self.budget;
        let mut s = format!(
            "#Pi_d,nu_d,Pi_f,nu_f\n#{},{},{},{}\n",
            b.pi_d, b.nu_d, b.pi_f, b.nu_f
        );
        for (k, &a) in self.attacked.iter().enumerate() {
            let _ = writeln!(s, "{k},{}", u8::from(a));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad =
            |line: usize, msg: &str| Error::Config(format!("trace file line {}: {msg}", line + 1));
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim().replace(' ', "") == "#Pi_d,nu_d,Pi_f,nu_f" => {}
            Some((i, _)) => return Err(bad(i, "expected header `#Pi_d,nu_d,Pi_f,nu_f`")),
            None => return Err(Error::Config("empty trace file".into())),
        }
        let (i, values) = lines
            .next()
            .ok_or_else(|| Error::Config("missing budget values".into()))?;
        let nums: Vec<f64> = values
            .trim()
            .trim_start_matches('#')
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(i, "budget values must be four numbers"))?;
        if nums.len() != 4 {
            return Err(bad(i, "budget values must be four numbers"));
        }
        let budget = DoSBudget::new(nums[0], nums[1], nums[2], nums[3])?;
        let mut attacked = Vec::new();
        for (i, line) in lines {
            let (k, a) = line
                .trim()
                .split_once(',')
                .ok_or_else(|| bad(i, "expected `k,attacked`"))?;
            let k: usize = k.trim().parse().map_err(|_| bad(i, "bad step index"))?;
            if k != attacked.len() {
                return Err(bad(i, "step indices must be consecutive from 0"));
            }
            attacked.push(match a.trim() {
                "0" => false,
                "1" => true,
                _ => return Err(bad(i, "attacked flag must be 0 or 1")),
            });
        }
        Self::new(attacked, budget)
    }
}

/// Attacks exactly at offset + m·period.
pub fn periodic_trace(
    period: usize,
    offset: usize,
    len: usize,
    budget: DoSBudget,
) -> Result<DoSTrace> {
    if period == 0 {
        return Err(Error::InvalidParameter("period must be positive".into()));
    }
    let attacked = (0..len)
        .map(|k| k >= offset && (k - offset).is_multiple_of(period))
        .collect();
    DoSTrace::new(attacked, budget)
}

/// Seeded trace that tends to saturate the duration budget: at each step attack with
/// probability (remaining duration slack)/(remaining horizon), whenever the budget allows.
pub fn random_trace(budget: DoSBudget, seed: u64, len: usize) -> Result<DoSTrace> {
    budget.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = budget.pi_d + budget.nu_d * len as f64;
    let mut c = DoSCounters::default();
    let mut attacked = Vec::with_capacity(len);
    for k in 0..len {
        let p = ((total - c.phi_d as f64) / (len - k) as f64).clamp(0.0, 1.0);
        let a = rng.random::<f64>() < p && c.can_attack(&budget);
        c.record(a);
        attacked.push(a);
    }
    DoSTrace::new(attacked, budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyAttackParams {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl GreedyAttackParams {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if alpha1 < 0.0 || !(0.0..1.0).contains(&alpha2) {
            return Err(Error::InvalidParameter(format!(
                "greedy thresholds out of range: {alpha1}, {alpha2}"
            )));
        }
        Ok(Self { alpha1, alpha2 })
    }
}

/// Attack iff |A e|∞ > α₁|e|∞, |y − q|∞ > α₂·(half width)/N, and the budget allows it.
/// `q` is the value the decoder would receive without an attack; `cell_scale` is
/// output_gain·E/N.
#[allow(clippy::too_many_arguments)]
pub fn greedy_attacker_step(
    a: &RMat,
    e: &RVec,
    y: &RVec,
    q: &RVec,
    cell_scale: f64,
    params: &GreedyAttackParams,
    budget: &DoSBudget,
    counters: &DoSCounters,
) -> bool {
    let grows = (a * e).amax() > params.alpha1 * e.amax();
    let coarse = (y - q).amax() > params.alpha2 * cell_scale;
    grows && coarse && counters.can_attack(budget)
}

/// What an attacker may observe at step k (it has oracle access to the loop).
pub struct AttackContext<'a> {
    pub k: u64,
    pub stage: Stage,
    pub a: &'a RMat,
    pub e: &'a RVec,
    pub y: &'a RVec,
    /// Decoder value if this step were clear (zoom-in only).
    pub q_clear: Option<&'a RVec>,
    /// output_gain·E/N (zoom-in only; 0 otherwise).
    pub cell_scale: f64,
}

pub trait Attacker {
    fn decide(&mut self, ctx: &AttackContext<'_>, counters: &DoSCounters) -> bool;
}

pub struct NoAttack;

impl Attacker for NoAttack {
    fn decide(&mut self, _: &AttackContext<'_>, _: &DoSCounters) -> bool {
        false
    }
}

/// Replays a validated trace; steps past its end are clear.
pub struct ScriptedAttacker(pub DoSTrace);

impl Attacker for ScriptedAttacker {
    fn decide(&mut self, ctx: &AttackContext<'_>, _: &DoSCounters) -> bool {
        self.0
            .attacked
            .get(ctx.k as usize)
            .copied()
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZoomOutPolicy {
    /// Attack whenever the budget allows.
    Saturate,
    Idle,
}

pub struct GreedyAttacker {
    pub params: GreedyAttackParams,
    pub budget: DoSBudget,
    pub zoom_out: ZoomOutPolicy,
}

impl Attacker for GreedyAttacker {
    fn decide(&mut self, ctx: &AttackContext<'_>, counters: &DoSCounters) -> bool {
        match (ctx.stage, ctx.q_clear) {
            (Stage::ZoomIn, Some(q)) => greedy_attacker_step(
                ctx.a,
                ctx.e,
                ctx.y,
                q,
                ctx.cell_scale,
                &self.params,
                &self.budget,
                counters,
            ),
            _ => self.zoom_out == ZoomOutPolicy::Saturate && counters.can_attack(&self.budget),
        }
    }
}
