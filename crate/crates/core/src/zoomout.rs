//! Initial-bound acquisition under DoS: a growing state envelope, one-bit
//! capture tests, the generalized observability matrix, and the finite-time
//! feasibility checkers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::DoSBudget;
use crate::error::{Error, Result};
use crate::numerics::{eig, inf_norm, mat_pow, numerical_rank, pinv_left, CMat, RMat, RVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomOutParams {
    /// Initial envelope E₀ˣ > 0.
    pub e0x: f64,
    /// Growth margin κ > 0.
    pub kappa: f64,
}

impl ZoomOutParams {
    pub fn check(&self) -> Result<()> {
        if self.e0x > 0.0 && self.kappa > 0.0 && self.e0x.is_finite() && self.kappa.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "zoom-out needs E0x > 0 and kappa > 0, got {} and {}",
                self.e0x, self.kappa
            )))
        }
    }
}

/// Generalized observability matrix [C A^{s_0−s_0}; C A^{s_1−s_0}; …].
pub fn generalized_observability(a: &RMat, c: &RMat, steps: &[u64]) -> RMat {
    let (ny, n) = (c.nrows(), a.ncols());
    let mut o = RMat::zeros(ny * steps.len(), n);
    if let Some(&s0) = steps.first() {
        for (m, &s) in steps.iter().enumerate() {
            o.view_mut((m * ny, 0), (ny, n))
                .copy_from(&(c * mat_pow(a, (s - s0) as usize)));
        }
    }
    o
}

/// Smallest m with rank [C; CA; …; CA^{m−1}] = n_x.
pub fn observability_index(c: &RMat, a: &RMat) -> Result<usize> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n {
        return Err(Error::Dimension(
            "observability needs square A and C with n_x columns".into(),
        ));
    }
    let steps: Vec<u64> = (0..n as u64).collect();
    (1..=n)
        .find(|&m| numerical_rank(&generalized_observability(a, c, &steps[..m]), None) == n)
        .ok_or(Error::Unobservable)
}

#[derive(Debug, Clone)]
pub struct ZoomOutState {
    a: RMat,
    c: RMat,
    a_norm: f64,
    c_norm: f64,
    pub kappa: f64,
    /// Envelope E^x_k.
    pub e_x: f64,
    /// Clear steps with Q = 0, with the output envelope at that step.
    pub collected: Vec<(u64, f64)>,
    pub rank: usize,
    pub k: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomOutStep {
    /// Q_k crossed the channel (None when the step was attacked).
    pub bit: Option<bool>,
    /// State bound for time k + 1, once the observability matrix has full column rank.
    pub acquired: Option<f64>,
}

impl ZoomOutState {
    pub fn new(a: &RMat, c: &RMat, params: ZoomOutParams, k0: u64) -> Result<Self> {
        params.check()?;
        Ok(Self {
            a: a.clone(),
            c: c.clone(),
            a_norm: inf_norm(a),
            c_norm: inf_norm(c),
            kappa: params.kappa,
            e_x: params.e0x,
            collected: Vec::new(),
            rank: 0,
            k: k0,
        })
    }

    pub fn e_y(&self) -> f64 {
        self.c_norm * self.e_x
    }

    pub fn observability_matrix(&self) -> RMat {
        let steps: Vec<u64> = self.collected.iter().map(|p| p.0).collect();
        generalized_observability(&self.a, &self.c, &steps)
    }
}

/// One zoom-out step (u = 0 throughout). The bit is 0 iff |y|∞ ≤ E^y_k.
pub fn zoomout_step(state: &mut ZoomOutState, y: &RVec, attacked: bool) -> Result<ZoomOutStep> {
    let e_y = state.e_y();
    let captured = y.amax() <= e_y;
    let mut out = ZoomOutStep {
        bit: None,
        acquired: None,
    };
    if !attacked {
        out.bit = Some(!captured);
        if captured {
            state.collected.push((state.k, e_y));
            let o = state.observability_matrix();
            state.rank = numerical_rank(&o, None);
            if state.rank == state.a.nrows() {
                let s0 = state.collected[0].0;
                let lift = mat_pow(&state.a, (state.k - s0 + 1) as usize) * pinv_left(&o)?;
                out.acquired = Some(inf_norm(&lift) * e_y);
            }
        }
    }
    state.e_x *= (1.0 + state.kappa) * state.a_norm;
    state.k += 1;
    Ok(out)
}

/// Key-value report of a finite-time acquisition condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    /// Duration bound: the condition holds iff ν_d < threshold.
    pub threshold: f64,
    pub feasible: bool,
    /// η consecutive clear steps are guaranteed by time k_e + 1.
    pub k_e: Option<u64>,
}

impl ConditionReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "condition={}", self.name);
        let _ = writeln!(s, "threshold_nu_d={}", self.threshold);
        let _ = writeln!(
            s,
            "k_e={}",
            self.k_e
                .map_or_else(|| "none".to_string(), |k| k.to_string())
        );
        let _ = writeln!(s, "feasible={}", self.feasible);
        s
    }
}

fn floor_guarded(x: f64) -> u64 {
    (x + 1e-9).floor().max(0.0) as u64
}

/// Duration and frequency: ν_d < 1 − (η−1)ν_f, with
/// k_e = ⌊(Π_d + (Π_f+1)(η−1)) / (1 − ν_d − (η−1)ν_f)⌋.
pub fn check_thm44(eta: usize, budget: &DoSBudget) -> ConditionReport {
    let e1 = eta.saturating_sub(1) as f64;
    let threshold = 1.0 - e1 * budget.nu_f;
    let feasible = budget.nu_d < threshold;
    let k_e = feasible.then(|| {
        floor_guarded((budget.pi_d + (budget.pi_f + 1.0) * e1) / (threshold - budget.nu_d))
    });
    ConditionReport {
        name: "duration-frequency".into(),
        threshold,
        feasible,
        k_e,
    }
}

/// Duration only: ν_d < 1/η, with k_e = ⌊((Π_d+1)η − 1) / (1 − ην_d)⌋.
pub fn check_prop45(eta: usize, budget: &DoSBudget) -> ConditionReport {
    let eta_f = eta as f64;
    let threshold = 1.0 / eta_f;
    let feasible = budget.nu_d < threshold;
    let k_e = feasible
        .then(|| floor_guarded(((budget.pi_d + 1.0) * eta_f - 1.0) / (1.0 - eta_f * budget.nu_d)));
    ConditionReport {
        name: "duration-only".into(),
        threshold,
        feasible,
        k_e,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicBlock {
    /// (re, im) of the block's base eigenvalue λ_j.
    pub lambda: (f64, f64),
    pub zeta: u64,
    pub residues: Vec<u64>,
}

/// Eigenvalues written as λ_j·e^{i2π a/ζ_j} with ζ_j equal to 1 or a prime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPeriodicStructure {
    pub blocks: Vec<PeriodicBlock>,
    pub zeta: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicReport {
    pub structure: Option<EigenPeriodicStructure>,
    /// Why the eigenstructure assumption fails, when it does.
    pub not_met: Option<String>,
    /// ν_d < 1/ζ
    pub threshold: Option<f64>,
    /// (ζ₁ − n₁ + 1)/ζ₁ for a single block.
    pub sharper_threshold: Option<f64>,
    pub feasible: Option<bool>,
}

impl PeriodicReport {
    fn not_met(reason: impl Into<String>) -> Self {
        Self {
            structure: None,
            not_met: Some(reason.into()),
            threshold: None,
            sharper_threshold: None,
            feasible: None,
        }
    }

    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let mut s = String::from("condition=periodic-eigenstructure\n");
        match &self.not_met {
            Some(r) => {
                let _ = writeln!(s, "status=assumption not met ({r})");
            }
            None => {
                let _ = writeln!(s, "status=ok");
            }
        }
        if let Some(st) = &self.structure {
            let _ = writeln!(s, "zeta={}", st.zeta);
            let _ = writeln!(s, "blocks={}", st.blocks.len());
        }
        let _ = writeln!(s, "threshold_nu_d={}", opt(self.threshold));
        let _ = writeln!(s, "sharper_threshold_nu_d={}", opt(self.sharper_threshold));
        let _ = writeln!(
            s,
            "feasible={}",
            self.feasible
                .map_or_else(|| "none".into(), |f| f.to_string())
        );
        s
    }
}

fn is_prime(n: u64) -> bool {
    n >= 2
        && (2..)
            .take_while(|d| d * d <= n)
            .all(|d| !n.is_multiple_of(d))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest q ≤ q_max with |frac − p/q| ≤ tol; returns (p mod q, q).
fn rational_turn(frac: f64, q_max: u64, tol: f64) -> Option<(u64, u64)> {
    (1..=q_max).find_map(|q| {
        let p = (frac * q as f64).round();
        ((frac - p / q as f64).abs() <= tol).then(|| ((p as i64).rem_euclid(q as i64) as u64, q))
    })
}

/// Extract the periodic eigenstructure of A and the induced duration thresholds.
pub fn periodic_eig_analysis(a: &RMat, c: &RMat, budget: &DoSBudget) -> Result<PeriodicReport> {
    let n = a.nrows();
    if c.nrows() != 1 {
        return Ok(PeriodicReport::not_met("not a single-output system"));
    }
    let d = eig(a)?;
    if d.condition > 1e8 {
        return Ok(PeriodicReport::not_met("A is not diagonalizable"));
    }
    if d.eigenvalues.iter().any(|l| l.norm() == 0.0) {
        return Ok(PeriodicReport::not_met("A has a zero eigenvalue"));
    }
    let q_max = 8 * n as u64;
    let turn = |l: &C64| l.arg() / std::f64::consts::TAU;

    // Classes: equal modulus and rational angle difference.
    let mut classes: Vec<(C64, Vec<(u64, u64)>)> = Vec::new();
    for l in &d.eigenvalues {
        let slot = classes.iter_mut().find_map(|(base, members)| {
            if (l.norm() - base.norm()).abs() > 1e-9 * base.norm() {
                return None;
            }
            let diff = (turn(l) - turn(base)).rem_euclid(1.0);
            rational_turn(diff, q_max, 1e-9).map(|r| members.push(r))
        });
        if slot.is_none() {
            classes.push((*l, vec![(0, 1)]));
        }
    }

    let mut blocks = Vec::new();
    for (base, members) in classes {
        let zeta = members
            .iter()
            .fold(1u64, |acc, &(_, q)| acc / gcd(acc, q) * q);
        if zeta != 1 && !is_prime(zeta) {
            return Ok(PeriodicReport::not_met(format!(
                "block period {zeta} is neither 1 nor prime"
            )));
        }
        let mut residues: Vec<u64> = members
            .iter()
            .map(|&(p, q)| p * (zeta / q) % zeta)
            .collect();
        residues.sort_unstable();
        if residues.windows(2).any(|w| w[0] == w[1]) {
            return Ok(PeriodicReport::not_met("repeated eigenvalue"));
        }
        blocks.push(PeriodicBlock {
            lambda: (base.re, base.im),
            zeta,
            residues,
        });
    }
    let zeta = blocks
        .iter()
        .fold(1u64, |acc, b| acc / gcd(acc, b.zeta) * b.zeta);
    let threshold = 1.0 / zeta as f64;
    let sharper = (blocks.len() == 1).then(|| {
        let b = &blocks[0];
        (b.zeta as f64 - b.residues.len() as f64 + 1.0) / b.zeta as f64
    });
    let effective = sharper.unwrap_or(threshold).max(threshold);
    Ok(PeriodicReport {
        structure: Some(EigenPeriodicStructure { blocks, zeta }),
        not_met: None,
        threshold: Some(threshold),
        sharper_threshold: sharper,
        feasible: Some(budget.nu_d < effective),
    })
}

/// Matrix with entries e^{i2π·a_ℓ·b_m/ζ} (rows indexed by b, columns by a).
pub fn vandermonde_matrix(zeta: u64, a: &[u64], b: &[u64]) -> CMat {
    CMat::from_fn(b.len(), a.len(), |m, l| {
        let phase = std::f64::consts::TAU * ((a[l] * b[m]) % zeta) as f64 / zeta as f64;
        C64::from_polar(1.0, phase)
    })
}

/// Numerical invertibility (|det| > 1e-6) of the generalized Vandermonde matrix.
pub fn vandermonde_invertibility_oracle(zeta: u64, a: &[u64], b: &[u64]) -> Result<bool> {
    if !is_prime(zeta) {
        return Err(Error::InvalidParameter(format!("{zeta} is not prime")));
    }
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidParameter(
            "residue sets must be nonempty and of equal size".into(),
        ));
    }
    for set in [a, b] {
        let mut r: Vec<u64> = set.iter().map(|v| v % zeta).collect();
        r.sort_unstable();
        if r.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(
                "residues must be distinct modulo zeta".into(),
            ));
        }
    }
    Ok(vandermonde_matrix(zeta, a, b).determinant().norm() > 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{periodic_trace, DoSCounters};
    use approx::assert_abs_diff_eq;

    fn shift(n: usize) -> RMat {
        RMat::from_fn(n, n, |i, j| if (j + 1) % n == i { 1.0 } else { 0.0 })
    }

    fn e1(n: usize) -> RMat {
        RMat::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { 0.0 })
    }

    fn companion(coeffs: &[f64]) -> RMat {
        let n = coeffs.len();
        RMat::from_fn(n, n, |i, j| {
            if i + 1 == j {
                1.0
            } else if i == n - 1 {
                -coeffs[j]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn observability_indices() {
        let a = RMat::from_row_slice(3, 3, &[0.5, 1.0, 0.0, 0.0, 0.2, 1.0, 0.3, 0.0, 0.1]);
        assert_eq!(observability_index(&RMat::identity(3, 3), &a).unwrap(), 1);
        let comp = companion(&[0.2, -0.5, 1.1, 0.3]);
        assert_eq!(observability_index(&e1(4), &comp).unwrap(), 4);
        let unobs = RMat::from_diagonal(&RVec::from_vec(vec![1.0, 2.0]));
        assert!(matches!(
            observability_index(&e1(2), &unobs),
            Err(Error::Unobservable)
        ));
    }

    #[test]
    fn consecutive_steps_give_classical_matrix() {
        let a = companion(&[0.2, -0.5, 1.1]);
        let c = e1(3);
        let o = generalized_observability(&a, &c, &[5, 6, 7]);
        let classical = generalized_observability(&a, &c, &[0, 1, 2]);
        assert_eq!(o, classical);
        assert_eq!(o.row(2), (&c * &a * &a).row(0));
    }

    #[test]
    fn thm44_examples() {
        let b = DoSBudget::new(0.0, 0.0, 0.0, 0.3).unwrap();
        assert_abs_diff_eq!(check_thm44(2, &b).threshold, 0.7, epsilon = 1e-15);
        let b = DoSBudget::new(3.0, 0.0, 2.0, 0.0).unwrap();
        assert_eq!(check_thm44(3, &b).k_e, Some(3 + 3 * 2));
        let b = DoSBudget::new(2.0, 0.5, 1.0, 0.2).unwrap();
        let r = check_thm44(2, &b);
        assert!(r.feasible);
        assert_eq!(r.k_e, Some(13));
        let b = DoSBudget::new(2.0, 0.8, 1.0, 0.2).unwrap();
        assert!(!check_thm44(2, &b).feasible);
        assert!(r.to_kv().contains("k_e=13\n"));
    }

    #[test]
    fn prop45_examples() {
        let b = DoSBudget::duration_only(2.0, 0.2).unwrap();
        assert_abs_diff_eq!(check_prop45(4, &b).threshold, 0.25);
        assert_eq!(check_prop45(4, &b).k_e, Some(55));
        let b = DoSBudget::duration_only(2.0, 0.0).unwrap();
        assert_eq!(check_prop45(4, &b).k_e, Some(3 * 4 - 1));
        let b = DoSBudget::duration_only(2.0, 0.25).unwrap();
        assert!(!check_prop45(4, &b).feasible);
    }

    #[test]
    fn periodic_structure_examples() {
        let b = DoSBudget::duration_only(1.0, 0.3).unwrap();
        let r = periodic_eig_analysis(&shift(2), &e1(2), &b).unwrap();
        let st = r.structure.as_ref().unwrap();
        assert_eq!(st.zeta, 2);
        assert_eq!(st.blocks.len(), 1);
        assert_eq!(st.blocks[0].residues, vec![0, 1]);
        assert_abs_diff_eq!(r.threshold.unwrap(), 0.5);
        assert_abs_diff_eq!(r.sharper_threshold.unwrap(), 0.5);
        assert_eq!(r.feasible, Some(true));

        let diag = RMat::from_diagonal(&RVec::from_vec(vec![2.0, 0.5, 1.3]));
        let r = periodic_eig_analysis(&diag, &RMat::from_row_slice(1, 3, &[1.0, 1.0, 1.0]), &b)
            .unwrap();
        assert_eq!(r.structure.unwrap().zeta, 1);
        assert_abs_diff_eq!(r.threshold.unwrap(), 1.0);

        let r = periodic_eig_analysis(&shift(4), &e1(4), &b).unwrap();
        assert!(r.not_met.as_ref().unwrap().contains("neither 1 nor prime"));
        assert!(r.to_kv().contains("assumption not met"));

        let r = periodic_eig_analysis(&shift(3), &e1(3), &b).unwrap();
        assert_eq!(r.structure.unwrap().zeta, 3);
        assert_abs_diff_eq!(r.sharper_threshold.unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn vandermonde_examples() {
        assert!(vandermonde_invertibility_oracle(2, &[0, 1], &[0, 1]).unwrap());
        assert!(vandermonde_invertibility_oracle(5, &[0, 1, 3], &[0, 2, 4]).unwrap());
        assert!(vandermonde_invertibility_oracle(5, &[0, 5], &[0, 1]).is_err());
        assert!(vandermonde_invertibility_oracle(4, &[0, 1], &[0, 1]).is_err());
    }

    #[test]
    fn shifted_cycle_never_acquires() {
        // DoS at every multiple of n: the clear steps skip one residue class forever.
        let n = 4;
        let a = shift(n);
        let c = e1(n);
        let trace = periodic_trace(
            n,
            0,
            1000,
            DoSBudget::duration_only(1.0, 1.0 / n as f64).unwrap(),
        )
        .unwrap();
        let mut st = ZoomOutState::new(
            &a,
            &c,
            ZoomOutParams {
                e0x: 1.0,
                kappa: 0.01,
            },
            0,
        )
        .unwrap();
        let mut x = RVec::from_fn(n, |i, _| i as f64 + 1.0);
        for k in 0..1000 {
            let step = zoomout_step(&mut st, &(&c * &x), trace.attacked[k]).unwrap();
            assert!(step.acquired.is_none());
            x = &a * x;
        }
        assert_eq!(st.rank, n - 1);
    }

    #[test]
    fn exact_outputs_recover_the_state() {
        let a = RMat::from_row_slice(3, 3, &[0.9, 0.4, 0.0, -0.3, 1.1, 0.2, 0.1, 0.0, 0.7]);
        let c = RMat::from_row_slice(1, 3, &[1.0, 0.0, 0.5]);
        let x0 = RVec::from_column_slice(&[0.3, -1.2, 0.8]);
        let attacked = [true, false, true, true, false, false, true, false];
        let mut x = x0.clone();
        let mut steps = Vec::new();
        let mut ys = Vec::new();
        for (k, &att) in attacked.iter().enumerate() {
            if !att {
                steps.push(k as u64);
                ys.push((&c * &x)[0]);
            }
            x = &a * x;
        }
        let o = generalized_observability(&a, &c, &steps);
        let x_s0 = pinv_left(&o).unwrap() * RVec::from_vec(ys);
        assert_abs_diff_eq!(x_s0, mat_pow(&a, 1) * x0, epsilon = 1e-8);
    }

    #[test]
    fn acquisition_without_attacks_is_sound() {
        let a = RMat::from_row_slice(2, 2, &[1.2, 0.5, -0.4, 0.9]);
        let c = RMat::from_row_slice(1, 2, &[1.0, 0.0]);
        let mut st = ZoomOutState::new(
            &a,
            &c,
            ZoomOutParams {
                e0x: 0.01,
                kappa: 0.05,
            },
            0,
        )
        .unwrap();
        let mut x = RVec::from_column_slice(&[3.0, -2.0]);
        let mut counters = DoSCounters::default();
        loop {
            let step = zoomout_step(&mut st, &(&c * &x), false).unwrap();
            counters.record(false);
            x = &a * x;
            if let Some(bound) = step.acquired {
                assert!(x.amax() <= bound);
                // capture then two consecutive collected steps (η = 2)
                assert_eq!(st.collected.len(), 2);
                assert_eq!(st.collected[1].0, st.collected[0].0 + 1);
                break;
            }
            assert!(st.k < 500);
        }
    }
}
