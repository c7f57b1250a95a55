//! Finite MDPs, exact visitations, Bellman operators and test environments.
//!
//! All (s,a) tables are flat and row-major: index `s * n_actions + a`.
//! The transition tensor is indexed `(s * n_actions + a) * n_states + s'`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpRepr", into = "MdpRepr")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    d0: Vec<f64>,
}

/// JSON layout of an MDP file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpRepr {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// p(s'|s,a), length S·A·S
    pub transition: Vec<f64>,
    /// r(s,a), length S·A
    pub reward: Vec<f64>,
    /// length S
    pub d0: Vec<f64>,
}

impl TryFrom<MdpRepr> for TabularMdp {
    type Error = Error;
    fn try_from(r: MdpRepr) -> Result<Self> {
        TabularMdp::new(r.n_states, r.n_actions, r.gamma, r.transition, r.reward, r.d0)
    }
}

impl From<TabularMdp> for MdpRepr {
    fn from(m: TabularMdp) -> Self {
        MdpRepr {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transition: m.transition,
            reward: m.reward,
            d0: m.d0,
        }
    }
}

fn check_distribution(xs: &[f64], tol: f64, what: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = xs.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::Invalid(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        d0: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Invalid("MDP needs at least one state and action".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid(format!("gamma must lie in (0,1), got {gamma}")));
        }
        let sa = n_states * n_actions;
        if transition.len() != sa * n_states || reward.len() != sa || d0.len() != n_states {
            return Err(Error::Invalid("MDP table sizes do not match dimensions".into()));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, ROW_TOL, &format!("p(.|s={}, a={})", i / n_actions, i % n_actions))?;
        }
        check_distribution(&d0, ROW_TOL, "d0")?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Invalid("reward has non-finite entries".into()));
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            gamma,
            transition,
            reward,
            d0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn d0(&self) -> &[f64] {
        &self.d0
    }
    pub fn reward(&self) -> SaTable {
        SaTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.reward.clone(),
        }
    }

    /// Row p(·|s,a).
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn with_reward(&self, reward: &SaTable) -> Result<Self> {
        self.check_table(reward)?;
        let mut m = self.clone();
        m.reward = reward.values.clone();
        Ok(m)
    }

    pub fn with_d0(&self, d0: Vec<f64>) -> Result<Self> {
        let m = self.clone();
        TabularMdp::new(m.n_states, m.n_actions, m.gamma, m.transition, m.reward, d0)
    }

    pub fn check_table(&self, t: &SaTable) -> Result<()> {
        if t.n_states != self.n_states || t.n_actions != self.n_actions {
            return Err(Error::Invalid(format!(
                "table is {}x{}, MDP is {}x{}",
                t.n_states, t.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    pub fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(Error::Invalid("policy shape does not match MDP".into()));
        }
        Ok(())
    }

    /// Σ_z d(z) p(s|z) for every s.
    pub fn inflow(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (z, &dz) in d.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let row = &self.transition[z * self.n_states..(z + 1) * self.n_states];
            for (o, p) in out.iter_mut().zip(row) {
                *o += dz * p;
            }
        }
        out
    }

    /// Σ_s' p(s'|s,a) v(s') for every (s,a).
    pub fn expect_next(&self, v: &[f64]) -> Vec<f64> {
        self.transition
            .chunks(self.n_states)
            .map(|row| row.iter().zip(v).map(|(p, x)| p * x).sum())
            .collect()
    }

    /// Samples s' ~ p(·|s,a).
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.next_dist(s, a), rng)
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Real table over state-action pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

pub type QTable = SaTable;

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, 0.0)
    }

    pub fn constant(n_states: usize, n_actions: usize, c: f64) -> Self {
        SaTable {
            n_states,
            n_actions,
            values: vec![c; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Invalid(format!(
                "table of length {} for {}x{}",
                values.len(),
                n_states,
                n_actions
            )));
        }
        Ok(SaTable {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, x: f64) {
        self.values[s * self.n_actions + a] = x;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Lowest-index argmax per state, treating values within 1e-9 of the max as ties.
    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax_tie_low(self.row(s))).collect()
    }
}

pub fn argmax_tie_low(row: &[f64]) -> usize {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (1.0 + m.abs());
    row.iter().position(|x| *x >= m - tol).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VTable {
    pub values: Vec<f64>,
}

impl VTable {
    pub fn zeros(n: usize) -> Self {
        VTable { values: vec![0.0; n] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
            logits: None,
        }
    }

    /// Rows are validated to 1e-12 and then renormalized exactly.
    pub fn from_probs(n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Invalid("policy table has wrong length".into()));
        }
        for (s, row) in probs.chunks_mut(n_actions).enumerate() {
            check_distribution(row, ROW_TOL, &format!("pi(.|s={s})"))?;
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
            logits: None,
        })
    }

    pub fn softmax(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::Invalid("logit table has wrong length".into()));
        }
        let mut probs = logits.clone();
        for row in probs.chunks_mut(n_actions) {
            softmax_in_place(row);
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
            logits: Some(logits),
        })
    }

    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.len() != n_states || actions.iter().any(|a| *a >= n_actions) {
            return Err(Error::Invalid("bad deterministic action list".into()));
        }
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
            logits: None,
        })
    }

    /// Normalizes nonnegative per-state weights; rows with zero mass become uniform.
    pub fn from_weights(n_states: usize, n_actions: usize, mut w: Vec<f64>) -> Result<Self> {
        if w.len() != n_states * n_actions || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Invalid("policy weights must be finite and nonnegative".into()));
        }
        for row in w.chunks_mut(n_actions) {
            let z: f64 = row.iter().sum();
            if z > 0.0 {
                row.iter_mut().for_each(|x| *x /= z);
            } else {
                row.iter_mut().for_each(|x| *x = 1.0 / n_actions as f64);
            }
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs: w,
            logits: None,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax_tie_low(self.row(s))).collect()
    }

    pub fn greedy(&self) -> Policy {
        Policy::deterministic(self.n_states, self.n_actions, &self.greedy_actions())
            .expect("greedy actions are in range")
    }

    /// Σ_a π(a|s) q(s,a) per state.
    pub fn state_values(&self, q: &[f64]) -> Vec<f64> {
        self.probs
            .chunks(self.n_actions)
            .zip(q.chunks(self.n_actions))
            .map(|(p, q)| p.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visitation {
    n_states: usize,
    n_actions: usize,
    d: Vec<f64>,
}

impl Visitation {
    pub fn new(n_states: usize, n_actions: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n_states * n_actions {
            return Err(Error::Invalid("visitation table has wrong length".into()));
        }
        check_distribution(&d, MASS_TOL, "visitation")?;
        Ok(Visitation { n_states, n_actions, d })
    }

    /// Normalizes a nonnegative table with positive mass.
    pub fn from_weights(n_states: usize, n_actions: usize, mut w: Vec<f64>) -> Result<Self> {
        let z: f64 = w.iter().sum();
        if !(z > 0.0) || w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::Invalid("visitation weights need positive finite mass".into()));
        }
        w.iter_mut().for_each(|x| *x /= z);
        Visitation::new(n_states, n_actions, w)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Visitation {
            n_states,
            n_actions,
            d: vec![1.0 / n as f64; n],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn values(&self) -> &[f64] {
        &self.d
    }
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.n_actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks(self.n_actions).map(|r| r.iter().sum()).collect()
    }

    pub fn dot(&self, t: &[f64]) -> f64 {
        self.d.iter().zip(t).map(|(a, b)| a * b).sum()
    }

    pub fn as_table(&self) -> SaTable {
        SaTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.d.clone(),
        }
    }
}

fn solve_dense(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<Vec<f64>> {
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numeric(format!("singular system in {what}")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite solution in {what}")));
    }
    Ok(x.iter().cloned().collect())
}

/// Discounted state-action visitation of `pi`, from a dense solve of the flow equations.
pub fn visitation(mdp: &TabularMdp, pi: &Policy) -> Result<Visitation> {
    mdp.check_policy(pi)?;
    let (ns, na, g) = (mdp.n_states, mdp.n_actions, mdp.gamma);
    let n = ns * na;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..ns {
        for act in 0..na {
            let i = s * na + act;
            let pa = pi.prob(s, act);
            b[i] = (1.0 - g) * mdp.d0[s] * pa;
            if pa == 0.0 {
                continue;
            }
            for z in 0..n {
                let p = mdp.transition[z * ns + s];
                if p != 0.0 {
                    a[(i, z)] -= g * pa * p;
                }
            }
        }
    }
    let mut d = solve_dense(a, b, "visitation")?;
    for x in d.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-12 {
                return Err(Error::Numeric(format!("negative visitation mass {x}")));
            }
            *x = 0.0;
        }
    }
    let z: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= z);
    Visitation::new(ns, na, d)
}

/// ‖d − (1−γ)d0π − γπ·inflow(d)‖_∞ for a state-action table `d`.
pub fn flow_residual(mdp: &TabularMdp, pi: &Policy, d: &[f64]) -> f64 {
    let inflow = mdp.inflow(d);
    let na = mdp.n_actions;
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..na {
            let rhs = pi.prob(s, a) * ((1.0 - mdp.gamma) * mdp.d0[s] + mdp.gamma * inflow[s]);
            worst = worst.max((d[s * na + a] - rhs).abs());
        }
    }
    worst
}

/// Policy-free flow residual: ‖Σ_a d(s,a) − (1−γ)d0(s) − γ·inflow(d)(s)‖_∞.
pub fn state_flow_residual(mdp: &TabularMdp, d: &[f64]) -> f64 {
    let inflow = mdp.inflow(d);
    (0..mdp.n_states)
        .map(|s| {
            let out: f64 = d[s * mdp.n_actions..(s + 1) * mdp.n_actions].iter().sum();
            (out - (1.0 - mdp.gamma) * mdp.d0[s] - mdp.gamma * inflow[s]).abs()
        })
        .fold(0.0, f64::max)
}

pub fn policy_from_visitation(d: &Visitation) -> Policy {
    Policy::from_weights(d.n_states, d.n_actions, d.d.clone()).expect("visitation entries are nonnegative")
}

/// (T^π_r Q)(s,a) = r(s,a) + γ Σ_s' p(s'|s,a) Σ_a' π(a'|s') Q(s',a').
pub fn bellman_q(mdp: &TabularMdp, r_override: Option<&SaTable>, pi: &Policy, q: &QTable) -> Result<QTable> {
    mdp.check_table(q)?;
    mdp.check_policy(pi)?;
    let v = pi.state_values(&q.values);
    bellman_v(mdp, r_override, &VTable { values: v })
}

/// (T_r V)(s,a) = r(s,a) + γ Σ_s' p(s'|s,a) V(s').
pub fn bellman_v(mdp: &TabularMdp, r_override: Option<&SaTable>, v: &VTable) -> Result<QTable> {
    if v.values.len() != mdp.n_states {
        return Err(Error::Invalid("V table has wrong length".into()));
    }
    let r = match r_override {
        Some(r) => {
            mdp.check_table(r)?;
            &r.values
        }
        None => &mdp.reward,
    };
    let next = mdp.expect_next(&v.values);
    let values = r.iter().zip(next).map(|(r, n)| r + mdp.gamma * n).collect();
    Ok(SaTable {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        values,
    })
}

/// Q^π for a reward table, by solving (I − γP^π)Q = r.
pub fn evaluate_q(mdp: &TabularMdp, reward: &SaTable, pi: &Policy) -> Result<QTable> {
    mdp.check_table(reward)?;
    mdp.check_policy(pi)?;
    let (ns, na, g) = (mdp.n_states, mdp.n_actions, mdp.gamma);
    let n = ns * na;
    let mut a = DMatrix::<f64>::identity(n, n);
    for z in 0..n {
        for s2 in 0..ns {
            let p = mdp.transition[z * ns + s2];
            if p == 0.0 {
                continue;
            }
            for a2 in 0..na {
                a[(z, s2 * na + a2)] -= g * p * pi.prob(s2, a2);
            }
        }
    }
    let b = DVector::from_column_slice(&reward.values);
    let values = solve_dense(a, b, "policy evaluation")?;
    Ok(SaTable {
        n_states: ns,
        n_actions: na,
        values,
    })
}

pub fn evaluate_v(mdp: &TabularMdp, reward: &SaTable, pi: &Policy) -> Result<VTable> {
    let q = evaluate_q(mdp, reward, pi)?;
    Ok(VTable {
        values: pi.state_values(&q.values),
    })
}

/// E_{d^π}[r], cross-checked against (1−γ)E_{d0}[V^π].
pub fn expected_return(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let d = visitation(mdp, pi)?;
    let via_d = d.dot(&mdp.reward);
    let v = evaluate_v(mdp, &mdp.reward(), pi)?;
    let via_v = (1.0 - mdp.gamma) * mdp.d0.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>();
    if (via_d - via_v).abs() > 1e-9 * (1.0 + via_d.abs()) {
        return Err(Error::Numeric(format!(
            "return mismatch: visitation {via_d} vs evaluation {via_v}"
        )));
    }
    Ok(via_d)
}

#[derive(Clone, Debug)]
pub struct ValueIteration {
    pub v: VTable,
    pub q: QTable,
    pub policy: Policy,
    pub iterations: usize,
}

/// Optimal values by value iteration; greedy ties go to the lowest action index.
pub fn value_iteration(mdp: &TabularMdp, reward: &SaTable, tol: f64) -> Result<ValueIteration> {
    mdp.check_table(reward)?;
    let mut v = vec![0.0; mdp.n_states];
    let mut q = reward.values.clone();
    for it in 1..=1_000_000 {
        let next = mdp.expect_next(&v);
        for (i, qi) in q.iter_mut().enumerate() {
            *qi = reward.values[i] + mdp.gamma * next[i];
        }
        let mut delta: f64 = 0.0;
        for (s, vs) in v.iter_mut().enumerate() {
            let m = q[s * mdp.n_actions..(s + 1) * mdp.n_actions]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((m - *vs).abs());
            *vs = m;
        }
        if delta < tol {
            let q = SaTable {
                n_states: mdp.n_states,
                n_actions: mdp.n_actions,
                values: q,
            };
            let policy = Policy::deterministic(mdp.n_states, mdp.n_actions, &q.argmax_actions())?;
            return Ok(ValueIteration {
                v: VTable { values: v },
                q,
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::Numeric("value iteration did not converge".into()))
}

/// Frequencies of (s,a) at a geometric stopping time, an unbiased estimate of d^π.
pub fn rollout_occupancy<R: Rng + ?Sized>(mdp: &TabularMdp, pi: &Policy, n_samples: usize, rng: &mut R) -> SaTable {
    let mut counts = SaTable::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..n_samples {
        let mut s = sample_categorical(&mdp.d0, rng);
        loop {
            let a = sample_categorical(pi.row(s), rng);
            if rng.random::<f64>() >= mdp.gamma {
                counts.values[s * mdp.n_actions + a] += 1.0;
                break;
            }
            s = mdp.sample_next(s, a, rng);
        }
    }
    counts.values.iter_mut().for_each(|c| *c /= n_samples as f64);
    counts
}

/// Root state 0 with action i leading to absorbing state i+1; reward zero.
pub fn star_mdp() -> TabularMdp {
    star_mdp_with_gamma(0.9).expect("valid discount")
}

pub fn star_mdp_with_gamma(gamma: f64) -> Result<TabularMdp> {
    let (ns, na) = (6, 5);
    let mut t = vec![0.0; ns * na * ns];
    for a in 0..na {
        t[a * ns + a + 1] = 1.0;
    }
    for s in 1..ns {
        for a in 0..na {
            t[(s * na + a) * ns + s] = 1.0;
        }
    }
    let mut d0 = vec![0.0; ns];
    d0[0] = 1.0;
    TabularMdp::new(ns, na, gamma, t, vec![0.0; ns * na], d0)
}

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridReward {
    /// −1 per step off the goal, 0 at the goal.
    ShortestPath,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub n: usize,
    /// (row, col)
    pub start: (usize, usize),
    pub goal: Option<(usize, usize)>,
    pub gamma: f64,
    pub reward: GridReward,
}

impl GridworldSpec {
    pub fn new(n: usize) -> Self {
        GridworldSpec {
            n,
            start: (0, 0),
            goal: None,
            gamma: 0.9,
            reward: GridReward::ShortestPath,
        }
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal.unwrap_or((self.n - 1, self.n - 1))
    }
}

/// n×n grid, actions up/right/down/left, off-grid moves stay put, absorbing goal.
pub fn gridworld(spec: &GridworldSpec) -> Result<TabularMdp> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::Config(format!("gridworld side must be at least 2, got {n}")));
    }
    let (goal, start) = (spec.goal_cell(), spec.start);
    if goal.0 >= n || goal.1 >= n || start.0 >= n || start.1 >= n {
        return Err(Error::Config("gridworld start/goal outside the grid".into()));
    }
    let ns = n * n;
    let na = 4;
    let cell = |r: usize, c: usize| r * n + c;
    let goal_s = cell(goal.0, goal.1);
    let mut t = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for r in 0..n {
        for c in 0..n {
            let s = cell(r, c);
            for a in 0..na {
                let next = if s == goal_s {
                    s
                } else {
                    match a {
                        UP if r > 0 => cell(r - 1, c),
                        RIGHT if c + 1 < n => cell(r, c + 1),
                        DOWN if r + 1 < n => cell(r + 1, c),
                        LEFT if c > 0 => cell(r, c - 1),
                        _ => s,
                    }
                };
                t[(s * na + a) * ns + next] = 1.0;
                if spec.reward == GridReward::ShortestPath && s != goal_s {
                    reward[s * na + a] = -1.0;
                }
            }
        }
    }
    let mut d0 = vec![0.0; ns];
    d0[cell(start.0, start.1)] = 1.0;
    TabularMdp::new(ns, na, spec.gamma, t, reward, d0)
}

fn dirichlet<R: Rng + ?Sized>(k: usize, conc: f64, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(conc, 1.0).expect("positive concentration");
    loop {
        let mut x: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let z: f64 = x.iter().sum();
        if z > 0.0 {
            x.iter_mut().for_each(|v| *v /= z);
            return x;
        }
    }
}

/// Random MDP: symmetric-Dirichlet transition rows, U[0,1] rewards, uniform d0.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64, concentration: f64) -> Result<TabularMdp> {
    if !(concentration > 0.0) {
        return Err(Error::Config("Dirichlet concentration must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let mut row = dirichlet(n_states, concentration, &mut rng);
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
        t.extend(row);
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let d0 = vec![1.0 / n_states as f64; n_states];
    TabularMdp::new(n_states, n_actions, gamma, t, reward, d0)
}

/// Random full-support policy with Dirichlet rows.
pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, concentration: f64, rng: &mut R) -> Policy {
    let mut p = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        p.extend(dirichlet(n_actions, concentration, rng));
    }
    Policy::from_weights(n_states, n_actions, p).expect("dirichlet rows are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_loop_visitation_is_one() {
        for g in [0.1, 0.5, 0.99] {
            let m = TabularMdp::new(1, 1, g, vec![1.0], vec![0.0], vec![1.0]).unwrap();
            let d = visitation(&m, &Policy::uniform(1, 1)).unwrap();
            assert!((d.values()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn star_uniform_visitation() {
        let m = star_mdp();
        let d = visitation(&m, &Policy::uniform(6, 5)).unwrap();
        for a in 0..5 {
            assert!((d.get(0, a) - 0.02).abs() < 1e-12);
        }
        let marg = d.state_marginal();
        for s in 1..6 {
            assert!((marg[s] - 0.18).abs() < 1e-12);
        }
    }

    #[test]
    fn single_state_bellman_fixed_point() {
        let m = TabularMdp::new(1, 1, 0.9, vec![1.0], vec![1.0], vec![1.0]).unwrap();
        let q = SaTable::constant(1, 1, 10.0);
        let tq = bellman_q(&m, None, &Policy::uniform(1, 1), &q).unwrap();
        assert!((tq.values[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn bellman_v_trivial_cases() {
        let m = random_mdp(3, 3, 2, 0.9, 1.0).unwrap();
        let tv = bellman_v(&m, None, &VTable::zeros(3)).unwrap();
        assert_eq!(tv.values, m.reward().values);
        let zero = SaTable::zeros(3, 2);
        let tv = bellman_v(&m, Some(&zero), &VTable { values: vec![2.0; 3] }).unwrap();
        assert!(tv.values.iter().all(|x| (x - 1.8).abs() < 1e-12));
    }

    #[test]
    fn policy_from_visitation_conventions() {
        let d = Visitation::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(policy_from_visitation(&d).probs(), &[0.5, 0.5]);
        let d = Visitation::new(2, 2, vec![0.25, 0.75, 0.0, 0.0]).unwrap();
        let pi = policy_from_visitation(&d);
        assert_eq!(pi.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn gridworld_shapes_and_errors() {
        let m = gridworld(&GridworldSpec::new(4)).unwrap();
        assert_eq!((m.n_states(), m.n_actions()), (16, 4));
        assert!(matches!(gridworld(&GridworldSpec::new(1)), Err(Error::Config(_))));
        // off-grid move from the corner is a no-op
        assert_eq!(m.p(0, UP, 0), 1.0);
        assert_eq!(m.p(0, RIGHT, 1), 1.0);
    }

    #[test]
    fn random_mdp_is_deterministic() {
        let a = random_mdp(7, 4, 3, 0.9, 1.0).unwrap();
        let b = random_mdp(7, 4, 3, 0.9, 1.0).unwrap();
        assert_eq!(a, b);
        let c = random_mdp(8, 4, 3, 0.9, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn json_round_trip_validates() {
        let m = random_mdp(1, 3, 2, 0.8, 0.5).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: TabularMdp = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
        let bad = s.replace("\"gamma\":0.8", "\"gamma\":1.5");
        assert!(serde_json::from_str::<TabularMdp>(&bad).is_err());
    }
}
