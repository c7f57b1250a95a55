//! Implicit maximizers and tabular f-DVL.
//!
//! For samples x and λ ∈ (0,1), v_λ minimizes
//! `(1−λ)·v + λ·mean f̄(x − v)` where f̄ is a nondecreasing convex surrogate
//! of f*_p. As λ → 1, v_λ rises towards sup x.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::divergences::{DivergenceKind, FDivergence, TvSurrogate};
use crate::error::{Error, Result};
use crate::mdp::{Policy, QTable, SaTable, TabularMdp, VTable};
use crate::optim::bisect_increasing;

const BRACKET_PAD: f64 = 10.0;
/// Width of the mapped sample range for reverse KL.
pub const RKL_SPAN: f64 = 1000.0;
/// Largest exponent argument allowed during mapped reverse-KL bisection.
pub const RKL_MAX_ARG: f64 = 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MaximizerProblem {
    samples: Vec<f64>,
    weights: Option<Vec<f64>>,
    lambda: f64,
    divergence: FDivergence,
    rkl_rescale: bool,
}

impl MaximizerProblem {
    pub fn new(samples: Vec<f64>, lambda: f64, divergence: FDivergence) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("samples must be non-empty and finite".into()));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0,1), got {lambda}")));
        }
        if !divergence.has_surrogate() {
            return Err(Error::Config(format!(
                "{} has no convex nondecreasing surrogate",
                divergence.kind
            )));
        }
        Ok(MaximizerProblem {
            samples,
            weights: None,
            lambda,
            divergence,
            rkl_rescale: true,
        })
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.samples.len() || w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Invalid("weights must be nonnegative with positive mass".into()));
        }
        let z: f64 = w.iter().sum();
        self.weights = Some(w.into_iter().map(|x| x / z).collect());
        Ok(self)
    }

    /// Reverse KL maps samples into a fixed band before solving; disable to
    /// solve on raw values (and hit the overflow guard on wide ranges).
    pub fn with_rkl_rescale(mut self, on: bool) -> Self {
        self.rkl_rescale = on;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.samples.len() as f64,
        }
    }

    fn range(&self) -> (f64, f64) {
        let lo = self.samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// (1−λ)v + λ·mean f̄(x − v) on the raw samples.
    pub fn objective(&self, v: f64) -> Result<f64> {
        let mut m = 0.0;
        for (i, x) in self.samples.iter().enumerate() {
            m += self.weight(i) * self.divergence.surrogate(x - v)?;
        }
        Ok((1.0 - self.lambda) * v + self.lambda * m)
    }

    fn right_slope(&self, xs: &[f64], v: f64) -> Result<f64> {
        let mut m = 0.0;
        for (i, x) in xs.iter().enumerate() {
            m += self.weight(i) * self.divergence.surrogate_derivative(x - v)?;
        }
        Ok((1.0 - self.lambda) - self.lambda * m)
    }
}

/// Minimizer of the implicit-maximizer objective by bisection on its right slope.
///
/// The bracket is [min(x) − 10, max(x) + 10]; for reverse KL with rescaling the
/// solve runs on x' = (x − max)·s with s = 1000/(max − min), bracketed so that
/// exponent arguments stay below 30, and the result is mapped back.
pub fn solve_implicit_max(prob: &MaximizerProblem) -> Result<f64> {
    let (lo, hi) = prob.range();
    if prob.divergence.kind == DivergenceKind::ReverseKl && prob.rkl_rescale {
        let scale = if hi > lo { RKL_SPAN / (hi - lo) } else { 1.0 };
        let mapped: Vec<f64> = prob.samples.iter().map(|x| (x - hi) * scale).collect();
        let v = bisect_increasing(|v| prob.right_slope(&mapped, v), -RKL_MAX_ARG, BRACKET_PAD)?;
        return Ok(hi + v / scale);
    }
    bisect_increasing(
        |v| prob.right_slope(&prob.samples, v),
        lo - BRACKET_PAD,
        hi + BRACKET_PAD,
    )
}

/// (λ, v_λ) pairs sorted by λ.
pub fn maximizer_sweep(samples: &[f64], divergence: FDivergence, lambdas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut grid = lambdas.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.into_iter()
        .map(|l| {
            let p = MaximizerProblem::new(samples.to_vec(), l, divergence)?;
            Ok((l, solve_implicit_max(&p)?))
        })
        .collect()
}

/// Rejection draws from N(mean, sd²) restricted to (lo, hi).
pub fn truncated_normal<R: Rng + ?Sized>(
    n: usize,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sd > 0.0) || !(lo < hi) {
        return Err(Error::Config("truncated normal needs sd > 0 and lo < hi".into()));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = normal.sample(rng);
        if x > lo && x < hi {
            out.push(x);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    #[serde(default)]
    pub done: bool,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Transition {
    pub fn new(s: usize, a: usize, r: f64, s_next: usize) -> Self {
        Transition {
            s,
            a,
            r,
            s_next,
            done: false,
            weight: 1.0,
        }
    }

    pub fn terminal(s: usize, a: usize, r: f64) -> Self {
        Transition {
            done: true,
            ..Transition::new(s, a, r, s)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(n_states: usize, n_actions: usize, transitions: Vec<Transition>) -> Result<Self> {
        for (i, t) in transitions.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions {
                return Err(Error::Invalid(format!("transition {i} indexes outside the tables")));
            }
            if !t.r.is_finite() || !(t.weight > 0.0) {
                return Err(Error::Invalid(format!("transition {i} has a bad reward or weight")));
            }
        }
        Ok(Dataset {
            n_states,
            n_actions,
            transitions,
        })
    }

    /// One-state bandit whose pulls end the episode.
    pub fn bandit(rewards: &[f64]) -> Result<Self> {
        let t = rewards
            .iter()
            .enumerate()
            .map(|(a, r)| Transition::terminal(0, a, *r))
            .collect();
        Dataset::new(1, rewards.len(), t)
    }

    /// Every (s,a,s') with positive probability, weighted by p(s'|s,a).
    pub fn full_coverage(mdp: &TabularMdp) -> Self {
        let r = mdp.reward();
        let mut t = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                for (s2, p) in mdp.next_dist(s, a).iter().enumerate() {
                    if *p > 0.0 {
                        t.push(Transition {
                            weight: *p,
                            ..Transition::new(s, a, r.get(s, a), s2)
                        });
                    }
                }
            }
        }
        Dataset {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            transitions: t,
        }
    }

    /// Total weight per (s,a) cell.
    pub fn counts(&self) -> SaTable {
        let mut c = SaTable::zeros(self.n_states, self.n_actions);
        for t in &self.transitions {
            c.values[t.s * self.n_actions + t.a] += t.weight;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdvlConfig {
    pub divergence: DivergenceKind,
    pub lambda: f64,
    pub awr_temperature: f64,
    pub iterations: usize,
    pub gamma: f64,
    pub tv_surrogate: TvSurrogate,
    /// Stop once max |ΔV| across an iteration falls below this.
    pub tol: f64,
}

impl Default for FdvlConfig {
    fn default() -> Self {
        FdvlConfig {
            divergence: DivergenceKind::PearsonChi2,
            lambda: 0.9,
            awr_temperature: 3.0,
            iterations: 1000,
            gamma: 0.9,
            tv_surrogate: TvSurrogate::PositivePart,
            tol: 1e-12,
        }
    }
}

impl FdvlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0,1), got {}", self.lambda)));
        }
        if !(self.awr_temperature > 0.0) {
            return Err(Error::Config("AWR temperature must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in [0,1)".into()));
        }
        if !self.div().has_surrogate() {
            return Err(Error::Config(format!("{} has no surrogate", self.divergence)));
        }
        Ok(())
    }

    pub fn div(&self) -> FDivergence {
        FDivergence::new(self.divergence).with_tv_surrogate(self.tv_surrogate)
    }
}

/// The reverse-KL instance of f-DVL.
pub fn xql_preset(config: &FdvlConfig) -> FdvlConfig {
    FdvlConfig {
        divergence: DivergenceKind::ReverseKl,
        ..config.clone()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FdvlResult {
    pub q: QTable,
    pub v: VTable,
    pub policy: Policy,
    pub q_loss: Vec<f64>,
    pub v_loss: Vec<f64>,
    /// States without any dataset transition.
    pub uncovered_states: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted least-squares fit of r + γ(1−done)V(s') per cell; empty cells keep `prev`.
pub fn fdvl_q_regression(data: &Dataset, v: &[f64], gamma: f64, prev: &QTable) -> QTable {
    let mut num = SaTable::zeros(data.n_states, data.n_actions);
    let counts = data.counts();
    for t in &data.transitions {
        let boot = if t.done { 0.0 } else { gamma * v[t.s_next] };
        num.values[t.s * data.n_actions + t.a] += t.weight * (t.r + boot);
    }
    let mut q = prev.clone();
    for (i, c) in counts.values.iter().enumerate() {
        if *c > 0.0 {
            q.values[i] = num.values[i] / c;
        }
    }
    q
}

fn q_residual_loss(data: &Dataset, q: &QTable, v: &[f64], gamma: f64) -> f64 {
    let (mut tot, mut w) = (0.0, 0.0);
    for t in &data.transitions {
        let boot = if t.done { 0.0 } else { gamma * v[t.s_next] };
        let e = t.r + boot - q.get(t.s, t.a);
        tot += t.weight * e * e;
        w += t.weight;
    }
    tot / w
}

/// Per-state V-loss (1−λ)v + λ·Σ_a w_a f̄(Q̄_a − v) with normalized weights.
pub fn fdvl_v_loss(div: &FDivergence, lambda: f64, q_bar: &[f64], weights: &[f64], v: f64) -> Result<f64> {
    let z: f64 = weights.iter().sum();
    let mut m = 0.0;
    for (q, w) in q_bar.iter().zip(weights) {
        m += w / z * div.surrogate(q - v)?;
    }
    Ok((1.0 - lambda) * v + lambda * m)
}

fn tag_overflow(e: Error, it: usize, s: usize) -> Error {
    match e {
        Error::Overflow { context, argument, .. } => Error::Overflow {
            context: format!("f-DVL V-step at state {s} ({context})"),
            iteration: it,
            argument,
        },
        other => other,
    }
}

pub fn run_fdvl(data: &Dataset, config: &FdvlConfig) -> Result<FdvlResult> {
    config.validate()?;
    let (ns, na) = (data.n_states, data.n_actions);
    let div = config.div();
    let counts = data.counts();
    let uncovered: Vec<usize> = (0..ns).filter(|s| counts.row(*s).iter().all(|c| *c == 0.0)).collect();
    let mut q = SaTable::zeros(ns, na);
    let mut v = vec![0.0; ns];
    let (mut q_loss, mut v_loss) = (Vec::new(), Vec::new());
    let mut converged = false;
    let mut it = 0;
    while it < config.iterations {
        q = fdvl_q_regression(data, &v, config.gamma, &q);
        q_loss.push(q_residual_loss(data, &q, &v, config.gamma));
        let mut delta: f64 = 0.0;
        let mut loss = 0.0;
        let mut mass = 0.0;
        for s in 0..ns {
            if uncovered.contains(&s) {
                continue;
            }
            let (xs, ws): (Vec<f64>, Vec<f64>) = (0..na)
                .filter(|a| counts.get(s, *a) > 0.0)
                .map(|a| (q.get(s, a), counts.get(s, a)))
                .unzip();
            let p = MaximizerProblem::new(xs.clone(), config.lambda, div)?
                .with_weights(ws.clone())?
                .with_rkl_rescale(false);
            let vs = solve_implicit_max(&p).map_err(|e| tag_overflow(e, it, s))?;
            let w: f64 = ws.iter().sum();
            loss += w * fdvl_v_loss(&div, config.lambda, &xs, &ws, vs).map_err(|e| tag_overflow(e, it, s))?;
            mass += w;
            delta = delta.max((vs - v[s]).abs());
            v[s] = vs;
        }
        v_loss.push(loss / mass);
        it += 1;
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    let policy = awr_policy(&q, &v, &counts, config.awr_temperature)?;
    Ok(FdvlResult {
        q,
        v: VTable { values: v },
        policy,
        q_loss,
        v_loss,
        uncovered_states: uncovered,
        iterations: it,
        converged,
    })
}

/// Largest AWR log-weight; weights are clipped at e^20.
pub const AWR_CLIP: f64 = 20.0;

/// π(a|s) ∝ support(s,a)·exp(min(α(Q − V), 20)); uniform where support is empty.
pub fn awr_policy(q: &QTable, v: &[f64], support: &SaTable, alpha: f64) -> Result<Policy> {
    let na = q.n_actions;
    let mut w = vec![0.0; q.values.len()];
    for s in 0..q.n_states {
        let logw: Vec<Option<f64>> = (0..na)
            .map(|a| (support.get(s, a) > 0.0).then(|| (alpha * (q.get(s, a) - v[s])).min(AWR_CLIP)))
            .collect();
        let top = logw.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, lw) in logw.iter().enumerate() {
            if let Some(lw) = lw {
                w[s * na + a] = support.get(s, a) * (lw - top).exp();
            }
        }
    }
    Policy::from_weights(q.n_states, na, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn div(k: DivergenceKind) -> FDivergence {
        FDivergence::new(k)
    }

    #[test]
    fn constant_samples_tv() {
        let p = MaximizerProblem::new(vec![1.5; 20], 0.8, div(DivergenceKind::TotalVariation)).unwrap();
        assert!((solve_implicit_max(&p).unwrap() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn two_point_chi2() {
        for (l, want) in [(0.6, 1.0 / 3.0), (0.8, 1.0)] {
            let p = MaximizerProblem::new(vec![0.0, 1.0], l, div(DivergenceKind::PearsonChi2)).unwrap();
            assert!((solve_implicit_max(&p).unwrap() - want).abs() < 1e-9, "lambda {l}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let h = div(DivergenceKind::SquaredHellinger);
        assert!(matches!(
            MaximizerProblem::new(vec![0.0], 0.5, h),
            Err(Error::Config(_))
        ));
        let c = div(DivergenceKind::PearsonChi2);
        assert!(MaximizerProblem::new(vec![0.0], 1.0, c).is_err());
        assert!(MaximizerProblem::new(vec![], 0.5, c).is_err());
        assert!(MaximizerProblem::new(vec![f64::NAN], 0.5, c).is_err());
    }

    #[test]
    fn xql_preset_is_reverse_kl() {
        assert_eq!(xql_preset(&FdvlConfig::default()).divergence, DivergenceKind::ReverseKl);
    }

    #[test]
    fn bandit_dataset_is_terminal() {
        let d = Dataset::bandit(&[0.0, 1.0, 2.0]).unwrap();
        assert!(d.transitions.iter().all(|t| t.done));
        assert_eq!(d.counts().values, vec![1.0; 3]);
    }
}
