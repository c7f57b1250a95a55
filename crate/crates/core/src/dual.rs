//! Dual-Q and dual-V objectives for f-regularized policy optimization, their
//! solvers, a primal oracle, and policy recovery from density ratios.
//!
//! Regularized problem: max_d E_d[r] − α·D_f(d‖d^O) over visitations d.
//!
//! ```text
//! dual-Q:  (1−γ)E_{d0,π}[Q] + α·E_{d^O}[g((T^π_r Q − Q)/α)]
//! dual-V:  (1−γ)E_{d0}[V]   + α·E_{d^O}[g((T_r V − V)/α)]
//! ```
//!
//! With α kept outside the conjugate these values equal the primal value at
//! the optimum, with no rescaling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::divergences::{ConjugateMode, DivergenceKind, FDivergence};
use crate::error::{Error, Result};
use crate::mdp::{
    evaluate_q, flow_residual, state_flow_residual, visitation, Policy, QTable, SaTable, TabularMdp, VTable, Visitation,
};
use crate::optim::{lbfgs, OptimOptions};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    #[default]
    Env,
    Zero,
    Custom(SaTable),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Full,
    /// Bootstrapped targets inside the operator are treated as constants.
    Semi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizedProblem {
    pub mdp: TabularMdp,
    pub reward_mode: RewardMode,
    pub d_ref: Visitation,
    pub alpha: f64,
    pub divergence: FDivergence,
    pub conjugate_mode: ConjugateMode,
    pub gradient_mode: GradientMode,
}

impl RegularizedProblem {
    pub fn new(mdp: TabularMdp, d_ref: Visitation, alpha: f64, divergence: FDivergence) -> Result<Self> {
        let p = RegularizedProblem {
            mdp,
            reward_mode: RewardMode::Env,
            d_ref,
            alpha,
            divergence,
            conjugate_mode: ConjugateMode::Auto,
            gradient_mode: GradientMode::Full,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_reward_mode(mut self, m: RewardMode) -> Result<Self> {
        self.reward_mode = m;
        self.validate()?;
        Ok(self)
    }

    pub fn with_conjugate_mode(mut self, m: ConjugateMode) -> Self {
        self.conjugate_mode = m;
        self
    }

    pub fn with_gradient_mode(mut self, m: GradientMode) -> Self {
        self.gradient_mode = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.divergence.kind == DivergenceKind::JensenShannon {
            return Err(Error::Config(
                "jensen_shannon is available for divergence evaluation only".into(),
            ));
        }
        if self.d_ref.n_states() != self.mdp.n_states() || self.d_ref.n_actions() != self.mdp.n_actions() {
            return Err(Error::Invalid("d_ref shape does not match MDP".into()));
        }
        if let RewardMode::Custom(t) = &self.reward_mode {
            self.mdp.check_table(t)?;
        }
        Ok(())
    }

    pub fn reward(&self) -> SaTable {
        match &self.reward_mode {
            RewardMode::Env => self.mdp.reward(),
            RewardMode::Zero => SaTable::zeros(self.mdp.n_states(), self.mdp.n_actions()),
            RewardMode::Custom(t) => t.clone(),
        }
    }

    fn mode_for(&self, auto: ConjugateMode) -> Result<ConjugateMode> {
        let mode = self.conjugate_mode.resolve(auto);
        if mode == ConjugateMode::Fstar {
            if let Some(i) = self.d_ref.values().iter().position(|x| *x <= 0.0) {
                let na = self.mdp.n_actions();
                return Err(Error::Config(format!(
                    "f* mode needs full-support d_ref; zero mass at (s={}, a={})",
                    i / na,
                    i % na
                )));
            }
        }
        Ok(mode)
    }
}

/// Objective value with gradients in Q (or V) and in π.
struct Eval {
    value: f64,
    grad: Vec<f64>,
    grad_pi: Vec<f64>,
    /// d_ref · g'(y/α): the induced (unnormalized) visitation.
    weights: Vec<f64>,
}

fn eval_dual_q(prob: &RegularizedProblem, pi: &Policy, q: &[f64]) -> Result<Eval> {
    let mode = prob.mode_for(ConjugateMode::Fstar)?;
    let mdp = &prob.mdp;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let r = prob.reward();
    let alpha = prob.alpha;
    let v = pi.state_values(q);
    let next = mdp.expect_next(&v);
    let d0 = mdp.d0();
    let dref = prob.d_ref.values();
    let mut value = 0.0;
    let mut u = vec![0.0; ns * na];
    for z in 0..ns * na {
        let s = z / na;
        value += (1.0 - g) * d0[s] * pi.probs()[z] * q[z];
        if dref[z] == 0.0 {
            continue;
        }
        let y = (r.values[z] + g * next[z] - q[z]) / alpha;
        value += alpha * dref[z] * prob.divergence.conj(mode, y)?;
        u[z] = dref[z] * prob.divergence.conj_derivative(mode, y)?;
    }
    let inflow = mdp.inflow(&u);
    let mut grad = vec![0.0; ns * na];
    let mut grad_pi = vec![0.0; ns * na];
    for z in 0..ns * na {
        let s = z / na;
        let p = pi.probs()[z];
        match prob.gradient_mode {
            GradientMode::Full => {
                grad[z] = (1.0 - g) * d0[s] * p + g * p * inflow[s] - u[z];
                grad_pi[z] = q[z] * ((1.0 - g) * d0[s] + g * inflow[s]);
            }
            GradientMode::Semi => {
                grad[z] = (1.0 - g) * d0[s] * p - u[z];
                grad_pi[z] = q[z] * (1.0 - g) * d0[s];
            }
        }
    }
    Ok(Eval {
        value,
        grad,
        grad_pi,
        weights: u,
    })
}

fn eval_dual_v(prob: &RegularizedProblem, v: &[f64]) -> Result<Eval> {
    let mode = prob.mode_for(ConjugateMode::FstarP)?;
    let mdp = &prob.mdp;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let r = prob.reward();
    let next = mdp.expect_next(v);
    let dref = prob.d_ref.values();
    let alpha = prob.alpha;
    let mut value: f64 = mdp.d0().iter().zip(v).map(|(a, b)| (1.0 - g) * a * b).sum();
    let mut u = vec![0.0; ns * na];
    for z in 0..ns * na {
        if dref[z] == 0.0 {
            continue;
        }
        let y = (r.values[z] + g * next[z] - v[z / na]) / alpha;
        value += alpha * dref[z] * prob.divergence.conj(mode, y)?;
        u[z] = dref[z] * prob.divergence.conj_derivative(mode, y)?;
    }
    let inflow = mdp.inflow(&u);
    let grad = (0..ns)
        .map(|s| {
            let out: f64 = u[s * na..(s + 1) * na].iter().sum();
            let base = (1.0 - g) * mdp.d0()[s] - out;
            match prob.gradient_mode {
                GradientMode::Full => base + g * inflow[s],
                GradientMode::Semi => base,
            }
        })
        .collect();
    Ok(Eval {
        value,
        grad,
        grad_pi: Vec::new(),
        weights: u,
    })
}

/// Chain ∂F/∂π through the per-state softmax.
pub(crate) fn logit_gradient(pi: &Policy, grad_pi: &[f64]) -> Vec<f64> {
    let na = pi.n_actions();
    let mut out = vec![0.0; grad_pi.len()];
    for s in 0..pi.n_states() {
        let p = pi.row(s);
        let gs = &grad_pi[s * na..(s + 1) * na];
        let mean: f64 = p.iter().zip(gs).map(|(a, b)| a * b).sum();
        for a in 0..na {
            out[s * na + a] = p[a] * (gs[a] - mean);
        }
    }
    out
}

pub fn dual_q_objective(prob: &RegularizedProblem, pi: &Policy, q: &QTable) -> Result<f64> {
    prob.mdp.check_table(q)?;
    prob.mdp.check_policy(pi)?;
    Ok(eval_dual_q(prob, pi, &q.values)?.value)
}

/// Gradients of the dual-Q objective: (∂/∂Q, ∂/∂π) under the problem's gradient mode.
pub fn dual_q_gradients(prob: &RegularizedProblem, pi: &Policy, q: &QTable) -> Result<(SaTable, SaTable)> {
    prob.mdp.check_table(q)?;
    let e = eval_dual_q(prob, pi, &q.values)?;
    let (ns, na) = (q.n_states, q.n_actions);
    Ok((
        SaTable::from_vec(ns, na, e.grad)?,
        SaTable::from_vec(ns, na, e.grad_pi)?,
    ))
}

pub fn dual_v_objective(prob: &RegularizedProblem, v: &VTable) -> Result<f64> {
    check_v(prob, v)?;
    Ok(eval_dual_v(prob, &v.values)?.value)
}

pub fn dual_v_gradient(prob: &RegularizedProblem, v: &VTable) -> Result<Vec<f64>> {
    check_v(prob, v)?;
    Ok(eval_dual_v(prob, &v.values)?.grad)
}

fn check_v(prob: &RegularizedProblem, v: &VTable) -> Result<()> {
    if v.values.len() != prob.mdp.n_states() {
        return Err(Error::Invalid("V table has wrong length".into()));
    }
    Ok(())
}

/// δ_V(s,a) = (T_r V)(s,a) − V(s).
pub fn advantage_v(prob: &RegularizedProblem, v: &VTable) -> Result<SaTable> {
    let mut t = crate::mdp::bellman_v(&prob.mdp, Some(&prob.reward()), v)?;
    let na = t.n_actions;
    for (z, x) in t.values.iter_mut().enumerate() {
        *x -= v.values[z / na];
    }
    Ok(t)
}

/// w*(s,a) = max(0, (f')⁻¹(δ_V(s,a)/α)).
pub fn optimal_ratio(prob: &RegularizedProblem, v: &VTable) -> Result<SaTable> {
    if !prob.divergence.has_f_prime_inv() {
        return Err(Error::Unsupported(format!(
            "optimal ratio needs (f')^-1, which {} lacks",
            prob.divergence.kind
        )));
    }
    let mut delta = advantage_v(prob, v)?;
    for x in delta.values.iter_mut() {
        *x = prob.divergence.f_prime_inv(*x / prob.alpha)?.max(0.0);
    }
    Ok(delta)
}

/// Raw product w*·d^O and its normalized version.
pub fn induced_visitation(prob: &RegularizedProblem, w: &SaTable) -> Result<(Vec<f64>, Visitation)> {
    let raw: Vec<f64> = w.values.iter().zip(prob.d_ref.values()).map(|(a, b)| a * b).collect();
    let d = Visitation::from_weights(w.n_states, w.n_actions, raw.clone())?;
    Ok((raw, d))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DualQSchedule {
    /// Exact inner minimization over Q before each policy step.
    #[default]
    BestResponse,
    /// Fixed-step descent on Q and ascent on the logits.
    DescentAscent { q_steps: usize, q_step: f64, pi_step: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub optim: OptimOptions,
    /// Inner Q minimization in the best-response schedule.
    pub inner: OptimOptions,
    pub schedule: DualQSchedule,
    /// Step budget for fixed-step loops (descent-ascent, semi-gradient).
    pub outer_iters: usize,
    /// Step size for semi-gradient dual-V iteration, in units of α.
    pub semi_step: f64,
    pub primal_value: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            optim: OptimOptions::default(),
            inner: OptimOptions {
                grad_tol: 1e-10,
                ..OptimOptions::default()
            },
            schedule: DualQSchedule::BestResponse,
            outer_iters: 20_000,
            semi_step: 0.5,
            primal_value: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualSolution {
    pub q: Option<QTable>,
    pub v: Option<VTable>,
    /// Policy recovered by weighted behavior cloning on the induced ratio.
    pub policy: Policy,
    /// Softmax policy carried by the dual-Q iteration.
    pub actor: Option<Policy>,
    pub ratio: SaTable,
    pub value: f64,
    pub objective_trace: Vec<f64>,
    pub flow_residual: f64,
    pub duality_gap: Option<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gap(primal: Option<f64>, dual: f64) -> Option<f64> {
    primal.map(|p| (p - dual).abs() / (1.0 + p.abs()))
}

fn ratio_from_weights(prob: &RegularizedProblem, u: &[f64]) -> SaTable {
    let vals = u
        .iter()
        .zip(prob.d_ref.values())
        .map(|(w, d)| if *d > 0.0 { w / d } else { 0.0 })
        .collect();
    SaTable::from_vec(prob.mdp.n_states(), prob.mdp.n_actions(), vals).expect("shape")
}

pub fn solve_dual_v(prob: &RegularizedProblem, opts: &SolveOptions) -> Result<DualSolution> {
    prob.validate()?;
    let ns = prob.mdp.n_states();
    let (v, trace, grad_norm, iterations, converged) = match prob.gradient_mode {
        GradientMode::Full => {
            let m = lbfgs(
                |v, g| {
                    let e = eval_dual_v(prob, v)?;
                    g.copy_from_slice(&e.grad);
                    Ok(e.value)
                },
                vec![0.0; ns],
                &opts.optim,
            )?;
            (m.x, m.trace, m.grad_norm, m.iterations, m.converged)
        }
        GradientMode::Semi => {
            let mut v = vec![0.0; ns];
            let mut trace = Vec::new();
            let mut norm = f64::INFINITY;
            let mut it = 0;
            while it < opts.outer_iters {
                let e = eval_dual_v(prob, &v).map_err(|e| e.at_iteration(it))?;
                trace.push(e.value);
                norm = e.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if norm <= opts.optim.grad_tol {
                    break;
                }
                for (vs, gs) in v.iter_mut().zip(&e.grad) {
                    *vs -= opts.semi_step * prob.alpha * gs;
                }
                it += 1;
            }
            (v, trace, norm, it, norm <= opts.optim.grad_tol)
        }
    };
    let e = eval_dual_v(prob, &v)?;
    let ratio = ratio_from_weights(prob, &e.weights);
    let policy = recover_policy_wbc(&ratio, &prob.d_ref)?;
    Ok(DualSolution {
        q: None,
        v: Some(VTable { values: v }),
        policy,
        actor: None,
        flow_residual: state_flow_residual(&prob.mdp, &e.weights),
        ratio,
        value: e.value,
        duality_gap: gap(opts.primal_value, e.value),
        objective_trace: trace,
        grad_norm,
        iterations,
        converged,
    })
}

fn inner_q(prob: &RegularizedProblem, pi: &Policy, q0: &[f64], opts: &OptimOptions) -> Result<crate::optim::Minimum> {
    lbfgs(
        |q, g| {
            let e = eval_dual_q(prob, pi, q)?;
            g.copy_from_slice(&e.grad);
            Ok(e.value)
        },
        q0.to_vec(),
        opts,
    )
}

pub fn solve_dual_q(prob: &RegularizedProblem, opts: &SolveOptions) -> Result<DualSolution> {
    prob.validate()?;
    let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
    let mut theta = vec![0.0; ns * na];
    let mut q = vec![0.0; ns * na];
    let mut trace = Vec::new();
    let (grad_norm, iterations, converged);

    let full_best_response = opts.schedule == DualQSchedule::BestResponse && prob.gradient_mode == GradientMode::Full;
    if full_best_response {
        // maximize φ(θ) = min_Q F(π_θ, Q), using the envelope gradient
        let mut q_warm = q.clone();
        let m = lbfgs(
            |th, g| {
                let pi = Policy::softmax(ns, na, th.to_vec())?;
                let inner = inner_q(prob, &pi, &q_warm, &opts.inner)?;
                q_warm.clone_from(&inner.x);
                let e = eval_dual_q(prob, &pi, &inner.x)?;
                let lg = logit_gradient(&pi, &e.grad_pi);
                for (gi, li) in g.iter_mut().zip(lg) {
                    *gi = -li;
                }
                Ok(-e.value)
            },
            theta,
            &opts.optim,
        )?;
        theta = m.x;
        trace = m.trace.iter().map(|v| -v).collect();
        let pi = Policy::softmax(ns, na, theta.clone())?;
        q = inner_q(prob, &pi, &q_warm, &opts.inner)?.x;
        grad_norm = m.grad_norm;
        iterations = m.iterations;
        converged = m.converged;
    } else {
        let (q_steps, q_step, pi_step) = match opts.schedule {
            DualQSchedule::DescentAscent {
                q_steps,
                q_step,
                pi_step,
            } => (q_steps.max(1), q_step, pi_step),
            DualQSchedule::BestResponse => (0, 0.0, 1.0),
        };
        let mut it = 0;
        let mut norm = f64::INFINITY;
        while it < opts.outer_iters {
            let pi = Policy::softmax(ns, na, theta.clone())?;
            if q_steps == 0 {
                q = inner_q(prob, &pi, &q, &opts.inner).map_err(|e| e.at_iteration(it))?.x;
            } else {
                for _ in 0..q_steps {
                    let e = eval_dual_q(prob, &pi, &q).map_err(|e| e.at_iteration(it))?;
                    for (qi, gi) in q.iter_mut().zip(&e.grad) {
                        *qi -= q_step * gi;
                    }
                }
            }
            let e = eval_dual_q(prob, &pi, &q).map_err(|e| e.at_iteration(it))?;
            if !e.value.is_finite() {
                return Err(Error::Numeric(format!("dual-Q objective diverged at iteration {it}")));
            }
            trace.push(e.value);
            let lg = logit_gradient(&pi, &e.grad_pi);
            let gq = e.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            norm = lg.iter().fold(gq, |m, x| m.max(x.abs()));
            if norm <= opts.optim.grad_tol {
                break;
            }
            for (t, gi) in theta.iter_mut().zip(lg) {
                *t += pi_step * gi;
            }
            it += 1;
        }
        grad_norm = norm;
        iterations = it;
        converged = norm <= opts.optim.grad_tol;
    }

    let actor = Policy::softmax(ns, na, theta)?;
    let e = eval_dual_q(prob, &actor, &q)?;
    let ratio = ratio_from_weights(prob, &e.weights);
    let policy = recover_policy_wbc(&ratio, &prob.d_ref)?;
    Ok(DualSolution {
        q: Some(SaTable::from_vec(ns, na, q)?),
        v: None,
        flow_residual: flow_residual(&prob.mdp, &actor, &e.weights),
        policy,
        actor: Some(actor),
        ratio,
        value: e.value,
        duality_gap: gap(opts.primal_value, e.value),
        objective_trace: trace,
        grad_norm,
        iterations,
        converged,
    })
}

/// Best Q and value of the inner minimization at a fixed policy.
pub fn dual_q_inner(prob: &RegularizedProblem, pi: &Policy, opts: &OptimOptions) -> Result<(QTable, f64)> {
    let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
    let m = inner_q(prob, pi, &vec![0.0; ns * na], opts)?;
    Ok((SaTable::from_vec(ns, na, m.x)?, m.value))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimalOracleOptions {
    pub restarts: usize,
    pub seed: u64,
    pub optim: OptimOptions,
}

impl Default for PrimalOracleOptions {
    fn default() -> Self {
        PrimalOracleOptions {
            restarts: 16,
            seed: 0,
            optim: OptimOptions {
                grad_tol: 1e-10,
                max_iters: 20_000,
                history: 10,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrimalOracle {
    pub value: f64,
    pub d_star: Visitation,
    pub policy: Policy,
    pub restart_values: Vec<f64>,
    /// max − min over restarts.
    pub spread: f64,
}

/// E_{d^π}[r] − α·D_f(d^π‖d^O).
pub fn primal_objective(prob: &RegularizedProblem, pi: &Policy) -> Result<f64> {
    let d = visitation(&prob.mdp, pi)?;
    let r = prob.reward();
    Ok(d.dot(&r.values) - prob.alpha * crate::divergences::divergence(&prob.divergence, &d, &prob.d_ref)?)
}

fn primal_eval(prob: &RegularizedProblem, logits: &[f64], grad: &mut [f64]) -> Result<f64> {
    let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
    let pi = Policy::softmax(ns, na, logits.to_vec())?;
    let d = visitation(&prob.mdp, &pi)?;
    let r = prob.reward();
    let dref = prob.d_ref.values();
    let div = crate::divergences::divergence(&prob.divergence, &d, &prob.d_ref)?;
    let value = d.dot(&r.values) - prob.alpha * div;
    let mut shaped = r.clone();
    for (z, x) in shaped.values.iter_mut().enumerate() {
        if dref[z] > 0.0 {
            let ratio = (d.values()[z] / dref[z]).max(1e-300);
            *x -= prob.alpha * prob.divergence.f_prime(ratio);
        }
    }
    let qt = evaluate_q(&prob.mdp, &shaped, &pi)?;
    let vt = pi.state_values(&qt.values);
    let marg = d.state_marginal();
    for z in 0..ns * na {
        let s = z / na;
        // ascent direction of J, negated for minimization
        grad[z] = -marg[s] * pi.probs()[z] * (qt.values[z] - vt[s]);
    }
    Ok(-value)
}

/// Multi-restart softmax-policy ascent on the exact primal objective.
pub fn primal_oracle(prob: &RegularizedProblem, opts: &PrimalOracleOptions) -> Result<PrimalOracle> {
    prob.validate()?;
    let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut values = Vec::with_capacity(opts.restarts.max(1));
    for k in 0..opts.restarts.max(1) {
        let init: Vec<f64> = if k == 0 {
            vec![0.0; ns * na]
        } else {
            (0..ns * na).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let m = lbfgs(|x, g| primal_eval(prob, x, g), init, &opts.optim)?;
        let v = -m.value;
        values.push(v);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, m.x));
        }
    }
    let (value, logits) = best.expect("at least one restart");
    let policy = Policy::softmax(ns, na, logits)?;
    let d_star = visitation(&prob.mdp, &policy)?;
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PrimalOracle {
        value,
        d_star,
        policy,
        restart_values: values,
        spread: hi - lo,
    })
}

/// π(a|s) ∝ w(s,a)·d_ref(s,a); uniform where the product has no mass.
pub fn recover_policy_wbc(w_star: &SaTable, d_ref: &Visitation) -> Result<Policy> {
    if w_star.values.len() != d_ref.values().len() {
        return Err(Error::Invalid("ratio and d_ref shapes differ".into()));
    }
    let w = w_star
        .values
        .iter()
        .zip(d_ref.values())
        .map(|(a, b)| a.max(0.0) * b)
        .collect();
    Policy::from_weights(d_ref.n_states(), d_ref.n_actions(), w)
}

const LOG_EPS: f64 = 1e-12;

/// Per-state information projection of π^o·w* onto softmax policies.
pub fn recover_policy_infoproj(
    w_star: &SaTable,
    d_ref: &Visitation,
    behavior_pi: &Policy,
    opts: &OptimOptions,
) -> Result<Policy> {
    let (ns, na) = (d_ref.n_states(), d_ref.n_actions());
    if w_star.values.len() != ns * na || behavior_pi.n_states() != ns || behavior_pi.n_actions() != na {
        return Err(Error::Invalid("shapes differ in information projection".into()));
    }
    let marg = d_ref.state_marginal();
    let mut probs = vec![1.0 / na as f64; ns * na];
    for s in 0..ns {
        if marg[s] <= 0.0 {
            continue;
        }
        let target: Vec<f64> = (0..na)
            .map(|a| behavior_pi.prob(s, a).max(LOG_EPS).ln() + w_star.get(s, a).max(LOG_EPS).ln())
            .collect();
        let m = lbfgs(
            |th, g| {
                let mut p = th.to_vec();
                crate::mdp::softmax_in_place(&mut p);
                let c: Vec<f64> = p.iter().zip(&target).map(|(pi, t)| pi.max(1e-300).ln() - t).collect();
                let val: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
                for a in 0..na {
                    g[a] = p[a] * (c[a] - val);
                }
                Ok(val)
            },
            vec![0.0; na],
            opts,
        )?;
        let mut p = m.x;
        crate::mdp::softmax_in_place(&mut p);
        probs[s * na..(s + 1) * na].copy_from_slice(&p);
    }
    Policy::from_probs(ns, na, probs)
}
