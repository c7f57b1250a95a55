//! ReCOIL: imitation by matching the mixtures βd + (1−β)d^S and
//! βd^E + (1−β)d^S, with zero-reward Bellman operators throughout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergences::{ConjugateMode, DivergenceKind, FDivergence, EXP_GUARD};
use crate::dual::{logit_gradient, GradientMode};
use crate::error::{Error, Result};
use crate::implicit::awr_policy;
use crate::mdp::{
    policy_from_visitation, sample_categorical, visitation, Policy, QTable, SaTable, TabularMdp, VTable, Visitation,
};
use crate::optim::{bisect_increasing, lbfgs, minimize_box, OptimOptions};

#[derive(Clone, Debug)]
pub struct RecoilProblem {
    pub mdp: TabularMdp,
    pub d_expert: Visitation,
    pub d_subopt: Visitation,
    pub beta: f64,
    pub divergence: FDivergence,
    pub conjugate_mode: ConjugateMode,
    pub gradient_mode: GradientMode,
}

impl RecoilProblem {
    pub fn new(
        mdp: TabularMdp,
        d_expert: Visitation,
        d_subopt: Visitation,
        beta: f64,
        divergence: FDivergence,
    ) -> Result<Self> {
        let p = RecoilProblem {
            mdp,
            d_expert,
            d_subopt,
            beta,
            divergence,
            conjugate_mode: ConjugateMode::Auto,
            gradient_mode: GradientMode::Full,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_conjugate_mode(mut self, m: ConjugateMode) -> Self {
        self.conjugate_mode = m;
        self
    }

    pub fn with_gradient_mode(mut self, m: GradientMode) -> Self {
        self.gradient_mode = m;
        self
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        let mut p = self.clone();
        p.beta = beta;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        for d in [&self.d_expert, &self.d_subopt] {
            if d.n_states() != ns || d.n_actions() != na {
                return Err(Error::Invalid("visitation shape does not match MDP".into()));
            }
        }
        if self.divergence.kind == DivergenceKind::JensenShannon {
            return Err(Error::Unsupported("Jensen-Shannon has no closed-form conjugate".into()));
        }
        Ok(())
    }

    /// βd^E + (1−β)d^S.
    pub fn mix(&self) -> Visitation {
        mixture(&self.d_expert, &self.d_subopt, self.beta).expect("validated shapes")
    }
}

/// β·d_a + (1−β)·d_b.
pub fn mixture(d_a: &Visitation, d_b: &Visitation, beta: f64) -> Result<Visitation> {
    if d_a.n_states() != d_b.n_states() || d_a.n_actions() != d_b.n_actions() {
        return Err(Error::Invalid("mixture of differently shaped visitations".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("mixing weight must lie in [0,1], got {beta}")));
    }
    let v = d_a
        .values()
        .iter()
        .zip(d_b.values())
        .map(|(a, b)| beta * a + (1.0 - beta) * b)
        .collect();
    Visitation::from_weights(d_a.n_states(), d_a.n_actions(), v)
}

fn domain_hint(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("{m}; use the surrogate conjugate mode")),
        other => other,
    }
}

/// Inner objective Σ start(s)π(a|s)·Q + Σ w·g(r + y) − Σ b·y with y = T^π₀Q − Q.
struct Inner<'a> {
    mdp: &'a TabularMdp,
    pi: &'a Policy,
    start: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
    div: FDivergence,
    mode: ConjugateMode,
    gradient_mode: GradientMode,
}

struct InnerEval {
    value: f64,
    grad: Vec<f64>,
    grad_pi: Vec<f64>,
    /// g'(r + y) on cells with w > 0.
    ratio: Vec<f64>,
}

impl Inner<'_> {
    fn eval(&self, q: &[f64]) -> Result<InnerEval> {
        let mdp = self.mdp;
        let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
        let next = mdp.expect_next(&self.pi.state_values(q));
        let mut value = 0.0;
        let mut u = vec![0.0; ns * na];
        let mut ratio = vec![0.0; ns * na];
        let p = self.pi.probs();
        for z in 0..ns * na {
            let y = g * next[z] - q[z];
            value += self.start[z / na] * p[z] * q[z] - self.b[z] * y;
            u[z] = -self.b[z];
            if self.w[z] > 0.0 {
                let arg = self.r[z] + y;
                value += self.w[z] * self.div.conj(self.mode, arg).map_err(domain_hint)?;
                ratio[z] = self.div.conj_derivative(self.mode, arg)?;
                u[z] += self.w[z] * ratio[z];
            }
        }
        let inflow = mdp.inflow(&u);
        let mut grad = vec![0.0; ns * na];
        let mut grad_pi = vec![0.0; ns * na];
        for z in 0..ns * na {
            let s = z / na;
            let start = self.start[s];
            match self.gradient_mode {
                GradientMode::Full => {
                    grad[z] = start * p[z] + g * p[z] * inflow[s] - u[z];
                    grad_pi[z] = q[z] * (start + g * inflow[s]);
                }
                GradientMode::Semi => {
                    grad[z] = start * p[z] - u[z];
                    grad_pi[z] = q[z] * start;
                }
            }
        }
        Ok(InnerEval {
            value,
            grad,
            grad_pi,
            ratio,
        })
    }
}

fn recoil_inner<'a>(prob: &'a RecoilProblem, pi: &'a Policy, mode: ConjugateMode) -> Inner<'a> {
    let mdp = &prob.mdp;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    Inner {
        mdp,
        pi,
        start: mdp.d0().iter().map(|d| prob.beta * (1.0 - g) * d).collect(),
        w: prob.mix().values().to_vec(),
        b: prob.d_subopt.values().iter().map(|x| (1.0 - prob.beta) * x).collect(),
        r: vec![0.0; ns * na],
        div: prob.divergence,
        mode,
        gradient_mode: prob.gradient_mode,
    }
}

fn check_inputs(prob: &RecoilProblem, pi: &Policy, q: &QTable) -> Result<()> {
    prob.mdp.check_table(q)?;
    prob.mdp.check_policy(pi)
}

/// β(1−γ)E_{d0,π}[Q] + E_mix[f*(T^π₀Q − Q)] − (1−β)E_{d^S}[T^π₀Q − Q].
pub fn recoil_q_objective(prob: &RecoilProblem, pi: &Policy, q: &QTable) -> Result<f64> {
    check_inputs(prob, pi, q)?;
    let mode = prob.conjugate_mode.resolve(ConjugateMode::Fstar);
    Ok(recoil_inner(prob, pi, mode).eval(&q.values)?.value)
}

/// Gradients of [`recoil_q_objective`] in Q and in the policy logits.
pub fn recoil_q_gradients(prob: &RecoilProblem, pi: &Policy, q: &QTable) -> Result<(SaTable, SaTable)> {
    check_inputs(prob, pi, q)?;
    let mode = prob.conjugate_mode.resolve(ConjugateMode::Fstar);
    let e = recoil_inner(prob, pi, mode).eval(&q.values)?;
    let (ns, na) = (q.n_states, q.n_actions);
    Ok((
        SaTable::from_vec(ns, na, e.grad)?,
        SaTable::from_vec(ns, na, logit_gradient(pi, &e.grad_pi))?,
    ))
}

/// β(1−γ)E_{d0}[V] + E_mix[f*_p(T₀V − V)] − (1−β)E_{d^S}[T₀V − V].
pub fn recoil_v_objective(prob: &RecoilProblem, v: &VTable) -> Result<f64> {
    let mdp = &prob.mdp;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    if v.values.len() != ns {
        return Err(Error::Invalid("V table length does not match MDP".into()));
    }
    let mode = prob.conjugate_mode.resolve(ConjugateMode::FstarP);
    let next = mdp.expect_next(&v.values);
    let mix = prob.mix();
    let mut value: f64 = (0..ns).map(|s| prob.beta * (1.0 - g) * mdp.d0()[s] * v.values[s]).sum();
    for z in 0..ns * na {
        let y = g * next[z] - v.values[z / na];
        if mix.values()[z] > 0.0 {
            value += mix.values()[z] * prob.divergence.conj(mode, y).map_err(domain_hint)?;
        }
        value -= (1.0 - prob.beta) * prob.d_subopt.values()[z] * y;
    }
    Ok(value)
}

/// χ² ReCOIL objective after rearranging the linear terms:
/// β[(1−γ)E_{d0,π}Q + γE_{d^E}[Q(s′,π)] − E_{d^E}Q] + ¼E_mix[(γQ(s′,π) − Q)²].
///
/// When d^E satisfies Bellman flow the bracket is E_{d^E(s),π}[Q] − E_{d^E}[Q].
pub fn recoil_chi2_objective(prob: &RecoilProblem, pi: &Policy, q: &QTable) -> Result<f64> {
    check_inputs(prob, pi, q)?;
    let mdp = &prob.mdp;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let next = mdp.expect_next(&pi.state_values(&q.values));
    let de = prob.d_expert.values();
    let mix = prob.mix();
    let mut lin = 0.0;
    let mut quad = 0.0;
    for z in 0..ns * na {
        lin += (1.0 - g) * mdp.d0()[z / na] * pi.probs()[z] * q.values[z];
        lin += de[z] * (g * next[z] - q.values[z]);
        let y = g * next[z] - q.values[z];
        quad += mix.values()[z] * y * y;
    }
    Ok(prob.beta * lin + 0.25 * quad)
}

/// r̂(s,a) = Q(s,a) − (T^π₀Q)(s,a).
pub fn recover_reward(prob: &RecoilProblem, pi: &Policy, q_star: &QTable) -> Result<SaTable> {
    check_inputs(prob, pi, q_star)?;
    let g = prob.mdp.gamma();
    let next = prob.mdp.expect_next(&pi.state_values(&q_star.values));
    let values = q_star.values.iter().zip(&next).map(|(q, n)| q - g * n).collect();
    SaTable::from_vec(q_star.n_states, q_star.n_actions, values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VStep {
    /// Gumbel regression: minimize E[exp((Q−V)/τ) − (Q−V)/τ − 1].
    Gumbel,
    /// Asymmetric squared loss |κ − 1(Q−V<0)|·(Q−V)².
    Expectile { kappa: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoilConfig {
    pub tau: f64,
    pub awr_temperature: f64,
    /// Replace the expert term by β·E_{d^E}[(Q − Q_max)²].
    pub q_max: Option<f64>,
    pub iterations: usize,
    pub tol: f64,
    pub v_step: VStep,
    pub seed: u64,
    /// Draw this many samples from each of d^E and d^S instead of using exact weights.
    pub n_samples: Option<usize>,
}

impl Default for RecoilConfig {
    fn default() -> Self {
        RecoilConfig {
            tau: 1.0,
            awr_temperature: 3.0,
            q_max: Some(200.0),
            iterations: 2000,
            tol: 1e-10,
            v_step: VStep::Gumbel,
            seed: 0,
            n_samples: None,
        }
    }
}

impl RecoilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.awr_temperature > 0.0) {
            return Err(Error::Config("tau and the AWR temperature must be positive".into()));
        }
        if let VStep::Expectile { kappa } = self.v_step {
            if !(kappa > 0.0 && kappa < 1.0) {
                return Err(Error::Config(format!("expectile kappa must lie in (0,1), got {kappa}")));
            }
        }
        if self.n_samples == Some(0) {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoilRun {
    pub q: QTable,
    pub v: VTable,
    /// AWR policy.
    pub policy: Policy,
    pub reward: SaTable,
    pub q_loss: Vec<f64>,
    pub v_loss: Vec<f64>,
    pub policy_change: Vec<f64>,
    /// States with no mass under the mixture.
    pub empty_states: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl RecoilRun {
    /// Argmax of Q over dataset-supported actions, ties to the lowest index.
    pub fn greedy_policy(&self) -> Policy {
        self.policy.greedy()
    }
}

/// Empirical frequencies of `n` draws from `d`.
pub fn sample_visitation(d: &Visitation, n: usize, rng: &mut ChaCha8Rng) -> Result<Visitation> {
    let mut counts = vec![0.0; d.values().len()];
    for _ in 0..n {
        counts[sample_categorical(d.values(), rng)] += 1.0;
    }
    Visitation::from_weights(d.n_states(), d.n_actions(), counts)
}

/// Root of mean_w exp((x − v)/τ) = 1 over actions with w > 0, bracketed by
/// max(x + τ ln w) ≤ v ≤ max(x).
fn gumbel_v(xs: &[f64], ws: &[f64], tau: f64, it: usize) -> Result<f64> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, w) in xs.iter().zip(ws) {
        if *w > 0.0 {
            lo = lo.max(x + tau * w.ln());
            hi = hi.max(*x);
        }
    }
    bisect_increasing(
        |v| {
            let mut m = 0.0;
            for (x, w) in xs.iter().zip(ws) {
                if *w == 0.0 {
                    continue;
                }
                let a = (x - v) / tau;
                if a > EXP_GUARD {
                    return Err(Error::Overflow {
                        context: "Gumbel V-loss; raise tau".into(),
                        iteration: it,
                        argument: a,
                    });
                }
                m += w * a.exp();
            }
            Ok(1.0 - m)
        },
        lo,
        hi,
    )
}

fn expectile_v(xs: &[f64], ws: &[f64], kappa: f64) -> Result<f64> {
    let support = || xs.iter().zip(ws).filter(|(_, w)| **w > 0.0).map(|(x, _)| *x);
    let lo = support().fold(f64::INFINITY, f64::min);
    let hi = support().fold(f64::NEG_INFINITY, f64::max);
    bisect_increasing(
        |v| {
            Ok(xs
                .iter()
                .zip(ws)
                .map(|(x, w)| {
                    let u = x - v;
                    let k = if u < 0.0 { 1.0 - kappa } else { kappa };
                    -w * k * u
                })
                .sum())
        },
        lo,
        hi,
    )
}

fn gumbel_loss(u: f64, tau: f64) -> f64 {
    let a = u / tau;
    a.exp() - a - 1.0
}

/// Alternating Q-, V- and π-steps of the practical χ² ReCOIL losses.
pub fn run_recoil(prob: &RecoilProblem, config: &RecoilConfig) -> Result<RecoilRun> {
    config.validate()?;
    let (d_e, d_s) = match config.n_samples {
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let e = sample_visitation(&prob.d_expert, n, &mut rng)?;
            let s = sample_visitation(&prob.d_subopt, n, &mut rng)?;
            (e, s)
        }
        None => (prob.d_expert.clone(), prob.d_subopt.clone()),
    };
    let mdp = &prob.mdp;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let beta = prob.beta;
    let mix = mixture(&d_e, &d_s, beta)?;
    let mix_t = mix.as_table();
    let m = mix.values();
    let ds_marg = d_s.state_marginal();
    let empty_states: Vec<usize> = (0..ns)
        .filter(|s| m[s * na..(s + 1) * na].iter().all(|x| *x == 0.0))
        .collect();

    let mut pi = policy_from_visitation(&mix);
    let mut q = SaTable::zeros(ns, na);
    let mut v = vec![0.0; ns];
    let (mut q_loss, mut v_loss, mut policy_change) = (Vec::new(), Vec::new(), Vec::new());
    let mut converged = false;
    let mut it = 0;
    while it < config.iterations {
        // Q-step: per-cell stationary point of L(φ) with V(s′) held fixed.
        let t = mdp.expect_next(&v).into_iter().map(|x| g * x).collect::<Vec<_>>();
        let mut new_q = vec![0.0; ns * na];
        let mut lq = 0.0;
        for z in 0..ns * na {
            let c_s = ds_marg[z / na] * pi.probs()[z];
            let de = d_e.values()[z];
            new_q[z] = match config.q_max {
                None if m[z] > 0.0 => t[z] - 2.0 * beta * (c_s - de) / m[z],
                Some(qm) if m[z] > 0.0 => {
                    (0.5 * m[z] * t[z] + 2.0 * beta * de * qm - beta * c_s) / (2.0 * beta * de + 0.5 * m[z])
                }
                _ => t[z],
            };
            let expert = match config.q_max {
                None => -beta * de * new_q[z],
                Some(qm) => beta * de * (new_q[z] - qm).powi(2),
            };
            lq += beta * c_s * new_q[z] + expert + 0.25 * m[z] * (t[z] - new_q[z]).powi(2);
        }
        q_loss.push(lq);
        let dq = q
            .values
            .iter()
            .zip(&new_q)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        q.values = new_q;

        // V-step: per-state 1-D convex minimization under mix(a|s).
        let mut dv: f64 = 0.0;
        let mut lv = 0.0;
        for s in 0..ns {
            let row = &m[s * na..(s + 1) * na];
            let z: f64 = row.iter().sum();
            let ws: Vec<f64> = if z > 0.0 {
                row.iter().map(|x| x / z).collect()
            } else {
                vec![1.0 / na as f64; na]
            };
            let xs = q.row(s);
            let vs = match config.v_step {
                VStep::Gumbel => gumbel_v(xs, &ws, config.tau, it)?,
                VStep::Expectile { kappa } => expectile_v(xs, &ws, kappa)?,
            };
            for a in 0..na {
                if row[a] > 0.0 {
                    lv += row[a] * gumbel_loss(xs[a] - vs, config.tau);
                }
            }
            dv = dv.max((vs - v[s]).abs());
            v[s] = vs;
        }
        v_loss.push(lv);

        // π-step: advantage-weighted regression on the mixture support.
        let new_pi = awr_policy(&q, &v, &mix_t, config.awr_temperature)?;
        let dp = new_pi.max_abs_diff(&pi);
        policy_change.push(dp);
        pi = new_pi;
        it += 1;
        if dq.max(dv).max(dp) < config.tol {
            converged = true;
            break;
        }
    }
    let reward = recover_reward(prob, &pi, &q)?;
    Ok(RecoilRun {
        q,
        v: VTable { values: v },
        policy: pi,
        reward,
        q_loss,
        v_loss,
        policy_change,
        empty_states,
        iterations: it,
        converged,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VisitationEstimate {
    pub d_hat: Visitation,
    /// Mean squared error against the exact visitation of the query policy.
    pub mse: f64,
    /// Total mass removed by clipping negative entries.
    pub negative_mass: f64,
    pub q: QTable,
    pub converged: bool,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioOptions {
    pub optim: OptimOptions,
    /// Bound on |Q| for the baselines, whose inner problems need not have a finite minimizer.
    pub q_bound: f64,
}

impl Default for RatioOptions {
    fn default() -> Self {
        RatioOptions {
            optim: OptimOptions {
                grad_tol: 1e-12,
                max_iters: 20_000,
                history: 10,
            },
            q_bound: 200.0,
        }
    }
}

fn finish_estimate(
    mdp: &TabularMdp,
    pi: &Policy,
    raw: Vec<f64>,
    q: Vec<f64>,
    converged: bool,
    warning: Option<String>,
) -> Result<VisitationEstimate> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let negative_mass: f64 = raw.iter().filter(|x| **x < 0.0).map(|x| -x).sum();
    let clipped: Vec<f64> = raw.iter().map(|x| x.max(0.0)).collect();
    let d_hat = if clipped.iter().sum::<f64>() > 0.0 {
        Visitation::from_weights(ns, na, clipped)?
    } else {
        Visitation::uniform(ns, na)
    };
    let truth = visitation(mdp, pi)?;
    let mse = d_hat
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / (ns * na) as f64;
    Ok(VisitationEstimate {
        d_hat,
        mse,
        negative_mass,
        q: SaTable::from_vec(ns, na, q)?,
        converged,
        warning,
    })
}

/// β below this makes the extraction divide a small quantity by β.
pub const SMALL_BETA: f64 = 0.05;

/// d̂^π from the inner ReCOIL minimizer for a fixed query policy:
/// ρ = (f*)′(T^π₀Q − Q) and d̂ = [ρ·mix − (1−β)d^S]/β, clipped and renormalized.
pub fn estimate_agent_visitation(
    prob: &RecoilProblem,
    pi_query: &Policy,
    opts: &RatioOptions,
) -> Result<VisitationEstimate> {
    prob.mdp.check_policy(pi_query)?;
    let mode = prob.conjugate_mode.resolve(ConjugateMode::Fstar);
    let inner = recoil_inner(prob, pi_query, mode);
    let n = prob.mdp.n_pairs();
    let sol = lbfgs(
        |x, g| {
            let e = inner.eval(x)?;
            g.copy_from_slice(&e.grad);
            Ok(e.value)
        },
        vec![0.0; n],
        &opts.optim,
    )?;
    let e = inner.eval(&sol.x)?;
    let mix = prob.mix();
    let beta = prob.beta;
    let raw = (0..n)
        .map(|z| {
            let m = mix.values()[z];
            if m > 0.0 {
                (e.ratio[z] * m - (1.0 - beta) * prob.d_subopt.values()[z]) / beta
            } else {
                0.0
            }
        })
        .collect();
    let warning =
        (beta < SMALL_BETA).then(|| format!("ill-conditioned extraction: condition number {:.1}", 1.0 / beta));
    finish_estimate(&prob.mdp, pi_query, raw, sol.x, sol.converged, warning)
}

fn box_estimate(inner: Inner<'_>, d_ref: &Visitation, opts: &RatioOptions) -> Result<VisitationEstimate> {
    let n = inner.mdp.n_pairs();
    let sol = minimize_box(
        |x, g| {
            let e = inner.eval(x)?;
            g.copy_from_slice(&e.grad);
            Ok(e.value)
        },
        vec![0.0; n],
        -opts.q_bound,
        opts.q_bound,
        &opts.optim,
    )?;
    let e = inner.eval(&sol.x)?;
    let raw = e.ratio.iter().zip(d_ref.values()).map(|(r, d)| r * d).collect();
    finish_estimate(inner.mdp, inner.pi, raw, sol.x, sol.converged, None)
}

/// Expert-only extraction: minimize (1−γ)E_{d0,π}[Q] + E_{d^E}[f*(T^π₀Q − Q)]
/// over bounded Q and read d̂ = (f*)′(·)·d^E.
pub fn estimate_visitation_iqlearn(
    mdp: &TabularMdp,
    d_expert: &Visitation,
    pi_query: &Policy,
    divergence: FDivergence,
    opts: &RatioOptions,
) -> Result<VisitationEstimate> {
    mdp.check_policy(pi_query)?;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let inner = Inner {
        mdp,
        pi: pi_query,
        start: mdp.d0().iter().map(|d| (1.0 - g) * d).collect(),
        w: d_expert.values().to_vec(),
        b: vec![0.0; ns * na],
        r: vec![0.0; ns * na],
        div: divergence,
        mode: ConjugateMode::Fstar,
        gradient_mode: GradientMode::Full,
    };
    box_estimate(inner, d_expert, opts)
}

/// Smallest density used inside the pseudo-reward logarithm.
pub const LOG_FLOOR: f64 = 1e-300;

/// −log(d^S/d^E) with d^E floored at [`LOG_FLOOR`]; zero where d^S has no mass.
pub fn pseudo_reward(d_expert: &Visitation, d_subopt: &Visitation) -> SaTable {
    let values = d_expert
        .values()
        .iter()
        .zip(d_subopt.values())
        .map(|(e, s)| if *s > 0.0 { (e.max(LOG_FLOOR) / s).ln() } else { 0.0 })
        .collect();
    SaTable::from_vec(d_expert.n_states(), d_expert.n_actions(), values).expect("shapes agree")
}

/// Coverage-assumption extraction: reverse-KL dual-Q with d_ref = d^S and the
/// pseudo-reward log(d^E/d^S), bounded Q, d̂ = (f*)′(r + T^π₀Q − Q)·d^S.
pub fn estimate_visitation_coverage(
    mdp: &TabularMdp,
    d_expert: &Visitation,
    d_subopt: &Visitation,
    pi_query: &Policy,
    opts: &RatioOptions,
) -> Result<VisitationEstimate> {
    mdp.check_policy(pi_query)?;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let inner = Inner {
        mdp,
        pi: pi_query,
        start: mdp.d0().iter().map(|d| (1.0 - g) * d).collect(),
        w: d_subopt.values().to_vec(),
        b: vec![0.0; ns * na],
        r: pseudo_reward(d_expert, d_subopt).values,
        div: FDivergence::new(DivergenceKind::ReverseKl),
        mode: ConjugateMode::Fstar,
        gradient_mode: GradientMode::Full,
    };
    box_estimate(inner, d_subopt, opts)
}
