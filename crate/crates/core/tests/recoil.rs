mod common;

use common::max_abs_diff;
use dualrl_core::divergences::{DivergenceKind, FDivergence};
use dualrl_core::mdp::{
    evaluate_q, gridworld, random_mdp, random_policy, star_mdp, value_iteration, visitation, GridworldSpec, Policy,
    SaTable, TabularMdp, VTable, Visitation,
};
use dualrl_core::recoil::{
    estimate_agent_visitation, estimate_visitation_coverage, estimate_visitation_iqlearn, mixture,
    recoil_chi2_objective, recoil_q_gradients, recoil_q_objective, recoil_v_objective, recover_reward, run_recoil,
    sample_visitation, RatioOptions, RecoilConfig, RecoilProblem, VStep,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chi2() -> FDivergence {
    FDivergence::new(DivergenceKind::PearsonChi2)
}

fn random_problem(seed: u64, kind: DivergenceKind, beta: f64) -> (RecoilProblem, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = random_mdp(seed, 4, 3, 0.9, 1.0).unwrap();
    let de = visitation(&mdp, &random_policy(4, 3, 0.5, &mut rng)).unwrap();
    let ds = visitation(&mdp, &random_policy(4, 3, 1.0, &mut rng)).unwrap();
    (
        RecoilProblem::new(mdp, de, ds, beta, FDivergence::new(kind)).unwrap(),
        rng,
    )
}

fn random_q(ns: usize, na: usize, rng: &mut ChaCha8Rng) -> SaTable {
    SaTable::from_vec(ns, na, (0..ns * na).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
}

/// Written out term by term with f*(y) for χ² and reverse KL.
fn direct_q_objective(p: &RecoilProblem, pi: &Policy, q: &SaTable) -> f64 {
    let m = &p.mdp;
    let (ns, na, g) = (m.n_states(), m.n_actions(), m.gamma());
    let fstar = |y: f64| match p.divergence.kind {
        DivergenceKind::PearsonChi2 => y + y * y / 4.0,
        DivergenceKind::ReverseKl => (y - 1.0).exp(),
        _ => unreachable!(),
    };
    let v_pi: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| pi.prob(s, a) * q.get(s, a)).sum())
        .collect();
    let mut total = 0.0;
    for s in 0..ns {
        total += p.beta * (1.0 - g) * m.d0()[s] * v_pi[s];
        for a in 0..na {
            let next: f64 = (0..ns).map(|s2| m.p(s, a, s2) * v_pi[s2]).sum();
            let y = g * next - q.get(s, a);
            let mix = p.beta * p.d_expert.get(s, a) + (1.0 - p.beta) * p.d_subopt.get(s, a);
            total += mix * fstar(y) - (1.0 - p.beta) * p.d_subopt.get(s, a) * y;
        }
    }
    total
}

#[test]
fn q_objective_matches_direct_sum() {
    for kind in [DivergenceKind::PearsonChi2, DivergenceKind::ReverseKl] {
        let (p, mut rng) = random_problem(1, kind, 0.7);
        for _ in 0..10 {
            let pi = random_policy(4, 3, 1.0, &mut rng);
            let q = random_q(4, 3, &mut rng);
            let got = recoil_q_objective(&p, &pi, &q).unwrap();
            assert!((got - direct_q_objective(&p, &pi, &q)).abs() < 1e-12, "{kind}");
        }
    }
}

#[test]
fn chi2_rearranged_form_is_the_same_objective() {
    let (p, mut rng) = random_problem(2, DivergenceKind::PearsonChi2, 0.6);
    for _ in 0..10 {
        let pi = random_policy(4, 3, 1.0, &mut rng);
        let q = random_q(4, 3, &mut rng);
        let a = recoil_q_objective(&p, &pi, &q).unwrap();
        let b = recoil_chi2_objective(&p, &pi, &q).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn q_gradient_matches_finite_difference() {
    let (p, mut rng) = random_problem(3, DivergenceKind::ReverseKl, 0.8);
    let pi = random_policy(4, 3, 1.0, &mut rng);
    let q = random_q(4, 3, &mut rng);
    let (gq, _) = recoil_q_gradients(&p, &pi, &q).unwrap();
    let h = 1e-6;
    for z in 0..12 {
        let (mut up, mut dn) = (q.clone(), q.clone());
        up.values[z] += h;
        dn.values[z] -= h;
        let fd = (recoil_q_objective(&p, &pi, &up).unwrap() - recoil_q_objective(&p, &pi, &dn).unwrap()) / (2.0 * h);
        assert!((fd - gq.values[z]).abs() < 1e-6, "z={z}: {fd} vs {}", gq.values[z]);
    }
}

#[test]
fn v_objective_matches_direct_sum() {
    let (p, _) = random_problem(4, DivergenceKind::PearsonChi2, 0.9);
    let m = &p.mdp;
    let (ns, na, g) = (m.n_states(), m.n_actions(), m.gamma());
    let v: Vec<f64> = (0..ns).map(|s| 0.3 * s as f64 - 0.5).collect();
    let mut want = 0.0;
    for s in 0..ns {
        want += p.beta * (1.0 - g) * m.d0()[s] * v[s];
        for a in 0..na {
            let y = g * (0..ns).map(|s2| m.p(s, a, s2) * v[s2]).sum::<f64>() - v[s];
            let fp = if y > -2.0 { y + y * y / 4.0 } else { -1.0 };
            let mix = p.beta * p.d_expert.get(s, a) + (1.0 - p.beta) * p.d_subopt.get(s, a);
            want += mix * fp - (1.0 - p.beta) * p.d_subopt.get(s, a) * y;
        }
    }
    let got = recoil_v_objective(&p, &VTable { values: v }).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn reward_recovery_inverts_policy_evaluation() {
    let (p, mut rng) = random_problem(5, DivergenceKind::PearsonChi2, 0.9);
    for _ in 0..5 {
        let r = random_q(4, 3, &mut rng);
        let pi = random_policy(4, 3, 1.0, &mut rng);
        let q = evaluate_q(&p.mdp, &r, &pi).unwrap();
        let r_hat = recover_reward(&p, &pi, &q).unwrap();
        assert!(max_abs_diff(&r_hat.values, &r.values) < 1e-10);
    }
}

#[test]
fn mixture_and_problem_validation() {
    let a = Visitation::new(1, 2, vec![1.0, 0.0]).unwrap();
    let b = Visitation::new(1, 2, vec![0.0, 1.0]).unwrap();
    assert_eq!(mixture(&a, &b, 0.25).unwrap().values(), &[0.25, 0.75]);
    assert!(mixture(&a, &b, 1.5).is_err());
    let (p, _) = random_problem(0, DivergenceKind::PearsonChi2, 0.5);
    assert!(p.with_beta(0.0).is_err());
    assert!(p.with_beta(1.0).is_err());
    let js = FDivergence::new(DivergenceKind::JensenShannon);
    assert!(RecoilProblem::new(p.mdp.clone(), p.d_expert.clone(), p.d_subopt.clone(), 0.5, js).is_err());
    let wrong = Visitation::uniform(2, 3);
    assert!(RecoilProblem::new(p.mdp.clone(), wrong, p.d_subopt.clone(), 0.5, chi2()).is_err());
}

#[test]
fn sampled_visitation_is_seeded_and_consistent() {
    let (p, _) = random_problem(6, DivergenceKind::PearsonChi2, 0.5);
    let a = sample_visitation(&p.d_expert, 200_000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_visitation(&p.d_expert, 200_000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.values(), b.values());
    assert!(max_abs_diff(a.values(), p.d_expert.values()) < 5e-3);
}

fn imitation(mdp: TabularMdp, expert: Policy, beta: f64) -> (RecoilProblem, Policy) {
    let de = visitation(&mdp, &expert).unwrap();
    let ds = visitation(&mdp, &Policy::uniform(mdp.n_states(), mdp.n_actions())).unwrap();
    (RecoilProblem::new(mdp, de, ds, beta, chi2()).unwrap(), expert)
}

fn visited(d: &Visitation) -> Vec<usize> {
    d.state_marginal()
        .iter()
        .enumerate()
        .filter(|(_, m)| **m > 1e-12)
        .map(|(s, _)| s)
        .collect()
}

#[test]
fn gridworld_imitation_matches_expert() {
    let mdp = gridworld(&GridworldSpec::new(5)).unwrap();
    let expert = value_iteration(&mdp, &mdp.reward(), 1e-12).unwrap().policy;
    let (prob, expert) = imitation(mdp, expert, 0.99);
    let want = expert.greedy_actions();
    for v_step in [VStep::Gumbel, VStep::Expectile { kappa: 0.9 }] {
        let run = run_recoil(
            &prob,
            &RecoilConfig {
                v_step: v_step.clone(),
                ..RecoilConfig::default()
            },
        )
        .unwrap();
        let got = run.greedy_policy().greedy_actions();
        let states = visited(&prob.d_expert);
        let hits = states.iter().filter(|s| got[**s] == want[**s]).count();
        assert!(
            hits as f64 >= 0.95 * states.len() as f64,
            "{v_step:?}: {hits}/{}",
            states.len()
        );
        let d = visitation(&prob.mdp, &run.greedy_policy()).unwrap();
        let div = chi2().divergence_flat(d.values(), prob.d_expert.values(), 4).unwrap();
        assert!(div <= 0.05, "{v_step:?}: {div}");
        let top = states
            .iter()
            .filter(|s| dualrl_core::mdp::argmax_tie_low(run.reward.row(**s)) == want[**s])
            .count();
        assert!(
            top as f64 >= 0.9 * states.len() as f64,
            "{v_step:?}: reward top-1 {top}"
        );
    }
}

#[test]
fn sampled_gridworld_imitation() {
    let mdp = gridworld(&GridworldSpec::new(5)).unwrap();
    let expert = value_iteration(&mdp, &mdp.reward(), 1e-12).unwrap().policy;
    let (prob, expert) = imitation(mdp, expert, 0.99);
    let run = run_recoil(
        &prob,
        &RecoilConfig {
            n_samples: Some(10_000),
            seed: 3,
            ..RecoilConfig::default()
        },
    )
    .unwrap();
    let got = run.greedy_policy().greedy_actions();
    let want = expert.greedy_actions();
    let states = visited(&prob.d_expert);
    assert!(states.iter().all(|s| got[*s] == want[*s]));
}

#[test]
fn star_root_mass() {
    let mdp = star_mdp();
    let expert = Policy::deterministic(mdp.n_states(), mdp.n_actions(), &vec![0; mdp.n_states()]).unwrap();
    let (prob, _) = imitation(mdp, expert, 0.99);
    let run = run_recoil(&prob, &RecoilConfig::default()).unwrap();
    assert!(run.policy.prob(0, 0) >= 0.95, "{}", run.policy.prob(0, 0));
}

#[test]
fn density_ratio_on_star() {
    let mdp = star_mdp();
    let expert = Policy::deterministic(mdp.n_states(), mdp.n_actions(), &vec![0; mdp.n_states()]).unwrap();
    let (prob, _) = imitation(mdp.clone(), expert, 0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let opts = RatioOptions::default();
    for _ in 0..5 {
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), 1.0, &mut rng);
        let truth = visitation(&mdp, &pi).unwrap();
        let est = estimate_agent_visitation(&prob, &pi, &opts).unwrap();
        assert!(est.mse <= 1e-10, "{}", est.mse);
        assert!(max_abs_diff(est.d_hat.values(), truth.values()) < 1e-5);
        let iq = estimate_visitation_iqlearn(&mdp, &prob.d_expert, &pi, chi2(), &opts).unwrap();
        let cov = estimate_visitation_coverage(&mdp, &prob.d_expert, &prob.d_subopt, &pi, &opts).unwrap();
        assert!(iq.mse >= 10.0 * est.mse && cov.mse >= 10.0 * est.mse);
    }
}

#[test]
fn density_ratio_on_random_mdp_and_small_beta_warning() {
    let (prob, mut rng) = random_problem(8, DivergenceKind::PearsonChi2, 0.5);
    let pi = random_policy(4, 3, 1.0, &mut rng);
    let est = estimate_agent_visitation(&prob, &pi, &RatioOptions::default()).unwrap();
    assert!(est.mse < 1e-12, "{}", est.mse);
    assert!(est.warning.is_none());
    let small = prob.with_beta(0.01).unwrap();
    let est = estimate_agent_visitation(&small, &pi, &RatioOptions::default()).unwrap();
    assert!(est.warning.is_some());
}

#[test]
fn gumbel_v_step_is_stationary() {
    let mdp = gridworld(&GridworldSpec::new(5)).unwrap();
    let expert = value_iteration(&mdp, &mdp.reward(), 1e-12).unwrap().policy;
    let (prob, _) = imitation(mdp, expert, 0.99);
    let cfg = RecoilConfig::default();
    let run = run_recoil(&prob, &cfg).unwrap();
    let mix = prob.mix();
    for s in 0..prob.mdp.n_states() {
        let w: Vec<f64> = (0..4).map(|a| mix.get(s, a)).collect();
        let z: f64 = w.iter().sum();
        if z == 0.0 {
            continue;
        }
        let m: f64 = (0..4)
            .filter(|a| w[*a] > 0.0)
            .map(|a| w[a] / z * ((run.q.get(s, a) - run.v.values[s]) / cfg.tau).exp())
            .sum();
        assert!((m - 1.0).abs() < 1e-6, "s={s}: {m}");
    }
}

#[test]
fn objective_tends_to_imitation_dual_as_beta_grows() {
    let (p, mut rng) = random_problem(10, DivergenceKind::PearsonChi2, 0.9);
    let pi = random_policy(4, 3, 1.0, &mut rng);
    let q = random_q(4, 3, &mut rng);
    let imitation_dual = dualrl_core::RegularizedProblem::new(p.mdp.clone(), p.d_expert.clone(), 1.0, chi2())
        .unwrap()
        .with_reward_mode(dualrl_core::RewardMode::Zero)
        .unwrap();
    let target = dualrl_core::dual::dual_q_objective(&imitation_dual, &pi, &q).unwrap();
    let gaps: Vec<f64> = [0.9, 0.99, 0.999]
        .iter()
        .map(|b| (recoil_q_objective(&p.with_beta(*b).unwrap(), &pi, &q).unwrap() - target).abs())
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    // first order in 1 − β
    let rates = [gaps[0] / 0.1, gaps[1] / 0.01, gaps[2] / 0.001];
    assert!((rates[2] / rates[0] - 1.0).abs() < 0.05, "{gaps:?}");
}
