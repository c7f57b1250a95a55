//! Fixtures shared by the benches.

use dualrl_core::divergences::{DivergenceKind, FDivergence};
use dualrl_core::implicit::truncated_normal;
use dualrl_core::mdp::{gridworld, random_mdp, random_policy, value_iteration, visitation, GridworldSpec, Policy};
use dualrl_core::recoil::RecoilProblem;
use dualrl_core::{MaximizerProblem, RegularizedProblem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn dual_problem(n_states: usize, n_actions: usize, kind: DivergenceKind) -> RegularizedProblem {
    let mdp = random_mdp(1, n_states, n_actions, 0.9, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d_ref = visitation(&mdp, &random_policy(n_states, n_actions, 1.0, &mut rng)).unwrap();
    RegularizedProblem::new(mdp, d_ref, 1.0, FDivergence::new(kind)).unwrap()
}

pub fn maximizer_problem(n: usize, lambda: f64, kind: DivergenceKind) -> MaximizerProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs = truncated_normal(n, 0.0, 1.0, -2.0, 2.0, &mut rng).unwrap();
    MaximizerProblem::new(xs, lambda, FDivergence::new(kind)).unwrap()
}

/// Gridworld imitation with the optimal expert and uniform suboptimal data.
pub fn gridworld_imitation(n: usize) -> RecoilProblem {
    let mdp = gridworld(&GridworldSpec::new(n)).unwrap();
    let expert = value_iteration(&mdp, &mdp.reward(), 1e-12).unwrap().policy;
    let de = visitation(&mdp, &expert).unwrap();
    let ds = visitation(&mdp, &Policy::uniform(mdp.n_states(), mdp.n_actions())).unwrap();
    RecoilProblem::new(mdp, de, ds, 0.99, FDivergence::new(DivergenceKind::PearsonChi2)).unwrap()
}
