//! Acceptance run: one PASS/FAIL line per criterion, with runtime against its budget.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{golden_max, grid_argmin, max_abs_diff};
use dualrl_core::divergences::{DivergenceKind, FDivergence};
use dualrl_core::dual::{optimal_ratio, primal_oracle, solve_dual_v, PrimalOracleOptions, SolveOptions};
use dualrl_core::implicit::{maximizer_sweep, run_fdvl, truncated_normal, xql_preset, Dataset, FdvlConfig};
use dualrl_core::mdp::{
    argmax_tie_low, evaluate_q, expected_return, gridworld, random_mdp, random_policy, star_mdp, state_flow_residual,
    value_iteration, visitation, GridworldSpec, Policy, SaTable, TabularMdp,
};
use dualrl_core::recoil::{
    estimate_agent_visitation, estimate_visitation_coverage, estimate_visitation_iqlearn, recover_reward, run_recoil,
    RatioOptions, RecoilConfig, RecoilProblem, RecoilRun,
};
use dualrl_core::reductions::{reduction_suite, SuiteOptions};
use dualrl_core::{Error, RegularizedProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Error>;
type Criterion = (&'static str, f64, fn() -> Outcome);

fn conjugates() -> Outcome {
    let kinds = [
        DivergenceKind::ReverseKl,
        DivergenceKind::PearsonChi2,
        DivergenceKind::TotalVariation,
        DivergenceKind::SquaredHellinger,
    ];
    let (mut bi, mut inv, mut fp): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in kinds {
        let div = FDivergence::new(k);
        let (lo, hi) = match k {
            DivergenceKind::TotalVariation => (-0.5, 0.5),
            DivergenceKind::SquaredHellinger => (-10.0, 1.0),
            _ => (-10.0, 10.0),
        };
        for i in 1..=60 {
            let x = 0.05 * i as f64 + 0.003;
            let fss = golden_max(|y| div.conjugate(y).ok().map(|c| x * y - c), lo, hi);
            bi = bi.max((fss - div.f(x)).abs());
            if div.has_f_prime_inv() {
                let y = div.f_prime(x);
                let h = 1e-5;
                let fd = (div.conjugate(y + h)? - div.conjugate(y - h)?) / (2.0 * h);
                inv = inv.max((fd - div.f_prime_inv(y)?).abs());
            }
        }
        let (ylo, yhi) = match k {
            DivergenceKind::ReverseKl => (-4.0, 2.0),
            DivergenceKind::PearsonChi2 => (-5.0, 3.0),
            DivergenceKind::TotalVariation => (-2.0, 0.49),
            _ => (-3.0, 0.6),
        };
        for i in 0..=80 {
            let y = ylo + (yhi - ylo) * i as f64 / 80.0;
            let oracle = golden_max(|x| Some(x * y - div.f(x)), 0.0, 1e3);
            fp = fp.max((div.f_star_p(y)? - oracle).abs());
        }
    }
    Ok((
        bi <= 1e-8 && inv <= 1e-6 && fp <= 1e-6,
        format!("|f** − f| {bi:.1e}, |(f*)′ − (f′)⁻¹| {inv:.1e}, |f*_p − max| {fp:.1e}"),
    ))
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_gap, mut worst_flow): (f64, f64) = (0.0, 0.0);
    for i in 0..20 {
        let ns = rng.random_range(3..=6);
        let na = rng.random_range(2..=3);
        let mdp = random_mdp(rng.random(), ns, na, 0.9, 1.0)?;
        let d_ref = visitation(&mdp, &random_policy(ns, na, 1.0, &mut rng))?;
        for k in [DivergenceKind::PearsonChi2, DivergenceKind::ReverseKl] {
            let prob = RegularizedProblem::new(mdp.clone(), d_ref.clone(), 1.0, FDivergence::new(k))?;
            let oracle = primal_oracle(
                &prob,
                &PrimalOracleOptions {
                    seed: i,
                    ..Default::default()
                },
            )?;
            let sol = solve_dual_v(&prob, &SolveOptions::default())?;
            worst_gap = worst_gap.max((oracle.value - sol.value).abs() / (1.0 + oracle.value.abs()));
            let w = optimal_ratio(&prob, sol.v.as_ref().expect("dual-V carries V"))?;
            let d_hat: Vec<f64> = w.values.iter().zip(d_ref.values()).map(|(a, b)| a * b).collect();
            worst_flow = worst_flow.max(state_flow_residual(&mdp, &d_hat));
        }
    }
    Ok((
        worst_gap <= 1e-3 && worst_flow <= 1e-4,
        format!("max scaled gap {worst_gap:.1e}, max flow residual {worst_flow:.1e} over 20 MDPs × 2"),
    ))
}

fn maximizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs = truncated_normal(100_000, 0.0, 1.0, -2.0, 2.0, &mut rng)?;
    let lambdas = [0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 0.999];
    let mut ok = true;
    let mut tops = Vec::new();
    for k in [
        DivergenceKind::TotalVariation,
        DivergenceKind::PearsonChi2,
        DivergenceKind::ReverseKl,
    ] {
        let sweep = maximizer_sweep(&xs, FDivergence::new(k), &lambdas)?;
        ok &= sweep.windows(2).all(|w| w[1].1 >= w[0].1);
        let top = sweep.last().expect("grid").1;
        ok &= (1.90..=2.00).contains(&top);
        tops.push(format!("{k} {top:.4}"));
    }
    let chi2 = FDivergence::new(DivergenceKind::PearsonChi2);
    let mut two = Vec::new();
    for (l, want) in [(0.6, 1.0 / 3.0), (0.8, 1.0)] {
        let v = maximizer_sweep(&[0.0, 1.0], chi2, &[l])?[0].1;
        let surrogate = |y: f64| y.max(0.0) + y.max(0.0).powi(2) / 4.0;
        let grid = grid_argmin(
            |v| (1.0 - l) * v + l * (surrogate(-v) + surrogate(1.0 - v)) / 2.0,
            -1.0,
            2.0,
            1e-6,
        );
        ok &= (v - want).abs() <= 1e-4 && (grid - want).abs() <= 1e-4;
        two.push(format!("v_{l} = {v:.6} (grid {grid:.6})"));
    }
    Ok((
        ok,
        format!("v_0.999: {}; two-point χ²: {}", tops.join(", "), two.join(", ")),
    ))
}

fn reductions() -> Outcome {
    let mut ok = true;
    let (mut n, mut worst_control) = (0, f64::INFINITY);
    let mut failed = Vec::new();
    for seed in 0..3 {
        let mdp = random_mdp(500 + seed, 5, 3, 0.9, 1.0)?;
        for r in reduction_suite(
            &mdp,
            &SuiteOptions {
                tuples: 50,
                seed,
                q_scale: 0.2,
            },
        )? {
            n += 1;
            if let Some(c) = r.negative_control {
                worst_control = worst_control.min(c);
            }
            if !r.pass {
                ok = false;
                failed.push(format!("{}[{seed}]", r.name));
            }
        }
    }
    Ok((
        ok,
        format!("{n} reports, smallest negative control {worst_control:.1e}, failed: {failed:?}"),
    ))
}

fn imitation_problem(mdp: TabularMdp, expert: &Policy) -> Result<RecoilProblem, Error> {
    let de = visitation(&mdp, expert)?;
    let ds = visitation(&mdp, &Policy::uniform(mdp.n_states(), mdp.n_actions()))?;
    RecoilProblem::new(mdp, de, ds, 0.99, FDivergence::new(DivergenceKind::PearsonChi2))
}

fn expert_states(prob: &RecoilProblem) -> Vec<usize> {
    let m = prob.d_expert.state_marginal();
    (0..m.len()).filter(|s| m[*s] > 1e-12).collect()
}

fn sampled_run(prob: &RecoilProblem, seed: u64) -> Result<RecoilRun, Error> {
    run_recoil(
        prob,
        &RecoilConfig {
            seed,
            n_samples: Some(10_000),
            ..RecoilConfig::default()
        },
    )
}

fn gridworld_expert() -> Result<(TabularMdp, Policy), Error> {
    let mdp = gridworld(&GridworldSpec::new(5))?;
    let expert = value_iteration(&mdp, &mdp.reward(), 1e-12)?.policy;
    Ok((mdp, expert))
}

fn imitation() -> Outcome {
    let (mdp, expert) = gridworld_expert()?;
    let prob = imitation_problem(mdp, &expert)?;
    let states = expert_states(&prob);
    let want = expert.greedy_actions();
    let (mut worst_match, mut worst_chi2): (f64, f64) = (1.0, 0.0);
    let chi2 = FDivergence::new(DivergenceKind::PearsonChi2);
    for seed in 0..7 {
        let run = sampled_run(&prob, seed)?;
        let greedy = run.greedy_policy();
        let got = greedy.greedy_actions();
        let hits = states.iter().filter(|s| got[**s] == want[**s]).count();
        worst_match = worst_match.min(hits as f64 / states.len() as f64);
        let d = visitation(&prob.mdp, &greedy)?;
        let div = match chi2.divergence_flat(d.values(), prob.d_expert.values(), prob.mdp.n_actions()) {
            Ok(x) => x,
            Err(Error::AbsoluteContinuity { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        worst_chi2 = worst_chi2.max(div);
    }
    let star = star_mdp();
    let star_expert = Policy::deterministic(star.n_states(), star.n_actions(), &vec![0; star.n_states()])?;
    let star_prob = imitation_problem(star, &star_expert)?;
    let mut root_mass: f64 = 1.0;
    for seed in 0..7 {
        root_mass = root_mass.min(sampled_run(&star_prob, seed)?.policy.prob(0, 0));
    }
    Ok((
        worst_match >= 0.95 && worst_chi2 <= 0.05 && root_mass >= 0.95,
        format!(
            "min match {worst_match:.3}, max D_χ² {worst_chi2:.1e}, min star root mass {root_mass:.4} over 7 seeds"
        ),
    ))
}

fn density_ratio() -> Outcome {
    let mdp = star_mdp();
    let expert = Policy::deterministic(mdp.n_states(), mdp.n_actions(), &vec![0; mdp.n_states()])?;
    let prob = imitation_problem(mdp.clone(), &expert)?;
    let chi2 = FDivergence::new(DivergenceKind::PearsonChi2);
    let opts = RatioOptions::default();
    let mut sums = [0.0; 3];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pi = random_policy(mdp.n_states(), mdp.n_actions(), 1.0, &mut rng);
        sums[0] += estimate_agent_visitation(&prob, &pi, &opts)?.mse;
        sums[1] += estimate_visitation_iqlearn(&mdp, &prob.d_expert, &pi, chi2, &opts)?.mse;
        sums[2] += estimate_visitation_coverage(&mdp, &prob.d_expert, &prob.d_subopt, &pi, &opts)?.mse;
    }
    let m = sums.map(|s| s / 100.0);
    Ok((
        m[0] <= 1e-3 && m[1] >= 10.0 * m[0] && m[2] >= 10.0 * m[0],
        format!(
            "mean mse: recoil {:.1e}, iqlearn {:.1e}, coverage {:.1e}",
            m[0], m[1], m[2]
        ),
    ))
}

fn reward() -> Outcome {
    let (mdp, expert) = gridworld_expert()?;
    let prob = imitation_problem(mdp, &expert)?;
    let states = expert_states(&prob);
    let want = expert.greedy_actions();
    let mut worst_top1: f64 = 1.0;
    for seed in 0..7 {
        let run = sampled_run(&prob, seed)?;
        let hits = states
            .iter()
            .filter(|s| argmax_tie_low(run.reward.row(**s)) == want[**s])
            .count();
        worst_top1 = worst_top1.min(hits as f64 / states.len() as f64);
    }
    let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identity: f64 = 0.0;
    for _ in 0..10 {
        let r = SaTable::from_vec(ns, na, (0..ns * na).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let pi = random_policy(ns, na, 1.0, &mut rng);
        let q = evaluate_q(&prob.mdp, &r, &pi)?;
        identity = identity.max(max_abs_diff(&recover_reward(&prob, &pi, &q)?.values, &r.values));
    }
    Ok((
        worst_top1 >= 0.9 && identity <= 1e-10,
        format!("min top-1 {worst_top1:.3} over 7 seeds, identity error {identity:.1e}"),
    ))
}

fn fdvl() -> Outcome {
    let bandit = Dataset::bandit(&[0.0, 1.0, 2.0])?;
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [DivergenceKind::TotalVariation, DivergenceKind::PearsonChi2] {
        let cfg = FdvlConfig {
            divergence: k,
            lambda: 0.99,
            ..FdvlConfig::default()
        };
        let v = run_fdvl(&bandit, &cfg)?.v.values[0];
        ok &= (v - 2.0).abs() <= 0.02;
        parts.push(format!("{k} bandit V {v:.4}"));
    }
    let grid = gridworld(&GridworldSpec::new(4))?;
    let optimum = expected_return(&grid, &value_iteration(&grid, &grid.reward(), 1e-12)?.policy)?;
    let cfg = FdvlConfig {
        iterations: 500,
        gamma: grid.gamma(),
        ..FdvlConfig::default()
    };
    let ret = expected_return(&grid, &run_fdvl(&Dataset::full_coverage(&grid), &cfg)?.policy.greedy())?;
    let rel = (ret - optimum).abs() / optimum.abs();
    ok &= rel <= 0.05;
    parts.push(format!("gridworld(4) return gap {rel:.1e}"));
    let guarded = matches!(
        run_fdvl(&Dataset::bandit(&[0.0, 5000.0])?, &xql_preset(&FdvlConfig::default())),
        Err(Error::Overflow { .. })
    );
    ok &= guarded;
    parts.push(format!("overflow guard {}", if guarded { "fired" } else { "silent" }));
    Ok((ok, parts.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("conjugate suite", 5.0, conjugates),
        ("strong duality", 180.0, duality),
        ("implicit maximizer", 30.0, maximizer),
        ("reduction identities", 60.0, reductions),
        ("ReCOIL imitation", 120.0, imitation),
        ("density ratio", 180.0, density_ratio),
        ("reward recovery", 600.0, reward),
        ("f-DVL tabular", 600.0, fdvl),
    ];
    let mut all = true;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (ok && secs < *budget, d),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= ok;
        println!(
            "criterion {} {name}: {} ({detail}; {secs:.2}s of {budget:.0}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
