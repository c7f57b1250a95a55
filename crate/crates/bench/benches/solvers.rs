use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dualrl_bench::{dual_problem, gridworld_imitation, maximizer_problem};
use dualrl_core::divergences::DivergenceKind;
use dualrl_core::dual::{solve_dual_v, SolveOptions};
use dualrl_core::recoil::run_recoil;
use dualrl_core::{solve_implicit_max, RecoilConfig};

fn dual_v(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_dual_v");
    for kind in [DivergenceKind::PearsonChi2, DivergenceKind::ReverseKl] {
        for ns in [6, 25] {
            let prob = dual_problem(ns, 3, kind);
            g.bench_with_input(BenchmarkId::new(kind.to_string(), ns), &prob, |b, p| {
                b.iter(|| solve_dual_v(p, &SolveOptions::default()).unwrap())
            });
        }
    }
    g.finish();
}

fn implicit_max(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_implicit_max");
    for kind in [
        DivergenceKind::TotalVariation,
        DivergenceKind::PearsonChi2,
        DivergenceKind::ReverseKl,
    ] {
        let prob = maximizer_problem(100_000, 0.99, kind);
        g.bench_with_input(BenchmarkId::new(kind.to_string(), 100_000), &prob, |b, p| {
            b.iter(|| solve_implicit_max(p).unwrap())
        });
    }
    g.finish();
}

fn recoil(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_recoil");
    g.sample_size(10);
    for n in [5, 8] {
        let prob = gridworld_imitation(n);
        g.bench_with_input(BenchmarkId::new("gridworld", n), &prob, |b, p| {
            b.iter(|| run_recoil(p, &RecoilConfig::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, dual_v, implicit_max, recoil);
criterion_main!(benches);
