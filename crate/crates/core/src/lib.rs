//! Dual formulations of f-regularized reinforcement learning on tabular MDPs.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod divergences;
pub mod dual;
pub mod error;
pub mod harness;
pub mod implicit;
pub mod mdp;
pub mod optim;
pub mod recoil;
pub mod reductions;

pub use divergences::{ConjugateMode, DivergenceKind, FDivergence, TvSurrogate};
pub use dual::{DualSolution, GradientMode, RegularizedProblem, RewardMode};
pub use error::{Error, Result};
pub use harness::{emit_plot_data, run, ExperimentConfig, ExperimentKind, RunManifest};
pub use implicit::{solve_implicit_max, Dataset, FdvlConfig, MaximizerProblem};
pub use mdp::{Policy, QTable, SaTable, TabularMdp, VTable, Visitation};
pub use recoil::{RecoilConfig, RecoilProblem, RecoilRun};
pub use reductions::{reduction_suite, ReductionReport};
