//! TOML configuration for the experiment drivers.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergences::{DivergenceKind, FDivergence};
use crate::dual::{PrimalOracleOptions, SolveOptions};
use crate::error::{Error, Result};
use crate::mdp::{gridworld, random_mdp, star_mdp_with_gamma, GridworldSpec, TabularMdp};
use crate::recoil::{RatioOptions, RecoilConfig};
use crate::reductions::SuiteOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Duality,
    Maximizer,
    Recoil,
    Ratio,
    Reward,
    Reductions,
    Fdvl,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Duality,
        ExperimentKind::Maximizer,
        ExperimentKind::Recoil,
        ExperimentKind::Ratio,
        ExperimentKind::Reward,
        ExperimentKind::Reductions,
        ExperimentKind::Fdvl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Duality => "duality",
            ExperimentKind::Maximizer => "maximizer",
            ExperimentKind::Recoil => "recoil",
            ExperimentKind::Ratio => "ratio",
            ExperimentKind::Reward => "reward",
            ExperimentKind::Reductions => "reductions",
            ExperimentKind::Fdvl => "fdvl",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!(
                "unknown experiment '{s}' (expected one of {})",
                names.join(", ")
            ))
        })
    }
}

fn default_gamma() -> f64 {
    0.9
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EnvKind {
    Star,
    Gridworld,
    Random,
    File,
}

/// Flat form of `[env]`, so type errors keep their line and field.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvTable {
    kind: EnvKind,
    gamma: Option<f64>,
    n: Option<usize>,
    seed: Option<u64>,
    n_states: Option<usize>,
    n_actions: Option<usize>,
    concentration: Option<f64>,
    path: Option<std::path::PathBuf>,
}

impl TryFrom<EnvTable> for EnvSpec {
    type Error = String;

    fn try_from(t: EnvTable) -> std::result::Result<Self, String> {
        fn need<T>(x: Option<T>, kind: &str, field: &str) -> std::result::Result<T, String> {
            x.ok_or_else(|| format!("env kind `{kind}` needs `{field}`"))
        }
        let allowed: &[&str] = match t.kind {
            EnvKind::Star => &["gamma"],
            EnvKind::Gridworld => &["n", "gamma"],
            EnvKind::Random => &["seed", "n_states", "n_actions", "gamma", "concentration"],
            EnvKind::File => &["path"],
        };
        let present = [
            ("gamma", t.gamma.is_some()),
            ("n", t.n.is_some()),
            ("seed", t.seed.is_some()),
            ("n_states", t.n_states.is_some()),
            ("n_actions", t.n_actions.is_some()),
            ("concentration", t.concentration.is_some()),
            ("path", t.path.is_some()),
        ];
        if let Some((f, _)) = present.iter().find(|(f, on)| *on && !allowed.contains(f)) {
            return Err(format!("`{f}` does not apply to env kind `{:?}`", t.kind).to_lowercase());
        }
        let gamma = t.gamma.unwrap_or_else(default_gamma);
        Ok(match t.kind {
            EnvKind::Star => EnvSpec::Star { gamma },
            EnvKind::Gridworld => EnvSpec::Gridworld {
                n: need(t.n, "gridworld", "n")?,
                gamma,
            },
            EnvKind::Random => EnvSpec::Random {
                seed: need(t.seed, "random", "seed")?,
                n_states: need(t.n_states, "random", "n_states")?,
                n_actions: need(t.n_actions, "random", "n_actions")?,
                gamma,
                concentration: t.concentration.unwrap_or(1.0),
            },
            EnvKind::File => EnvSpec::File {
                path: need(t.path, "file", "path")?,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "EnvTable")]
pub enum EnvSpec {
    Star {
        gamma: f64,
    },
    Gridworld {
        n: usize,
        gamma: f64,
    },
    Random {
        seed: u64,
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        concentration: f64,
    },
    /// MDP JSON file (see [`crate::mdp::MdpRepr`]).
    File {
        path: std::path::PathBuf,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match *self {
            EnvSpec::Star { gamma } => star_mdp_with_gamma(gamma),
            EnvSpec::Gridworld { n, gamma } => gridworld(&GridworldSpec {
                gamma,
                ..GridworldSpec::new(n)
            }),
            EnvSpec::Random {
                seed,
                n_states,
                n_actions,
                gamma,
                concentration,
            } => random_mdp(seed, n_states, n_actions, gamma, concentration),
            EnvSpec::File { ref path } => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            EnvSpec::Star { .. } => "star".into(),
            EnvSpec::Gridworld { n, .. } => format!("gridworld({n})"),
            EnvSpec::Random {
                seed,
                n_states,
                n_actions,
                ..
            } => format!("random({seed},{n_states}x{n_actions})"),
            EnvSpec::File { path } => format!("file({})", path.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualitySettings {
    pub instances: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub concentration: f64,
    /// Bound on |primal − dual| / (1 + |primal|).
    pub gap_tol: f64,
    pub flow_tol: f64,
    pub solve: SolveOptions,
    pub oracle: PrimalOracleOptions,
}

impl Default for DualitySettings {
    fn default() -> Self {
        DualitySettings {
            instances: 20,
            min_states: 3,
            max_states: 6,
            min_actions: 2,
            max_actions: 3,
            gamma: 0.9,
            alpha: 1.0,
            concentration: 1.0,
            gap_tol: 1e-3,
            flow_tol: 1e-4,
            solve: SolveOptions::default(),
            oracle: PrimalOracleOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaximizerSettings {
    pub n_samples: usize,
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
    pub lambdas: Vec<f64>,
    /// Accepted range for v at the largest λ.
    pub sup_band: [f64; 2],
    pub monotone_tol: f64,
}

impl Default for MaximizerSettings {
    fn default() -> Self {
        MaximizerSettings {
            n_samples: 100_000,
            mean: 0.0,
            sd: 1.0,
            lo: -2.0,
            hi: 2.0,
            lambdas: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 0.999],
            sup_band: [1.90, 2.00],
            monotone_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoilSettings {
    pub beta: f64,
    /// Extra β values run and reported without checks.
    pub sensitivity_betas: Vec<f64>,
    pub config: RecoilConfig,
    pub match_threshold: f64,
    pub chi2_threshold: f64,
    pub root_mass_threshold: f64,
}

impl Default for RecoilSettings {
    fn default() -> Self {
        RecoilSettings {
            beta: 0.99,
            sensitivity_betas: vec![0.5, 0.9],
            config: RecoilConfig::default(),
            match_threshold: 0.95,
            chi2_threshold: 0.05,
            root_mass_threshold: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioSettings {
    pub beta: f64,
    /// Dirichlet concentration of the random query policies.
    pub query_concentration: f64,
    pub options: RatioOptions,
    pub recoil_mse_max: f64,
    /// Each baseline's mean mse must be at least this multiple of ReCOIL's.
    pub baseline_factor: f64,
}

impl Default for RatioSettings {
    fn default() -> Self {
        RatioSettings {
            beta: 0.99,
            query_concentration: 1.0,
            options: RatioOptions::default(),
            recoil_mse_max: 1e-3,
            baseline_factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSettings {
    pub beta: f64,
    pub config: RecoilConfig,
    pub top1_threshold: f64,
    pub identity_tol: f64,
}

impl Default for RewardSettings {
    fn default() -> Self {
        RewardSettings {
            beta: 0.99,
            config: RecoilConfig::default(),
            top1_threshold: 0.9,
            identity_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionSettings {
    pub suite: SuiteOptions,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
}

impl Default for ReductionSettings {
    fn default() -> Self {
        ReductionSettings {
            suite: SuiteOptions::default(),
            n_states: 5,
            n_actions: 3,
            gamma: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdvlSettings {
    pub bandit_rewards: Vec<f64>,
    pub bandit_lambda: f64,
    pub bandit_tol: f64,
    pub grid_n: usize,
    pub grid_lambda: f64,
    pub grid_iterations: usize,
    /// Relative tolerance on the greedy return against value iteration.
    pub return_tol: f64,
    pub adversarial_rewards: Vec<f64>,
    pub awr_temperature: f64,
}

impl Default for FdvlSettings {
    fn default() -> Self {
        FdvlSettings {
            bandit_rewards: vec![0.0, 1.0, 2.0],
            bandit_lambda: 0.99,
            bandit_tol: 0.02,
            grid_n: 4,
            grid_lambda: 0.9,
            grid_iterations: 500,
            return_tol: 0.05,
            adversarial_rewards: vec![0.0, 5000.0],
            awr_temperature: 3.0,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    /// Defaults depend on the experiment.
    #[serde(default)]
    pub env: Option<EnvSpec>,
    #[serde(default)]
    pub divergences: Vec<DivergenceKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub duality: DualitySettings,
    #[serde(default)]
    pub maximizer: MaximizerSettings,
    #[serde(default)]
    pub recoil: RecoilSettings,
    #[serde(default)]
    pub ratio: RatioSettings,
    #[serde(default)]
    pub reward: RewardSettings,
    #[serde(default)]
    pub reductions: ReductionSettings,
    #[serde(default)]
    pub fdvl: FdvlSettings,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: Some(kind),
            env: None,
            divergences: Vec::new(),
            seeds: default_seeds(),
            root_seed: 0,
            output_dir: default_out(),
            duality: DualitySettings::default(),
            maximizer: MaximizerSettings::default(),
            recoil: RecoilSettings::default(),
            ratio: RatioSettings::default(),
            reward: RewardSettings::default(),
            reductions: ReductionSettings::default(),
            fdvl: FdvlSettings::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Toml(t) => Error::Config(format!("{}: {t}", path.display())),
            other => other,
        })
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.experiment
            .ok_or_else(|| Error::Config("no experiment named in the config or on the command line".into()))
    }

    pub fn env_or(&self, default: EnvSpec) -> EnvSpec {
        self.env.clone().unwrap_or(default)
    }

    pub fn divergences_or(&self, default: &[DivergenceKind]) -> Vec<DivergenceKind> {
        if self.divergences.is_empty() {
            default.to_vec()
        } else {
            self.divergences.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be non-empty".into()));
        }
        let d = &self.duality;
        if d.min_states == 0 || d.min_states > d.max_states || d.min_actions == 0 || d.min_actions > d.max_actions {
            return Err(Error::Config("duality state/action ranges are empty".into()));
        }
        if self.maximizer.lambdas.is_empty() {
            return Err(Error::Config("maximizer lambda grid is empty".into()));
        }
        for k in &self.divergences {
            let div = FDivergence::new(*k);
            let ok = match kind {
                ExperimentKind::Maximizer | ExperimentKind::Fdvl => div.has_surrogate(),
                ExperimentKind::Duality => div.has_f_prime_inv(),
                _ => true,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "divergence {k} is not supported by the {kind} experiment"
                )));
            }
        }
        if let Some(env) = &self.env {
            env.build()?;
        }
        self.recoil.config.validate()?;
        self.reward.config.validate()?;
        Ok(())
    }
}

/// Which part of a run draws from a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Env = 0,
    Policy = 1,
    Samples = 2,
    Oracle = 3,
    Data = 4,
}

const COMPONENTS: u64 = 8;

/// Independent ChaCha streams for each (seed, component) under one root seed.
#[derive(Clone, Copy, Debug)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        SeedStreams { root }
    }

    pub fn rng(&self, seed: u64, component: Component) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.root);
        r.set_stream(seed.wrapping_mul(COMPONENTS).wrapping_add(component as u64));
        r
    }

    /// A u64 drawn from the stream, for APIs that take a plain seed.
    pub fn seed(&self, seed: u64, component: Component) -> u64 {
        use rand::Rng;
        self.rng(seed, component).random()
    }
}
