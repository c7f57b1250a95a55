//! f-divergence generators and their conjugates.
//!
//! | kind | f(x) | f*(y) | f(0⁺) |
//! |------|------|-------|-------|
//! | `reverse_kl` | x log x | e^(y−1) | 0 |
//! | `pearson_chi2` | (x−1)² | y + y²/4 | 1 |
//! | `total_variation` | ½·\|x−1\| | y on [−½, ½] | ½ |
//! | `squared_hellinger` | (√x − 1)² | y/(1−y), y < 1 | 1 |
//! | `jensen_shannon` | −(x+1) log((x+1)/2) + x log x | −log(2 − e^y) | log 2 |
//!
//! `f_star_p` is the conjugate restricted to x ≥ 0, i.e. sup over x ≥ 0 of xy − f(x).

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Visitation;

/// Inputs above this raise an overflow error in exponential conjugates.
pub const EXP_GUARD: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    ReverseKl,
    PearsonChi2,
    TotalVariation,
    SquaredHellinger,
    JensenShannon,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 5] = [
        DivergenceKind::ReverseKl,
        DivergenceKind::PearsonChi2,
        DivergenceKind::TotalVariation,
        DivergenceKind::SquaredHellinger,
        DivergenceKind::JensenShannon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DivergenceKind::ReverseKl => "reverse_kl",
            DivergenceKind::PearsonChi2 => "pearson_chi2",
            DivergenceKind::TotalVariation => "total_variation",
            DivergenceKind::SquaredHellinger => "squared_hellinger",
            DivergenceKind::JensenShannon => "jensen_shannon",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DivergenceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown divergence kind `{s}`")))
    }
}

/// Which extension of the TV conjugate is used by the surrogate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvSurrogate {
    /// max(y, 0)
    #[default]
    PositivePart,
    /// max(y, −f(0)) = max(y, −½)
    Floor,
}

/// Which conjugate enters a dual objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConjugateMode {
    /// f* in Q-form objectives, f*_p in V-form objectives.
    #[default]
    Auto,
    Fstar,
    FstarP,
    Surrogate,
}

impl ConjugateMode {
    pub fn resolve(self, auto: ConjugateMode) -> ConjugateMode {
        match self {
            ConjugateMode::Auto => auto,
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FDivergence {
    pub kind: DivergenceKind,
    #[serde(default)]
    pub tv_surrogate: TvSurrogate,
}

pub fn make_divergence(name: &str) -> Result<FDivergence> {
    Ok(FDivergence::new(name.parse()?))
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn overflow(context: &str, y: f64) -> Error {
    Error::Overflow {
        context: context.to_string(),
        iteration: 0,
        argument: y,
    }
}

impl FDivergence {
    pub fn new(kind: DivergenceKind) -> Self {
        FDivergence {
            kind,
            tv_surrogate: TvSurrogate::default(),
        }
    }

    pub fn with_tv_surrogate(mut self, s: TvSurrogate) -> Self {
        self.tv_surrogate = s;
        self
    }

    /// Generator f(x) for x ≥ 0, with f(0) taken as the right limit.
    pub fn f(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::ReverseKl => xlogx(x),
            DivergenceKind::PearsonChi2 => (x - 1.0).powi(2),
            DivergenceKind::TotalVariation => 0.5 * (x - 1.0).abs(),
            DivergenceKind::SquaredHellinger => (x.sqrt() - 1.0).powi(2),
            DivergenceKind::JensenShannon => -(x + 1.0) * ((x + 1.0) / 2.0).ln() + xlogx(x),
        }
    }

    pub fn f_zero(&self) -> f64 {
        match self.kind {
            DivergenceKind::ReverseKl => 0.0,
            DivergenceKind::PearsonChi2 | DivergenceKind::SquaredHellinger => 1.0,
            DivergenceKind::TotalVariation => 0.5,
            DivergenceKind::JensenShannon => LN_2,
        }
    }

    /// f'(x); TV returns the subgradient 0 at x = 1.
    pub fn f_prime(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::ReverseKl => x.ln() + 1.0,
            DivergenceKind::PearsonChi2 => 2.0 * (x - 1.0),
            DivergenceKind::TotalVariation => 0.5 * (x - 1.0).signum() * f64::from(x != 1.0),
            DivergenceKind::SquaredHellinger => 1.0 - 1.0 / x.sqrt(),
            DivergenceKind::JensenShannon => (2.0 * x / (x + 1.0)).ln(),
        }
    }

    pub fn has_f_prime_inv(&self) -> bool {
        self.kind != DivergenceKind::TotalVariation
    }

    /// (f')⁻¹(y). The χ² branch 1 + y/2 is returned on all of ℝ, so it can be
    /// negative; callers clip with max(0, ·).
    pub fn f_prime_inv(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::ReverseKl => {
                if y - 1.0 > EXP_GUARD {
                    return Err(overflow("reverse_kl (f')^-1", y));
                }
                Ok((y - 1.0).exp())
            }
            DivergenceKind::PearsonChi2 => Ok(1.0 + 0.5 * y),
            DivergenceKind::TotalVariation => {
                Err(Error::Unsupported("total_variation has no inverse derivative".into()))
            }
            DivergenceKind::SquaredHellinger => {
                if y >= 1.0 {
                    return Err(Error::Domain(format!("squared_hellinger (f')^-1 needs y < 1, got {y}")));
                }
                Ok(1.0 / (1.0 - y).powi(2))
            }
            DivergenceKind::JensenShannon => {
                if y >= LN_2 {
                    return Err(Error::Domain(format!(
                        "jensen_shannon (f')^-1 needs y < log 2, got {y}"
                    )));
                }
                let e = y.exp();
                Ok(e / (2.0 - e))
            }
        }
    }

    /// Convex conjugate f*(y).
    pub fn conjugate(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::ReverseKl => {
                if y > EXP_GUARD {
                    return Err(overflow("reverse_kl conjugate", y));
                }
                Ok((y - 1.0).exp())
            }
            DivergenceKind::PearsonChi2 => Ok(y + 0.25 * y * y),
            DivergenceKind::TotalVariation => {
                if y.abs() > 0.5 {
                    return Err(Error::Domain(format!(
                        "total_variation conjugate is infinite at y = {y}; use surrogate mode"
                    )));
                }
                Ok(y)
            }
            DivergenceKind::SquaredHellinger => {
                if y >= 1.0 {
                    return Err(Error::Domain(format!(
                        "squared_hellinger conjugate is infinite at y = {y}"
                    )));
                }
                Ok(y / (1.0 - y))
            }
            DivergenceKind::JensenShannon => {
                if y >= LN_2 {
                    return Err(Error::Domain(format!(
                        "jensen_shannon conjugate is infinite at y = {y}"
                    )));
                }
                Ok(-(2.0 - y.exp()).ln())
            }
        }
    }

    /// (f*)'(y).
    pub fn conjugate_derivative(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => {
                self.conjugate(y)?;
                Ok(1.0)
            }
            _ => self.f_prime_inv(y),
        }
    }

    /// Conjugate under the constraint x ≥ 0.
    pub fn f_star_p(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => {
                if y > 0.5 {
                    return Err(Error::Domain(format!(
                        "total_variation f*_p is infinite at y = {y}; use surrogate mode"
                    )));
                }
                Ok(y.max(-0.5))
            }
            DivergenceKind::PearsonChi2 => Ok(if y > -2.0 { y + 0.25 * y * y } else { -1.0 }),
            _ => self.conjugate(y),
        }
    }

    pub fn f_star_p_derivative(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => {
                self.f_star_p(y)?;
                Ok(f64::from(y > -0.5))
            }
            _ => Ok(self.f_prime_inv(y)?.max(0.0)),
        }
    }

    pub fn has_surrogate(&self) -> bool {
        matches!(
            self.kind,
            DivergenceKind::TotalVariation | DivergenceKind::PearsonChi2 | DivergenceKind::ReverseKl
        )
    }

    fn no_surrogate(&self) -> Error {
        Error::Config(format!("no surrogate conjugate for {}", self.kind))
    }

    /// Nondecreasing convex surrogate of f*_p.
    ///
    /// The χ² branch is y⁺ + (y⁺)²/4. It agrees with max(y²/4 + y, 0) for y ≥ −4
    /// and stays flat below, where the unclipped quadratic turns upward again.
    pub fn surrogate(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => Ok(match self.tv_surrogate {
                TvSurrogate::PositivePart => y.max(0.0),
                TvSurrogate::Floor => y.max(-0.5),
            }),
            DivergenceKind::PearsonChi2 => {
                let p = y.max(0.0);
                Ok(p + 0.25 * p * p)
            }
            DivergenceKind::ReverseKl => self.conjugate(y),
            _ => Err(self.no_surrogate()),
        }
    }

    pub fn surrogate_derivative(&self, y: f64) -> Result<f64> {
        match self.kind {
            DivergenceKind::TotalVariation => Ok(match self.tv_surrogate {
                TvSurrogate::PositivePart => f64::from(y > 0.0),
                TvSurrogate::Floor => f64::from(y > -0.5),
            }),
            DivergenceKind::PearsonChi2 => Ok(if y > 0.0 { 1.0 + 0.5 * y } else { 0.0 }),
            DivergenceKind::ReverseKl => self.conjugate_derivative(y),
            _ => Err(self.no_surrogate()),
        }
    }

    /// Conjugate selected by `mode`; `Auto` is read as `Fstar`.
    pub fn conj(&self, mode: ConjugateMode, y: f64) -> Result<f64> {
        match mode {
            ConjugateMode::Auto | ConjugateMode::Fstar => self.conjugate(y),
            ConjugateMode::FstarP => self.f_star_p(y),
            ConjugateMode::Surrogate => self.surrogate(y),
        }
    }

    pub fn conj_derivative(&self, mode: ConjugateMode, y: f64) -> Result<f64> {
        match mode {
            ConjugateMode::Auto | ConjugateMode::Fstar => self.conjugate_derivative(y),
            ConjugateMode::FstarP => self.f_star_p_derivative(y),
            ConjugateMode::Surrogate => self.surrogate_derivative(y),
        }
    }

    /// D_f(P‖Q) = Σ Q f(P/Q) over flat tables; `n_actions` only names offending pairs.
    pub fn divergence_flat(&self, p: &[f64], q: &[f64], n_actions: usize) -> Result<f64> {
        if p.len() != q.len() {
            return Err(Error::Invalid(format!(
                "divergence over tables of length {} and {}",
                p.len(),
                q.len()
            )));
        }
        let mut total = 0.0;
        for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
            if qi == 0.0 {
                if pi > 0.0 {
                    let na = n_actions.max(1);
                    return Err(Error::AbsoluteContinuity {
                        state: i / na,
                        action: i % na,
                        p: pi,
                    });
                }
                continue;
            }
            total += match self.kind {
                DivergenceKind::ReverseKl => {
                    if pi == 0.0 {
                        0.0
                    } else {
                        pi * (pi / qi).ln()
                    }
                }
                DivergenceKind::TotalVariation => 0.5 * (pi - qi).abs(),
                DivergenceKind::SquaredHellinger => (pi.sqrt() - qi.sqrt()).powi(2),
                _ => qi * self.f(pi / qi),
            };
        }
        Ok(total)
    }
}

pub fn f_conjugate(div: &FDivergence, y: f64) -> Result<f64> {
    div.conjugate(y)
}

pub fn f_star_p(div: &FDivergence, y: f64) -> Result<f64> {
    div.f_star_p(y)
}

pub fn f_star_p_surrogate(div: &FDivergence, y: f64) -> Result<f64> {
    div.surrogate(y)
}

pub fn divergence(div: &FDivergence, p: &Visitation, q: &Visitation) -> Result<f64> {
    if p.n_states() != q.n_states() || p.n_actions() != q.n_actions() {
        return Err(Error::Invalid("visitation shapes differ".into()));
    }
    div.divergence_flat(p.values(), q.values(), p.n_actions())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(kind: DivergenceKind) -> FDivergence {
        FDivergence::new(kind)
    }

    #[test]
    fn names_round_trip() {
        for kind in DivergenceKind::ALL {
            assert_eq!(kind.name().parse::<DivergenceKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert!(matches!(make_divergence("kl"), Err(Error::Config(_))));
    }

    #[test]
    fn table_examples() {
        let chi = make_divergence("pearson_chi2").unwrap();
        assert_eq!(chi.conjugate(2.0).unwrap(), 3.0);
        assert_eq!(chi.f_star_p(2.0).unwrap(), 3.0);
        assert_eq!(chi.f_star_p(-3.0).unwrap(), -1.0);
        assert_eq!(chi.surrogate(-3.0).unwrap(), 0.0);
        assert_eq!(chi.surrogate(2.0).unwrap(), 3.0);
        let rkl = make_divergence("reverse_kl").unwrap();
        assert_eq!(rkl.conjugate(1.0).unwrap(), 1.0);
        assert_eq!(rkl.f_star_p(1.0).unwrap(), 1.0);
        let tv = make_divergence("total_variation").unwrap();
        assert_eq!(tv.conjugate(0.25).unwrap(), 0.25);
        assert!(matches!(tv.conjugate(0.6), Err(Error::Domain(_))));
        assert_eq!(tv.surrogate(-1.0).unwrap(), 0.0);
        assert_eq!(tv.with_tv_surrogate(TvSurrogate::Floor).surrogate(-1.0).unwrap(), -0.5);
    }

    #[test]
    fn generator_normalized_and_f_zero_is_limit() {
        for kind in DivergenceKind::ALL {
            let d = k(kind);
            assert!(d.f(1.0).abs() < 1e-15, "{kind}");
            assert!((d.f(1e-14) - d.f_zero()).abs() < 1e-6, "{kind}");
            assert!((d.f(0.0) - d.f_zero()).abs() < 1e-15, "{kind}");
        }
    }

    #[test]
    fn rkl_overflow_guard() {
        let rkl = k(DivergenceKind::ReverseKl);
        assert!(matches!(rkl.conjugate(701.0), Err(Error::Overflow { .. })));
        assert!(rkl.conjugate(699.0).unwrap().is_finite());
    }

    #[test]
    fn chi2_f_star_p_continuous_at_boundary() {
        let chi = k(DivergenceKind::PearsonChi2);
        let a = chi.f_star_p(-2.0 - 1e-9).unwrap();
        let b = chi.f_star_p(-2.0 + 1e-9).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn surrogate_ties_with_f_star_p_on_positive_axis() {
        let chi = k(DivergenceKind::PearsonChi2);
        for i in 0..100 {
            let y = i as f64 * 0.37;
            assert_eq!(chi.surrogate(y).unwrap(), chi.f_star_p(y).unwrap());
        }
    }

    #[test]
    fn divergence_examples() {
        let chi = k(DivergenceKind::PearsonChi2);
        let v = chi.divergence_flat(&[0.75, 0.25], &[0.5, 0.5], 2).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        let rkl = k(DivergenceKind::ReverseKl);
        let v = rkl.divergence_flat(&[1.0, 0.0], &[0.5, 0.5], 2).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        let err = rkl.divergence_flat(&[0.5, 0.5, 0.0, 0.0], &[0.5, 0.0, 0.5, 0.0], 2);
        assert!(matches!(
            err,
            Err(Error::AbsoluteContinuity {
                state: 0,
                action: 1,
                ..
            })
        ));
    }
}
