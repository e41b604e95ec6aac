//! Per-pair losses `f_ij` and their characteristic gradients `∂f/∂ψ`.
//!
//! Every family factors its gradient as `multiplier · difference` with a
//! non-negative multiplier (a tempered function of the counts) and a
//! difference that is zero exactly at the family's fixed point.
//!
//! | family        | multiplier        | difference                  | fixed point ψ       |
//! |---------------|-------------------|-----------------------------|---------------------|
//! | SVD (MSE)     | 2                 | ψ − PMI                     | PMI                 |
//! | SGNS/FastText | N_ij + N_ij⁻      | σ(ψ) − N_ij/(N_ij + N_ij⁻)  | ln(N_ij / N_ij⁻)    |
//! | GloVe         | 2 h(N_ij)         | ψ − ln N_ij                 | ln N_ij             |
//! | LDS           | 2 h(N_ij)         | ψ − ln N_ij + C             | ln N_ij − C         |
//! | Swivel, N>0   | √N_ij             | ψ − PMI                     | PMI                 |
//! | Swivel, N=0   | 1                 | σ(ψ − PMI*)                 | one-sided, ≤ PMI*   |
//!
//! GloVe, LDS and the SVD objective contribute nothing for unseen pairs.

use std::fmt;
use std::str::FromStr;

use crate::association::{pmi_from_counts, ContextDistribution, DEFAULT_SMOOTHING_EXPONENT};
use crate::corpus::CoocStats;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    SvdMse,
    Sgns,
    FastTextSgns,
    Glove,
    Lds,
    Swivel,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::SvdMse,
        Family::Sgns,
        Family::FastTextSgns,
        Family::Glove,
        Family::Lds,
        Family::Swivel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::SvdMse => "svd-mse",
            Family::Sgns => "sgns",
            Family::FastTextSgns => "fasttext",
            Family::Glove => "glove",
            Family::Lds => "lds",
            Family::Swivel => "swivel",
        }
    }

    /// Families whose gradient is nonzero on unseen pairs.
    pub fn requires_all_pairs(self) -> bool {
        matches!(self, Family::Sgns | Family::FastTextSgns | Family::Swivel)
    }

    /// Families whose gradient vanishes on both sides of the fixed point.
    pub fn is_two_sided(self) -> bool {
        !matches!(self, Family::Swivel)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "svd-mse" | "svd_mse" => Family::SvdMse,
            "sgns" => Family::Sgns,
            "fasttext" | "fasttext-sgns" => Family::FastTextSgns,
            "glove" => Family::Glove,
            "lds" => Family::Lds,
            "swivel" => Family::Swivel,
            other => return Err(Error::InvalidConfig(format!("unknown family '{}'", other))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub family: Family,
    /// Negatives per positive (SGNS, FastText).
    pub k: u32,
    /// Weight cap of `h` (GloVe, LDS).
    pub x_max: f64,
    /// Exponent of `h` (GloVe, LDS).
    pub beta: f64,
    /// Exponent of the negative sampling distribution (SGNS, FastText).
    pub smoothing_exponent: f64,
}

impl ObjectiveSpec {
    pub fn new(family: Family) -> Self {
        ObjectiveSpec {
            family,
            k: 5,
            x_max: 100.0,
            beta: 0.75,
            smoothing_exponent: DEFAULT_SMOOTHING_EXPONENT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.x_max > 0.0) {
            return Err(Error::InvalidConfig("x_max must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig("beta must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Sublinear weight `h(x) = (min(x, x_max) / x_max)^beta`.
    #[inline]
    pub fn weight(&self, x: f64) -> f64 {
        (x.min(self.x_max) / self.x_max).powf(self.beta)
    }
}

/// Counts entering one pair's loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCounts {
    pub n_ij: f64,
    pub n_i: f64,
    pub n_j: f64,
    pub n: f64,
    /// Expected negative count `N_ij⁻`.
    pub n_neg: f64,
}

impl PairCounts {
    /// Counts with `N_ij⁻ = k N_i N_j / N` (unsmoothed negatives).
    pub fn unsmoothed(n_ij: f64, n_i: f64, n_j: f64, n: f64, k: u32) -> Self {
        PairCounts {
            n_ij,
            n_i,
            n_j,
            n,
            n_neg: k as f64 * n_i * n_j / n,
        }
    }

    pub fn pmi(&self) -> f64 {
        pmi_from_counts(self.n_ij, self.n_i, self.n_j, self.n)
    }

    /// Swivel's optimistic PMI for unseen pairs.
    pub fn pmi_star(&self) -> f64 {
        pmi_from_counts(self.n_ij.max(1.0), self.n_i, self.n_j, self.n)
    }
}

/// `∂f/∂ψ` as `multiplier · difference`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharGrad<F> {
    pub multiplier: F,
    pub difference: F,
    pub value: F,
}

impl<F: Scalar> CharGrad<F> {
    pub fn new(multiplier: F, difference: F) -> Self {
        CharGrad {
            multiplier,
            difference,
            value: multiplier * difference,
        }
    }

    pub fn zero() -> Self {
        CharGrad::new(F::zero(), F::zero())
    }
}

/// Value of ψ at which the characteristic gradient vanishes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FixedPoint {
    Exact(f64),
    /// Gradient only vanishes as ψ → −∞; any ψ well below `bound` is near-optimal.
    OneSided { bound: f64 },
    /// The pair contributes nothing, every ψ is stationary.
    Unconstrained,
}

impl FixedPoint {
    /// A representative ψ at which the gradient is zero.
    pub fn psi(&self) -> f64 {
        match *self {
            FixedPoint::Exact(v) => v,
            FixedPoint::OneSided { .. } => f64::NEG_INFINITY,
            FixedPoint::Unconstrained => 0.0,
        }
    }
}

/// Characteristic gradient of `spec` at `psi`. `lds_constant` is the LDS
/// offset `C` and is ignored by the other families.
pub fn char_grad<F: Scalar>(
    spec: &ObjectiveSpec,
    psi: F,
    pair: &PairCounts,
    lds_constant: F,
) -> CharGrad<F> {
    let n_ij = pair.n_ij;
    match spec.family {
        Family::SvdMse => {
            if n_ij > 0.0 {
                CharGrad::new(F::of(2.0), psi - F::of(pair.pmi()))
            } else {
                CharGrad::zero()
            }
        }
        Family::Sgns | Family::FastTextSgns => {
            let total = n_ij + pair.n_neg;
            // σ(ln(N_ij / N_ij⁻)) = N_ij / (N_ij + N_ij⁻), exact at N_ij = 0
            let target = if total > 0.0 { n_ij / total } else { 0.0 };
            CharGrad::new(F::of(total), sigmoid(psi) - F::of(target))
        }
        Family::Glove => {
            if n_ij > 0.0 {
                CharGrad::new(F::of(2.0 * spec.weight(n_ij)), psi - F::of(n_ij.ln()))
            } else {
                CharGrad::zero()
            }
        }
        Family::Lds => {
            if n_ij > 0.0 {
                CharGrad::new(
                    F::of(2.0 * spec.weight(n_ij)),
                    psi - F::of(n_ij.ln()) + lds_constant,
                )
            } else {
                CharGrad::zero()
            }
        }
        Family::Swivel => {
            if n_ij > 0.0 {
                CharGrad::new(F::of(n_ij.sqrt()), psi - F::of(pair.pmi()))
            } else {
                CharGrad::new(F::one(), sigmoid(psi - F::of(pair.pmi_star())))
            }
        }
    }
}

/// Per-pair loss whose ψ-derivative is [`char_grad`].
pub fn loss<F: Scalar>(spec: &ObjectiveSpec, psi: F, pair: &PairCounts, lds_constant: F) -> F {
    let n_ij = pair.n_ij;
    match spec.family {
        Family::SvdMse => {
            if n_ij > 0.0 {
                let d = psi - F::of(pair.pmi());
                d * d
            } else {
                F::zero()
            }
        }
        Family::Sgns | Family::FastTextSgns => {
            // -(N ln σ(ψ) + N⁻ ln(1 − σ(ψ)))
            F::of(n_ij) * softplus(-psi) + F::of(pair.n_neg) * softplus(psi)
        }
        Family::Glove => {
            if n_ij > 0.0 {
                let d = psi - F::of(n_ij.ln());
                F::of(spec.weight(n_ij)) * d * d
            } else {
                F::zero()
            }
        }
        Family::Lds => {
            if n_ij > 0.0 {
                let d = F::of(n_ij.ln()) - psi - lds_constant;
                F::of(spec.weight(n_ij)) * d * d
            } else {
                F::zero()
            }
        }
        Family::Swivel => {
            if n_ij > 0.0 {
                let d = psi - F::of(pair.pmi());
                F::of(0.5 * n_ij.sqrt()) * d * d
            } else {
                softplus(psi - F::of(pair.pmi_star()))
            }
        }
    }
}

/// Derivative of the per-pair loss with respect to the LDS constant `C`,
/// given the characteristic gradient at the same point.
#[inline]
pub fn constant_grad<F: Scalar>(spec: &ObjectiveSpec, grad: &CharGrad<F>) -> F {
    match spec.family {
        Family::Lds => grad.value,
        _ => F::zero(),
    }
}

pub fn fixed_point(spec: &ObjectiveSpec, pair: &PairCounts, lds_constant: f64) -> FixedPoint {
    let n_ij = pair.n_ij;
    match spec.family {
        Family::SvdMse if n_ij > 0.0 => FixedPoint::Exact(pair.pmi()),
        Family::Sgns | Family::FastTextSgns => FixedPoint::Exact((n_ij / pair.n_neg).ln()),
        Family::Glove if n_ij > 0.0 => FixedPoint::Exact(n_ij.ln()),
        Family::Lds if n_ij > 0.0 => FixedPoint::Exact(n_ij.ln() - lds_constant),
        Family::Swivel if n_ij > 0.0 => FixedPoint::Exact(pair.pmi()),
        Family::Swivel => FixedPoint::OneSided {
            bound: pair.pmi_star(),
        },
        _ => FixedPoint::Unconstrained,
    }
}

/// An objective bound to concrete statistics.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    spec: ObjectiveSpec,
    stats: &'a CoocStats,
    negatives: ContextDistribution,
}

impl<'a> Objective<'a> {
    pub fn new(spec: ObjectiveSpec, stats: &'a CoocStats) -> Result<Self> {
        spec.validate()?;
        Ok(Objective {
            spec,
            stats,
            negatives: ContextDistribution::new(stats, spec.smoothing_exponent),
        })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn stats(&self) -> &'a CoocStats {
        self.stats
    }

    /// Counts for `(i, j)`, checking that both marginals are positive.
    pub fn pair(&self, i: usize, j: usize) -> Result<PairCounts> {
        let size = self.stats.size();
        if i >= size || j >= size {
            return Err(Error::IdOutOfRange {
                what: if i >= size { "context" } else { "term" },
                id: i.max(j),
                size,
            });
        }
        let (n_i, n_j) = (self.stats.context_marginal(i), self.stats.term_marginal(j));
        if n_i <= 0.0 || n_j <= 0.0 {
            return Err(Error::UndefinedMarginal { i, j });
        }
        Ok(self.pair_with_count(i, j, self.stats.get(i, j)))
    }

    /// Counts for `(i, j)` with a known `N_ij`, without validation.
    #[inline]
    pub fn pair_with_count(&self, i: usize, j: usize, n_ij: f64) -> PairCounts {
        let n_i = self.stats.context_marginal(i);
        let n_j = self.stats.term_marginal(j);
        PairCounts {
            n_ij,
            n_i,
            n_j,
            n: self.stats.total(),
            n_neg: self.negatives.negative_count(self.spec.k, n_i, n_j),
        }
    }

    pub fn char_grad<F: Scalar>(&self, psi: F, i: usize, j: usize, lds_constant: F) -> Result<CharGrad<F>> {
        Ok(char_grad(&self.spec, psi, &self.pair(i, j)?, lds_constant))
    }

    pub fn loss<F: Scalar>(&self, psi: F, i: usize, j: usize, lds_constant: F) -> Result<F> {
        Ok(loss(&self.spec, psi, &self.pair(i, j)?, lds_constant))
    }

    pub fn fixed_point(&self, i: usize, j: usize, lds_constant: f64) -> Result<FixedPoint> {
        Ok(fixed_point(&self.spec, &self.pair(i, j)?, lds_constant))
    }
}
