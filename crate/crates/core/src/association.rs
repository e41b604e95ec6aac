//! Association targets φ_ij computed from cooccurrence statistics.

use crate::corpus::CoocStats;
use crate::error::{Error, Result};

/// Default exponent of the smoothed unigram distribution used for negatives.
pub const DEFAULT_SMOOTHING_EXPONENT: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AssociationKind {
    /// `ln(N N_ij / (N_i N_j))`, `-inf` for unseen pairs.
    Pmi,
    /// PMI with every value `<= alpha` replaced by `alpha`. `alpha = 0` is PPMI.
    ClippedPmi(f64),
    /// `ln(N_ij / N_ij⁻)` with `k` negatives per positive.
    ShiftedPmi(u32),
    /// `ln N_ij`.
    LogCount,
    /// PMI with `N_ij` replaced by `max(N_ij, 1)`.
    SmoothedPmi,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssociationSpec {
    pub kind: AssociationKind,
    /// Exponent of the negative sampling distribution (only `ShiftedPmi`).
    pub smoothing_exponent: f64,
}

impl AssociationSpec {
    pub fn new(kind: AssociationKind) -> Self {
        AssociationSpec {
            kind,
            smoothing_exponent: DEFAULT_SMOOTHING_EXPONENT,
        }
    }

    pub fn with_smoothing(mut self, s: f64) -> Self {
        self.smoothing_exponent = s;
        self
    }

    /// Whether every value of this association is finite.
    pub fn is_bounded(&self) -> bool {
        matches!(
            self.kind,
            AssociationKind::ClippedPmi(_) | AssociationKind::SmoothedPmi
        )
    }
}

/// PMI from raw counts; `-inf` when `n_ij == 0`.
#[inline]
pub fn pmi_from_counts(n_ij: f64, n_i: f64, n_j: f64, n: f64) -> f64 {
    (n * n_ij / (n_i * n_j)).ln()
}

fn marginals(stats: &CoocStats, i: usize, j: usize) -> Result<(f64, f64)> {
    for (what, id) in [("context", i), ("term", j)] {
        if id >= stats.size() {
            return Err(Error::IdOutOfRange {
                what,
                id,
                size: stats.size(),
            });
        }
    }
    let (n_i, n_j) = (stats.context_marginal(i), stats.term_marginal(j));
    if n_i <= 0.0 || n_j <= 0.0 {
        return Err(Error::UndefinedMarginal { i, j });
    }
    Ok((n_i, n_j))
}

/// Pointwise mutual information of context `i` and term `j`.
pub fn pmi(stats: &CoocStats, i: usize, j: usize) -> Result<f64> {
    let (n_i, n_j) = marginals(stats, i, j)?;
    Ok(pmi_from_counts(stats.get(i, j), n_i, n_j, stats.total()))
}

/// Negative sampling distribution over contexts, `P(i) ∝ N_i^s`.
#[derive(Clone, Debug)]
pub struct ContextDistribution {
    exponent: f64,
    normalizer: f64,
}

impl ContextDistribution {
    pub fn new(stats: &CoocStats, exponent: f64) -> Self {
        let normalizer = stats
            .context_marginals()
            .iter()
            .filter(|&&n| n > 0.0)
            .map(|&n| n.powf(exponent))
            .sum();
        ContextDistribution {
            exponent,
            normalizer,
        }
    }

    /// Probability of drawing a context with marginal `n_i`.
    #[inline]
    pub fn prob(&self, n_i: f64) -> f64 {
        if self.exponent == 1.0 {
            n_i / self.normalizer
        } else {
            n_i.powf(self.exponent) / self.normalizer
        }
    }

    /// Expected number of times `(i, j)` is drawn as a negative:
    /// `k · N_j · P(i)`.
    #[inline]
    pub fn negative_count(&self, k: u32, n_i: f64, n_j: f64) -> f64 {
        k as f64 * n_j * self.prob(n_i)
    }
}

/// `N_ij⁻ = k · N_j · N_i^s / Σ_i' N_i'^s`; with `s = 1` this is `k N_i N_j / N`.
pub fn negative_count(
    stats: &CoocStats,
    k: u32,
    smoothing_exponent: f64,
    i: usize,
    j: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let (n_i, n_j) = marginals(stats, i, j)?;
    Ok(ContextDistribution::new(stats, smoothing_exponent).negative_count(k, n_i, n_j))
}

/// Evaluator for one association spec over fixed stats.
#[derive(Clone, Debug)]
pub struct Association<'a> {
    spec: AssociationSpec,
    stats: &'a CoocStats,
    negatives: Option<ContextDistribution>,
}

impl<'a> Association<'a> {
    pub fn new(spec: AssociationSpec, stats: &'a CoocStats) -> Result<Self> {
        let negatives = match spec.kind {
            AssociationKind::ShiftedPmi(k) => {
                if k < 1 {
                    return Err(Error::InvalidConfig("k must be at least 1".into()));
                }
                Some(ContextDistribution::new(stats, spec.smoothing_exponent))
            }
            _ => None,
        };
        Ok(Association {
            spec,
            stats,
            negatives,
        })
    }

    pub fn spec(&self) -> &AssociationSpec {
        &self.spec
    }

    pub fn value(&self, i: usize, j: usize) -> Result<f64> {
        let (n_i, n_j) = marginals(self.stats, i, j)?;
        let n_ij = self.stats.get(i, j);
        let n = self.stats.total();
        Ok(match self.spec.kind {
            AssociationKind::Pmi => pmi_from_counts(n_ij, n_i, n_j, n),
            AssociationKind::ClippedPmi(alpha) => {
                let v = pmi_from_counts(n_ij, n_i, n_j, n);
                if v <= alpha {
                    alpha
                } else {
                    v
                }
            }
            AssociationKind::ShiftedPmi(k) => {
                let neg = self
                    .negatives
                    .as_ref()
                    .expect("negatives prepared for ShiftedPmi")
                    .negative_count(k, n_i, n_j);
                (n_ij / neg).ln()
            }
            AssociationKind::LogCount => n_ij.ln(),
            AssociationKind::SmoothedPmi => pmi_from_counts(n_ij.max(1.0), n_i, n_j, n),
        })
    }
}

/// One-shot evaluation of `spec` at `(i, j)`.
pub fn association(spec: &AssociationSpec, stats: &CoocStats, i: usize, j: usize) -> Result<f64> {
    Association::new(*spec, stats)?.value(i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // The "a b a b a", w = 1 table: N_ab = N_ba = 4.
    fn abab() -> CoocStats {
        CoocStats::from_triples(2, vec![(0, 1, 4.0), (1, 0, 4.0)]).unwrap()
    }

    // N = 100, N_00 = 1, N_0 = N_0' = 10 (independence at (0, 0)).
    fn independent() -> CoocStats {
        CoocStats::from_triples(2, vec![(0, 0, 1.0), (0, 1, 9.0), (1, 0, 9.0), (1, 1, 81.0)])
            .unwrap()
    }

    #[test]
    fn pmi_examples() {
        let s = abab();
        assert_abs_diff_eq!(pmi(&s, 0, 1).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(pmi(&s, 0, 1).unwrap(), 0.693147, epsilon = 1e-6);
        assert_eq!(pmi(&s, 0, 0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(pmi(&independent(), 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn pmi_undefined_marginal() {
        let s = CoocStats::from_triples(3, vec![(0, 1, 1.0)]).unwrap();
        let err = pmi(&s, 2, 1).unwrap_err();
        assert!(err.to_string().starts_with("undefined marginal"));
        assert!(pmi(&s, 0, 5).is_err());
    }

    #[test]
    fn clipped_pmi() {
        let spec = AssociationSpec::new(AssociationKind::ClippedPmi(0.0));
        assert_eq!(association(&spec, &independent(), 0, 0).unwrap(), 0.0);
        assert_eq!(association(&spec, &abab(), 0, 0).unwrap(), 0.0);
        let spec = AssociationSpec::new(AssociationKind::ClippedPmi(-1.5));
        assert_eq!(association(&spec, &abab(), 1, 1).unwrap(), -1.5);
        assert_abs_diff_eq!(association(&spec, &abab(), 1, 0).unwrap(), 2f64.ln());
    }

    #[test]
    fn shifted_pmi_is_pmi_minus_ln_k() {
        let s = abab();
        for k in [1u32, 2, 5, 15] {
            let spec = AssociationSpec::new(AssociationKind::ShiftedPmi(k)).with_smoothing(1.0);
            let v = association(&spec, &s, 0, 1).unwrap();
            assert_abs_diff_eq!(v, 2f64.ln() - (k as f64).ln(), epsilon = 1e-12);
        }
        let spec = AssociationSpec::new(AssociationKind::ShiftedPmi(1)).with_smoothing(1.0);
        assert_abs_diff_eq!(
            association(&spec, &s, 1, 0).unwrap(),
            pmi(&s, 1, 0).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_count_and_smoothed() {
        let s = abab();
        let lc = AssociationSpec::new(AssociationKind::LogCount);
        assert_abs_diff_eq!(association(&lc, &s, 0, 1).unwrap(), 4f64.ln());
        assert_eq!(association(&lc, &s, 0, 0).unwrap(), f64::NEG_INFINITY);

        let sm = AssociationSpec::new(AssociationKind::SmoothedPmi);
        assert_abs_diff_eq!(association(&sm, &s, 0, 0).unwrap(), -(2f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(association(&sm, &s, 0, 1).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn negative_count_examples() {
        let s = abab();
        assert_abs_diff_eq!(negative_count(&s, 1, 1.0, 0, 1).unwrap(), 2.0);
        assert_abs_diff_eq!(negative_count(&s, 5, 1.0, 0, 1).unwrap(), 10.0);

        // s = 0: uniform over the two contexts.
        let skewed =
            CoocStats::from_triples(2, vec![(0, 1, 3.0), (1, 0, 1.0), (0, 0, 6.0)]).unwrap();
        let n_j = skewed.term_marginal(1);
        assert_abs_diff_eq!(negative_count(&skewed, 3, 0.0, 0, 1).unwrap(), 3.0 * n_j / 2.0);
        assert_abs_diff_eq!(negative_count(&skewed, 3, 0.0, 1, 1).unwrap(), 3.0 * n_j / 2.0);
        assert!(negative_count(&s, 0, 1.0, 0, 1).is_err());
    }
}
