//! How closely a model realizes its fixed points, plus corpus diagnostics.

use std::io::Write;

use crate::association::{Association, AssociationSpec, ContextDistribution};
use crate::corpus::CoocStats;
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, KernelSpec};
use crate::objective::{Family, ObjectiveSpec};
use crate::scalar::Scalar;

/// Pairs rarer than this are left out of fixed point reports by default.
pub const DEFAULT_COUNT_FLOOR: f64 = 5.0;

/// Pearson correlation, `None` when either side is constant or fewer than
/// two points are given.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let (a, b) = (x[k] - mx, y[k] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn rmse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    (x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Agreement of one model quantity with one target over qualifying pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    /// What was compared, e.g. `"<i|j> vs PMI"`.
    pub label: String,
    pub pearson_r: f64,
    pub rmse: f64,
    /// Set when the correlation is undefined (constant input); `pearson_r`
    /// is then 0.
    pub degenerate: bool,
}

impl Agreement {
    fn new(label: &str, model: &[f64], target: &[f64]) -> Self {
        let r = pearson(model, target);
        Agreement {
            label: label.to_string(),
            pearson_r: r.unwrap_or(0.0),
            rmse: rmse(model, target),
            degenerate: r.is_none(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointReport {
    /// `None` for a model compared directly with an association matrix.
    pub family: Option<Family>,
    pub count_floor: f64,
    pub pair_count: usize,
    pub primary: Agreement,
    pub secondary: Option<Agreement>,
}

impl FixedPointReport {
    pub fn pearson_r(&self) -> f64 {
        self.primary.pearson_r
    }

    pub fn rmse(&self) -> f64 {
        self.primary.rmse
    }

    /// Line-oriented `key=value` summary.
    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        let family = self.family.map_or("association", |f| f.name());
        writeln!(w, "family={}", family)?;
        writeln!(w, "count_floor={}", self.count_floor)?;
        writeln!(w, "pair_count={}", self.pair_count)?;
        writeln!(w, "target={}", self.primary.label)?;
        writeln!(w, "pearson_r={:.6}", self.primary.pearson_r)?;
        writeln!(w, "rmse={:.6e}", self.primary.rmse)?;
        if self.primary.degenerate {
            writeln!(w, "flag=degenerate: constant input")?;
        }
        if let Some(s) = &self.secondary {
            writeln!(w, "secondary_target={}", s.label)?;
            writeln!(w, "secondary_pearson_r={:.6}", s.pearson_r)?;
            writeln!(w, "secondary_rmse={:.6e}", s.rmse)?;
        }
        Ok(())
    }
}

/// One qualifying pair: ids, count, model value and target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRecord {
    pub i: usize,
    pub j: usize,
    pub n_ij: f64,
    pub model: f64,
    pub target: f64,
}

fn check_shape<F: Scalar>(model: &EmbeddingModel<F>, stats: &CoocStats) -> Result<()> {
    if model.n_contexts() != stats.size() || model.n_terms() != stats.size() {
        return Err(Error::Shape(format!(
            "model is {}x{}, stats have {} words",
            model.n_contexts(),
            model.n_terms(),
            stats.size()
        )));
    }
    Ok(())
}

fn qualifying(stats: &CoocStats, count_floor: f64) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    stats.iter().filter(move |&(_, _, n)| n >= count_floor && n > 0.0)
}

/// Per-pair values behind [`fixed_point_report`]: the model's bilinear
/// quantity and the family's target, plus the secondary comparison.
pub fn fixed_point_pairs<F: Scalar>(
    model: &EmbeddingModel<F>,
    stats: &CoocStats,
    spec: &ObjectiveSpec,
    count_floor: f64,
) -> Result<(Vec<PairRecord>, Vec<PairRecord>)> {
    check_shape(model, stats)?;
    let n = stats.total();
    let negatives = ContextDistribution::new(stats, spec.smoothing_exponent);
    let mut primary = Vec::new();
    let mut secondary = Vec::new();
    let mut term = vec![F::zero(); model.dim()];
    for (i, j, n_ij) in qualifying(stats, count_floor) {
        model.term_vector_into(j, &mut term);
        let (n_i, n_j) = (stats.context_marginal(i), stats.term_marginal(j));
        let pmi = (n * n_ij / (n_i * n_j)).ln();
        let bilinear = crate::scalar::dot(model.covector(i), &term).to_f64_lossy();
        let psi = model.psi_with(i, j, &term).to_f64_lossy();
        let rec = |model: f64, target: f64| PairRecord {
            i,
            j,
            n_ij,
            model,
            target,
        };
        match spec.family {
            Family::SvdMse | Family::Swivel => primary.push(rec(bilinear, pmi)),
            Family::Sgns | Family::FastTextSgns => {
                let neg = negatives.negative_count(spec.k, n_i, n_j);
                primary.push(rec(bilinear, (n_ij / neg).ln()));
                secondary.push(rec(bilinear, pmi - (spec.k as f64).ln()));
            }
            Family::Glove => primary.push(rec(bilinear, pmi)),
            Family::Lds => {
                primary.push(rec(psi, n_ij.ln()));
                secondary.push(rec(bilinear, pmi));
            }
        }
    }
    if primary.is_empty() {
        return Err(Error::NoQualifyingPairs(count_floor));
    }
    Ok((primary, secondary))
}

fn split(records: &[PairRecord]) -> (Vec<f64>, Vec<f64>) {
    records.iter().map(|r| (r.model, r.target)).unzip()
}

/// Label of the primary and secondary comparison of a family.
pub fn target_labels(family: Family) -> (&'static str, Option<&'static str>) {
    match family {
        Family::SvdMse | Family::Swivel | Family::Glove => ("<i|j> vs PMI", None),
        Family::Sgns | Family::FastTextSgns => {
            ("<i|j> vs ln(Nij/Nij-)", Some("<i|j> vs PMI - ln k"))
        }
        Family::Lds => ("psi vs ln Nij", Some("<i|j> vs PMI")),
    }
}

/// Pearson r and RMSE between the model's bilinear part and the family's
/// target over pairs with `N_ij >= count_floor`.
///
/// GloVe compares `⟨i|j⟩` without biases against PMI. LDS compares the raw
/// kernel against `ln N_ij` and reports `⟨i|j⟩` against PMI as secondary.
/// SGNS and FastText report `⟨i|j⟩` against `PMI − ln k` as secondary.
pub fn fixed_point_report<F: Scalar>(
    model: &EmbeddingModel<F>,
    stats: &CoocStats,
    spec: &ObjectiveSpec,
    count_floor: f64,
) -> Result<FixedPointReport> {
    let (primary, secondary) = fixed_point_pairs(model, stats, spec, count_floor)?;
    let (p_label, s_label) = target_labels(spec.family);
    let (pm, pt) = split(&primary);
    let secondary = s_label.map(|label| {
        let (sm, st) = split(&secondary);
        Agreement::new(label, &sm, &st)
    });
    Ok(FixedPointReport {
        family: Some(spec.family),
        count_floor,
        pair_count: primary.len(),
        primary: Agreement::new(p_label, &pm, &pt),
        secondary,
    })
}

/// Compare `ψ` with an association directly, as for a factorized matrix.
pub fn association_report<F: Scalar>(
    model: &EmbeddingModel<F>,
    stats: &CoocStats,
    spec: &AssociationSpec,
    count_floor: f64,
) -> Result<FixedPointReport> {
    let records = association_pairs(model, stats, spec, count_floor)?;
    let (m, t) = split(&records);
    Ok(FixedPointReport {
        family: None,
        count_floor,
        pair_count: records.len(),
        primary: Agreement::new("psi vs association", &m, &t),
        secondary: None,
    })
}

pub fn association_pairs<F: Scalar>(
    model: &EmbeddingModel<F>,
    stats: &CoocStats,
    spec: &AssociationSpec,
    count_floor: f64,
) -> Result<Vec<PairRecord>> {
    check_shape(model, stats)?;
    let assoc = Association::new(*spec, stats)?;
    let mut out = Vec::new();
    let mut term = vec![F::zero(); model.dim()];
    for (i, j, n_ij) in qualifying(stats, count_floor) {
        model.term_vector_into(j, &mut term);
        out.push(PairRecord {
            i,
            j,
            n_ij,
            model: model.psi_with(i, j, &term).to_f64_lossy(),
            target: assoc.value(i, j)?,
        });
    }
    if out.is_empty() {
        return Err(Error::NoQualifyingPairs(count_floor));
    }
    Ok(out)
}

/// `i  j  n_ij  model  target` per line, with a header.
pub fn write_pairs_tsv<W: Write>(mut w: W, records: &[PairRecord], tokens: Option<&[String]>) -> Result<()> {
    writeln!(w, "context\tterm\tn_ij\tmodel\ttarget")?;
    for r in records {
        match tokens {
            Some(t) => write!(w, "{}\t{}", t[r.i], t[r.j])?,
            None => write!(w, "{}\t{}", r.i, r.j)?,
        }
        writeln!(w, "\t{}\t{}\t{}", r.n_ij, r.model, r.target)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n: u64,
    pub mean: f64,
    pub stdev: f64,
    /// Zero when the sample is constant.
    pub skewness: f64,
    /// Zero when the sample is constant.
    pub excess_kurtosis: f64,
}

impl Histogram {
    /// Equal-width histogram of `values` with population moments.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        let bins = bins.max(1);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in values {
            let d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        let (skewness, excess_kurtosis) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };

        let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Ok(Histogram {
            edges,
            counts,
            n: values.len() as u64,
            mean,
            stdev: m2.sqrt(),
            skewness,
            excess_kurtosis,
        })
    }

    /// `lo  hi  count` per bin, with a header.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lo\thi\tcount")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", self.edges[k], self.edges[k + 1], c)?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "pmi_pairs={}", self.n)?;
        writeln!(w, "pmi_mean={:.6}", self.mean)?;
        writeln!(w, "pmi_stdev={:.6}", self.stdev)?;
        writeln!(w, "pmi_skewness={:.6}", self.skewness)?;
        writeln!(w, "pmi_excess_kurtosis={:.6}", self.excess_kurtosis)?;
        Ok(())
    }
}

/// PMI of every pair with `N_ij > 0`.
pub fn pmi_values(stats: &CoocStats) -> Vec<f64> {
    let n = stats.total();
    stats
        .iter()
        .map(|(i, j, n_ij)| (n * n_ij / (stats.context_marginal(i) * stats.term_marginal(j))).ln())
        .collect()
}

pub fn pmi_histogram(stats: &CoocStats, bins: usize) -> Result<Histogram> {
    Histogram::from_values(&pmi_values(stats), bins)
}

/// Learned GloVe biases against `ln(N_word / √N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasDiagnostic {
    /// `(word, learned bias, ln(N_i/√N))` for every context with counts.
    pub context: Vec<(usize, f64, f64)>,
    pub term: Vec<(usize, f64, f64)>,
    pub context_r: f64,
    pub term_r: f64,
    /// Correlation over both sides pooled.
    pub pearson_r: f64,
    /// Set when some correlation was undefined and reported as 0.
    pub degenerate: bool,
}

impl BiasDiagnostic {
    /// One line per word: `word  context_bias  context_target  term_bias
    /// term_target`, with a header. Sides without counts are left empty.
    pub fn write_tsv<W: Write>(&self, mut w: W, tokens: Option<&[String]>) -> Result<()> {
        writeln!(w, "word\tcontext_bias\tcontext_target\tterm_bias\tterm_target")?;
        let mut rows: std::collections::BTreeMap<usize, [Option<(f64, f64)>; 2]> = Default::default();
        for (side, entries) in [&self.context, &self.term].into_iter().enumerate() {
            for &(id, b, t) in entries {
                rows.entry(id).or_default()[side] = Some((b, t));
            }
        }
        for (id, sides) in rows {
            match tokens {
                Some(tok) => write!(w, "{}", tok[id])?,
                None => write!(w, "{}", id)?,
            }
            for side in sides {
                match side {
                    Some((b, t)) => write!(w, "\t{}\t{}", b, t)?,
                    None => write!(w, "\t\t")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bias_context_r={:.6}", self.context_r)?;
        writeln!(w, "bias_term_r={:.6}", self.term_r)?;
        writeln!(w, "bias_pearson_r={:.6}", self.pearson_r)?;
        if self.degenerate {
            writeln!(w, "bias_flag=degenerate: constant input")?;
        }
        Ok(())
    }
}

pub fn glove_bias_diagnostic<F: Scalar>(
    model: &EmbeddingModel<F>,
    stats: &CoocStats,
) -> Result<BiasDiagnostic> {
    if model.kernel() != KernelSpec::BiasedDot {
        return Err(model.mismatch("biased-dot"));
    }
    check_shape(model, stats)?;
    let root_n = stats.total().sqrt();
    let side = |biases: &[F], marginals: &[f64]| -> Vec<(usize, f64, f64)> {
        marginals
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(k, &m)| (k, biases[k].to_f64_lossy(), (m / root_n).ln()))
            .collect()
    };
    let context = side(model.context_bias().expect("biased"), stats.context_marginals());
    let term = side(model.term_bias().expect("biased"), stats.term_marginals());
    let corr = |rows: &[(usize, f64, f64)]| {
        let (b, t): (Vec<f64>, Vec<f64>) = rows.iter().map(|&(_, b, t)| (b, t)).unzip();
        pearson(&b, &t)
    };
    let both: Vec<(usize, f64, f64)> = context.iter().chain(&term).copied().collect();
    let (c, t, p) = (corr(&context), corr(&term), corr(&both));
    Ok(BiasDiagnostic {
        context_r: c.unwrap_or(0.0),
        term_r: t.unwrap_or(0.0),
        pearson_r: p.unwrap_or(0.0),
        degenerate: c.is_none() || t.is_none() || p.is_none(),
        context,
        term,
    })
}
