//! Learnable parameters and the kernel functions ψ built from them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelSpec {
    /// `⟨i|j⟩`
    Dot,
    /// `⟨i|j⟩ + b_i + b_j`
    BiasedDot,
    /// `‖⟨i| + |j⟩ᵀ‖²`
    QuadraticLds,
    /// `⟨i| · Σ_{g ∈ z(j)} |g⟩` over character n-grams of word `j`.
    SubwordDot { n_min: usize, n_max: usize },
}

impl KernelSpec {
    pub const FASTTEXT: KernelSpec = KernelSpec::SubwordDot { n_min: 3, n_max: 6 };

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Dot => "dot",
            KernelSpec::BiasedDot => "biased-dot",
            KernelSpec::QuadraticLds => "quadratic-lds",
            KernelSpec::SubwordDot { .. } => "subword-dot",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::SubwordDot { n_min, n_max } = *self {
            if n_min < 1 || n_min > n_max {
                return Err(Error::InvalidConfig(format!(
                    "invalid n-gram range {}..={}",
                    n_min, n_max
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::SubwordDot { n_min, n_max } => {
                write!(f, "subword-dot:{}:{}", n_min, n_max)
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kernel = match parts.next().unwrap_or("") {
            "dot" => KernelSpec::Dot,
            "biased-dot" => KernelSpec::BiasedDot,
            "quadratic-lds" => KernelSpec::QuadraticLds,
            "subword-dot" => {
                let mut num = || -> Result<usize> {
                    parts
                        .next()
                        .and_then(|p| p.parse().ok())
                        .ok_or_else(|| Error::InvalidConfig(format!("bad kernel '{}'", s)))
                };
                let (n_min, n_max) = (num()?, num()?);
                KernelSpec::SubwordDot { n_min, n_max }
            }
            _ => return Err(Error::InvalidConfig(format!("unknown kernel '{}'", s))),
        };
        kernel.validate()?;
        Ok(kernel)
    }
}

/// Character n-grams of `<word>` for `n_min <= n <= n_max`, plus the whole
/// marked word. Sorted and deduplicated.
pub fn ngrams(word: &str, n_min: usize, n_max: usize) -> Vec<String> {
    let marked: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = BTreeSet::new();
    for n in n_min..=n_max.min(marked.len()) {
        for window in marked.windows(n) {
            out.insert(window.iter().collect::<String>());
        }
    }
    out.insert(marked.iter().collect());
    out.into_iter().collect()
}

/// Vectors for subword units and the unit decomposition of every term.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordTable<F> {
    dim: usize,
    units: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<F>,
    word_units: Vec<Vec<u32>>,
}

impl<F: Scalar> SubwordTable<F> {
    /// Table over the n-grams of `words`, all unit vectors zero.
    pub fn build(words: &[String], n_min: usize, n_max: usize, dim: usize) -> Self {
        SubwordTable::from_units(
            words.iter().map(|w| ngrams(w, n_min, n_max)).collect(),
            dim,
        )
    }

    /// Table from explicit per-word unit lists, all unit vectors zero.
    pub fn from_units(per_word: Vec<Vec<String>>, dim: usize) -> Self {
        let mut units = Vec::new();
        let mut index = HashMap::new();
        let mut word_units = Vec::with_capacity(per_word.len());
        for list in per_word {
            let mut ids: Vec<u32> = list
                .into_iter()
                .map(|u| {
                    *index.entry(u.clone()).or_insert_with(|| {
                        units.push(u);
                        units.len() - 1
                    }) as u32
                })
                .collect();
            ids.sort_unstable();
            ids.dedup();
            word_units.push(ids);
        }
        let vectors = vec![F::zero(); units.len() * dim];
        SubwordTable {
            dim,
            units,
            index,
            vectors,
            word_units,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn unit_id(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    pub fn unit_vector(&self, unit: usize) -> &[F] {
        &self.vectors[unit * self.dim..(unit + 1) * self.dim]
    }

    pub fn unit_vector_mut(&mut self, unit: usize) -> &mut [F] {
        &mut self.vectors[unit * self.dim..(unit + 1) * self.dim]
    }

    /// Unit ids making up term `j`.
    pub fn word_units(&self, j: usize) -> &[u32] {
        &self.word_units[j]
    }

    /// Sum of the unit vectors of term `j`, in unit id order.
    pub fn compose_into(&self, j: usize, out: &mut [F]) {
        out.iter_mut().for_each(|x| *x = F::zero());
        for &u in &self.word_units[j] {
            for (o, &v) in out.iter_mut().zip(self.unit_vector(u as usize)) {
                *o += v;
            }
        }
    }

    /// Vector for an arbitrary word from whichever of its n-grams are known.
    /// `None` when no n-gram is in the table.
    pub fn compose_word(&self, word: &str, n_min: usize, n_max: usize) -> Option<Vec<F>> {
        let mut ids: Vec<usize> = ngrams(word, n_min, n_max)
            .iter()
            .filter_map(|g| self.unit_id(g))
            .collect();
        if ids.is_empty() {
            return None;
        }
        ids.sort_unstable();
        let mut out = vec![F::zero(); self.dim];
        for u in ids {
            for (o, &v) in out.iter_mut().zip(self.unit_vector(u)) {
                *o += v;
            }
        }
        Some(out)
    }
}

/// Covectors `⟨i|`, vectors `|j⟩` and the optional kernel extras.
///
/// Covector `i` and vector `j` are each stored contiguously (row `i` of W,
/// column `j` of V). With a subword kernel term vectors are composed from
/// the subword table and `vectors` is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<F> {
    pub(crate) dim: usize,
    pub(crate) n_contexts: usize,
    pub(crate) n_terms: usize,
    pub(crate) kernel: KernelSpec,
    pub(crate) covectors: Vec<F>,
    pub(crate) vectors: Vec<F>,
    pub(crate) context_bias: Option<Vec<F>>,
    pub(crate) term_bias: Option<Vec<F>>,
    pub(crate) lds_constant: Option<F>,
    pub(crate) subwords: Option<SubwordTable<F>>,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Zero-initialized model. `words` is required for subword kernels.
    pub fn zeros(
        n_contexts: usize,
        n_terms: usize,
        dim: usize,
        kernel: KernelSpec,
        words: Option<&[String]>,
    ) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        kernel.validate()?;
        let subwords = match kernel {
            KernelSpec::SubwordDot { n_min, n_max } => {
                let words = words.ok_or_else(|| {
                    Error::InvalidConfig("subword kernel needs the vocabulary words".into())
                })?;
                if words.len() != n_terms {
                    return Err(Error::Shape(format!(
                        "{} words for {} terms",
                        words.len(),
                        n_terms
                    )));
                }
                Some(SubwordTable::build(words, n_min, n_max, dim))
            }
            _ => None,
        };
        let biased = kernel == KernelSpec::BiasedDot;
        Ok(EmbeddingModel {
            dim,
            n_contexts,
            n_terms,
            kernel,
            covectors: vec![F::zero(); n_contexts * dim],
            vectors: if subwords.is_some() {
                Vec::new()
            } else {
                vec![F::zero(); n_terms * dim]
            },
            context_bias: biased.then(|| vec![F::zero(); n_contexts]),
            term_bias: biased.then(|| vec![F::zero(); n_terms]),
            lds_constant: (kernel == KernelSpec::QuadraticLds).then(F::zero),
            subwords,
        })
    }

    /// Subword model over an explicit unit table.
    pub fn with_subword_table(n_contexts: usize, table: SubwordTable<F>, kernel: KernelSpec) -> Result<Self> {
        if !matches!(kernel, KernelSpec::SubwordDot { .. }) {
            return Err(Error::KernelMismatch {
                expected: "subword-dot",
                found: kernel.name(),
            });
        }
        let dim = table.dim;
        Ok(EmbeddingModel {
            dim,
            n_contexts,
            n_terms: table.word_units.len(),
            kernel,
            covectors: vec![F::zero(); n_contexts * dim],
            vectors: Vec::new(),
            context_bias: None,
            term_bias: None,
            lds_constant: None,
            subwords: Some(table),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn covector(&self, i: usize) -> &[F] {
        &self.covectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn covector_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.covectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Stored vector of term `j`; `None` for subword kernels, use
    /// [`EmbeddingModel::term_vector`].
    pub fn stored_vector(&self, j: usize) -> Option<&[F]> {
        if self.subwords.is_some() {
            None
        } else {
            Some(&self.vectors[j * self.dim..(j + 1) * self.dim])
        }
    }

    pub fn stored_vector_mut(&mut self, j: usize) -> Option<&mut [F]> {
        if self.subwords.is_some() {
            None
        } else {
            Some(&mut self.vectors[j * self.dim..(j + 1) * self.dim])
        }
    }

    /// `|j⟩`, composed from subwords when applicable.
    pub fn term_vector(&self, j: usize) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        self.term_vector_into(j, &mut out);
        out
    }

    pub fn term_vector_into(&self, j: usize, out: &mut [F]) {
        match &self.subwords {
            Some(table) => table.compose_into(j, out),
            None => out.copy_from_slice(&self.vectors[j * self.dim..(j + 1) * self.dim]),
        }
    }

    pub fn context_bias(&self) -> Option<&[F]> {
        self.context_bias.as_deref()
    }

    pub fn context_bias_mut(&mut self) -> Option<&mut [F]> {
        self.context_bias.as_deref_mut()
    }

    pub fn term_bias(&self) -> Option<&[F]> {
        self.term_bias.as_deref()
    }

    pub fn term_bias_mut(&mut self) -> Option<&mut [F]> {
        self.term_bias.as_deref_mut()
    }

    pub fn lds_constant(&self) -> Option<F> {
        self.lds_constant
    }

    pub fn set_lds_constant(&mut self, c: F) -> Result<()> {
        match &mut self.lds_constant {
            Some(slot) => {
                *slot = c;
                Ok(())
            }
            None => Err(self.mismatch("quadratic-lds")),
        }
    }

    pub fn subwords(&self) -> Option<&SubwordTable<F>> {
        self.subwords.as_ref()
    }

    pub fn subwords_mut(&mut self) -> Option<&mut SubwordTable<F>> {
        self.subwords.as_mut()
    }

    /// `C`, or zero for kernels without one.
    #[inline]
    pub fn lds_offset(&self) -> F {
        self.lds_constant.unwrap_or_else(F::zero)
    }

    pub(crate) fn mismatch(&self, expected: &'static str) -> Error {
        Error::KernelMismatch {
            expected,
            found: self.kernel.name(),
        }
    }

    pub(crate) fn check_ids(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.n_contexts {
            return Err(Error::IdOutOfRange {
                what: "context",
                id: i,
                size: self.n_contexts,
            });
        }
        if j >= self.n_terms {
            return Err(Error::IdOutOfRange {
                what: "term",
                id: j,
                size: self.n_terms,
            });
        }
        Ok(())
    }

    /// Kernel value given an already composed term vector.
    #[inline]
    pub(crate) fn psi_with(&self, i: usize, j: usize, term: &[F]) -> F {
        let w = self.covector(i);
        match self.kernel {
            KernelSpec::Dot | KernelSpec::SubwordDot { .. } => dot(w, term),
            KernelSpec::BiasedDot => {
                dot(w, term)
                    + self.context_bias.as_ref().map_or(F::zero(), |b| b[i])
                    + self.term_bias.as_ref().map_or(F::zero(), |b| b[j])
            }
            KernelSpec::QuadraticLds => w
                .iter()
                .zip(term)
                .map(|(&a, &b)| (a + b) * (a + b))
                .sum(),
        }
    }

    /// The bilinear part `⟨i|j⟩` alone.
    pub fn bilinear(&self, i: usize, j: usize) -> Result<F> {
        self.check_ids(i, j)?;
        Ok(dot(self.covector(i), &self.term_vector(j)))
    }

    /// Every term vector, composed, term-major.
    pub fn composed_vectors(&self) -> Vec<F> {
        match &self.subwords {
            None => self.vectors.clone(),
            Some(table) => {
                let mut out = vec![F::zero(); self.n_terms * self.dim];
                for (j, chunk) in out.chunks_mut(self.dim).enumerate() {
                    table.compose_into(j, chunk);
                }
                out
            }
        }
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        let all = |v: &[F]| v.iter().all(|x| x.is_finite());
        all(&self.covectors)
            && all(&self.vectors)
            && self.context_bias.as_deref().map_or(true, all)
            && self.term_bias.as_deref().map_or(true, all)
            && self.lds_constant.map_or(true, |c| c.is_finite())
            && self.subwords.as_ref().map_or(true, |t| all(&t.vectors))
    }

    /// Flat view over every learnable parameter, in a fixed order:
    /// covectors, vectors, subword units, context bias, term bias, C.
    pub fn params(&self) -> Vec<F> {
        let mut out = self.covectors.clone();
        out.extend_from_slice(&self.vectors);
        if let Some(t) = &self.subwords {
            out.extend_from_slice(&t.vectors);
        }
        if let Some(b) = &self.context_bias {
            out.extend_from_slice(b);
        }
        if let Some(b) = &self.term_bias {
            out.extend_from_slice(b);
        }
        if let Some(c) = self.lds_constant {
            out.push(c);
        }
        out
    }

    /// Mutable access to parameter `k` in [`EmbeddingModel::params`] order.
    pub fn param_mut(&mut self, mut k: usize) -> &mut F {
        macro_rules! take {
            ($v:expr) => {
                if k < $v.len() {
                    return &mut $v[k];
                } else {
                    k -= $v.len();
                }
            };
        }
        take!(self.covectors);
        take!(self.vectors);
        if let Some(t) = &mut self.subwords {
            take!(t.vectors);
        }
        if let Some(b) = &mut self.context_bias {
            take!(b);
        }
        if let Some(b) = &mut self.term_bias {
            take!(b);
        }
        match &mut self.lds_constant {
            Some(c) if k == 0 => c,
            _ => panic!("parameter index out of range"),
        }
    }
}

/// `ψ(⟨i|, |j⟩)` for the model's kernel.
pub fn psi<F: Scalar>(model: &EmbeddingModel<F>, i: usize, j: usize) -> Result<F> {
    model.check_ids(i, j)?;
    let term = model.term_vector(j);
    Ok(model.psi_with(i, j, &term))
}

/// Augmented vectors `ĩ = [√2⟨i|, ⟨i|⟨i|ᵀ, 1]` and `j̃ = [√2|j⟩, 1, ⟨j|j⟩]`,
/// whose inner product is the quadratic kernel `‖⟨i| + |j⟩ᵀ‖²`.
pub fn lds_feature_map<F: Scalar>(
    model: &EmbeddingModel<F>,
    i: usize,
    j: usize,
) -> Result<(Vec<F>, Vec<F>)> {
    if model.kernel != KernelSpec::QuadraticLds {
        return Err(model.mismatch("quadratic-lds"));
    }
    model.check_ids(i, j)?;
    Ok(augment_pair(model.covector(i), &model.term_vector(j)))
}

/// The feature map applied to raw vectors.
pub fn augment_pair<F: Scalar>(covector: &[F], vector: &[F]) -> (Vec<F>, Vec<F>) {
    let sqrt2 = F::SQRT_2();
    let mut left: Vec<F> = covector.iter().map(|&x| sqrt2 * x).collect();
    left.push(dot(covector, covector));
    left.push(F::one());
    let mut right: Vec<F> = vector.iter().map(|&x| sqrt2 * x).collect();
    right.push(F::one());
    right.push(dot(vector, vector));
    (left, right)
}

/// Draw every parameter i.i.d. uniform on `[-0.5/d, 0.5/d]`; biases and `C`
/// start at zero. `words` is required for subword kernels.
pub fn init_model<F: Scalar>(
    size: usize,
    dim: usize,
    kernel: KernelSpec,
    seed: u64,
    words: Option<&[String]>,
) -> Result<EmbeddingModel<F>> {
    let mut model = EmbeddingModel::zeros(size, size, dim, kernel, words)?;
    let scale = 0.5 / dim as f64;
    let dist = Uniform::new_inclusive(-scale, scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |v: &mut [F]| v.iter_mut().for_each(|x| *x = F::of(dist.sample(&mut rng)));
    fill(&mut model.covectors);
    fill(&mut model.vectors);
    if let Some(t) = &mut model.subwords {
        fill(&mut t.vectors);
    }
    Ok(model)
}

fn write_matrix<F: Scalar, W: Write>(
    w: W,
    tokens: &[String],
    dim: usize,
    values: &[F],
) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{} {}", tokens.len(), dim)?;
    for (token, row) in tokens.iter().zip(values.chunks(dim.max(1))) {
        write!(w, "{}", token)?;
        for v in row {
            write!(w, " {}", v)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Read the `|V| d` header format back into `(tokens, dim, values)`.
pub fn read_matrix<F: Scalar, R: BufRead>(r: R) -> Result<(Vec<String>, usize, Vec<F>)> {
    let bad = |msg: String| Error::MalformedEmbedding(msg);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))??;
    let mut parts = header.split_whitespace();
    let (rows, dim) = match (
        parts.next().and_then(|p| p.parse::<usize>().ok()),
        parts.next().and_then(|p| p.parse::<usize>().ok()),
    ) {
        (Some(r), Some(d)) => (r, d),
        _ => return Err(bad(format!("bad header '{}'", header))),
    };
    let mut tokens = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * dim);
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let token = parts.next().unwrap_or_default().to_owned();
        let before = values.len();
        for p in parts {
            values.push(F::parse_str(p).ok_or_else(|| bad(format!("bad value on line {}", k + 2)))?);
        }
        if values.len() - before != dim {
            return Err(bad(format!("line {} has {} values, expected {}", k + 2, values.len() - before, dim)));
        }
        tokens.push(token);
    }
    if tokens.len() != rows {
        return Err(bad(format!("expected {} rows, found {}", rows, tokens.len())));
    }
    Ok((tokens, dim, values))
}

fn read_matrix_file<F: Scalar>(path: &Path) -> Result<(Vec<String>, usize, Vec<F>)> {
    read_matrix(BufReader::new(File::open(path)?))
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Write term vectors (`|V| d` then `token v1 … vd` lines).
    pub fn write_vectors<W: Write>(&self, w: W, tokens: &[String]) -> Result<()> {
        self.check_tokens(tokens)?;
        write_matrix(w, tokens, self.dim, &self.composed_vectors())
    }

    /// Write context covectors in the same format.
    pub fn write_covectors<W: Write>(&self, w: W, tokens: &[String]) -> Result<()> {
        self.check_tokens(tokens)?;
        write_matrix(w, tokens, self.dim, &self.covectors)
    }

    fn check_tokens(&self, tokens: &[String]) -> Result<()> {
        if tokens.len() != self.n_terms || tokens.len() != self.n_contexts {
            return Err(Error::Shape(format!(
                "{} tokens for a model with {} contexts and {} terms",
                tokens.len(),
                self.n_contexts,
                self.n_terms
            )));
        }
        Ok(())
    }

    /// Export into `dir`: `covectors.txt`, `vectors.txt`, bias files and the
    /// n-gram table when present, and `meta.txt` holding the kernel, `C` and
    /// any extra `key=value` lines.
    pub fn save_dir<P: AsRef<Path>>(
        &self,
        dir: P,
        tokens: &[String],
        extra_meta: &[(String, String)],
    ) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_covectors(File::create(dir.join("covectors.txt"))?, tokens)?;
        self.write_vectors(File::create(dir.join("vectors.txt"))?, tokens)?;
        if let Some(b) = &self.context_bias {
            write_matrix(File::create(dir.join("context_bias.txt"))?, tokens, 1, b)?;
        }
        if let Some(b) = &self.term_bias {
            write_matrix(File::create(dir.join("term_bias.txt"))?, tokens, 1, b)?;
        }
        if let Some(t) = &self.subwords {
            write_matrix(File::create(dir.join("ngrams.txt"))?, &t.units, self.dim, &t.vectors)?;
        }
        let mut meta = BufWriter::new(File::create(dir.join("meta.txt"))?);
        writeln!(meta, "kernel={}", self.kernel)?;
        writeln!(meta, "dim={}", self.dim)?;
        if let Some(c) = self.lds_constant {
            writeln!(meta, "lds_constant={}", c)?;
        }
        for (k, v) in extra_meta {
            writeln!(meta, "{}={}", k, v)?;
        }
        meta.flush()?;
        Ok(())
    }

    /// Load a model written by [`EmbeddingModel::save_dir`]. Returns the
    /// model, its tokens and the `meta.txt` entries.
    pub fn load_dir<P: AsRef<Path>>(dir: P) -> Result<(Self, Vec<String>, Vec<(String, String)>)> {
        let dir = dir.as_ref();
        let meta = read_meta(&dir.join("meta.txt"))?;
        let get = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let kernel: KernelSpec = get("kernel")
            .ok_or_else(|| Error::MalformedEmbedding("meta.txt lacks kernel".into()))?
            .parse()?;
        let (tokens, dim, covectors) = read_matrix_file::<F>(&dir.join("covectors.txt"))?;
        let n = tokens.len();
        let mut model = match kernel {
            KernelSpec::SubwordDot { n_min, n_max } => {
                let (units, udim, uvec) = read_matrix_file::<F>(&dir.join("ngrams.txt"))?;
                if udim != dim {
                    return Err(Error::MalformedEmbedding("n-gram dimension differs".into()));
                }
                let mut table = SubwordTable::build(&tokens, n_min, n_max, dim);
                for (unit, v) in units.iter().zip(uvec.chunks(dim)) {
                    let id = table.unit_id(unit).ok_or_else(|| {
                        Error::MalformedEmbedding(format!("unknown n-gram '{}'", unit))
                    })?;
                    table.unit_vector_mut(id).copy_from_slice(v);
                }
                if units.len() != table.len() {
                    return Err(Error::MalformedEmbedding("n-gram table incomplete".into()));
                }
                EmbeddingModel::with_subword_table(n, table, kernel)?
            }
            _ => {
                let mut m = EmbeddingModel::zeros(n, n, dim, kernel, None)?;
                let (vt, vdim, vectors) = read_matrix_file::<F>(&dir.join("vectors.txt"))?;
                if vt != tokens || vdim != dim {
                    return Err(Error::MalformedEmbedding(
                        "vectors and covectors disagree".into(),
                    ));
                }
                m.vectors = vectors;
                m
            }
        };
        model.covectors = covectors;
        if kernel == KernelSpec::BiasedDot {
            model.context_bias = Some(read_matrix_file::<F>(&dir.join("context_bias.txt"))?.2);
            model.term_bias = Some(read_matrix_file::<F>(&dir.join("term_bias.txt"))?.2);
            if model.context_bias.as_ref().unwrap().len() != n
                || model.term_bias.as_ref().unwrap().len() != n
            {
                return Err(Error::MalformedEmbedding("bias length mismatch".into()));
            }
        }
        if kernel == KernelSpec::QuadraticLds {
            let c = get("lds_constant")
                .and_then(F::parse_str)
                .ok_or_else(|| Error::MalformedEmbedding("missing lds_constant".into()))?;
            model.lds_constant = Some(c);
        }
        Ok((model, tokens, meta))
    }
}

/// Parse `key=value` lines.
pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if let Some((k, v)) = line.split_once('=') {
            out.push((k.trim().to_owned(), v.trim().to_owned()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(m: &mut EmbeddingModel<f64>, i: usize, w: &[f64], j: usize, v: &[f64]) {
        m.covector_mut(i).copy_from_slice(w);
        m.stored_vector_mut(j).unwrap().copy_from_slice(v);
    }

    #[test]
    fn psi_examples() {
        let mut m = EmbeddingModel::<f64>::zeros(1, 1, 2, KernelSpec::Dot, None).unwrap();
        set(&mut m, 0, &[1.0, 2.0], 0, &[3.0, 4.0]);
        assert_eq!(psi(&m, 0, 0).unwrap(), 11.0);

        let mut m = EmbeddingModel::<f64>::zeros(1, 1, 2, KernelSpec::QuadraticLds, None).unwrap();
        set(&mut m, 0, &[1.0, 0.0], 0, &[0.0, 1.0]);
        assert_eq!(psi(&m, 0, 0).unwrap(), 2.0);

        let mut m = EmbeddingModel::<f64>::zeros(1, 1, 2, KernelSpec::BiasedDot, None).unwrap();
        m.context_bias_mut().unwrap()[0] = 0.5;
        m.term_bias_mut().unwrap()[0] = -0.2;
        assert_abs_diff_eq!(psi(&m, 0, 0).unwrap(), 0.3, epsilon = 1e-15);

        assert!(psi(&m, 1, 0).is_err());
        assert!(psi(&m, 0, 1).is_err());
    }

    #[test]
    fn feature_map_example() {
        let mut m = EmbeddingModel::<f64>::zeros(1, 1, 1, KernelSpec::QuadraticLds, None).unwrap();
        set(&mut m, 0, &[2.0], 0, &[3.0]);
        let (a, b) = lds_feature_map(&m, 0, 0).unwrap();
        assert_eq!(a.len(), 3);
        assert_abs_diff_eq!(a[0], 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(&a[1..], &[4.0, 1.0]);
        assert_abs_diff_eq!(b[0], 3.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(&b[1..], &[1.0, 9.0]);
        assert_abs_diff_eq!(dot(&a, &b), 25.0, epsilon = 1e-12);

        let z = EmbeddingModel::<f64>::zeros(1, 1, 3, KernelSpec::QuadraticLds, None).unwrap();
        let (a, b) = lds_feature_map(&z, 0, 0).unwrap();
        assert_eq!(dot(&a, &b), 0.0);

        let d = EmbeddingModel::<f64>::zeros(1, 1, 3, KernelSpec::Dot, None).unwrap();
        assert!(matches!(lds_feature_map(&d, 0, 0), Err(Error::KernelMismatch { .. })));
    }

    #[test]
    fn ngram_examples() {
        let mut expected = vec!["<ca", "cat", "at>", "<cat", "cat>", "<cat>"];
        expected.sort();
        assert_eq!(ngrams("cat", 3, 6), expected);
        assert_eq!(ngrams("a", 3, 6), vec!["<a>"]);
        assert_eq!(ngrams("cat", 3, 6), ngrams("cat", 3, 6));
        // whole marked word is kept even when longer than n_max
        assert!(ngrams("elephant", 3, 4).contains(&"<elephant>".to_string()));
        // multi-byte characters are handled per char
        assert!(ngrams("été", 3, 3).contains(&"<ét".to_string()));
    }

    #[test]
    fn init_is_seeded() {
        let a = init_model::<f64>(20, 4, KernelSpec::Dot, 9, None).unwrap();
        let b = init_model::<f64>(20, 4, KernelSpec::Dot, 9, None).unwrap();
        let c = init_model::<f64>(20, 4, KernelSpec::Dot, 10, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.params().iter().all(|x| x.abs() <= 0.125));
    }

    #[test]
    fn init_shapes() {
        let m = init_model::<f32>(200, 32, KernelSpec::Dot, 1, None).unwrap();
        assert_eq!(m.covectors.len(), 200 * 32);
        assert_eq!(m.vectors.len(), 200 * 32);
        assert_eq!(m.n_contexts(), 200);
        assert_eq!(m.n_terms(), 200);
        let b = init_model::<f64>(5, 3, KernelSpec::BiasedDot, 1, None).unwrap();
        assert_eq!(b.context_bias().unwrap(), &[0.0; 5]);
        let l = init_model::<f64>(5, 3, KernelSpec::QuadraticLds, 1, None).unwrap();
        assert_eq!(l.lds_constant(), Some(0.0));
        assert!(init_model::<f64>(5, 0, KernelSpec::Dot, 1, None).is_err());
        assert!(init_model::<f64>(5, 3, KernelSpec::FASTTEXT, 1, None).is_err());
    }

    #[test]
    fn whole_word_subwords_reduce_to_dot() {
        let words: Vec<String> = ["x", "yy", "zzz"].iter().map(|s| s.to_string()).collect();
        let units = words.iter().map(|w| vec![format!("<{}>", w)]).collect();
        let mut table = SubwordTable::<f64>::from_units(units, 2);
        let dot_model = init_model::<f64>(3, 2, KernelSpec::Dot, 4, None).unwrap();
        for j in 0..3 {
            table
                .unit_vector_mut(j)
                .copy_from_slice(dot_model.stored_vector(j).unwrap());
        }
        let mut sub = EmbeddingModel::with_subword_table(3, table, KernelSpec::FASTTEXT).unwrap();
        sub.covectors = dot_model.covectors.clone();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(psi(&sub, i, j).unwrap(), psi(&dot_model, i, j).unwrap());
            }
        }
    }

    #[test]
    fn kernel_names_roundtrip() {
        for k in [
            KernelSpec::Dot,
            KernelSpec::BiasedDot,
            KernelSpec::QuadraticLds,
            KernelSpec::FASTTEXT,
        ] {
            assert_eq!(k.to_string().parse::<KernelSpec>().unwrap(), k);
        }
        assert!("subword-dot:5:3".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn export_roundtrip() {
        let words: Vec<String> = ["the", "cat", "sat"].iter().map(|s| s.to_string()).collect();
        let dir = tempfile::tempdir().unwrap();
        for kernel in [
            KernelSpec::Dot,
            KernelSpec::BiasedDot,
            KernelSpec::QuadraticLds,
            KernelSpec::FASTTEXT,
        ] {
            let mut m = init_model::<f32>(3, 4, kernel, 3, Some(&words)).unwrap();
            if let Some(b) = m.context_bias_mut() {
                b[1] = 0.25;
            }
            if kernel == KernelSpec::QuadraticLds {
                m.set_lds_constant(-1.5).unwrap();
            }
            let path = dir.path().join(kernel.name());
            m.save_dir(&path, &words, &[("epoch".into(), "3".into())]).unwrap();
            let (back, tokens, meta) = EmbeddingModel::<f32>::load_dir(&path).unwrap();
            assert_eq!(tokens, words);
            assert_eq!(back, m, "{}", kernel);
            assert!(meta.contains(&("epoch".to_string(), "3".to_string())));
        }
    }

    #[test]
    fn malformed_matrix() {
        let text = "2 2\na 1 2\nb 3\n";
        assert!(read_matrix::<f64, _>(text.as_bytes()).is_err());
        let text = "2 2\na 1 2\n";
        assert!(read_matrix::<f64, _>(text.as_bytes()).is_err());
        let text = "1 2\na 1 x\n";
        assert!(read_matrix::<f64, _>(text.as_bytes()).is_err());
    }
}
