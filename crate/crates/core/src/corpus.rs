//! Vocabulary construction and windowed cooccurrence counting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Lowercase and split on whitespace. Anything richer is left to the caller.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token/id map shared by the context and term roles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    freq: Vec<u64>,
    total_tokens: u64,
}

impl Vocabulary {
    /// Build from `(token, count)` pairs. Ids are assigned by descending
    /// count, ties broken lexicographically.
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().map(|(t, c)| (t.into(), c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = Vec::with_capacity(entries.len());
        let mut freq = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        for (idx, (token, count)) in entries.into_iter().enumerate() {
            ids.insert(token.clone(), idx as u32);
            tokens.push(token);
            freq.push(count);
        }
        let total_tokens = freq.iter().sum();

        Vocabulary {
            tokens,
            ids,
            freq,
            total_tokens,
        }
    }

    /// Keep only the `max_size` most frequent entries.
    pub fn truncate(self, max_size: usize) -> Self {
        if self.tokens.len() <= max_size {
            return self;
        }
        Vocabulary::from_counts(
            self.tokens
                .into_iter()
                .zip(self.freq)
                .take(max_size),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).map(|&id| id as usize)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freq[id]
    }

    /// Sum of the retained token frequencies.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Write as `token<TAB>freq` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (token, freq) in self.tokens.iter().zip(&self.freq) {
            writeln!(w, "{}\t{}", token, freq)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut counts = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, freq) = line
                .split_once('\t')
                .and_then(|(t, f)| f.parse::<u64>().ok().map(|f| (t.to_owned(), f)))
                .ok_or_else(|| {
                    Error::Malformed(format!("bad vocabulary line {}", lineno + 1))
                })?;
            counts.push((token, freq));
        }
        let vocab = Vocabulary::from_counts(counts.iter().cloned());
        // The file order must already be canonical.
        if vocab.tokens.iter().zip(&counts).any(|(a, (b, _))| a != b) {
            return Err(Error::Malformed(
                "vocabulary not in descending frequency order".into(),
            ));
        }
        Ok(vocab)
    }
}

/// Count tokens and build a vocabulary, dropping tokens rarer than `min_count`.
pub fn build_vocabulary<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut seen = 0usize;
    for token in tokens {
        seen += 1;
        let token = token.as_ref();
        match counts.get_mut(token) {
            Some(c) => *c += 1,
            None => {
                counts.insert(token.to_owned(), 1);
            }
        }
    }
    if seen == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(Vocabulary::from_counts(
        counts.into_iter().filter(|&(_, c)| c >= min_count),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// Every pair inside the window counts 1.
    Flat,
    /// A pair at distance δ counts 1/δ.
    Harmonic,
}

impl Weighting {
    #[inline]
    pub fn weight(self, distance: usize) -> f64 {
        match self {
            Weighting::Flat => 1.0,
            Weighting::Harmonic => 1.0 / distance as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    /// Maximum token distance counted as a cooccurrence.
    pub width: usize,
    pub weighting: Weighting,
    /// Vocabulary threshold used by the command line driver.
    pub min_count: u64,
    /// Undersampling threshold `t`; `None` disables token dropping.
    pub undersample_t: Option<f64>,
    /// Seed for undersampling.
    pub seed: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            width: 5,
            weighting: Weighting::Flat,
            min_count: 1,
            undersample_t: None,
            seed: 0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 {
            return Err(Error::InvalidWindow(self.width));
        }
        if let Some(t) = self.undersample_t {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "undersample_t must lie in (0, 1], got {}",
                    t
                )));
            }
        }
        Ok(())
    }
}

/// Probability of keeping a token with relative frequency `rel_freq`.
pub fn keep_probability(t: f64, rel_freq: f64) -> f64 {
    let ratio = t / rel_freq;
    (ratio.sqrt() + ratio).min(1.0)
}

/// Sparse cooccurrence counts `N_ij` (context `i`, term `j`) with marginals.
///
/// Stored as compressed rows sorted by term id; every stored count is
/// strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct CoocStats {
    size: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
    context_marginals: Vec<f64>,
    term_marginals: Vec<f64>,
    total: f64,
}

impl CoocStats {
    /// Stats over a vocabulary of `size` with no counts.
    pub fn empty(size: usize) -> Self {
        CoocStats::from_sorted(size, vec![0; size + 1], Vec::new(), Vec::new())
    }

    fn from_sorted(size: usize, row_ptr: Vec<usize>, cols: Vec<u32>, values: Vec<f64>) -> Self {
        let mut context_marginals = vec![0.0; size];
        let mut term_marginals = vec![0.0; size];
        let mut total = 0.0;
        for i in 0..size {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let v = values[k];
                context_marginals[i] += v;
                term_marginals[cols[k] as usize] += v;
                total += v;
            }
        }
        CoocStats {
            size,
            row_ptr,
            cols,
            values,
            context_marginals,
            term_marginals,
            total,
        }
    }

    /// Build from `(context, term, count)` triples; duplicates are summed and
    /// zero counts dropped. Negative or non-finite counts are rejected.
    pub fn from_triples<I>(size: usize, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut acc = PairAccumulator::new(size);
        for (k, (i, j, c)) in triples.into_iter().enumerate() {
            check_id("context", i, size)?;
            check_id("term", j, size)?;
            if !c.is_finite() {
                return Err(Error::Malformed(format!("non-finite count at record {}", k + 1)));
            }
            if c < 0.0 {
                return Err(Error::NegativeCount(k + 1));
            }
            acc.add(i as u32, j as u32, c);
        }
        Ok(acc.finish())
    }

    /// Build from a dense row-major `size × size` matrix of counts.
    pub fn from_dense(size: usize, counts: &[f64]) -> Result<Self> {
        if counts.len() != size * size {
            return Err(Error::Shape(format!(
                "dense counts have {} entries, expected {}",
                counts.len(),
                size * size
            )));
        }
        CoocStats::from_triples(
            size,
            counts
                .iter()
                .enumerate()
                .map(|(k, &c)| (k / size, k % size, c)),
        )
    }

    /// Vocabulary size (shared by both roles).
    pub fn size(&self) -> usize {
        self.size
    }

    /// Number of stored (nonzero) pairs.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `N_ij`, zero when the pair was never counted.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, values) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => values[k],
            Err(_) => 0.0,
        }
    }

    /// Stored term ids and counts for context `i`, sorted by term id.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[range.clone()], &self.values[range])
    }

    /// All stored `(i, j, N_ij)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size).flat_map(move |i| {
            let (cols, values) = self.row(i);
            cols.iter()
                .zip(values)
                .map(move |(&j, &v)| (i, j as usize, v))
        })
    }

    /// `N_i`.
    pub fn context_marginal(&self, i: usize) -> f64 {
        self.context_marginals[i]
    }

    /// `N_j`.
    pub fn term_marginal(&self, j: usize) -> f64 {
        self.term_marginals[j]
    }

    pub fn context_marginals(&self) -> &[f64] {
        &self.context_marginals
    }

    pub fn term_marginals(&self) -> &[f64] {
        &self.term_marginals
    }

    /// `N`.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Check marginals against freshly recomputed sums to relative `tol`.
    pub fn marginals_consistent(&self, tol: f64) -> bool {
        let mut rows = vec![0.0; self.size];
        let mut cols = vec![0.0; self.size];
        let mut total = 0.0;
        for (i, j, v) in self.iter() {
            rows[i] += v;
            cols[j] += v;
            total += v;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        rows.iter().zip(&self.context_marginals).all(|(&a, &b)| close(a, b))
            && cols.iter().zip(&self.term_marginals).all(|(&a, &b)| close(a, b))
            && close(total, self.total)
    }

    /// Exact symmetry `N_ij == N_ji`.
    pub fn is_symmetric(&self) -> bool {
        self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// Sum of two count tables over the same vocabulary.
    pub fn merge(&self, other: &CoocStats) -> Result<CoocStats> {
        if self.size != other.size {
            return Err(Error::Shape(format!(
                "cannot merge stats of size {} and {}",
                self.size, other.size
            )));
        }
        let mut row_ptr = Vec::with_capacity(self.size + 1);
        let mut cols = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(cols.capacity());
        row_ptr.push(0);
        for i in 0..self.size {
            let (ac, av) = self.row(i);
            let (bc, bv) = other.row(i);
            let (mut x, mut y) = (0, 0);
            while x < ac.len() || y < bc.len() {
                if y == bc.len() || (x < ac.len() && ac[x] < bc[y]) {
                    cols.push(ac[x]);
                    values.push(av[x]);
                    x += 1;
                } else if x == ac.len() || bc[y] < ac[x] {
                    cols.push(bc[y]);
                    values.push(bv[y]);
                    y += 1;
                } else {
                    cols.push(ac[x]);
                    values.push(av[x] + bv[y]);
                    x += 1;
                    y += 1;
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(CoocStats::from_sorted(self.size, row_ptr, cols, values))
    }

    /// Serialize in the `LRE1` binary format.
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(MAGIC)?;
        w.write_all(&(self.size as u32).to_le_bytes())?;
        for (i, j, v) in self.iter() {
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&(j as u32).to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the `LRE1` binary format; marginals are recomputed.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        read_full(&mut r, &mut magic)
            .and_then(|n| if n == 4 { Ok(()) } else { Err(io::ErrorKind::UnexpectedEof.into()) })
            .map_err(|_| Error::Malformed("missing header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Malformed("bad magic bytes".into()));
        }
        let mut size = [0u8; 4];
        if read_full(&mut r, &mut size)? != 4 {
            return Err(Error::Malformed("missing vocabulary size".into()));
        }
        let size = u32::from_le_bytes(size) as usize;

        let mut row_ptr = vec![0usize; size + 1];
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        let mut record = [0u8; RECORD_LEN];
        let mut k = 0;
        loop {
            let n = read_full(&mut r, &mut record)?;
            if n == 0 {
                break;
            }
            k += 1;
            if n < RECORD_LEN {
                return Err(Error::Malformed(format!("truncated record {}", k)));
            }
            let i = u32::from_le_bytes(record[0..4].try_into().unwrap());
            let j = u32::from_le_bytes(record[4..8].try_into().unwrap());
            let v = f64::from_le_bytes(record[8..16].try_into().unwrap());
            if i as usize >= size || j as usize >= size {
                return Err(Error::Malformed(format!(
                    "id out of range at record {}",
                    k
                )));
            }
            if v.is_nan() || v.is_infinite() {
                return Err(Error::Malformed(format!("non-finite count at record {}", k)));
            }
            if v < 0.0 {
                return Err(Error::NegativeCount(k));
            }
            if v == 0.0 {
                return Err(Error::Malformed(format!("zero count at record {}", k)));
            }
            if last.is_some_and(|prev| prev >= (i, j)) {
                return Err(Error::Malformed(format!(
                    "unsorted or duplicate pair at record {}",
                    k
                )));
            }
            last = Some((i, j));
            row_ptr[i as usize + 1] += 1;
            cols.push(j);
            values.push(v);
        }
        for i in 0..size {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CoocStats::from_sorted(size, row_ptr, cols, values))
    }
}

const MAGIC: &[u8; 4] = b"LRE1";
const RECORD_LEN: usize = 16;

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn check_id(what: &'static str, id: usize, size: usize) -> Result<()> {
    if id >= size {
        Err(Error::IdOutOfRange { what, id, size })
    } else {
        Ok(())
    }
}

pub fn save_cooc<P: AsRef<Path>>(stats: &CoocStats, path: P) -> Result<()> {
    stats.write_to(File::create(path)?)
}

pub fn load_cooc<P: AsRef<Path>>(path: P) -> Result<CoocStats> {
    CoocStats::read_from(File::open(path)?)
}

/// Dense accumulation for small vocabularies, hashed otherwise.
enum PairAccumulator {
    Dense { size: usize, counts: Vec<f64> },
    Sparse { size: usize, counts: HashMap<u64, f64> },
}

const DENSE_LIMIT: usize = 4096;

impl PairAccumulator {
    fn new(size: usize) -> Self {
        if size <= DENSE_LIMIT {
            PairAccumulator::Dense {
                size,
                counts: vec![0.0; size * size],
            }
        } else {
            PairAccumulator::Sparse {
                size,
                counts: HashMap::new(),
            }
        }
    }

    #[inline]
    fn add(&mut self, i: u32, j: u32, w: f64) {
        match self {
            PairAccumulator::Dense { size, counts } => {
                counts[i as usize * *size + j as usize] += w;
            }
            PairAccumulator::Sparse { counts, .. } => {
                *counts.entry(((i as u64) << 32) | j as u64).or_insert(0.0) += w;
            }
        }
    }

    fn finish(self) -> CoocStats {
        match self {
            PairAccumulator::Dense { size, counts } => {
                let mut row_ptr = Vec::with_capacity(size + 1);
                let mut cols = Vec::new();
                let mut values = Vec::new();
                row_ptr.push(0);
                for (i, row) in counts.chunks(size.max(1)).take(size).enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        if v > 0.0 {
                            cols.push(j as u32);
                            values.push(v);
                        }
                    }
                    debug_assert_eq!(row_ptr.len(), i + 1);
                    row_ptr.push(cols.len());
                }
                CoocStats::from_sorted(size, row_ptr, cols, values)
            }
            PairAccumulator::Sparse { size, counts } => {
                let mut entries: Vec<(u64, f64)> =
                    counts.into_iter().filter(|&(_, v)| v > 0.0).collect();
                entries.sort_unstable_by_key(|&(k, _)| k);
                let mut row_ptr = vec![0usize; size + 1];
                let mut cols = Vec::with_capacity(entries.len());
                let mut values = Vec::with_capacity(entries.len());
                for (key, v) in entries {
                    row_ptr[(key >> 32) as usize + 1] += 1;
                    cols.push(key as u32);
                    values.push(v);
                }
                for i in 0..size {
                    row_ptr[i + 1] += row_ptr[i];
                }
                CoocStats::from_sorted(size, row_ptr, cols, values)
            }
        }
    }
}

/// Map tokens to vocabulary ids, applying undersampling when configured.
/// Dropped and out-of-vocabulary tokens keep their position.
pub fn token_ids<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    cfg: &WindowConfig,
) -> Vec<Option<u32>> {
    let mut ids: Vec<Option<u32>> = tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).map(|id| id as u32))
        .collect();
    if let Some(t) = cfg.undersample_t {
        let total = vocab.total_tokens() as f64;
        let keep: Vec<f64> = (0..vocab.len())
            .map(|id| keep_probability(t, vocab.freq(id) as f64 / total))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for slot in ids.iter_mut() {
            if let Some(id) = *slot {
                let p = keep[id as usize];
                if p < 1.0 && rng.gen::<f64>() >= p {
                    *slot = None;
                }
            }
        }
    }
    ids
}

fn count_range(
    ids: &[Option<u32>],
    focal: std::ops::Range<usize>,
    cfg: &WindowConfig,
    acc: &mut PairAccumulator,
) {
    for p in focal {
        let Some(a) = ids[p] else { continue };
        for delta in 1..=cfg.width {
            let q = p + delta;
            if q >= ids.len() {
                break;
            }
            let Some(b) = ids[q] else { continue };
            let w = cfg.weighting.weight(delta);
            // (context b, term a) and (context a, term b)
            acc.add(b, a, w);
            acc.add(a, b, w);
        }
    }
}

/// Count windowed cooccurrences over a token sequence.
pub fn extract_cooccurrences<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    cfg: &WindowConfig,
) -> Result<CoocStats> {
    cfg.validate()?;
    let ids = token_ids(tokens, vocab, cfg);
    let mut acc = PairAccumulator::new(vocab.len());
    count_range(&ids, 0..ids.len(), cfg, &mut acc);
    Ok(acc.finish())
}

/// Like [`extract_cooccurrences`], splitting the stream into `shards`
/// chunks counted on separate threads and merged in order.
pub fn extract_cooccurrences_sharded<S: AsRef<str> + Sync>(
    tokens: &[S],
    vocab: &Vocabulary,
    cfg: &WindowConfig,
    shards: usize,
) -> Result<CoocStats> {
    cfg.validate()?;
    if shards <= 1 {
        return extract_cooccurrences(tokens, vocab, cfg);
    }
    let ids = token_ids(tokens, vocab, cfg);
    let chunk = ids.len().div_ceil(shards).max(1);
    let parts: Vec<CoocStats> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..ids.len())
            .step_by(chunk)
            .map(|start| {
                let ids = &ids;
                s.spawn(move || {
                    let mut acc = PairAccumulator::new(vocab.len());
                    count_range(ids, start..(start + chunk).min(ids.len()), cfg, &mut acc);
                    acc.finish()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("counting thread panicked")).collect()
    });
    parts
        .iter()
        .try_fold(CoocStats::empty(vocab.len()), |acc, part| acc.merge(part))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).collect()
    }

    #[test]
    fn vocabulary_order_and_threshold() {
        let v = build_vocabulary(toks("a b a b a"), 1).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
        assert_eq!(v.freq(0), 3);
        assert_eq!(v.freq(1), 2);
        assert_eq!(v.total_tokens(), 5);

        let v = build_vocabulary(toks("a b a b a"), 3).unwrap();
        assert_eq!(v.tokens(), &["a"]);
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn vocabulary_ties_are_lexicographic() {
        let v = build_vocabulary(toks("z y x y z x w"), 1).unwrap();
        assert_eq!(v.tokens(), &["x", "y", "z", "w"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let err = build_vocabulary(toks(""), 1).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn tokenize_lowercases() {
        assert_eq!(toks("The  CAT\tsat\n"), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn truncate_keeps_most_frequent() {
        let v = build_vocabulary(toks("a a a b b c"), 1).unwrap().truncate(2);
        assert_eq!(v.tokens(), &["a", "b"]);
        assert_eq!(v.total_tokens(), 5);
    }

    #[test]
    fn vocabulary_tsv_roundtrip() {
        let v = build_vocabulary(toks("a b a b a c"), 1).unwrap();
        let mut buf = Vec::new();
        v.write_tsv(&mut buf).unwrap();
        assert_eq!(Vocabulary::read_tsv(&buf[..]).unwrap(), v);
    }

    #[test]
    fn adjacent_flat_counts() {
        let t = toks("a b a b a");
        let v = build_vocabulary(&t, 1).unwrap();
        let cfg = WindowConfig {
            width: 1,
            ..Default::default()
        };
        let s = extract_cooccurrences(&t, &v, &cfg).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(s.get(b, a), 4.0);
        assert_eq!(s.get(a, b), 4.0);
        assert_eq!(s.get(a, a), 0.0);
        assert_eq!(s.get(b, b), 0.0);
        assert_eq!(s.total(), 8.0);
        assert_eq!(s.context_marginal(a), 4.0);
        assert_eq!(s.context_marginal(b), 4.0);
        assert_eq!(s.nnz(), 2);
    }

    #[test]
    fn single_token_has_no_pairs() {
        let t = toks("a");
        let v = build_vocabulary(&t, 1).unwrap();
        for w in 1..4 {
            let cfg = WindowConfig {
                width: w,
                ..Default::default()
            };
            let s = extract_cooccurrences(&t, &v, &cfg).unwrap();
            assert!(s.is_empty());
            assert_eq!(s.total(), 0.0);
        }
    }

    #[test]
    fn zero_window_is_rejected() {
        let t = toks("a b");
        let v = build_vocabulary(&t, 1).unwrap();
        let cfg = WindowConfig {
            width: 0,
            ..Default::default()
        };
        let err = extract_cooccurrences(&t, &v, &cfg).unwrap_err();
        assert!(err.to_string().starts_with("invalid window"));
    }

    #[test]
    fn oov_tokens_occupy_positions() {
        // "c" is filtered out but still separates the two a's.
        let t = toks("a c b b a a");
        let v = build_vocabulary(&t, 2).unwrap();
        let cfg = WindowConfig {
            width: 1,
            ..Default::default()
        };
        let s = extract_cooccurrences(&t, &v, &cfg).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        // adjacent in-vocab pairs: (b,b), (b,a), (a,a)
        assert_eq!(s.get(a, b), 1.0);
        assert_eq!(s.get(b, a), 1.0);
        assert_eq!(s.get(b, b), 2.0);
        assert_eq!(s.get(a, a), 2.0);
        assert_eq!(s.total(), 6.0);
    }

    #[test]
    fn keep_probability_caps_at_one() {
        assert_eq!(keep_probability(1e-3, 1e-4), 1.0);
        let p = keep_probability(1e-4, 0.01);
        assert!((p - (0.1 + 0.01)).abs() < 1e-12);
    }

    #[test]
    fn merge_adds_counts() {
        let a = CoocStats::from_triples(3, vec![(0, 1, 1.0), (2, 2, 0.5)]).unwrap();
        let b = CoocStats::from_triples(3, vec![(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let m = a.merge(&b).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 1.0);
        assert_eq!(m.get(2, 2), 0.5);
        assert_eq!(m.total(), 4.5);
        assert!(m.marginals_consistent(1e-12));
        assert_eq!(m, b.merge(&a).unwrap());
    }

    #[test]
    fn roundtrip_small_stats() {
        let t = toks("a b a b a");
        let v = build_vocabulary(&t, 1).unwrap();
        let s = extract_cooccurrences(&t, &v, &WindowConfig::default()).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(CoocStats::read_from(&buf[..]).unwrap(), s);
    }

    #[test]
    fn empty_stats_file_is_header_only() {
        let s = CoocStats::empty(7);
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8);
        assert_eq!(&buf[..4], b"LRE1");
        let back = CoocStats::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.size(), 7);
    }

    fn record(i: u32, j: u32, v: f64) -> Vec<u8> {
        let mut r = i.to_le_bytes().to_vec();
        r.extend(j.to_le_bytes());
        r.extend(v.to_le_bytes());
        r
    }

    #[test]
    fn negative_count_names_the_record() {
        let mut buf = b"LRE1".to_vec();
        buf.extend(2u32.to_le_bytes());
        buf.extend(record(0, 1, 1.0));
        buf.extend(record(1, 0, -2.0));
        let err = CoocStats::read_from(&buf[..]).unwrap_err();
        assert_eq!(err.to_string(), "negative count at record 2");
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(CoocStats::read_from(&b"LRE"[..]).is_err());
        assert!(CoocStats::read_from(&b"XXXX\x01\x00\x00\x00"[..]).is_err());

        let mut buf = b"LRE1".to_vec();
        buf.extend(2u32.to_le_bytes());
        buf.extend(record(0, 1, 1.0));
        buf.extend(&record(1, 0, 1.0)[..10]);
        let err = CoocStats::read_from(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("truncated record 2"), "{}", err);

        let mut buf = b"LRE1".to_vec();
        buf.extend(2u32.to_le_bytes());
        buf.extend(record(0, 5, 1.0));
        let err = CoocStats::read_from(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{}", err);
    }

    #[test]
    fn sharded_matches_single_for_flat_weights() {
        let t = toks("a b c a b d a c b a d d c a b");
        let v = build_vocabulary(&t, 1).unwrap();
        let cfg = WindowConfig {
            width: 3,
            ..Default::default()
        };
        let single = extract_cooccurrences(&t, &v, &cfg).unwrap();
        for shards in 2..6 {
            let sharded = extract_cooccurrences_sharded(&t, &v, &cfg, shards).unwrap();
            assert_eq!(single, sharded);
        }
    }
}
