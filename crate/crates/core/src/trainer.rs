//! Gradient descent on the global loss `Σ_ij f_ij(ψ_ij, φ_ij)`.
//!
//! Every pair update follows the chain rule through the kernel: with
//! `g = ∂f/∂ψ` evaluated before the step,
//!
//! ```text
//! |j⟩ ← |j⟩ − η g ∂ψ/∂|j⟩      ⟨i| ← ⟨i| − η g ∂ψ/∂⟨i|
//! ```
//!
//! which for the plain dot kernel is `|j⟩ −= η g ⟨i|ᵀ` and `⟨i| −= η g |j⟩ᵀ`.
//!
//! Pairs are swept in blocks of context rows. Within an epoch the block
//! order and the pair order inside each block are shuffled from the seed, so
//! single threaded training is a pure function of stats and config. With
//! more threads, blocks run concurrently and write shared term parameters
//! without synchronization.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::CoocStats;
use crate::error::{Error, Result};
use crate::eval::{fixed_point_report, FixedPointReport, DEFAULT_COUNT_FLOOR};
use crate::model::{init_model, EmbeddingModel, KernelSpec};
use crate::objective::{char_grad, constant_grad, loss, CharGrad, Family, Objective, ObjectiveSpec};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPolicy {
    /// Only pairs with `N_ij > 0`.
    NonzeroOnly,
    /// Every `(i, j)` with positive marginals.
    AllPairs,
}

impl PairPolicy {
    pub fn name(self) -> &'static str {
        match self {
            PairPolicy::NonzeroOnly => "nonzero-only",
            PairPolicy::AllPairs => "all-pairs",
        }
    }

    /// The natural policy of a family.
    pub fn default_for(family: Family) -> Self {
        if family.requires_all_pairs() {
            PairPolicy::AllPairs
        } else {
            PairPolicy::NonzeroOnly
        }
    }
}

impl fmt::Display for PairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonzero-only" | "nonzero_only" => Ok(PairPolicy::NonzeroOnly),
            "all-pairs" | "all_pairs" => Ok(PairPolicy::AllPairs),
            other => Err(Error::InvalidConfig(format!("unknown pair policy '{}'", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub eta: f64,
    /// Learning rate reached at the last epoch (linear decay).
    pub eta_final: f64,
    pub epochs: usize,
    pub dim: usize,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    pub kernel: KernelSpec,
    pub pair_policy: PairPolicy,
    pub threads: usize,
    /// Stop once the relative change of the epoch loss falls below this.
    pub convergence_tol: f64,
    /// Largest vocabulary accepted.
    pub max_vocab: usize,
    /// Context rows per sweep block.
    pub block_size: usize,
    /// Learning rate halvings allowed before giving up.
    pub max_restarts: usize,
    /// Also restart with a halved rate when the epoch loss increases.
    pub strict_descent: bool,
    /// Limit each pair's step so it cannot overshoot along ψ (see
    /// [`safe_step`]). Fixed points are unaffected.
    pub step_clipping: bool,
    /// Count floor of the final fixed point report.
    pub report_count_floor: f64,
}

impl TrainConfig {
    /// Defaults for a family with its conventional kernel and pair policy.
    pub fn for_family(family: Family) -> Self {
        TrainConfig {
            eta: 0.05,
            eta_final: 0.0001,
            epochs: 50,
            dim: 32,
            seed: 0,
            objective: ObjectiveSpec::new(family),
            kernel: default_kernel(family),
            pair_policy: PairPolicy::default_for(family),
            threads: 1,
            convergence_tol: 1e-6,
            max_vocab: 10_000,
            block_size: 64,
            max_restarts: 5,
            strict_descent: false,
            step_clipping: true,
            report_count_floor: DEFAULT_COUNT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.kernel.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.eta > 0.0) || !(self.eta_final > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.dim < 1 {
            return bad("dimension must be at least 1");
        }
        if self.threads < 1 {
            return bad("threads must be at least 1");
        }
        if self.block_size < 1 {
            return bad("block size must be at least 1");
        }
        let family = self.objective.family;
        if family.requires_all_pairs() && self.pair_policy != PairPolicy::AllPairs {
            return Err(Error::RequiresAllPairs(match family {
                Family::Sgns => "SGNS",
                Family::FastTextSgns => "FastText",
                _ => "Swivel",
            }));
        }
        Ok(())
    }

    /// Learning rate of `epoch` before any halving.
    pub fn eta_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.eta;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.eta + (self.eta_final - self.eta) * t
    }
}

/// The kernel each family is defined with.
pub fn default_kernel(family: Family) -> KernelSpec {
    match family {
        Family::Glove => KernelSpec::BiasedDot,
        Family::Lds => KernelSpec::QuadraticLds,
        Family::FastTextSgns => KernelSpec::FASTTEXT,
        _ => KernelSpec::Dot,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Total loss after each completed epoch.
    pub losses: Vec<f64>,
    /// Euclidean norm of the full parameter gradient after each epoch.
    pub grad_norms: Vec<f64>,
    /// Learning rate used in each completed epoch.
    pub etas: Vec<f64>,
    /// Loss of the initial model.
    pub initial_loss: f64,
    pub restarts: usize,
    pub converged: bool,
    pub wall_time: Duration,
    /// Fixed point agreement of the final model, when any pair qualifies.
    pub fixed_point: Option<FixedPointReport>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// `g · ∂ψ/∂θ` for one pair. `vector` is the gradient with respect to the
/// composed term vector; with a subword kernel every n-gram of the term
/// receives it in full.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient<F> {
    pub covector: Vec<F>,
    pub vector: Vec<F>,
    pub context_bias: F,
    pub term_bias: F,
    /// Gradient with respect to the LDS constant.
    pub constant: F,
}

impl<F: Scalar> PairGradient<F> {
    pub fn zeros(dim: usize) -> Self {
        PairGradient {
            covector: vec![F::zero(); dim],
            vector: vec![F::zero(); dim],
            context_bias: F::zero(),
            term_bias: F::zero(),
            constant: F::zero(),
        }
    }

    /// Squared norm of `∂ψ/∂θ` over all touched parameters, given `g`.
    fn psi_grad_sq(&self, g: F, subword_units: usize) -> F {
        if g == F::zero() {
            return F::zero();
        }
        let inv = F::one() / (g * g);
        let units = F::of(subword_units.max(1) as f64);
        (dot(&self.covector, &self.covector) + units * dot(&self.vector, &self.vector)
            + self.context_bias * self.context_bias
            + self.term_bias * self.term_bias)
            * inv
    }
}

/// Chain rule through the kernel into `out`, for a term vector `term`
/// already composed.
fn backward_into<F: Scalar>(
    model: &EmbeddingModel<F>,
    g: F,
    i: usize,
    term: &[F],
    out: &mut PairGradient<F>,
) {
    let w = model.covector(i);
    match model.kernel() {
        KernelSpec::Dot | KernelSpec::SubwordDot { .. } => {
            for k in 0..w.len() {
                out.covector[k] = g * term[k];
                out.vector[k] = g * w[k];
            }
            out.context_bias = F::zero();
            out.term_bias = F::zero();
        }
        KernelSpec::BiasedDot => {
            for k in 0..w.len() {
                out.covector[k] = g * term[k];
                out.vector[k] = g * w[k];
            }
            out.context_bias = g;
            out.term_bias = g;
        }
        KernelSpec::QuadraticLds => {
            let two_g = g + g;
            for k in 0..w.len() {
                let s = two_g * (w[k] + term[k]);
                out.covector[k] = s;
                out.vector[k] = s;
            }
            out.context_bias = F::zero();
            out.term_bias = F::zero();
        }
    }
    out.constant = F::zero();
}

/// `g · ∂ψ/∂θ` for pair `(i, j)`. The constant component is left at zero
/// since ψ does not depend on `C`.
pub fn kernel_backward<F: Scalar>(
    model: &EmbeddingModel<F>,
    g: F,
    i: usize,
    j: usize,
) -> Result<PairGradient<F>> {
    model.check_ids(i, j)?;
    let term = model.term_vector(j);
    let mut out = PairGradient::zeros(model.dim());
    backward_into(model, g, i, &term, &mut out);
    Ok(out)
}

/// Subtract `eta · grad` from the parameters of pair `(i, j)`.
pub fn apply_gradient<F: Scalar>(
    model: &mut EmbeddingModel<F>,
    grad: &PairGradient<F>,
    eta: F,
    i: usize,
    j: usize,
) {
    for (w, &d) in model.covector_mut(i).iter_mut().zip(&grad.covector) {
        *w -= eta * d;
    }
    match model.subwords_mut() {
        Some(table) => {
            let units: Vec<u32> = table.word_units(j).to_vec();
            for u in units {
                for (v, &d) in table.unit_vector_mut(u as usize).iter_mut().zip(&grad.vector) {
                    *v -= eta * d;
                }
            }
        }
        None => {
            let v = model.stored_vector_mut(j).expect("dense vectors");
            for (v, &d) in v.iter_mut().zip(&grad.vector) {
                *v -= eta * d;
            }
        }
    }
    if let Some(b) = model.context_bias_mut() {
        b[i] -= eta * grad.context_bias;
    }
    if let Some(b) = model.term_bias_mut() {
        b[j] -= eta * grad.term_bias;
    }
    if let Some(c) = model.lds_constant.as_mut() {
        *c -= eta * grad.constant;
    }
}

/// One gradient step on pair `(i, j)`: `g` is evaluated at the current
/// parameters and both sides of the pair are updated from their pre-step
/// values. Returns the characteristic gradient that was applied.
pub fn apply_pair_update<F: Scalar>(
    model: &mut EmbeddingModel<F>,
    objective: &Objective<'_>,
    eta: F,
    i: usize,
    j: usize,
) -> Result<CharGrad<F>> {
    model.check_ids(i, j)?;
    let term = model.term_vector(j);
    let psi = model.psi_with(i, j, &term);
    let cg = objective.char_grad(psi, i, j, model.lds_offset())?;
    let mut grad = PairGradient::zeros(model.dim());
    backward_into(model, cg.value, i, &term, &mut grad);
    grad.constant = constant_grad(objective.spec(), &cg);
    apply_gradient(model, &grad, eta, i, j);
    Ok(cg)
}

/// Largest curvature of `f` along ψ per unit multiplier.
fn curvature(family: Family) -> f64 {
    match family {
        Family::Sgns | Family::FastTextSgns => 0.25,
        _ => 1.0,
    }
}

/// Per-pair learning rate `min(eta, 1 / (m κ ‖∂ψ/∂θ‖²))`, where `m` is the
/// multiplier and `κ` bounds the curvature of the difference. A first-order
/// step of this size moves ψ by at most one Newton step, so a heavily
/// weighted pair cannot overshoot its fixed point.
pub fn safe_step(eta: f64, multiplier: f64, curvature: f64, psi_grad_sq: f64) -> f64 {
    let denom = multiplier * curvature * psi_grad_sq;
    if denom > 0.0 {
        eta.min(1.0 / denom)
    } else {
        eta
    }
}

/// Total loss and full parameter gradient, laid out as
/// [`EmbeddingModel::params`].
pub fn assemble_gradient<F: Scalar>(
    model: &EmbeddingModel<F>,
    objective: &Objective<'_>,
    policy: PairPolicy,
) -> (f64, Vec<F>) {
    let dim = model.dim();
    let mut grad = vec![F::zero(); model.params().len()];
    let n_cov = model.n_contexts() * dim;
    let n_vec = model.vectors.len();
    let n_units = model.subwords().map_or(0, |t| t.len() * dim);
    let cb_off = n_cov + n_vec + n_units;
    let tb_off = cb_off + model.context_bias().map_or(0, |b| b.len());
    let c_off = tb_off + model.term_bias().map_or(0, |b| b.len());

    let mut total = 0.0;
    let mut term = vec![F::zero(); dim];
    let mut pg = PairGradient::zeros(dim);
    for_each_pair(objective.stats(), policy, |i, j, n_ij| {
        model.term_vector_into(j, &mut term);
        let psi = model.psi_with(i, j, &term);
        let pair = objective.pair_with_count(i, j, n_ij);
        let c = model.lds_offset();
        total += loss(objective.spec(), psi, &pair, c).to_f64_lossy();
        let cg = char_grad(objective.spec(), psi, &pair, c);
        if cg.value == F::zero() {
            return;
        }
        backward_into(model, cg.value, i, &term, &mut pg);
        for k in 0..dim {
            grad[i * dim + k] += pg.covector[k];
        }
        match model.subwords() {
            Some(table) => {
                for &u in table.word_units(j) {
                    let off = n_cov + n_vec + u as usize * dim;
                    for k in 0..dim {
                        grad[off + k] += pg.vector[k];
                    }
                }
            }
            None => {
                for k in 0..dim {
                    grad[n_cov + j * dim + k] += pg.vector[k];
                }
            }
        }
        if model.context_bias().is_some() {
            grad[cb_off + i] += pg.context_bias;
            grad[tb_off + j] += pg.term_bias;
        }
        if model.lds_constant().is_some() {
            grad[c_off] += constant_grad(objective.spec(), &cg);
        }
    });
    (total, grad)
}

/// Total loss over the pair set.
pub fn total_loss<F: Scalar>(
    model: &EmbeddingModel<F>,
    objective: &Objective<'_>,
    policy: PairPolicy,
) -> f64 {
    let mut total = 0.0;
    let mut term = vec![F::zero(); model.dim()];
    for_each_pair(objective.stats(), policy, |i, j, n_ij| {
        model.term_vector_into(j, &mut term);
        let psi = model.psi_with(i, j, &term);
        let pair = objective.pair_with_count(i, j, n_ij);
        total += loss(objective.spec(), psi, &pair, model.lds_offset()).to_f64_lossy();
    });
    total
}

/// Visit the pair set in row-major order. Pairs touching a context or term
/// with zero marginal are skipped.
pub fn for_each_pair<G: FnMut(usize, usize, f64)>(stats: &CoocStats, policy: PairPolicy, mut f: G) {
    let size = stats.size();
    match policy {
        PairPolicy::NonzeroOnly => {
            for (i, j, n) in stats.iter() {
                f(i, j, n);
            }
        }
        PairPolicy::AllPairs => {
            let live: Vec<usize> = (0..size).filter(|&j| stats.term_marginal(j) > 0.0).collect();
            let mut row = vec![0.0; size];
            for i in 0..size {
                if stats.context_marginal(i) <= 0.0 {
                    continue;
                }
                let (cols, vals) = stats.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    row[j as usize] = v;
                }
                for &j in &live {
                    f(i, j, row[j]);
                }
                for &j in cols {
                    row[j as usize] = 0.0;
                }
            }
        }
    }
}

/// Pairs of one block of context rows, in shuffled order.
fn block_pairs(
    stats: &CoocStats,
    policy: PairPolicy,
    rows: std::ops::Range<usize>,
    live_terms: &[u32],
    rng: &mut ChaCha8Rng,
    out: &mut Vec<(u32, u32, f64)>,
    row_buf: &mut [f64],
) {
    out.clear();
    for i in rows {
        if stats.context_marginal(i) <= 0.0 {
            continue;
        }
        let (cols, vals) = stats.row(i);
        match policy {
            PairPolicy::NonzeroOnly => {
                out.extend(cols.iter().zip(vals).map(|(&j, &v)| (i as u32, j, v)));
            }
            PairPolicy::AllPairs => {
                for (&j, &v) in cols.iter().zip(vals) {
                    row_buf[j as usize] = v;
                }
                out.extend(live_terms.iter().map(|&j| (i as u32, j, row_buf[j as usize])));
                for &j in cols {
                    row_buf[j as usize] = 0.0;
                }
            }
        }
    }
    out.shuffle(rng);
}

fn block_seed(seed: u64, epoch: usize, restart: usize, block: usize) -> u64 {
    // splitmix64 over the tuple
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (block as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Sweep<'o, 's> {
    objective: &'o Objective<'s>,
    policy: PairPolicy,
    eta: f64,
    clip: bool,
    curvature: f64,
}

impl Sweep<'_, '_> {
    /// Update the model on every pair of `pairs` in order.
    fn run<F: Scalar>(&self, model: &mut EmbeddingModel<F>, pairs: &[(u32, u32, f64)], scratch: &mut Scratch<F>) {
        let spec = self.objective.spec();
        for &(i, j, n_ij) in pairs {
            let (i, j) = (i as usize, j as usize);
            model.term_vector_into(j, &mut scratch.term);
            let psi = model.psi_with(i, j, &scratch.term);
            let pair = self.objective.pair_with_count(i, j, n_ij);
            let cg = char_grad(spec, psi, &pair, model.lds_offset());
            if cg.value == F::zero() {
                continue;
            }
            backward_into(model, cg.value, i, &scratch.term, &mut scratch.grad);
            scratch.grad.constant = constant_grad(spec, &cg);
            let eta = if self.clip {
                let units = model.subwords().map_or(1, |t| t.word_units(j).len());
                let mut sq = scratch.grad.psi_grad_sq(cg.value, units).to_f64_lossy();
                if model.lds_constant().is_some() && scratch.grad.constant != F::zero() {
                    sq += 1.0;
                }
                safe_step(self.eta, cg.multiplier.to_f64_lossy(), self.curvature, sq)
            } else {
                self.eta
            };
            apply_gradient(model, &scratch.grad, F::of(eta), i, j);
        }
    }
}

struct Scratch<F> {
    term: Vec<F>,
    grad: PairGradient<F>,
}

impl<F: Scalar> Scratch<F> {
    fn new(dim: usize) -> Self {
        Scratch {
            term: vec![F::zero(); dim],
            grad: PairGradient::zeros(dim),
        }
    }
}

/// Raw handle for lock-free concurrent sweeps.
struct SharedModel<F>(*mut EmbeddingModel<F>);

// Concurrent sweeps write term parameters without synchronization; see the
// module documentation for the contract.
unsafe impl<F> Send for SharedModel<F> {}
unsafe impl<F> Sync for SharedModel<F> {}

fn run_epoch<F: Scalar>(
    model: &mut EmbeddingModel<F>,
    objective: &Objective<'_>,
    config: &TrainConfig,
    eta: f64,
    epoch: usize,
    restart: usize,
) {
    let stats = objective.stats();
    let size = stats.size();
    let live_terms: Vec<u32> = (0..size as u32)
        .filter(|&j| stats.term_marginal(j as usize) > 0.0)
        .collect();
    let n_blocks = size.div_ceil(config.block_size);
    let mut order: Vec<usize> = (0..n_blocks).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(block_seed(config.seed, epoch, restart, usize::MAX)));

    let sweep = Sweep {
        objective,
        policy: config.pair_policy,
        eta,
        clip: config.step_clipping,
        curvature: curvature(config.objective.family),
    };
    let rows_of = |b: usize| b * config.block_size..((b + 1) * config.block_size).min(size);

    if config.threads <= 1 {
        let mut pairs = Vec::new();
        let mut row_buf = vec![0.0; size];
        let mut scratch = Scratch::new(model.dim());
        for &b in &order {
            let mut rng = ChaCha8Rng::seed_from_u64(block_seed(config.seed, epoch, restart, b));
            block_pairs(stats, sweep.policy, rows_of(b), &live_terms, &mut rng, &mut pairs, &mut row_buf);
            sweep.run(model, &pairs, &mut scratch);
        }
        return;
    }

    let next = std::sync::atomic::AtomicUsize::new(0);
    let shared = SharedModel(model as *mut EmbeddingModel<F>);
    std::thread::scope(|s| {
        for _ in 0..config.threads {
            let (next, order, shared, sweep, live_terms) = (&next, &order, &shared, &sweep, &live_terms);
            s.spawn(move || {
                let mut pairs = Vec::new();
                let mut row_buf = vec![0.0; size];
                // SAFETY: the model outlives the scope and its buffers are
                // never resized during the sweep. Context rows are owned by a
                // single block; term parameters may race, which the training
                // contract permits for threads > 1.
                let model = unsafe { &mut *shared.0 };
                let mut scratch = Scratch::new(model.dim());
                loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some(&b) = order.get(k) else { break };
                    let mut rng = ChaCha8Rng::seed_from_u64(block_seed(config.seed, epoch, restart, b));
                    block_pairs(stats, sweep.policy, rows_of(b), live_terms, &mut rng, &mut pairs, &mut row_buf);
                    sweep.run(model, &pairs, &mut scratch);
                }
            });
        }
    });
}

fn norm<F: Scalar>(v: &[F]) -> f64 {
    v.iter().map(|x| x.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
}

/// Train a freshly initialized model. `words` is needed for subword kernels.
pub fn train<F: Scalar>(
    stats: &CoocStats,
    config: &TrainConfig,
    words: Option<&[String]>,
) -> Result<(EmbeddingModel<F>, TrainReport)> {
    config.validate()?;
    let model = init_model(stats.size(), config.dim, config.kernel, config.seed, words)?;
    train_from(model, stats, config)
}

/// Continue training `model`.
pub fn train_from<F: Scalar>(
    mut model: EmbeddingModel<F>,
    stats: &CoocStats,
    config: &TrainConfig,
) -> Result<(EmbeddingModel<F>, TrainReport)> {
    config.validate()?;
    if stats.is_empty() {
        return Err(Error::InvalidConfig("no cooccurrences to train on".into()));
    }
    if stats.size() > config.max_vocab {
        return Err(Error::InvalidConfig(format!(
            "vocabulary of {} exceeds max_vocab {}",
            stats.size(),
            config.max_vocab
        )));
    }
    if model.n_contexts() != stats.size() || model.n_terms() != stats.size() {
        return Err(Error::Shape(format!(
            "model is {}x{}, stats have {} words",
            model.n_contexts(),
            model.n_terms(),
            stats.size()
        )));
    }
    let objective = Objective::new(config.objective, stats)?;
    let start = Instant::now();

    let initial_loss = total_loss(&model, &objective, config.pair_policy);
    let mut report = TrainReport {
        losses: Vec::new(),
        grad_norms: Vec::new(),
        etas: Vec::new(),
        initial_loss,
        restarts: 0,
        converged: false,
        wall_time: Duration::ZERO,
        fixed_point: None,
    };
    let mut scale = 1.0;
    let mut prev_loss = initial_loss;
    let mut last_finite = if initial_loss.is_finite() { initial_loss } else { f64::NAN };

    let mut epoch = 0;
    while epoch < config.epochs {
        let snapshot = model.clone();
        let eta = config.eta_at(epoch) * scale;
        run_epoch(&mut model, &objective, config, eta, epoch, report.restarts);
        let (loss, grad) = assemble_gradient(&model, &objective, config.pair_policy);

        let diverged = !loss.is_finite() || !model.is_finite();
        let increased = config.strict_descent && loss > prev_loss;
        if diverged || increased {
            if report.restarts >= config.max_restarts {
                if diverged {
                    return Err(Error::Diverged {
                        epoch,
                        last_finite_loss: last_finite,
                    });
                }
                // out of halvings; accept the increase
            } else {
                report.restarts += 1;
                scale *= 0.5;
                model = snapshot;
                continue;
            }
        }

        last_finite = loss;
        report.losses.push(loss);
        report.grad_norms.push(norm(&grad));
        report.etas.push(eta);
        let rel = (prev_loss - loss).abs() / prev_loss.abs().max(f64::MIN_POSITIVE);
        prev_loss = loss;
        epoch += 1;
        if rel < config.convergence_tol {
            report.converged = true;
            break;
        }
    }

    report.wall_time = start.elapsed();
    report.fixed_point =
        fixed_point_report(&model, stats, &config.objective, config.report_count_floor).ok();
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn single(w: f64, v: f64) -> EmbeddingModel<f64> {
        let mut m = EmbeddingModel::zeros(1, 1, 1, KernelSpec::Dot, None).unwrap();
        m.covector_mut(0)[0] = w;
        m.stored_vector_mut(0).unwrap()[0] = v;
        m
    }

    #[test]
    fn hand_update() {
        let mut m = single(2.0, 3.0);
        let g = kernel_backward(&m, 1.0, 0, 0).unwrap();
        apply_gradient(&mut m, &g, 0.1, 0, 0);
        assert!((m.stored_vector(0).unwrap()[0] - 2.8).abs() < 1e-15);
        assert!((m.covector(0)[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_model_unchanged() {
        let m0 = init_model::<f64>(3, 4, KernelSpec::BiasedDot, 1, None).unwrap();
        let mut m = m0.clone();
        for (i, j) in [(0, 1), (2, 2)] {
            let g = kernel_backward(&m, 0.0, i, j).unwrap();
            apply_gradient(&mut m, &g, 0.5, i, j);
        }
        assert_eq!(m, m0);
    }

    #[test]
    fn biased_update_moves_biases() {
        let mut m = EmbeddingModel::<f64>::zeros(2, 2, 2, KernelSpec::BiasedDot, None).unwrap();
        let g = kernel_backward(&m, 1.0, 0, 1).unwrap();
        apply_gradient(&mut m, &g, 0.1, 0, 1);
        assert!((m.context_bias().unwrap()[0] + 0.1).abs() < 1e-15);
        assert!((m.term_bias().unwrap()[1] + 0.1).abs() < 1e-15);
        assert_eq!(m.context_bias().unwrap()[1], 0.0);
    }

    #[test]
    fn quadratic_opposite_vectors_have_zero_delta() {
        let mut m = EmbeddingModel::<f64>::zeros(1, 1, 3, KernelSpec::QuadraticLds, None).unwrap();
        m.covector_mut(0).copy_from_slice(&[1.0, -2.0, 0.5]);
        m.stored_vector_mut(0).unwrap().copy_from_slice(&[-1.0, 2.0, -0.5]);
        let g = kernel_backward(&m, 3.0, 0, 0).unwrap();
        assert!(g.covector.iter().all(|&x| x == 0.0));
        assert!(g.vector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn subword_units_receive_full_delta() {
        let words = vec!["cat".to_string(), "a".to_string()];
        let mut m = init_model::<f64>(2, 2, KernelSpec::FASTTEXT, 5, Some(&words)).unwrap();
        let before = m.subwords().unwrap().clone();
        let w = m.covector(1).to_vec();
        let g = kernel_backward(&m, 0.5, 1, 0).unwrap();
        apply_gradient(&mut m, &g, 0.2, 1, 0);
        let table = m.subwords().unwrap();
        let units = table.word_units(0);
        assert_eq!(units.len(), 6);
        for &u in units {
            for k in 0..2 {
                let delta = table.unit_vector(u as usize)[k] - before.unit_vector(u as usize)[k];
                assert!((delta + 0.2 * 0.5 * w[k]).abs() < 1e-15);
            }
        }
        // the unrelated word "<a>" is untouched
        let a = table.word_units(1)[0] as usize;
        assert_eq!(table.unit_vector(a), before.unit_vector(a));
    }

    #[test]
    fn safe_step_caps_heavy_pairs() {
        assert_eq!(safe_step(0.05, 2.0, 1.0, 1.0), 0.05);
        assert_eq!(safe_step(0.05, 1000.0, 0.25, 2.0), 1.0 / 500.0);
        assert_eq!(safe_step(0.05, 0.0, 1.0, 1.0), 0.05);
    }

    #[test]
    fn eta_decays_linearly() {
        let mut c = TrainConfig::for_family(Family::Glove);
        c.epochs = 3;
        assert_eq!(c.eta_at(0), 0.05);
        assert!((c.eta_at(1) - 0.02505).abs() < 1e-12);
        assert!((c.eta_at(2) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn sgns_needs_all_pairs() {
        let mut c = TrainConfig::for_family(Family::Sgns);
        c.pair_policy = PairPolicy::NonzeroOnly;
        assert_eq!(c.validate().unwrap_err().to_string(), "SGNS requires all_pairs");
        c.objective.family = Family::Swivel;
        assert!(c.validate().is_err());
        c.objective.family = Family::Glove;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn all_pairs_skips_dead_words() {
        let s = CoocStats::from_triples(3, vec![(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let mut seen = Vec::new();
        for_each_pair(&s, PairPolicy::AllPairs, |i, j, n| seen.push((i, j, n)));
        assert_eq!(seen, vec![(0, 0, 0.0), (0, 1, 2.0), (1, 0, 1.0), (1, 1, 0.0)]);
    }
}
