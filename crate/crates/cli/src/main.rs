//! `lre`: count cooccurrences, train or factorize embedders, evaluate and
//! export them.
//!
//! Settings resolve in the order flags > `LRE_*` environment > `--config`
//! file > defaults. The resolved settings are written as `config.txt` next
//! to every output and can be fed back through `--config`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure.

mod settings;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use lre_core::corpus::{build_vocabulary, extract_cooccurrences_sharded, load_cooc, save_cooc, tokenize};
use lre_core::eval::{
    association_pairs, association_report, fixed_point_pairs, fixed_point_report, glove_bias_diagnostic,
    pmi_histogram, write_pairs_tsv,
};
use lre_core::model::{EmbeddingModel, KernelSpec};
use lre_core::svd::{build_assoc_matrix, svd_to_model, truncated_svd};
use lre_core::{trainer, CoocStats, Error, Scalar, TrainReport, Vocabulary};

use settings::{BuildSettings, Settings, SvdSettings, TrainSettings};

#[derive(Parser)]
#[command(name = "lre", version, about = "Low rank word embedders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count windowed cooccurrences of a text corpus.
    BuildCooc(BuildArgs),
    /// Train an embedder, or factorize with `--family svd`.
    Train(TrainArgs),
    /// Report how closely a model realizes its fixed points.
    Eval(EvalArgs),
    /// Write vectors or covectors in word2vec text format.
    Export(ExportArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Whitespace tokenized text, optionally gzip compressed.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for vocab.tsv, cooc.bin and config.txt.
    #[arg(long)]
    out: PathBuf,
    /// Flat key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "LRE_WINDOW")]
    window: Option<String>,
    /// flat or harmonic.
    #[arg(long, env = "LRE_WEIGHTING")]
    weighting: Option<String>,
    #[arg(long, env = "LRE_MIN_COUNT")]
    min_count: Option<String>,
    #[arg(long, env = "LRE_MAX_VOCAB")]
    max_vocab: Option<String>,
    /// Undersampling threshold t, or "none".
    #[arg(long, env = "LRE_UNDERSAMPLE")]
    undersample: Option<String>,
    #[arg(long, env = "LRE_SEED")]
    seed: Option<String>,
    #[arg(long, env = "LRE_THREADS")]
    threads: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by build-cooc.
    #[arg(long)]
    stats: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// svd, svd-mse, sgns, fasttext, glove, lds or swivel.
    #[arg(long, env = "LRE_FAMILY")]
    family: Option<String>,
    #[arg(long, env = "LRE_DIM")]
    dim: Option<String>,
    #[arg(long, env = "LRE_EPOCHS")]
    epochs: Option<String>,
    #[arg(long, env = "LRE_SEED")]
    seed: Option<String>,
    #[arg(long, env = "LRE_ETA")]
    eta: Option<String>,
    #[arg(long, env = "LRE_ETA_FINAL")]
    eta_final: Option<String>,
    /// nonzero-only or all-pairs.
    #[arg(long, env = "LRE_PAIR_POLICY")]
    pair_policy: Option<String>,
    #[arg(long, env = "LRE_THREADS")]
    threads: Option<String>,
    #[arg(long, env = "LRE_TOL")]
    tol: Option<String>,
    #[arg(long, env = "LRE_KERNEL")]
    kernel: Option<String>,
    #[arg(long, env = "LRE_K")]
    k: Option<String>,
    #[arg(long, env = "LRE_X_MAX")]
    x_max: Option<String>,
    #[arg(long, env = "LRE_BETA")]
    beta: Option<String>,
    #[arg(long, env = "LRE_SMOOTHING")]
    smoothing: Option<String>,
    #[arg(long, env = "LRE_BLOCK_SIZE")]
    block_size: Option<String>,
    #[arg(long, env = "LRE_MAX_RESTARTS")]
    max_restarts: Option<String>,
    #[arg(long, env = "LRE_STRICT_DESCENT")]
    strict_descent: Option<String>,
    #[arg(long, env = "LRE_STEP_CLIPPING")]
    step_clipping: Option<String>,
    #[arg(long, env = "LRE_MAX_VOCAB")]
    max_vocab: Option<String>,
    #[arg(long, env = "LRE_COUNT_FLOOR")]
    count_floor: Option<String>,
    /// f64 or f32.
    #[arg(long, env = "LRE_PRECISION")]
    precision: Option<String>,
    /// SVD rank, or "full".
    #[arg(long, env = "LRE_RANK")]
    rank: Option<String>,
    /// SVD target: ppmi, clipped:ALPHA or smoothed.
    #[arg(long, env = "LRE_ASSOCIATION")]
    association: Option<String>,
    /// Where singular values go: vectors or sqrt.
    #[arg(long, env = "LRE_SIGMA")]
    sigma: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, default_value_t = lre_core::eval::DEFAULT_COUNT_FLOOR)]
    count_floor: f64,
    /// Write pair, histogram and (for GloVe) bias TSVs into this directory.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// vectors or covectors.
    #[arg(long, default_value = "vectors")]
    side: String,
    /// Extra out-of-vocabulary words to compose from n-grams (subword models).
    #[arg(long, value_delimiter = ',')]
    oov: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildCooc(a) => build_cooc(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Diverged { .. })));
    if numeric {
        3
    } else {
        2
    }
}

fn read_corpus(path: &Path) -> anyhow::Result<String> {
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => anyhow!("no such corpus: {}", path.display()),
        _ => anyhow!("cannot read corpus {}: {}", path.display(), e),
    })?;
    let mut text = String::new();
    if path.extension().is_some_and(|x| x == "gz") {
        flate2::read::GzDecoder::new(file).read_to_string(&mut text)?;
    } else {
        BufReader::new(file).read_to_string(&mut text)?;
    }
    Ok(text)
}

fn write_config(dir: &Path, settings: &Settings) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("config.txt"))?);
    settings.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn build_cooc(a: BuildArgs) -> anyhow::Result<()> {
    let settings = Settings::resolve(
        a.config.as_deref(),
        BuildSettings::KEYS,
        vec![
            ("window", a.window),
            ("weighting", a.weighting),
            ("min-count", a.min_count),
            ("max-vocab", a.max_vocab),
            ("undersample", a.undersample),
            ("seed", a.seed),
            ("threads", a.threads),
        ],
    )?;
    let cfg = BuildSettings::from_settings(&settings)?;
    cfg.window.validate()?;

    let text = read_corpus(&a.corpus)?;
    let tokens: Vec<String> = tokenize(&text).collect();
    let mut vocab = build_vocabulary(tokens.iter(), cfg.window.min_count)?;
    if let Some(max) = cfg.max_vocab {
        vocab = vocab.truncate(max);
    }
    let stats = extract_cooccurrences_sharded(&tokens, &vocab, &cfg.window, cfg.threads)?;

    fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(File::create(a.out.join("vocab.tsv"))?);
    vocab.write_tsv(&mut w)?;
    w.flush()?;
    save_cooc(&stats, a.out.join("cooc.bin"))?;
    write_config(&a.out, &cfg.to_settings())?;
    println!("vocab_size={}", vocab.len());
    println!("total={}", stats.total());
    println!("nonzero_pairs={}", stats.nnz());
    Ok(())
}

fn load_stats(dir: &Path) -> anyhow::Result<(CoocStats, Vocabulary)> {
    let stats = load_cooc(dir.join("cooc.bin"))
        .with_context(|| format!("reading stats from {}", dir.display()))?;
    let vocab = Vocabulary::read_tsv(BufReader::new(File::open(dir.join("vocab.tsv"))?))?;
    if vocab.len() != stats.size() {
        bail!(
            "vocab.tsv has {} words but cooc.bin has {}",
            vocab.len(),
            stats.size()
        );
    }
    Ok((stats, vocab))
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let settings = Settings::resolve(
        a.config.as_deref(),
        TrainSettings::KEYS,
        vec![
            ("family", a.family),
            ("dim", a.dim),
            ("epochs", a.epochs),
            ("seed", a.seed),
            ("eta", a.eta),
            ("eta-final", a.eta_final),
            ("pair-policy", a.pair_policy),
            ("threads", a.threads),
            ("tol", a.tol),
            ("kernel", a.kernel),
            ("k", a.k),
            ("x-max", a.x_max),
            ("beta", a.beta),
            ("smoothing", a.smoothing),
            ("block-size", a.block_size),
            ("max-restarts", a.max_restarts),
            ("strict-descent", a.strict_descent),
            ("step-clipping", a.step_clipping),
            ("max-vocab", a.max_vocab),
            ("count-floor", a.count_floor),
            ("precision", a.precision),
            ("rank", a.rank),
            ("association", a.association),
            ("sigma", a.sigma),
        ],
    )?;
    let (stats, vocab) = load_stats(&a.stats)?;
    let tokens = vocab.tokens().to_vec();

    if settings.get("family") == Some("svd") {
        let cfg = SvdSettings::from_settings(&settings)?;
        let rank = cfg.rank.unwrap_or(stats.size());
        let matrix = build_assoc_matrix::<f64>(&stats, &cfg.association)?;
        let svd = truncated_svd(&matrix, rank, cfg.seed)?;
        let model = svd_to_model(&svd, cfg.sigma)?;
        let echo = cfg.to_settings();
        model.save_dir(&a.out, &tokens, &echo.meta_entries())?;
        write_config(&a.out, &echo)?;
        let report = association_report(&model, &stats, &cfg.association, cfg.count_floor);
        let mut out = BufWriter::new(File::create(a.out.join("report.txt"))?);
        writeln!(out, "rank={}", rank)?;
        for (k, s) in svd.s.iter().enumerate() {
            writeln!(out, "sigma_{}={}", k + 1, s)?;
        }
        if let Ok(r) = &report {
            r.write_summary(&mut out)?;
        }
        out.flush()?;
        println!("rank={}", rank);
        if let Ok(r) = report {
            r.write_summary(io::stdout())?;
        }
        return Ok(());
    }

    let cfg = TrainSettings::from_settings(&settings)?;
    let echo = cfg.to_settings();
    if cfg.f32 {
        run_training::<f32>(&stats, &tokens, &cfg.train, &echo, &a.out)
    } else {
        run_training::<f64>(&stats, &tokens, &cfg.train, &echo, &a.out)
    }
}

fn run_training<F: Scalar>(
    stats: &CoocStats,
    tokens: &[String],
    cfg: &lre_core::TrainConfig,
    echo: &Settings,
    out: &Path,
) -> anyhow::Result<()> {
    let words = matches!(cfg.kernel, KernelSpec::SubwordDot { .. }).then_some(tokens);
    let (model, report) = trainer::train::<F>(stats, cfg, words)?;
    model.save_dir(out, tokens, &echo.meta_entries())?;
    write_config(out, echo)?;
    write_report(out, &report)?;

    let mut ck = BufWriter::new(File::create(out.join("checkpoint.txt"))?);
    writeln!(ck, "epoch={}", report.losses.len())?;
    writeln!(ck, "loss={}", report.final_loss())?;
    writeln!(ck, "config_hash={:016x}", echo.hash())?;
    ck.flush()?;

    eprintln!("wall_time_s={:.3}", report.wall_time.as_secs_f64());
    print_report_summary(io::stdout(), &report)?;
    Ok(())
}

fn print_report_summary<W: Write>(mut w: W, report: &TrainReport) -> anyhow::Result<()> {
    writeln!(w, "epochs_run={}", report.losses.len())?;
    writeln!(w, "initial_loss={}", report.initial_loss)?;
    writeln!(w, "final_loss={}", report.final_loss())?;
    writeln!(w, "restarts={}", report.restarts)?;
    writeln!(w, "converged={}", report.converged)?;
    if let Some(fp) = &report.fixed_point {
        fp.write_summary(&mut w)?;
    }
    Ok(())
}

fn write_report(dir: &Path, report: &TrainReport) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("report.txt"))?);
    writeln!(w, "epoch\tloss\tgrad_norm\teta")?;
    for e in 0..report.losses.len() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e, report.losses[e], report.grad_norms[e], report.etas[e]
        )?;
    }
    writeln!(w)?;
    print_report_summary(&mut w, report)?;
    w.flush()?;
    Ok(())
}

/// Check that model and stats index the same words.
fn check_vocab(model_tokens: &[String], vocab: &Vocabulary) -> anyhow::Result<()> {
    for (k, t) in model_tokens.iter().enumerate() {
        match vocab.id(t) {
            None => return Err(Error::VocabularyMismatch(t.clone()).into()),
            Some(id) if id != k => bail!("vocabulary order differs at token '{}'", t),
            _ => {}
        }
    }
    if let Some(t) = vocab.tokens().get(model_tokens.len()) {
        return Err(Error::VocabularyMismatch(t.clone()).into());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (model, tokens, meta) = EmbeddingModel::<f64>::load_dir(&a.model)
        .with_context(|| format!("loading model from {}", a.model.display()))?;
    let (stats, vocab) = load_stats(&a.stats)?;
    check_vocab(&tokens, &vocab)?;
    let settings = Settings::from_entries(meta);

    let mut out = io::stdout().lock();
    let pairs = if settings.get("family") == Some("svd") {
        let cfg = SvdSettings::from_settings(&settings)?;
        association_report(&model, &stats, &cfg.association, a.count_floor)?.write_summary(&mut out)?;
        association_pairs(&model, &stats, &cfg.association, a.count_floor)?
    } else {
        let cfg = TrainSettings::from_settings(&settings)?;
        let spec = cfg.train.objective;
        fixed_point_report(&model, &stats, &spec, a.count_floor)?.write_summary(&mut out)?;
        fixed_point_pairs(&model, &stats, &spec, a.count_floor)?.0
    };
    let hist = pmi_histogram(&stats, a.bins)?;
    hist.write_summary(&mut out)?;
    let bias = (model.kernel() == KernelSpec::BiasedDot)
        .then(|| glove_bias_diagnostic(&model, &stats))
        .transpose()?;
    if let Some(b) = &bias {
        b.write_summary(&mut out)?;
    }

    if let Some(dir) = &a.diagnostics {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("pairs.tsv"))?);
        write_pairs_tsv(&mut w, &pairs, Some(&tokens))?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("histogram.tsv"))?);
        hist.write_tsv(&mut w)?;
        w.flush()?;
        if let Some(b) = &bias {
            let mut w = BufWriter::new(File::create(dir.join("bias.tsv"))?);
            b.write_tsv(&mut w, Some(&tokens))?;
            w.flush()?;
        }
    }
    Ok(())
}

fn export(a: ExportArgs) -> anyhow::Result<()> {
    let (model, tokens, _) = EmbeddingModel::<f64>::load_dir(&a.model)
        .with_context(|| format!("loading model from {}", a.model.display()))?;
    let mut buf = Vec::new();
    match a.side.as_str() {
        "vectors" => model.write_vectors(&mut buf, &tokens)?,
        "covectors" => model.write_covectors(&mut buf, &tokens)?,
        other => bail!("unknown side '{}'; use vectors or covectors", other),
    }
    if !a.oov.is_empty() {
        let (table, n_min, n_max) = match (model.subwords(), model.kernel()) {
            (Some(t), KernelSpec::SubwordDot { n_min, n_max }) if a.side == "vectors" => (t, n_min, n_max),
            _ => bail!("--oov needs the vectors of a subword model"),
        };
        // rewrite the header count
        let text = String::from_utf8(buf)?;
        let body = text.split_once('\n').map_or("", |(_, b)| b).to_string();
        let mut lines = Vec::new();
        for word in &a.oov {
            let v = table
                .compose_word(word, n_min, n_max)
                .ok_or_else(|| anyhow!("no known n-gram in '{}'", word))?;
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            lines.push(format!("{} {}\n", word, vals.join(" ")));
        }
        buf = format!("{} {}\n{}{}", tokens.len() + a.oov.len(), model.dim(), body, lines.concat()).into_bytes();
    }
    fs::write(&a.out, buf)?;
    Ok(())
}
