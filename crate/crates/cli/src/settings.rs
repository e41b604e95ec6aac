//! Flat `key=value` run settings and their resolution.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};

use lre_core::svd::SigmaSplit;
use lre_core::{AssociationKind, AssociationSpec, Family, TrainConfig, Weighting, WindowConfig};

/// Ordered `key=value` settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    entries: Vec<(String, String)>,
}

impl Settings {
    pub fn from_entries(entries: Vec<(String, String)>) -> Self {
        Settings { entries }
    }

    /// Merge a settings file with flag or environment values; the latter win.
    pub fn resolve(
        file: Option<&Path>,
        known: &[&str],
        flags: Vec<(&str, Option<String>)>,
    ) -> anyhow::Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), n + 1))?;
                let k = k.trim();
                if !known.contains(&k) {
                    bail!("{}:{}: unknown setting '{}'", path.display(), n + 1, k);
                }
                s.set(k, v.trim());
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, &v);
            }
        }
        Ok(s)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => self.entries.push((key.to_string(), value.to_string())),
        }
    }

    fn parse<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("invalid value for {}: '{}' ({})", key, v, e))
            })
            .transpose()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{}={}", k, v)?;
        }
        Ok(())
    }

    /// FNV-1a over the serialized settings.
    pub fn hash(&self) -> u64 {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    /// Entries for a model's meta.txt, which already records kernel and dim.
    pub fn meta_entries(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .filter(|(k, _)| k != "kernel" && k != "dim")
            .cloned()
            .collect()
    }
}

fn parse_bool(v: &str) -> anyhow::Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("expected true or false, got '{}'", v),
    }
}

pub fn parse_association(s: &str) -> anyhow::Result<AssociationKind> {
    Ok(match s {
        "ppmi" => AssociationKind::ClippedPmi(0.0),
        "pmi" => AssociationKind::Pmi,
        "smoothed" => AssociationKind::SmoothedPmi,
        "log-count" => AssociationKind::LogCount,
        _ => match s.split_once(':') {
            Some(("clipped", a)) => AssociationKind::ClippedPmi(a.parse()?),
            Some(("shifted", k)) => AssociationKind::ShiftedPmi(k.parse()?),
            _ => bail!("unknown association '{}'", s),
        },
    })
}

pub fn association_name(kind: AssociationKind) -> String {
    match kind {
        AssociationKind::ClippedPmi(a) if a == 0.0 => "ppmi".into(),
        AssociationKind::ClippedPmi(a) => format!("clipped:{}", a),
        AssociationKind::Pmi => "pmi".into(),
        AssociationKind::SmoothedPmi => "smoothed".into(),
        AssociationKind::LogCount => "log-count".into(),
        AssociationKind::ShiftedPmi(k) => format!("shifted:{}", k),
    }
}

pub struct BuildSettings {
    pub window: WindowConfig,
    pub max_vocab: Option<usize>,
    pub threads: usize,
}

impl BuildSettings {
    pub const KEYS: &'static [&'static str] = &[
        "window",
        "weighting",
        "min-count",
        "max-vocab",
        "undersample",
        "seed",
        "threads",
    ];

    pub fn from_settings(s: &Settings) -> anyhow::Result<Self> {
        let mut window = WindowConfig::default();
        if let Some(w) = s.parse("window")? {
            window.width = w;
        }
        window.weighting = match s.get("weighting") {
            None | Some("flat") => Weighting::Flat,
            Some("harmonic") => Weighting::Harmonic,
            Some(other) => bail!("unknown weighting '{}'", other),
        };
        if let Some(m) = s.parse("min-count")? {
            window.min_count = m;
        }
        window.undersample_t = match s.get("undersample") {
            None | Some("none") => None,
            Some(_) => s.parse("undersample")?,
        };
        if let Some(seed) = s.parse("seed")? {
            window.seed = seed;
        }
        let max_vocab = match s.get("max-vocab") {
            None | Some("none") => None,
            Some(_) => s.parse("max-vocab")?,
        };
        Ok(BuildSettings {
            window,
            max_vocab,
            threads: s.parse("threads")?.unwrap_or(1),
        })
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::default();
        s.set("window", &self.window.width.to_string());
        s.set(
            "weighting",
            match self.window.weighting {
                Weighting::Flat => "flat",
                Weighting::Harmonic => "harmonic",
            },
        );
        s.set("min-count", &self.window.min_count.to_string());
        s.set("max-vocab", &self.max_vocab.map_or("none".into(), |m| m.to_string()));
        s.set(
            "undersample",
            &self.window.undersample_t.map_or("none".into(), |t| t.to_string()),
        );
        s.set("seed", &self.window.seed.to_string());
        s.set("threads", &self.threads.to_string());
        s
    }
}

pub struct TrainSettings {
    pub train: TrainConfig,
    pub f32: bool,
}

impl TrainSettings {
    pub const KEYS: &'static [&'static str] = &[
        "family",
        "dim",
        "epochs",
        "seed",
        "eta",
        "eta-final",
        "pair-policy",
        "threads",
        "tol",
        "kernel",
        "k",
        "x-max",
        "beta",
        "smoothing",
        "block-size",
        "max-restarts",
        "strict-descent",
        "step-clipping",
        "max-vocab",
        "count-floor",
        "precision",
        "rank",
        "association",
        "sigma",
    ];

    pub fn from_settings(s: &Settings) -> anyhow::Result<Self> {
        let family: Family = s
            .get("family")
            .ok_or_else(|| anyhow!("missing setting 'family'"))?
            .parse()?;
        let mut c = TrainConfig::for_family(family);
        macro_rules! opt {
            ($key:expr, $field:expr) => {
                if let Some(v) = s.parse($key)? {
                    $field = v;
                }
            };
        }
        opt!("dim", c.dim);
        opt!("epochs", c.epochs);
        opt!("seed", c.seed);
        opt!("eta", c.eta);
        opt!("eta-final", c.eta_final);
        opt!("pair-policy", c.pair_policy);
        opt!("threads", c.threads);
        opt!("tol", c.convergence_tol);
        opt!("k", c.objective.k);
        opt!("x-max", c.objective.x_max);
        opt!("beta", c.objective.beta);
        opt!("smoothing", c.objective.smoothing_exponent);
        opt!("block-size", c.block_size);
        opt!("max-restarts", c.max_restarts);
        opt!("max-vocab", c.max_vocab);
        opt!("count-floor", c.report_count_floor);
        if let Some(v) = s.get("kernel") {
            c.kernel = v.parse()?;
        }
        if let Some(v) = s.get("strict-descent") {
            c.strict_descent = parse_bool(v)?;
        }
        if let Some(v) = s.get("step-clipping") {
            c.step_clipping = parse_bool(v)?;
        }
        let f32 = match s.get("precision") {
            None | Some("f64") => false,
            Some("f32") => true,
            Some(other) => bail!("unknown precision '{}'", other),
        };
        c.validate()?;
        Ok(TrainSettings { train: c, f32 })
    }

    pub fn to_settings(&self) -> Settings {
        let c = &self.train;
        let mut s = Settings::default();
        s.set("family", c.objective.family.name());
        s.set("dim", &c.dim.to_string());
        s.set("epochs", &c.epochs.to_string());
        s.set("seed", &c.seed.to_string());
        s.set("eta", &c.eta.to_string());
        s.set("eta-final", &c.eta_final.to_string());
        s.set("pair-policy", c.pair_policy.name());
        s.set("threads", &c.threads.to_string());
        s.set("tol", &c.convergence_tol.to_string());
        s.set("kernel", &c.kernel.to_string());
        s.set("k", &c.objective.k.to_string());
        s.set("x-max", &c.objective.x_max.to_string());
        s.set("beta", &c.objective.beta.to_string());
        s.set("smoothing", &c.objective.smoothing_exponent.to_string());
        s.set("block-size", &c.block_size.to_string());
        s.set("max-restarts", &c.max_restarts.to_string());
        s.set("strict-descent", &c.strict_descent.to_string());
        s.set("step-clipping", &c.step_clipping.to_string());
        s.set("max-vocab", &c.max_vocab.to_string());
        s.set("count-floor", &c.report_count_floor.to_string());
        s.set("precision", if self.f32 { "f32" } else { "f64" });
        s
    }
}

pub struct SvdSettings {
    /// `None` means full rank.
    pub rank: Option<usize>,
    pub association: AssociationSpec,
    pub sigma: SigmaSplit,
    pub seed: u64,
    pub count_floor: f64,
}

impl SvdSettings {
    pub fn from_settings(s: &Settings) -> anyhow::Result<Self> {
        let rank = match s.get("rank") {
            None | Some("full") => None,
            Some(_) => s.parse("rank")?,
        };
        let association = AssociationSpec::new(parse_association(s.get("association").unwrap_or("ppmi"))?);
        Ok(SvdSettings {
            rank,
            association,
            sigma: s.parse("sigma")?.unwrap_or_default(),
            seed: s.parse("seed")?.unwrap_or(0),
            count_floor: s.parse("count-floor")?.unwrap_or(lre_core::eval::DEFAULT_COUNT_FLOOR),
        })
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::default();
        s.set("family", "svd");
        s.set("rank", &self.rank.map_or("full".into(), |r| r.to_string()));
        s.set("association", &association_name(self.association.kind));
        s.set("sigma", self.sigma.name());
        s.set("seed", &self.seed.to_string());
        s.set("count-floor", &self.count_floor.to_string());
        s
    }
}
