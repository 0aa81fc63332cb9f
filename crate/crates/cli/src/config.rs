//! Experiment configuration: a line-based `key = value` file with
//! `[experiment]`, `[model]` and `[output]` sections, overridden by flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use eigenfed::models;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(key: &str, reason: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            reason: reason.into(),
            line: None,
        }
    }

    fn at(mut self, line: Option<usize>) -> Self {
        self.line = line;
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config error in `{}` (line {l}): {}", self.key, self.reason),
            None => write!(f, "config error in `{}`: {}", self.key, self.reason),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SynthPca,
    VaryM,
    IntdimSweep,
    FixedRankSweep,
    Nongauss,
    BoundCheck,
    Quadsense,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Self::SynthPca,
        Self::VaryM,
        Self::IntdimSweep,
        Self::FixedRankSweep,
        Self::Nongauss,
        Self::BoundCheck,
        Self::Quadsense,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::SynthPca => "synth-pca",
            Self::VaryM => "vary-m",
            Self::IntdimSweep => "intdim-sweep",
            Self::FixedRankSweep => "fixed-rank-sweep",
            Self::Nongauss => "nongauss",
            Self::BoundCheck => "bound-check",
            Self::Quadsense => "quadsense",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.tag() == tag)
    }

    /// Whether the reported distance is `dist₂²` (otherwise `dist₂`).
    pub fn squared(self) -> bool {
        !matches!(self, Self::BoundCheck | Self::Quadsense)
    }

    /// Name of the swept column.
    pub fn sweep_name(self) -> &'static str {
        match self {
            Self::SynthPca | Self::Nongauss | Self::BoundCheck => "n",
            Self::VaryM => "m",
            Self::IntdimSweep => "rstar",
            Self::FixedRankSweep => "r",
            Self::Quadsense => "i",
        }
    }

    fn default_estimators(self) -> Vec<EstimatorTag> {
        use EstimatorTag::*;
        match self {
            Self::SynthPca => vec![Erm, Fix],
            Self::VaryM => vec![Erm, Fix, Itr],
            Self::IntdimSweep | Self::FixedRankSweep => vec![Erm, Fix, Itr, Rot],
            Self::Nongauss => vec![Erm, Fix, Rot],
            Self::BoundCheck => vec![Fix],
            Self::Quadsense => vec![Erm, Itr, Nve],
        }
    }

    fn default_repetitions(self) -> usize {
        match self {
            Self::BoundCheck => 10,
            _ => 5,
        }
    }
}

/// CSV column tags for the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorTag {
    /// Central estimator on pooled data.
    Erm,
    /// Procrustes fixing against node 0 (same rule as `fix`).
    One,
    /// Procrustes fixing against node 0.
    Fix,
    /// Iterative refinement.
    Itr,
    /// Spectral projector averaging.
    Rot,
    /// Naive averaging.
    Nve,
}

impl EstimatorTag {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::One => "one",
            Self::Fix => "fix",
            Self::Itr => "itr",
            Self::Rot => "rot",
            Self::Nve => "nve",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "erm" => Self::Erm,
            "one" => Self::One,
            "fix" => Self::Fix,
            "itr" => Self::Itr,
            "rot" => Self::Rot,
            "nve" => Self::Nve,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    M1 { lambda_lo: f64, lambda_hi: f64, delta: f64 },
    M2 { delta: f64, r_star: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub r: Vec<usize>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    /// Total sample budget `m·n` held fixed by `vary-m`.
    pub total_samples: Option<usize>,
    /// Number of atoms for `nongauss`.
    pub k: Option<usize>,
    /// Per-node measurement multiples `i·r·d` for `quadsense`.
    pub i: Vec<usize>,
    /// Spectral model; `None` for `nongauss` and `quadsense`, which do not use one.
    pub model: Option<ModelSpec>,
    pub estimators: Vec<EstimatorTag>,
    pub n_iter: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub tau_mult: f64,
    pub noise_sd: f64,
    pub timeout: Duration,
    pub out_path: Option<PathBuf>,
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "experiment",
        &[
            "name",
            "d",
            "r",
            "m",
            "n",
            "total_samples",
            "k",
            "i",
            "estimators",
            "n_iter",
            "repetitions",
            "seed",
            "tau_mult",
            "noise_sd",
            "timeout_s",
        ],
    ),
    ("model", &["kind", "lambda_lo", "lambda_hi", "delta", "r_star"]),
    ("output", &["path"]),
];

fn section_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(_, keys)| keys.contains(&key)).map(|(s, _)| *s)
}

/// Key/value pairs gathered from the file and the command line.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, (String, Option<usize>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        let mut section: Option<&'static str> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = Some(idx + 1);
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                section = Some(
                    KEYS.iter()
                        .map(|(s, _)| *s)
                        .find(|s| *s == name)
                        .ok_or_else(|| ConfigError::new(name, "unknown section").at(lineno))?,
                );
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, "expected `key = value`").at(lineno))?;
            let (key, value) = (key.trim(), value.trim());
            let current = section.ok_or_else(|| ConfigError::new(key, "key outside of any section").at(lineno))?;
            match section_of(key) {
                Some(s) if s == current => {}
                Some(s) => {
                    return Err(ConfigError::new(key, format!("belongs in [{s}], found in [{current}]")).at(lineno))
                }
                None => return Err(ConfigError::new(key, "unknown key").at(lineno)),
            }
            if raw.values.contains_key(key) {
                return Err(ConfigError::new(key, "given twice").at(lineno));
            }
            raw.values.insert(key.to_string(), (value.to_string(), lineno));
        }
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets `key` from the command line, replacing any file value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if section_of(key).is_none() {
            return Err(ConfigError::new(key, "unknown key"));
        }
        self.values.insert(key.to_string(), (value.to_string(), None));
        Ok(())
    }

    /// Expands `m1(λ_ℓ, λ_h, δ)` or `m2(δ, r★)` into the `[model]` keys.
    pub fn set_model(&mut self, spec: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::new("model", format!("expected m1(lo, hi, delta) or m2(delta, r_star), got `{spec}`"));
        let spec = spec.trim();
        let (kind, rest) = spec.split_once('(').ok_or_else(bad)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').map(str::trim).collect();
        for key in ["kind", "lambda_lo", "lambda_hi", "delta", "r_star"] {
            self.values.remove(key);
        }
        match (kind.trim(), args.as_slice()) {
            ("m1", [lo, hi, delta]) => {
                self.set("kind", "m1")?;
                self.set("lambda_lo", lo)?;
                self.set("lambda_hi", hi)?;
                self.set("delta", delta)?;
            }
            ("m2", [delta, r_star]) => {
                self.set("kind", "m2")?;
                self.set("delta", delta)?;
                self.set("r_star", r_star)?;
            }
            _ => return Err(bad()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(&str, Option<usize>)> {
        self.values.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::new(key, format!("cannot parse `{v}`")).at(line)),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => {
                let items: Result<Vec<T>, _> = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect();
                match items {
                    Ok(xs) if xs.is_empty() => Err(ConfigError::new(key, "empty list").at(line)),
                    Ok(xs) => Ok(Some(xs)),
                    Err(_) => Err(ConfigError::new(key, format!("cannot parse list `{v}`")).at(line)),
                }
            }
        }
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.get(key).and_then(|(_, l)| l)
    }

    fn err(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::new(key, reason).at(self.line(key))
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.scalar(key)?.ok_or_else(|| ConfigError::new(key, "required"))
    }

    fn require_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        self.list(key)?.ok_or_else(|| ConfigError::new(key, "required"))
    }

    /// A list that must hold exactly one value for this experiment.
    fn single<T: std::str::FromStr + Copy>(&self, key: &str, experiment: Experiment) -> Result<T, ConfigError> {
        let xs: Vec<T> = self.require_list(key)?;
        match xs.as_slice() {
            [x] => Ok(*x),
            _ => Err(self.err(key, format!("{} sweeps `{}`, not `{key}`", experiment.tag(), experiment.sweep_name()))),
        }
    }

    fn unused(&self, key: &str, experiment: Experiment) -> Result<(), ConfigError> {
        if self.get(key).is_some() {
            return Err(self.err(key, format!("not used by {}", experiment.tag())));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ExperimentConfig, ConfigError> {
        let name: String = self.require("name")?;
        let experiment =
            Experiment::from_tag(&name).ok_or_else(|| self.err("name", format!("unknown experiment `{name}`")))?;
        let d: usize = self.require("d")?;
        if d < 2 {
            return Err(self.err("d", "must be at least 2"));
        }
        use Experiment::*;

        let r: Vec<usize> = match experiment {
            FixedRankSweep => self.require_list("r")?,
            _ => vec![self.single("r", experiment)?],
        };
        if let Some(&bad) = r.iter().find(|&&r| r < 1 || r >= d) {
            return Err(self.err("r", format!("need 1 <= r < d, got {bad}")));
        }

        let m: Vec<usize> = match experiment {
            VaryM => self.require_list("m")?,
            _ => vec![self.single("m", experiment)?],
        };
        if m.contains(&0) {
            return Err(self.err("m", "must be positive"));
        }

        let mut total_samples = None;
        let n: Vec<usize> = match experiment {
            SynthPca | Nongauss | BoundCheck => self.require_list("n")?,
            IntdimSweep | FixedRankSweep => vec![self.single("n", experiment)?],
            VaryM => {
                self.unused("n", experiment)?;
                let total: usize = self.require("total_samples")?;
                if let Some(&bad) = m.iter().find(|&&m| total / m == 0) {
                    return Err(self.err("total_samples", format!("leaves no sample per node at m = {bad}")));
                }
                total_samples = Some(total);
                m.iter().map(|&m| total / m).collect()
            }
            Quadsense => {
                self.unused("n", experiment)?;
                Vec::new()
            }
        };
        if n.contains(&0) {
            return Err(self.err("n", "must be positive"));
        }
        if experiment != VaryM {
            self.unused("total_samples", experiment)?;
        }

        let k = match experiment {
            Nongauss => {
                let k: usize = self.require("k")?;
                if k < 2 {
                    return Err(self.err("k", "need at least 2 atoms"));
                }
                Some(k)
            }
            _ => {
                self.unused("k", experiment)?;
                None
            }
        };

        let i = match experiment {
            Quadsense => {
                let i: Vec<usize> = self.require_list("i")?;
                if i.contains(&0) {
                    return Err(self.err("i", "must be positive"));
                }
                i
            }
            _ => {
                self.unused("i", experiment)?;
                Vec::new()
            }
        };

        let model = self.model(experiment, d, &r)?;

        let estimators = match self.list::<String>("estimators")? {
            None => experiment.default_estimators(),
            Some(tags) => {
                let mut out = Vec::new();
                for t in tags {
                    let tag = EstimatorTag::from_tag(&t)
                        .ok_or_else(|| self.err("estimators", format!("unknown estimator `{t}`")))?;
                    if out.contains(&tag) {
                        return Err(self.err("estimators", format!("`{t}` listed twice")));
                    }
                    out.push(tag);
                }
                out
            }
        };

        let n_iter = self.scalar("n_iter")?.unwrap_or(2);
        if n_iter < 1 {
            return Err(self.err("n_iter", "must be at least 1"));
        }
        let repetitions = self.scalar("repetitions")?.unwrap_or(experiment.default_repetitions());
        if repetitions < 1 {
            return Err(self.err("repetitions", "must be at least 1"));
        }
        let tau_mult: f64 = self.scalar("tau_mult")?.unwrap_or(models::DEFAULT_TAU_MULT);
        if !(tau_mult > 0.0 && tau_mult.is_finite()) {
            return Err(self.err("tau_mult", "must be positive"));
        }
        let noise_sd: f64 = self.scalar("noise_sd")?.unwrap_or(0.0);
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(self.err("noise_sd", "must be non-negative"));
        }
        if experiment != Quadsense {
            self.unused("tau_mult", experiment)?;
            self.unused("noise_sd", experiment)?;
        }
        let timeout_s: f64 = self.scalar("timeout_s")?.unwrap_or(30.0);
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(self.err("timeout_s", "must be positive"));
        }

        Ok(ExperimentConfig {
            experiment,
            d,
            r,
            m,
            n,
            total_samples,
            k,
            i,
            model,
            estimators,
            n_iter,
            repetitions,
            master_seed: self.scalar("seed")?.unwrap_or(0),
            tau_mult,
            noise_sd,
            timeout: Duration::from_secs_f64(timeout_s),
            out_path: self.scalar::<String>("path")?.map(PathBuf::from),
        })
    }

    fn model(&self, experiment: Experiment, d: usize, r: &[usize]) -> Result<Option<ModelSpec>, ConfigError> {
        use Experiment::*;
        if matches!(experiment, Nongauss | Quadsense) {
            for key in ["kind", "lambda_lo", "lambda_hi", "delta", "r_star"] {
                self.unused(key, experiment)?;
            }
            return Ok(None);
        }
        let default_kind = if matches!(experiment, IntdimSweep | FixedRankSweep) { "m2" } else { "m1" };
        let kind: String = self.scalar("kind")?.unwrap_or_else(|| default_kind.to_string());
        let spec = match kind.as_str() {
            "m1" => {
                self.unused("r_star", experiment)?;
                ModelSpec::M1 {
                    lambda_lo: self.scalar("lambda_lo")?.unwrap_or(0.5),
                    lambda_hi: self.scalar("lambda_hi")?.unwrap_or(1.0),
                    delta: self.scalar("delta")?.unwrap_or(0.2),
                }
            }
            "m2" => {
                self.unused("lambda_lo", experiment)?;
                self.unused("lambda_hi", experiment)?;
                let r_star: Vec<f64> = self.require_list("r_star")?;
                if experiment != IntdimSweep && r_star.len() != 1 {
                    return Err(self.err("r_star", format!("{} takes a single r_star", experiment.tag())));
                }
                ModelSpec::M2 {
                    delta: self.require("delta")?,
                    r_star,
                }
            }
            other => return Err(self.err("kind", format!("unknown model `{other}`"))),
        };
        match (&spec, experiment) {
            (ModelSpec::M1 { .. }, IntdimSweep) => {
                return Err(self.err("kind", "intdim-sweep varies r_star and needs model m2"));
            }
            (ModelSpec::M1 { .. }, FixedRankSweep) => {
                return Err(self.err("kind", "fixed-rank-sweep holds r_star fixed and needs model m2"));
            }
            _ => {}
        }
        for &r in r {
            let check = match &spec {
                ModelSpec::M1 {
                    lambda_lo,
                    lambda_hi,
                    delta,
                } => models::model_m1(d, r, *lambda_lo, *lambda_hi, *delta).map(|_| ()),
                ModelSpec::M2 { delta, r_star } => r_star
                    .iter()
                    .try_for_each(|&rs| models::model_m2(d, r, *delta, rs).map(|_| ())),
            };
            check.map_err(|e| ConfigError::new("model", e.to_string()).at(self.line("kind").or(self.line("delta"))))?;
        }
        Ok(Some(spec))
    }
}

/// Reads `path` (if any), applies command-line overrides and validates.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    model: Option<&str>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = match path {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    if let Some(spec) = model {
        raw.set_model(spec)?;
    }
    for (k, v) in overrides {
        raw.set(k, v)?;
    }
    raw.build()
}
