//! The run configuration: one TOML document holding every tunable constant
//! plus the backend registry.
//!
//! Missing keys take their defaults, unknown keys are rejected, and every
//! sub-configuration is validated at load. Relative paths are resolved
//! against the directory of the configuration file and must exist.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::anchors::KmeansConfig;
use crate::cleaning::CleanConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::io::{read_detections, read_ground_truth};
use crate::pipeline::{
    BackendRegistry, DetectorBackend, EnhancementConfig, EnsembleConfig, PipelineConfig,
    ReplayBackend, StubBackend, DEFAULT_BUDGET_MS,
};
use crate::simulate::{SceneConfig, SyntheticBackend, SyntheticDetectorConfig};

/// Environment variable consulted for the seed when neither a flag nor the
/// configuration sets one.
pub const SEED_ENV: &str = "RTDET_SEED";

/// Seed used when nothing else provides one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// Detections played back from JSONL files.
    Replay {
        plain: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        enhanced: Option<PathBuf>,
    },
    /// The synthetic detector over a ground truth file. `seed` and `s0`
    /// override the `[synthetic]` block for this backend only.
    Synthetic {
        gt: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s0: Option<f64>,
    },
    /// Sleeps, then defers to `inner` (another backend) or returns nothing.
    Stub {
        sleep_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inner: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces the seeds of `scene`, `synthetic` and `kmeans`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub budget_ms: f64,
    pub jobs: usize,
    pub enhancement: EnhancementConfig,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
    pub clean: CleanConfig,
    pub scene: SceneConfig,
    pub synthetic: SyntheticDetectorConfig,
    pub kmeans: KmeansConfig,
    pub backends: BTreeMap<String, BackendSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            budget_ms: DEFAULT_BUDGET_MS,
            jobs: 1,
            enhancement: EnhancementConfig::default(),
            ensemble: EnsembleConfig::default(),
            eval: EvalConfig::default(),
            clean: CleanConfig::default(),
            scene: SceneConfig::default(),
            synthetic: SyntheticDetectorConfig::default(),
            kmeans: KmeansConfig::default(),
            backends: BTreeMap::new(),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that opens or assigns `section`, for locating semantic errors.
fn line_of_section(text: &str, section: &str) -> usize {
    let header = format!("[{section}");
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.starts_with(&header)
                || l.strip_prefix(section)
                    .is_some_and(|rest| rest.trim_start().starts_with(['=', '.']))
        })
        .map_or(1, |i| i + 1)
}

const EXAMPLE_BACKENDS: &str = "\
# Backends are named tables under [backends]. Examples:
#
# [backends.w6]
# kind = \"replay\"
# plain = \"w6_plain.jsonl\"        # frame coordinates
# enhanced = \"w6_enhanced.jsonl\"  # view coordinates of the enlarged crop
#
# [backends.p6]
# kind = \"synthetic\"
# gt = \"gt.jsonl\"
# seed = 7
#
# [backends.slow]
# kind = \"stub\"
# sleep_ms = 30
# inner = \"p6\"
";

impl RunConfig {
    /// The default document, with commented backend examples appended.
    pub fn default_toml() -> String {
        let body = toml::to_string(&RunConfig::default()).expect("default config serializes");
        format!("{body}\n{EXAMPLE_BACKENDS}")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses and validates without touching the file system. `path` only
    /// labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(1, |s| line_of_offset(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|(section, err)| Error::Parse {
            path: path.to_path_buf(),
            line: line_of_section(text, section),
            message: err.to_string(),
        })?;
        Ok(cfg)
    }

    /// Reads, validates, resolves backend paths against the file's directory
    /// and checks that they exist.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_inner(path, true)
    }

    /// Like [`RunConfig::load`] but tolerates backend files that do not exist
    /// yet, for commands that produce them.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        Self::load_inner(path, false)
    }

    fn load_inner(path: &Path, check_paths: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (name, spec) in &mut cfg.backends {
            let paths: Vec<&mut PathBuf> = match spec {
                BackendSpec::Replay { plain, enhanced } => {
                    std::iter::once(plain).chain(enhanced.as_mut()).collect()
                }
                BackendSpec::Synthetic { gt, .. } => vec![gt],
                BackendSpec::Stub { .. } => Vec::new(),
            };
            for p in paths {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if check_paths && !p.exists() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: line_of_section(&text, &format!("backends.{name}")),
                        message: format!("backend `{name}`: {} does not exist", p.display()),
                    });
                }
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, Error)> {
        let at = |section: &'static str| move |e: Error| (section, e);
        if !(self.budget_ms > 0.0 && self.budget_ms.is_finite()) {
            return Err((
                "budget_ms",
                Error::InvalidConfig(format!("budget_ms must be positive, got {}", self.budget_ms)),
            ));
        }
        if self.jobs == 0 {
            return Err(("jobs", Error::InvalidConfig("jobs must be at least 1".into())));
        }
        self.enhancement.validate().map_err(at("enhancement"))?;
        self.eval.validate().map_err(at("eval"))?;
        self.clean.validate(usize::MAX).map_err(at("clean"))?;
        self.scene.validate().map_err(at("scene"))?;
        self.synthetic.validate().map_err(at("synthetic"))?;
        self.kmeans.validate().map_err(at("kmeans"))?;
        for (name, spec) in &self.backends {
            let bad = |msg: String| ("backends", Error::InvalidConfig(format!("backend `{name}`: {msg}")));
            match spec {
                BackendSpec::Stub { inner: Some(inner), .. } => match self.backends.get(inner) {
                    None => return Err(bad(format!("inner backend `{inner}` is not defined"))),
                    Some(BackendSpec::Stub { .. }) => {
                        return Err(bad("a stub cannot wrap another stub".into()))
                    }
                    Some(_) => {}
                },
                BackendSpec::Synthetic { s0: Some(s0), .. } if !s0.is_finite() => {
                    return Err(bad("s0 must be finite".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Applies a resolved seed to every seeded sub-configuration.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.scene.seed = seed;
        self.synthetic.seed = seed;
        self.kmeans.seed = seed;
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            enhancement: self.enhancement.clone(),
            ensemble: self.ensemble.clone(),
        }
    }

    /// Instantiates every configured backend, loading replay and ground
    /// truth files.
    pub fn build_backends(&self) -> Result<BackendRegistry> {
        let mut reg: BackendRegistry = BTreeMap::new();
        for (name, spec) in &self.backends {
            let backend: Arc<dyn DetectorBackend> = match spec {
                BackendSpec::Replay { plain, enhanced } => {
                    let mut r = ReplayBackend::new(name.clone()).with_plain(read_detections(plain)?);
                    if let Some(e) = enhanced {
                        r = r.with_enhanced(read_detections(e)?);
                    }
                    Arc::new(r)
                }
                BackendSpec::Synthetic { gt, seed, s0 } => {
                    let mut cfg = self.synthetic.clone();
                    cfg.seed = seed.unwrap_or(cfg.seed);
                    cfg.s0 = s0.unwrap_or(cfg.s0);
                    Arc::new(SyntheticBackend::new(name.clone(), cfg, read_ground_truth(gt)?)?)
                }
                BackendSpec::Stub { .. } => continue,
            };
            reg.insert(name.clone(), backend);
        }
        for (name, spec) in &self.backends {
            if let BackendSpec::Stub { sleep_ms, inner } = spec {
                let mut stub = StubBackend::new(name.clone(), Duration::from_millis(*sleep_ms));
                if let Some(inner) = inner {
                    let target = reg
                        .get(inner)
                        .cloned()
                        .ok_or_else(|| Error::MissingBackend(inner.clone()))?;
                    stub = stub.wrapping(target);
                }
                reg.insert(name.clone(), Arc::new(stub));
            }
        }
        Ok(reg)
    }
}

/// Seed precedence: command-line flag, then the configuration file, then
/// [`SEED_ENV`], then [`DEFAULT_SEED`].
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        None => Ok(DEFAULT_SEED),
    }
}
