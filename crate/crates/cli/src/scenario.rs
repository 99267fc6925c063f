//! Scenario configuration: what to run, on which instances, over which sweep.

use std::path::{Path, PathBuf};

use gshf_core::algorithms::{EnhancerMode, NuChoice, ReferencePolicy};
use gshf_core::{BanditInstance, GshfConfig, GshfOption, InstanceSpec};
use serde::{Deserialize, Serialize};

use crate::designs::Behavior;
use crate::error::{locate, CliError, CliResult};
use crate::instance_file::load_instance;

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Offline,
    Dpo,
    Online,
    Hybrid,
    Sequential,
    Rso,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Offline => "offline",
            Self::Dpo => "dpo",
            Self::Online => "online",
            Self::Hybrid => "hybrid",
            Self::Sequential => "sequential",
            Self::Rso => "rso",
        }
    }

    fn uses_offline_data(self) -> bool {
        matches!(self, Self::Offline | Self::Dpo | Self::Hybrid)
    }

    fn is_iterative(self) -> bool {
        matches!(self, Self::Online | Self::Hybrid | Self::Sequential)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuName {
    Zero,
    ReferenceMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancerName {
    Explore,
    BestOfN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceName {
    Pi0,
    Uniform,
}

/// Either `file` or the generator fields. `eta` overrides a file's value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi0_spread: Option<f64>,
    /// Generator seed; defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub kind: AlgorithmKind,
    /// `"I"` or `"II"`; hybrid defaults to I, everything else to II.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option: Option<GshfOption>,
    #[serde(default = "one")]
    pub beta_constant: f64,
    /// Defaults to 1 offline and to the online schedule for iterative kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_nu")]
    pub nu: NuName,
    #[serde(default = "default_enhancer")]
    pub enhancer: EnhancerName,
    #[serde(default = "default_best_of_n")]
    pub best_of_n: usize,
    #[serde(default = "default_candidates")]
    pub enhancer_candidates: usize,
    #[serde(default = "default_reference")]
    pub reference: ReferenceName,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_validation")]
    pub validation_contexts: usize,
    /// Multi-step rejection sampling: stage count (default `⌈r_x/η⌉ + 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder_steps: Option<usize>,
    /// Multi-step rejection sampling: proposals per stage and context.
    #[serde(default = "default_budget")]
    pub budget: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_behavior")]
    pub behavior: Behavior,
    #[serde(default = "default_n_off")]
    pub n_off: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { behavior: default_behavior(), n_off: default_n_off() }
    }
}

/// Each axis, when present, replaces the single value from `[algorithm]` or `[data]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_off: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_constant: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub trials: usize,
    /// Output directory, relative to the working directory; `--out` wins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub instance: InstanceSection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_delta() -> f64 {
    0.05
}
fn default_nu() -> NuName {
    NuName::Zero
}
fn default_enhancer() -> EnhancerName {
    EnhancerName::Explore
}
fn default_best_of_n() -> usize {
    4
}
fn default_candidates() -> usize {
    8
}
fn default_reference() -> ReferenceName {
    ReferenceName::Pi0
}
fn default_batch() -> usize {
    64
}
fn default_iterations() -> usize {
    10
}
fn default_validation() -> usize {
    512
}
fn default_budget() -> usize {
    10_000
}
fn default_behavior() -> Behavior {
    Behavior::Pi0
}
fn default_n_off() -> usize {
    200
}

/// One cell of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub n_off: usize,
    pub beta_constant: f64,
    pub ladder_steps: Option<usize>,
}

/// A parsed, validated scenario with its instance file (if any) loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub source: String,
    pub path: PathBuf,
    pub fixed_instance: Option<BanditInstance>,
    /// SHA-256 of the instance file, if one is used.
    pub instance_digest: Option<String>,
}

impl Scenario {
    pub fn load(path: &Path) -> CliResult<Self> {
        let source = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&source, path)
    }

    /// Parses `source` as if it had been read from `path` (relative instance
    /// paths resolve against its directory).
    pub fn parse(source: &str, path: &Path) -> CliResult<Self> {
        let at = |line: Option<usize>, msg: String| match line {
            Some(l) => CliError::Validation(format!("{}:{l}: {msg}", path.display())),
            None => CliError::Validation(format!("{}: {msg}", path.display())),
        };
        let config: ScenarioConfig =
            toml::from_str(source).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let err = |section: &str, key: &str, msg: String| at(locate(source, section, key), msg);

        if config.schema != SCENARIO_SCHEMA {
            return Err(err("", "schema", format!("unsupported schema {}, expected {SCENARIO_SCHEMA}", config.schema)));
        }
        if config.trials == 0 {
            return Err(err("", "trials", "trials must be at least 1".into()));
        }
        if config.name.trim().is_empty() {
            return Err(err("", "name", "name must be nonempty".into()));
        }
        let sweep = &config.sweep;
        for (key, empty) in [
            ("batch_size", sweep.batch_size.as_ref().is_some_and(Vec::is_empty)),
            ("iterations", sweep.iterations.as_ref().is_some_and(Vec::is_empty)),
            ("n_off", sweep.n_off.as_ref().is_some_and(Vec::is_empty)),
            ("beta_constant", sweep.beta_constant.as_ref().is_some_and(Vec::is_empty)),
            ("ladder", sweep.ladder.as_ref().is_some_and(Vec::is_empty)),
        ] {
            if empty {
                return Err(err("sweep", key, format!("sweep axis {key} is empty")));
            }
        }

        let inst = &config.instance;
        let generator = [inst.dim, inst.contexts, inst.actions].iter().any(Option::is_some) || inst.bound.is_some();
        let (fixed_instance, instance_digest) = match &inst.file {
            Some(_) if generator => {
                return Err(err("instance", "file", "give either an instance file or generator fields, not both".into()))
            }
            Some(file) => {
                let resolved = path.parent().unwrap_or(Path::new(".")).join(file);
                if !resolved.is_file() {
                    return Err(err("instance", "file", format!("instance file {} does not exist", resolved.display())));
                }
                let mut instance = load_instance(&resolved)?;
                if let Some(eta) = inst.eta {
                    instance = instance.with_eta(eta).map_err(|e| err("instance", "eta", e.to_string()))?;
                }
                let bytes = std::fs::read(&resolved).map_err(CliError::io(&resolved))?;
                (Some(instance), Some(crate::output::sha256_hex(&bytes)))
            }
            None => {
                let missing: Vec<&str> = [
                    ("dim", inst.dim.is_none()),
                    ("contexts", inst.contexts.is_none()),
                    ("actions", inst.actions.is_none()),
                    ("bound", inst.bound.is_none()),
                    ("eta", inst.eta.is_none()),
                ]
                .iter()
                .filter(|(_, m)| *m)
                .map(|(k, _)| *k)
                .collect();
                if !missing.is_empty() {
                    return Err(at(
                        None,
                        format!("[instance] needs `file` or all of dim, contexts, actions, bound, eta (missing {})", missing.join(", ")),
                    ));
                }
                if inst.dim == Some(0) || inst.contexts == Some(0) || inst.actions.is_some_and(|a| a < 2) {
                    return Err(err("instance", "actions", "generator needs dim ≥ 1, contexts ≥ 1, actions ≥ 2".into()));
                }
                if !inst.bound.is_some_and(|b| b > 0.0 && b.is_finite()) {
                    return Err(err("instance", "bound", "bound must be positive".into()));
                }
                if !inst.eta.is_some_and(|e| e > 0.0 && e.is_finite()) {
                    return Err(err("instance", "eta", "eta must be positive".into()));
                }
                (None, None)
            }
        };

        let alg = &config.algorithm;
        let option = config.option();
        if alg.kind == AlgorithmKind::Hybrid && option != GshfOption::I {
            return Err(err("algorithm", "option", "hybrid runs use Option I".into()));
        }
        let explicit_batch = locate(source, "algorithm", "batch_size").is_some() && alg.batch_size != 1;
        if alg.kind == AlgorithmKind::Sequential && (explicit_batch || sweep.batch_size.is_some()) {
            return Err(err("algorithm", "batch_size", "sequential runs use one comparison per round".into()));
        }
        if alg.kind == AlgorithmKind::Rso && alg.budget == 0 {
            return Err(err("algorithm", "budget", "budget must be at least 1".into()));
        }
        if sweep.ladder.as_ref().is_some_and(|l| l.contains(&0)) || alg.ladder_steps == Some(0) {
            return Err(err("sweep", "ladder", "ladder stage counts must be at least 1".into()));
        }
        if alg.kind.uses_offline_data() {
            let sizes = sweep.n_off.clone().unwrap_or_else(|| vec![config.data.n_off]);
            if sizes.contains(&0) {
                return Err(err("data", "n_off", "offline runs need n_off ≥ 1".into()));
            }
        }
        for point in config.points() {
            let cfg = config.gshf_config(point, 1.0);
            cfg.validate().map_err(|e| err("algorithm", "", e.to_string()))?;
        }

        Ok(Self { config, source: source.to_string(), path: path.to_path_buf(), fixed_instance, instance_digest })
    }
}

impl ScenarioConfig {
    pub fn option(&self) -> GshfOption {
        self.algorithm.option.unwrap_or(match self.algorithm.kind {
            AlgorithmKind::Hybrid => GshfOption::I,
            _ => GshfOption::II,
        })
    }

    /// The sweep grid in row-major order over (m, T, n_off, c, N).
    pub fn points(&self) -> Vec<SweepPoint> {
        let alg = &self.algorithm;
        let batch = if alg.kind == AlgorithmKind::Sequential {
            vec![1]
        } else {
            self.sweep.batch_size.clone().unwrap_or_else(|| vec![alg.batch_size])
        };
        let iterations = self.sweep.iterations.clone().unwrap_or_else(|| vec![alg.iterations]);
        let n_off = self.sweep.n_off.clone().unwrap_or_else(|| vec![self.data.n_off]);
        let betas = self.sweep.beta_constant.clone().unwrap_or_else(|| vec![alg.beta_constant]);
        let ladders: Vec<Option<usize>> = match &self.sweep.ladder {
            Some(l) => l.iter().map(|&n| Some(n)).collect(),
            None => vec![alg.ladder_steps],
        };
        let mut out = Vec::new();
        for &m in &batch {
            for &t in &iterations {
                for &n in &n_off {
                    for &c in &betas {
                        for &l in &ladders {
                            out.push(SweepPoint {
                                index: out.len(),
                                batch_size: m,
                                iterations: t,
                                n_off: n,
                                beta_constant: c,
                                ladder_steps: l,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn instance_spec(&self) -> Option<InstanceSpec> {
        let i = &self.instance;
        let mut spec = InstanceSpec::new(i.dim?, i.contexts?, i.actions?, i.bound?, i.eta?);
        if let Some(s) = i.pi0_spread {
            spec.pi0_spread = s;
        }
        Some(spec)
    }

    /// Learner configuration at one sweep point. `λ` falls back to the online
    /// schedule for iterative kinds once the instance is known.
    pub fn gshf_config(&self, point: SweepPoint, eta: f64) -> GshfConfig {
        let alg = &self.algorithm;
        let mut cfg = GshfConfig::new(eta);
        cfg.lambda = alg.lambda.unwrap_or(1.0);
        cfg.beta_constant = point.beta_constant;
        cfg.delta = alg.delta;
        cfg.nu = match alg.nu {
            NuName::Zero => NuChoice::Zero,
            NuName::ReferenceMean => NuChoice::ReferenceMean,
        };
        cfg.option = self.option();
        cfg.batch_size = point.batch_size;
        cfg.iterations = point.iterations;
        cfg.enhancer = match alg.enhancer {
            EnhancerName::Explore => EnhancerMode::Explore,
            EnhancerName::BestOfN => EnhancerMode::BestOfN { n: alg.best_of_n },
        };
        cfg.enhancer_candidates = alg.enhancer_candidates;
        cfg.reference = match alg.reference {
            ReferenceName::Pi0 => ReferencePolicy::Pi0,
            ReferenceName::Uniform => ReferencePolicy::Uniform,
        };
        cfg.validation_contexts = alg.validation_contexts;
        cfg
    }

    pub fn resolved_config(&self, point: SweepPoint, instance: &BanditInstance) -> GshfConfig {
        let cfg = self.gshf_config(point, instance.eta());
        if self.algorithm.lambda.is_none() && self.algorithm.kind.is_iterative() {
            cfg.with_online_lambda(instance)
        } else {
            cfg
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema = 1
name = "t"
trials = 2

[instance]
dim = 2
contexts = 2
actions = 3
bound = 1.0
eta = 1.0

[algorithm]
kind = "online"
"#;

    fn parse(text: &str) -> CliResult<Scenario> {
        Scenario::parse(text, Path::new("scenario.toml"))
    }

    #[test]
    fn sweep_grid_is_the_cartesian_product() {
        let text = format!("{BASE}\n[sweep]\nbatch_size = [64, 256, 1024]\nbeta_constant = [0.5, 1.0]\n");
        let s = parse(&text).unwrap();
        let pts = s.config.points();
        assert_eq!(pts.len(), 6);
        assert_eq!((pts[0].batch_size, pts[0].beta_constant), (64, 0.5));
        assert_eq!((pts[5].batch_size, pts[5].beta_constant), (1024, 1.0));
        assert!(pts.iter().enumerate().all(|(i, p)| p.index == i));
    }

    #[test]
    fn validation_errors_carry_lines() {
        let err = parse(&BASE.replace("trials = 2", "trials = 0")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().starts_with("scenario.toml:4:"), "{err}");
        let err = parse(&format!("{BASE}\n[sweep]\niterations = []\n")).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        let err = parse(&BASE.replace("kind = \"online\"", "kind = \"hybrid\"\noption = \"II\"")).unwrap_err();
        assert!(err.to_string().contains("Option I"), "{err}");
        let err = parse(&BASE.replace("kind = \"online\"", "kind = \"magic\"")).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn missing_instance_file_is_rejected() {
        let text = BASE.replace("dim = 2\ncontexts = 2\nactions = 3\nbound = 1.0\neta = 1.0", "file = \"nope.toml\"");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn iterative_kinds_default_to_the_online_lambda() {
        let s = parse(BASE).unwrap();
        let point = s.config.points()[0];
        let inst = gshf_core::generate_instance(&s.config.instance_spec().unwrap(), &mut gshf_core::rng::substream(0, &[]))
            .unwrap();
        let cfg = s.config.resolved_config(point, &inst);
        let expect = gshf_core::reward::online_lambda(2, 10, 0.05, 64, inst.gamma(), 1.0);
        assert_eq!(cfg.lambda, expect);
    }
}
