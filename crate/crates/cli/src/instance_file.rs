//! Instance files: a versioned TOML description of a finite bandit.
//!
//! ```toml
//! schema = 1
//! eta = 1.0
//! bound = 2.0
//! theta_star = [0.5, -0.3]
//!
//! [[contexts]]
//! name = "greeting"
//! weight = 1.0
//! pi0 = [0.5, 0.5]          # optional, uniform when omitted
//! actions = [
//!   { name = "short", features = [0.1, 0.2] },
//!   { name = "long", features = [0.3, -0.1] },
//! ]
//! ```

use std::path::Path;

use gshf_core::{BanditInstance, TabularPolicy, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const INSTANCE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub schema: u32,
    pub eta: f64,
    pub bound: f64,
    pub theta_star: Vec<f64>,
    pub contexts: Vec<ContextDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi0: Option<Vec<f64>>,
    pub actions: Vec<ActionDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub features: Vec<f64>,
}

impl InstanceDoc {
    pub fn from_instance(instance: &BanditInstance) -> Self {
        let contexts = (0..instance.num_contexts())
            .map(|x| ContextDoc {
                name: Some(instance.context_name(x).to_string()),
                weight: instance.d0()[x],
                pi0: Some(instance.pi0().row(x).to_vec()),
                actions: (0..instance.num_actions(x))
                    .map(|a| ActionDoc {
                        name: Some(instance.action_name(x, a).to_string()),
                        features: instance.features()[x][a].as_slice().to_vec(),
                    })
                    .collect(),
            })
            .collect();
        Self {
            schema: INSTANCE_SCHEMA,
            eta: instance.eta(),
            bound: instance.bound(),
            theta_star: instance.theta_star().as_slice().to_vec(),
            contexts,
        }
    }

    pub fn build(&self) -> CliResult<BanditInstance> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(CliError::Validation(format!(
                "unsupported instance schema {}, expected {INSTANCE_SCHEMA}",
                self.schema
            )));
        }
        let dim = self.theta_star.len();
        let mut context_names = Vec::new();
        let mut action_names = Vec::new();
        let mut features = Vec::new();
        let mut pi0 = Vec::new();
        for (x, c) in self.contexts.iter().enumerate() {
            context_names.push(c.name.clone().unwrap_or_else(|| format!("x{x}")));
            action_names.push(
                c.actions.iter().enumerate().map(|(a, act)| act.name.clone().unwrap_or_else(|| format!("a{a}"))).collect(),
            );
            let mut row = Vec::new();
            for (a, act) in c.actions.iter().enumerate() {
                if act.features.len() != dim {
                    return Err(CliError::Validation(format!(
                        "context {x} action {a}: {} features, theta_star has {dim}",
                        act.features.len()
                    )));
                }
                row.push(Vector::from_column_slice(&act.features));
            }
            features.push(row);
            pi0.push(c.pi0.clone().unwrap_or_else(|| vec![1.0 / c.actions.len().max(1) as f64; c.actions.len()]));
        }
        let pi0 = TabularPolicy::new(pi0).map_err(|e| CliError::Validation(e.to_string()))?;
        BanditInstance::with_names(
            context_names,
            action_names,
            self.contexts.iter().map(|c| c.weight).collect(),
            features,
            Vector::from_column_slice(&self.theta_star),
            self.bound,
            self.eta,
            pi0,
        )
        .map_err(|e| CliError::Validation(e.to_string()))
    }
}

pub fn parse_instance(text: &str) -> CliResult<BanditInstance> {
    let doc: InstanceDoc = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
    doc.build()
}

pub fn load_instance(path: &Path) -> CliResult<BanditInstance> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_instance(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn instance_to_toml(instance: &BanditInstance) -> String {
    toml::to_string(&InstanceDoc::from_instance(instance)).expect("instance documents always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use gshf_core::rng::substream;
    use gshf_core::{generate_instance, InstanceSpec};

    const SMALL: &str = r#"
schema = 1
eta = 0.5
bound = 1.0
theta_star = [1.0, 0.0]

[[contexts]]
weight = 1.0
actions = [{ features = [0.5, 0.0] }, { name = "b", features = [0.0, 0.5] }]
"#;

    #[test]
    fn parses_with_defaults() {
        let inst = parse_instance(SMALL).unwrap();
        assert_eq!(inst.num_contexts(), 1);
        assert_eq!(inst.action_name(0, 0), "a0");
        assert_eq!(inst.action_name(0, 1), "b");
        assert_eq!(inst.pi0().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn round_trips_generated_instances() {
        let inst = generate_instance(&InstanceSpec::new(3, 2, 4, 1.5, 0.7), &mut substream(3, &[])).unwrap();
        let back = parse_instance(&instance_to_toml(&inst)).unwrap();
        assert_eq!(back.optimal_value(), inst.optimal_value());
        assert_eq!(back.pi0(), inst.pi0());
    }

    #[test]
    fn rejects_bad_documents() {
        let wrong_schema = SMALL.replace("schema = 1", "schema = 2");
        assert!(matches!(parse_instance(&wrong_schema), Err(CliError::Validation(_))));
        let short = SMALL.replace("[0.5, 0.0]", "[0.5]");
        assert!(matches!(parse_instance(&short), Err(CliError::Validation(_))));
        let err = parse_instance(&SMALL.replace("eta = 0.5", "eta = \"x\"")).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}
