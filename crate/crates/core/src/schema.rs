//! Portable JSON form of a drifting linear MDP.
//!
//! The document stores the shared feature table, every regime's parameters
//! as nested plain vectors (no binary blobs), and the drift schedule —
//! enough to reconstruct the [`Environment`] exactly. Loading re-runs the
//! full constructor validation, so a document that loads is a document that
//! is well formed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, Environment, InitialStateRule};
use crate::linmdp::{EpisodeParams, FeatureMap, LinearMdpParams, MdpError};
use crate::schedule::ScheduleSpec;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse environment document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported document version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("malformed `{field}`: {detail}")]
    Shape { field: &'static str, detail: String },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One regime: `theta` is `H × d`, `mu` is `H × d × S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeDocument {
    pub theta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<Vec<f64>>>,
}

/// The on-disk environment: dimensions, feature table (`S × A × d`), regime
/// list, schedule, and initial-state rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDocument {
    pub format_version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub episodes: usize,
    pub normalized: bool,
    pub initial_rule: InitialStateRule,
    pub schedule: ScheduleSpec,
    pub features: Vec<Vec<Vec<f64>>>,
    pub regimes: Vec<RegimeDocument>,
}

/// Flattens an environment into the document form.
pub fn to_document(env: &Environment) -> EnvDocument {
    let params = env.params();
    let features = params.features();
    let (ss, aa, d) = (params.num_states(), params.num_actions(), params.dim());
    let hh = params.horizon();
    let feature_rows = (0..ss)
        .map(|s| (0..aa).map(|a| features.phi(s, a).to_vec()).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    let regimes = params
        .regimes()
        .iter()
        .map(|regime| RegimeDocument {
            theta: (0..hh).map(|h| regime.theta.row(h).to_vec()).collect(),
            mu: (0..hh)
                .map(|h| (0..d).map(|j| regime.mu.slice(ndarray::s![h, j, ..]).to_vec()).collect())
                .collect(),
        })
        .collect();
    EnvDocument {
        format_version: FORMAT_VERSION,
        num_states: ss,
        num_actions: aa,
        horizon: hh,
        dim: d,
        episodes: params.num_episodes(),
        normalized: features.is_normalized(),
        initial_rule: env.initial_rule(),
        schedule: *params.schedule(),
        features: feature_rows,
        regimes,
    }
}

fn shape_err(field: &'static str, detail: String) -> SchemaError {
    SchemaError::Shape { field, detail }
}

fn nested2_to_array(
    field: &'static str,
    rows: &[Vec<f64>],
    shape: (usize, usize),
) -> Result<Array2<f64>, SchemaError> {
    if rows.len() != shape.0 {
        return Err(shape_err(field, format!("expected {} rows, found {}", shape.0, rows.len())));
    }
    let mut out = Array2::zeros(shape);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != shape.1 {
            return Err(shape_err(
                field,
                format!("row {i}: expected {} entries, found {}", shape.1, row.len()),
            ));
        }
        for (j, &x) in row.iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    Ok(out)
}

fn nested3_to_array(
    field: &'static str,
    rows: &[Vec<Vec<f64>>],
    shape: (usize, usize, usize),
) -> Result<Array3<f64>, SchemaError> {
    if rows.len() != shape.0 {
        return Err(shape_err(field, format!("expected {} blocks, found {}", shape.0, rows.len())));
    }
    let mut out = Array3::zeros(shape);
    for (i, block) in rows.iter().enumerate() {
        if block.len() != shape.1 {
            return Err(shape_err(
                field,
                format!("block {i}: expected {} rows, found {}", shape.1, block.len()),
            ));
        }
        for (j, row) in block.iter().enumerate() {
            if row.len() != shape.2 {
                return Err(shape_err(
                    field,
                    format!(
                        "block {i}, row {j}: expected {} entries, found {}",
                        shape.2,
                        row.len()
                    ),
                ));
            }
            for (k, &x) in row.iter().enumerate() {
                out[(i, j, k)] = x;
            }
        }
    }
    Ok(out)
}

/// Reconstructs the environment, re-running all constructor validation.
pub fn from_document(doc: &EnvDocument) -> Result<Environment, SchemaError> {
    if doc.format_version != FORMAT_VERSION {
        return Err(SchemaError::UnsupportedVersion { found: doc.format_version });
    }
    let table =
        nested3_to_array("features", &doc.features, (doc.num_states, doc.num_actions, doc.dim))?;
    let features = Arc::new(FeatureMap::new(table, doc.normalized)?);
    let mut regimes = Vec::with_capacity(doc.regimes.len());
    for regime in &doc.regimes {
        let theta = nested2_to_array("theta", &regime.theta, (doc.horizon, doc.dim))?;
        let mu = nested3_to_array("mu", &regime.mu, (doc.horizon, doc.dim, doc.num_states))?;
        regimes.push(EpisodeParams { theta, mu });
    }
    let params = LinearMdpParams::new(features, doc.horizon, doc.episodes, regimes, doc.schedule)?;
    Ok(Environment::new(params, doc.initial_rule)?)
}

/// Serializes to pretty JSON.
pub fn to_json(env: &Environment) -> String {
    serde_json::to_string_pretty(&to_document(env)).expect("document serializes")
}

pub fn save_json(env: &Environment, path: &Path) -> Result<(), SchemaError> {
    std::fs::write(path, to_json(env))
        .map_err(|source| SchemaError::Io { path: path.to_path_buf(), source })
}

pub fn load_json(path: &Path) -> Result<Environment, SchemaError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SchemaError::Io { path: path.to_path_buf(), source })?;
    let doc: EnvDocument = serde_json::from_str(&text)?;
    from_document(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{
        abrupt_schedule, build_combination_lock, build_hard_instance, HardInstanceSpec,
    };

    #[test]
    fn documents_round_trip_exactly() {
        let family = build_combination_lock(8, 4, 6, 6, 3, 19).unwrap();
        let params = abrupt_schedule(&family, 20, 120).unwrap();
        let env = Environment::new(params, InitialStateRule::Uniform).unwrap();
        let doc = to_document(&env);
        let rebuilt = from_document(&doc).unwrap();
        // Bit-exact round trip: serde_json writes shortest-round-trip floats.
        assert_eq!(to_document(&rebuilt), doc);
        assert_eq!(rebuilt.params().num_episodes(), 120);
        assert!(rebuilt.params().validate().is_empty());

        let text = serde_json::to_string(&doc).unwrap();
        let reparsed: EnvDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(reparsed, doc);
    }

    #[test]
    fn chain_instance_survives_the_file_round_trip() {
        let env =
            build_hard_instance(HardInstanceSpec { dim: 7, horizon: 10, total_steps: 10240 }, 5)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hard.json");
        save_json(&env, &path).unwrap();
        let loaded = load_json(&path).unwrap();
        assert_eq!(to_document(&loaded), to_document(&env));
        // The reloaded instance still has its exact transition structure:
        // the probing state never self-loops, and every mass is a multiple
        // of 1/16 (base mass 1/4 plus four ±1/32 coordinate contributions).
        let p = loaded.params().transition_probs(0, 0, 0, 0).unwrap();
        let q = env.params().transition_probs(0, 0, 0, 0).unwrap();
        assert_eq!(p, q);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1] + p[2], 1.0);
        for &x in p.iter() {
            assert_eq!((x * 16.0).fract(), 0.0);
        }
    }

    #[test]
    fn malformed_documents_are_rejected_with_field_context() {
        let family = build_combination_lock(5, 3, 4, 4, 2, 9).unwrap();
        let params = abrupt_schedule(&family, 5, 20).unwrap();
        let env = Environment::new(params, InitialStateRule::Uniform).unwrap();
        let mut doc = to_document(&env);
        doc.features[0].pop();
        let err = from_document(&doc).unwrap_err();
        assert!(err.to_string().contains("features"), "{err}");

        let mut doc = to_document(&env);
        doc.regimes[0].theta[0].pop();
        let err = from_document(&doc).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");

        let mut doc = to_document(&env);
        doc.format_version = 99;
        assert!(matches!(from_document(&doc), Err(SchemaError::UnsupportedVersion { found: 99 })));

        // A corrupted probability measure fails constructor validation.
        let mut doc = to_document(&env);
        doc.regimes[0].mu[0][0] = vec![9.0; 5];
        assert!(from_document(&doc).is_err());
    }
}
