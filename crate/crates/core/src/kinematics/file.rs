//! JSON model file: per-chain link records, optional fixed tail (row-major
//! 4x4), joint limits and camera intrinsics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChainId, DhLink, JointLimits, KinematicChain, RobotModel, Transform};
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// The default model as shipped in `data/icub_model.json`.
pub const BUNDLED_MODEL_JSON: &str = include_str!("../../data/icub_model.json");

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
    chains: BTreeMap<ChainId, ChainRecord>,
    intrinsics: CameraIntrinsics,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainRecord {
    links: Vec<LinkRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_tail: Option<[f64; 16]>,
    joint_limits: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkRecord {
    a_mm: f64,
    d_mm: f64,
    alpha_rad: f64,
    offset_rad: f64,
}

const DEFAULT_NOTES: [&str; 3] = [
    "RA values are approximate: mirrored from LA across the Root x-z plane.",
    "cx = 160 px is assumed (width / 2).",
    "RA fixed_tail is the palm-to-fingertip transform; it is never calibrated.",
];

fn record(chain: &KinematicChain, limits: &[[f64; 2]]) -> ChainRecord {
    ChainRecord {
        links: chain
            .links()
            .iter()
            .map(|l| LinkRecord {
                a_mm: l.a,
                d_mm: l.d,
                alpha_rad: l.alpha,
                offset_rad: l.offset,
            })
            .collect(),
        fixed_tail: chain.fixed_tail().map(|t| {
            let mut out = [0.0; 16];
            for r in 0..4 {
                for c in 0..4 {
                    out[r * 4 + c] = t[(r, c)];
                }
            }
            out
        }),
        joint_limits: limits.to_vec(),
    }
}

pub fn to_model_json(model: &RobotModel) -> String {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        notes: DEFAULT_NOTES.iter().map(|s| s.to_string()).collect(),
        chains: ChainId::ALL
            .iter()
            .map(|&id| (id, record(model.chain(id), model.joint_limits.get(id))))
            .collect(),
        intrinsics: model.intrinsics,
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn parse_model(text: &str) -> Result<RobotModel> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: file.version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let mut chains = Vec::with_capacity(4);
    let mut limits = Vec::with_capacity(4);
    for id in ChainId::ALL {
        let rec = file
            .chains
            .get(&id)
            .ok_or_else(|| Error::InvalidModel(format!("missing chain {id}")))?;
        let links = rec
            .links
            .iter()
            .map(|l| DhLink::new(l.a_mm, l.d_mm, l.alpha_rad, l.offset_rad))
            .collect();
        let tail = rec.fixed_tail.map(|v| Transform::from_row_slice(&v));
        chains.push(KinematicChain::new(id.short_name(), links, tail)?);
        limits.push(rec.joint_limits.clone());
    }
    let mut limits = limits.into_iter();
    let joint_limits = JointLimits {
        left_arm: limits.next().unwrap(),
        right_arm: limits.next().unwrap(),
        left_eye: limits.next().unwrap(),
        right_eye: limits.next().unwrap(),
    };
    let mut chains = chains.into_iter();
    RobotModel::new(
        chains.next().unwrap(),
        chains.next().unwrap(),
        chains.next().unwrap(),
        chains.next().unwrap(),
        file.intrinsics,
        joint_limits,
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RobotModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

pub fn save_model(model: &RobotModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_model_json(model) + "\n").map_err(|e| Error::io(path, e))
}

/// SHA-256 over the kinematic content (links, tails, intrinsics, limits) of
/// the model, hex encoded.
pub fn model_hash(model: &RobotModel) -> String {
    let mut hasher = Sha256::new();
    for id in ChainId::ALL {
        let chain = model.chain(id);
        hasher.update(id.short_name().as_bytes());
        for l in chain.links() {
            for v in [l.a, l.d, l.alpha, l.offset] {
                hasher.update(v.to_le_bytes());
            }
        }
        if let Some(t) = chain.fixed_tail() {
            for v in t.transpose().iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        for r in model.joint_limits.get(id) {
            hasher.update(r[0].to_le_bytes());
            hasher.update(r[1].to_le_bytes());
        }
    }
    let k = &model.intrinsics;
    for v in [k.fx, k.fy, k.cx, k.cy, k.width, k.height] {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::default_icub_model;

    #[test]
    fn bundled_file_matches_builtin_model() {
        let bundled = parse_model(BUNDLED_MODEL_JSON).unwrap();
        assert_eq!(bundled, default_icub_model());
    }

    #[test]
    fn round_trip_is_exact() {
        let m = default_icub_model();
        let back = parse_model(&to_model_json(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_hash(&back), model_hash(&m));
    }

    #[test]
    fn hash_changes_with_parameters() {
        let m = default_icub_model();
        let mut n = m.clone();
        n.set_value(ChainId::LeftArm, 3, crate::kinematics::DhField::A, 15.5);
        assert_ne!(model_hash(&m), model_hash(&n));
    }

    #[test]
    fn unequal_shared_head_is_rejected() {
        let text = to_model_json(&default_icub_model());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["chains"]["REye"]["links"][2]["d_mm"] = serde_json::json!(2.0);
        assert!(matches!(parse_model(&v.to_string()), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = to_model_json(&default_icub_model());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(7);
        assert!(matches!(
            parse_model(&v.to_string()),
            Err(Error::UnsupportedVersion { found: 7, .. })
        ));
    }
}
