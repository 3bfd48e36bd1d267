//! Denavit-Hartenberg kinematics: links, chains, forward kinematics and the
//! four-chain humanoid upper-body model.
//!
//! Lengths are in millimetres and angles in radians everywhere. Every chain
//! starts in the common Root frame; there is no per-chain base transform.

mod file;
mod icub;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};

pub use file::{load_model, model_hash, parse_model, save_model, to_model_json, BUNDLED_MODEL_JSON};
pub use icub::{default_icub_model, fingertip_transform, FINGERTIP_OFFSET_MM};

/// Homogeneous 4x4 rigid transform.
pub type Transform = Matrix4<f64>;

/// One of the four DH quantities of a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DhField {
    A,
    D,
    Alpha,
    Offset,
}

impl DhField {
    pub const ALL: [DhField; 4] = [DhField::A, DhField::D, DhField::Alpha, DhField::Offset];

    /// Length fields are in mm, the others in rad.
    pub fn is_length(self) -> bool {
        matches!(self, DhField::A | DhField::D)
    }

    pub fn name(self) -> &'static str {
        match self {
            DhField::A => "a",
            DhField::D => "d",
            DhField::Alpha => "alpha",
            DhField::Offset => "offset",
        }
    }
}

impl fmt::Display for DhField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DhField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(DhField::A),
            "d" => Ok(DhField::D),
            "alpha" => Ok(DhField::Alpha),
            "offset" | "offsets" | "o" => Ok(DhField::Offset),
            other => Err(Error::UnknownField(other.to_string())),
        }
    }
}

/// Classic DH link. `offset` is added to the joint angle before the z rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub offset: f64,
}

impl DhLink {
    pub const fn new(a: f64, d: f64, alpha: f64, offset: f64) -> Self {
        Self { a, d, alpha, offset }
    }

    pub fn get(&self, field: DhField) -> f64 {
        match field {
            DhField::A => self.a,
            DhField::D => self.d,
            DhField::Alpha => self.alpha,
            DhField::Offset => self.offset,
        }
    }

    pub fn set(&mut self, field: DhField, value: f64) {
        match field {
            DhField::A => self.a = value,
            DhField::D => self.d = value,
            DhField::Alpha => self.alpha = value,
            DhField::Offset => self.offset = value,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.d.is_finite() && self.alpha.is_finite() && self.offset.is_finite()
    }

    pub fn transform(&self, q: f64) -> Transform {
        dh_transform(self, q)
    }
}

/// `Rz(q + offset) * Tz(d) * Tx(a) * Rx(alpha)`.
pub fn dh_transform(link: &DhLink, q: f64) -> Transform {
    let (st, ct) = (q + link.offset).sin_cos();
    let (sa, ca) = link.alpha.sin_cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        ct, -st * ca,  st * sa, link.a * ct,
        st,  ct * ca, -ct * sa, link.a * st,
        0.0,      sa,       ca, link.d,
        0.0,     0.0,      0.0, 1.0,
    );
    m
}

/// Checks the rotation block is orthonormal with det +1 and the bottom row is `[0, 0, 0, 1]`.
pub fn is_rigid_transform(t: &Transform, tol: f64) -> bool {
    let r: Matrix3<f64> = t.fixed_view::<3, 3>(0, 0).into_owned();
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max() <= tol;
    let det = (r.determinant() - 1.0).abs() <= tol;
    let bottom = t[(3, 0)] == 0.0 && t[(3, 1)] == 0.0 && t[(3, 2)] == 0.0 && t[(3, 3)] == 1.0;
    ortho && det && bottom && t.iter().all(|v| v.is_finite())
}

/// Inverse of a rigid transform without a general matrix inversion.
pub fn rigid_inverse(t: &Transform) -> Transform {
    let r = t.fixed_view::<3, 3>(0, 0).transpose();
    let p = -(r * t.fixed_view::<3, 1>(0, 3));
    let mut out = Transform::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&p);
    out
}

pub fn translation(t: &Transform) -> Vector3<f64> {
    Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
}

pub fn transform_point(t: &Transform, p: &Vector3<f64>) -> Vector3<f64> {
    t.fixed_view::<3, 3>(0, 0) * p + translation(t)
}

pub fn translation_transform(p: Vector3<f64>) -> Transform {
    let mut t = Transform::identity();
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&p);
    t
}

/// Ordered links from the Root frame, optionally followed by a rigid tail.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    name: String,
    links: Vec<DhLink>,
    fixed_tail: Option<Transform>,
}

impl KinematicChain {
    pub fn new(name: impl Into<String>, links: Vec<DhLink>, fixed_tail: Option<Transform>) -> Result<Self> {
        let name = name.into();
        if links.is_empty() {
            return Err(Error::InvalidModel(format!("chain `{name}` has no links")));
        }
        if let Some(i) = links.iter().position(|l| !l.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "chain `{name}` link {} is not finite",
                i + 1
            )));
        }
        if let Some(tail) = &fixed_tail {
            if !is_rigid_transform(tail, 1e-9) {
                return Err(Error::InvalidModel(format!(
                    "chain `{name}` fixed tail is not a rigid transform"
                )));
            }
        }
        Ok(Self {
            name,
            links,
            fixed_tail,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn links(&self) -> &[DhLink] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn fixed_tail(&self) -> Option<&Transform> {
        self.fixed_tail.as_ref()
    }

    pub fn without_tail(&self) -> Self {
        Self {
            fixed_tail: None,
            ..self.clone()
        }
    }

    /// Splits into `links[..at]` and `links[at..]`; the tail goes with the suffix.
    pub fn split_at(&self, at: usize) -> Result<(Self, Self)> {
        if at == 0 || at >= self.links.len() {
            return Err(Error::InvalidModel(format!(
                "cannot split a {}-link chain at {at}",
                self.len()
            )));
        }
        let prefix = Self::new(format!("{}[..{at}]", self.name), self.links[..at].to_vec(), None)?;
        let suffix = Self::new(
            format!("{}[{at}..]", self.name),
            self.links[at..].to_vec(),
            self.fixed_tail,
        )?;
        Ok((prefix, suffix))
    }

    pub(crate) fn link_mut(&mut self, index: usize) -> &mut DhLink {
        &mut self.links[index]
    }
}

/// Joint angles for one chain, one per link (fixed links carry 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointAngles(pub Vec<f64>);

impl std::ops::Deref for JointAngles {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for JointAngles {
    fn from(v: Vec<f64>) -> Self {
        JointAngles(v)
    }
}

/// `A_1(q_1) ... A_n(q_n) * tail`.
pub fn forward_kinematics(chain: &KinematicChain, q: &[f64]) -> Result<Transform> {
    if q.len() != chain.links.len() {
        return Err(Error::Dimension {
            expected: chain.links.len(),
            actual: q.len(),
            context: "joint angles for chain",
        });
    }
    let mut t = chain
        .links
        .iter()
        .zip(q)
        .fold(Transform::identity(), |acc, (link, &qi)| acc * dh_transform(link, qi));
    if let Some(tail) = &chain.fixed_tail {
        t *= tail;
    }
    Ok(t)
}

pub fn end_effector_position(chain: &KinematicChain, q: &[f64]) -> Result<Vector3<f64>> {
    forward_kinematics(chain, q).map(|t| translation(&t))
}

/// Identifies one of the four chains of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChainId {
    #[serde(rename = "LA")]
    LeftArm,
    #[serde(rename = "RA")]
    RightArm,
    #[serde(rename = "LEye")]
    LeftEye,
    #[serde(rename = "REye")]
    RightEye,
}

impl ChainId {
    pub const ALL: [ChainId; 4] = [ChainId::LeftArm, ChainId::RightArm, ChainId::LeftEye, ChainId::RightEye];

    pub fn short_name(self) -> &'static str {
        match self {
            ChainId::LeftArm => "LA",
            ChainId::RightArm => "RA",
            ChainId::LeftEye => "LEye",
            ChainId::RightEye => "REye",
        }
    }

    pub fn is_arm(self) -> bool {
        matches!(self, ChainId::LeftArm | ChainId::RightArm)
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ChainId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "la" | "left_arm" | "leftarm" => Ok(ChainId::LeftArm),
            "ra" | "right_arm" | "rightarm" => Ok(ChainId::RightArm),
            "leye" | "left_eye" | "lefteye" => Ok(ChainId::LeftEye),
            "reye" | "right_eye" | "righteye" => Ok(ChainId::RightEye),
            _ => Err(Error::UnknownChain(s.to_string())),
        }
    }
}

/// Arm end-effector: the left palm or the right index fingertip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "LA")]
    Left,
    #[serde(rename = "RA")]
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    pub fn chain(self) -> ChainId {
        match self {
            Arm::Left => ChainId::LeftArm,
            Arm::Right => ChainId::RightArm,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.chain().short_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Eye {
    #[serde(rename = "LEye")]
    Left,
    #[serde(rename = "REye")]
    Right,
}

impl Eye {
    pub const BOTH: [Eye; 2] = [Eye::Left, Eye::Right];

    pub fn chain(self) -> ChainId {
        match self {
            Eye::Left => ChainId::LeftEye,
            Eye::Right => ChainId::RightEye,
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.chain().short_name())
    }
}

/// Number of leading eye-chain links shared by both eyes (Root-to-neck, neck
/// pitch/roll/yaw).
pub const SHARED_HEAD_LINKS: usize = 4;

/// Per-joint `[min, max]` ranges on the encoder angle `q`, one per link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub left_arm: Vec<[f64; 2]>,
    pub right_arm: Vec<[f64; 2]>,
    pub left_eye: Vec<[f64; 2]>,
    pub right_eye: Vec<[f64; 2]>,
}

impl JointLimits {
    pub fn get(&self, chain: ChainId) -> &[[f64; 2]] {
        match chain {
            ChainId::LeftArm => &self.left_arm,
            ChainId::RightArm => &self.right_arm,
            ChainId::LeftEye => &self.left_eye,
            ChainId::RightEye => &self.right_eye,
        }
    }

    pub fn contains(&self, chain: ChainId, q: &[f64]) -> bool {
        let lim = self.get(chain);
        lim.len() == q.len() && lim.iter().zip(q).all(|(r, &v)| v >= r[0] && v <= r[1])
    }
}

/// The four chains of the upper body plus camera intrinsics and joint limits.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub(crate) left_arm: KinematicChain,
    pub(crate) right_arm: KinematicChain,
    pub(crate) left_eye: KinematicChain,
    pub(crate) right_eye: KinematicChain,
    pub intrinsics: CameraIntrinsics,
    pub joint_limits: JointLimits,
}

impl RobotModel {
    pub fn new(
        left_arm: KinematicChain,
        right_arm: KinematicChain,
        left_eye: KinematicChain,
        right_eye: KinematicChain,
        intrinsics: CameraIntrinsics,
        joint_limits: JointLimits,
    ) -> Result<Self> {
        if left_eye.len() <= SHARED_HEAD_LINKS || right_eye.len() <= SHARED_HEAD_LINKS {
            return Err(Error::InvalidModel(format!(
                "eye chains need more than {SHARED_HEAD_LINKS} links"
            )));
        }
        if left_eye.links[..SHARED_HEAD_LINKS] != right_eye.links[..SHARED_HEAD_LINKS] {
            return Err(Error::InvalidModel(
                "left and right eye chains must share their first four links".into(),
            ));
        }
        let model = Self {
            left_arm,
            right_arm,
            left_eye,
            right_eye,
            intrinsics,
            joint_limits,
        };
        for id in ChainId::ALL {
            let n = model.chain(id).len();
            let m = model.joint_limits.get(id).len();
            if n != m {
                return Err(Error::InvalidModel(format!("{id}: {m} joint limits for {n} links")));
            }
        }
        intrinsics_check(&model.intrinsics)?;
        Ok(model)
    }

    pub fn chain(&self, id: ChainId) -> &KinematicChain {
        match id {
            ChainId::LeftArm => &self.left_arm,
            ChainId::RightArm => &self.right_arm,
            ChainId::LeftEye => &self.left_eye,
            ChainId::RightEye => &self.right_eye,
        }
    }

    pub fn left_arm(&self) -> &KinematicChain {
        &self.left_arm
    }

    pub fn right_arm(&self) -> &KinematicChain {
        &self.right_arm
    }

    pub fn left_eye(&self) -> &KinematicChain {
        &self.left_eye
    }

    pub fn right_eye(&self) -> &KinematicChain {
        &self.right_eye
    }

    /// Sets one DH value. Writes to a shared head link land in both eye chains.
    pub fn set_value(&mut self, chain: ChainId, link: usize, field: DhField, value: f64) {
        let shared = matches!(chain, ChainId::LeftEye | ChainId::RightEye) && link < SHARED_HEAD_LINKS;
        if shared {
            self.left_eye.link_mut(link).set(field, value);
            self.right_eye.link_mut(link).set(field, value);
        } else {
            let c = match chain {
                ChainId::LeftArm => &mut self.left_arm,
                ChainId::RightArm => &mut self.right_arm,
                ChainId::LeftEye => &mut self.left_eye,
                ChainId::RightEye => &mut self.right_eye,
            };
            c.link_mut(link).set(field, value);
        }
    }

    pub fn value(&self, chain: ChainId, link: usize, field: DhField) -> f64 {
        self.chain(chain).links[link].get(field)
    }

    /// Replaces a chain's fixed tail (used for the fingertip transform).
    pub fn with_tail(mut self, chain: ChainId, tail: Option<Transform>) -> Result<Self> {
        if let Some(t) = &tail {
            if !is_rigid_transform(t, 1e-9) {
                return Err(Error::InvalidModel("fixed tail is not a rigid transform".into()));
            }
        }
        match chain {
            ChainId::LeftArm => self.left_arm.fixed_tail = tail,
            ChainId::RightArm => self.right_arm.fixed_tail = tail,
            ChainId::LeftEye => self.left_eye.fixed_tail = tail,
            ChainId::RightEye => self.right_eye.fixed_tail = tail,
        }
        Ok(self)
    }
}

fn intrinsics_check(k: &CameraIntrinsics) -> Result<()> {
    k.validate()
}
