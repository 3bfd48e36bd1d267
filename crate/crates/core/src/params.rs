//! Free/frozen masking of DH entries and the packed parameter vector seen by
//! the optimizer.
//!
//! The vector mixes units (mm for `a`/`d`, rad for `alpha`/`offset`) and is
//! not rescaled.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ChainId, DhField, RobotModel, SHARED_HEAD_LINKS};

/// Address of one scalar DH entry. `link` is 0-based. Shared head links are
/// always addressed through [`ChainId::LeftEye`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamKey {
    pub chain: ChainId,
    pub link: usize,
    pub field: DhField,
}

impl ParamKey {
    pub fn new(chain: ChainId, link: usize, field: DhField) -> Self {
        Self { chain, link, field }
    }

    /// Maps a right-eye head link onto its canonical left-eye key.
    pub fn canonical(self) -> Self {
        if self.chain == ChainId::RightEye && self.link < SHARED_HEAD_LINKS {
            Self {
                chain: ChainId::LeftEye,
                ..self
            }
        } else {
            self
        }
    }

    pub fn is_shared_head(&self) -> bool {
        matches!(self.chain, ChainId::LeftEye | ChainId::RightEye) && self.link < SHARED_HEAD_LINKS
    }
}

impl fmt::Display for ParamKey {
    /// `LA.4.a`, with a 1-based link number; shared head links print as `Head`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chain = if self.is_shared_head() {
            "Head"
        } else {
            self.chain.short_name()
        };
        write!(f, "{chain}.{}.{}", self.link + 1, self.field)
    }
}

impl FromStr for ParamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('.').collect();
        let [chain, link, field] = parts[..] else {
            return Err(Error::Config(format!("parameter key `{s}` is not CHAIN.LINK.FIELD")));
        };
        let chain = if chain.eq_ignore_ascii_case("head") {
            ChainId::LeftEye
        } else {
            chain.parse()?
        };
        let link: usize = link
            .parse()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| Error::Config(format!("bad link number in `{s}`")))?;
        Ok(Self::new(chain, link - 1, field.parse()?).canonical())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub key: ParamKey,
    pub free: bool,
}

/// One entry per distinct DH scalar of the model, in a fixed order:
/// LA, RA, LEye (shared head links first), REye (non-shared links only);
/// within a link `a, d, alpha, offset`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterMask {
    entries: Vec<MaskEntry>,
}

/// Every addressable key of the model in canonical mask order.
pub fn model_keys(model: &RobotModel) -> Vec<ParamKey> {
    let mut keys = Vec::new();
    for chain in ChainId::ALL {
        let start = if chain == ChainId::RightEye {
            SHARED_HEAD_LINKS
        } else {
            0
        };
        for link in start..model.chain(chain).len() {
            for field in DhField::ALL {
                keys.push(ParamKey::new(chain, link, field));
            }
        }
    }
    keys
}

/// Entries that are never calibrated: the first (Root-attached) link of every
/// chain and `alpha` of the last arm link (orientation is not observed).
pub fn is_structurally_frozen(model: &RobotModel, key: &ParamKey) -> bool {
    if key.link == 0 {
        return true;
    }
    key.chain.is_arm() && key.field == DhField::Alpha && key.link + 1 == model.chain(key.chain).len()
}

impl ParameterMask {
    /// All entries frozen.
    pub fn frozen(model: &RobotModel) -> Self {
        Self {
            entries: model_keys(model)
                .into_iter()
                .map(|key| MaskEntry { key, free: false })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[MaskEntry] {
        &self.entries
    }

    pub fn free_keys(&self) -> Vec<ParamKey> {
        self.entries.iter().filter(|e| e.free).map(|e| e.key).collect()
    }

    pub fn free_count(&self) -> usize {
        self.entries.iter().filter(|e| e.free).count()
    }

    pub fn is_free(&self, key: &ParamKey) -> bool {
        let key = key.canonical();
        self.entries.iter().any(|e| e.key == key && e.free)
    }

    /// Sets the flag of one entry, bypassing the structural freezing rules.
    pub fn set_free(&mut self, key: ParamKey, free: bool) -> Result<()> {
        let key = key.canonical();
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.key == key)
            .ok_or_else(|| Error::Config(format!("no mask entry {key}")))?;
        entry.free = free;
        Ok(())
    }

    /// Chains with at least one free entry (a free shared head link counts
    /// for both eyes).
    pub fn touched_chains(&self) -> BTreeSet<ChainId> {
        let mut out = BTreeSet::new();
        for e in self.entries.iter().filter(|e| e.free) {
            out.insert(e.key.chain);
            if e.key.is_shared_head() {
                out.insert(ChainId::RightEye);
            }
        }
        out
    }
}

/// Chains x fields groups plus explicit per-entry overrides, e.g.
/// `LA:all`, `LA,RA:offset`, `all:all`, `LA:all+LEye:a,d`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub groups: Vec<SelectionGroup>,
    #[serde(default)]
    pub overrides: Vec<(ParamKey, bool)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionGroup {
    pub chains: BTreeSet<ChainId>,
    pub fields: BTreeSet<DhField>,
}

impl Selection {
    pub fn chains(chains: &[ChainId], fields: &[DhField]) -> Self {
        Self {
            groups: vec![SelectionGroup {
                chains: chains.iter().copied().collect(),
                fields: fields.iter().copied().collect(),
            }],
            overrides: Vec::new(),
        }
    }

    pub fn all_fields(chains: &[ChainId]) -> Self {
        Self::chains(chains, &DhField::ALL)
    }

    fn selects(&self, key: &ParamKey) -> bool {
        self.groups.iter().any(|g| {
            g.fields.contains(&key.field)
                && (g.chains.contains(&key.chain)
                    || (key.is_shared_head()
                        && (g.chains.contains(&ChainId::LeftEye) || g.chains.contains(&ChainId::RightEye))))
        })
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut sel = Selection::default();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(sel);
        }
        for group in s.split('+') {
            let (chains, fields) = group
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("mask group `{group}` is not CHAINS:FIELDS")))?;
            let chains: BTreeSet<ChainId> = if chains.trim().eq_ignore_ascii_case("all") {
                ChainId::ALL.into_iter().collect()
            } else {
                chains.split(',').map(str::parse).collect::<Result<_>>()?
            };
            let fields: BTreeSet<DhField> = if fields.trim().eq_ignore_ascii_case("all") {
                DhField::ALL.into_iter().collect()
            } else {
                fields.split(',').map(str::parse).collect::<Result<_>>()?
            };
            sel.groups.push(SelectionGroup { chains, fields });
        }
        Ok(sel)
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.groups.is_empty() {
            return f.write_str("none");
        }
        let groups: Vec<String> = self
            .groups
            .iter()
            .map(|g| {
                let chains = if g.chains.len() == 4 {
                    "all".to_string()
                } else {
                    g.chains.iter().map(|c| c.short_name()).collect::<Vec<_>>().join(",")
                };
                let fields = if g.fields.len() == 4 {
                    "all".to_string()
                } else {
                    g.fields.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
                };
                format!("{chains}:{fields}")
            })
            .collect();
        f.write_str(&groups.join("+"))
    }
}

/// Mask with `free = true` exactly for the selected entries minus the
/// structurally frozen set; overrides are applied last.
pub fn default_mask(model: &RobotModel, selection: &Selection) -> Result<ParameterMask> {
    let mut mask = ParameterMask::frozen(model);
    for entry in &mut mask.entries {
        entry.free = selection.selects(&entry.key) && !is_structurally_frozen(model, &entry.key);
    }
    for (key, free) in &selection.overrides {
        mask.set_free(*key, *free)?;
    }
    Ok(mask)
}

/// Free values in mask order, together with their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Vec<ParamKey>,
}

impl ParameterVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn pack(model: &RobotModel, mask: &ParameterMask) -> ParameterVector {
    let layout = mask.free_keys();
    let values = layout.iter().map(|k| model.value(k.chain, k.link, k.field)).collect();
    ParameterVector { values, layout }
}

/// Writes `values` into a copy of `model`; shared head entries go to both eyes.
pub fn unpack(model: &RobotModel, mask: &ParameterMask, values: &[f64]) -> Result<RobotModel> {
    let keys = mask.free_keys();
    if keys.len() != values.len() {
        return Err(Error::Dimension {
            expected: keys.len(),
            actual: values.len(),
            context: "parameter vector for mask",
        });
    }
    let mut out = model.clone();
    for (k, &v) in keys.iter().zip(values) {
        out.set_value(k.chain, k.link, k.field, v);
    }
    Ok(out)
}

/// Additive perturbation for one draw `u` in `[-1, 1]`: `p/100 * u` rad for
/// offsets, `p/1000 * u` rad for alpha, `0.1 * p * u` mm for `a` and `d`.
pub fn perturbation_delta(field: DhField, p: f64, u: f64) -> f64 {
    match field {
        DhField::Offset => p / 100.0 * u,
        DhField::Alpha => p / 1000.0 * u,
        DhField::A | DhField::D => 0.1 * p * u,
    }
}

/// Perturbs every free entry by [`perturbation_delta`] with `u ~ U[-1, 1]`.
/// Draws are taken in mask order, one per free entry.
pub fn perturb<R: Rng + ?Sized>(model: &RobotModel, mask: &ParameterMask, p: f64, rng: &mut R) -> RobotModel {
    assert!(p >= 0.0, "perturbation factor must be non-negative");
    let mut out = model.clone();
    for k in mask.free_keys() {
        let u: f64 = rng.random_range(-1.0..=1.0);
        let v = model.value(k.chain, k.link, k.field) + perturbation_delta(k.field, p, u);
        out.set_value(k.chain, k.link, k.field, v);
    }
    out
}
