//! Behavior class registry shared by data loading, training and the text branch.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// All known class names in canonical order.
pub const CANONICAL: [&str; 4] = ["arm_flapping", "head_banging", "spinning", "hand_action"];

/// The classes present in a dataset. Ids are assigned in canonical order, so a
/// subset is numbered densely from 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    /// All four behaviors.
    pub fn all() -> Self {
        Self {
            names: CANONICAL.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Classes occurring in `labels`, in canonical order. Unknown names fail.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut present = [false; 4];
        for l in labels {
            let i = CANONICAL
                .iter()
                .position(|c| *c == l)
                .ok_or_else(|| Error::Data(format!("unknown label {l:?}; expected one of {CANONICAL:?}")))?;
            present[i] = true;
        }
        Ok(Self {
            names: CANONICAL
                .iter()
                .zip(present)
                .filter(|(_, p)| *p)
                .map(|(n, _)| n.to_string())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Data(format!("label {name:?} is not in the class set {:?}", self.names)))
    }
}
