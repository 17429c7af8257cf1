//! Lifecycle ledger for object IDs. IDs are issued from a monotonic counter
//! and never reused; entries are deactivated, never removed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::ObjectId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("object id space exhausted (max {max})")]
    IdSpaceExhausted { max: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Click,
    Box,
    Text,
    Keyframe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub birth_frame: usize,
    pub provenance: Provenance,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRegistry {
    next_id: u32,
    entries: BTreeMap<ObjectId, RegistryEntry>,
}

impl Default for ObjectRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ObjectRegistry {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            entries: BTreeMap::new(),
        }
    }

    /// Issues the next fresh ID.
    pub fn issue(&mut self, birth_frame: usize, provenance: Provenance) -> Result<ObjectId, RegistryError> {
        if self.next_id > ObjectId::MAX as u32 {
            return Err(RegistryError::IdSpaceExhausted { max: ObjectId::MAX });
        }
        let id = ObjectId::new(self.next_id as u16).expect("counter starts at 1");
        self.next_id += 1;
        self.entries.insert(
            id,
            RegistryEntry {
                birth_frame,
                provenance,
                active: true,
            },
        );
        Ok(id)
    }

    /// The ID the next call to [`issue`](Self::issue) would return, if any.
    pub fn peek_next(&self) -> Option<u32> {
        (self.next_id <= ObjectId::MAX as u32).then_some(self.next_id)
    }

    pub fn get(&self, id: ObjectId) -> Option<&RegistryEntry> {
        self.entries.get(&id)
    }

    pub fn contains_label(&self, label: u16) -> bool {
        ObjectId::new(label).map(|id| self.entries.contains_key(&id)).unwrap_or(false)
    }

    pub fn set_active(&mut self, id: ObjectId, active: bool) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.active = active;
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (ObjectId, &RegistryEntry)> {
        self.entries.iter().map(|(id, e)| (*id, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[cfg(test)]
    pub(crate) fn with_next_id(next_id: u32) -> Self {
        Self {
            next_id,
            entries: BTreeMap::new(),
        }
    }
}
