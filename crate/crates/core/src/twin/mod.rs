//! The digital twin: a factory → zone → area tree of spaces, the staff
//! roster, the processes bound to areas, and per-space SOP policy.
//!
//! A [`TwinModel`] is immutable once built. Operations that change it
//! (overlay derivation, staff reassignment) return a new model.

mod overlay;
mod types;
mod validate;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::AnomalyEvent;
use crate::geom::{second_of_day, Geometry, Timestamp};

pub use overlay::{derive_model, ModelOverlay, PolicyPatch};
pub use types::{
    FormatKind, MealPlan, ModelDocument, Person, PolicyEntry, Priority, ProcessDef, SopPolicySet, SpaceKind,
    SpaceNode, TimeWindow, ViolationType, DEFAULT_AMBER_MIN, DEFAULT_RED_MIN,
};
pub use validate::{validate_model, ValidationIssue, ValidationReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model document: {0}")]
    Parse(String),
    #[error("model failed validation:\n{0}")]
    Validation(ValidationReport),
    #[error("overlay error: {0}")]
    Overlay(String),
    #[error("unknown space {0:?}")]
    UnknownSpace(String),
    #[error("unknown badge {0:?}")]
    UnknownBadge(String),
    #[error("space {0:?} is not an area")]
    InvalidTarget(String),
}

/// Where an event lands in the twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinBinding {
    pub space_id: String,
    /// Root first, the event's area last.
    pub ancestry: Vec<String>,
    pub active_processes: Vec<String>,
    pub policy: PolicyEntry,
}

#[derive(Debug, Clone)]
pub struct TwinModel {
    doc: ModelDocument,
    index: HashMap<String, usize>,
    dfs: Vec<usize>,
    badges: HashMap<String, usize>,
    processes_by_space: HashMap<String, Vec<usize>>,
}

impl PartialEq for TwinModel {
    fn eq(&self, other: &Self) -> bool {
        self.doc == other.doc
    }
}

/// Parses and validates a model document. Invalid documents are rejected,
/// never repaired.
pub fn load_model(bytes: &[u8]) -> Result<TwinModel, ModelError> {
    let doc: ModelDocument = serde_json::from_slice(bytes).map_err(|e| ModelError::Parse(e.to_string()))?;
    TwinModel::from_document(doc)
}

impl TwinModel {
    pub fn from_document(doc: ModelDocument) -> Result<Self, ModelError> {
        let report = validate_model(&doc);
        if !report.is_valid() {
            return Err(ModelError::Validation(report));
        }
        let index: HashMap<String, usize> =
            doc.spaces.iter().enumerate().map(|(i, s)| (s.space_id.clone(), i)).collect();

        let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
        let mut root = 0;
        for (i, s) in doc.spaces.iter().enumerate() {
            match &s.parent {
                Some(p) => children.entry(p.as_str()).or_default().push(i),
                None => root = i,
            }
        }
        let mut dfs = Vec::with_capacity(doc.spaces.len());
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            dfs.push(i);
            if let Some(kids) = children.get(doc.spaces[i].space_id.as_str()) {
                stack.extend(kids.iter().rev().copied());
            }
        }

        let badges = doc.people.iter().enumerate().map(|(i, p)| (p.badge_id.clone(), i)).collect();
        let mut processes_by_space: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, p) in doc.processes.iter().enumerate() {
            processes_by_space.entry(p.space.clone()).or_default().push(i);
        }
        Ok(TwinModel { doc, index, dfs, badges, processes_by_space })
    }

    pub fn document(&self) -> &ModelDocument {
        &self.doc
    }

    pub fn into_document(self) -> ModelDocument {
        self.doc
    }

    pub fn model_id(&self) -> &str {
        &self.doc.model_id
    }

    pub fn space(&self, id: &str) -> Option<&SpaceNode> {
        self.index.get(id).map(|&i| &self.doc.spaces[i])
    }

    fn require_space(&self, id: &str) -> Result<&SpaceNode, ModelError> {
        self.space(id).ok_or_else(|| ModelError::UnknownSpace(id.to_string()))
    }

    /// All spaces in depth-first order from the root.
    pub fn spaces_depth_first(&self) -> impl Iterator<Item = &SpaceNode> + '_ {
        self.dfs.iter().map(|&i| &self.doc.spaces[i])
    }

    pub fn areas(&self) -> impl Iterator<Item = &SpaceNode> + '_ {
        self.spaces_depth_first().filter(|s| s.kind == SpaceKind::Area)
    }

    pub fn area_count(&self) -> usize {
        self.areas().count()
    }

    pub fn geometry(&self, space_id: &str) -> Option<Geometry> {
        self.space(space_id).and_then(|s| s.geometry)
    }

    pub fn is_area(&self, space_id: &str) -> bool {
        self.space(space_id).is_some_and(|s| s.kind == SpaceKind::Area)
    }

    /// Space ids from the root down to `space_id` inclusive.
    pub fn ancestry(&self, space_id: &str) -> Result<Vec<String>, ModelError> {
        let mut path = Vec::new();
        let mut cur = Some(self.require_space(space_id)?);
        while let Some(node) = cur {
            path.push(node.space_id.clone());
            cur = node.parent.as_deref().and_then(|p| self.space(p));
        }
        path.reverse();
        Ok(path)
    }

    pub fn people(&self) -> &[Person] {
        &self.doc.people
    }

    pub fn person(&self, badge_id: &str) -> Option<&Person> {
        self.badges.get(badge_id).map(|&i| &self.doc.people[i])
    }

    pub fn processes(&self) -> &[ProcessDef] {
        &self.doc.processes
    }

    pub fn processes_in<'a>(&'a self, space_id: &str) -> impl Iterator<Item = &'a ProcessDef> + 'a {
        self.processes_by_space
            .get(space_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.doc.processes[i])
    }

    /// True if some process of the space has a window containing `ts`.
    pub fn in_operational_window(&self, space_id: &str, ts: Timestamp) -> bool {
        let sod = second_of_day(ts);
        self.processes_in(space_id).any(|p| p.windows.iter().any(|w| w.contains(sod)))
    }

    /// Effective policy: the space's own override, else the nearest
    /// ancestor's, else the default table.
    pub fn policy_for(&self, space_id: &str, vtype: ViolationType) -> Result<PolicyEntry, ModelError> {
        let mut cur = Some(self.require_space(space_id)?);
        while let Some(node) = cur {
            if let Some(entry) = node.policy.get(&vtype) {
                return Ok(*entry);
            }
            cur = node.parent.as_deref().and_then(|p| self.space(p));
        }
        Ok(PolicyEntry::default_for(vtype))
    }

    pub fn map_event(&self, event: &AnomalyEvent) -> Result<TwinBinding, ModelError> {
        let ancestry = self.ancestry(&event.space_id)?;
        let sod = second_of_day(event.timestamp);
        let active_processes = self
            .processes_in(&event.space_id)
            .filter(|p| p.windows.iter().any(|w| w.contains(sod)))
            .map(|p| p.process_id.clone())
            .collect();
        Ok(TwinBinding {
            space_id: event.space_id.clone(),
            ancestry,
            active_processes,
            policy: self.policy_for(&event.space_id, event.vtype)?,
        })
    }

    pub fn reassign_person(&self, badge_id: &str, new_space_id: &str) -> Result<TwinModel, ModelError> {
        let &idx = self.badges.get(badge_id).ok_or_else(|| ModelError::UnknownBadge(badge_id.to_string()))?;
        let target = self.require_space(new_space_id)?;
        if target.kind != SpaceKind::Area {
            return Err(ModelError::InvalidTarget(new_space_id.to_string()));
        }
        let mut next = self.clone();
        next.doc.people[idx].home_space = new_space_id.to_string();
        Ok(next)
    }
}
