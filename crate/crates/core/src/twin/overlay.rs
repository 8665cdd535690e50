use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::types::{FormatKind, MealPlan, ModelDocument, PolicyEntry, ProcessDef, SpaceNode, ViolationType};
use super::{ModelError, TwinModel};

/// Field-level policy change; unset fields keep the value that was in
/// effect for the space before the overlay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<super::Priority>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_amber_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_red_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

impl PolicyPatch {
    fn apply(&self, base: PolicyEntry) -> PolicyEntry {
        PolicyEntry {
            priority: self.priority.unwrap_or(base.priority),
            rag_amber_min: self.rag_amber_min.unwrap_or(base.rag_amber_min),
            rag_red_min: self.rag_red_min.unwrap_or(base.rag_red_min),
            enabled: self.enabled.unwrap_or(base.enabled),
        }
    }
}

/// Changes that turn a template model into a site-specific one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverlay {
    #[serde(default)]
    pub add_spaces: Vec<SpaceNode>,
    #[serde(default)]
    pub remove_space_ids: Vec<String>,
    #[serde(default)]
    pub policy_overrides: BTreeMap<String, BTreeMap<ViolationType, PolicyPatch>>,
    #[serde(default)]
    pub process_replacements: Vec<ProcessDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_kind: Option<FormatKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meal_plan: Option<MealPlan>,
}

fn effective_policy(doc: &ModelDocument, space_id: &str, vtype: ViolationType) -> PolicyEntry {
    let mut cur = doc.spaces.iter().find(|s| s.space_id == space_id);
    let mut hops = 0;
    while let Some(node) = cur {
        if let Some(entry) = node.policy.get(&vtype) {
            return *entry;
        }
        hops += 1;
        if hops > doc.spaces.len() {
            break;
        }
        cur = node.parent.as_deref().and_then(|p| doc.spaces.iter().find(|s| s.space_id == p));
    }
    PolicyEntry::default_for(vtype)
}

/// Applies `overlay` to a copy of `template`: adds, then removes, then
/// policy overrides and process replacements.
///
/// Removing a space removes its whole subtree and every process bound to
/// it. Staff homed in a removed space are left alone and surface as a
/// validation error, so overlays must reassign them explicitly.
pub fn derive_model(template: &TwinModel, overlay: &ModelOverlay) -> Result<TwinModel, ModelError> {
    let mut doc = template.document().clone();

    doc.spaces.extend(overlay.add_spaces.iter().cloned());

    let root_id = doc.spaces.iter().find(|s| s.parent.is_none()).map(|s| s.space_id.clone());
    for id in &overlay.remove_space_ids {
        if Some(id) == root_id.as_ref() {
            return Err(ModelError::Overlay(format!("cannot remove the root space {id:?}")));
        }
        if !doc.spaces.iter().any(|s| &s.space_id == id) {
            return Err(ModelError::Overlay(format!("cannot remove unknown space {id:?}")));
        }
        let mut doomed: HashSet<String> = HashSet::from([id.clone()]);
        loop {
            let before = doomed.len();
            for s in &doc.spaces {
                if s.parent.as_ref().is_some_and(|p| doomed.contains(p)) {
                    doomed.insert(s.space_id.clone());
                }
            }
            if doomed.len() == before {
                break;
            }
        }
        doc.spaces.retain(|s| !doomed.contains(&s.space_id));
        doc.processes.retain(|p| !doomed.contains(&p.space));
    }

    for (space_id, patches) in &overlay.policy_overrides {
        if !doc.spaces.iter().any(|s| &s.space_id == space_id) {
            return Err(ModelError::Overlay(format!("policy override targets unknown space {space_id:?}")));
        }
        let resolved: Vec<(ViolationType, PolicyEntry)> = patches
            .iter()
            .map(|(vtype, patch)| (*vtype, patch.apply(effective_policy(&doc, space_id, *vtype))))
            .collect();
        let node = doc.spaces.iter_mut().find(|s| &s.space_id == space_id).expect("checked above");
        node.policy.extend(resolved);
    }

    for replacement in &overlay.process_replacements {
        match doc.processes.iter_mut().find(|p| p.process_id == replacement.process_id) {
            Some(existing) => *existing = replacement.clone(),
            None => doc.processes.push(replacement.clone()),
        }
    }

    if let Some(kind) = overlay.format_kind {
        doc.format_kind = kind;
    }
    if let Some(plan) = overlay.meal_plan {
        doc.meal_plan = plan;
    }

    TwinModel::from_document(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::twin::tests::small_doc;
    use crate::twin::{Priority, TimeWindow};
    use serde_json::Value;

    /// Every JSON path at which two documents differ.
    fn diff(a: &Value, b: &Value, path: String, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: std::collections::BTreeSet<_> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    diff(x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null), format!("{path}/{k}"), out);
                }
            }
            (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
                for (i, (p, q)) in x.iter().zip(y).enumerate() {
                    diff(p, q, format!("{path}/{i}"), out);
                }
            }
            _ if a != b => out.push(path),
            _ => {}
        }
    }

    #[test]
    fn empty_overlay_is_identity() {
        let template = TwinModel::from_document(small_doc()).unwrap();
        let derived = derive_model(&template, &ModelOverlay::default()).unwrap();
        assert_eq!(derived, template);
    }

    #[test]
    fn meal_plan_and_process_only() {
        let template = TwinModel::from_document(small_doc()).unwrap();
        let snapshot = template.document().clone();
        let mut replaced = template.processes()[0].clone();
        replaced.windows[0] = TimeWindow { start: 20_000, end: 30_000 };
        let overlay = ModelOverlay {
            meal_plan: Some(MealPlan::North),
            process_replacements: vec![replaced],
            ..Default::default()
        };
        let derived = derive_model(&template, &overlay).unwrap();
        let mut paths = Vec::new();
        diff(
            &serde_json::to_value(template.document()).unwrap(),
            &serde_json::to_value(derived.document()).unwrap(),
            String::new(),
            &mut paths,
        );
        assert_eq!(
            paths,
            vec!["/meal_plan", "/processes/0/windows/0/end", "/processes/0/windows/0/start"],
        );
        assert_eq!(template.document(), &snapshot);
    }

    #[test]
    fn removing_root_is_rejected() {
        let template = TwinModel::from_document(small_doc()).unwrap();
        let overlay = ModelOverlay { remove_space_ids: vec!["f".into()], ..Default::default() };
        assert!(matches!(derive_model(&template, &overlay), Err(ModelError::Overlay(_))));
    }

    #[test]
    fn override_on_unknown_space_is_rejected() {
        let template = TwinModel::from_document(small_doc()).unwrap();
        let mut overlay = ModelOverlay::default();
        overlay.policy_overrides.insert("ghost".into(), BTreeMap::from([(ViolationType::Mopping, PolicyPatch::default())]));
        assert!(matches!(derive_model(&template, &overlay), Err(ModelError::Overlay(_))));
    }

    #[test]
    fn add_then_remove_then_override() {
        let template = TwinModel::from_document(small_doc()).unwrap();
        let new_area: SpaceNode = serde_json::from_value(serde_json::json!({
            "space_id": "milk-plant", "name": "Milk plant", "kind": "area", "parent": "z",
            "geometry": {"width": 5.0, "height": 5.0}
        }))
        .unwrap();
        let mut overlay = ModelOverlay {
            add_spaces: vec![new_area],
            remove_space_ids: vec!["seasoning".into()],
            format_kind: Some(FormatKind::Centralized),
            ..Default::default()
        };
        overlay.policy_overrides.insert(
            "milk-plant".into(),
            BTreeMap::from([(ViolationType::FaceMask, PolicyPatch { rag_amber_min: Some(2), ..Default::default() })]),
        );
        let derived = derive_model(&template, &overlay).unwrap();
        assert!(derived.space("seasoning").is_none());
        let entry = derived.policy_for("milk-plant", ViolationType::FaceMask).unwrap();
        assert_eq!(entry.rag_amber_min, 2);
        assert_eq!(entry.rag_red_min, 4);
        assert_eq!(entry.priority, Priority::DelayTolerant);
        assert_eq!(derived.document().format_kind, FormatKind::Centralized);
    }

    #[test]
    fn removing_a_zone_strands_its_staff() {
        let template = TwinModel::from_document(small_doc()).unwrap();
        let overlay = ModelOverlay { remove_space_ids: vec!["z".into()], ..Default::default() };
        let err = derive_model(&template, &overlay).unwrap_err();
        let ModelError::Validation(report) = err else { panic!("expected validation error") };
        assert!(report.codes().iter().all(|c| *c == "unknown_space"));
        assert_eq!(report.issues.len(), 2);
    }
}
