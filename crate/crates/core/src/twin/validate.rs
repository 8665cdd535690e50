use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{ModelDocument, SpaceKind, SpaceNode};

/// One broken invariant, with a machine-readable code and the path of the
/// offending node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: String,
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.path, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn codes(&self) -> Vec<&str> {
        self.issues.iter().map(|i| i.code.as_str()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

struct Pending {
    field: String,
    issue: ValidationIssue,
}

fn issue(path: String, field: &str, code: &str, message: String) -> Pending {
    Pending {
        field: field.to_string(),
        issue: ValidationIssue {
            code: code.to_string(),
            path: if field.is_empty() { path } else { format!("{path}.{field}") },
            message,
        },
    }
}

fn space_path(node: &SpaceNode) -> String {
    format!("spaces[{}]", node.space_id)
}

/// Checks every model invariant and reports all violations.
///
/// Space issues come first in depth-first tree order (nodes that are not
/// reachable from the root follow in document order), then people, then
/// processes. Within one node, issues are ordered by field name.
pub fn validate_model(doc: &ModelDocument) -> ValidationReport {
    let mut report = ValidationReport::default();
    let spaces = &doc.spaces;

    let mut first_index: HashMap<&str, usize> = HashMap::new();
    let mut per_node: Vec<Vec<Pending>> = (0..spaces.len()).map(|_| Vec::new()).collect();

    if spaces.is_empty() {
        report.issues.push(ValidationIssue {
            code: "no_root".into(),
            path: "spaces".into(),
            message: "model has no spaces".into(),
        });
    }

    for (i, node) in spaces.iter().enumerate() {
        if node.space_id.is_empty() {
            per_node[i].push(issue(format!("spaces#{i}"), "space_id", "empty_id", "space_id is empty".into()));
        }
        if first_index.contains_key(node.space_id.as_str()) {
            per_node[i].push(issue(
                space_path(node),
                "space_id",
                "duplicate_space_id",
                format!("space id {:?} already defined", node.space_id),
            ));
        } else {
            first_index.insert(node.space_id.as_str(), i);
        }
    }
    let is_canonical = |i: usize| first_index.get(spaces[i].space_id.as_str()) == Some(&i);

    let mut roots = Vec::new();
    let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, node) in spaces.iter().enumerate() {
        if !is_canonical(i) {
            continue;
        }
        match &node.parent {
            None => roots.push(i),
            Some(parent) => match first_index.get(parent.as_str()) {
                Some(&p) => children.entry(p).or_default().push(i),
                None => per_node[i].push(issue(
                    space_path(node),
                    "parent",
                    "dangling_parent",
                    format!("parent {parent:?} does not exist"),
                )),
            },
        }
    }

    if !spaces.is_empty() && roots.is_empty() {
        report.issues.push(ValidationIssue {
            code: "no_root".into(),
            path: "spaces".into(),
            message: "no space without a parent".into(),
        });
    }
    for &r in roots.iter().skip(1) {
        per_node[r].push(issue(
            space_path(&spaces[r]),
            "parent",
            "multiple_roots",
            format!("second root {:?}; the tree must have exactly one root", spaces[r].space_id),
        ));
    }
    if let Some(&root) = roots.first() {
        if spaces[root].kind != SpaceKind::Factory {
            per_node[root].push(issue(
                space_path(&spaces[root]),
                "kind",
                "root_not_factory",
                "the root space must be a factory".into(),
            ));
        }
    }

    // depth-first from each root, children in document order
    let mut order = Vec::with_capacity(spaces.len());
    let mut visited = vec![false; spaces.len()];
    for &root in &roots {
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            if visited[i] {
                continue;
            }
            visited[i] = true;
            order.push(i);
            if let Some(kids) = children.get(&i) {
                stack.extend(kids.iter().rev().copied());
            }
        }
    }
    for (i, node) in spaces.iter().enumerate() {
        if is_canonical(i) && !visited[i] && node.parent.as_ref().is_some_and(|p| first_index.contains_key(p.as_str())) {
            per_node[i].push(issue(
                space_path(node),
                "parent",
                "unreachable",
                "node is not reachable from the root (parent cycle)".into(),
            ));
        }
    }

    for (i, node) in spaces.iter().enumerate() {
        let path = space_path(node);
        if let Some(p) = node.parent.as_ref().and_then(|p| first_index.get(p.as_str())) {
            let parent_kind = spaces[*p].kind;
            let ok = match node.kind {
                SpaceKind::Factory => false,
                SpaceKind::Zone => parent_kind == SpaceKind::Factory,
                SpaceKind::Area => parent_kind != SpaceKind::Area,
            };
            if !ok {
                per_node[i].push(issue(
                    path.clone(),
                    "kind",
                    "kind_order",
                    format!("{:?} cannot be nested under {:?}", node.kind, parent_kind),
                ));
            }
        }
        match (&node.geometry, node.kind) {
            (None, SpaceKind::Area) => {
                per_node[i].push(issue(path.clone(), "geometry", "geometry_missing", "areas need a geometry".into()))
            }
            (Some(_), SpaceKind::Factory | SpaceKind::Zone) => per_node[i].push(issue(
                path.clone(),
                "geometry",
                "geometry_unexpected",
                "only areas carry geometry".into(),
            )),
            (Some(g), SpaceKind::Area) => {
                if !(g.width.is_finite() && g.height.is_finite() && g.width > 0.0 && g.height > 0.0) {
                    per_node[i].push(issue(
                        path.clone(),
                        "geometry",
                        "geometry_nonpositive",
                        format!("width {} and height {} must be positive", g.width, g.height),
                    ));
                }
            }
            (None, _) => {}
        }
        for (vtype, entry) in &node.policy {
            let field = format!("policy.{vtype}");
            if entry.rag_amber_min < 1 {
                per_node[i].push(issue(path.clone(), &field, "rag_amber_min_zero", "rag_amber_min must be at least 1".into()));
            }
            if entry.rag_red_min < entry.rag_amber_min {
                per_node[i].push(issue(
                    path.clone(),
                    &field,
                    "rag_threshold_order",
                    format!("rag_red_min {} is below rag_amber_min {}", entry.rag_red_min, entry.rag_amber_min),
                ));
            }
        }
    }

    let mut emitted = vec![false; spaces.len()];
    let trailing: Vec<usize> = (0..spaces.len()).filter(|i| !visited[*i]).collect();
    for i in order.into_iter().chain(trailing) {
        if emitted[i] {
            continue;
        }
        emitted[i] = true;
        let mut node_issues = std::mem::take(&mut per_node[i]);
        node_issues.sort_by(|a, b| a.field.cmp(&b.field));
        report.issues.extend(node_issues.into_iter().map(|p| p.issue));
    }

    let kind_of = |id: &str| first_index.get(id).map(|&i| spaces[i].kind);

    let mut badges = HashSet::new();
    for (i, person) in doc.people.iter().enumerate() {
        let path = if person.badge_id.is_empty() { format!("people#{i}") } else { format!("people[{}]", person.badge_id) };
        let mut issues = Vec::new();
        if person.badge_id.is_empty() {
            issues.push(issue(path.clone(), "badge_id", "empty_id", "badge_id is empty".into()));
        } else if !badges.insert(person.badge_id.as_str()) {
            issues.push(issue(
                path.clone(),
                "badge_id",
                "duplicate_badge",
                format!("badge {:?} already assigned", person.badge_id),
            ));
        }
        if kind_of(&person.home_space).is_none() {
            issues.push(issue(
                path,
                "home_space",
                "unknown_space",
                format!("home space {:?} does not exist", person.home_space),
            ));
        }
        issues.sort_by(|a, b| a.field.cmp(&b.field));
        report.issues.extend(issues.into_iter().map(|p| p.issue));
    }

    let mut process_ids = HashSet::new();
    for proc_def in &doc.processes {
        let path = format!("processes[{}]", proc_def.process_id);
        let mut issues = Vec::new();
        if !process_ids.insert(proc_def.process_id.as_str()) {
            issues.push(issue(
                path.clone(),
                "process_id",
                "duplicate_process_id",
                format!("process {:?} already defined", proc_def.process_id),
            ));
        }
        match kind_of(&proc_def.space) {
            None => issues.push(issue(
                path.clone(),
                "space",
                "unknown_space",
                format!("space {:?} does not exist", proc_def.space),
            )),
            Some(SpaceKind::Area) => {}
            Some(_) => issues.push(issue(
                path.clone(),
                "space",
                "process_space_not_area",
                format!("space {:?} is not an area", proc_def.space),
            )),
        }
        for (w, window) in proc_def.windows.iter().enumerate() {
            let field = format!("windows[{w}]");
            if !window.is_well_formed() {
                issues.push(issue(
                    path.clone(),
                    &field,
                    "window_invalid",
                    format!("window [{}, {}) is empty or past end of day", window.start, window.end),
                ));
            }
            if w > 0 && window.start < proc_def.windows[w - 1].end {
                issues.push(issue(
                    path.clone(),
                    &field,
                    "windows_overlap",
                    "windows must be sorted and non-overlapping".into(),
                ));
            }
        }
        let nominal = proc_def.nominal_activity_duration;
        if !(nominal.is_finite() && nominal > 0.0) {
            issues.push(issue(
                path,
                "nominal_activity_duration",
                "nominal_duration_invalid",
                format!("nominal duration {nominal} must be positive"),
            ));
        }
        issues.sort_by(|a, b| a.field.cmp(&b.field));
        report.issues.extend(issues.into_iter().map(|p| p.issue));
    }

    report
}
