//! Situation templates, role casting and instance bookkeeping.
//!
//! The manager side that talks to NPCs lives in the world; this module holds
//! the parts that do not need world access, most importantly the role
//! casting solver.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::bt::NodeDef;
use crate::registry;
use crate::value::{LockCtxId, NpcId, SituationId, Value};

/// One conjunct of a role condition, evaluated against NPC attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Value>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Value>) -> Self {
        Atom { predicate: predicate.to_string(), args }
    }

    /// Unknown predicates never hold.
    pub fn holds(&self, attrs: &BTreeMap<String, Value>) -> bool {
        let arg_str = |i: usize| self.args.get(i).and_then(|v| v.as_str().map(str::to_string));
        let attr = |name: Option<String>| name.and_then(|n| attrs.get(&n).cloned());
        match self.predicate.as_str() {
            "true" => true,
            "false" => false,
            "attr-is" => attr(arg_str(0)).is_some_and(|v| Some(&v) == self.args.get(1)),
            "attr-ge" | "attr-lt" => {
                let (Some(have), Some(want)) = (attr(arg_str(0)).and_then(|v| v.as_num()), self.args.get(1).and_then(|v| v.as_num()))
                else {
                    return false;
                };
                if self.predicate == "attr-ge" {
                    have >= want
                } else {
                    have < want
                }
            }
            "has-attr" => attr(arg_str(0)).is_some_and(|v| v.truthy()),
            "is-drunk" => attrs.get("drunkenness").and_then(|v| v.as_num()).is_some_and(|d| d >= registry::DRUNK_LEVEL),
            "wealth-is" => attrs.get("wealth").is_some_and(|v| Some(v) == self.args.first()),
            "has-key" => attrs.get("key").is_some_and(|v| v.truthy()),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleDef {
    pub name: String,
    pub when: Vec<Atom>,
    pub tree: Arc<NodeDef>,
    pub line: u32,
}

impl RoleDef {
    pub fn admits(&self, attrs: &BTreeMap<String, Value>) -> bool {
        self.when.iter().all(|a| a.holds(attrs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SituationTemplate {
    pub name: String,
    pub roles: Vec<RoleDef>,
    pub weight: u32,
    pub cooldown: u64,
    /// Area template the situation is bound to.
    pub area: Option<String>,
    pub solo: bool,
    pub line: u32,
}

/// Finds an injective assignment of candidates to roles such that
/// `fits(role, candidate)` holds for every pair.
///
/// Backtracking over roles in declaration order, candidates tried in index
/// order, with forward checking: after each assignment every later role must
/// keep at least one unused candidate. Complete: returns `None` only when no
/// assignment exists.
pub fn cast_roles(roles: usize, candidates: usize, fits: &dyn Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    if roles > candidates {
        return None;
    }
    let domains: Vec<Vec<usize>> = (0..roles).map(|r| (0..candidates).filter(|&c| fits(r, c)).collect()).collect();
    if domains.iter().any(|d| d.is_empty()) {
        return None;
    }
    let mut used = vec![false; candidates];
    let mut assignment = Vec::with_capacity(roles);
    if search(&domains, &mut used, &mut assignment) {
        Some(assignment)
    } else {
        None
    }
}

fn search(domains: &[Vec<usize>], used: &mut [bool], assignment: &mut Vec<usize>) -> bool {
    let role = assignment.len();
    if role == domains.len() {
        return true;
    }
    for &c in &domains[role] {
        if used[c] {
            continue;
        }
        used[c] = true;
        assignment.push(c);
        let viable = domains[role + 1..].iter().all(|d| d.iter().any(|&o| !used[o]));
        if viable && search(domains, used, assignment) {
            return true;
        }
        assignment.pop();
        used[c] = false;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParticipantStatus {
    NotStarted,
    Started,
    /// Role tree finished; waiting for the other participants.
    Finished,
    Dropped,
}

impl ParticipantStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParticipantStatus::NotStarted => "not-started",
            ParticipantStatus::Started => "started",
            ParticipantStatus::Finished => "finished",
            ParticipantStatus::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SituationInstance {
    pub id: SituationId,
    pub template: usize,
    /// Role name and participant, in role order.
    pub assignment: Vec<(String, NpcId)>,
    pub status: BTreeMap<NpcId, ParticipantStatus>,
    pub lock_ctx: LockCtxId,
    pub created: u64,
}

impl SituationInstance {
    pub fn participants(&self) -> impl Iterator<Item = NpcId> + '_ {
        self.assignment.iter().map(|(_, n)| *n)
    }

    pub fn all_finished(&self) -> bool {
        self.status.values().all(|s| *s == ParticipantStatus::Finished)
    }

    pub fn all_dropped(&self) -> bool {
        self.status.values().all(|s| *s == ParticipantStatus::Dropped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn brawl_casts_the_drunk_as_aggressor() {
        let sober = attrs(&[("drunkenness", Value::Num(0))]);
        let drunk = attrs(&[("drunkenness", Value::Num(5))]);
        let people = [sober, drunk];
        let roles = [vec![Atom::new("is-drunk", vec![])], vec![]];
        let fits = |r: usize, c: usize| roles[r].iter().all(|a| a.holds(&people[c]));
        assert_eq!(cast_roles(2, 2, &fits), Some(vec![1, 0]));
    }

    #[test]
    fn pigeonhole_is_infeasible() {
        assert_eq!(cast_roles(3, 2, &|_, _| true), None);
    }

    #[test]
    fn forward_checking_backtracks() {
        // role 0 accepts 0 or 1, role 1 accepts only 0: greedy would fail.
        let fits = |r: usize, c: usize| if r == 0 { c <= 1 } else { c == 0 };
        assert_eq!(cast_roles(2, 3, &fits), Some(vec![1, 0]));
    }

    #[test]
    fn atoms_compare_attributes() {
        let a = attrs(&[("wealth", Value::Str("rich".into())), ("rank", Value::Num(3))]);
        assert!(Atom::new("wealth-is", vec![Value::Str("rich".into())]).holds(&a));
        assert!(Atom::new("attr-ge", vec![Value::Str("rank".into()), Value::Num(3)]).holds(&a));
        assert!(!Atom::new("attr-lt", vec![Value::Str("rank".into()), Value::Num(3)]).holds(&a));
        assert!(!Atom::new("no-such", vec![]).holds(&a));
    }
}
