//! The per-NPC decision shell: subbrains in fixed priority order, the
//! injection stack, situation slot, subscription count and day cycle.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::bt::{DropPolicy, Node, NodeDef, TreeContext};
use crate::value::{Cell, EntityRef, InstanceId, LockCtxId, NpcId, SituationId, Value};

/// Subbrain priorities; a higher index wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subbrain {
    Ambient = 0,
    Situation = 1,
    Quest = 2,
    Combat = 3,
}

impl Subbrain {
    pub const ALL: [Subbrain; 4] = [Subbrain::Ambient, Subbrain::Situation, Subbrain::Quest, Subbrain::Combat];

    pub fn as_str(self) -> &'static str {
        match self {
            Subbrain::Ambient => "ambient",
            Subbrain::Situation => "situation",
            Subbrain::Quest => "quest",
            Subbrain::Combat => "combat",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Highest-priority subbrain whose flag is raised. Ambient is always on.
pub fn select_subbrain(combat: bool, quest: bool, situation: bool) -> Subbrain {
    if combat {
        Subbrain::Combat
    } else if quest {
        Subbrain::Quest
    } else if situation {
        Subbrain::Situation
    } else {
        Subbrain::Ambient
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowTarget {
    /// The innermost area, with parent fallback.
    Area,
    /// A named smart-entity instance.
    Instance(String),
}

/// One entry of a day cycle, in minutes of the day, `[from, to)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub from: u32,
    pub to: u32,
    pub target: WindowTarget,
    pub behavior: String,
    pub general: bool,
    pub line: u32,
}

impl Window {
    pub fn contains(&self, minute: u32) -> bool {
        if self.from <= self.to {
            minute >= self.from && minute < self.to
        } else {
            minute >= self.from || minute < self.to
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpcTemplate {
    pub name: String,
    pub attrs: Vec<(String, Value)>,
    pub ambient: Arc<NodeDef>,
    pub combat: Option<Arc<NodeDef>>,
    pub quest: Option<Arc<NodeDef>>,
    pub windows: Vec<Window>,
    pub inboxes: Vec<(String, Option<usize>)>,
    pub line: u32,
}

impl NpcTemplate {
    pub fn tree(&self, s: Subbrain) -> Option<&Arc<NodeDef>> {
        match s {
            Subbrain::Ambient => Some(&self.ambient),
            Subbrain::Combat => self.combat.as_ref(),
            Subbrain::Quest => self.quest.as_ref(),
            Subbrain::Situation => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Posture {
    Standing,
    Seated(InstanceId),
}

/// One live grant held by the NPC.
#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    pub serial: u64,
    pub source: InstanceId,
    pub behavior: String,
    /// Number of enclosing injected scopes at grant time.
    pub depth: usize,
    pub drop: DropPolicy,
    pub is_area: bool,
    pub inboxes: Vec<String>,
    pub grant_tick: u64,
}

/// An armed situation subbrain.
#[derive(Debug)]
pub struct Slot {
    pub situation: SituationId,
    pub role: String,
    pub tree: Node,
    pub peers: Vec<NpcId>,
    pub lock_ctx: LockCtxId,
    pub finished: bool,
}

/// Trees and variables of an NPC; moved out of the NPC while it updates.
#[derive(Debug)]
pub struct NpcBrain {
    pub trees: [Option<Node>; 4],
    pub ctx: TreeContext,
    pub slot: Option<Slot>,
}

impl NpcBrain {
    pub fn new(npc: NpcId) -> Self {
        NpcBrain { trees: [None, None, None, None], ctx: TreeContext::new(crate::value::OwnerId::Npc(npc)), slot: None }
    }

    pub fn all_fresh(&self) -> bool {
        self.trees.iter().flatten().all(|t| t.is_pristine()) && self.slot.as_ref().is_none_or(|s| s.tree.is_pristine())
    }
}

/// A day-cycle override installed by a quest object.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub source: EntityRef,
    pub behavior: String,
}

#[derive(Debug)]
pub struct Npc {
    pub id: NpcId,
    pub name: String,
    pub template: Arc<NpcTemplate>,
    pub pos: Cell,
    pub posture: Posture,
    pub attrs: BTreeMap<String, Value>,
    pub combat: bool,
    pub quest: bool,
    /// `None` while the NPC is being updated.
    pub brain: Option<NpcBrain>,
    pub active: Option<Subbrain>,
    pub stack: Vec<StackEntry>,
    pub subscription: u32,
    pub in_situation: Option<SituationId>,
    /// Overrides per day-cycle window index.
    pub overrides: BTreeMap<usize, Override>,
    pub window: Option<usize>,
    /// Grants to drop at the next update (drop policies).
    pub pending_drops: Vec<u64>,
    /// Areas containing the NPC after the last world phase, innermost first.
    pub areas: Vec<InstanceId>,
    pub rng: ChaCha8Rng,
    pub line: u32,
}

impl Npc {
    pub fn is_player(&self) -> bool {
        self.attrs.get("player").is_some_and(|v| v.truthy())
    }

    pub fn has_key(&self) -> bool {
        self.attrs.get("key").is_some_and(|v| v.truthy())
    }

    pub fn current_window(&self, minute: u32) -> Option<usize> {
        self.template.windows.iter().position(|w| w.contains(minute))
    }

    pub fn holds(&self, source: InstanceId, behavior: &str) -> bool {
        self.stack.iter().any(|e| e.source == source && e.behavior == behavior)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_order() {
        assert_eq!(select_subbrain(false, false, false), Subbrain::Ambient);
        assert_eq!(select_subbrain(false, false, true), Subbrain::Situation);
        assert_eq!(select_subbrain(false, true, true), Subbrain::Quest);
        assert_eq!(select_subbrain(true, true, true), Subbrain::Combat);
    }

    #[test]
    fn windows_wrap_midnight() {
        let w = Window { from: 1320, to: 360, target: WindowTarget::Area, behavior: "sleep".into(), general: false, line: 0 };
        assert!(w.contains(1400));
        assert!(w.contains(10));
        assert!(!w.contains(700));
    }
}
