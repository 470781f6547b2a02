//! In-flight durational actions.

use std::collections::{BTreeMap, BTreeSet};

use crate::bt::{ActionHandle, ActionState};
use crate::registry::Effect;
use crate::value::{NpcId, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct InFlight {
    pub handle: ActionHandle,
    pub owner: NpcId,
    pub name: &'static str,
    pub effect: Effect,
    pub params: Vec<(String, Value)>,
    pub remaining: u32,
    /// The issuing node already succeeded; nobody will read the result.
    pub tail: bool,
    pub started: u64,
}

impl InFlight {
    pub fn param(&self, name: &str) -> Option<&Value> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }
}

#[derive(Debug, Default)]
pub struct ActionQueue {
    next: ActionHandle,
    live: BTreeMap<ActionHandle, InFlight>,
    results: BTreeMap<ActionHandle, bool>,
    by_owner: BTreeSet<(NpcId, ActionHandle)>,
}

impl ActionQueue {
    pub fn issue(
        &mut self,
        owner: NpcId,
        name: &'static str,
        effect: Effect,
        params: Vec<(String, Value)>,
        dur: u32,
        now: u64,
    ) -> ActionHandle {
        self.next += 1;
        let handle = self.next;
        self.by_owner.insert((owner, handle));
        self.live.insert(handle, InFlight { handle, owner, name, effect, params, remaining: dur, tail: false, started: now });
        handle
    }

    /// Terminal states are reported once and then forgotten.
    pub fn state(&mut self, h: ActionHandle) -> ActionState {
        if let Some(a) = self.live.get(&h) {
            return ActionState::Pending { remaining: a.remaining };
        }
        match self.results.remove(&h) {
            Some(true) | None => ActionState::Completed,
            Some(false) => ActionState::Failed,
        }
    }

    pub fn mark_tail(&mut self, h: ActionHandle) {
        if let Some(a) = self.live.get_mut(&h) {
            a.tail = true;
        }
        self.results.remove(&h);
    }

    /// Removes an in-flight action without recording a result.
    pub fn take(&mut self, h: ActionHandle) -> Option<InFlight> {
        self.results.remove(&h);
        let a = self.live.remove(&h)?;
        self.by_owner.remove(&(a.owner, h));
        Some(a)
    }

    pub fn tails_of(&self, owner: NpcId) -> Vec<ActionHandle> {
        self.live_of(owner).filter(|a| a.tail).map(|a| a.handle).collect()
    }

    pub fn live_of(&self, owner: NpcId) -> impl Iterator<Item = &InFlight> {
        self.by_owner.range((owner, ActionHandle::MIN)..=(owner, ActionHandle::MAX)).filter_map(|(_, h)| self.live.get(h))
    }

    /// Advances every action by one tick and returns those that completed,
    /// in issue order.
    pub fn advance(&mut self) -> Vec<InFlight> {
        let mut done = Vec::new();
        for a in self.live.values_mut() {
            a.remaining = a.remaining.saturating_sub(1);
            if a.remaining == 0 {
                done.push(a.handle);
            }
        }
        let out: Vec<InFlight> = done.into_iter().filter_map(|h| self.live.remove(&h)).collect();
        for a in &out {
            self.by_owner.remove(&(a.owner, a.handle));
        }
        out
    }

    pub fn record(&mut self, h: ActionHandle, ok: bool) {
        self.results.insert(h, ok);
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completes_after_duration() {
        let mut q = ActionQueue::default();
        let h = q.issue(NpcId(0), "idle", Effect::None, vec![], 2, 0);
        assert_eq!(q.state(h), ActionState::Pending { remaining: 2 });
        assert!(q.advance().is_empty());
        let done = q.advance();
        assert_eq!(done.len(), 1);
        q.record(h, true);
        assert_eq!(q.state(h), ActionState::Completed);
    }
}
