use std::collections::BTreeMap;

use crate::value::{LockCtxId, OwnerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockOutcome {
    Acquired,
    Blocked,
}

/// A namespace in which lock names are resolved. Each smart-entity and
/// situation instance owns one, so the same name used at two instances
/// yields two independent locks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockContext {
    pub owner: OwnerId,
    locks: BTreeMap<String, OwnerId>,
}

impl LockContext {
    pub fn new(owner: OwnerId) -> Self {
        LockContext { owner, locks: BTreeMap::new() }
    }

    pub fn acquire(&mut self, name: &str, holder: OwnerId) -> LockOutcome {
        match self.locks.get(name) {
            // Re-acquiring a lock one already holds is not reentrant.
            Some(_) => LockOutcome::Blocked,
            None => {
                self.locks.insert(name.to_string(), holder);
                LockOutcome::Acquired
            }
        }
    }

    /// Releases `name` if `holder` holds it. Returns whether anything changed.
    pub fn release(&mut self, name: &str, holder: OwnerId) -> bool {
        if self.locks.get(name) == Some(&holder) {
            self.locks.remove(name);
            true
        } else {
            false
        }
    }

    pub fn holder(&self, name: &str) -> Option<OwnerId> {
        self.locks.get(name).copied()
    }

    pub fn held(&self) -> impl Iterator<Item = (&str, OwnerId)> {
        self.locks.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// All lock contexts of a world, addressed by id.
#[derive(Debug, Default, Clone)]
pub struct LockStore {
    contexts: Vec<LockContext>,
}

impl LockStore {
    pub fn create(&mut self, owner: OwnerId) -> LockCtxId {
        self.contexts.push(LockContext::new(owner));
        LockCtxId(self.contexts.len() as u32 - 1)
    }

    pub fn get(&self, id: LockCtxId) -> Option<&LockContext> {
        self.contexts.get(id.index())
    }

    pub fn get_mut(&mut self, id: LockCtxId) -> Option<&mut LockContext> {
        self.contexts.get_mut(id.index())
    }

    /// Every held lock as (context, name, holder).
    pub fn all_held(&self) -> Vec<(LockCtxId, String, OwnerId)> {
        let mut out = Vec::new();
        for (i, c) in self.contexts.iter().enumerate() {
            for (name, holder) in c.held() {
                out.push((LockCtxId(i as u32), name.to_string(), holder));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{InstanceId, NpcId};

    #[test]
    fn same_name_in_two_contexts_is_two_locks() {
        let mut store = LockStore::default();
        let a = store.create(OwnerId::Instance(InstanceId(0)));
        let b = store.create(OwnerId::Instance(InstanceId(1)));
        let n1 = OwnerId::Npc(NpcId(1));
        let n2 = OwnerId::Npc(NpcId(2));
        assert_eq!(store.get_mut(a).unwrap().acquire("toast", n1), LockOutcome::Acquired);
        assert_eq!(store.get_mut(a).unwrap().acquire("toast", n2), LockOutcome::Blocked);
        assert_eq!(store.get_mut(b).unwrap().acquire("toast", n2), LockOutcome::Acquired);
        assert!(!store.get_mut(a).unwrap().release("toast", n2));
        assert!(store.get_mut(a).unwrap().release("toast", n1));
        assert_eq!(store.get_mut(a).unwrap().acquire("toast", n2), LockOutcome::Acquired);
        assert_eq!(store.all_held().len(), 2);
    }
}
