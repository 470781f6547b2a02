//! Per-definition pools of runtime trees for injected behaviors and
//! situation roles.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::bt::{Node, NodeDef};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tree for line {line} returned to the pool while not fresh")]
pub struct PoolError {
    pub line: u32,
}

#[derive(Debug, Default)]
pub struct TreePool {
    free: BTreeMap<usize, Vec<Node>>,
    live: BTreeMap<usize, usize>,
    peak: BTreeMap<usize, usize>,
    pub built: u64,
    pub reused: u64,
}

fn key(def: &Arc<NodeDef>) -> usize {
    Arc::as_ptr(def) as usize
}

impl TreePool {
    pub fn acquire(&mut self, def: &Arc<NodeDef>) -> Node {
        let k = key(def);
        let live = self.live.entry(k).or_default();
        *live += 1;
        let peak = self.peak.entry(k).or_default();
        *peak = (*peak).max(*live);
        match self.free.get_mut(&k).and_then(Vec::pop) {
            Some(n) => {
                self.reused += 1;
                n
            }
            None => {
                self.built += 1;
                Node::build(def)
            }
        }
    }

    /// Returns a tree. Trees that are not pristine are discarded.
    pub fn release(&mut self, node: Node) -> Result<(), PoolError> {
        let k = key(node.def());
        if let Some(l) = self.live.get_mut(&k) {
            *l = l.saturating_sub(1);
        }
        if !node.is_pristine() {
            return Err(PoolError { line: node.def().line });
        }
        self.free.entry(k).or_default().push(node);
        Ok(())
    }

    /// Most trees of one definition ever live at once.
    pub fn high_water(&self, def: &Arc<NodeDef>) -> usize {
        self.peak.get(&key(def)).copied().unwrap_or(0)
    }

    pub fn max_high_water(&self) -> usize {
        self.peak.values().copied().max().unwrap_or(0)
    }

    pub fn live(&self) -> usize {
        self.live.values().sum()
    }
}
