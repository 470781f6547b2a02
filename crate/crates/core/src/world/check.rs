//! Whole-world consistency checks, run between ticks by tests and by the
//! CLI's `--check` flag.

use std::collections::{BTreeMap, BTreeSet};

use super::World;
use crate::bt::{Node, NodeVisit};
use crate::npc::Posture;
use crate::value::{LockCtxId, NpcId, OwnerId};

fn visit_all<'a>(nodes: impl Iterator<Item = &'a Node>, f: &mut dyn FnMut(NodeVisit<'a>)) {
    for n in nodes {
        n.visit(f);
    }
}

pub(super) fn check(w: &World) -> Vec<String> {
    let mut out = Vec::new();

    // Gating holders mirror the NPC stacks exactly.
    let mut from_stacks: BTreeMap<(usize, String), Vec<NpcId>> = BTreeMap::new();
    for n in &w.npcs {
        for e in &n.stack {
            from_stacks.entry((e.source.index(), e.behavior.clone())).or_default().push(n.id);
        }
    }
    for inst in &w.instances {
        for (b, g) in &inst.gating {
            let mut have = g.holders.clone();
            have.sort();
            let mut want = from_stacks.remove(&(inst.id.index(), b.clone())).unwrap_or_default();
            want.sort();
            if have != want {
                out.push(format!("{}: holders of `{b}` {:?} disagree with NPC stacks {:?}", inst.name, have, want));
            }
        }
        let held = inst.total_holders() as u64;
        if inst.adopts - inst.drops != held {
            out.push(format!("{}: {} adopts - {} drops != {held} holders", inst.name, inst.adopts, inst.drops));
        }
        if !inst.env_intact() {
            out.push(format!("{}: environment data changed", inst.name));
        }
    }
    for ((i, b), npcs) in from_stacks {
        out.push(format!("stack entries for unknown behavior `{b}` of instance {i}: {npcs:?}"));
    }

    // Every held lock is held by a live lock node, and vice versa.
    let mut visited: BTreeSet<(LockCtxId, String, OwnerId)> = BTreeSet::new();
    for n in &w.npcs {
        let Some(brain) = &n.brain else {
            out.push(format!("{}: brain missing between ticks", n.name));
            continue;
        };
        let mut grants = BTreeSet::new();
        let trees = brain.trees.iter().flatten().chain(brain.slot.as_ref().map(|s| &s.tree));
        visit_all(trees, &mut |v| match v {
            NodeVisit::LockHeld { ctx, name, holder } => {
                visited.insert((ctx, name.to_string(), holder));
            }
            NodeVisit::GrantHeld(g) => {
                grants.insert(g.serial);
            }
            NodeVisit::ActionInFlight(_) => {}
        });
        let stack: BTreeSet<u64> = n.stack.iter().map(|e| e.serial).collect();
        if grants != stack {
            out.push(format!("{}: tree grants {grants:?} != stack {stack:?}", n.name));
        }
        if let Posture::Seated(seat) = n.posture {
            if !n.stack.iter().any(|e| e.source == seat) {
                out.push(format!("{}: seated on {} without holding it", n.name, w.instances[seat.index()].name));
            }
        }
        if brain.all_fresh() && !n.stack.is_empty() {
            out.push(format!("{}: all trees fresh but stack has {} entries", n.name, n.stack.len()));
        }
    }
    for inst in &w.instances {
        if let Some(m) = &inst.mind {
            visit_all(m.main.iter(), &mut |v| {
                if let NodeVisit::LockHeld { ctx, name, holder } = v {
                    visited.insert((ctx, name.to_string(), holder));
                }
            });
        }
    }
    let held: BTreeSet<(LockCtxId, String, OwnerId)> = w.locks.all_held().into_iter().collect();
    for l in held.difference(&visited) {
        out.push(format!("lock {l:?} held with no live lock node"));
    }
    for l in visited.difference(&held) {
        out.push(format!("lock node {l:?} believes it holds a free lock"));
    }

    if !w.bus.conserved() {
        let t = w.bus.totals();
        out.push(format!(
            "message conservation broken: sent {} drained {} dropped {} pending {}",
            t.sent,
            t.drained,
            t.dropped,
            w.bus.pending()
        ));
    }
    out
}
