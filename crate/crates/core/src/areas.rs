//! Smart-area containment hierarchy and implicit request resolution.
//!
//! The tree is kept separate from the smart-entity instances so resolution
//! can be exercised on its own: callers supply a lookup that answers "can
//! this area grant this request" from current gating.

use serde::Serialize;

use crate::bt::RefuseReason;
use crate::value::{Cell, InstanceId};

/// An inclusive axis-aligned rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Rect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl Rect {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Rect { x0: x0.min(x1), y0: y0.min(y1), x1: x0.max(x1), y1: y0.max(y1) }
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.x0 && c.x <= self.x1 && c.y >= self.y0 && c.y <= self.y1
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }

    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }

    pub fn center(&self) -> Cell {
        Cell::new((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)
    }

    pub fn area(&self) -> i64 {
        (self.x1 - self.x0 + 1) as i64 * (self.y1 - self.y0 + 1) as i64
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaNode {
    pub instance: InstanceId,
    pub bounds: Rect,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub resolution_root: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AreaError {
    #[error("area {child} is not inside its parent {parent}")]
    OutsideParent { child: usize, parent: usize },
    #[error("sibling areas {a} and {b} overlap")]
    Overlap { a: usize, b: usize },
}

/// Area nodes indexed by position; node 0 is the default top-level area.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaTree {
    nodes: Vec<AreaNode>,
}

impl AreaTree {
    pub fn new(root: InstanceId, bounds: Rect) -> Self {
        AreaTree { nodes: vec![AreaNode { instance: root, bounds, parent: None, children: Vec::new(), resolution_root: true }] }
    }

    pub fn add(&mut self, instance: InstanceId, bounds: Rect, parent: usize, resolution_root: bool) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(AreaNode { instance, bounds, parent: Some(parent), children: Vec::new(), resolution_root });
        self.nodes[parent].children.push(idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: usize) -> &AreaNode {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[AreaNode] {
        &self.nodes
    }

    pub fn index_of(&self, instance: InstanceId) -> Option<usize> {
        self.nodes.iter().position(|n| n.instance == instance)
    }

    /// Every nesting and overlap violation.
    pub fn validate(&self) -> Vec<AreaError> {
        let mut errs = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                if !self.nodes[p].bounds.contains_rect(&n.bounds) {
                    errs.push(AreaError::OutsideParent { child: i, parent: p });
                }
            }
            for (k, &a) in n.children.iter().enumerate() {
                for &b in &n.children[k + 1..] {
                    if self.nodes[a].bounds.overlaps(&self.nodes[b].bounds) {
                        errs.push(AreaError::Overlap { a, b });
                    }
                }
            }
        }
        errs
    }

    /// The deepest area containing `cell`; the root when nothing else does.
    pub fn innermost(&self, cell: Cell) -> usize {
        let mut cur = 0;
        'descend: loop {
            for &c in &self.nodes[cur].children {
                if self.nodes[c].bounds.contains(cell) {
                    cur = c;
                    continue 'descend;
                }
            }
            return cur;
        }
    }

    /// `idx` followed by its ancestors up to the root.
    pub fn chain(&self, idx: usize) -> Vec<usize> {
        let mut out = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Every area containing `cell`, innermost first.
    pub fn containing(&self, cell: Cell) -> Vec<usize> {
        self.chain(self.innermost(cell))
    }

    /// The nearest ancestor-or-self marked as a resolution root.
    pub fn resolution_start(&self, idx: usize) -> usize {
        self.chain(idx).into_iter().find(|&a| self.nodes[a].resolution_root).unwrap_or(0)
    }

    pub fn is_ancestor(&self, anc: usize, idx: usize) -> bool {
        self.chain(idx).contains(&anc)
    }
}

/// What one area answers to a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AreaAnswer {
    /// The area grants this behavior.
    Grant(String),
    /// The area has a matching behavior but gating refuses it.
    Refused(RefuseReason),
    /// The area has nothing matching.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub area: usize,
    pub behavior: String,
    /// Areas consulted before the granting one, in order.
    pub escalated: Vec<usize>,
}

/// Walks upward from `start` (or from its resolution root for general
/// requests) asking `lookup` at each level.
pub fn resolve_area_request(
    tree: &AreaTree,
    start: usize,
    general: bool,
    lookup: &mut dyn FnMut(usize) -> AreaAnswer,
) -> Result<Resolution, RefuseReason> {
    let first = if general { tree.resolution_start(start) } else { start };
    let mut escalated = Vec::new();
    for area in tree.chain(first) {
        match lookup(area) {
            AreaAnswer::Grant(behavior) => return Ok(Resolution { area, behavior, escalated }),
            AreaAnswer::Refused(_) | AreaAnswer::Absent => escalated.push(area),
        }
    }
    Err(RefuseReason::NoBehaviorAvailable)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn town() -> AreaTree {
        let mut t = AreaTree::new(InstanceId(0), Rect::new(0, 0, 29, 19));
        let city = t.add(InstanceId(1), Rect::new(0, 0, 19, 19), 0, true);
        t.add(InstanceId(2), Rect::new(2, 2, 8, 8), city, false);
        t.add(InstanceId(3), Rect::new(10, 2, 15, 8), city, false);
        t
    }

    #[test]
    fn innermost_prefers_deepest() {
        let t = town();
        assert_eq!(t.innermost(Cell::new(3, 3)), 2);
        assert_eq!(t.innermost(Cell::new(9, 12)), 1);
        assert_eq!(t.innermost(Cell::new(25, 5)), 0);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn overlap_and_nesting_detected() {
        let mut t = town();
        t.add(InstanceId(4), Rect::new(7, 7, 11, 9), 1, false);
        t.add(InstanceId(5), Rect::new(25, 25, 31, 31), 0, false);
        let errs = t.validate();
        assert!(errs.contains(&AreaError::Overlap { a: 2, b: 4 }));
        assert!(errs.contains(&AreaError::Overlap { a: 3, b: 4 }));
        assert!(errs.contains(&AreaError::OutsideParent { child: 5, parent: 0 }));
    }

    #[test]
    fn named_request_escalates_to_city() {
        let t = town();
        let r = resolve_area_request(&t, 2, false, &mut |a| {
            if a == 1 {
                AreaAnswer::Grant("pray".into())
            } else {
                AreaAnswer::Absent
            }
        })
        .unwrap();
        assert_eq!((r.area, r.escalated), (1, vec![2]));
    }

    #[test]
    fn general_request_skips_leaf_areas() {
        let t = town();
        let mut asked = Vec::new();
        let r = resolve_area_request(&t, 2, true, &mut |a| {
            asked.push(a);
            AreaAnswer::Grant("relax".into())
        });
        assert_eq!(r.unwrap().area, 1);
        assert_eq!(asked, vec![1]);
    }

    #[test]
    fn exhausted_chain_fails() {
        let t = town();
        let r = resolve_area_request(&t, 3, false, &mut |_| AreaAnswer::Refused(RefuseReason::Disabled));
        assert_eq!(r, Err(RefuseReason::NoBehaviorAvailable));
    }
}
