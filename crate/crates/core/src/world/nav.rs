//! Grid navigation. Door objects contribute extra edges that are only
//! usable while their on-command behavior is enabled.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use crate::bt::PathItem;
use crate::value::{Cell, InstanceId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: i32,
    pub height: i32,
    pub walls: BTreeSet<Cell>,
}

impl Grid {
    pub fn new(width: i32, height: i32) -> Self {
        Grid { width, height, walls: BTreeSet::new() }
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn passable(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.walls.contains(&c)
    }

    pub fn neighbors(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        [(1, 0), (-1, 0), (0, 1), (0, -1)].into_iter().map(move |(dx, dy)| Cell::new(c.x + dx, c.y + dy)).filter(|n| self.passable(*n))
    }
}

/// A door: traversable in both directions at `cost`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavEdge {
    pub door: InstanceId,
    pub a: Cell,
    pub b: Cell,
    pub cost: u32,
}

/// Cheapest path from `from` to `to` (excluding `from`), ties broken by
/// cell order. Returns `None` when unreachable.
pub fn plan_path(
    grid: &Grid,
    edges: &[NavEdge],
    usable: &dyn Fn(InstanceId) -> bool,
    from: Cell,
    to: Cell,
) -> Option<(u32, Vec<PathItem>)> {
    if from == to {
        return Some((0, Vec::new()));
    }
    if !grid.passable(to) {
        return None;
    }
    let mut dist: HashMap<Cell, u32> = HashMap::from([(from, 0)]);
    let mut prev: HashMap<Cell, (Cell, Option<usize>)> = HashMap::new();
    let mut heap = BinaryHeap::from([Reverse((0u32, from))]);
    while let Some(Reverse((d, c))) = heap.pop() {
        if d > dist[&c] {
            continue;
        }
        if c == to {
            break;
        }
        let mut relax = |n: Cell, cost: u32, via: Option<usize>| {
            let nd = d + cost;
            if dist.get(&n).is_none_or(|&old| nd < old) {
                dist.insert(n, nd);
                prev.insert(n, (c, via));
                heap.push(Reverse((nd, n)));
            }
        };
        for n in grid.neighbors(c) {
            relax(n, 1, None);
        }
        for (i, e) in edges.iter().enumerate() {
            if !usable(e.door) {
                continue;
            }
            if e.a == c {
                relax(e.b, e.cost, Some(i));
            } else if e.b == c {
                relax(e.a, e.cost, Some(i));
            }
        }
    }
    let total = *dist.get(&to)?;
    let mut items = Vec::new();
    let mut cur = to;
    while cur != from {
        let (p, via) = prev[&cur];
        items.push(match via {
            Some(i) => PathItem::Traverse { door: edges[i].door, from: p, to: cur, cost: edges[i].cost },
            None => PathItem::Step(cur),
        });
        cur = p;
    }
    items.reverse();
    Some((total, items))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walled() -> Grid {
        let mut g = Grid::new(7, 3);
        for y in 0..3 {
            g.walls.insert(Cell::new(3, y));
        }
        g
    }

    #[test]
    fn straight_line() {
        let g = Grid::new(5, 5);
        let (cost, path) = plan_path(&g, &[], &|_| true, Cell::new(0, 0), Cell::new(3, 0)).unwrap();
        assert_eq!(cost, 3);
        assert_eq!(path.last(), Some(&PathItem::Step(Cell::new(3, 0))));
    }

    #[test]
    fn door_is_the_only_way_through() {
        let g = walled();
        let door = NavEdge { door: InstanceId(4), a: Cell::new(2, 1), b: Cell::new(4, 1), cost: 3 };
        assert!(plan_path(&g, std::slice::from_ref(&door), &|_| false, Cell::new(0, 1), Cell::new(6, 1)).is_none());
        let (cost, path) = plan_path(&g, &[door], &|_| true, Cell::new(0, 1), Cell::new(6, 1)).unwrap();
        assert_eq!(cost, 2 + 3 + 2);
        assert!(path.contains(&PathItem::Traverse { door: InstanceId(4), from: Cell::new(2, 1), to: Cell::new(4, 1), cost: 3 }));
    }
}
