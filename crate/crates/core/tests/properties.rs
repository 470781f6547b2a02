//! Property tests for world-level invariants, navigation, messaging and the
//! scenario printer.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use behavior_objects::dsl::{load_with, parse, print};
use behavior_objects::harness::{bench_scenario, Profile};
use behavior_objects::messaging::{Message, MessageBus, MessageKind};
use behavior_objects::value::{Cell, NpcId, OwnerId, Value};
use behavior_objects::world::{parse_line, plan_path, Grid, Scheduled, World};
use proptest::prelude::*;

const POOL: [&str; 6] = ["pub.bos", "bench.bos", "door.bos", "fire-wood.bos", "quest-keys.bos", "small-talk.bos"];

fn read(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    std::fs::read_to_string(p).unwrap()
}

type Parsed = (u64, String, String, BTreeMap<String, String>);

fn parsed(w: &World) -> Vec<Parsed> {
    w.trace.lines().iter().filter_map(|l| parse_line(l)).map(|(t, o, k, f)| (t, o, k, f.into_iter().collect())).collect()
}

/// Runs a shipped scenario with a new seed and random combat interruptions,
/// checking the world between ticks.
fn fuzzed_run(name: &str, seed: u64, ticks: u64, hits: &[(u64, usize, u64)]) -> World {
    let mut w = load_with(&read(name), &|c| {
        c.seed = seed;
        c.ticks = ticks;
    })
    .unwrap()
    .world;
    let npcs: Vec<NpcId> = w.npcs.iter().map(|n| n.id).collect();
    for &(at, who, len) in hits {
        let npc = npcs[who % npcs.len()];
        w.schedule_at(at % ticks, Scheduled::Combat { npc, on: true });
        w.schedule_at(at % ticks + len, Scheduled::Combat { npc, on: false });
    }
    for _ in 0..ticks {
        w.step().unwrap();
        let v = w.check();
        assert!(v.is_empty(), "{name} seed {seed} tick {}: {v:?}", w.tick);
    }
    w
}

fn hits() -> impl Strategy<Value = Vec<(u64, usize, u64)>> {
    prop::collection::vec((1u64..400, 0usize..8, 1u64..30), 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Releases happen innermost first: only the most recent grant of an NPC
    /// can be released.
    #[test]
    fn releases_are_innermost_first(s in 0usize..6, seed in 0u64..1000, h in hits()) {
        let w = fuzzed_run(POOL[s], seed, 400, &h);
        let mut held: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for (t, owner, kind, f) in parsed(&w) {
            let serial = || f.get("serial").and_then(|s| s.parse::<u64>().ok());
            match kind.as_str() {
                "behavior-granted" => held.entry(owner).or_default().push(serial().unwrap()),
                "behavior-released" => {
                    let stack = held.entry(owner.clone()).or_default();
                    let top = stack.pop();
                    prop_assert!(top.is_some(), "{} tick {t}: release with nothing held", owner);
                    if let Some(s) = serial() {
                        prop_assert_eq!(top, Some(s), "{} tick {}: released an outer behavior first", owner, t);
                    }
                }
                _ => {}
            }
        }
    }

    /// A sub-brain switch happens only once the NPC holds nothing, so the
    /// higher tree never starts while injected behaviors are still held.
    #[test]
    fn switches_find_an_empty_stack(s in 0usize..6, seed in 0u64..1000, h in hits()) {
        let w = fuzzed_run(POOL[s], seed, 400, &h);
        let mut held: BTreeMap<String, usize> = BTreeMap::new();
        for (t, owner, kind, f) in parsed(&w) {
            match kind.as_str() {
                "behavior-granted" => *held.entry(owner).or_default() += 1,
                "behavior-released" => *held.entry(owner).or_default() -= 1,
                "subbrain-switch" => {
                    let n = held.get(&owner).copied().unwrap_or(0);
                    prop_assert_eq!(n, 0, "{} tick {}: switch {:?} with {} behaviors held", owner, t, f, n);
                }
                _ => {}
            }
        }
    }

    /// Every instance is updated at least once per period, and no update
    /// evaluates more nodes than its budget allows.
    #[test]
    fn schedule_is_fair_and_budgeted(s in 0usize..6, seed in 0u64..1000, h in hits()) {
        let w = fuzzed_run(POOL[s], seed, 400, &h);
        let mut last: BTreeMap<String, i64> = BTreeMap::new();
        for (t, owner, kind, _) in parsed(&w) {
            if kind == "brain-tick" || kind == "handler-started" {
                let inst = w.instance(&owner).expect("instance");
                let prev = last.insert(owner.clone(), t as i64).unwrap_or(-1);
                prop_assert!(t as i64 - prev <= i64::from(inst.period), "{} idle from {} to {}", owner, prev, t);
            }
        }
        for inst in &w.instances {
            if let Some(&t) = last.get(&inst.name) {
                prop_assert!(w.tick as i64 - t <= i64::from(inst.period), "{} silent since {t}", inst.name);
            }
        }
        let c = &w.config;
        prop_assert!(w.stats.max_update_evals <= c.npc_budget.max(c.se_budget) * c.boost_factor);
    }

    /// Situations only pull NPCs away from the ambient tree, and every
    /// situation ends with all participants in the same terminal state.
    #[test]
    fn situations_are_eye_candy(seed in 0u64..1000, h in hits(), pub_ in any::<bool>()) {
        let w = fuzzed_run(if pub_ { "pub.bos" } else { "small-talk.bos" }, seed, 400, &h);
        let mut status: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (t, owner, kind, f) in parsed(&w) {
            match kind.as_str() {
                "subbrain-switch" if f["to"] == "situation" => {
                    prop_assert_eq!(&f["from"], "ambient", "{} tick {}", owner, t);
                }
                "participant-status" => {
                    status.entry(owner).or_default().insert(f["npc"].clone(), f["status"].clone());
                }
                "situation-destroyed" => {
                    let finals: BTreeSet<&String> = status.get(&owner).map(|m| m.values().collect()).unwrap_or_default();
                    prop_assert!(finals.len() <= 1, "{} tick {}: mixed end {:?} ({:?})", owner, t, finals, f);
                }
                _ => {}
            }
        }
    }

    /// Identical inputs give identical traces.
    #[test]
    fn runs_are_reproducible(s in 0usize..6, seed in 0u64..1000, h in hits()) {
        let a = fuzzed_run(POOL[s], seed, 200, &h);
        let b = fuzzed_run(POOL[s], seed, 200, &h);
        prop_assert_eq!(a.trace.hash(), b.trace.hash());
        prop_assert_eq!(a.trace.lines(), b.trace.lines());
    }
}

fn bfs(grid: &Grid, from: Cell, to: Cell) -> Option<u32> {
    let mut seen = BTreeSet::from([from]);
    let mut q = VecDeque::from([(from, 0)]);
    while let Some((c, d)) = q.pop_front() {
        if c == to {
            return Some(d);
        }
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = Cell::new(c.x + dx, c.y + dy);
            let ok = n.x >= 0 && n.y >= 0 && n.x < grid.width && n.y < grid.height && !grid.walls.contains(&n);
            if ok && seen.insert(n) {
                q.push_back((n, d + 1));
            }
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn paths_cost_what_bfs_says(
        w in 1i32..=16,
        h in 1i32..=16,
        walls in prop::collection::vec((0i32..16, 0i32..16), 0..80),
        pairs in prop::collection::vec((0i32..16, 0i32..16, 0i32..16, 0i32..16), 1..20),
    ) {
        let mut grid = Grid::new(w, h);
        grid.walls = walls.into_iter().filter(|&(x, y)| x < w && y < h).map(|(x, y)| Cell::new(x, y)).collect();
        for (ax, ay, bx, by) in pairs {
            let (a, b) = (Cell::new(ax % w, ay % h), Cell::new(bx % w, by % h));
            if grid.walls.contains(&a) {
                continue;
            }
            let got = plan_path(&grid, &[], &|_| true, a, b);
            let want = bfs(&grid, a, b);
            prop_assert_eq!(got.as_ref().map(|p| p.0), want, "{:?} -> {:?}", a, b);
            if let Some((cost, path)) = got {
                prop_assert_eq!(path.len() as u32, cost);
            }
        }
    }

    /// Per inbox and in total, sent = drained + dropped + pending at every
    /// step, and nothing is drained in the tick it was sent.
    #[test]
    fn bus_conserves_messages(ops in prop::collection::vec((0u8..4, 0usize..3, 0usize..3), 1..120), cap in prop::option::of(1usize..4)) {
        let owners: Vec<OwnerId> = (0..3).map(|i| OwnerId::Npc(NpcId(i))).collect();
        let mut bus = MessageBus::new();
        let ids: Vec<_> = owners.iter().map(|&o| bus.register(o, "ping", cap).unwrap()).collect();
        let mut n = 0i64;
        let mut now = 0u64;
        for (op, a, b) in ops {
            match op {
                0 | 1 => {
                    n += 1;
                    let m = Message {
                        sender: owners[a],
                        schema: "ping".into(),
                        kind: MessageKind::ProvideData,
                        payload: vec![("n".into(), Value::Num(n))],
                        sent_tick: now,
                    };
                    bus.send(ids[b], m);
                }
                2 => {
                    for m in bus.drain(owners[b], ids[b], None).unwrap() {
                        prop_assert!(m.sent_tick < now, "drained in the tick it was sent");
                    }
                }
                _ => {
                    now += 1;
                    bus.deliver(now);
                }
            }
            prop_assert!(bus.conserved());
            for &id in &ids {
                let i = bus.inbox(id).unwrap();
                let c = &i.counters;
                prop_assert_eq!(c.sent, c.drained + c.dropped + i.pending() as u64);
            }
        }
    }

    #[test]
    fn generated_scenarios_print_and_reparse(n in 0usize..20, complex in any::<bool>(), seed in 0u64..100) {
        let profile = if complex { Profile::Complex } else { Profile::Simple };
        let src = bench_scenario(n, profile, seed, 10);
        let a = parse(&src).unwrap();
        let b = parse(&print(&a)).unwrap();
        prop_assert_eq!(print(&a), print(&b));
        prop_assert_eq!(a.normalized(), b.normalized());
    }
}

#[test]
fn shipped_scenarios_print_and_reparse() {
    for name in POOL {
        let a = parse(&read(name)).unwrap();
        let b = parse(&print(&a)).unwrap();
        assert_eq!(a.normalized(), b.normalized(), "{name}");
    }
}
