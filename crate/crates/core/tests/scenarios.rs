//! Runs the shipped scenarios with the world checker between every tick.

use std::path::PathBuf;

use behavior_objects::dsl::load_file;
use behavior_objects::world::{parse_line, RuntimeError, World};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_checked(name: &str) -> World {
    let mut w = load_file(&scenario(name), &|_| {}).unwrap_or_else(|e| panic!("{name}: {e}")).world;
    for _ in 0..w.config.ticks {
        w.step().unwrap_or_else(|e| panic!("{name}: {e}"));
        let v = w.check();
        assert!(v.is_empty(), "{name} tick {}: {v:#?}", w.tick);
    }
    w
}

/// Notes of the run as (tick, owner, event).
fn notes(w: &World) -> Vec<(u64, String, String)> {
    w.trace
        .lines()
        .iter()
        .filter_map(|l| parse_line(l))
        .filter(|(_, _, kind, _)| kind == "note")
        .map(|(t, owner, _, f)| (t, owner, f.into_iter().find(|(k, _)| k == "event").map(|(_, v)| v).unwrap_or_default()))
        .collect()
}

fn count(w: &World, needle: &str) -> usize {
    w.trace.lines().iter().filter(|l| l.contains(needle)).count()
}

#[test]
fn pub_runs_clean() {
    let w = run_checked("pub.bos");
    let n = notes(&w);
    let placed = n.iter().filter(|x| x.2 == "order-placed").count();
    let delivered = n.iter().filter(|x| x.2 == "order-delivered").count();
    assert!(placed > 0 && delivered > 0 && delivered <= placed, "{placed} placed, {delivered} delivered");
    assert!(count(&w, "behavior=tend-bar") > 0);
    assert!(w.stats.situations_launched > 0);
}

#[test]
fn bench_runs_clean() {
    let w = run_checked("bench.bos");
    // The fifth sitter is turned away while the bench is full.
    assert!(count(&w, "owner=eve kind=behavior-refused behavior=sit reason=max-holders-reached") > 0);
    let seated: Vec<String> = notes(&w).into_iter().filter(|x| x.2 == "seated").map(|x| x.1).take(4).collect();
    assert_eq!(seated, ["ada", "bob", "cyd", "dee"]);
}

#[test]
fn door_runs_clean() {
    let w = run_checked("door.bos");
    let admitted: Vec<String> = w
        .trace
        .lines()
        .iter()
        .filter_map(|l| parse_line(l))
        .filter(|x| x.2 == "door-admitted")
        .filter_map(|x| x.3.into_iter().find(|(k, _)| k == "npc").map(|(_, v)| v))
        .collect();
    // The keyholder arrives third but unlocks the door and goes first.
    assert_eq!(admitted, ["cal", "abe", "bea", "dot"]);
    assert_eq!(notes(&w).iter().filter(|x| x.2 == "passed").count(), 4);
    assert_eq!(count(&w, "kind=door-unlocked npc=cal"), 1);
}

#[test]
fn fire_wood_runs_clean() {
    let w = run_checked("fire-wood.bos");
    let n = notes(&w);
    assert!(n.iter().any(|x| x.2 == "shortage"));
    assert!(n.iter().filter(|x| x.2 == "fed").count() > 5);
    assert!(count(&w, "kind=provider-selected") > 0);
    // Someone fetched wood from the pile.
    assert!(count(&w, "behavior=gather") > 0);
}

#[test]
fn quest_keys_runs_clean() {
    let w = run_checked("quest-keys.bos");
    assert_eq!(count(&w, "kind=daycycle-override"), 1);
    assert_eq!(count(&w, "kind=daycycle-restore"), 1);
    assert_eq!(count(&w, "kind=driver-received"), 1);
    assert!(count(&w, "owner=bran kind=behavior-granted behavior=search-keys") == 1);
}

#[test]
fn small_talk_runs_clean() {
    let w = run_checked("small-talk.bos");
    assert!(w.stats.situations_launched > 10);
    assert!(w.stats.situations_completed > 0);
    for template in ["template=chat", "template=gossip", "template=haggle"] {
        assert!(count(&w, template) > 0, "{template} never proposed");
    }
}

#[test]
fn recursion_is_a_runtime_error() {
    let mut w = load_file(&scenario("runtime/recursion.bos"), &|_| {}).unwrap().world;
    match w.run(50).unwrap_err() {
        RuntimeError::Recursion { tick, npc, instance, behavior } => {
            assert_eq!((tick, npc.as_str(), instance.as_str(), behavior.as_str()), (1, "pim", "hall-1", "echo"));
        }
        e => panic!("unexpected {e}"),
    }
}
