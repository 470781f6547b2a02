//! The fixed vocabulary of predicates and actions scenarios may name.
//!
//! Durational actions are symbolic stand-ins for animations: they take a
//! number of ticks and apply their world effect on completion. Operations
//! (`Op`) take effect synchronously inside the issuing update.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    None,
    /// Position becomes the `to` parameter.
    Relocate,
    SitDown,
    StandUp,
    /// One random passable neighbour.
    Wander,
    /// Sets the `carrying` attribute to the `item` parameter.
    PickUp,
    /// Clears `carrying`; fails when nothing is carried.
    UseUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionClass {
    Timed {
        default_dur: u32,
        effect: Effect,
    },
    /// Synchronous operation executed by the host.
    Op,
}

#[derive(Debug, Clone, Copy)]
pub struct ActionSpec {
    pub name: &'static str,
    pub class: ActionClass,
    /// Only usable from smart-entity brains and handlers.
    pub brain_only: bool,
}

const fn timed(name: &'static str, default_dur: u32, effect: Effect) -> ActionSpec {
    ActionSpec { name, class: ActionClass::Timed { default_dur, effect }, brain_only: false }
}

const fn op(name: &'static str, brain_only: bool) -> ActionSpec {
    ActionSpec { name, class: ActionClass::Op, brain_only }
}

pub const ACTIONS: &[ActionSpec] = &[
    timed("walk-step", 1, Effect::Relocate),
    timed("pass-door", 3, Effect::Relocate),
    timed("wander", 2, Effect::Wander),
    timed("sit-down", 2, Effect::SitDown),
    timed("stand-up", 2, Effect::StandUp),
    timed("pick-up", 2, Effect::PickUp),
    timed("idle", 10, Effect::None),
    timed("sit-idle", 20, Effect::None),
    timed("drink", 30, Effect::None),
    timed("pour-drink", 8, Effect::None),
    timed("serve-drink", 3, Effect::None),
    timed("toast", 3, Effect::None),
    timed("chat", 20, Effect::None),
    timed("face-partner", 2, Effect::None),
    timed("greet", 2, Effect::None),
    timed("gesture", 3, Effect::None),
    timed("pray", 20, Effect::None),
    timed("work", 30, Effect::None),
    timed("relax", 30, Effect::None),
    timed("read", 20, Effect::None),
    timed("sleep", 60, Effect::None),
    timed("fight", 10, Effect::None),
    timed("search", 15, Effect::None),
    timed("open-door", 2, Effect::None),
    timed("pick-up-torch", 2, Effect::None),
    timed("duck", 1, Effect::None),
    timed("feed-fire", 6, Effect::UseUp),
    timed("fetch-wood", 8, Effect::None),
    timed("drop-wood", 3, Effect::UseUp),
    timed("stop", 0, Effect::None),
    op("set-var", false),
    op("add-var", false),
    op("clear-var", false),
    op("note", false),
    op("get-link", false),
    op("door-enqueue", true),
    op("door-admit", true),
    op("door-release", true),
    op("bench-assign", true),
    op("bench-blockers", true),
    op("bench-free", true),
];

pub fn action(name: &str) -> Option<&'static ActionSpec> {
    ACTIONS.iter().find(|a| a.name == name)
}

#[derive(Debug, Clone, Copy)]
pub struct PredicateSpec {
    pub name: &'static str,
    /// Number of arguments; `None` for variadic.
    pub arity: Option<usize>,
}

pub const PREDICATES: &[PredicateSpec] = &[
    PredicateSpec { name: "true", arity: Some(0) },
    PredicateSpec { name: "false", arity: Some(0) },
    PredicateSpec { name: "attr-is", arity: Some(2) },
    PredicateSpec { name: "attr-ge", arity: Some(2) },
    PredicateSpec { name: "attr-lt", arity: Some(2) },
    PredicateSpec { name: "has-attr", arity: Some(1) },
    PredicateSpec { name: "var-is", arity: Some(2) },
    PredicateSpec { name: "var-ge", arity: Some(2) },
    PredicateSpec { name: "var-set", arity: Some(1) },
    PredicateSpec { name: "list-empty", arity: Some(1) },
    PredicateSpec { name: "is-drunk", arity: Some(0) },
    PredicateSpec { name: "wealth-is", arity: Some(1) },
    PredicateSpec { name: "has-key", arity: Some(0) },
    PredicateSpec { name: "has-order", arity: Some(0) },
    PredicateSpec { name: "seated", arity: Some(0) },
    PredicateSpec { name: "is-night", arity: Some(0) },
    PredicateSpec { name: "is-day", arity: Some(0) },
    PredicateSpec { name: "chance", arity: Some(1) },
    PredicateSpec { name: "holders-ge", arity: Some(2) },
];

pub fn predicate(name: &str) -> Option<&'static PredicateSpec> {
    PREDICATES.iter().find(|p| p.name == name)
}

/// Drunkenness level from which `is-drunk` holds.
pub const DRUNK_LEVEL: i64 = 3;

/// Minutes of the day counted as daytime, `[start, end)`.
pub const DAYTIME: (u32, u32) = (360, 1200);
