//! Behavior objects: behavior trees extended with smart entities that inject
//! subtrees into NPC decision trees, plus a deterministic headless simulator
//! and the scenario language that drives it.

pub mod areas;
pub mod bt;
pub mod dsl;
pub mod entities;
pub mod harness;
pub mod messaging;
pub mod npc;
pub mod registry;
pub mod situations;
pub mod value;
pub mod world;
