//! The simulated world and its fixed per-tick update order:
//!
//! 1. scheduled events, message delivery, subscription snapshot
//! 2. NPC decision updates in ascending id order
//! 3. due smart-entity updates in ascending id order
//! 4. situation manager and quest drivers
//! 5. action progress, effects and area transitions
//!
//! Everything random draws from per-owner ChaCha8 streams derived from the
//! run seed, so a run is a pure function of its scenario and seed.

mod actions;
mod check;
mod host;
mod manager;
mod nav;
mod pool;
mod trace;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use actions::{ActionQueue, InFlight};
pub use manager::Manager;
pub use nav::{plan_path, Grid, NavEdge};
pub use pool::{PoolError, TreePool};
pub use trace::{first_divergence, format_line, parse_line, Keep, ParsedLine, Trace, TraceLevel};

use crate::areas::{AreaTree, Rect};
use crate::bt::{LockStore, NodeDef, NodeKind};
use crate::entities::{BenchState, DoorState, EntityKind, EventKind, SeEvent, SeInstance, SeKind, SeTemplate};
use crate::messaging::{Message, MessageBus, MessageKind, SendStatus};
use crate::npc::{Npc, NpcBrain, NpcTemplate, Posture};
use crate::registry::Effect;
use crate::situations::SituationTemplate;
use crate::value::{Cell, EntityId, EntityRef, Fnv1a, InstanceId, NpcId, OwnerId, Value};

/// System inbox for situation arm/abort/end messages.
pub const SYS_SITUATION: &str = "situation";
/// System inbox for day-cycle swap/restore messages.
pub const SYS_DAYCYCLE: &str = "daycycle";
/// Manager inbox for participant status reports.
pub const SITUATION_STATUS: &str = "situation-status";
/// Inboxes every quest driver owns.
pub const DRIVER_INBOXES: [&str; 2] = ["step-complete", "quest-status"];
/// Cap on internal ticks of one event-handler run.
pub const HANDLER_CAP: u32 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub ticks: u64,
    /// Situation launch period.
    pub manager_every: u64,
    pub ticks_per_minute: u64,
    pub start_minute: u32,
    pub npc_budget: u32,
    pub se_budget: u32,
    /// Queued messages plus events above which an owner's budget is boosted.
    pub boost_threshold: usize,
    pub boost_factor: u32,
    pub trace_level: TraceLevel,
    pub door_patience: u64,
    /// Capacity of inboxes that do not declare one.
    pub default_capacity: Option<usize>,
    /// When false the manager never launches situations.
    pub situations: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            ticks: 200,
            manager_every: 10,
            ticks_per_minute: 1,
            start_minute: 480,
            npc_budget: 200,
            se_budget: 100,
            boost_threshold: 4,
            boost_factor: 2,
            trace_level: TraceLevel::Behavior,
            door_patience: 30,
            default_capacity: Some(32),
            situations: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub kind: EntityKind,
    pub pos: Option<Cell>,
    pub instance: Option<InstanceId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    pub id: u32,
    pub name: String,
    pub received: Vec<(u64, Message)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scheduled {
    Combat {
        npc: NpcId,
        on: bool,
    },
    Quest {
        npc: NpcId,
        on: bool,
    },
    /// A driver tells a quest object to start.
    Start {
        driver: u32,
        quest: InstanceId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("tick {tick}: {npc} requested `{behavior}` from {instance} while already holding it")]
    Recursion { tick: u64, npc: String, instance: String, behavior: String },
    #[error("tick {tick}: tree pool contract violated: {detail}")]
    Pool { tick: u64, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Stats {
    pub ticks: u64,
    pub npc_updates: u64,
    pub se_updates: u64,
    pub brain_ticks: u64,
    pub handler_runs: u64,
    pub node_evals: u64,
    pub cleanup_evals: u64,
    pub max_update_evals: u32,
    pub budget_exceeded: u64,
    pub deferred_switches: u64,
    pub overruns: u64,
    pub grants: u64,
    pub refusals: u64,
    pub releases: u64,
    pub diagnostics: u64,
    pub situations_launched: u64,
    pub situations_completed: u64,
    pub situations_aborted: u64,
    pub cast_failures: u64,
    pub violations: Vec<String>,
}

#[derive(Debug)]
pub struct World {
    pub tick: u64,
    pub config: RunConfig,
    pub grid: Grid,
    pub entities: Vec<Entity>,
    pub areas: AreaTree,
    pub instances: Vec<SeInstance>,
    pub npcs: Vec<Npc>,
    pub nav_edges: Vec<NavEdge>,
    pub bus: MessageBus,
    pub locks: LockStore,
    pub actions: ActionQueue,
    pub situation_templates: Vec<Arc<SituationTemplate>>,
    pub manager: Manager,
    pub drivers: Vec<Driver>,
    pub schedule: BTreeMap<u64, Vec<Scheduled>>,
    pub trace: Trace,
    pub pool: TreePool,
    pub stats: Stats,
    pub fatal: Option<RuntimeError>,
    pub diagnostics: Vec<String>,
    pub chaos_tick: Option<u64>,
    inst_rngs: Vec<ChaCha8Rng>,
    by_name: BTreeMap<String, OwnerId>,
    serial: u64,
}

/// The RNG stream of a named owner.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ Fnv1a::hash(name.as_bytes()))
}

/// Message schemas a tree waits on, in first-seen order.
pub fn wait_schemas(def: &NodeDef) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    def.walk(&mut |d| {
        if let NodeKind::WaitMessage { schema, .. } = &d.kind {
            if !out.contains(schema) {
                out.push(schema.clone());
            }
        }
    });
    out
}

impl World {
    /// An empty world whose root area `world` covers the whole grid.
    pub fn new(config: RunConfig, grid: Grid) -> World {
        let root_template = Arc::new(SeTemplate {
            name: "world".into(),
            kind: SeKind::Area,
            behaviors: Vec::new(),
            brain: None,
            handlers: BTreeMap::new(),
            links: Vec::new(),
            period: None,
            state: Vec::new(),
            inboxes: Vec::new(),
            line: 0,
        });
        let bounds = Rect::new(0, 0, grid.width - 1, grid.height - 1);
        let mut bus = MessageBus::new();
        let manager_inbox = bus.register(OwnerId::Manager, SITUATION_STATUS, None).expect("fresh bus");
        let mut w = World {
            tick: 0,
            manager: Manager::new(stream(config.seed, "manager"), manager_inbox),
            trace: Trace::new(config.trace_level),
            config,
            grid,
            entities: Vec::new(),
            areas: AreaTree::new(InstanceId(0), bounds),
            instances: Vec::new(),
            npcs: Vec::new(),
            nav_edges: Vec::new(),
            bus,
            locks: LockStore::default(),
            actions: ActionQueue::default(),
            situation_templates: Vec::new(),
            drivers: Vec::new(),
            schedule: BTreeMap::new(),
            pool: TreePool::default(),
            stats: Stats::default(),
            fatal: None,
            diagnostics: Vec::new(),
            chaos_tick: None,
            inst_rngs: Vec::new(),
            by_name: BTreeMap::from([("manager".to_string(), OwnerId::Manager)]),
            serial: 0,
        };
        let e = w.add_entity("world", EntityKind::Instance(SeKind::Area), None);
        w.add_instance("world", root_template, e, BTreeMap::new());
        w
    }

    // ---- construction -------------------------------------------------

    pub fn add_entity(&mut self, name: &str, kind: EntityKind, pos: Option<Cell>) -> EntityId {
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Entity { id, name: name.to_string(), kind, pos, instance: None });
        id
    }

    pub fn add_instance(
        &mut self,
        name: &str,
        template: Arc<SeTemplate>,
        entity: EntityId,
        env: BTreeMap<String, Vec<EntityRef>>,
    ) -> InstanceId {
        let id = InstanceId(self.instances.len() as u32);
        let owner = OwnerId::Instance(id);
        let mut schemas: Vec<(String, Option<usize>)> = template.inboxes.clone();
        let mut scanned = Vec::new();
        if let Some(b) = &template.brain {
            scanned.extend(wait_schemas(b));
        }
        for h in template.handlers.values() {
            scanned.extend(wait_schemas(h));
        }
        for s in scanned {
            if !schemas.iter().any(|(n, _)| *n == s) {
                schemas.push((s, self.config.default_capacity));
            }
        }
        for (s, cap) in schemas {
            self.bus.register(owner, &s, cap).expect("schemas deduplicated");
        }
        let mut inst = SeInstance::instantiate(id, name, template, entity, env, &mut self.locks);
        if let Some(n) = inst.template.state.iter().find(|(k, _)| k == "seats").and_then(|(_, v)| v.as_num()) {
            let at = self.entities[entity.index()].pos.unwrap_or_default();
            inst.bench = Some(BenchState::new(at, n.max(0) as usize));
        }
        self.entities[entity.index()].instance = Some(id);
        self.instances.push(inst);
        self.inst_rngs.push(stream(self.config.seed, name));
        self.by_name.insert(name.to_string(), owner);
        id
    }

    /// Registers an area instance under `parent` (the root when `None`).
    pub fn add_area(&mut self, instance: InstanceId, bounds: Rect, parent: Option<InstanceId>, resolution_root: bool) {
        let p = parent.and_then(|p| self.areas.index_of(p)).unwrap_or(0);
        self.areas.add(instance, bounds, p, resolution_root);
    }

    pub fn add_door(&mut self, instance: InstanceId, entry: Cell, exit: Cell, cost: u32, locked: bool) {
        self.nav_edges.push(NavEdge { door: instance, a: entry, b: exit, cost });
        self.instances[instance.index()].door =
            Some(DoorState { locked, entry: Some(entry), exit: Some(exit), cost, ..Default::default() });
    }

    pub fn add_npc(&mut self, name: &str, template: Arc<NpcTemplate>, pos: Cell, attrs: BTreeMap<String, Value>) -> NpcId {
        let id = NpcId(self.npcs.len() as u32);
        let owner = OwnerId::Npc(id);
        self.bus.register(owner, SYS_SITUATION, None).expect("fresh owner");
        self.bus.register(owner, SYS_DAYCYCLE, None).expect("fresh owner");
        let mut schemas: Vec<(String, Option<usize>)> = Vec::new();
        for (s, cap) in &template.inboxes {
            schemas.push((s.clone(), *cap));
        }
        for def in [Some(&template.ambient), template.combat.as_ref(), template.quest.as_ref()].into_iter().flatten() {
            for s in wait_schemas(def) {
                if !schemas.iter().any(|(n, _)| *n == s) {
                    schemas.push((s, self.config.default_capacity));
                }
            }
        }
        for (s, cap) in schemas {
            if self.bus.lookup(owner, &s).is_none() {
                self.bus.register(owner, &s, cap).expect("checked");
            }
        }
        let mut all_attrs: BTreeMap<String, Value> = template.attrs.iter().cloned().collect();
        all_attrs.extend(attrs);
        self.npcs.push(Npc {
            id,
            name: name.to_string(),
            template,
            pos,
            posture: Posture::Standing,
            attrs: all_attrs,
            combat: false,
            quest: false,
            brain: Some(NpcBrain::new(id)),
            active: None,
            stack: Vec::new(),
            subscription: 0,
            in_situation: None,
            overrides: BTreeMap::new(),
            window: None,
            pending_drops: Vec::new(),
            areas: Vec::new(),
            rng: stream(self.config.seed, name),
            line: 0,
        });
        self.by_name.insert(name.to_string(), owner);
        id
    }

    pub fn add_driver(&mut self, name: &str) -> u32 {
        let id = self.drivers.len() as u32;
        for s in DRIVER_INBOXES {
            self.bus.register(OwnerId::Driver(id), s, None).expect("fresh driver");
        }
        self.drivers.push(Driver { id, name: name.to_string(), received: Vec::new() });
        self.by_name.insert(name.to_string(), OwnerId::Driver(id));
        id
    }

    pub fn add_situation_template(&mut self, t: SituationTemplate) {
        self.situation_templates.push(Arc::new(t));
        self.manager.cooldown_until.push(0);
    }

    pub fn schedule_at(&mut self, tick: u64, ev: Scheduled) {
        self.schedule.entry(tick).or_default().push(ev);
    }

    /// Computes initial area membership; areas containing an NPC at
    /// creation receive an enter event for it.
    pub fn finalize(&mut self) {
        for i in 0..self.npcs.len() {
            let now = self.areas_at(self.npcs[i].pos);
            for &a in &now {
                self.push_event(a, SeEvent { kind: EventKind::Enter, npc: NpcId(i as u32), behavior: None, reason: None, tick: 0 });
            }
            self.npcs[i].areas = now;
        }
    }

    // ---- lookups ------------------------------------------------------

    pub fn npc_id(&self, name: &str) -> Option<NpcId> {
        match self.by_name.get(name) {
            Some(OwnerId::Npc(n)) => Some(*n),
            _ => None,
        }
    }

    pub fn instance_id(&self, name: &str) -> Option<InstanceId> {
        match self.by_name.get(name) {
            Some(OwnerId::Instance(i)) => Some(*i),
            _ => None,
        }
    }

    pub fn npc(&self, name: &str) -> Option<&Npc> {
        self.npc_id(name).map(|n| &self.npcs[n.index()])
    }

    pub fn instance(&self, name: &str) -> Option<&SeInstance> {
        self.instance_id(name).map(|i| &self.instances[i.index()])
    }

    pub fn minute_of_day(&self) -> u32 {
        let tpm = self.config.ticks_per_minute.max(1);
        ((u64::from(self.config.start_minute) + self.tick / tpm) % 1440) as u32
    }

    /// Instance ids of every area containing `cell`, innermost first.
    pub fn areas_at(&self, cell: Cell) -> Vec<InstanceId> {
        self.areas.containing(cell).into_iter().map(|a| self.areas.node(a).instance).collect()
    }

    pub fn owner_name(&self, o: OwnerId) -> String {
        match o {
            OwnerId::Npc(n) => self.npcs[n.index()].name.clone(),
            OwnerId::Instance(i) => self.instances[i.index()].name.clone(),
            OwnerId::Situation(s) => format!("situation-{}", s.0),
            OwnerId::Manager => "manager".into(),
            OwnerId::Driver(d) => self.drivers[d as usize].name.clone(),
            OwnerId::World => "world".into(),
        }
    }

    pub fn ref_name(&self, r: EntityRef) -> String {
        match r {
            EntityRef::Npc(n) => self.npcs[n.index()].name.clone(),
            EntityRef::Instance(i) => self.instances[i.index()].name.clone(),
            EntityRef::Entity(e) => self.entities[e.index()].name.clone(),
            EntityRef::Situation(s) => format!("situation-{}", s.0),
            EntityRef::Driver(d) => self.drivers[d as usize].name.clone(),
            EntityRef::Cell(c) => c.to_string(),
        }
    }

    pub fn render(&self, v: &Value) -> String {
        match v {
            Value::Ref(r) => self.ref_name(*r),
            Value::List(l) => format!("[{}]", l.iter().map(|x| self.render(x)).collect::<Vec<_>>().join(";")),
            other => other.to_string(),
        }
    }

    /// Who receives messages addressed to `v`.
    pub fn owner_of(&self, v: &Value) -> Option<OwnerId> {
        match v {
            Value::Ref(EntityRef::Npc(n)) => Some(OwnerId::Npc(*n)),
            Value::Ref(EntityRef::Instance(i)) => Some(OwnerId::Instance(*i)),
            Value::Ref(EntityRef::Driver(d)) => Some(OwnerId::Driver(*d)),
            Value::Ref(EntityRef::Situation(s)) => Some(OwnerId::Situation(*s)),
            Value::Ref(EntityRef::Entity(e)) => self.entities.get(e.index())?.instance.map(OwnerId::Instance),
            Value::Str(s) => self.by_name.get(s).copied(),
            _ => None,
        }
    }

    /// The grid cell a value designates.
    pub fn cell_of(&self, v: &Value) -> Option<Cell> {
        match v {
            Value::Ref(EntityRef::Cell(c)) => Some(*c),
            Value::Ref(EntityRef::Npc(n)) => self.npcs.get(n.index()).map(|n| n.pos),
            Value::Ref(EntityRef::Instance(i)) => self.entities[self.instances.get(i.index())?.entity.index()].pos,
            Value::Ref(EntityRef::Entity(e)) => self.entities.get(e.index())?.pos,
            Value::Str(s) => match self.by_name.get(s)? {
                OwnerId::Npc(n) => Some(self.npcs[n.index()].pos),
                OwnerId::Instance(i) => self.entities[self.instances[i.index()].entity.index()].pos,
                _ => self.entities.iter().find(|e| e.name == *s)?.pos,
            },
            _ => None,
        }
    }

    // ---- shared services ----------------------------------------------

    pub(crate) fn next_serial(&mut self) -> u64 {
        self.serial += 1;
        self.serial
    }

    pub(crate) fn emit(&mut self, owner: OwnerId, kind: &str, fields: &[(&str, String)]) {
        if !self.trace.enabled() {
            return;
        }
        let name = self.owner_name(owner);
        self.trace.emit(self.tick, &name, kind, fields);
    }

    pub(crate) fn inst_rng(&mut self, i: InstanceId) -> &mut ChaCha8Rng {
        &mut self.inst_rngs[i.index()]
    }

    pub(crate) fn violation(&mut self, msg: String) {
        self.emit(OwnerId::World, "violation", &[("what", msg.clone())]);
        self.stats.violations.push(format!("tick {}: {msg}", self.tick));
    }

    pub(crate) fn diagnose(&mut self, owner: OwnerId, msg: String) {
        self.stats.diagnostics += 1;
        self.emit(owner, "diagnostic", &[("msg", msg.clone())]);
        if self.diagnostics.len() < 1000 {
            let name = self.owner_name(owner);
            self.diagnostics.push(format!("tick {} {name}: {msg}", self.tick));
        }
    }

    /// Queues an instance event when the instance has a handler for it.
    pub(crate) fn push_event(&mut self, inst: InstanceId, ev: SeEvent) {
        let kind = ev.kind;
        let npc = ev.npc;
        if self.instances[inst.index()].enqueue(ev) && self.trace.enabled() {
            let n = self.npcs[npc.index()].name.clone();
            self.emit(OwnerId::Instance(inst), "event-queued", &[("event", kind.as_str().into()), ("npc", n)]);
        }
    }

    /// Sends one message on behalf of `sender` and traces it.
    pub fn send_from(
        &mut self,
        sender: OwnerId,
        to: OwnerId,
        schema: &str,
        kind: MessageKind,
        payload: Vec<(String, Value)>,
    ) -> SendStatus {
        let status = match self.bus.lookup(to, schema) {
            Some(id) => {
                let fields = if self.trace.enabled() {
                    payload.iter().map(|(k, v)| format!("{k}:{}", self.render(v))).collect::<Vec<_>>().join(",")
                } else {
                    String::new()
                };
                let st = self.bus.send(id, Message { sender, schema: schema.to_string(), kind, payload, sent_tick: self.tick });
                if self.trace.enabled() {
                    let to_name = self.owner_name(to);
                    self.emit(
                        sender,
                        "message-sent",
                        &[("to", to_name), ("schema", schema.into()), ("status", status_str(st).into()), ("payload", fields)],
                    );
                }
                st
            }
            None => {
                if self.trace.enabled() {
                    let to_name = self.owner_name(to);
                    self.emit(sender, "message-sent", &[("to", to_name), ("schema", schema.into()), ("status", "no-such-inbox".into())]);
                }
                SendStatus::NoSuchInbox
            }
        };
        status
    }

    // ---- the tick -----------------------------------------------------

    pub fn step(&mut self) -> Result<(), RuntimeError> {
        if let Some(e) = &self.fatal {
            return Err(e.clone());
        }
        let t = self.tick;
        self.apply_schedule(t);
        self.bus.deliver(t);
        self.manager.snapshot = self.npcs.iter().map(|n| n.subscription > 0).collect();

        for i in 0..self.npcs.len() {
            self.update_npc(i);
        }
        for j in 0..self.instances.len() {
            if self.instances[j].is_due(t) {
                self.update_instance(j);
            }
        }
        self.manager_phase();
        self.drain_drivers();
        self.world_phase();

        if self.chaos_tick == Some(t) {
            self.emit(OwnerId::World, "chaos", &[]);
        }
        self.trace.end_tick();
        self.tick += 1;
        self.stats.ticks += 1;
        match &self.fatal {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    /// Steps `ticks` times, stopping at the first runtime error.
    pub fn run(&mut self, ticks: u64) -> Result<(), RuntimeError> {
        for _ in 0..ticks {
            self.step()?;
        }
        Ok(())
    }

    fn apply_schedule(&mut self, t: u64) {
        let Some(events) = self.schedule.remove(&t) else { return };
        for ev in events {
            match ev {
                Scheduled::Combat { npc, on } => {
                    self.npcs[npc.index()].combat = on;
                    self.emit(OwnerId::Npc(npc), "flag", &[("combat", on.to_string())]);
                }
                Scheduled::Quest { npc, on } => {
                    self.npcs[npc.index()].quest = on;
                    self.emit(OwnerId::Npc(npc), "flag", &[("quest", on.to_string())]);
                }
                Scheduled::Start { driver, quest } => {
                    self.send_from(
                        OwnerId::Driver(driver),
                        OwnerId::Instance(quest),
                        "quest-start",
                        MessageKind::RequestChange,
                        vec![("driver".into(), Value::Ref(EntityRef::Driver(driver)))],
                    );
                }
            }
        }
    }

    fn drain_drivers(&mut self) {
        for d in 0..self.drivers.len() {
            let owner = OwnerId::Driver(d as u32);
            for s in DRIVER_INBOXES {
                let Some(id) = self.bus.lookup(owner, s) else { continue };
                let msgs = self.bus.drain(owner, id, None).unwrap_or_default();
                for m in msgs {
                    let from = self.owner_name(m.sender);
                    self.emit(owner, "driver-received", &[("schema", m.schema.clone()), ("from", from)]);
                    self.drivers[d].received.push((self.tick, m));
                }
            }
        }
    }

    /// Phase 5: actions progress, effects land, area membership updates.
    fn world_phase(&mut self) {
        for a in self.actions.advance() {
            let ok = self.apply_effect(a.owner, a.effect, &a.params);
            if !a.tail {
                self.actions.record(a.handle, ok);
            }
            if self.trace.enabled() {
                self.emit(OwnerId::Npc(a.owner), "action-completed", &[("action", a.name.into()), ("ok", ok.to_string())]);
            }
        }
        for i in 0..self.npcs.len() {
            let now = self.areas_at(self.npcs[i].pos);
            let before = std::mem::take(&mut self.npcs[i].areas);
            let npc = NpcId(i as u32);
            for &a in before.iter().filter(|a| !now.contains(a)) {
                let drops: Vec<u64> = self.npcs[i]
                    .stack
                    .iter()
                    .filter(|e| e.source == a && e.drop == crate::bt::DropPolicy::OnAreaExit)
                    .map(|e| e.serial)
                    .collect();
                self.npcs[i].pending_drops.extend(drops);
                let an = self.instances[a.index()].name.clone();
                self.emit(OwnerId::Npc(npc), "area-exit", &[("area", an)]);
                self.push_event(a, SeEvent { kind: EventKind::Exit, npc, behavior: None, reason: None, tick: self.tick });
            }
            for &a in now.iter().filter(|a| !before.contains(a)) {
                let an = self.instances[a.index()].name.clone();
                self.emit(OwnerId::Npc(npc), "area-enter", &[("area", an)]);
                self.push_event(a, SeEvent { kind: EventKind::Enter, npc, behavior: None, reason: None, tick: self.tick });
            }
            self.npcs[i].areas = now;
        }
    }

    /// Applies an action's world effect; false when it cannot take effect.
    pub(crate) fn apply_effect(&mut self, owner: NpcId, effect: Effect, params: &[(String, Value)]) -> bool {
        let param = |k: &str| params.iter().find(|(n, _)| n == k).map(|(_, v)| v);
        let i = owner.index();
        match effect {
            Effect::None => true,
            Effect::Relocate => match param("to").and_then(|v| self.cell_of(v)) {
                Some(c) if self.grid.passable(c) => {
                    self.npcs[i].pos = c;
                    true
                }
                _ => false,
            },
            Effect::SitDown => match param("seat") {
                Some(Value::Ref(EntityRef::Instance(s))) => {
                    self.npcs[i].posture = Posture::Seated(*s);
                    true
                }
                _ => false,
            },
            Effect::StandUp => {
                self.npcs[i].posture = Posture::Standing;
                true
            }
            Effect::Wander => {
                use rand::Rng;
                let pos = self.npcs[i].pos;
                let options: Vec<Cell> = self.grid.neighbors(pos).collect();
                if options.is_empty() {
                    return false;
                }
                let k = self.npcs[i].rng.gen_range(0..options.len());
                self.npcs[i].pos = options[k];
                true
            }
            Effect::PickUp => {
                let item = param("item").cloned().unwrap_or(Value::Bool(true));
                self.npcs[i].attrs.insert("carrying".into(), item);
                true
            }
            Effect::UseUp => self.npcs[i].attrs.remove("carrying").is_some(),
        }
    }

    /// Consistency of the whole world; empty when every invariant holds.
    pub fn check(&self) -> Vec<String> {
        check::check(self)
    }
}

pub(crate) fn status_str(s: SendStatus) -> &'static str {
    match s {
        SendStatus::Delivered => "delivered",
        SendStatus::Dropped => "dropped",
        SendStatus::NoSuchInbox => "no-such-inbox",
    }
}
