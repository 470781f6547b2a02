//! Smart-entity templates and instances: behavior tables with gating,
//! environment data bound from the link graph, the event queue and the
//! optional brain.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use crate::bt::{DropPolicy, LockStore, Node, NodeDef, RefuseReason, ReleaseReason, TreeContext};
use crate::value::{Cell, EntityId, EntityRef, Fnv1a, InstanceId, LockCtxId, NpcId, OwnerId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SeKind {
    Object,
    Nav,
    Area,
    Quest,
}

impl SeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SeKind::Object => "object",
            SeKind::Nav => "nav",
            SeKind::Area => "area",
            SeKind::Quest => "quest",
        }
    }
}

/// What a world entity is, for link kind checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EntityKind {
    Instance(SeKind),
    Anchor,
    Item,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Instance(k) => k.as_str(),
            EntityKind::Anchor => "anchor",
            EntityKind::Item => "item",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "object" => EntityKind::Instance(SeKind::Object),
            "nav" => EntityKind::Instance(SeKind::Nav),
            "area" => EntityKind::Instance(SeKind::Area),
            "quest" => EntityKind::Instance(SeKind::Quest),
            "anchor" => EntityKind::Anchor,
            "item" => EntityKind::Item,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EventKind {
    Adopt,
    Drop,
    Enter,
    Exit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Adopt => "adopt",
            EventKind::Drop => "drop",
            EventKind::Enter => "enter",
            EventKind::Exit => "exit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "adopt" => EventKind::Adopt,
            "drop" => EventKind::Drop,
            "enter" => EventKind::Enter,
            "exit" => EventKind::Exit,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkReq {
    pub label: String,
    pub min: u32,
    pub max: Option<u32>,
    pub kind: Option<EntityKind>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorDef {
    pub name: String,
    pub tree: Arc<NodeDef>,
    pub enabled: bool,
    pub max_holders: u32,
    /// Resolvable by general area requests.
    pub general: bool,
    /// Only reachable through a private request from a nested grant.
    pub private: bool,
    /// Attached imperatively (navigation objects) rather than requested.
    pub oncommand: bool,
    /// Allowed to share its name with a behavior of an enclosing area.
    pub dual: bool,
    pub drop: DropPolicy,
    pub inboxes: Vec<String>,
    /// For general behaviors: pick a provider among instances linked under
    /// the label that offer the named behavior.
    pub providers: Option<(String, String)>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeTemplate {
    pub name: String,
    pub kind: SeKind,
    pub behaviors: Vec<BehaviorDef>,
    pub brain: Option<Arc<NodeDef>>,
    pub handlers: BTreeMap<EventKind, Arc<NodeDef>>,
    pub links: Vec<LinkReq>,
    pub period: Option<u32>,
    pub state: Vec<(String, Value)>,
    pub inboxes: Vec<(String, Option<usize>)>,
    pub line: u32,
}

impl SeTemplate {
    pub fn behavior(&self, name: &str) -> Option<&BehaviorDef> {
        self.behaviors.iter().find(|b| b.name == name)
    }

    /// Whether instances are ever updated by the scheduler.
    pub fn is_active(&self) -> bool {
        self.brain.is_some() || !self.handlers.is_empty()
    }

    /// Brain update period: areas every tick, objects every fourth tick.
    pub fn default_period(&self) -> u32 {
        self.period.unwrap_or(match self.kind {
            SeKind::Area => 1,
            _ => 4,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Gate {
    pub enabled: bool,
    pub max: u32,
    /// Current holders in adoption order.
    pub holders: Vec<NpcId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeEvent {
    pub kind: EventKind,
    pub npc: NpcId,
    pub behavior: Option<String>,
    pub reason: Option<ReleaseReason>,
    pub tick: u64,
}

/// Brain tree and the instance state. State variables live in the brain's
/// context so brain and handler trees read and write them directly.
#[derive(Debug)]
pub struct Mind {
    pub main: Option<Node>,
    pub ctx: TreeContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub npc: NpcId,
    pub key: bool,
    pub player: bool,
    pub since: u64,
}

/// Door brain bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DoorState {
    pub queue: Vec<QueueEntry>,
    pub busy: Option<NpcId>,
    pub locked: bool,
    pub entry: Option<Cell>,
    pub exit: Option<Cell>,
    pub cost: u32,
}

impl DoorState {
    /// Who goes next: the player first, then, while locked, the earliest
    /// keyholder; otherwise the queue head. While locked with no keyholder
    /// waiting, the head is held back until it has waited `patience` ticks.
    pub fn pick(&self, now: u64, patience: u64) -> Option<usize> {
        if self.busy.is_some() || self.queue.is_empty() {
            return None;
        }
        if let Some(i) = self.queue.iter().position(|e| e.player) {
            return Some(i);
        }
        if self.locked {
            if let Some(i) = self.queue.iter().position(|e| e.key) {
                return Some(i);
            }
            if now.saturating_sub(self.queue[0].since) < patience {
                return None;
            }
        }
        Some(0)
    }

    pub fn purge(&mut self, npc: NpcId) {
        self.queue.retain(|e| e.npc != npc);
    }
}

/// Seat bookkeeping of a multi-seat bench. Seat 1 is next to the exit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BenchState {
    pub seats: Vec<Option<NpcId>>,
    pub cells: Vec<Cell>,
    pub exit: Cell,
}

impl BenchState {
    pub fn new(at: Cell, seats: usize) -> Self {
        BenchState {
            seats: vec![None; seats],
            cells: (0..seats).map(|i| Cell::new(at.x + i as i32, at.y)).collect(),
            exit: Cell::new(at.x - 1, at.y),
        }
    }

    pub fn seat_of(&self, npc: NpcId) -> Option<usize> {
        self.seats.iter().position(|s| *s == Some(npc))
    }

    /// Assigns the wanted seat (1-based) if free, else the lowest free one.
    pub fn assign(&mut self, npc: NpcId, want: Option<usize>) -> Option<usize> {
        if let Some(s) = self.seat_of(npc) {
            return Some(s);
        }
        let pick = want
            .filter(|&w| w >= 1 && w <= self.seats.len() && self.seats[w - 1].is_none())
            .map(|w| w - 1)
            .or_else(|| self.seats.iter().position(|s| s.is_none()))?;
        self.seats[pick] = Some(npc);
        Some(pick)
    }

    /// Occupants between the given seat and the exit, nearest the exit first.
    pub fn blockers(&self, seat: usize) -> Vec<NpcId> {
        self.seats[..seat].iter().flatten().copied().collect()
    }

    pub fn free(&mut self, npc: NpcId) {
        for s in self.seats.iter_mut() {
            if *s == Some(npc) {
                *s = None;
            }
        }
    }
}

#[derive(Debug)]
pub struct SeInstance {
    pub id: InstanceId,
    pub name: String,
    pub template: Arc<SeTemplate>,
    pub entity: EntityId,
    /// Immutable after initialization.
    env: BTreeMap<String, Vec<EntityRef>>,
    env_hash: u64,
    pub gating: BTreeMap<String, Gate>,
    pub events: VecDeque<SeEvent>,
    pub mind: Option<Mind>,
    pub lock_ctx: LockCtxId,
    /// The previous update ran a handler, so the next one must tick the main tree.
    pub handler_last: bool,
    pub period: u32,
    pub door: Option<DoorState>,
    pub bench: Option<BenchState>,
    pub adopts: u64,
    pub drops: u64,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("missing link `{label}`: found {found}, need at least {min}")]
    MissingLink { label: String, found: usize, min: u32 },
    #[error("link `{label}` has {found} targets, at most {max} allowed")]
    CardinalityViolation { label: String, found: usize, max: u32 },
    #[error("link `{label}` target `{target}` is {found}, expected {expected}")]
    KindMismatch { label: String, target: String, found: &'static str, expected: &'static str },
}

/// A link target as seen by the binder.
#[derive(Debug, Clone)]
pub struct LinkTarget {
    pub name: String,
    pub kind: EntityKind,
    pub reference: EntityRef,
}

/// Resolves a template's required links against the outgoing links of an
/// entity. Every violation is reported.
pub fn bind(
    template: &SeTemplate,
    outgoing: &BTreeMap<String, Vec<LinkTarget>>,
) -> Result<BTreeMap<String, Vec<EntityRef>>, Vec<BindError>> {
    let mut errs = Vec::new();
    for req in &template.links {
        let targets = outgoing.get(&req.label).map(Vec::as_slice).unwrap_or(&[]);
        if (targets.len() as u32) < req.min {
            errs.push(BindError::MissingLink { label: req.label.clone(), found: targets.len(), min: req.min });
        }
        if let Some(max) = req.max {
            if targets.len() as u32 > max {
                errs.push(BindError::CardinalityViolation { label: req.label.clone(), found: targets.len(), max });
            }
        }
        if let Some(kind) = req.kind {
            for t in targets {
                if t.kind != kind {
                    errs.push(BindError::KindMismatch {
                        label: req.label.clone(),
                        target: t.name.clone(),
                        found: t.kind.as_str(),
                        expected: kind.as_str(),
                    });
                }
            }
        }
    }
    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(outgoing.iter().map(|(k, v)| (k.clone(), v.iter().map(|t| t.reference).collect())).collect())
}

fn hash_env(env: &BTreeMap<String, Vec<EntityRef>>) -> u64 {
    let mut h = Fnv1a::new();
    for (k, v) in env {
        h.write(k.as_bytes());
        for r in v {
            h.write(format!("{r:?}").as_bytes());
        }
    }
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatingError {
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(String),
}

impl SeInstance {
    pub fn instantiate(
        id: InstanceId,
        name: &str,
        template: Arc<SeTemplate>,
        entity: EntityId,
        env: BTreeMap<String, Vec<EntityRef>>,
        locks: &mut LockStore,
    ) -> SeInstance {
        let gating = template
            .behaviors
            .iter()
            .map(|b| (b.name.clone(), Gate { enabled: b.enabled, max: b.max_holders, holders: Vec::new() }))
            .collect();
        let owner = OwnerId::Instance(id);
        let lock_ctx = locks.create(owner);
        let mind = template.is_active().then(|| {
            let mut ctx = TreeContext::new(owner);
            ctx.own_lock_ctx = Some(lock_ctx);
            for (k, v) in &template.state {
                ctx.set(k.clone(), v.clone());
            }
            Mind { main: template.brain.as_ref().map(Node::build), ctx }
        });
        let env_hash = hash_env(&env);
        SeInstance {
            id,
            name: name.to_string(),
            period: template.default_period(),
            template,
            entity,
            env,
            env_hash,
            gating,
            events: VecDeque::new(),
            mind,
            lock_ctx,
            handler_last: false,
            door: None,
            bench: None,
            adopts: 0,
            drops: 0,
            line: 0,
        }
    }

    pub fn kind(&self) -> SeKind {
        self.template.kind
    }

    pub fn env(&self) -> &BTreeMap<String, Vec<EntityRef>> {
        &self.env
    }

    pub fn linked(&self, label: &str) -> &[EntityRef] {
        self.env.get(label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Environment data has not changed since initialization.
    pub fn env_intact(&self) -> bool {
        hash_env(&self.env) == self.env_hash
    }

    /// Passive gating check for one behavior.
    pub fn check(&self, behavior: &str) -> Result<&BehaviorDef, RefuseReason> {
        let def = self.template.behavior(behavior).ok_or(RefuseReason::NoSuchBehavior)?;
        let gate = &self.gating[behavior];
        if !gate.enabled {
            return Err(RefuseReason::Disabled);
        }
        if gate.holders.len() as u32 >= gate.max {
            return Err(RefuseReason::MaxHoldersReached);
        }
        Ok(def)
    }

    /// The first grantable behavior among those `filter` accepts; when none
    /// is grantable, the refusal of the first accepted one.
    pub fn first_available(&self, filter: &dyn Fn(&BehaviorDef) -> bool) -> Result<&BehaviorDef, RefuseReason> {
        let mut first_refusal = None;
        for b in self.template.behaviors.iter().filter(|b| filter(b)) {
            match self.check(&b.name) {
                Ok(def) => return Ok(def),
                Err(r) => {
                    first_refusal.get_or_insert(r);
                }
            }
        }
        Err(first_refusal.unwrap_or(RefuseReason::NoSuchBehavior))
    }

    pub fn free_capacity(&self, behavior: &str) -> u32 {
        match (self.gating.get(behavior), self.template.behavior(behavior)) {
            (Some(g), Some(_)) if g.enabled => g.max.saturating_sub(g.holders.len() as u32),
            _ => 0,
        }
    }

    /// Updates gating. Lowering the maximum never evicts current holders.
    /// Returns whether anything changed.
    pub fn set_gating(&mut self, behavior: &str, enabled: Option<bool>, max: Option<u32>) -> Result<bool, GatingError> {
        let gate = self.gating.get_mut(behavior).ok_or_else(|| GatingError::UnknownBehavior(behavior.to_string()))?;
        let before = (gate.enabled, gate.max);
        if let Some(e) = enabled {
            gate.enabled = e;
        }
        if let Some(m) = max {
            gate.max = m;
        }
        Ok(before != (gate.enabled, gate.max))
    }

    pub fn query_holders(&self, behavior: &str) -> Result<Vec<NpcId>, GatingError> {
        self.gating.get(behavior).map(|g| g.holders.clone()).ok_or_else(|| GatingError::UnknownBehavior(behavior.to_string()))
    }

    pub fn add_holder(&mut self, behavior: &str, npc: NpcId) {
        self.gating.get_mut(behavior).expect("checked behavior").holders.push(npc);
        self.adopts += 1;
    }

    pub fn remove_holder(&mut self, behavior: &str, npc: NpcId) {
        let gate = self.gating.get_mut(behavior).expect("held behavior");
        if let Some(i) = gate.holders.iter().position(|h| *h == npc) {
            gate.holders.remove(i);
        }
        self.drops += 1;
    }

    pub fn total_holders(&self) -> usize {
        self.gating.values().map(|g| g.holders.len()).sum()
    }

    pub fn has_handler(&self, kind: EventKind) -> bool {
        self.template.handlers.contains_key(&kind)
    }

    /// Queues an event when the instance reacts to it at all.
    pub fn enqueue(&mut self, event: SeEvent) -> bool {
        if self.has_handler(event.kind) {
            self.events.push_back(event);
            true
        } else {
            false
        }
    }

    /// Due for a scheduled update at `tick`.
    pub fn is_due(&self, tick: u64) -> bool {
        if self.mind.is_none() {
            return false;
        }
        if self.template.brain.is_none() {
            return !self.events.is_empty();
        }
        let p = u64::from(self.period.max(1));
        tick % p == u64::from(self.id.0) % p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::NodeKind;

    fn template(kind: SeKind, behaviors: &[(&str, u32)]) -> SeTemplate {
        let tree = Arc::new(NodeDef::leaf(NodeKind::Condition { predicate: "true".into(), args: vec![] }));
        SeTemplate {
            name: "t".into(),
            kind,
            behaviors: behaviors
                .iter()
                .map(|(n, max)| BehaviorDef {
                    name: n.to_string(),
                    tree: tree.clone(),
                    enabled: true,
                    max_holders: *max,
                    general: false,
                    private: false,
                    oncommand: false,
                    dual: false,
                    drop: DropPolicy::OnCompletion,
                    inboxes: vec![],
                    providers: None,
                    line: 0,
                })
                .collect(),
            brain: None,
            handlers: BTreeMap::new(),
            links: vec![LinkReq { label: "seat".into(), min: 1, max: None, kind: Some(EntityKind::Instance(SeKind::Object)), line: 0 }],
            period: None,
            state: vec![],
            inboxes: vec![],
            line: 0,
        }
    }

    fn instance(t: SeTemplate) -> SeInstance {
        SeInstance::instantiate(InstanceId(0), "x", Arc::new(t), EntityId(0), BTreeMap::new(), &mut LockStore::default())
    }

    #[test]
    fn bind_reports_every_violation() {
        let t = template(SeKind::Area, &[]);
        let errs = bind(&t, &BTreeMap::new()).unwrap_err();
        assert_eq!(errs, vec![BindError::MissingLink { label: "seat".into(), found: 0, min: 1 }]);

        let chairs: Vec<LinkTarget> = (0..4)
            .map(|i| LinkTarget {
                name: format!("chair-{i}"),
                kind: EntityKind::Instance(SeKind::Object),
                reference: EntityRef::Instance(InstanceId(i + 1)),
            })
            .collect();
        let env = bind(&t, &BTreeMap::from([("seat".to_string(), chairs)])).unwrap();
        assert_eq!(env["seat"].len(), 4);

        let wrong = vec![LinkTarget { name: "rock".into(), kind: EntityKind::Item, reference: EntityRef::Entity(EntityId(9)) }];
        let errs = bind(&t, &BTreeMap::from([("seat".to_string(), wrong)])).unwrap_err();
        assert!(matches!(errs[0], BindError::KindMismatch { .. }));
    }

    #[test]
    fn gating_refuses_full_and_disabled() {
        let mut i = instance(template(SeKind::Object, &[("sit", 1)]));
        assert!(i.check("sit").is_ok());
        i.add_holder("sit", NpcId(1));
        assert_eq!(i.check("sit").unwrap_err(), RefuseReason::MaxHoldersReached);
        i.remove_holder("sit", NpcId(1));
        i.set_gating("sit", Some(false), None).unwrap();
        assert_eq!(i.check("sit").unwrap_err(), RefuseReason::Disabled);
        assert_eq!(i.check("dance").unwrap_err(), RefuseReason::NoSuchBehavior);
        assert!(i.set_gating("dance", Some(true), None).is_err());
    }

    #[test]
    fn lowering_max_keeps_holders() {
        let mut i = instance(template(SeKind::Object, &[("sit", 4)]));
        for n in 0..3 {
            i.add_holder("sit", NpcId(n));
        }
        i.set_gating("sit", None, Some(2)).unwrap();
        assert_eq!(i.query_holders("sit").unwrap(), vec![NpcId(0), NpcId(1), NpcId(2)]);
        assert_eq!(i.check("sit").unwrap_err(), RefuseReason::MaxHoldersReached);
    }

    #[test]
    fn gating_is_idempotent() {
        let mut i = instance(template(SeKind::Object, &[("sit", 1)]));
        assert!(i.set_gating("sit", Some(false), None).unwrap());
        assert!(!i.set_gating("sit", Some(false), None).unwrap());
        assert!(i.set_gating("sit", Some(true), None).unwrap());
        assert_eq!(i.gating["sit"], Gate { enabled: true, max: 1, holders: vec![] });
    }

    #[test]
    fn holders_in_adoption_order() {
        let mut i = instance(template(SeKind::Area, &[("guest", 4)]));
        assert!(i.query_holders("guest").unwrap().is_empty());
        i.add_holder("guest", NpcId(5));
        i.add_holder("guest", NpcId(2));
        assert_eq!(i.query_holders("guest").unwrap(), vec![NpcId(5), NpcId(2)]);
        i.remove_holder("guest", NpcId(5));
        assert_eq!(i.query_holders("guest").unwrap(), vec![NpcId(2)]);
    }

    #[test]
    fn first_available_skips_full() {
        let mut i = instance(template(SeKind::Object, &[("a", 1), ("b", 1)]));
        assert_eq!(i.first_available(&|_| true).unwrap().name, "a");
        i.add_holder("a", NpcId(0));
        assert_eq!(i.first_available(&|_| true).unwrap().name, "b");
        i.add_holder("b", NpcId(1));
        assert_eq!(i.first_available(&|_| true).unwrap_err(), RefuseReason::MaxHoldersReached);
    }

    #[test]
    fn door_priority_rules() {
        let e = |n, key, since| QueueEntry { npc: NpcId(n), key, player: false, since };
        let mut d = DoorState { queue: vec![e(0, false, 0), e(1, false, 1), e(2, true, 2)], ..Default::default() };
        assert_eq!(d.pick(3, 30), Some(0));
        d.locked = true;
        assert_eq!(d.pick(3, 30), Some(2));
        d.queue.remove(2);
        assert_eq!(d.pick(3, 30), None);
        assert_eq!(d.pick(30, 30), Some(0));
        d.queue.push(QueueEntry { npc: NpcId(7), key: false, player: true, since: 9 });
        assert_eq!(d.pick(10, 30), Some(2));
    }

    #[test]
    fn bench_blockers_are_between_seat_and_exit() {
        let mut b = BenchState::new(Cell::new(5, 5), 4);
        for (n, want) in [(10, 1), (11, 2), (12, 3), (13, 4)] {
            assert_eq!(b.assign(NpcId(n), Some(want)), Some(want - 1));
        }
        assert_eq!(b.assign(NpcId(14), None), None);
        assert_eq!(b.blockers(1), vec![NpcId(10)]);
        assert_eq!(b.blockers(3), vec![NpcId(10), NpcId(11), NpcId(12)]);
        b.free(NpcId(11));
        assert_eq!(b.assign(NpcId(14), Some(4)), Some(1));
        assert_eq!(b.exit, Cell::new(4, 5));
    }
}
