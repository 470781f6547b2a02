//! The [`Host`] implementation that connects trees to the world, plus the
//! NPC and smart-entity update procedures built on it.

use rand::Rng;

use super::{plan_path, wait_schemas, RuntimeError, World, HANDLER_CAP, SITUATION_STATUS, SYS_DAYCYCLE, SYS_SITUATION};
use crate::areas::{resolve_area_request, AreaAnswer};
use crate::bt::{
    ActionHandle, ActionStart, ActionState, Arg, BehaviorRequest, CleanupReport, Grant, Host, InjectOutcome, LockOutcome, Node, PathItem,
    RefuseReason, ReleaseReason, RequestOutcome, RequestTarget, Scope, SendTarget, Settle, TickResult, TreeContext,
};
use crate::entities::{BehaviorDef, EventKind, Mind, QueueEntry, SeEvent, SeInstance};
use crate::messaging::{Message, MessageKind, SendStatus};
use crate::npc::{select_subbrain, NpcBrain, Override, Posture, Slot, StackEntry, Subbrain, WindowTarget};
use crate::registry::{self, ActionClass};
use crate::situations::Atom;
use crate::value::{Cell, EntityRef, InstanceId, LockCtxId, NpcId, OwnerId, SituationId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Who {
    Npc(usize),
    Se(usize),
}

/// A resolved request: instance, behavior and variables to bind.
type Target = (InstanceId, String, Vec<(String, Value)>);
/// A refused request and the instance that refused, when known.
type Refusal = (Option<InstanceId>, RefuseReason);

/// One owner's view of the world for the duration of its update.
struct Ctl<'w> {
    w: &'w mut World,
    who: Who,
    owner: OwnerId,
    budget: u32,
    used: u32,
    cleanup_evals: u32,
    cleanup: u32,
    /// Handler runs are not charged against the budget.
    free_run: bool,
}

fn param<'a>(params: &'a [(String, Value)], k: &str) -> Option<&'a Value> {
    params.iter().find(|(n, _)| n == k).map(|(_, v)| v)
}

fn npc_param(params: &[(String, Value)], ctx: &TreeContext) -> Result<NpcId, String> {
    match param(params, "npc").or_else(|| ctx.get("sender")) {
        Some(Value::Ref(EntityRef::Npc(n))) => Ok(*n),
        Some(v) => Err(format!("npc= must be an NPC reference, got {}", v.type_name())),
        None => Err("missing npc=".into()),
    }
}

fn npc_ref(n: NpcId) -> Value {
    Value::Ref(EntityRef::Npc(n))
}

fn slot_scope(s: &Slot) -> Scope {
    Scope { source: EntityRef::Situation(s.situation), behavior: s.role.clone(), lock_ctx: Some(s.lock_ctx), is_area: false }
}

fn provider_weights(w: &World, si: &SeInstance, label: &str, behavior: &str) -> Vec<(InstanceId, u32)> {
    si.linked(label)
        .iter()
        .filter_map(|r| match r {
            EntityRef::Instance(p) => Some((*p, w.instances[p.index()].free_capacity(behavior))),
            _ => None,
        })
        .collect()
}

impl<'w> Ctl<'w> {
    fn new(w: &'w mut World, who: Who, budget: u32) -> Self {
        let owner = match who {
            Who::Npc(i) => OwnerId::Npc(NpcId(i as u32)),
            Who::Se(j) => OwnerId::Instance(InstanceId(j as u32)),
        };
        Ctl { w, who, owner, budget, used: 0, cleanup_evals: 0, cleanup: 0, free_run: false }
    }

    fn npc_index(&self) -> Option<usize> {
        match self.who {
            Who::Npc(i) => Some(i),
            Who::Se(_) => None,
        }
    }

    fn emit(&mut self, kind: &str, fields: &[(&str, String)]) {
        self.w.emit(self.owner, kind, fields);
    }

    fn resolve_arg(&self, a: &Arg, ctx: &TreeContext) -> Result<Value, String> {
        match a {
            Arg::Attr(n) => self.attribute(n).ok_or_else(|| format!("unknown attribute @{n}")),
            other => ctx.lookup(other),
        }
    }

    fn send_sys(&mut self, to: OwnerId, schema: &str, payload: Vec<(String, Value)>) -> SendStatus {
        self.w.send_from(self.owner, to, schema, MessageKind::RequestChange, payload)
    }

    // ---- actions ------------------------------------------------------

    fn finalize(&mut self, h: ActionHandle) {
        if let Some(a) = self.w.actions.take(h) {
            let ok = self.w.apply_effect(a.owner, a.effect, &a.params);
            if self.w.trace.enabled() {
                self.emit("action-finalized", &[("action", a.name.into()), ("ok", ok.to_string())]);
            }
        }
    }

    fn exec_op(&mut self, name: &str, params: &[(String, Value)], ctx: &mut TreeContext) -> Result<ActionStart, String> {
        let var_name = || match param(params, "name") {
            Some(Value::Str(s)) => Ok(s.clone()),
            _ => Err(format!("{name} needs name=")),
        };
        match name {
            "set-var" => {
                let v = param(params, "value").cloned().unwrap_or(Value::Bool(true));
                ctx.set(var_name()?, v);
                return Ok(ActionStart::Done(true));
            }
            "add-var" => {
                let k = var_name()?;
                let n = param(params, "n").and_then(Value::as_num).unwrap_or(1);
                let cur = ctx.get(&k).and_then(Value::as_num).unwrap_or(0);
                ctx.set(k, Value::Num(cur + n));
                return Ok(ActionStart::Done(true));
            }
            "clear-var" => {
                ctx.vars.remove(&var_name()?);
                return Ok(ActionStart::Done(true));
            }
            "get-link" => {
                let label = match param(params, "label") {
                    Some(Value::Str(s)) => s.clone(),
                    _ => return Err("get-link needs label=".into()),
                };
                let src = match (self.who, ctx.this_sa()) {
                    (Who::Se(j), _) => InstanceId(j as u32),
                    (Who::Npc(_), Some(EntityRef::Instance(s))) => s,
                    _ => return Err("get-link outside a smart-entity grant".into()),
                };
                let targets = self.w.instances[src.index()].linked(&label);
                let Some(first) = targets.first().copied() else {
                    return Ok(ActionStart::Done(false));
                };
                let all = Value::List(targets.iter().map(|r| Value::Ref(*r)).collect());
                let as_name = match param(params, "as") {
                    Some(Value::Str(s)) => s.clone(),
                    _ => label,
                };
                ctx.set(format!("{as_name}-all"), all);
                ctx.set(as_name, Value::Ref(first));
                return Ok(ActionStart::Done(true));
            }
            "note" => {
                if self.w.trace.enabled() {
                    let fields: Vec<(String, String)> = params.iter().map(|(k, v)| (k.clone(), self.w.render(v))).collect();
                    let refs: Vec<(&str, String)> = fields.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                    self.emit("note", &refs);
                }
                return Ok(ActionStart::Done(true));
            }
            _ => {}
        }
        let Who::Se(j) = self.who else {
            return Err(format!("`{name}` is only available to smart-entity brains"));
        };
        let now = self.w.tick;
        if name.starts_with("door-") {
            let patience = ctx.get("patience").and_then(Value::as_num).map_or(self.w.config.door_patience, |p| p.max(0) as u64);
            let npc = if name == "door-admit" { None } else { Some(npc_param(params, ctx)?) };
            let (key, player) = match npc {
                Some(n) => {
                    let np = &self.w.npcs[n.index()];
                    (param(params, "key").map_or(np.has_key(), Value::truthy), np.is_player())
                }
                None => (false, false),
            };
            let Some(door) = self.w.instances[j].door.as_mut() else {
                return Err(format!("`{name}` needs a door instance"));
            };
            return Ok(match name {
                "door-enqueue" => {
                    let n = npc.expect("npc");
                    if !door.queue.iter().any(|e| e.npc == n) && door.busy != Some(n) {
                        door.queue.push(QueueEntry { npc: n, key, player, since: now });
                    }
                    let len = door.queue.len();
                    let nn = self.w.npcs[n.index()].name.clone();
                    self.emit("door-enqueued", &[("npc", nn), ("key", key.to_string()), ("queue", len.to_string())]);
                    ActionStart::Done(true)
                }
                "door-admit" => match door.pick(now, patience) {
                    None => ActionStart::Done(false),
                    Some(i) => {
                        let e = door.queue.remove(i);
                        door.busy = Some(e.npc);
                        let unlocked = door.locked && e.key;
                        if unlocked {
                            door.locked = false;
                        }
                        let open = !door.locked;
                        ctx.set("admitted", npc_ref(e.npc));
                        ctx.set("open", Value::Bool(open));
                        let nn = self.w.npcs[e.npc.index()].name.clone();
                        if unlocked {
                            self.emit("door-unlocked", &[("npc", nn.clone())]);
                        }
                        self.emit("door-admitted", &[("npc", nn), ("key", e.key.to_string()), ("waited", (now - e.since).to_string())]);
                        ActionStart::Done(true)
                    }
                },
                "door-release" => {
                    let n = npc.expect("npc");
                    if door.busy == Some(n) {
                        door.busy = None;
                    }
                    door.purge(n);
                    let nn = self.w.npcs[n.index()].name.clone();
                    self.emit("door-released", &[("npc", nn)]);
                    ActionStart::Done(true)
                }
                other => return Err(format!("unknown door operation `{other}`")),
            });
        }
        let n = npc_param(params, ctx)?;
        let nn = self.w.npcs[n.index()].name.clone();
        let Some(bench) = self.w.instances[j].bench.as_mut() else {
            return Err(format!("`{name}` needs a bench instance (state seats=N)"));
        };
        Ok(match name {
            "bench-assign" => {
                let want = param(params, "want").and_then(Value::as_num).map(|w| w.max(0) as usize);
                match bench.assign(n, want) {
                    Some(s) => {
                        ctx.set("seat", Value::Num(s as i64 + 1));
                        ctx.set("seat-cell", Value::Ref(EntityRef::Cell(bench.cells[s])));
                        ctx.set("exit", Value::Ref(EntityRef::Cell(bench.exit)));
                        self.emit("bench-assigned", &[("npc", nn), ("seat", (s + 1).to_string())]);
                        ActionStart::Done(true)
                    }
                    None => {
                        self.emit("bench-full", &[("npc", nn)]);
                        ActionStart::Done(false)
                    }
                }
            }
            "bench-blockers" => {
                let blockers = bench.seat_of(n).map(|s| bench.blockers(s)).unwrap_or_default();
                ctx.set("nblock", Value::Num(blockers.len() as i64));
                ctx.set("blockers", Value::List(blockers.into_iter().map(npc_ref).collect()));
                ActionStart::Done(true)
            }
            "bench-free" => {
                bench.free(n);
                self.emit("bench-freed", &[("npc", nn)]);
                ActionStart::Done(true)
            }
            other => return Err(format!("unknown bench operation `{other}`")),
        })
    }

    // ---- request resolution -------------------------------------------

    fn pick_behavior(&self, inst: InstanceId, name: Option<&str>) -> Result<String, Refusal> {
        let si = &self.w.instances[inst.index()];
        match name {
            Some(n) => {
                let b = si.template.behavior(n).ok_or((Some(inst), RefuseReason::NoSuchBehavior))?;
                if b.private || b.oncommand {
                    return Err((Some(inst), RefuseReason::NoSuchBehavior));
                }
                si.check(n).map(|_| n.to_string()).map_err(|r| (Some(inst), r))
            }
            None => si.first_available(&|b| !b.private && !b.oncommand).map(|b| b.name.clone()).map_err(|r| (Some(inst), r)),
        }
    }

    fn resolve_area(&mut self, i: usize, name: Option<&str>, general: bool) -> Result<Target, Refusal> {
        let w = &*self.w;
        let start = w.areas.innermost(w.npcs[i].pos);
        let filt = |b: &BehaviorDef| !b.private && !b.oncommand && name.is_none_or(|n| b.name == n) && (!general || b.general);
        let mut lookup = |a: usize| {
            let si = &w.instances[w.areas.node(a).instance.index()];
            if !si.template.behaviors.iter().any(filt) {
                return AreaAnswer::Absent;
            }
            match si.first_available(&filt) {
                Ok(b) => {
                    if let Some((label, pb)) = &b.providers {
                        if provider_weights(w, si, label, pb).iter().all(|(_, c)| *c == 0) {
                            return AreaAnswer::Refused(RefuseReason::NoBehaviorAvailable);
                        }
                    }
                    AreaAnswer::Grant(b.name.clone())
                }
                Err(r) => AreaAnswer::Refused(r),
            }
        };
        let res = resolve_area_request(&w.areas, start, general, &mut lookup).map_err(|r| (None, r))?;
        let inst = self.w.areas.node(res.area).instance;
        if self.w.trace.enabled() && !res.escalated.is_empty() {
            let path: Vec<String> =
                res.escalated.iter().map(|&a| self.w.instances[self.w.areas.node(a).instance.index()].name.clone()).collect();
            let to = self.w.instances[inst.index()].name.clone();
            self.emit("request-escalated", &[("from", path.join(",")), ("to", to), ("behavior", res.behavior.clone())]);
        }
        let mut vars = Vec::new();
        let si = &self.w.instances[inst.index()];
        if let Some((label, pb)) = si.template.behavior(&res.behavior).and_then(|b| b.providers.clone()) {
            let weights = provider_weights(self.w, si, &label, &pb);
            let total: u32 = weights.iter().map(|(_, c)| c).sum();
            let mut pick = self.w.npcs[i].rng.gen_range(0..total);
            let mut chosen = weights[0].0;
            for (p, c) in weights {
                if pick < c {
                    chosen = p;
                    break;
                }
                pick -= c;
            }
            let pn = self.w.instances[chosen.index()].name.clone();
            self.emit("provider-selected", &[("provider", pn), ("behavior", pb.clone())]);
            vars.push(("provider".to_string(), Value::Ref(EntityRef::Instance(chosen))));
        }
        Ok((inst, res.behavior, vars))
    }

    fn resolve_request(&mut self, i: usize, req: &BehaviorRequest, name: Option<&str>, ctx: &TreeContext) -> Result<Target, Refusal> {
        let bad = |s: &mut Self, msg: String| {
            s.diagnostic(msg);
            (None, RefuseReason::NoBehaviorAvailable)
        };
        match &req.target {
            RequestTarget::Area => self.resolve_area(i, name, req.general),
            RequestTarget::Explicit(a) => {
                let v = self.resolve_arg(a, ctx).map_err(|e| bad(self, e))?;
                match self.w.owner_of(&v) {
                    Some(OwnerId::Instance(t)) => self.pick_behavior(t, name).map(|b| (t, b, vec![])),
                    _ => Err(bad(self, format!("request target {} is not a smart entity", self.w.render(&v)))),
                }
            }
            RequestTarget::Link(label) => {
                let Some(EntityRef::Instance(src)) = ctx.this_sa() else {
                    return Err(bad(self, format!("link:{label} request outside an object grant")));
                };
                let targets = self.w.instances[src.index()].linked(label).to_vec();
                let mut first = None;
                for r in targets {
                    if let EntityRef::Instance(t) = r {
                        match self.pick_behavior(t, name) {
                            Ok(b) => return Ok((t, b, vec![])),
                            Err(e) => {
                                first.get_or_insert(e);
                            }
                        }
                    }
                }
                Err(first.unwrap_or((Some(src), RefuseReason::NoBehaviorAvailable)))
            }
            RequestTarget::Private => {
                let area = ctx.scopes.iter().rev().find(|s| s.is_area).map(|s| s.source);
                let (Some(EntityRef::Instance(a)), Some(n)) = (area, name) else {
                    return Err((None, RefuseReason::UnknownPrivateBehavior));
                };
                let si = &self.w.instances[a.index()];
                match si.template.behavior(n) {
                    Some(b) if b.private => si.check(n).map(|_| (a, n.to_string(), vec![])).map_err(|r| (Some(a), r)),
                    _ => Err((Some(a), RefuseReason::UnknownPrivateBehavior)),
                }
            }
            RequestTarget::Daycycle => {
                let minute = self.w.minute_of_day();
                let npc = &self.w.npcs[i];
                let Some(widx) = npc.current_window(minute) else {
                    return Err((None, RefuseReason::NoBehaviorAvailable));
                };
                if let Some(o) = npc.overrides.get(&widx) {
                    let Override { source, behavior } = o.clone();
                    return match source {
                        EntityRef::Instance(t) => self.pick_behavior(t, Some(&behavior)).map(|b| (t, b, vec![])),
                        _ => Err((None, RefuseReason::NoBehaviorAvailable)),
                    };
                }
                let win = npc.template.windows[widx].clone();
                match &win.target {
                    WindowTarget::Area => self.resolve_area(i, Some(&win.behavior), win.general),
                    WindowTarget::Instance(n) => match self.w.instance_id(n) {
                        Some(t) => self.pick_behavior(t, Some(&win.behavior)).map(|b| (t, b, vec![])),
                        None => Err(bad(self, format!("day cycle names unknown instance `{n}`"))),
                    },
                }
            }
            RequestTarget::Wrap(a) => {
                let v = self.resolve_arg(a, ctx).map_err(|e| bad(self, e))?;
                let Some(cell) = self.w.cell_of(&v) else {
                    return Err(bad(self, format!("move target {} has no position", self.w.render(&v))));
                };
                let w = &*self.w;
                for area in w.areas.chain(w.areas.innermost(w.npcs[i].pos)) {
                    let node = w.areas.node(area);
                    let si = &w.instances[node.instance.index()];
                    if si.template.behavior("move").is_some_and(|b| !b.private) && node.bounds.contains(cell) {
                        return si
                            .check("move")
                            .map(|_| (si.id, "move".to_string(), vec![("move-target".to_string(), Value::Ref(EntityRef::Cell(cell)))]))
                            .map_err(|r| (Some(si.id), r));
                    }
                }
                Err((None, RefuseReason::TargetOutsideArea))
            }
        }
    }

    fn refuse(&mut self, inst: Option<InstanceId>, behavior: Option<&str>, r: RefuseReason) -> RequestOutcome {
        self.w.stats.refusals += 1;
        if self.w.trace.enabled() {
            let src = inst.map(|i| self.w.instances[i.index()].name.clone()).unwrap_or_else(|| "-".into());
            self.emit("behavior-refused", &[("source", src), ("behavior", behavior.unwrap_or("-").into()), ("reason", r.as_str().into())]);
        }
        RequestOutcome::Refused(r)
    }

    fn grant(&mut self, inst: InstanceId, behavior: &str, ctx: &mut TreeContext, vars: Vec<(String, Value)>) -> RequestOutcome {
        let Some(i) = self.npc_index() else {
            return self.refuse(Some(inst), Some(behavior), RefuseReason::NoSuchBehavior);
        };
        let npc = NpcId(i as u32);
        if self.w.npcs[i].holds(inst, behavior) {
            let err = RuntimeError::Recursion {
                tick: self.w.tick,
                npc: self.w.npcs[i].name.clone(),
                instance: self.w.instances[inst.index()].name.clone(),
                behavior: behavior.to_string(),
            };
            let msg = err.to_string();
            self.emit("runtime-error", &[("error", msg.clone())]);
            self.w.fatal.get_or_insert(err);
            return RequestOutcome::Fatal(msg);
        }
        let si = &mut self.w.instances[inst.index()];
        let def = match si.check(behavior) {
            Ok(d) => d.clone(),
            Err(r) => return self.refuse(Some(inst), Some(behavior), r),
        };
        si.add_holder(behavior, npc);
        let lock_ctx = si.lock_ctx;
        let is_area = si.kind() == crate::entities::SeKind::Area;
        let now = self.w.tick;
        self.w.push_event(inst, SeEvent { kind: EventKind::Adopt, npc, behavior: Some(behavior.to_string()), reason: None, tick: now });
        for s in &def.inboxes {
            self.w.bus.attach(self.owner, s);
        }
        let subtree = self.w.pool.acquire(&def.tree);
        let serial = self.w.next_serial();
        self.w.npcs[i].stack.push(StackEntry {
            serial,
            source: inst,
            behavior: behavior.to_string(),
            depth: ctx.scopes.len(),
            drop: def.drop,
            is_area,
            inboxes: def.inboxes.clone(),
            grant_tick: now,
        });
        for (k, v) in vars {
            ctx.set(k, v);
        }
        self.w.stats.grants += 1;
        if self.w.trace.enabled() {
            let src = self.w.instances[inst.index()].name.clone();
            self.emit("behavior-granted", &[("source", src), ("behavior", behavior.into()), ("serial", serial.to_string())]);
        }
        let grant = Grant {
            serial,
            source: EntityRef::Instance(inst),
            behavior: behavior.to_string(),
            lock_ctx: Some(lock_ctx),
            drop_policy: def.drop,
            inboxes: def.inboxes,
            grant_tick: now,
            is_area,
        };
        RequestOutcome::Granted(grant, subtree)
    }

    // ---- NPC update -----------------------------------------------------

    fn halt_tree(&mut self, brain: &mut NpcBrain, s: Subbrain) {
        if let Some(t) = brain.trees[s.index()].as_mut() {
            if !t.is_fresh() {
                let rep = t.halt(&mut brain.ctx, self);
                if rep.overrun {
                    self.w.stats.overruns += 1;
                }
            }
        }
    }

    fn status(&mut self, sid: SituationId, status: &str) {
        let payload = vec![("situation".into(), Value::Num(i64::from(sid.0))), ("status".into(), Value::Str(status.into()))];
        self.send_sys(OwnerId::Manager, SITUATION_STATUS, payload);
    }

    fn abort_peers(&mut self, sid: SituationId, peers: &[NpcId]) {
        for &p in peers {
            let payload = vec![("op".into(), Value::Str("abort".into())), ("situation".into(), Value::Num(i64::from(sid.0)))];
            self.send_sys(OwnerId::Npc(p), SYS_SITUATION, payload);
        }
    }

    /// Tears down the situation slot. `notify` aborts the peers; `report`
    /// tells the manager this participant dropped.
    fn leave_situation(&mut self, brain: &mut NpcBrain, notify: bool, report: bool, why: &str) {
        let Some(mut slot) = brain.slot.take() else { return };
        let i = self.npc_index().expect("npc");
        if !slot.tree.is_fresh() {
            brain.ctx.scopes.push(slot_scope(&slot));
            let rep = slot.tree.halt(&mut brain.ctx, self);
            brain.ctx.scopes.pop();
            if rep.overrun {
                self.w.stats.overruns += 1;
            }
        }
        for s in wait_schemas(slot.tree.def()) {
            self.w.bus.detach(self.owner, &s);
        }
        let sid = slot.situation;
        let peers = std::mem::take(&mut slot.peers);
        if let Err(e) = self.w.pool.release(slot.tree) {
            self.w.violation(e.to_string());
        }
        self.w.npcs[i].in_situation = None;
        if notify {
            self.abort_peers(sid, &peers);
        }
        if report {
            self.status(sid, "dropped");
        }
        self.emit("situation-left", &[("situation", sid.0.to_string()), ("why", why.into())]);
    }

    fn handle_situation_message(&mut self, brain: &mut NpcBrain, m: Message) {
        let i = self.npc_index().expect("npc");
        let op = m.field("op").and_then(Value::as_str).unwrap_or("").to_string();
        let Some(sid) = m.field("situation").and_then(Value::as_num).map(|n| SituationId(n as u32)) else { return };
        let ours = brain.slot.as_ref().is_some_and(|s| s.situation == sid);
        match op.as_str() {
            "arm" => {
                let peers: Vec<NpcId> = m
                    .field("peers")
                    .and_then(Value::as_list)
                    .unwrap_or(&[])
                    .iter()
                    .filter_map(|v| match v {
                        Value::Ref(EntityRef::Npc(n)) => Some(*n),
                        _ => None,
                    })
                    .collect();
                let npc = &self.w.npcs[i];
                let ok = npc.subscription > 0 && !npc.combat && !npc.quest && brain.slot.is_none() && npc.in_situation.is_none();
                if !ok {
                    self.emit("situation-rejected", &[("situation", sid.0.to_string())]);
                    self.abort_peers(sid, &peers);
                    self.status(sid, "dropped");
                    return;
                }
                let t = m.field("template").and_then(Value::as_num).unwrap_or(0) as usize;
                let r = m.field("role-index").and_then(Value::as_num).unwrap_or(0) as usize;
                let lock = LockCtxId(m.field("lock").and_then(Value::as_num).unwrap_or(0) as u32);
                let role = self.w.situation_templates[t].roles[r].clone();
                let tree = self.w.pool.acquire(&role.tree);
                for s in wait_schemas(&role.tree) {
                    self.w.bus.attach(self.owner, &s);
                }
                brain.ctx.set("peers", Value::List(peers.iter().map(|p| npc_ref(*p)).collect()));
                brain.ctx.set("role", Value::Str(role.name.clone()));
                brain.ctx.set("situation", Value::Num(i64::from(sid.0)));
                for (k, v) in &m.payload {
                    if let Some(rn) = k.strip_prefix("role:") {
                        brain.ctx.set(rn.to_string(), v.clone());
                    }
                }
                brain.slot = Some(Slot { situation: sid, role: role.name.clone(), tree, peers, lock_ctx: lock, finished: false });
                self.w.npcs[i].in_situation = Some(sid);
                self.status(sid, "started");
                self.emit("situation-armed", &[("situation", sid.0.to_string()), ("role", role.name)]);
            }
            "abort" if ours => self.leave_situation(brain, false, true, "aborted"),
            "end" if ours => self.leave_situation(brain, false, false, "ended"),
            _ => {}
        }
    }

    fn npc_update(&mut self, brain: &mut NpcBrain) {
        let i = self.npc_index().expect("npc");

        let pend = std::mem::take(&mut self.w.npcs[i].pending_drops);
        if !pend.is_empty() {
            let mut report = CleanupReport::default();
            let pred = |g: &Grant| pend.contains(&g.serial);
            for k in 0..4 {
                if let Some(t) = brain.trees[k].as_mut() {
                    t.drop_grants(&mut brain.ctx, self, &pred, &mut report);
                }
            }
            if let Some(slot) = brain.slot.as_mut() {
                brain.ctx.scopes.push(slot_scope(slot));
                slot.tree.drop_grants(&mut brain.ctx, self, &pred, &mut report);
                brain.ctx.scopes.pop();
            }
        }

        let minute = self.w.minute_of_day();
        let mut restart_ambient = false;
        if let Some(id) = self.w.bus.lookup(self.owner, SYS_DAYCYCLE) {
            for m in self.w.bus.drain(self.owner, id, None).unwrap_or_default() {
                let Some(src) = Option::<EntityRef>::from(m.sender) else { continue };
                match m.field("op").and_then(Value::as_str) {
                    Some("swap") => {
                        let behavior = m.field("behavior").and_then(Value::as_str).unwrap_or("").to_string();
                        if let Some(widx) = self.w.npcs[i].current_window(minute) {
                            self.w.npcs[i].overrides.insert(widx, Override { source: src, behavior: behavior.clone() });
                            self.emit("daycycle-override", &[("window", widx.to_string()), ("behavior", behavior)]);
                            restart_ambient = true;
                        }
                    }
                    Some("restore") => {
                        self.w.npcs[i].overrides.retain(|_, o| o.source != src);
                        self.emit("daycycle-restore", &[]);
                        restart_ambient = true;
                    }
                    _ => {}
                }
            }
        }
        let widx = self.w.npcs[i].current_window(minute);
        let prev_window = self.w.npcs[i].window;
        if widx != prev_window {
            self.w.npcs[i].window = widx;
            if !self.w.npcs[i].template.windows.is_empty() {
                let f = |w: Option<usize>| w.map_or("-".to_string(), |w| w.to_string());
                self.emit("day-cycle-window-change", &[("from", f(prev_window)), ("to", f(widx))]);
            }
            restart_ambient |= prev_window.is_some();
        }
        if restart_ambient && self.w.npcs[i].active == Some(Subbrain::Ambient) {
            self.halt_tree(brain, Subbrain::Ambient);
        }

        if let Some(id) = self.w.bus.lookup(self.owner, SYS_SITUATION) {
            for m in self.w.bus.drain(self.owner, id, None).unwrap_or_default() {
                self.handle_situation_message(brain, m);
            }
        }

        let npc = &self.w.npcs[i];
        let winner =
            select_subbrain(npc.combat && npc.template.combat.is_some(), npc.quest && npc.template.quest.is_some(), brain.slot.is_some());
        let prev = npc.active;
        if prev != Some(winner) {
            self.w.npcs[i].active = Some(winner);
            if let Some(p) = prev {
                if p == Subbrain::Situation {
                    self.leave_situation(brain, true, true, "preempted");
                } else {
                    self.halt_tree(brain, p);
                }
                self.emit("subbrain-switch", &[("from", p.as_str().into()), ("to", winner.as_str().into())]);
                if self.used + self.cleanup_evals >= self.budget {
                    self.w.stats.deferred_switches += 1;
                    self.emit("subbrain-deferred", &[("to", winner.as_str().into())]);
                    return;
                }
            }
        }

        if winner == Subbrain::Situation {
            let Some(slot) = brain.slot.as_mut() else { return };
            if slot.finished {
                return;
            }
            let sid = slot.situation;
            brain.ctx.scopes.push(slot_scope(slot));
            let r = slot.tree.tick(&mut brain.ctx, self);
            if r.is_terminal() {
                let mut rep = CleanupReport::default();
                slot.tree.finish(&mut brain.ctx, self, &mut rep);
            }
            brain.ctx.scopes.pop();
            match r {
                TickResult::Running => {}
                TickResult::Success => {
                    slot.finished = true;
                    self.status(sid, "finished");
                    self.emit("role-finished", &[("situation", sid.0.to_string())]);
                }
                TickResult::Failure => self.leave_situation(brain, true, true, "role-failed"),
            }
            return;
        }
        let def = self.w.npcs[i].template.tree(winner).expect("selected subbrain has a tree").clone();
        let tree = brain.trees[winner.index()].get_or_insert_with(|| Node::build(&def));
        let r = tree.tick(&mut brain.ctx, self);
        if r.is_terminal() {
            let res = if r == TickResult::Success { "success" } else { "failure" };
            self.emit("tree-finished", &[("subbrain", winner.as_str().into()), ("result", res.into())]);
            let mut rep = CleanupReport::default();
            tree.finish(&mut brain.ctx, self, &mut rep);
        }
    }

    // ---- smart-entity update -------------------------------------------

    fn se_update(&mut self, mind: &mut Mind) {
        let Who::Se(j) = self.who else { return };
        let inst = &mut self.w.instances[j];
        if !inst.events.is_empty() && !inst.handler_last {
            let ev = inst.events.pop_front().expect("non-empty");
            let def = inst.template.handlers[&ev.kind].clone();
            inst.handler_last = true;
            let mut node = self.w.pool.acquire(&def);
            let ctx = &mut mind.ctx;
            ctx.set("npc", npc_ref(ev.npc));
            ctx.set("event", Value::Str(ev.kind.as_str().into()));
            match &ev.behavior {
                Some(b) => ctx.set("behavior", Value::Str(b.clone())),
                None => {
                    ctx.vars.remove("behavior");
                }
            }
            match ev.reason {
                Some(r) => ctx.set("reason", Value::Str(r.as_str().into())),
                None => {
                    ctx.vars.remove("reason");
                }
            }
            if self.w.trace.enabled() {
                let n = self.w.npcs[ev.npc.index()].name.clone();
                self.emit(
                    "handler-started",
                    &[
                        ("event", ev.kind.as_str().into()),
                        ("npc", n),
                        ("behavior", ev.behavior.clone().unwrap_or_else(|| "-".into())),
                        ("reason", ev.reason.map_or("-", |r| r.as_str()).into()),
                    ],
                );
            }
            self.free_run = true;
            let mut n = 0;
            let r = loop {
                let r = node.tick(&mut mind.ctx, self);
                if r.is_terminal() {
                    break r;
                }
                n += 1;
                if n >= HANDLER_CAP {
                    self.w.stats.overruns += 1;
                    self.diagnostic(format!("{} handler overran {HANDLER_CAP} ticks", ev.kind.as_str()));
                    break r;
                }
            };
            let mut rep = CleanupReport::default();
            node.finish(&mut mind.ctx, self, &mut rep);
            self.free_run = false;
            if let Err(e) = self.w.pool.release(node) {
                self.w.violation(e.to_string());
            }
            let res = match r {
                TickResult::Success => "success",
                TickResult::Failure => "failure",
                TickResult::Running => "overrun",
            };
            self.emit("handler-finished", &[("event", ev.kind.as_str().into()), ("result", res.into())]);
            self.w.stats.handler_runs += 1;
        } else {
            inst.handler_last = false;
            self.w.stats.brain_ticks += 1;
            self.emit("brain-tick", &[]);
            if let Some(main) = mind.main.as_mut() {
                let r = main.tick(&mut mind.ctx, self);
                if r.is_terminal() {
                    let mut rep = CleanupReport::default();
                    main.finish(&mut mind.ctx, self, &mut rep);
                }
            }
        }
    }
}

impl Host for Ctl<'_> {
    fn now(&self) -> u64 {
        self.w.tick
    }

    fn charge(&mut self) -> bool {
        if self.cleanup > 0 || self.free_run {
            self.cleanup_evals += 1;
            return true;
        }
        if self.used < self.budget {
            self.used += 1;
            true
        } else {
            false
        }
    }

    fn attribute(&self, name: &str) -> Option<Value> {
        match self.who {
            Who::Npc(i) => {
                let n = &self.w.npcs[i];
                n.attrs.get(name).cloned().or_else(|| match name {
                    "name" => Some(Value::Str(n.name.clone())),
                    "pos" => Some(Value::Ref(EntityRef::Cell(n.pos))),
                    _ => None,
                })
            }
            Who::Se(j) => {
                let si = &self.w.instances[j];
                si.template.state.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone()).or_else(|| match name {
                    "name" => Some(Value::Str(si.name.clone())),
                    _ => None,
                })
            }
        }
    }

    fn predicate(&mut self, name: &str, args: &[Value], ctx: &TreeContext) -> Result<bool, String> {
        let spec = registry::predicate(name).ok_or_else(|| format!("unknown predicate `{name}`"))?;
        if let Some(n) = spec.arity {
            if args.len() != n {
                return Err(format!("`{name}` takes {n} argument(s), got {}", args.len()));
            }
        }
        let var = |k: usize| args.get(k).and_then(Value::as_str).and_then(|n| ctx.get(n));
        Ok(match name {
            "var-is" => var(0) == Some(&args[1]),
            "var-ge" => match (var(0).and_then(Value::as_num), args[1].as_num()) {
                (Some(a), Some(b)) => a >= b,
                _ => false,
            },
            "var-set" => var(0).is_some(),
            "list-empty" => var(0).and_then(Value::as_list).is_none_or(|l| l.is_empty()),
            "has-order" => ctx.get("order").is_some(),
            "seated" => self.npc_index().is_some_and(|i| matches!(self.w.npcs[i].posture, Posture::Seated(_))),
            "is-day" | "is-night" => {
                let m = self.w.minute_of_day();
                let day = m >= registry::DAYTIME.0 && m < registry::DAYTIME.1;
                day == (name == "is-day")
            }
            "holders-ge" => {
                let Who::Se(j) = self.who else {
                    return Err("`holders-ge` is only available to smart-entity brains".into());
                };
                let b = args[0].as_str().ok_or("holders-ge takes a behavior name")?;
                let n = args[1].as_num().ok_or("holders-ge takes a count")?;
                let held = self.w.instances[j].query_holders(b).map_err(|e| e.to_string())?;
                held.len() as i64 >= n
            }
            "chance" => {
                let p = args[0].as_num().ok_or("chance takes a percentage")?;
                let roll = match self.who {
                    Who::Npc(i) => self.w.npcs[i].rng.gen_range(0..100),
                    Who::Se(j) => self.w.inst_rng(InstanceId(j as u32)).gen_range(0..100),
                };
                roll < p
            }
            _ => {
                let atom = Atom::new(name, args.to_vec());
                match self.who {
                    Who::Npc(i) => atom.holds(&self.w.npcs[i].attrs),
                    Who::Se(_) => atom.holds(&ctx.vars),
                }
            }
        })
    }

    fn start_action(
        &mut self,
        name: &str,
        params: &[(String, Value)],
        ctx: &mut TreeContext,
        immediate: bool,
    ) -> Result<ActionStart, String> {
        let spec = registry::action(name).ok_or_else(|| format!("unknown action `{name}`"))?;
        let ActionClass::Timed { default_dur, effect } = spec.class else {
            return self.exec_op(spec.name, params, ctx);
        };
        let Who::Npc(i) = self.who else {
            return Err(format!("smart-entity brains cannot perform `{name}`"));
        };
        let npc = NpcId(i as u32);
        let dur = match param(params, "dur") {
            Some(Value::Num(n)) if *n >= 0 => *n as u32,
            Some(_) => return Err("dur must be a non-negative number".into()),
            None => default_dur,
        };
        for h in self.w.actions.tails_of(npc) {
            self.finalize(h);
        }
        if name == "stand-up" && self.w.npcs[i].posture == Posture::Standing {
            return Ok(ActionStart::Done(true));
        }
        let mut params = params.to_vec();
        if effect == registry::Effect::SitDown && param(&params, "seat").is_none() {
            if let Some(s) = ctx.this_sa() {
                params.push(("seat".into(), Value::Ref(s)));
            }
        }
        if self.cleanup > 0 || immediate || dur == 0 {
            let ok = self.w.apply_effect(npc, effect, &params);
            if self.w.trace.enabled() {
                self.emit("action-applied", &[("action", spec.name.into()), ("ok", ok.to_string())]);
            }
            return Ok(ActionStart::Done(ok));
        }
        if self.w.trace.enabled() {
            let mut fields = vec![("action", spec.name.to_string()), ("dur", dur.to_string())];
            if let Some(to) = param(&params, "to") {
                fields.push(("to", self.w.render(to)));
            }
            self.emit("action-started", &fields);
        }
        let now = self.w.tick;
        Ok(ActionStart::Issued(self.w.actions.issue(npc, spec.name, effect, params, dur, now)))
    }

    fn action_state(&mut self, handle: ActionHandle) -> ActionState {
        self.w.actions.state(handle)
    }

    fn settle_action(&mut self, handle: ActionHandle, how: Settle) {
        match how {
            Settle::Tail => self.w.actions.mark_tail(handle),
            Settle::Finalize => self.finalize(handle),
            Settle::Cancel => {
                if let Some(a) = self.w.actions.take(handle) {
                    if self.w.trace.enabled() {
                        self.emit("action-cancelled", &[("action", a.name.into())]);
                    }
                }
            }
        }
    }

    fn request(&mut self, req: &BehaviorRequest, name: Option<&str>, ctx: &mut TreeContext) -> RequestOutcome {
        let Some(i) = self.npc_index() else {
            self.diagnostic("smart-entity brains cannot request behaviors".into());
            return RequestOutcome::Refused(RefuseReason::NoSuchBehavior);
        };
        match self.resolve_request(i, req, name, ctx) {
            Ok((inst, behavior, vars)) => self.grant(inst, &behavior, ctx, vars),
            Err((inst, r)) => self.refuse(inst, name, r),
        }
    }

    fn release(&mut self, grant: Grant, subtree: Node, reason: ReleaseReason, _ctx: &mut TreeContext) {
        let Some(i) = self.npc_index() else { return };
        let npc = NpcId(i as u32);
        let EntityRef::Instance(src) = grant.source else {
            self.w.violation(format!("grant {} has a non-instance source", grant.serial));
            return;
        };
        let stack = &mut self.w.npcs[i].stack;
        let Some(pos) = stack.iter().position(|e| e.serial == grant.serial) else {
            self.w.violation(format!("release of unknown grant {}", grant.serial));
            return;
        };
        let entry = stack.remove(pos);
        if stack[pos..].iter().any(|e| e.depth > entry.depth) {
            let msg = format!("grant {} released before a nested grant", entry.serial);
            self.w.violation(msg);
        }
        let now = self.w.tick;
        self.w.instances[src.index()].remove_holder(&entry.behavior, npc);
        self.w.push_event(
            src,
            SeEvent { kind: EventKind::Drop, npc, behavior: Some(entry.behavior.clone()), reason: Some(reason), tick: now },
        );
        for s in &entry.inboxes {
            self.w.bus.detach(self.owner, s);
        }
        if let Err(e) = self.w.pool.release(subtree) {
            let detail = e.to_string();
            self.w.violation(detail.clone());
            self.w.fatal.get_or_insert(RuntimeError::Pool { tick: now, detail });
        }
        self.w.stats.releases += 1;
        if self.w.trace.enabled() {
            let sn = self.w.instances[src.index()].name.clone();
            self.emit("behavior-released", &[("source", sn), ("behavior", entry.behavior), ("reason", reason.as_str().into())]);
        }
    }

    fn send(
        &mut self,
        to: &SendTarget,
        schema: &str,
        kind: MessageKind,
        payload: Vec<(String, Value)>,
        ctx: &TreeContext,
    ) -> Result<SendStatus, String> {
        let one = |w: &World, v: &Value| w.owner_of(v).ok_or_else(|| format!("cannot send to {}", w.render(v)));
        let targets: Vec<OwnerId> = match to {
            SendTarget::Source => match ctx.this_sa() {
                Some(r) => vec![one(self.w, &Value::Ref(r))?],
                None => return Err("`source` outside an injected subtree".into()),
            },
            SendTarget::To(Arg::Lit(v)) => vec![one(self.w, v)?],
            SendTarget::Each(Arg::Lit(Value::List(items))) => items.iter().map(|v| one(self.w, v)).collect::<Result<_, _>>()?,
            SendTarget::Each(Arg::Lit(v)) => return Err(format!("each: needs a list, got {}", v.type_name())),
            SendTarget::Holders(b) => {
                let Who::Se(j) = self.who else {
                    return Err("holders: is only available to smart-entity brains".into());
                };
                self.w.instances[j].query_holders(b).map_err(|e| e.to_string())?.into_iter().map(OwnerId::Npc).collect()
            }
            SendTarget::Peers => match ctx.get("peers") {
                Some(Value::List(items)) => items.iter().map(|v| one(self.w, v)).collect::<Result<_, _>>()?,
                _ => return Err("peers: outside a situation".into()),
            },
            _ => return Err("unresolved send target".into()),
        };
        if targets.is_empty() {
            return Ok(SendStatus::NoSuchInbox);
        }
        let mut overall = SendStatus::Delivered;
        for t in targets {
            let st = self.w.send_from(self.owner, t, schema, kind, payload.clone());
            if st != SendStatus::Delivered && overall == SendStatus::Delivered {
                overall = st;
            }
        }
        Ok(overall)
    }

    fn receive(&mut self, schema: &str, _ctx: &TreeContext) -> Result<Option<Message>, String> {
        let Some(id) = self.w.bus.lookup(self.owner, schema) else {
            return Err(format!("no inbox for `{schema}`"));
        };
        let msg = self.w.bus.drain(self.owner, id, Some(1)).map_err(|e| e.to_string())?.pop();
        if let Some(m) = &msg {
            if self.w.trace.enabled() {
                let from = self.w.owner_name(m.sender);
                self.emit("message-received", &[("schema", schema.into()), ("from", from)]);
            }
        }
        Ok(msg)
    }

    fn acquire_lock(&mut self, ctx: LockCtxId, name: &str, holder: OwnerId) -> LockOutcome {
        self.w.locks.get_mut(ctx).map_or(LockOutcome::Blocked, |c| c.acquire(name, holder))
    }

    fn release_lock(&mut self, ctx: LockCtxId, name: &str, holder: OwnerId) {
        if let Some(c) = self.w.locks.get_mut(ctx) {
            c.release(name, holder);
        }
    }

    fn plan_move(&mut self, target: &Value) -> Result<Vec<PathItem>, String> {
        let Some(i) = self.npc_index() else {
            return Err("smart-entity brains cannot move".into());
        };
        let w = &*self.w;
        let to: Cell = w.cell_of(target).ok_or_else(|| format!("{} has no position", w.render(target)))?;
        let from = w.npcs[i].pos;
        let usable = |d: InstanceId| {
            let si = &w.instances[d.index()];
            si.template.behaviors.iter().any(|b| b.oncommand && si.gating[&b.name].enabled)
        };
        plan_path(&w.grid, &w.nav_edges, &usable, from, to).map(|(_, p)| p).ok_or_else(|| format!("no path from {from} to {to}"))
    }

    fn inject_on_command(&mut self, item: &PathItem, ctx: &mut TreeContext) -> InjectOutcome {
        let PathItem::Traverse { door, from, to, cost } = item else {
            return InjectOutcome::Rejected("not a traversal".into());
        };
        let Some(b) = self.w.instances[door.index()].template.behaviors.iter().find(|b| b.oncommand).map(|b| b.name.clone()) else {
            return InjectOutcome::Rejected("no on-command behavior".into());
        };
        let vars = vec![
            ("door-from".to_string(), Value::Ref(EntityRef::Cell(*from))),
            ("door-to".to_string(), Value::Ref(EntityRef::Cell(*to))),
            ("door-cost".to_string(), Value::Num(i64::from(*cost))),
        ];
        match self.grant(*door, &b, ctx, vars) {
            RequestOutcome::Granted(g, n) => InjectOutcome::Attached(g, n),
            RequestOutcome::Refused(r) => InjectOutcome::Rejected(r.as_str().into()),
            RequestOutcome::Fatal(e) => InjectOutcome::Rejected(e),
            RequestOutcome::Pending => InjectOutcome::Rejected("pending".into()),
        }
    }

    fn subscribe(&mut self, on: bool) {
        if let Some(i) = self.npc_index() {
            let n = &mut self.w.npcs[i];
            n.subscription = if on { n.subscription + 1 } else { n.subscription.saturating_sub(1) };
        }
    }

    fn set_gating(&mut self, behavior: &str, enabled: Option<bool>, max: Option<u32>) -> Result<(), String> {
        let Who::Se(j) = self.who else {
            return Err("gating is only available to smart-entity brains".into());
        };
        let changed = self.w.instances[j].set_gating(behavior, enabled, max).map_err(|e| e.to_string())?;
        if changed && self.w.trace.enabled() {
            let g = &self.w.instances[j].gating[behavior];
            let (en, mx) = (g.enabled, g.max);
            self.emit("gating-changed", &[("behavior", behavior.into()), ("enabled", en.to_string()), ("max", mx.to_string())]);
        }
        Ok(())
    }

    fn trace_nodes(&self) -> bool {
        self.w.trace.level == super::TraceLevel::Nodes
    }

    fn trace(&mut self, kind: &str, fields: &[(&str, String)]) {
        self.emit(kind, fields);
    }

    fn diagnostic(&mut self, msg: String) {
        self.w.diagnose(self.owner, msg);
    }

    fn enter_cleanup(&mut self) {
        self.cleanup += 1;
    }

    fn leave_cleanup(&mut self) {
        self.cleanup = self.cleanup.saturating_sub(1);
    }
}

impl World {
    fn boosted(&self, owner: OwnerId, base: u32, events: usize) -> u32 {
        if self.bus.queued_for(owner) + events > self.config.boost_threshold {
            base.saturating_mul(self.config.boost_factor)
        } else {
            base
        }
    }

    fn account(&mut self, used: u32, cleanup: u32, budget: u32) {
        self.stats.node_evals += u64::from(used);
        self.stats.cleanup_evals += u64::from(cleanup);
        self.stats.max_update_evals = self.stats.max_update_evals.max(used);
        if used > budget {
            self.stats.budget_exceeded += 1;
        }
    }

    pub(crate) fn update_npc(&mut self, i: usize) {
        let owner = OwnerId::Npc(NpcId(i as u32));
        let budget = self.boosted(owner, self.config.npc_budget, 0);
        let Some(mut brain) = self.npcs[i].brain.take() else { return };
        let (used, cleanup) = {
            let mut ctl = Ctl::new(self, Who::Npc(i), budget);
            ctl.npc_update(&mut brain);
            (ctl.used, ctl.cleanup_evals)
        };
        self.npcs[i].brain = Some(brain);
        self.stats.npc_updates += 1;
        self.account(used, cleanup, budget);
    }

    pub(crate) fn update_instance(&mut self, j: usize) {
        let owner = OwnerId::Instance(InstanceId(j as u32));
        let budget = self.boosted(owner, self.config.se_budget, self.instances[j].events.len());
        let Some(mut mind) = self.instances[j].mind.take() else { return };
        let (used, cleanup) = {
            let mut ctl = Ctl::new(self, Who::Se(j), budget);
            ctl.se_update(&mut mind);
            (ctl.used, ctl.cleanup_evals)
        };
        self.instances[j].mind = Some(mind);
        self.stats.se_updates += 1;
        self.account(used, cleanup, budget);
    }
}
