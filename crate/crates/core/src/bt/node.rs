use std::sync::Arc;

use super::*;

/// What a halt or reset did: cleanup subtrees run, locks released, and
/// whether some cleanup overran its tick cap.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct CleanupReport {
    pub cleanups_run: Vec<u32>,
    pub locks_released: Vec<String>,
    pub released_grants: Vec<(EntityRef, String)>,
    pub overrun: bool,
}

impl CleanupReport {
    pub fn is_empty(&self) -> bool {
        self.cleanups_run.is_empty() && self.locks_released.is_empty() && self.released_grants.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scratch {
    None,
    Cursor(usize),
    Parallel(Vec<Option<TickResult>>),
    Action { handle: Option<ActionHandle>, tail: Option<ActionHandle>, handoff: u32 },
    Count { done: u32, started: u64 },
    Request { grant: Option<Grant>, dropped: bool },
    Wait { since: u64 },
    Lock { held: Option<(LockCtxId, OwnerId)> },
    Move(MoveState),
    Subscribed(bool),
}

#[derive(Debug, Clone, PartialEq)]
struct MoveState {
    path: Vec<PathItem>,
    next: usize,
    step: Option<ActionHandle>,
    injected: Option<Grant>,
}

/// A runtime tree node.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: u32,
    def: Arc<NodeDef>,
    children: Vec<Node>,
    cleanup: Option<Box<Node>>,
    lifecycle: Lifecycle,
    scratch: Scratch,
    last: TickResult,
}

/// Read-only facts gathered by [`Node::visit`] for invariant checks.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeVisit<'a> {
    LockHeld { ctx: LockCtxId, name: &'a str, holder: OwnerId },
    GrantHeld(&'a Grant),
    ActionInFlight(ActionHandle),
}

impl Node {
    /// Instantiates a definition. Node ids are preorder indices.
    pub fn build(def: &Arc<NodeDef>) -> Node {
        let mut next = 0;
        Self::build_from(def, &mut next)
    }

    fn build_from(def: &Arc<NodeDef>, next: &mut u32) -> Node {
        let id = *next;
        *next += 1;
        let children = def.children.iter().map(|c| Self::build_from(c, next)).collect();
        let cleanup = def.cleanup.as_ref().map(|c| Box::new(Self::build_from(c, next)));
        Node { id, def: Arc::clone(def), children, cleanup, lifecycle: Lifecycle::Fresh, scratch: Scratch::None, last: TickResult::Running }
    }

    pub fn def(&self) -> &Arc<NodeDef> {
        &self.def
    }

    pub fn kind(&self) -> &NodeKind {
        &self.def.kind
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn is_fresh(&self) -> bool {
        self.lifecycle == Lifecycle::Fresh
    }

    /// True when this node and everything below it is Fresh.
    pub fn is_pristine(&self) -> bool {
        self.is_fresh()
            && self.scratch == Scratch::None
            && self.children.iter().all(|c| c.is_pristine())
            && self.cleanup.as_ref().is_none_or(|c| c.is_pristine())
    }

    pub fn children(&self) -> &[Node] {
        &self.children
    }

    /// Walks live runtime facts: held locks, held grants and in-flight actions.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(NodeVisit<'a>)) {
        match &self.scratch {
            Scratch::Lock { held: Some((ctx, holder)) } => {
                if let NodeKind::AcquireLock { lock } = &self.def.kind {
                    f(NodeVisit::LockHeld { ctx: *ctx, name: lock, holder: *holder });
                }
            }
            Scratch::Request { grant: Some(g), .. } => f(NodeVisit::GrantHeld(g)),
            Scratch::Move(m) => {
                if let Some(g) = &m.injected {
                    f(NodeVisit::GrantHeld(g));
                }
                if let Some(h) = m.step {
                    f(NodeVisit::ActionInFlight(h));
                }
            }
            Scratch::Action { handle: Some(h), .. } => f(NodeVisit::ActionInFlight(*h)),
            _ => {}
        }
        for c in &self.children {
            c.visit(f);
        }
    }

    fn resolve(&self, arg: &Arg, ctx: &TreeContext, host: &dyn Host) -> Result<Value, String> {
        match arg {
            Arg::Attr(name) => host.attribute(name).ok_or_else(|| format!("unknown attribute @{name}")),
            other => ctx.lookup(other),
        }
    }

    fn resolve_count(&self, arg: &Arg, ctx: &TreeContext, host: &dyn Host) -> Result<u32, String> {
        match self.resolve(arg, ctx, host)? {
            Value::Num(n) if n >= 0 => Ok(n as u32),
            v => Err(format!("expected a non-negative number, got {}", v.type_name())),
        }
    }

    fn fail(&mut self, host: &mut dyn Host, msg: String) -> TickResult {
        host.diagnostic(format!("line {}: {} node: {msg}", self.def.line, self.def.kind.label()));
        TickResult::Failure
    }

    /// Ticks the node once.
    pub fn tick(&mut self, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        match self.lifecycle {
            Lifecycle::Succeeded | Lifecycle::Failed => return self.last,
            Lifecycle::CleaningUp => return TickResult::Running,
            _ => {}
        }
        if !host.charge() {
            return TickResult::Running;
        }
        if self.lifecycle == Lifecycle::Fresh {
            self.lifecycle = Lifecycle::Running;
            if host.trace_nodes() {
                host.trace("node-entered", &[("node", self.id.to_string()), ("type", self.def.kind.label().into())]);
            }
        }
        let r = self.tick_kind(ctx, host);
        self.last = r;
        match r {
            TickResult::Running => {}
            TickResult::Success => self.lifecycle = Lifecycle::Succeeded,
            TickResult::Failure => self.lifecycle = Lifecycle::Failed,
        }
        if r.is_terminal() && host.trace_nodes() {
            let res = if r == TickResult::Success { "success" } else { "failure" };
            host.trace("node-result", &[("node", self.id.to_string()), ("result", res.into())]);
        }
        r
    }

    fn tick_kind(&mut self, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        let def = Arc::clone(&self.def);
        match &def.kind {
            NodeKind::Sequence | NodeKind::Selector => {
                let stop_on = if matches!(def.kind, NodeKind::Sequence) { TickResult::Failure } else { TickResult::Success };
                let mut i = match self.scratch {
                    Scratch::Cursor(i) => i,
                    _ => 0,
                };
                let r = loop {
                    if i >= self.children.len() {
                        break if stop_on == TickResult::Failure { TickResult::Success } else { TickResult::Failure };
                    }
                    match self.children[i].tick(ctx, host) {
                        TickResult::Running => break TickResult::Running,
                        r if r == stop_on => break r,
                        _ => i += 1,
                    }
                };
                self.scratch = Scratch::Cursor(i);
                r
            }
            NodeKind::Parallel(policy) => self.tick_parallel(*policy, ctx, host),
            NodeKind::Condition { predicate, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    match self.resolve(a, ctx, host) {
                        Ok(v) => vals.push(v),
                        Err(e) => return self.fail(host, e),
                    }
                }
                match host.predicate(predicate, &vals, ctx) {
                    Ok(true) => TickResult::Success,
                    Ok(false) => TickResult::Failure,
                    Err(e) => self.fail(host, e),
                }
            }
            NodeKind::Action { action, params } => self.tick_action(action, params, ctx, host),
            NodeKind::Decorator(kind) => self.tick_decorator(kind, ctx, host),
            NodeKind::RequestBehavior(req) => self.tick_request(req, ctx, host),
            NodeKind::SendMessage { to, schema, kind, payload } => {
                let mut resolved = Vec::with_capacity(payload.len());
                for (k, a) in payload {
                    match self.resolve(a, ctx, host) {
                        Ok(v) => resolved.push((k.clone(), v)),
                        Err(e) => return self.fail(host, e),
                    }
                }
                let to = match to {
                    SendTarget::To(a) => match self.resolve(a, ctx, host) {
                        Ok(v) => SendTarget::To(Arg::Lit(v)),
                        Err(e) => return self.fail(host, e),
                    },
                    SendTarget::Each(a) => match self.resolve(a, ctx, host) {
                        Ok(v) => SendTarget::Each(Arg::Lit(v)),
                        Err(e) => return self.fail(host, e),
                    },
                    other => other.clone(),
                };
                match host.send(&to, schema, *kind, resolved, ctx) {
                    Ok(SendStatus::Delivered) => TickResult::Success,
                    Ok(_) => TickResult::Failure,
                    Err(e) => self.fail(host, e),
                }
            }
            NodeKind::WaitMessage { schema, timeout } => {
                let now = host.now();
                let since = match self.scratch {
                    Scratch::Wait { since } => since,
                    _ => {
                        self.scratch = Scratch::Wait { since: now };
                        now
                    }
                };
                match host.receive(schema, ctx) {
                    Ok(Some(msg)) => {
                        for (k, v) in msg.payload {
                            ctx.set(k, v);
                        }
                        if let Some(r) = Option::<EntityRef>::from(msg.sender) {
                            ctx.set("sender", Value::Ref(r));
                        }
                        TickResult::Success
                    }
                    Ok(None) => {
                        let limit = match timeout {
                            Some(a) => match self.resolve_count(a, ctx, host) {
                                Ok(n) => Some(n as u64),
                                Err(e) => return self.fail(host, e),
                            },
                            None => None,
                        };
                        match limit {
                            Some(t) if now - since >= t => TickResult::Failure,
                            _ => TickResult::Running,
                        }
                    }
                    Err(e) => self.fail(host, e),
                }
            }
            NodeKind::AcquireLock { lock } => {
                let Some(lc) = ctx.lock_ctx() else {
                    return self.fail(host, "no lock context".into());
                };
                match host.acquire_lock(lc, lock, ctx.owner) {
                    LockOutcome::Acquired => {
                        self.scratch = Scratch::Lock { held: Some((lc, ctx.owner)) };
                        host.trace("lock-acquired", &[("lock", lock.clone())]);
                        TickResult::Success
                    }
                    LockOutcome::Blocked => TickResult::Running,
                }
            }
            NodeKind::MoveTo { target } => self.tick_move(target, ctx, host),
            NodeKind::SubscribeSituations => {
                if self.scratch == Scratch::None {
                    host.subscribe(true);
                    self.scratch = Scratch::Subscribed(true);
                }
                let r = self.children[0].tick(ctx, host);
                if r.is_terminal() {
                    if self.scratch == Scratch::Subscribed(true) {
                        host.subscribe(false);
                    }
                    self.scratch = Scratch::Subscribed(false);
                }
                r
            }
            NodeKind::SetEnabled { behavior, enabled } => match host.set_gating(behavior, Some(*enabled), None) {
                Ok(()) => TickResult::Success,
                Err(e) => self.fail(host, e),
            },
            NodeKind::SetMaxHolders { behavior, count } => {
                let n = match self.resolve_count(count, ctx, host) {
                    Ok(n) => n,
                    Err(e) => return self.fail(host, e),
                };
                match host.set_gating(behavior, None, Some(n)) {
                    Ok(()) => TickResult::Success,
                    Err(e) => self.fail(host, e),
                }
            }
        }
    }

    fn tick_parallel(&mut self, policy: ParallelPolicy, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        let n = self.children.len();
        let mut results = match std::mem::replace(&mut self.scratch, Scratch::None) {
            Scratch::Parallel(r) => r,
            _ => vec![None; n],
        };
        let mut decided = None;
        for (slot, child) in results.iter_mut().zip(self.children.iter_mut()) {
            if slot.is_some() {
                continue;
            }
            let r = child.tick(ctx, host);
            if r.is_terminal() {
                *slot = Some(r);
                let decisive = match policy {
                    ParallelPolicy::AllSuccess => r == TickResult::Failure,
                    ParallelPolicy::AnySuccess => r == TickResult::Success,
                };
                if decisive {
                    decided = Some(r);
                    break;
                }
            }
        }
        if decided.is_none() && results.iter().all(|r| r.is_some()) {
            decided = Some(match policy {
                ParallelPolicy::AllSuccess => TickResult::Success,
                ParallelPolicy::AnySuccess => TickResult::Failure,
            });
        }
        if decided.is_some() {
            // Siblings still running are halted in reverse declaration order.
            let mut report = CleanupReport::default();
            for i in (0..n).rev() {
                if self.children[i].lifecycle == Lifecycle::Running {
                    self.children[i].finish(ctx, host, &mut report);
                }
            }
        }
        self.scratch = Scratch::Parallel(results);
        decided.unwrap_or(TickResult::Running)
    }

    fn tick_action(&mut self, action: &str, params: &[(String, Arg)], ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        if let Scratch::Action { handle: Some(h), handoff, .. } = self.scratch {
            return match host.action_state(h) {
                ActionState::Completed => {
                    self.scratch = Scratch::Action { handle: None, tail: None, handoff };
                    TickResult::Success
                }
                ActionState::Failed => {
                    self.scratch = Scratch::Action { handle: None, tail: None, handoff };
                    TickResult::Failure
                }
                ActionState::Pending { remaining } if remaining <= handoff => {
                    host.settle_action(h, Settle::Tail);
                    self.scratch = Scratch::Action { handle: None, tail: Some(h), handoff };
                    TickResult::Success
                }
                ActionState::Pending { .. } => TickResult::Running,
            };
        }
        let mut resolved = Vec::with_capacity(params.len());
        let mut handoff = 1;
        for (k, a) in params {
            let v = match self.resolve(a, ctx, host) {
                Ok(v) => v,
                Err(e) => return self.fail(host, e),
            };
            if k == "handoff" {
                match v {
                    Value::Num(n) if n >= 0 => handoff = n as u32,
                    _ => return self.fail(host, "handoff must be a non-negative number".into()),
                }
            }
            resolved.push((k.clone(), v));
        }
        match host.start_action(action, &resolved, ctx, false) {
            Ok(ActionStart::Issued(h)) => {
                self.scratch = Scratch::Action { handle: Some(h), tail: None, handoff };
                TickResult::Running
            }
            Ok(ActionStart::Done(true)) => TickResult::Success,
            Ok(ActionStart::Done(false)) => TickResult::Failure,
            Err(e) => self.fail(host, e),
        }
    }

    fn tick_decorator(&mut self, kind: &DecoratorKind, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        let now = host.now();
        let (mut done, started) = match self.scratch {
            Scratch::Count { done, started } => (done, started),
            _ => (0, now),
        };
        self.scratch = Scratch::Count { done, started };
        if let DecoratorKind::Timeout(limit) = kind {
            let limit = match self.resolve_count(limit, ctx, host) {
                Ok(n) => n as u64,
                Err(e) => return self.fail(host, e),
            };
            if now - started >= limit {
                let mut report = CleanupReport::default();
                self.children[0].finish(ctx, host, &mut report);
                return TickResult::Failure;
            }
        }
        if let DecoratorKind::Repeat(n) | DecoratorKind::Retry(n) = kind {
            match self.resolve_count(n, ctx, host) {
                Ok(0) if matches!(kind, DecoratorKind::Repeat(_)) => return TickResult::Success,
                Ok(0) => return TickResult::Failure,
                Ok(_) => {}
                Err(e) => return self.fail(host, e),
            }
        }
        let r = self.children[0].tick(ctx, host);
        let restart = |node: &mut Node, ctx: &mut TreeContext, host: &mut dyn Host| {
            let mut report = CleanupReport::default();
            node.children[0].finish(ctx, host, &mut report);
        };
        match kind {
            DecoratorKind::Invert => match r {
                TickResult::Success => TickResult::Failure,
                TickResult::Failure => TickResult::Success,
                TickResult::Running => TickResult::Running,
            },
            DecoratorKind::ForceSuccess if r.is_terminal() => TickResult::Success,
            DecoratorKind::ForceFailure if r.is_terminal() => TickResult::Failure,
            DecoratorKind::ForceSuccess | DecoratorKind::ForceFailure => TickResult::Running,
            DecoratorKind::Repeat(n) | DecoratorKind::Retry(n) => {
                let repeat = matches!(kind, DecoratorKind::Repeat(_));
                let (again_on, stop_on) =
                    if repeat { (TickResult::Success, TickResult::Failure) } else { (TickResult::Failure, TickResult::Success) };
                if r == stop_on {
                    return r;
                }
                if r != again_on {
                    return TickResult::Running;
                }
                let limit = match self.resolve_count(n, ctx, host) {
                    Ok(n) => n,
                    Err(e) => return self.fail(host, e),
                };
                done += 1;
                self.scratch = Scratch::Count { done, started };
                if done >= limit {
                    return again_on;
                }
                restart(self, ctx, host);
                TickResult::Running
            }
            DecoratorKind::Loop => {
                if r.is_terminal() {
                    restart(self, ctx, host);
                }
                TickResult::Running
            }
            DecoratorKind::UntilFail => match r {
                TickResult::Failure => TickResult::Success,
                TickResult::Success => {
                    restart(self, ctx, host);
                    TickResult::Running
                }
                TickResult::Running => TickResult::Running,
            },
            DecoratorKind::Timeout(_) => r,
        }
    }

    fn tick_request(&mut self, req: &BehaviorRequest, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        match &self.scratch {
            Scratch::Request { dropped: true, .. } => return TickResult::Failure,
            Scratch::Request { grant: Some(_), .. } => return self.tick_injected(ctx, host),
            _ => {}
        }
        let name = match &req.name {
            Some(a) => match self.resolve(a, ctx, host) {
                Ok(Value::Str(s)) => Some(s),
                Ok(v) => return self.fail(host, format!("behavior name must be a string, got {}", v.type_name())),
                Err(e) => return self.fail(host, e),
            },
            None => None,
        };
        match host.request(req, name.as_deref(), ctx) {
            RequestOutcome::Granted(grant, subtree) => {
                self.children.clear();
                self.children.push(subtree);
                self.scratch = Scratch::Request { grant: Some(grant), dropped: false };
                self.tick_injected(ctx, host)
            }
            RequestOutcome::Pending => TickResult::Running,
            RequestOutcome::Refused(_) => TickResult::Failure,
            RequestOutcome::Fatal(e) => self.fail(host, e),
        }
    }

    fn tick_injected(&mut self, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        let Scratch::Request { grant: Some(grant), .. } = &self.scratch else { unreachable!("tick_injected without a grant") };
        ctx.scopes.push(grant.scope());
        let r = self.children[0].tick(ctx, host);
        if r.is_terminal() {
            let mut report = CleanupReport::default();
            self.children[0].finish(ctx, host, &mut report);
        }
        ctx.scopes.pop();
        if r.is_terminal() {
            let Scratch::Request { grant, .. } = std::mem::replace(&mut self.scratch, Scratch::Request { grant: None, dropped: false })
            else {
                unreachable!()
            };
            let subtree = self.children.pop().expect("injected child");
            host.release(grant.expect("grant"), subtree, ReleaseReason::Completed, ctx);
        }
        r
    }

    fn tick_move(&mut self, target: &Arg, ctx: &mut TreeContext, host: &mut dyn Host) -> TickResult {
        if !matches!(self.scratch, Scratch::Move(_)) {
            let target = match self.resolve(target, ctx, host) {
                Ok(v) => v,
                Err(e) => return self.fail(host, e),
            };
            match host.plan_move(&target) {
                Ok(path) => {
                    self.scratch = Scratch::Move(MoveState { path, next: 0, step: None, injected: None });
                }
                Err(e) => {
                    host.trace("move-unreachable", &[("target", format!("{target}")), ("why", e)]);
                    return TickResult::Failure;
                }
            }
        }
        loop {
            let Scratch::Move(state) = &mut self.scratch else { unreachable!() };
            if let Some(grant) = &state.injected {
                ctx.scopes.push(grant.scope());
                let r = self.children[0].tick(ctx, host);
                if r.is_terminal() {
                    let mut report = CleanupReport::default();
                    self.children[0].finish(ctx, host, &mut report);
                }
                ctx.scopes.pop();
                match r {
                    TickResult::Running => return TickResult::Running,
                    r => {
                        let Scratch::Move(state) = &mut self.scratch else { unreachable!() };
                        let grant = state.injected.take().expect("injected");
                        state.next += 1;
                        let subtree = self.children.pop().expect("injected child");
                        host.trace("injection-detached", &[("behavior", grant.behavior.clone())]);
                        host.release(grant, subtree, ReleaseReason::Completed, ctx);
                        if r == TickResult::Failure {
                            return TickResult::Failure;
                        }
                        continue;
                    }
                }
            }
            if let Some(h) = state.step {
                match host.action_state(h) {
                    ActionState::Pending { .. } => return TickResult::Running,
                    ActionState::Failed => {
                        state.step = None;
                        return TickResult::Failure;
                    }
                    ActionState::Completed => {
                        state.step = None;
                        state.next += 1;
                    }
                }
            }
            let Some(item) = state.path.get(state.next).cloned() else {
                return TickResult::Success;
            };
            match item {
                PathItem::Step(cell) => {
                    let params = [("to".to_string(), Value::Ref(EntityRef::Cell(cell)))];
                    match host.start_action("walk-step", &params, ctx, false) {
                        Ok(ActionStart::Issued(h)) => {
                            let Scratch::Move(state) = &mut self.scratch else { unreachable!() };
                            state.step = Some(h);
                            return TickResult::Running;
                        }
                        Ok(ActionStart::Done(true)) => {
                            let Scratch::Move(state) = &mut self.scratch else { unreachable!() };
                            state.next += 1;
                        }
                        Ok(ActionStart::Done(false)) => return TickResult::Failure,
                        Err(e) => return self.fail(host, e),
                    }
                }
                PathItem::Traverse { .. } => match host.inject_on_command(&item, ctx) {
                    InjectOutcome::Attached(grant, subtree) => {
                        host.trace("injection-attached", &[("behavior", grant.behavior.clone())]);
                        self.children.clear();
                        self.children.push(subtree);
                        let Scratch::Move(state) = &mut self.scratch else { unreachable!() };
                        state.injected = Some(grant);
                    }
                    InjectOutcome::Rejected(why) => {
                        host.trace("injection-rejected", &[("why", why)]);
                        return TickResult::Failure;
                    }
                },
            }
        }
    }

    /// Interrupts a running node: every running descendant is halted
    /// depth-first with its cleanup, and the node returns to Fresh.
    pub fn halt(&mut self, ctx: &mut TreeContext, host: &mut dyn Host) -> CleanupReport {
        let mut report = CleanupReport::default();
        self.finish(ctx, host, &mut report);
        report
    }

    /// Returns the node to Fresh, running teardown and cleanup if it ever
    /// entered Running. Safe to call on any lifecycle state.
    pub fn finish(&mut self, ctx: &mut TreeContext, host: &mut dyn Host, report: &mut CleanupReport) {
        if self.lifecycle == Lifecycle::Fresh {
            return;
        }
        let halted = self.lifecycle == Lifecycle::Running;
        self.lifecycle = Lifecycle::CleaningUp;
        match std::mem::replace(&mut self.scratch, Scratch::None) {
            Scratch::Request { grant: Some(grant), .. } => {
                ctx.scopes.push(grant.scope());
                self.children[0].finish(ctx, host, report);
                ctx.scopes.pop();
                let subtree = self.children.pop().expect("injected child");
                report.released_grants.push((grant.source, grant.behavior.clone()));
                let reason = if halted { ReleaseReason::Halted } else { ReleaseReason::Completed };
                host.release(grant, subtree, reason, ctx);
            }
            Scratch::Move(state) => {
                if let Some(grant) = state.injected {
                    ctx.scopes.push(grant.scope());
                    self.children[0].finish(ctx, host, report);
                    ctx.scopes.pop();
                    let subtree = self.children.pop().expect("injected child");
                    report.released_grants.push((grant.source, grant.behavior.clone()));
                    host.release(grant, subtree, ReleaseReason::Halted, ctx);
                }
                if let Some(h) = state.step {
                    host.settle_action(h, Settle::Cancel);
                }
            }
            Scratch::Action { handle, tail, .. } => {
                if let Some(h) = handle {
                    host.settle_action(h, Settle::Cancel);
                }
                if let Some(h) = tail {
                    host.settle_action(h, Settle::Finalize);
                }
            }
            Scratch::Lock { held: Some((lc, holder)) } => {
                if let NodeKind::AcquireLock { lock } = &self.def.kind {
                    host.release_lock(lc, lock, holder);
                    host.trace("lock-released", &[("lock", lock.clone())]);
                    report.locks_released.push(lock.clone());
                }
            }
            Scratch::Subscribed(true) => {
                for c in self.children.iter_mut().rev() {
                    c.finish(ctx, host, report);
                }
                host.subscribe(false);
            }
            _ => {
                for c in self.children.iter_mut().rev() {
                    c.finish(ctx, host, report);
                }
            }
        }
        if let Some(cleanup) = self.cleanup.as_mut() {
            host.trace("cleanup-run", &[("node", self.id.to_string()), ("line", self.def.line.to_string())]);
            report.cleanups_run.push(self.id);
            host.enter_cleanup();
            let mut ticks = 0;
            loop {
                let r = cleanup.tick(ctx, host);
                if r.is_terminal() {
                    break;
                }
                ticks += 1;
                if ticks >= CLEANUP_OVERRUN_CAP {
                    report.overrun = true;
                    host.diagnostic(format!("line {}: cleanup overran {CLEANUP_OVERRUN_CAP} ticks", self.def.line));
                    break;
                }
            }
            cleanup.finish(ctx, host, report);
            host.leave_cleanup();
        }
        self.lifecycle = Lifecycle::Fresh;
        self.last = TickResult::Running;
    }

    /// Drops every grant matching `pred`, innermost first. Affected request
    /// nodes fail on their next tick.
    pub fn drop_grants(&mut self, ctx: &mut TreeContext, host: &mut dyn Host, pred: &dyn Fn(&Grant) -> bool, report: &mut CleanupReport) {
        let scope = match &self.scratch {
            Scratch::Request { grant: Some(g), .. } => Some(g.scope()),
            Scratch::Move(MoveState { injected: Some(g), .. }) => Some(g.scope()),
            _ => None,
        };
        if let Some(s) = &scope {
            ctx.scopes.push(s.clone());
        }
        for c in self.children.iter_mut() {
            c.drop_grants(ctx, host, pred, report);
        }
        if scope.is_some() {
            ctx.scopes.pop();
        }
        if let Scratch::Request { grant: Some(g), .. } = &self.scratch {
            if pred(g) {
                let Scratch::Request { grant: Some(grant), .. } =
                    std::mem::replace(&mut self.scratch, Scratch::Request { grant: None, dropped: true })
                else {
                    unreachable!()
                };
                ctx.scopes.push(grant.scope());
                self.children[0].finish(ctx, host, report);
                ctx.scopes.pop();
                let subtree = self.children.pop().expect("injected child");
                report.released_grants.push((grant.source, grant.behavior.clone()));
                host.release(grant, subtree, ReleaseReason::DroppedByPolicy, ctx);
            }
        }
    }
}
