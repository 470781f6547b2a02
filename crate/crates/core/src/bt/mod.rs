//! The extended behavior-tree formalism.
//!
//! Trees are defined once ([`NodeDef`], shared behind an `Arc`) and
//! instantiated into runtime [`Node`]s that carry lifecycle state. Every node
//! that enters `Running` is guaranteed to be finished exactly once before it
//! can run again: finishing releases locks, settles in-flight actions,
//! releases injected behaviors and runs the node's cleanup subtree.
//!
//! A tree never touches the world directly. All effects go through the
//! [`Host`] trait, implemented by the simulator for NPCs and smart-entity
//! brains and by small scripted hosts in tests.

mod lock;
mod node;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use lock::{LockContext, LockOutcome, LockStore};
pub use node::{CleanupReport, Node, NodeVisit};

use crate::messaging::{Message, MessageKind, SendStatus};
use crate::value::{Cell, EntityRef, InstanceId, LockCtxId, OwnerId, Value};

/// Cap on consecutive internal ticks of a cleanup subtree.
pub const CLEANUP_OVERRUN_CAP: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TickResult {
    Running,
    Success,
    Failure,
}

impl TickResult {
    pub fn is_terminal(self) -> bool {
        self != TickResult::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    Fresh,
    Running,
    Succeeded,
    Failed,
    CleaningUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelPolicy {
    AllSuccess,
    AnySuccess,
}

/// A node argument: a literal, a tree variable (`$name`) or an owner
/// attribute (`@name`).
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Lit(Value),
    Var(String),
    Attr(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoratorKind {
    Invert,
    ForceSuccess,
    ForceFailure,
    /// Run the child to success `n` times.
    Repeat(Arg),
    /// Retry a failing child up to `n` times.
    Retry(Arg),
    /// Restart the child forever; never terminates on its own.
    Loop,
    /// Restart the child until it fails, then succeed.
    UntilFail,
    /// Fail (halting the child) if it is still running after `n` ticks.
    Timeout(Arg),
}

impl DecoratorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DecoratorKind::Invert => "invert",
            DecoratorKind::ForceSuccess => "succeed",
            DecoratorKind::ForceFailure => "fail",
            DecoratorKind::Repeat(_) => "repeat",
            DecoratorKind::Retry(_) => "retry",
            DecoratorKind::Loop => "loop",
            DecoratorKind::UntilFail => "until-fail",
            DecoratorKind::Timeout(_) => "timeout",
        }
    }
}

/// Where a request node looks for its behavior.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestTarget {
    /// The innermost smart area containing the requester, with parent fallback.
    Area,
    /// An explicit smart-entity reference (literal or variable).
    Explicit(Arg),
    /// Every instance linked under `label` from the enclosing grant's source,
    /// tried in link order.
    Link(String),
    /// A private behavior of the nearest enclosing area grant.
    Private,
    /// Whatever the owner's day cycle prescribes right now.
    Daycycle,
    /// The area-controlled move wrapper for a target position.
    Wrap(Arg),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorRequest {
    pub target: RequestTarget,
    pub name: Option<Arg>,
    pub general: bool,
}

/// Recipient of a send node.
#[derive(Debug, Clone, PartialEq)]
pub enum SendTarget {
    /// The source of the innermost enclosing grant.
    Source,
    /// An explicit reference.
    To(Arg),
    /// Every current holder of a behavior (smart-entity brains only).
    Holders(String),
    /// Every reference in a list variable.
    Each(Arg),
    /// Every other participant of the enclosing situation.
    Peers,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Sequence,
    Selector,
    Parallel(ParallelPolicy),
    Condition { predicate: String, args: Vec<Arg> },
    Action { action: String, params: Vec<(String, Arg)> },
    Decorator(DecoratorKind),
    RequestBehavior(BehaviorRequest),
    SendMessage { to: SendTarget, schema: String, kind: MessageKind, payload: Vec<(String, Arg)> },
    WaitMessage { schema: String, timeout: Option<Arg> },
    AcquireLock { lock: String },
    MoveTo { target: Arg },
    SubscribeSituations,
    SetEnabled { behavior: String, enabled: bool },
    SetMaxHolders { behavior: String, count: Arg },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Sequence => "seq",
            NodeKind::Selector => "sel",
            NodeKind::Parallel(_) => "par",
            NodeKind::Condition { .. } => "cond",
            NodeKind::Action { .. } => "act",
            NodeKind::Decorator(_) => "dec",
            NodeKind::RequestBehavior(_) => "request",
            NodeKind::SendMessage { .. } => "send",
            NodeKind::WaitMessage { .. } => "wait",
            NodeKind::AcquireLock { .. } => "lock",
            NodeKind::MoveTo { .. } => "move",
            NodeKind::SubscribeSituations => "subscribe",
            NodeKind::SetEnabled { .. } => "set-enabled",
            NodeKind::SetMaxHolders { .. } => "set-max",
        }
    }

    fn is_composite(&self) -> bool {
        matches!(self, NodeKind::Sequence | NodeKind::Selector | NodeKind::Parallel(_))
    }

    fn has_single_child(&self) -> bool {
        matches!(self, NodeKind::Decorator(_) | NodeKind::SubscribeSituations)
    }
}

/// An immutable tree definition. Shared between all runtime instances.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDef {
    pub kind: NodeKind,
    pub children: Vec<Arc<NodeDef>>,
    pub cleanup: Option<Arc<NodeDef>>,
    /// Source line of the definition, 0 when built in code.
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("line {line}: `{kind}` node needs at least one child")]
    EmptyComposite { kind: &'static str, line: u32 },
    #[error("line {line}: `{kind}` node needs exactly one child, found {found}")]
    ChildCount { kind: &'static str, line: u32, found: usize },
    #[error("line {line}: `{kind}` is a leaf and cannot have children")]
    LeafWithChildren { kind: &'static str, line: u32 },
    #[error("line {line}: cleanup subtrees may not request behaviors")]
    RequestInCleanup { line: u32 },
}

impl NodeDef {
    pub fn new(kind: NodeKind, children: Vec<NodeDef>) -> Self {
        NodeDef { kind, children: children.into_iter().map(Arc::new).collect(), cleanup: None, line: 0 }
    }

    pub fn leaf(kind: NodeKind) -> Self {
        Self::new(kind, Vec::new())
    }

    pub fn with_cleanup(mut self, cleanup: NodeDef) -> Self {
        self.cleanup = Some(Arc::new(cleanup));
        self
    }

    pub fn at_line(mut self, line: u32) -> Self {
        self.line = line;
        self
    }

    /// Structural checks; a tree that passes can never hit a malformed-tree
    /// condition while ticking.
    pub fn validate(&self) -> Result<(), TreeError> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, in_cleanup: bool) -> Result<(), TreeError> {
        let kind = self.kind.label();
        let n = self.children.len();
        if self.kind.is_composite() {
            if n == 0 {
                return Err(TreeError::EmptyComposite { kind, line: self.line });
            }
        } else if self.kind.has_single_child() {
            if n != 1 {
                return Err(TreeError::ChildCount { kind, line: self.line, found: n });
            }
        } else if n != 0 {
            return Err(TreeError::LeafWithChildren { kind, line: self.line });
        }
        if in_cleanup && matches!(self.kind, NodeKind::RequestBehavior(_)) {
            return Err(TreeError::RequestInCleanup { line: self.line });
        }
        for c in &self.children {
            c.validate_inner(in_cleanup)?;
        }
        if let Some(c) = &self.cleanup {
            c.validate_inner(true)?;
        }
        Ok(())
    }

    pub fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(|c| c.count_nodes()).sum::<usize>() + self.cleanup.as_ref().map_or(0, |c| c.count_nodes())
    }

    /// Depth-first walk over the definition including cleanup subtrees.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a NodeDef)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
        if let Some(c) = &self.cleanup {
            c.walk(f);
        }
    }

    /// First node of the tree that will issue something to the world, used
    /// by the handoff lint: the leftmost leaf reached through composites.
    pub fn first_leaf(&self) -> &NodeDef {
        match self.children.first() {
            Some(c) if !matches!(self.kind, NodeKind::RequestBehavior(_) | NodeKind::MoveTo { .. }) => c.first_leaf(),
            _ => self,
        }
    }
}

/// The scope of an injected subtree: who granted it and where its locks live.
#[derive(Debug, Clone, PartialEq)]
pub struct Scope {
    pub source: EntityRef,
    pub behavior: String,
    pub lock_ctx: Option<LockCtxId>,
    pub is_area: bool,
}

/// Variables and scope bindings of one tree owner.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeContext {
    pub owner: OwnerId,
    pub vars: BTreeMap<String, Value>,
    pub scopes: Vec<Scope>,
    /// Lock context used when no injected scope provides one (brains).
    pub own_lock_ctx: Option<LockCtxId>,
}

impl TreeContext {
    pub fn new(owner: OwnerId) -> Self {
        TreeContext { owner, vars: BTreeMap::new(), scopes: Vec::new(), own_lock_ctx: None }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.vars.get(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.vars.insert(name.into(), value);
    }

    /// The smart entity that granted the innermost enclosing behavior.
    pub fn this_sa(&self) -> Option<EntityRef> {
        self.scopes.last().map(|s| s.source)
    }

    pub fn lock_ctx(&self) -> Option<LockCtxId> {
        self.scopes.iter().rev().find_map(|s| s.lock_ctx).or(self.own_lock_ctx)
    }

    /// Resolves a variable or literal. Attributes need the host and are
    /// resolved by [`Node`] itself.
    pub fn lookup(&self, arg: &Arg) -> Result<Value, String> {
        match arg {
            Arg::Lit(v) => Ok(v.clone()),
            Arg::Var(name) => match name.as_str() {
                "this-sa" => {
                    self.this_sa().map(Value::Ref).ok_or_else(|| "unbound variable $this-sa outside an injected subtree".to_string())
                }
                "self" => Option::<EntityRef>::from(self.owner).map(Value::Ref).ok_or_else(|| "owner has no reference".to_string()),
                _ => self.vars.get(name).cloned().ok_or_else(|| format!("unbound variable ${name}")),
            },
            Arg::Attr(name) => Err(format!("attribute @{name} needs a host")),
        }
    }
}

pub type ActionHandle = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionStart {
    /// A world action is in flight.
    Issued(ActionHandle),
    /// The action took effect synchronously.
    Done(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionState {
    Pending { remaining: u32 },
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Settle {
    /// The node reported success at its handoff point; the action keeps going.
    Tail,
    /// Apply the action's effect now if it is still in flight.
    Finalize,
    /// Drop the action without effect.
    Cancel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum DropPolicy {
    OnCompletion,
    OnAreaExit,
    OnAbortSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum ReleaseReason {
    Completed,
    Halted,
    DroppedByPolicy,
}

impl ReleaseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ReleaseReason::Completed => "completed",
            ReleaseReason::Halted => "halted",
            ReleaseReason::DroppedByPolicy => "dropped-by-policy",
        }
    }
}

/// A granted behavior as seen from the holder's tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    pub serial: u64,
    pub source: EntityRef,
    pub behavior: String,
    pub lock_ctx: Option<LockCtxId>,
    pub drop_policy: DropPolicy,
    pub inboxes: Vec<String>,
    pub grant_tick: u64,
    pub is_area: bool,
}

impl Grant {
    pub fn scope(&self) -> Scope {
        Scope { source: self.source, behavior: self.behavior.clone(), lock_ctx: self.lock_ctx, is_area: self.is_area }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum RefuseReason {
    Disabled,
    MaxHoldersReached,
    NoSuchBehavior,
    NoBehaviorAvailable,
    TargetOutsideArea,
    UnknownPrivateBehavior,
}

impl RefuseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RefuseReason::Disabled => "disabled",
            RefuseReason::MaxHoldersReached => "max-holders-reached",
            RefuseReason::NoSuchBehavior => "no-such-behavior",
            RefuseReason::NoBehaviorAvailable => "no-behavior-available",
            RefuseReason::TargetOutsideArea => "target-outside-area",
            RefuseReason::UnknownPrivateBehavior => "unknown-private-behavior",
        }
    }
}

// Short-lived return values; boxing the node buys nothing.
#[allow(clippy::large_enum_variant)]
pub enum RequestOutcome {
    Granted(Grant, Node),
    /// The source defers its decision; ask again next tick.
    Pending,
    Refused(RefuseReason),
    /// A hard runtime error (recursive request). The host records it.
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathItem {
    Step(Cell),
    Traverse { door: InstanceId, from: Cell, to: Cell, cost: u32 },
}

#[allow(clippy::large_enum_variant)]
pub enum InjectOutcome {
    Attached(Grant, Node),
    Rejected(String),
}

/// The tree's window onto the world.
///
/// Methods have conservative defaults so that test hosts only implement
/// what they exercise.
pub trait Host {
    fn now(&self) -> u64;

    /// Consumes one node evaluation from the update budget. Returning false
    /// makes the node yield with `Running` without changing state.
    fn charge(&mut self) -> bool {
        true
    }

    fn attribute(&self, _name: &str) -> Option<Value> {
        None
    }

    fn predicate(&mut self, name: &str, args: &[Value], ctx: &TreeContext) -> Result<bool, String>;

    fn start_action(
        &mut self,
        name: &str,
        params: &[(String, Value)],
        ctx: &mut TreeContext,
        immediate: bool,
    ) -> Result<ActionStart, String>;

    fn action_state(&mut self, _handle: ActionHandle) -> ActionState {
        ActionState::Completed
    }

    fn settle_action(&mut self, _handle: ActionHandle, _how: Settle) {}

    fn request(&mut self, _req: &BehaviorRequest, _name: Option<&str>, _ctx: &mut TreeContext) -> RequestOutcome {
        RequestOutcome::Refused(RefuseReason::NoSuchBehavior)
    }

    fn release(&mut self, _grant: Grant, _subtree: Node, _reason: ReleaseReason, _ctx: &mut TreeContext) {}

    fn send(
        &mut self,
        _to: &SendTarget,
        _schema: &str,
        _kind: MessageKind,
        _payload: Vec<(String, Value)>,
        _ctx: &TreeContext,
    ) -> Result<SendStatus, String> {
        Err("messaging unavailable".into())
    }

    fn receive(&mut self, _schema: &str, _ctx: &TreeContext) -> Result<Option<Message>, String> {
        Err("messaging unavailable".into())
    }

    fn acquire_lock(&mut self, _ctx: LockCtxId, _name: &str, _holder: OwnerId) -> LockOutcome {
        LockOutcome::Blocked
    }

    fn release_lock(&mut self, _ctx: LockCtxId, _name: &str, _holder: OwnerId) {}

    fn plan_move(&mut self, _target: &Value) -> Result<Vec<PathItem>, String> {
        Err("navigation unavailable".into())
    }

    fn inject_on_command(&mut self, _item: &PathItem, _ctx: &mut TreeContext) -> InjectOutcome {
        InjectOutcome::Rejected("no navigation objects".into())
    }

    fn subscribe(&mut self, _on: bool) {}

    fn set_gating(&mut self, _behavior: &str, _enabled: Option<bool>, _max: Option<u32>) -> Result<(), String> {
        Err("gating is only available to smart-entity brains".into())
    }

    /// Whether node-level events (node-entered / node-result) are traced.
    fn trace_nodes(&self) -> bool {
        false
    }

    fn trace(&mut self, _kind: &str, _fields: &[(&str, String)]) {}

    fn diagnostic(&mut self, _msg: String) {}

    /// Called around synchronous cleanup execution; actions started in
    /// cleanup take effect immediately.
    fn enter_cleanup(&mut self) {}
    fn leave_cleanup(&mut self) {}
}
