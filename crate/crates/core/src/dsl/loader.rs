//! Semantic loading. Every problem in the file is collected before giving up,
//! so one run of the loader reports all of them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::compile::{Compiler, Site};
use super::syntax::{parse, Atom, Decl, Expr, Pos, Scenario, Word};
use super::{LoadError, Problem};
use crate::areas::Rect;
use crate::bt::{DropPolicy, NodeDef, NodeKind};
use crate::entities::{bind, BehaviorDef, EntityKind, EventKind, LinkReq, LinkTarget, SeKind, SeTemplate};
use crate::npc::{NpcTemplate, Window, WindowTarget};
use crate::situations::{Atom as RoleAtom, RoleDef, SituationTemplate};
use crate::value::{Cell, EntityId, EntityRef, InstanceId, Value};
use crate::world::{wait_schemas, Grid, RunConfig, Scheduled, TraceLevel, World};

/// A loaded scenario, ready to run.
#[derive(Debug)]
pub struct Loaded {
    pub world: World,
    pub warnings: Vec<String>,
    pub scenario: Scenario,
}

pub fn load(src: &str) -> Result<Loaded, LoadError> {
    load_with(src, &|_| {})
}

/// Loads a scenario; `tweak` may override run settings (seed, ticks, trace
/// level) before the world is built.
pub fn load_with(src: &str, tweak: &dyn Fn(&mut RunConfig)) -> Result<Loaded, LoadError> {
    let scenario = parse(src)?;
    let mut l = Loader::default();
    let world = l.build(&scenario, tweak);
    if !l.problems.is_empty() {
        l.problems.sort_by_key(|p| (p.line, p.col));
        l.problems.dedup();
        return Err(LoadError::Invalid(l.problems));
    }
    Ok(Loaded { world: world.expect("no problems means a world"), warnings: l.warnings, scenario })
}

const ROLE_PREDICATES: &[&str] = &["true", "false", "attr-is", "attr-ge", "attr-lt", "has-attr", "is-drunk", "wealth-is", "has-key"];

/// A declaration line split into keyword, positional atoms and `key=value`
/// pairs.
struct Line<'a> {
    pos: &'a Pos,
    kw: &'a str,
    atoms: Vec<&'a Atom>,
    pairs: Vec<(&'a str, &'a Atom)>,
    tree: Option<&'a Expr>,
    members: &'a [Decl],
}

impl Line<'_> {
    fn get(&self, key: &str) -> Option<&Atom> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn has(&self, flag: &str) -> bool {
        self.atoms.iter().any(|a| matches!(a, Atom::Ident(s) if s == flag))
    }
}

/// An entity declared in the `world` section.
struct EntityDecl<'a> {
    line: Line<'a>,
    name: String,
    kind: EntityKind,
    template: Option<Arc<SeTemplate>>,
    pos: Option<Cell>,
}

#[derive(Default)]
struct Loader {
    problems: Vec<Problem>,
    warnings: Vec<String>,
    named: BTreeMap<String, Expr>,
    se: BTreeMap<String, Arc<SeTemplate>>,
    npc: BTreeMap<String, Arc<NpcTemplate>>,
    situations: Vec<SituationTemplate>,
    template_names: BTreeSet<String>,
    used: BTreeSet<String>,
}

impl Loader {
    fn problem(&mut self, pos: &Pos, msg: impl Into<String>) {
        self.problems.push(Problem { line: pos.line, col: pos.col, message: msg.into() });
    }

    fn line<'a>(&mut self, d: &'a Decl) -> Option<Line<'a>> {
        let Some(Word::Atom(Atom::Ident(kw))) = d.words.first() else {
            let shown = d.words.first().map(|w| w.to_string()).unwrap_or_default();
            self.problem(&d.pos, format!("expected a keyword, found `{shown}`"));
            return None;
        };
        let mut l = Line { pos: &d.pos, kw, atoms: Vec::new(), pairs: Vec::new(), tree: d.tree.as_ref(), members: &d.members };
        for w in &d.words[1..] {
            match w {
                Word::Atom(a) => l.atoms.push(a),
                Word::Pair(k, v) => {
                    if l.pairs.iter().any(|(p, _)| p == k) {
                        self.problem(&d.pos, format!("`{k}=` given twice"));
                    }
                    l.pairs.push((k, v));
                }
                Word::Tagged(..) => self.problem(&d.pos, format!("unexpected `{w}` in `{kw}` line")),
            }
        }
        Some(l)
    }

    /// Checks positional count, flags and keys. `keys: None` accepts any key.
    fn shape(&mut self, l: &Line, positional: usize, flags: &[&str], keys: Option<&[&str]>) -> bool {
        let mut ok = true;
        if l.atoms.len() < positional {
            self.problem(l.pos, format!("`{}` needs {positional} argument(s), found {}", l.kw, l.atoms.len()));
            ok = false;
        }
        for a in l.atoms.iter().skip(positional) {
            match a {
                Atom::Ident(s) if flags.contains(&s.as_str()) => {}
                other => {
                    let hint = if flags.is_empty() { String::new() } else { format!(" (flags: {})", flags.join(", ")) };
                    self.problem(l.pos, format!("unexpected `{other}` in `{}` line{hint}", l.kw));
                    ok = false;
                }
            }
        }
        if let Some(keys) = keys {
            for (k, _) in &l.pairs {
                if !keys.contains(k) {
                    let hint = if keys.is_empty() { "none".to_string() } else { keys.join(", ") };
                    self.problem(l.pos, format!("unknown key `{k}=` in `{}` line (allowed: {hint})", l.kw));
                    ok = false;
                }
            }
        }
        ok
    }

    fn no_tree(&mut self, l: &Line) {
        if let Some(t) = l.tree {
            self.problem(t.pos(), format!("`{}` takes no tree", l.kw));
        }
        if let Some(m) = l.members.first() {
            self.problem(&m.pos, format!("`{}` takes no nested declarations", l.kw));
        }
    }

    fn name(&mut self, l: &Line, i: usize) -> Option<String> {
        match l.atoms.get(i) {
            Some(Atom::Ident(s)) => Some(s.clone()),
            Some(other) => {
                self.problem(l.pos, format!("expected a name, found `{other}`"));
                None
            }
            None => None,
        }
    }

    fn num(&mut self, pos: &Pos, a: &Atom, what: &str) -> Option<i64> {
        match a {
            Atom::Num(n) => Some(*n),
            other => {
                self.problem(pos, format!("`{what}` must be a number, found `{other}`"));
                None
            }
        }
    }

    fn unsigned(&mut self, pos: &Pos, a: &Atom, what: &str) -> Option<u64> {
        let n = self.num(pos, a, what)?;
        if n < 0 {
            self.problem(pos, format!("`{what}` must not be negative"));
            return None;
        }
        Some(n as u64)
    }

    fn key_num(&mut self, l: &Line, key: &str) -> Option<u64> {
        let a = l.get(key)?.clone();
        self.unsigned(l.pos, &a, key)
    }

    fn cell(&mut self, pos: &Pos, a: &Atom, what: &str) -> Option<Cell> {
        match a {
            Atom::Tuple(v) if v.len() == 2 => Some(Cell::new(v[0] as i32, v[1] as i32)),
            other => {
                self.problem(pos, format!("`{what}` must be a cell `x,y`, found `{other}`"));
                None
            }
        }
    }

    fn boolean(&mut self, pos: &Pos, a: &Atom, what: &str) -> Option<bool> {
        match a {
            Atom::Ident(s) if s == "true" => Some(true),
            Atom::Ident(s) if s == "false" => Some(false),
            other => {
                self.problem(pos, format!("`{what}` must be true or false, found `{other}`"));
                None
            }
        }
    }

    fn value(a: &Atom) -> Value {
        match a {
            Atom::Ident(s) if s == "true" => Value::Bool(true),
            Atom::Ident(s) if s == "false" => Value::Bool(false),
            Atom::Ident(s) | Atom::Str(s) | Atom::Var(s) | Atom::Attr(s) => Value::Str(s.clone()),
            Atom::Num(n) => Value::Num(*n),
            Atom::Tuple(v) if v.len() == 2 => Value::Ref(EntityRef::Cell(Cell::new(v[0] as i32, v[1] as i32))),
            Atom::Tuple(v) => Value::List(v.iter().map(|n| Value::Num(*n)).collect()),
        }
    }

    fn tree(&mut self, l: &Line, site: Site) -> Option<Arc<NodeDef>> {
        let Some(t) = l.tree else {
            self.problem(l.pos, format!("`{}` needs a tree", l.kw));
            return None;
        };
        let c = Compiler::new(&self.named, site);
        match c.tree(t) {
            Ok(def) => Some(def),
            Err(p) => {
                // A stand-in keeps the declaration alive so that one bad tree
                // does not cascade into unrelated problems.
                self.problems.push(p);
                let stub = NodeDef::new(NodeKind::Condition { predicate: "false".into(), args: Vec::new() }, Vec::new());
                Some(Arc::new(stub))
            }
        }
    }

    // ---- templates ----------------------------------------------------

    fn claim_template(&mut self, l: &Line, name: &str) -> bool {
        if !self.template_names.insert(name.to_string()) {
            self.problem(l.pos, format!("duplicate template `{name}`"));
            return false;
        }
        true
    }

    fn se_template(&mut self, l: &Line, kind: SeKind) {
        self.shape(l, 1, &[], Some(&[]));
        let Some(name) = self.name(l, 0) else { return };
        if let Some(t) = l.tree {
            self.problem(t.pos(), "templates take trees only under `behavior`, `brain` or `on`");
        }
        let mut t = SeTemplate {
            name: name.clone(),
            kind,
            behaviors: Vec::new(),
            brain: None,
            handlers: BTreeMap::new(),
            links: Vec::new(),
            period: None,
            state: Vec::new(),
            inboxes: Vec::new(),
            line: l.pos.line,
        };
        for m in l.members {
            let Some(ml) = self.line(m) else { continue };
            match ml.kw {
                "link" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 1, &[], Some(&["min", "max", "kind"]));
                    let Some(label) = self.name(&ml, 0) else { continue };
                    let ekind = match ml.get("kind") {
                        None => None,
                        Some(Atom::Ident(k)) => match EntityKind::parse(k) {
                            Some(ek) => Some(ek),
                            None => {
                                self.problem(ml.pos, format!("unknown entity kind `{k}` (object, nav, area, quest, anchor, item)"));
                                None
                            }
                        },
                        Some(other) => {
                            self.problem(ml.pos, format!("bad kind `{other}`"));
                            None
                        }
                    };
                    let min = self.key_num(&ml, "min").unwrap_or(1) as u32;
                    let max = self.key_num(&ml, "max").map(|n| n as u32);
                    if max.is_some_and(|m| m < min) {
                        self.problem(ml.pos, format!("link `{label}` has max below min"));
                    }
                    if t.links.iter().any(|x| x.label == label) {
                        self.problem(ml.pos, format!("duplicate link `{label}`"));
                    }
                    t.links.push(LinkReq { label, min, max, kind: ekind, line: ml.pos.line });
                }
                "behavior" => {
                    self.shape(
                        &ml,
                        1,
                        &["general", "private", "oncommand", "dual"],
                        Some(&["max", "enabled", "drop", "inbox", "provider-link", "provider-behavior"]),
                    );
                    if let Some(m) = ml.members.first() {
                        self.problem(&m.pos, "`behavior` takes no nested declarations");
                    }
                    let Some(bname) = self.name(&ml, 0) else { continue };
                    let tree = self.tree(&ml, Site::Npc);
                    let default_max = if kind == SeKind::Area { 1000 } else { 1 };
                    let max_holders = self.key_num(&ml, "max").unwrap_or(default_max) as u32;
                    let enabled = match ml.get("enabled").cloned() {
                        Some(a) => self.boolean(ml.pos, &a, "enabled").unwrap_or(true),
                        None => true,
                    };
                    let drop = match ml.get("drop") {
                        None if kind == SeKind::Area => DropPolicy::OnAreaExit,
                        None => DropPolicy::OnCompletion,
                        Some(Atom::Ident(s)) if s == "on-completion" => DropPolicy::OnCompletion,
                        Some(Atom::Ident(s)) if s == "on-area-exit" => DropPolicy::OnAreaExit,
                        Some(Atom::Ident(s)) if s == "on-abort" => DropPolicy::OnAbortSignal,
                        Some(other) => {
                            self.problem(ml.pos, format!("unknown drop policy `{other}` (on-completion, on-area-exit, on-abort)"));
                            DropPolicy::OnCompletion
                        }
                    };
                    let (general, private) = (ml.has("general"), ml.has("private"));
                    if general && private {
                        self.problem(ml.pos, format!("behavior `{bname}` cannot be both general and private"));
                    }
                    let providers = match (ml.get("provider-link"), ml.get("provider-behavior")) {
                        (Some(Atom::Ident(a)), Some(Atom::Ident(b))) => {
                            if !t.links.iter().any(|x| x.label == *a) {
                                self.problem(ml.pos, format!("provider link `{a}` is not declared (declare links first)"));
                            }
                            Some((a.clone(), b.clone()))
                        }
                        (None, None) => None,
                        _ => {
                            self.problem(ml.pos, "`provider-link=` and `provider-behavior=` go together and take names");
                            None
                        }
                    };
                    let mut inboxes = Vec::new();
                    match ml.get("inbox") {
                        Some(Atom::Ident(s)) => inboxes.push(s.clone()),
                        Some(other) => self.problem(ml.pos, format!("bad inbox name `{other}`")),
                        None => {}
                    }
                    if t.behaviors.iter().any(|b| b.name == bname) {
                        self.problem(ml.pos, format!("duplicate behavior `{bname}` in `{name}`"));
                    }
                    let Some(tree) = tree else { continue };
                    for s in wait_schemas(&tree) {
                        if !inboxes.contains(&s) {
                            inboxes.push(s);
                        }
                    }
                    t.behaviors.push(BehaviorDef {
                        name: bname,
                        tree,
                        enabled,
                        max_holders,
                        general,
                        private,
                        oncommand: ml.has("oncommand"),
                        dual: ml.has("dual"),
                        drop,
                        inboxes,
                        providers,
                        line: ml.pos.line,
                    });
                }
                "brain" => {
                    self.shape(&ml, 0, &[], Some(&[]));
                    if t.brain.is_some() {
                        self.problem(ml.pos, "second `brain`");
                    }
                    t.brain = self.tree(&ml, Site::Brain).or(t.brain.take());
                }
                "on" => {
                    self.shape(&ml, 1, &[], Some(&[]));
                    let Some(ev) = self.name(&ml, 0) else { continue };
                    let Some(kind) = EventKind::parse(&ev) else {
                        self.problem(ml.pos, format!("unknown event `{ev}` (adopt, drop, enter, exit)"));
                        continue;
                    };
                    if t.handlers.contains_key(&kind) {
                        self.problem(ml.pos, format!("second handler for `{ev}`"));
                    }
                    if let Some(tree) = self.tree(&ml, Site::Brain) {
                        t.handlers.insert(kind, tree);
                    }
                }
                "state" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 0, &[], None);
                    for (k, v) in &ml.pairs {
                        t.state.push((k.to_string(), Self::value(v)));
                    }
                }
                "period" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 1, &[], Some(&[]));
                    if let Some(a) = ml.atoms.first() {
                        match self.unsigned(ml.pos, a, "period") {
                            Some(0) => self.problem(ml.pos, "`period` must be at least 1"),
                            Some(n) => t.period = Some(n as u32),
                            None => {}
                        }
                    }
                }
                "inbox" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 1, &[], Some(&["cap"]));
                    let Some(s) = self.name(&ml, 0) else { continue };
                    let cap = self.key_num(&ml, "cap").map(|n| n as usize);
                    t.inboxes.push((s, cap));
                }
                other => self.problem(
                    ml.pos,
                    format!("unknown member `{other}` in {} template (link, behavior, brain, on, state, period, inbox)", kind.as_str()),
                ),
            }
        }
        if kind == SeKind::Nav && !t.behaviors.iter().any(|b| b.oncommand) {
            self.warnings.push(format!("line {}: nav template `{name}` has no oncommand behavior", l.pos.line));
        }
        if self.claim_template(l, &name) {
            self.se.insert(name, Arc::new(t));
        }
    }

    fn npc_template(&mut self, l: &Line) {
        self.shape(l, 1, &[], Some(&[]));
        let Some(name) = self.name(l, 0) else { return };
        let mut attrs = Vec::new();
        let (mut ambient, mut combat, mut quest) = (None, None, None);
        let mut windows = Vec::new();
        let mut inboxes = Vec::new();
        for m in l.members {
            let Some(ml) = self.line(m) else { continue };
            match ml.kw {
                "attr" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 0, &[], None);
                    attrs.extend(ml.pairs.iter().map(|(k, v)| (k.to_string(), Self::value(v))));
                }
                "ambient" | "combat" | "quest" => {
                    self.shape(&ml, 0, &[], Some(&[]));
                    let slot = match ml.kw {
                        "ambient" => &mut ambient,
                        "combat" => &mut combat,
                        _ => &mut quest,
                    };
                    if slot.is_some() {
                        let kw = ml.kw;
                        self.problem(ml.pos, format!("second `{kw}` tree"));
                        continue;
                    }
                    let tree = self.tree(&ml, Site::Npc);
                    *match ml.kw {
                        "ambient" => &mut ambient,
                        "combat" => &mut combat,
                        _ => &mut quest,
                    } = tree;
                }
                "window" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 0, &["general"], Some(&["from", "to", "target", "behavior"]));
                    let from = self.key_num(&ml, "from");
                    let to = self.key_num(&ml, "to");
                    let behavior = match ml.get("behavior") {
                        Some(Atom::Ident(b)) => Some(b.clone()),
                        _ => {
                            self.problem(ml.pos, "`window` needs `behavior=<name>`");
                            None
                        }
                    };
                    let target = match ml.get("target") {
                        None => WindowTarget::Area,
                        Some(Atom::Ident(s)) if s == "area" => WindowTarget::Area,
                        Some(Atom::Ident(s)) => WindowTarget::Instance(s.clone()),
                        Some(other) => {
                            self.problem(ml.pos, format!("bad window target `{other}`"));
                            WindowTarget::Area
                        }
                    };
                    match (from, to, behavior) {
                        (Some(f), Some(t), Some(b)) if f < 1440 && t < 1440 => windows.push(Window {
                            from: f as u32,
                            to: t as u32,
                            target,
                            behavior: b,
                            general: ml.has("general"),
                            line: ml.pos.line,
                        }),
                        (Some(_), Some(_), Some(_)) => self.problem(ml.pos, "window times are minutes of the day, below 1440"),
                        (f, t, _) => {
                            if f.is_none() || t.is_none() {
                                self.problem(ml.pos, "`window` needs `from=` and `to=` in minutes");
                            }
                        }
                    }
                }
                "inbox" => {
                    self.no_tree(&ml);
                    self.shape(&ml, 1, &[], Some(&["cap"]));
                    let Some(s) = self.name(&ml, 0) else { continue };
                    let cap = self.key_num(&ml, "cap").map(|n| n as usize);
                    inboxes.push((s, cap));
                }
                other => {
                    self.problem(ml.pos, format!("unknown member `{other}` in npc template (attr, ambient, combat, quest, window, inbox)"))
                }
            }
        }
        for (k, w) in windows.iter().enumerate() {
            for v in &windows[k + 1..] {
                let overlap = (0..1440).any(|m| w.contains(m) && v.contains(m));
                if overlap {
                    self.problem(&Pos { line: v.line, col: 1 }, format!("window overlaps the window on line {}", w.line));
                }
            }
        }
        let Some(ambient) = ambient else {
            self.problem(l.pos, format!("npc template `{name}` needs an `ambient` tree"));
            return;
        };
        let t = NpcTemplate { name: name.clone(), attrs, ambient, combat, quest, windows, inboxes, line: l.pos.line };
        if self.claim_template(l, &name) {
            self.npc.insert(name, Arc::new(t));
        }
    }

    fn situation_template(&mut self, l: &Line) {
        self.shape(l, 1, &["solo"], Some(&["weight", "cooldown", "area"]));
        let Some(name) = self.name(l, 0) else { return };
        let weight = self.key_num(l, "weight").unwrap_or(1) as u32;
        let cooldown = self.key_num(l, "cooldown").unwrap_or(0);
        let area = match l.get("area") {
            Some(Atom::Ident(a)) => Some(a.clone()),
            Some(other) => {
                self.problem(l.pos, format!("bad area template `{other}`"));
                None
            }
            None => None,
        };
        let mut roles = Vec::new();
        for m in l.members {
            let Some(ml) = self.line(m) else { continue };
            if ml.kw != "role" {
                self.problem(ml.pos, format!("unknown member `{}` in situation template (role)", ml.kw));
                continue;
            }
            self.shape(&ml, 1, &[], Some(&[]));
            let Some(rname) = self.name(&ml, 0) else { continue };
            let mut when = Vec::new();
            for c in ml.members {
                let Some(cl) = self.line(c) else { continue };
                if cl.kw != "when" {
                    self.problem(cl.pos, format!("unknown member `{}` in role (when)", cl.kw));
                    continue;
                }
                self.no_tree(&cl);
                self.shape(&cl, cl.atoms.len().max(1), &[], Some(&[]));
                let Some(p) = self.name(&cl, 0) else { continue };
                if !ROLE_PREDICATES.contains(&p.as_str()) {
                    self.problem(cl.pos, format!("`{p}` cannot be used in a role condition ({})", ROLE_PREDICATES.join(", ")));
                    continue;
                }
                let spec = crate::registry::predicate(&p).expect("role predicates are registered");
                let args: Vec<Value> = cl.atoms[1..].iter().map(|a| Self::value(a)).collect();
                if spec.arity.is_some_and(|n| n != args.len()) {
                    self.problem(cl.pos, format!("predicate `{p}` takes {} argument(s), found {}", spec.arity.unwrap_or(0), args.len()));
                }
                when.push(RoleAtom::new(&p, args));
            }
            if roles.iter().any(|r: &RoleDef| r.name == rname) {
                self.problem(ml.pos, format!("duplicate role `{rname}`"));
            }
            if let Some(tree) = self.tree(&ml, Site::Npc) {
                roles.push(RoleDef { name: rname, when, tree, line: ml.pos.line });
            }
        }
        if roles.is_empty() {
            self.problem(l.pos, format!("situation `{name}` has no roles"));
        }
        if l.has("solo") != (roles.len() == 1) && !roles.is_empty() {
            self.warnings.push(format!("line {}: situation `{name}` solo flag disagrees with its {} role(s)", l.pos.line, roles.len()));
        }
        if self.claim_template(l, &name) {
            self.situations.push(SituationTemplate { name, roles, weight, cooldown, area, solo: l.has("solo"), line: l.pos.line });
        }
    }

    // ---- run settings -------------------------------------------------

    fn run_config(&mut self, sc: &Scenario) -> RunConfig {
        let mut c = RunConfig::default();
        for d in sc.section("run") {
            let Some(l) = self.line(d) else { continue };
            self.no_tree(&l);
            let simple = [
                "seed",
                "ticks",
                "manager-every",
                "ticks-per-minute",
                "start-minute",
                "npc-budget",
                "se-budget",
                "door-patience",
                "boost-threshold",
                "boost-factor",
            ];
            if simple.contains(&l.kw) {
                self.shape(&l, 1, &[], Some(&[]));
                let Some(a) = l.atoms.first() else { continue };
                let Some(n) = self.unsigned(l.pos, a, l.kw) else { continue };
                match l.kw {
                    "seed" => c.seed = n,
                    "ticks" => c.ticks = n,
                    "manager-every" => c.manager_every = n.max(1),
                    "ticks-per-minute" => c.ticks_per_minute = n.max(1),
                    "start-minute" => c.start_minute = (n % 1440) as u32,
                    "npc-budget" => c.npc_budget = n as u32,
                    "se-budget" => c.se_budget = n as u32,
                    "door-patience" => c.door_patience = n,
                    "boost-threshold" => c.boost_threshold = n as usize,
                    _ => c.boost_factor = n.max(1) as u32,
                }
            } else if l.kw == "trace-level" {
                self.shape(&l, 1, &[], Some(&[]));
                if let Some(Atom::Ident(s)) = l.atoms.first() {
                    match TraceLevel::parse(s) {
                        Some(t) => c.trace_level = t,
                        None => self.problem(l.pos, format!("unknown trace level `{s}` (off, behavior, nodes)")),
                    }
                }
            } else if l.kw == "situations" {
                self.shape(&l, 1, &[], Some(&[]));
                match l.atoms.first() {
                    Some(Atom::Ident(s)) if s == "on" => c.situations = true,
                    Some(Atom::Ident(s)) if s == "off" => c.situations = false,
                    Some(_) => self.problem(l.pos, "situations takes `on` or `off`"),
                    None => {}
                }
            } else if l.kw == "inbox-capacity" {
                self.shape(&l, 1, &[], Some(&[]));
                match l.atoms.first() {
                    Some(Atom::Ident(s)) if s == "unbounded" => c.default_capacity = None,
                    Some(a) => {
                        if let Some(n) = self.unsigned(l.pos, a, "inbox-capacity") {
                            c.default_capacity = Some(n as usize);
                        }
                    }
                    None => {}
                }
            } else if !["combat", "quest-flag"].contains(&l.kw) {
                self.problem(
                    l.pos,
                    format!(
                        "unknown run setting `{}` ({}, trace-level, inbox-capacity, situations, combat, quest-flag)",
                        l.kw,
                        simple.join(", ")
                    ),
                );
            }
        }
        c
    }

    // ---- world --------------------------------------------------------

    fn build(&mut self, sc: &Scenario, tweak: &dyn Fn(&mut RunConfig)) -> Option<World> {
        for d in sc.section("trees") {
            let Some(l) = self.line(d) else { continue };
            self.shape(&l, 0, &[], Some(&[]));
            if !l.atoms.is_empty() || !d.members.is_empty() {
                self.problem(l.pos, "a named tree is a bare name followed by its tree");
            }
            match d.tree.clone() {
                Some(t) if !self.named.contains_key(l.kw) => {
                    self.named.insert(l.kw.to_string(), t);
                }
                Some(_) => self.problem(l.pos, format!("duplicate tree `{}`", l.kw)),
                None => self.problem(l.pos, format!("tree `{}` has no body", l.kw)),
            }
        }
        for d in sc.section("templates") {
            let Some(l) = self.line(d) else { continue };
            match l.kw {
                "object" => self.se_template(&l, SeKind::Object),
                "area" => self.se_template(&l, SeKind::Area),
                "nav" => self.se_template(&l, SeKind::Nav),
                "quest" => self.se_template(&l, SeKind::Quest),
                "npc" => self.npc_template(&l),
                "situation" => self.situation_template(&l),
                other => self.problem(l.pos, format!("unknown template kind `{other}` (object, area, nav, quest, npc, situation)")),
            }
        }
        for s in &self.situations {
            if let Some(a) = &s.area {
                if !self.se.get(a).is_some_and(|t| t.kind == SeKind::Area) {
                    self.problems.push(Problem {
                        line: s.line,
                        col: 1,
                        message: format!("situation `{}` names unknown area template `{a}`", s.name),
                    });
                }
            }
        }

        let mut config = self.run_config(sc);
        tweak(&mut config);

        // Grid and walls come first; everything else is placed on them.
        let mut grid = Grid::new(32, 32);
        let mut seen_grid = false;
        let world_decls: Vec<&Decl> = sc.section("world").collect();
        let mut lines = Vec::new();
        for d in &world_decls {
            let Some(l) = self.line(d) else { continue };
            self.no_tree(&l);
            match l.kw {
                "grid" => {
                    self.shape(&l, 2, &[], Some(&[]));
                    if seen_grid {
                        self.problem(l.pos, "second `grid`");
                    }
                    seen_grid = true;
                    if let (Some(w), Some(h)) = (l.atoms.first(), l.atoms.get(1)) {
                        let (w, h) = (self.unsigned(l.pos, w, "width"), self.unsigned(l.pos, h, "height"));
                        match (w, h) {
                            (Some(w), Some(h)) if w > 0 && h > 0 && w <= 4096 && h <= 4096 => grid = Grid::new(w as i32, h as i32),
                            (Some(_), Some(_)) => self.problem(l.pos, "grid sides must be between 1 and 4096"),
                            _ => {}
                        }
                    }
                }
                _ => lines.push(l),
            }
        }
        for l in lines.iter().filter(|l| l.kw == "wall") {
            self.shape(l, 2, &[], Some(&[]));
            let (Some(a), Some(b)) = (l.atoms.first(), l.atoms.get(1)) else { continue };
            let (Some(a), Some(b)) = (self.cell(l.pos, a, "wall"), self.cell(l.pos, b, "wall")) else { continue };
            if !grid.in_bounds(a) || !grid.in_bounds(b) {
                self.problem(l.pos, "wall outside the grid");
                continue;
            }
            let r = Rect::new(a.x, a.y, b.x, b.y);
            for x in r.x0..=r.x1 {
                for y in r.y0..=r.y1 {
                    grid.walls.insert(Cell::new(x, y));
                }
            }
        }

        let mut world = World::new(config, grid);
        let mut names: BTreeSet<String> = ["world", "manager"].iter().map(|s| s.to_string()).collect();
        let mut claim = |me: &mut Self, l: &Line, n: &str| {
            if !names.insert(n.to_string()) {
                me.problem(l.pos, format!("duplicate name `{n}`"));
            }
        };

        let mut ents: Vec<EntityDecl> = Vec::new();
        let mut links = Vec::new();
        let mut drivers = Vec::new();
        for l in lines.into_iter().filter(|l| l.kw != "wall") {
            let kind = match l.kw {
                "area" => EntityKind::Instance(SeKind::Area),
                "object" => EntityKind::Instance(SeKind::Object),
                "door" => EntityKind::Instance(SeKind::Nav),
                "quest" => EntityKind::Instance(SeKind::Quest),
                "anchor" => EntityKind::Anchor,
                "item" => EntityKind::Item,
                "link" => {
                    links.push(l);
                    continue;
                }
                "driver" => {
                    drivers.push(l);
                    continue;
                }
                other => {
                    self.problem(
                        l.pos,
                        format!("unknown world item `{other}` (grid, wall, area, object, door, quest, anchor, item, link, driver)"),
                    );
                    continue;
                }
            };
            let (flags, keys): (&[&str], &[&str]) = match l.kw {
                "area" => (&["resolution-root"], &["template", "bounds", "parent"]),
                "door" => (&["locked"], &["template", "entry", "exit", "cost"]),
                "quest" => (&[], &["template", "at"]),
                "object" => (&[], &["template", "at"]),
                _ => (&[], &["at"]),
            };
            self.shape(&l, 1, flags, Some(keys));
            let Some(name) = self.name(&l, 0) else { continue };
            claim(self, &l, &name);
            let template = if let EntityKind::Instance(sk) = kind {
                match l.get("template") {
                    Some(Atom::Ident(t)) => match self.se.get(t) {
                        Some(tm) if tm.kind == sk => {
                            self.used.insert(t.clone());
                            Some(tm.clone())
                        }
                        Some(tm) => {
                            self.problem(
                                l.pos,
                                format!("template `{t}` is a {} template, `{}` needs a {} template", tm.kind.as_str(), l.kw, sk.as_str()),
                            );
                            None
                        }
                        None => {
                            self.problem(l.pos, format!("unknown template `{t}`"));
                            None
                        }
                    },
                    _ => {
                        self.problem(l.pos, format!("`{}` needs `template=<name>`", l.kw));
                        None
                    }
                }
            } else {
                None
            };
            let pos_key = match l.kw {
                "door" => "entry",
                "area" => "bounds",
                _ => "at",
            };
            let pos = match (l.kw, l.get(pos_key).cloned()) {
                ("area", Some(Atom::Tuple(v))) if v.len() == 4 => {
                    let r = Rect::new(v[0] as i32, v[1] as i32, v[2] as i32, v[3] as i32);
                    Some(r.center())
                }
                ("area", Some(other)) => {
                    self.problem(l.pos, format!("`bounds` must be `x0,y0,x1,y1`, found `{other}`"));
                    None
                }
                (_, Some(a)) => self.cell(l.pos, &a, pos_key),
                ("quest", None) => None,
                (_, None) => {
                    self.problem(l.pos, format!("`{}` needs `{pos_key}=`", l.kw));
                    None
                }
            };
            if let Some(c) = pos {
                if !world.grid.in_bounds(c) {
                    self.problem(l.pos, format!("`{name}` at {c} is outside the grid"));
                }
            }
            ents.push(EntityDecl { line: l, name, kind, template, pos });
        }

        // Entities get ids in declaration order, instances likewise.
        let mut eid: BTreeMap<String, EntityId> = BTreeMap::new();
        for e in &ents {
            eid.insert(e.name.clone(), world.add_entity(&e.name, e.kind, e.pos));
        }
        let mut planned: BTreeMap<String, InstanceId> = BTreeMap::new();
        for e in ents.iter().filter(|e| matches!(e.kind, EntityKind::Instance(_))) {
            planned.insert(e.name.clone(), InstanceId(planned.len() as u32 + 1));
        }
        let mut outgoing: BTreeMap<String, BTreeMap<String, Vec<LinkTarget>>> = BTreeMap::new();
        for l in &links {
            self.shape(l, l.atoms.len().max(3), &[], Some(&[]));
            let names: Vec<Option<String>> = (0..l.atoms.len()).map(|i| self.name(l, i)).collect();
            let Some(Some(from)) = names.first() else { continue };
            let Some(Some(label)) = names.get(1) else { continue };
            if !planned.contains_key(from) {
                self.problem(l.pos, format!("link source `{from}` is not a smart-entity instance"));
                continue;
            }
            for to in names.iter().skip(2).flatten() {
                let Some(e) = ents.iter().find(|e| e.name == *to) else {
                    self.problem(l.pos, format!("unknown link target `{to}`"));
                    continue;
                };
                let reference = match planned.get(to) {
                    Some(i) => EntityRef::Instance(*i),
                    None => EntityRef::Entity(eid[to]),
                };
                outgoing.entry(from.clone()).or_default().entry(label.clone()).or_default().push(LinkTarget {
                    name: to.clone(),
                    kind: e.kind,
                    reference,
                });
            }
        }
        for e in &ents {
            let Some(t) = &e.template else { continue };
            let empty = BTreeMap::new();
            let out = outgoing.get(&e.name).unwrap_or(&empty);
            for label in out.keys() {
                if !t.links.iter().any(|r| r.label == *label) {
                    self.warnings.push(format!(
                        "line {}: `{}` links `{label}`, which template `{}` does not declare",
                        e.line.pos.line, e.name, t.name
                    ));
                }
            }
            // A failed binding still adds the instance so that later ids stay
            // aligned and later problems are found; the world is discarded.
            let env = bind(t, out).unwrap_or_else(|errs| {
                for err in errs {
                    self.problem(e.line.pos, format!("`{}`: {err}", e.name));
                }
                BTreeMap::new()
            });
            let id = world.add_instance(&e.name, t.clone(), eid[&e.name], env);
            world.instances[id.index()].line = e.line.pos.line;
        }

        // Areas, in declaration order so parents precede children.
        for e in ents.iter().filter(|e| e.kind == EntityKind::Instance(SeKind::Area)) {
            let Some(id) = world.instance_id(&e.name) else { continue };
            let Some(Atom::Tuple(v)) = e.line.get("bounds") else { continue };
            if v.len() != 4 {
                continue;
            }
            let r = Rect::new(v[0] as i32, v[1] as i32, v[2] as i32, v[3] as i32);
            if !world.grid.in_bounds(Cell::new(r.x0, r.y0)) || !world.grid.in_bounds(Cell::new(r.x1, r.y1)) {
                self.problem(e.line.pos, format!("area `{}` extends outside the grid", e.name));
            }
            let parent = match e.line.get("parent") {
                None => None,
                Some(Atom::Ident(p)) => match world.instance_id(p) {
                    Some(pid) if world.areas.index_of(pid).is_some() => Some(pid),
                    Some(_) => {
                        self.problem(e.line.pos, format!("parent `{p}` must be an area declared earlier"));
                        None
                    }
                    None => {
                        self.problem(e.line.pos, format!("unknown parent area `{p}`"));
                        None
                    }
                },
                Some(other) => {
                    self.problem(e.line.pos, format!("bad parent `{other}`"));
                    None
                }
            };
            world.add_area(id, r, parent, e.line.has("resolution-root"));
        }
        for err in world.areas.validate() {
            use crate::areas::AreaError;
            let name = |i: usize| world.instances[world.areas.node(i).instance.index()].name.clone();
            let (subject, msg) = match err {
                AreaError::OutsideParent { child, parent } => {
                    (child, format!("area `{}` is not inside its parent `{}`", name(child), name(parent)))
                }
                AreaError::Overlap { a, b } => (b, format!("sibling areas `{}` and `{}` overlap", name(a), name(b))),
            };
            let inst = world.areas.node(subject).instance;
            let line = world.instances[inst.index()].line;
            self.problems.push(Problem { line, col: 3, message: msg });
        }

        // Doors.
        for e in ents.iter().filter(|e| e.kind == EntityKind::Instance(SeKind::Nav)) {
            let Some(id) = world.instance_id(&e.name) else { continue };
            let (Some(entry), Some(exit)) = (e.pos, e.line.get("exit").cloned()) else {
                self.problem(e.line.pos, "`door` needs `entry=` and `exit=`");
                continue;
            };
            let Some(exit) = self.cell(e.line.pos, &exit, "exit") else { continue };
            for c in [entry, exit] {
                if !world.grid.passable(c) {
                    self.problem(e.line.pos, format!("door `{}` end {c} is not a passable cell", e.name));
                }
            }
            let cost = self.key_num(&e.line, "cost").unwrap_or(3) as u32;
            world.add_door(id, entry, exit, cost.max(1), e.line.has("locked"));
        }

        // An object behavior may not silently shadow a behavior of an area
        // enclosing it.
        for e in ents.iter().filter(|e| matches!(e.kind, EntityKind::Instance(SeKind::Object | SeKind::Nav))) {
            let (Some(t), Some(c)) = (&e.template, e.pos) else { continue };
            for ai in world.areas_at(c) {
                let at = world.instances[ai.index()].template.clone();
                for b in &t.behaviors {
                    if let Some(ab) = at.behavior(&b.name) {
                        if !ab.private && !b.dual && !ab.dual {
                            self.problem(
                                e.line.pos,
                                format!(
                                    "behavior `{}` of `{}` shadows the same behavior of enclosing area `{}`; mark one of them `dual`",
                                    b.name,
                                    e.name,
                                    world.instances[ai.index()].name
                                ),
                            );
                        }
                    }
                }
            }
        }

        // NPCs.
        for d in sc.section("npcs") {
            let Some(l) = self.line(d) else { continue };
            self.no_tree(&l);
            if l.kw != "npc" {
                self.problem(l.pos, format!("unknown npcs item `{}` (npc)", l.kw));
                continue;
            }
            self.shape(&l, 1, &[], None);
            let Some(name) = self.name(&l, 0) else { continue };
            claim(self, &l, &name);
            let template = match l.get("template") {
                Some(Atom::Ident(t)) => match self.npc.get(t) {
                    Some(tm) => {
                        self.used.insert(t.clone());
                        Some(tm.clone())
                    }
                    None => {
                        self.problem(l.pos, format!("unknown npc template `{t}`"));
                        None
                    }
                },
                _ => {
                    self.problem(l.pos, "`npc` needs `template=<name>`");
                    None
                }
            };
            let at = match l.get("at").cloned() {
                Some(a) => self.cell(l.pos, &a, "at"),
                None => {
                    self.problem(l.pos, "`npc` needs `at=x,y`");
                    None
                }
            };
            if let Some(c) = at {
                if !world.grid.passable(c) {
                    self.problem(l.pos, format!("npc `{name}` starts on {c}, which is not passable"));
                }
            }
            let attrs: BTreeMap<String, Value> =
                l.pairs.iter().filter(|(k, _)| !matches!(*k, "template" | "at")).map(|(k, v)| (k.to_string(), Self::value(v))).collect();
            if let (Some(t), Some(c)) = (template, at) {
                for w in &t.windows {
                    if let WindowTarget::Instance(n) = &w.target {
                        if world.instance_id(n).is_none() {
                            self.problems.push(Problem {
                                line: w.line,
                                col: 5,
                                message: format!("window target `{n}` is not an instance"),
                            });
                        }
                    }
                }
                let id = world.add_npc(&name, t, c, attrs);
                world.npcs[id.index()].line = l.pos.line;
            }
        }

        for s in std::mem::take(&mut self.situations) {
            world.add_situation_template(s);
        }

        for l in &drivers {
            self.shape(l, 1, &[], Some(&["start", "at"]));
            let Some(name) = self.name(l, 0) else { continue };
            claim(self, l, &name);
            let id = world.add_driver(&name);
            match (l.get("start"), l.get("at").cloned()) {
                (Some(Atom::Ident(q)), at) => {
                    let tick = match at {
                        Some(a) => self.unsigned(l.pos, &a, "at").unwrap_or(0),
                        None => 0,
                    };
                    match world.instance_id(q) {
                        Some(qi) if world.instances[qi.index()].kind() == SeKind::Quest => {
                            world.schedule_at(tick, Scheduled::Start { driver: id, quest: qi })
                        }
                        _ => self.problem(l.pos, format!("driver start `{q}` is not a quest instance")),
                    }
                }
                (None, None) => {}
                _ => self.problem(l.pos, "`driver` takes `start=<quest>` and optionally `at=<tick>`"),
            }
        }

        for d in sc.section("run") {
            let Some(l) = self.line(d) else { continue };
            if l.kw != "combat" && l.kw != "quest-flag" {
                continue;
            }
            self.shape(&l, 1, &[], Some(&["at", "for"]));
            let Some(who) = self.name(&l, 0) else { continue };
            let Some(npc) = world.npc_id(&who) else {
                self.problem(l.pos, format!("unknown npc `{who}`"));
                continue;
            };
            let Some(at) = self.key_num(&l, "at") else {
                self.problem(l.pos, format!("`{}` needs `at=<tick>`", l.kw));
                continue;
            };
            let dur = self.key_num(&l, "for");
            let ev = |on| if l.kw == "combat" { Scheduled::Combat { npc, on } } else { Scheduled::Quest { npc, on } };
            world.schedule_at(at, ev(true));
            if let Some(d) = dur {
                world.schedule_at(at + d, ev(false));
            }
        }

        for name in &self.template_names {
            let is_situation = world.situation_templates.iter().any(|s| s.name == *name);
            if !self.used.contains(name) && !is_situation {
                self.warnings.push(format!("template `{name}` is never used"));
            }
        }
        world.finalize();
        Some(world)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "\
templates
  object stool
    behavior sit
      (seq (move $this-sa) (act sit-down) (act sit-idle dur=5) :cleanup (act stand-up))
  area room
    behavior idle general
      (act idle dur=3)
  npc guest
    attr sociable=1
    ambient
      (loop (request area name=idle general))
world
  grid 12 8
  wall 6,0 6,3
  area room-1 template=room bounds=0,0,5,7
  object stool-1 template=stool at=2,2
npcs
  npc ann template=guest at=1,1 wealth=rich
run
  seed 9
  ticks 50
";

    #[test]
    fn loads_a_small_world() {
        let out = load(SRC).unwrap();
        let w = &out.world;
        assert_eq!(w.config.seed, 9);
        assert_eq!(w.instances.len(), 3);
        assert_eq!(w.npcs[0].attrs.get("wealth"), Some(&Value::Str("rich".into())));
        assert_eq!(w.npcs[0].areas.len(), 2);
        assert!(w.grid.walls.contains(&Cell::new(6, 2)));
    }

    #[test]
    fn reports_every_problem() {
        let bad = SRC.replace("template=stool", "template=stol").replace("template=guest", "template=gest");
        let LoadError::Invalid(ps) = load(&bad).unwrap_err() else { panic!() };
        assert_eq!(ps.len(), 2, "{ps:?}");
    }
}
