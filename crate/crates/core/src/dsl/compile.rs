//! Turns s-expressions into validated tree definitions.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use super::syntax::{Atom, Expr, Pos, Word};
use super::Problem;
use crate::bt::{Arg, BehaviorRequest, DecoratorKind, NodeDef, NodeKind, ParallelPolicy, RequestTarget, SendTarget};
use crate::messaging::MessageKind;
use crate::registry::{self, ActionClass};
use crate::value::{Cell, EntityRef, Value};

pub const NODE_KINDS: &[&str] = &[
    "seq",
    "sel",
    "par",
    "cond",
    "act",
    "invert",
    "succeed",
    "fail",
    "repeat",
    "retry",
    "loop",
    "until-fail",
    "timeout",
    "request",
    "send",
    "wait",
    "lock",
    "move",
    "subscribe",
    "enable",
    "disable",
    "set-max",
    "use",
];

/// Where a tree runs; decides which actions are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    /// Executed by an NPC: ambient, combat, quest, role and behavior trees.
    Npc,
    /// Executed by a smart-entity brain or event handler.
    Brain,
}

pub struct Compiler<'a> {
    /// Reusable trees from the `trees` section, expanded at each use.
    pub named: &'a BTreeMap<String, Expr>,
    pub site: Site,
    pub expanding: RefCell<Vec<String>>,
}

fn problem(pos: &Pos, msg: impl Into<String>) -> Problem {
    Problem { line: pos.line, col: pos.col, message: msg.into() }
}

pub fn arg_of(a: &Atom) -> Arg {
    match a {
        Atom::Ident(s) if s == "true" => Arg::Lit(Value::Bool(true)),
        Atom::Ident(s) if s == "false" => Arg::Lit(Value::Bool(false)),
        Atom::Ident(s) | Atom::Str(s) => Arg::Lit(Value::Str(s.clone())),
        Atom::Num(n) => Arg::Lit(Value::Num(*n)),
        Atom::Tuple(v) if v.len() == 2 => Arg::Lit(Value::Ref(EntityRef::Cell(Cell::new(v[0] as i32, v[1] as i32)))),
        Atom::Tuple(v) => Arg::Lit(Value::List(v.iter().map(|n| Value::Num(*n)).collect())),
        Atom::Var(s) => Arg::Var(s.clone()),
        Atom::Attr(s) => Arg::Attr(s.clone()),
    }
}

fn name_of(e: &Expr) -> Option<&str> {
    match e {
        Expr::Word { word: Word::Atom(Atom::Ident(s)), .. } => Some(s),
        _ => None,
    }
}

impl<'a> Compiler<'a> {
    pub fn new(named: &'a BTreeMap<String, Expr>, site: Site) -> Self {
        Compiler { named, site, expanding: RefCell::new(Vec::new()) }
    }

    pub fn tree(&self, e: &Expr) -> Result<Arc<NodeDef>, Problem> {
        let def = self.node(e)?;
        def.validate().map_err(|err| problem(e.pos(), strip_line(&err.to_string())))?;
        Ok(Arc::new(def))
    }

    fn node(&self, e: &Expr) -> Result<NodeDef, Problem> {
        let Expr::List { items, cleanup, pos } = e else {
            return Err(problem(e.pos(), "expected a node in parentheses"));
        };
        let Some(head) = name_of(&items[0]) else {
            return Err(problem(items[0].pos(), format!("expected a node name, one of: {}", NODE_KINDS.join(", "))));
        };
        let rest = &items[1..];
        let mut def = self.shape(head, rest, pos)?;
        def.line = pos.line;
        if let Some(c) = cleanup {
            if head == "use" {
                return Err(problem(pos, "`use` cannot take a cleanup"));
            }
            def.cleanup = Some(Arc::new(self.node(c)?));
        }
        Ok(def)
    }

    fn children(&self, rest: &[Expr]) -> Result<Vec<NodeDef>, Problem> {
        rest.iter().map(|c| self.node(c)).collect()
    }

    /// Splits leading words from trailing child nodes.
    fn split(rest: &[Expr]) -> (Vec<(&Word, &Pos)>, &[Expr]) {
        let k = rest.iter().position(|e| matches!(e, Expr::List { .. })).unwrap_or(rest.len());
        let words = rest[..k]
            .iter()
            .map(|e| match e {
                Expr::Word { word, pos } => (word, pos),
                Expr::List { .. } => unreachable!(),
            })
            .collect();
        (words, &rest[k..])
    }

    fn shape(&self, head: &str, rest: &[Expr], pos: &Pos) -> Result<NodeDef, Problem> {
        let (words, kids) = Self::split(rest);
        if let Some(stray) = kids.iter().find(|e| matches!(e, Expr::Word { .. })) {
            return Err(problem(stray.pos(), "words must come before child nodes"));
        }
        let no_kids = |what: &str| -> Result<(), Problem> {
            match kids.first() {
                Some(k) => Err(problem(k.pos(), format!("`{what}` is a leaf and takes no child nodes"))),
                None => Ok(()),
            }
        };
        let only_words = |n: usize, what: &str| -> Result<(), Problem> {
            if words.len() != n {
                return Err(problem(pos, format!("`{what}` takes {n} word(s), found {}", words.len())));
            }
            Ok(())
        };
        let ident = |i: usize, what: &str| -> Result<String, Problem> {
            match words.get(i) {
                Some((Word::Atom(Atom::Ident(s)), _)) => Ok(s.clone()),
                Some((w, p)) => Err(problem(p, format!("`{what}` expects a name, found `{w}`"))),
                None => Err(problem(pos, format!("`{what}` is missing a name"))),
            }
        };
        let one_kid = || -> Result<(), Problem> {
            match kids.len() {
                1 => Ok(()),
                0 => Err(problem(pos, format!("`{head}` needs one child node"))),
                _ => Err(problem(kids[1].pos(), format!("`{head}` takes exactly one child node"))),
            }
        };
        let some_kids = || -> Result<(), Problem> {
            match kids.is_empty() {
                true => Err(problem(pos, format!("`{head}` needs at least one child node"))),
                false => Ok(()),
            }
        };
        let kind = match head {
            "seq" | "sel" => {
                only_words(0, head)?;
                some_kids()?;
                let k = if head == "seq" { NodeKind::Sequence } else { NodeKind::Selector };
                return Ok(NodeDef::new(k, self.children(kids)?));
            }
            "par" => {
                let policy = match words.first() {
                    None => ParallelPolicy::AllSuccess,
                    Some((Word::Atom(Atom::Ident(s)), _)) if s == "all" => ParallelPolicy::AllSuccess,
                    Some((Word::Atom(Atom::Ident(s)), _)) if s == "any" => ParallelPolicy::AnySuccess,
                    Some((w, p)) => return Err(problem(p, format!("parallel policy must be `all` or `any`, found `{w}`"))),
                };
                if words.len() > 1 {
                    return Err(problem(words[1].1, "`par` takes at most one policy word"));
                }
                some_kids()?;
                return Ok(NodeDef::new(NodeKind::Parallel(policy), self.children(kids)?));
            }
            "invert" | "succeed" | "fail" | "loop" | "until-fail" | "repeat" | "retry" | "timeout" => {
                let n = || -> Result<Arg, Problem> {
                    match words.as_slice() {
                        [(Word::Pair(k, v), _)] if k == "n" => Ok(arg_of(v)),
                        _ => Err(problem(pos, format!("`{head}` needs exactly `n=<count>`"))),
                    }
                };
                let d = match head {
                    "invert" => DecoratorKind::Invert,
                    "succeed" => DecoratorKind::ForceSuccess,
                    "fail" => DecoratorKind::ForceFailure,
                    "loop" => DecoratorKind::Loop,
                    "until-fail" => DecoratorKind::UntilFail,
                    "repeat" => DecoratorKind::Repeat(n()?),
                    "retry" => DecoratorKind::Retry(n()?),
                    _ => DecoratorKind::Timeout(n()?),
                };
                if !matches!(d, DecoratorKind::Repeat(_) | DecoratorKind::Retry(_) | DecoratorKind::Timeout(_)) {
                    only_words(0, head)?;
                }
                one_kid()?;
                return Ok(NodeDef::new(NodeKind::Decorator(d), self.children(kids)?));
            }
            "subscribe" => {
                only_words(0, head)?;
                one_kid()?;
                return Ok(NodeDef::new(NodeKind::SubscribeSituations, self.children(kids)?));
            }
            "use" => {
                only_words(1, head)?;
                no_kids(head)?;
                let name = ident(0, head)?;
                let t = self.named.get(&name).ok_or_else(|| problem(pos, format!("unknown tree `{name}`")))?;
                if self.expanding.borrow().contains(&name) {
                    return Err(problem(pos, format!("tree `{name}` uses itself")));
                }
                self.expanding.borrow_mut().push(name);
                let out = self.node(t);
                self.expanding.borrow_mut().pop();
                return out;
            }
            "cond" => {
                no_kids(head)?;
                let p = ident(0, head)?;
                let spec = registry::predicate(&p).ok_or_else(|| {
                    let names: Vec<&str> = registry::PREDICATES.iter().map(|p| p.name).collect();
                    problem(pos, format!("unknown predicate `{p}`, expected one of: {}", names.join(", ")))
                })?;
                let args: Vec<Arg> = words[1..]
                    .iter()
                    .map(|(w, p)| match w {
                        Word::Atom(a) => Ok(arg_of(a)),
                        other => Err(problem(p, format!("predicate arguments are plain values, found `{other}`"))),
                    })
                    .collect::<Result<_, _>>()?;
                if let Some(n) = spec.arity {
                    if args.len() != n {
                        return Err(problem(pos, format!("predicate `{p}` takes {n} argument(s), found {}", args.len())));
                    }
                }
                if p == "holders-ge" && self.site == Site::Npc {
                    return Err(problem(pos, "predicate `holders-ge` can only run in a brain"));
                }
                NodeKind::Condition { predicate: p, args }
            }
            "act" => {
                no_kids(head)?;
                let a = ident(0, head)?;
                let spec = registry::action(&a).ok_or_else(|| problem(pos, format!("unknown action `{a}`")))?;
                match (self.site, spec.class) {
                    (Site::Npc, ActionClass::Op) if spec.brain_only => {
                        return Err(problem(pos, format!("action `{a}` is only available to smart-entity brains")));
                    }
                    (Site::Brain, ActionClass::Timed { .. }) => {
                        return Err(problem(pos, format!("timed action `{a}` cannot run in a brain or handler")));
                    }
                    _ => {}
                }
                let params = words[1..]
                    .iter()
                    .map(|(w, p)| match w {
                        Word::Pair(k, v) => Ok((k.clone(), arg_of(v))),
                        other => Err(problem(p, format!("expected `key=value`, found `{other}`"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                NodeKind::Action { action: a, params }
            }
            "request" => {
                no_kids(head)?;
                let Some((target_word, tp)) = words.first() else {
                    return Err(problem(pos, "`request` needs a target"));
                };
                let target = match target_word {
                    Word::Atom(Atom::Ident(s)) if s == "area" => RequestTarget::Area,
                    Word::Atom(Atom::Ident(s)) if s == "private" => RequestTarget::Private,
                    Word::Atom(Atom::Ident(s)) if s == "daycycle" => RequestTarget::Daycycle,
                    Word::Atom(a @ (Atom::Var(_) | Atom::Attr(_))) => RequestTarget::Explicit(arg_of(a)),
                    Word::Tagged(t, a) if t == "to" => RequestTarget::Explicit(arg_of(a)),
                    Word::Tagged(t, a) if t == "wrap" => RequestTarget::Wrap(arg_of(a)),
                    Word::Tagged(t, Atom::Ident(l)) if t == "link" => RequestTarget::Link(l.clone()),
                    other => {
                        return Err(problem(
                            tp,
                            format!("bad request target `{other}`, expected area, private, daycycle, link:L, to:X, wrap:X or $var"),
                        ))
                    }
                };
                let mut name = None;
                let mut general = false;
                for (w, p) in &words[1..] {
                    match w {
                        Word::Pair(k, v) if k == "name" => name = Some(arg_of(v)),
                        Word::Atom(Atom::Ident(s)) if s == "general" => general = true,
                        other => return Err(problem(p, format!("unexpected `{other}` in request"))),
                    }
                }
                NodeKind::RequestBehavior(BehaviorRequest { target, name, general })
            }
            "send" => {
                no_kids(head)?;
                let Some((target_word, tp)) = words.first() else {
                    return Err(problem(pos, "`send` needs a target"));
                };
                let to = match target_word {
                    Word::Atom(Atom::Ident(s)) if s == "source" => SendTarget::Source,
                    Word::Atom(Atom::Ident(s)) if s == "peers" => SendTarget::Peers,
                    Word::Atom(a @ (Atom::Var(_) | Atom::Attr(_))) => SendTarget::To(arg_of(a)),
                    Word::Tagged(t, a) if t == "to" => SendTarget::To(arg_of(a)),
                    Word::Tagged(t, a) if t == "each" => SendTarget::Each(arg_of(a)),
                    Word::Tagged(t, Atom::Ident(b)) if t == "holders" => SendTarget::Holders(b.clone()),
                    other => {
                        return Err(problem(
                            tp,
                            format!("bad send target `{other}`, expected source, peers, to:X, each:X, holders:B or $var"),
                        ))
                    }
                };
                if matches!(to, SendTarget::Holders(_)) && self.site == Site::Npc {
                    return Err(problem(tp, "`holders:` targets are only available to smart-entity brains"));
                }
                let schema = ident(1, head)?;
                let mut kind = MessageKind::ProvideData;
                let mut payload = Vec::new();
                for (w, p) in &words[2..] {
                    match w {
                        Word::Pair(k, Atom::Ident(v)) if k == "kind" => {
                            kind = MessageKind::parse(v).ok_or_else(|| {
                                problem(p, format!("unknown message kind `{v}`, expected request-data, provide-data or request-change"))
                            })?;
                        }
                        Word::Pair(k, v) => payload.push((k.clone(), arg_of(v))),
                        other => return Err(problem(p, format!("expected `key=value`, found `{other}`"))),
                    }
                }
                NodeKind::SendMessage { to, schema, kind, payload }
            }
            "wait" => {
                no_kids(head)?;
                let schema = ident(0, head)?;
                let mut timeout = None;
                for (w, p) in &words[1..] {
                    match w {
                        Word::Pair(k, v) if k == "timeout" => timeout = Some(arg_of(v)),
                        other => return Err(problem(p, format!("unexpected `{other}` in wait"))),
                    }
                }
                NodeKind::WaitMessage { schema, timeout }
            }
            "lock" => {
                no_kids(head)?;
                only_words(1, head)?;
                NodeKind::AcquireLock { lock: ident(0, head)? }
            }
            "move" => {
                no_kids(head)?;
                only_words(1, head)?;
                match words[0].0 {
                    Word::Atom(a) => NodeKind::MoveTo { target: arg_of(a) },
                    other => return Err(problem(words[0].1, format!("bad move target `{other}`"))),
                }
            }
            "enable" | "disable" => {
                no_kids(head)?;
                only_words(1, head)?;
                NodeKind::SetEnabled { behavior: ident(0, head)?, enabled: head == "enable" }
            }
            "set-max" => {
                no_kids(head)?;
                let behavior = ident(0, head)?;
                let count = match words.get(1) {
                    Some((Word::Pair(k, v), _)) if k == "n" && words.len() == 2 => arg_of(v),
                    _ => return Err(problem(pos, "`set-max` needs a behavior and `n=<count>`")),
                };
                NodeKind::SetMaxHolders { behavior, count }
            }
            other => {
                return Err(problem(pos, format!("unknown node `{other}`, expected one of: {}", NODE_KINDS.join(", "))));
            }
        };
        Ok(NodeDef::leaf(kind))
    }
}

/// Tree errors carry their own `line N:` prefix; problems add positions.
fn strip_line(s: &str) -> String {
    match s.split_once(": ") {
        Some((pre, rest)) if pre.starts_with("line ") => rest.to_string(),
        _ => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::syntax::parse;

    fn compile(src: &str, site: Site) -> Result<Arc<NodeDef>, Problem> {
        let sc = parse(&format!("trees\n  t\n    {src}\n")).unwrap();
        let d = sc.section("trees").next().unwrap();
        let named = BTreeMap::new();
        Compiler::new(&named, site).tree(d.tree.as_ref().unwrap())
    }

    #[test]
    fn builds_nodes() {
        let t =
            compile("(seq (cond attr-ge rank 2) (act idle dur=3) (request link:seat name=sit general) :cleanup (act stand-up))", Site::Npc)
                .unwrap();
        assert_eq!(t.kind, NodeKind::Sequence);
        assert_eq!(t.children.len(), 3);
        assert!(t.cleanup.is_some());
        let NodeKind::RequestBehavior(r) = &t.children[2].kind else { panic!() };
        assert_eq!(r.target, RequestTarget::Link("seat".into()));
        assert!(r.general);
    }

    #[test]
    fn rejects() {
        for (src, site, want) in [
            ("(sqe (act idle))", Site::Npc, "unknown node"),
            ("(act dance)", Site::Npc, "unknown action"),
            ("(cond attr-ge rank)", Site::Npc, "takes 2 argument"),
            ("(seq)", Site::Npc, "at least one child"),
            ("(invert (act idle) (act idle))", Site::Npc, "exactly one child"),
            ("(act idle :cleanup (request area name=x))", Site::Npc, "cleanup"),
            ("(act door-admit)", Site::Npc, "only available"),
            ("(act idle)", Site::Brain, "cannot run in a brain"),
            ("(repeat (act idle))", Site::Npc, "n=<count>"),
        ] {
            let e = compile(src, site).unwrap_err();
            assert!(e.message.contains(want), "{src}: {}", e.message);
            assert_eq!(e.line, 3);
        }
    }
}
