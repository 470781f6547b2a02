//! Generic syntax: sections of indented declarations, each with a line of
//! words, an optional behavior tree written as an s-expression, and nested
//! member declarations. Meaning is assigned later by the loader.

use std::fmt::{self, Write as _};

use super::lexer::{lex, SrcLine, Tok, Token};
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Ident(String),
    Num(i64),
    Tuple(Vec<i64>),
    Var(String),
    Attr(String),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Word {
    Atom(Atom),
    /// `key=value`
    Pair(String, Atom),
    /// `tag:value`
    Tagged(String, Atom),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    List { items: Vec<Expr>, cleanup: Option<Box<Expr>>, pos: Pos },
    Word { word: Word, pos: Pos },
}

impl Expr {
    pub fn pos(&self) -> &Pos {
        match self {
            Expr::List { pos, .. } | Expr::Word { pos, .. } => pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decl {
    pub words: Vec<Word>,
    pub pos: Pos,
    pub tree: Option<Expr>,
    pub members: Vec<Decl>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub pos: Pos,
    pub decls: Vec<Decl>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub sections: Vec<Section>,
}

pub const SECTIONS: &[&str] = &["templates", "trees", "world", "npcs", "run"];

struct Logical {
    indent: u32,
    pos: Pos,
    tokens: Vec<Token>,
}

/// Joins physical lines while parentheses are open.
fn logical_lines(lines: Vec<SrcLine>) -> Result<Vec<Logical>, ParseError> {
    let mut out = Vec::new();
    let mut cur: Option<Logical> = None;
    let mut open: Vec<(u32, u32)> = Vec::new();
    for l in lines {
        let mut entry = match cur.take() {
            Some(c) => c,
            None => Logical { indent: l.indent, pos: Pos { line: l.line, col: l.indent + 1 }, tokens: Vec::new() },
        };
        for t in &l.tokens {
            match t.tok {
                Tok::LParen => open.push((t.line, t.col)),
                Tok::RParen if open.pop().is_none() => {
                    return Err(ParseError::new(t.line, t.col, "unmatched `)`", &[]));
                }
                _ => {}
            }
        }
        entry.tokens.extend(l.tokens);
        if open.is_empty() {
            out.push(entry);
        } else {
            cur = Some(entry);
        }
    }
    if let Some(&(line, col)) = open.first() {
        return Err(ParseError::new(line, col, "unclosed `(`", &["`)`"]));
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    i: usize,
    end: Pos,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.i)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.i);
        self.i += 1;
        t
    }

    fn here(&self) -> Pos {
        self.peek().map(|t| Pos { line: t.line, col: t.col }).unwrap_or_else(|| self.end.clone())
    }
}

fn atom_of(t: &Token) -> Option<Atom> {
    Some(match &t.tok {
        Tok::Ident(s) => Atom::Ident(s.clone()),
        Tok::Num(n) => Atom::Num(*n),
        Tok::Tuple(v) => Atom::Tuple(v.clone()),
        Tok::Var(s) => Atom::Var(s.clone()),
        Tok::Attr(s) => Atom::Attr(s.clone()),
        Tok::Str(s) => Atom::Str(s.clone()),
        _ => return None,
    })
}

const VALUE: &[&str] = &["name", "number", "tuple", "$var", "@attr", "string"];

fn word(c: &mut Cursor) -> Result<(Word, Pos), ParseError> {
    let t = c.next().expect("caller peeked");
    let pos = Pos { line: t.line, col: t.col };
    let Some(atom) = atom_of(t) else {
        return Err(ParseError::new(t.line, t.col, format!("unexpected {}", t.tok.describe()), VALUE));
    };
    let follow = c.peek().filter(|n| n.glued).map(|n| n.tok.clone());
    match follow {
        Some(Tok::Eq) | Some(Tok::Colon) => {
            let sep = c.next().expect("peeked");
            let Atom::Ident(key) = atom else {
                return Err(ParseError::new(t.line, t.col, format!("{} before `=` or `:` must be a name", t.tok.describe()), &["name"]));
            };
            let v = c.next().filter(|v| v.glued).and_then(atom_of).ok_or_else(|| {
                ParseError::new(
                    sep.line,
                    sep.col + 1,
                    format!("missing value after `{key}{}`", if sep.tok == Tok::Eq { "=" } else { ":" }),
                    VALUE,
                )
            })?;
            let w = if sep.tok == Tok::Eq { Word::Pair(key, v) } else { Word::Tagged(key, v) };
            Ok((w, pos))
        }
        _ => Ok((Word::Atom(atom), pos)),
    }
}

fn expr(c: &mut Cursor) -> Result<Expr, ParseError> {
    let Some(t) = c.peek() else {
        let p = c.here();
        return Err(ParseError::new(p.line, p.col, "unexpected end of line", &["`(`"]));
    };
    match &t.tok {
        Tok::LParen => {
            c.next();
            let pos = Pos { line: t.line, col: t.col };
            let mut items = Vec::new();
            let mut cleanup = None;
            loop {
                let Some(n) = c.peek() else {
                    return Err(ParseError::new(pos.line, pos.col, "unclosed `(`", &["`)`"]));
                };
                match &n.tok {
                    Tok::RParen => {
                        c.next();
                        break;
                    }
                    Tok::Keyword(k) if k == "cleanup" => {
                        c.next();
                        if cleanup.is_some() {
                            return Err(ParseError::new(n.line, n.col, "second `:cleanup` in one node", &[]));
                        }
                        let body = expr(c)?;
                        if !matches!(body, Expr::List { .. }) {
                            let p = body.pos();
                            return Err(ParseError::new(p.line, p.col, "`:cleanup` must be followed by a node", &["`(`"]));
                        }
                        cleanup = Some(Box::new(body));
                        if let Some(after) = c.peek().filter(|a| a.tok != Tok::RParen) {
                            return Err(ParseError::new(after.line, after.col, "`:cleanup` must come last in a node", &["`)`"]));
                        }
                    }
                    Tok::Keyword(k) => {
                        return Err(ParseError::new(n.line, n.col, format!("unknown keyword `:{k}`"), &["`:cleanup`"]));
                    }
                    _ => items.push(expr(c)?),
                }
            }
            if items.is_empty() {
                return Err(ParseError::new(pos.line, pos.col, "empty node", &["node name"]));
            }
            Ok(Expr::List { items, cleanup, pos })
        }
        Tok::RParen => Err(ParseError::new(t.line, t.col, "unmatched `)`", &[])),
        _ => {
            let (word, pos) = word(c)?;
            Ok(Expr::Word { word, pos })
        }
    }
}

/// Parses one complete tree from a cursor positioned at `(`.
fn tree(c: &mut Cursor) -> Result<Expr, ParseError> {
    let e = expr(c)?;
    if let Some(t) = c.peek() {
        return Err(ParseError::new(t.line, t.col, format!("unexpected {} after tree", t.tok.describe()), &["end of line"]));
    }
    Ok(e)
}

fn head(l: &Logical) -> Result<(Vec<Word>, Option<Expr>), ParseError> {
    let mut c = Cursor { toks: &l.tokens, i: 0, end: l.pos.clone() };
    let mut words = Vec::new();
    while let Some(t) = c.peek() {
        if t.tok == Tok::LParen {
            if words.is_empty() {
                break;
            }
            return Ok((words, Some(tree(&mut c)?)));
        }
        if let Tok::Keyword(k) = &t.tok {
            return Err(ParseError::new(t.line, t.col, format!("`:{k}` outside a node"), &[]));
        }
        if t.tok == Tok::RParen {
            return Err(ParseError::new(t.line, t.col, "unmatched `)`", &[]));
        }
        words.push(word(&mut c)?.0);
    }
    Ok((words, None))
}

fn block(lines: &[Logical], i: &mut usize, parent: u32) -> Result<Vec<Decl>, ParseError> {
    let mut out = Vec::new();
    while *i < lines.len() && lines[*i].indent > parent {
        let l = &lines[*i];
        if l.tokens[0].tok == Tok::LParen {
            // Belongs to the enclosing declaration.
            break;
        }
        let (words, inline) = head(l)?;
        let mut d = Decl { words, pos: l.pos.clone(), tree: inline, members: Vec::new() };
        let ind = l.indent;
        *i += 1;
        while *i < lines.len() && lines[*i].indent > ind {
            let m = &lines[*i];
            if m.tokens[0].tok == Tok::LParen {
                if d.tree.is_some() {
                    return Err(ParseError::new(m.pos.line, m.pos.col, "declaration already has a tree", &["declaration"]));
                }
                let mut c = Cursor { toks: &m.tokens, i: 0, end: m.pos.clone() };
                d.tree = Some(tree(&mut c)?);
                *i += 1;
            } else {
                d.members.extend(block(lines, i, ind)?);
            }
        }
        out.push(d);
    }
    Ok(out)
}

pub fn parse(src: &str) -> Result<Scenario, ParseError> {
    let lines = logical_lines(lex(src)?)?;
    let mut sc = Scenario::default();
    let mut i = 0;
    while i < lines.len() {
        let l = &lines[i];
        if l.indent != 0 {
            return Err(ParseError::new(l.pos.line, l.pos.col, "indented line outside a section", SECTIONS));
        }
        let name = match (&l.tokens[0].tok, l.tokens.len()) {
            (Tok::Ident(s), 1) if SECTIONS.contains(&s.as_str()) => s.clone(),
            (Tok::Ident(s), 1) => {
                return Err(ParseError::new(l.pos.line, 1, format!("unknown section `{s}`"), SECTIONS));
            }
            _ => return Err(ParseError::new(l.pos.line, 1, "expected a section name alone on its line", SECTIONS)),
        };
        let pos = l.pos.clone();
        i += 1;
        let decls = block(&lines, &mut i, 0)?;
        if let Some(t) = lines.get(i).filter(|t| t.indent > 0) {
            return Err(ParseError::new(t.pos.line, t.pos.col, "tree without a declaration to attach to", &["declaration"]));
        }
        sc.sections.push(Section { name, pos, decls });
    }
    Ok(sc)
}

impl Scenario {
    /// The same scenario with every position zeroed, for structural comparison.
    pub fn normalized(&self) -> Scenario {
        fn e(x: &Expr) -> Expr {
            match x {
                Expr::List { items, cleanup, .. } => Expr::List {
                    items: items.iter().map(e).collect(),
                    cleanup: cleanup.as_ref().map(|c| Box::new(e(c))),
                    pos: Pos { line: 0, col: 0 },
                },
                Expr::Word { word, .. } => Expr::Word { word: word.clone(), pos: Pos { line: 0, col: 0 } },
            }
        }
        fn d(x: &Decl) -> Decl {
            Decl {
                words: x.words.clone(),
                pos: Pos { line: 0, col: 0 },
                tree: x.tree.as_ref().map(e),
                members: x.members.iter().map(d).collect(),
            }
        }
        Scenario {
            sections: self
                .sections
                .iter()
                .map(|s| Section { name: s.name.clone(), pos: Pos { line: 0, col: 0 }, decls: s.decls.iter().map(d).collect() })
                .collect(),
        }
    }

    pub fn section<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Decl> + 'a {
        self.sections.iter().filter(move |s| s.name == name).flat_map(|s| s.decls.iter())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Ident(s) => f.write_str(s),
            Atom::Num(n) => write!(f, "{n}"),
            Atom::Tuple(v) => {
                let parts: Vec<String> = v.iter().map(|n| n.to_string()).collect();
                f.write_str(&parts.join(","))
            }
            Atom::Var(s) => write!(f, "${s}"),
            Atom::Attr(s) => write!(f, "@{s}"),
            Atom::Str(s) => write!(f, "\"{s}\""),
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Word::Atom(a) => write!(f, "{a}"),
            Word::Pair(k, v) => write!(f, "{k}={v}"),
            Word::Tagged(k, v) => write!(f, "{k}:{v}"),
        }
    }
}

const WIDTH: usize = 88;

impl Expr {
    fn flat(&self) -> String {
        match self {
            Expr::Word { word, .. } => word.to_string(),
            Expr::List { items, cleanup, .. } => {
                let mut s = String::from("(");
                let parts: Vec<String> = items.iter().map(Expr::flat).collect();
                s.push_str(&parts.join(" "));
                if let Some(c) = cleanup {
                    s.push_str(" :cleanup ");
                    s.push_str(&c.flat());
                }
                s.push(')');
                s
            }
        }
    }

    /// Pretty form: flat when it fits, otherwise one child per line.
    pub fn pretty(&self, indent: usize) -> String {
        let flat = self.flat();
        let Expr::List { items, cleanup, .. } = self else { return flat };
        if indent + flat.len() <= WIDTH {
            return flat;
        }
        let pad = " ".repeat(indent + 2);
        // Leading words stay on the head line.
        let split = items.iter().position(|e| matches!(e, Expr::List { .. })).unwrap_or(items.len());
        let head: Vec<String> = items[..split].iter().map(Expr::flat).collect();
        let mut s = format!("({}", head.join(" "));
        for e in &items[split..] {
            let _ = write!(s, "\n{pad}{}", e.pretty(indent + 2));
        }
        if let Some(c) = cleanup {
            let _ = write!(s, "\n{pad}:cleanup {}", c.pretty(indent + 11));
        }
        s.push(')');
        s
    }
}

fn print_decl(out: &mut String, d: &Decl, indent: usize) {
    let pad = " ".repeat(indent);
    let words: Vec<String> = d.words.iter().map(Word::to_string).collect();
    let _ = writeln!(out, "{pad}{}", words.join(" "));
    if let Some(t) = &d.tree {
        let _ = writeln!(out, "{pad}  {}", t.pretty(indent + 2));
    }
    for m in &d.members {
        print_decl(out, m, indent + 2);
    }
}

/// Canonical source text. Parsing the output yields the same scenario up to
/// positions.
pub fn print(sc: &Scenario) -> String {
    let mut out = String::new();
    for (k, s) in sc.sections.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "{}", s.name);
        for d in &s.decls {
            print_decl(&mut out, d, 2);
        }
    }
    out
}
