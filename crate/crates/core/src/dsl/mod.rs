//! The scenario language: a line-oriented file of sections (`templates`,
//! `trees`, `world`, `npcs`, `run`) with behavior trees written as
//! s-expressions. The grammar is in `docs/grammar.ebnf`.

mod compile;
mod lexer;
mod loader;
pub mod syntax;

use std::fmt;
use std::path::Path;

pub use compile::NODE_KINDS;
pub use loader::{load, load_with, Loaded};
pub use syntax::{parse, print, Scenario};

/// A syntax error. Parsing stops at the first one.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
    pub expected: Vec<String>,
}

impl ParseError {
    pub fn new(line: u32, col: u32, message: impl Into<String>, expected: &[&str]) -> Self {
        ParseError { line, col, message: message.into(), expected: expected.iter().map(|s| s.to_string()).collect() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

/// One semantic problem found while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("syntax error at {0}")]
    Parse(#[from] ParseError),
    #[error("{}", render_problems(.0))]
    Invalid(Vec<Problem>),
}

fn render_problems(ps: &[Problem]) -> String {
    let lines: Vec<String> = ps.iter().map(Problem::to_string).collect();
    format!("{} problem(s):\n{}", ps.len(), lines.join("\n"))
}

impl LoadError {
    /// Line numbers of every reported problem.
    pub fn lines(&self) -> Vec<u32> {
        match self {
            LoadError::Io { .. } => Vec::new(),
            LoadError::Parse(e) => vec![e.line],
            LoadError::Invalid(ps) => ps.iter().map(|p| p.line).collect(),
        }
    }
}

pub fn load_file(path: &Path, tweak: &dyn Fn(&mut crate::world::RunConfig)) -> Result<Loaded, LoadError> {
    let src = std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    load_with(&src, tweak)
}
