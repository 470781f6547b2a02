//! Line-oriented event trace with a running FNV-1a hash.
//!
//! Every line is `tick=<n> owner=<name> kind=<event>` followed by the event
//! fields sorted by key. The hash covers every emitted line regardless of
//! whether lines are kept in memory, and a prefix hash is recorded at the
//! end of each tick so two runs can be compared tick by tick.

use std::collections::BTreeSet;

use crate::value::Fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceLevel {
    Off,
    #[default]
    Behavior,
    /// Adds node-entered / node-result lines.
    Nodes,
}

impl TraceLevel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(TraceLevel::Off),
            "behavior" => Some(TraceLevel::Behavior),
            "nodes" => Some(TraceLevel::Nodes),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraceLevel::Off => "off",
            TraceLevel::Behavior => "behavior",
            TraceLevel::Nodes => "nodes",
        }
    }
}

/// Which lines are retained in memory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Keep {
    #[default]
    All,
    None,
    Kinds(BTreeSet<String>),
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub level: TraceLevel,
    pub keep: Keep,
    hasher: Fnv1a,
    lines: Vec<String>,
    prefix: Vec<u64>,
    count: u64,
}

impl Trace {
    pub fn new(level: TraceLevel) -> Self {
        Trace { level, keep: Keep::All, hasher: Fnv1a::new(), lines: Vec::new(), prefix: Vec::new(), count: 0 }
    }

    pub fn enabled(&self) -> bool {
        self.level != TraceLevel::Off
    }

    pub fn emit(&mut self, tick: u64, owner: &str, kind: &str, fields: &[(&str, String)]) {
        if self.level == TraceLevel::Off {
            return;
        }
        let line = format_line(tick, owner, kind, fields);
        self.hasher.write(line.as_bytes());
        self.hasher.write(b"\n");
        self.count += 1;
        let keep = match &self.keep {
            Keep::All => true,
            Keep::None => false,
            Keep::Kinds(k) => k.contains(kind),
        };
        if keep {
            self.lines.push(line);
        }
    }

    /// Records the prefix hash for the tick just completed.
    pub fn end_tick(&mut self) {
        self.prefix.push(self.hasher.finish());
    }

    pub fn hash(&self) -> u64 {
        self.hasher.finish()
    }

    pub fn prefix_hashes(&self) -> &[u64] {
        &self.prefix
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn take_lines(&mut self) -> Vec<String> {
        std::mem::take(&mut self.lines)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn footer(&self) -> String {
        format!("# trace-hash={:016x} lines={}", self.hash(), self.count)
    }
}

fn clean(v: &str) -> String {
    if v.is_empty() {
        return "-".into();
    }
    v.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect()
}

pub fn format_line(tick: u64, owner: &str, kind: &str, fields: &[(&str, String)]) -> String {
    let mut sorted: Vec<&(&str, String)> = fields.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut line = format!("tick={tick} owner={} kind={kind}", clean(owner));
    for (k, v) in sorted {
        line.push(' ');
        line.push_str(k);
        line.push('=');
        line.push_str(&clean(v));
    }
    line
}

/// A trace line split into (tick, owner, kind, fields).
pub type ParsedLine = (u64, String, String, Vec<(String, String)>);

pub fn parse_line(line: &str) -> Option<ParsedLine> {
    let mut tick = None;
    let mut owner = None;
    let mut kind = None;
    let mut fields = Vec::new();
    for part in line.split(' ') {
        let (k, v) = part.split_once('=')?;
        match k {
            "tick" if tick.is_none() => tick = v.parse().ok(),
            "owner" if owner.is_none() => owner = Some(v.to_string()),
            "kind" if kind.is_none() => kind = Some(v.to_string()),
            _ => fields.push((k.to_string(), v.to_string())),
        }
    }
    Some((tick?, owner?, kind?, fields))
}

/// Index of the first tick whose prefix hashes differ, if any.
pub fn first_divergence(a: &[u64], b: &[u64]) -> Option<usize> {
    let n = a.len().min(b.len());
    if n == 0 {
        return if a.len() == b.len() { None } else { Some(0) };
    }
    if a[n - 1] == b[n - 1] {
        return if a.len() == b.len() { None } else { Some(n) };
    }
    // Prefix hashes are monotone in "equal so far", so binary search works.
    let (mut lo, mut hi) = (0, n - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if a[mid] == b[mid] {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}
