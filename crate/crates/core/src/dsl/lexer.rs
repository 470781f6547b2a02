//! Tokenizer. Produces tokens with 1-based line and column positions.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    LParen,
    RParen,
    Eq,
    /// A colon glued to the previous token, as in `link:seat`.
    Colon,
    /// `:name` preceded by whitespace, as in `:cleanup`.
    Keyword(String),
    Ident(String),
    Num(i64),
    Tuple(Vec<i64>),
    Var(String),
    Attr(String),
    Str(String),
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Keyword(k) => format!("`:{k}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Tuple(_) => "tuple".into(),
            Tok::Var(v) => format!("`${v}`"),
            Tok::Attr(a) => format!("`@{a}`"),
            Tok::Str(_) => "string".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
    /// No whitespace between this token and the previous one.
    pub glued: bool,
}

/// One physical source line, tokenized.
#[derive(Debug, Clone)]
pub struct SrcLine {
    pub line: u32,
    pub indent: u32,
    pub tokens: Vec<Token>,
}

fn ident_start(c: char) -> bool {
    c.is_ascii_lowercase()
}

fn ident_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_' || c == '.'
}

fn err(line: u32, col: u32, message: impl Into<String>, expected: &[&str]) -> ParseError {
    ParseError { line, col, message: message.into(), expected: expected.iter().map(|s| s.to_string()).collect() }
}

/// Splits the source into non-blank lines of tokens. Tabs are rejected in
/// indentation so that nesting is unambiguous.
pub fn lex(src: &str) -> Result<Vec<SrcLine>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let line = idx as u32 + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() && chars[i] == ' ' {
            i += 1;
        }
        if i < chars.len() && chars[i] == '\t' {
            return Err(err(line, i as u32 + 1, "tab in indentation", &["spaces"]));
        }
        let indent = i as u32;
        let mut tokens = Vec::new();
        let mut glued = false;
        while i < chars.len() {
            let c = chars[i];
            let col = i as u32 + 1;
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                glued = false;
                i += 1;
                continue;
            }
            let start = i;
            let tok = match c {
                '(' => {
                    i += 1;
                    Tok::LParen
                }
                ')' => {
                    i += 1;
                    Tok::RParen
                }
                '=' => {
                    i += 1;
                    Tok::Eq
                }
                ':' => {
                    i += 1;
                    let prev_open = tokens.last().is_some_and(|t: &Token| t.tok == Tok::LParen);
                    if glued && !prev_open {
                        Tok::Colon
                    } else {
                        if i >= chars.len() || !ident_start(chars[i]) {
                            return Err(err(line, col, "expected a keyword after `:`", &["keyword"]));
                        }
                        while i < chars.len() && ident_char(chars[i]) {
                            i += 1;
                        }
                        Tok::Keyword(chars[start + 1..i].iter().collect())
                    }
                }
                '$' | '@' => {
                    i += 1;
                    if i >= chars.len() || !ident_start(chars[i]) {
                        return Err(err(line, col, format!("expected a name after `{c}`"), &["name"]));
                    }
                    while i < chars.len() && ident_char(chars[i]) {
                        i += 1;
                    }
                    let name: String = chars[start + 1..i].iter().collect();
                    if c == '$' {
                        Tok::Var(name)
                    } else {
                        Tok::Attr(name)
                    }
                }
                '"' => {
                    i += 1;
                    let mut s = String::new();
                    loop {
                        match chars.get(i) {
                            None => return Err(err(line, col, "unterminated string", &["`\"`"])),
                            Some('"') => {
                                i += 1;
                                break;
                            }
                            Some(ch) => {
                                s.push(*ch);
                                i += 1;
                            }
                        }
                    }
                    Tok::Str(s)
                }
                c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                    let mut nums = Vec::new();
                    loop {
                        let s = i;
                        if chars[i] == '-' {
                            i += 1;
                        }
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                        let text: String = chars[s..i].iter().collect();
                        let n: i64 = text.parse().map_err(|_| err(line, s as u32 + 1, format!("bad number `{text}`"), &["number"]))?;
                        nums.push(n);
                        let more = chars.get(i) == Some(&',') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '-');
                        if !more {
                            break;
                        }
                        i += 1;
                    }
                    if i < chars.len() && (ident_start(chars[i]) || chars[i] == '_') {
                        return Err(err(line, i as u32 + 1, "letters directly after a number", &["whitespace"]));
                    }
                    if nums.len() == 1 {
                        Tok::Num(nums[0])
                    } else {
                        Tok::Tuple(nums)
                    }
                }
                c if ident_start(c) => {
                    while i < chars.len() && ident_char(chars[i]) {
                        i += 1;
                    }
                    Tok::Ident(chars[start..i].iter().collect())
                }
                other => return Err(err(line, col, format!("unexpected character `{other}`"), &[])),
            };
            tokens.push(Token { tok, line, col, glued });
            glued = true;
        }
        if !tokens.is_empty() {
            out.push(SrcLine { line, indent, tokens });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().flat_map(|l| l.tokens.into_iter().map(|t| t.tok)).collect()
    }

    #[test]
    fn words_and_pairs() {
        assert_eq!(
            toks("(request link:seat name=sit) # hi"),
            vec![
                Tok::LParen,
                Tok::Ident("request".into()),
                Tok::Ident("link".into()),
                Tok::Colon,
                Tok::Ident("seat".into()),
                Tok::Ident("name".into()),
                Tok::Eq,
                Tok::Ident("sit".into()),
                Tok::RParen
            ]
        );
    }

    #[test]
    fn tuples_vars_keywords() {
        assert_eq!(
            toks("at=3,-4 $x @key :cleanup -2"),
            vec![
                Tok::Ident("at".into()),
                Tok::Eq,
                Tok::Tuple(vec![3, -4]),
                Tok::Var("x".into()),
                Tok::Attr("key".into()),
                Tok::Keyword("cleanup".into()),
                Tok::Num(-2)
            ]
        );
    }

    #[test]
    fn errors_have_positions() {
        let e = lex("world\n  grid \"oops").unwrap_err();
        assert_eq!((e.line, e.col), (2, 8));
        assert!(lex("\tgrid").is_err());
    }
}
