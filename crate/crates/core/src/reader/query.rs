//! Boolean query language over dotted metadata keys.
//!
//! ```text
//! expr    := or
//! or      := and ('|' and)*
//! and     := not ('&' not)*
//! not     := '~' not | primary
//! primary := '(' expr ')' | comp
//! comp    := KEY OP literal | KEY 'in' '[' literal (',' literal)* ']'
//! ```

use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::config::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("syntax error at column {}: {message}", pos + 1)]
    Syntax { pos: usize, message: String },
    #[error("unknown operator `{op}` at column {}", pos + 1)]
    UnknownOperator { pos: usize, op: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("type mismatch on `{key}`: cannot compare {found} with {literal}")]
    TypeMismatch {
        key: String,
        found: String,
        literal: String,
    },
}

impl QueryError {
    /// Character offset of a parse error, if it has one.
    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Syntax { pos, .. } | QueryError::UnknownOperator { pos, .. } => Some(*pos),
            _ => None,
        }
    }

    /// The message followed by the query and a caret under the offending
    /// character.
    pub fn render(&self, text: &str) -> String {
        match self.position() {
            Some(pos) => format!("{self}\n  {text}\n  {}^", " ".repeat(pos)),
            None => self.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }

    fn from_symbol(s: &str) -> Option<CmpOp> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            ">" => CmpOp::Gt,
            "<=" => CmpOp::Le,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Le => ord != Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    /// Matches every run; what the empty string parses to.
    All,
    Compare {
        key: String,
        op: CmpOp,
        value: Scalar,
    },
    In {
        key: String,
        values: Vec<Scalar>,
    },
    Not(Box<Query>),
    And(Box<Query>, Box<Query>),
    Or(Box<Query>, Box<Query>),
}

impl Query {
    pub fn compare(key: &str, op: CmpOp, value: Scalar) -> Query {
        Query::Compare {
            key: key.to_string(),
            op,
            value,
        }
    }

    pub fn and(a: Query, b: Query) -> Query {
        Query::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Query, b: Query) -> Query {
        Query::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: Query) -> Query {
        Query::Not(Box::new(a))
    }

    /// Keys referenced anywhere in the query, in order of appearance.
    pub fn keys(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_keys(&mut out);
        out
    }

    fn collect_keys<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Query::All => {}
            Query::Compare { key, .. } | Query::In { key, .. } => out.push(key),
            Query::Not(q) => q.collect_keys(out),
            Query::And(a, b) | Query::Or(a, b) => {
                a.collect_keys(out);
                b.collect_keys(out);
            }
        }
    }

    fn level(&self) -> u8 {
        match self {
            Query::Or(..) => 1,
            Query::And(..) => 2,
            Query::Not(_) => 3,
            _ => 4,
        }
    }

    /// Evaluates against one run's flat metadata. In lenient mode a missing
    /// key or a type mismatch makes the comparison false; in strict mode
    /// both are errors.
    pub fn eval(&self, meta: &IndexMap<String, Scalar>, strict: bool) -> Result<bool, QueryError> {
        match self {
            Query::All => Ok(true),
            Query::Compare { key, op, value } => compare(meta, key, *op, value, strict),
            Query::In { key, values } => {
                for v in values {
                    if compare(meta, key, CmpOp::Eq, v, strict)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Query::Not(q) => Ok(!q.eval(meta, strict)?),
            Query::And(a, b) => Ok(a.eval(meta, strict)? && b.eval(meta, strict)?),
            Query::Or(a, b) => Ok(a.eval(meta, strict)? || b.eval(meta, strict)?),
        }
    }
}

/// Canonical form of a status token; `COMPLETED` is an accepted alias.
pub fn normalize_status(s: &str) -> &str {
    if s == "COMPLETED" {
        "COMPLETE"
    } else {
        s
    }
}

fn type_name(s: &Scalar) -> &'static str {
    match s {
        Scalar::Null => "null",
        Scalar::Bool(_) => "boolean",
        Scalar::Int(_) | Scalar::Float(_) => "number",
        Scalar::Text(_) => "text",
    }
}

fn compare(
    meta: &IndexMap<String, Scalar>,
    key: &str,
    op: CmpOp,
    literal: &Scalar,
    strict: bool,
) -> Result<bool, QueryError> {
    let Some(found) = meta.get(key) else {
        return Ok(false);
    };
    let ord = match (found, literal) {
        (Scalar::Int(a), Scalar::Int(b)) => Some(a.cmp(b)),
        (a, b) if a.is_number() && b.is_number() => {
            a.as_f64().unwrap().partial_cmp(&b.as_f64().unwrap())
        }
        (Scalar::Text(a), Scalar::Text(b)) => {
            if key == "info.status" {
                Some(normalize_status(a).cmp(normalize_status(b)))
            } else {
                Some(a.as_str().cmp(b.as_str()))
            }
        }
        (Scalar::Bool(a), Scalar::Bool(b)) => Some(a.cmp(b)),
        _ => {
            if strict {
                return Err(QueryError::TypeMismatch {
                    key: key.to_string(),
                    found: type_name(found).to_string(),
                    literal: type_name(literal).to_string(),
                });
            }
            None
        }
    };
    Ok(ord.is_some_and(|o| op.holds(o)))
}

fn literal_text(v: &Scalar) -> String {
    match v {
        Scalar::Text(s) => {
            let mut out = String::from("'");
            for c in s.chars() {
                if c == '\'' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('\'');
            out
        }
        other => other.to_token(),
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |f: &mut fmt::Formatter<'_>, q: &Query, parens: bool| {
            if parens {
                write!(f, "({q})")
            } else {
                write!(f, "{q}")
            }
        };
        match self {
            Query::All => Ok(()),
            Query::Compare { key, op, value } => {
                write!(f, "{key} {} {}", op.symbol(), literal_text(value))
            }
            Query::In { key, values } => {
                let items: Vec<String> = values.iter().map(literal_text).collect();
                write!(f, "{key} in [{}]", items.join(", "))
            }
            Query::Not(q) => {
                f.write_str("~")?;
                sub(f, q, q.level() < 3)
            }
            Query::And(a, b) | Query::Or(a, b) => {
                let (lvl, sym) = if matches!(self, Query::And(..)) {
                    (2, " & ")
                } else {
                    (1, " | ")
                };
                sub(f, a, a.level() < lvl)?;
                f.write_str(sym)?;
                sub(f, b, b.level() <= lvl)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Op(CmpOp),
    And,
    Or,
    Not,
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    End,
}

const SPECIAL: &str = "=!<>()[],&|~'\"";

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBrack),
            ']' => Some(Tok::RBrack),
            ',' => Some(Tok::Comma),
            '&' => Some(Tok::And),
            '|' => Some(Tok::Or),
            '~' => Some(Tok::Not),
            _ => None,
        };
        if let Some(t) = single {
            out.push((start, t));
            i += 1;
            continue;
        }
        if "=!<>".contains(c) {
            while i < chars.len() && "=!<>".contains(chars[i]) {
                i += 1;
            }
            let sym: String = chars[start..i].iter().collect();
            match CmpOp::from_symbol(&sym) {
                Some(op) => out.push((start, Tok::Op(op))),
                None => return Err(QueryError::UnknownOperator { pos: start, op: sym }),
            }
            continue;
        }
        if c == '\'' || c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(QueryError::Syntax {
                            pos: start,
                            message: "unterminated string literal".into(),
                        })
                    }
                    Some('\\') if i + 1 < chars.len() => {
                        s.push(chars[i + 1]);
                        i += 2;
                    }
                    Some(&q) if q == c => {
                        i += 1;
                        break;
                    }
                    Some(&other) => {
                        s.push(other);
                        i += 1;
                    }
                }
            }
            out.push((start, Tok::Str(s)));
            continue;
        }
        while i < chars.len() && !chars[i].is_whitespace() && !SPECIAL.contains(chars[i]) {
            i += 1;
        }
        out.push((start, Tok::Word(chars[start..i].iter().collect())));
    }
    out.push((chars.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn or(&mut self) -> Result<Query, QueryError> {
        let mut q = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            q = Query::or(q, self.and()?);
        }
        Ok(q)
    }

    fn and(&mut self) -> Result<Query, QueryError> {
        let mut q = self.not()?;
        while *self.peek() == Tok::And {
            self.bump();
            q = Query::and(q, self.not()?);
        }
        Ok(q)
    }

    fn not(&mut self) -> Result<Query, QueryError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Query::not(self.not()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Query, QueryError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let q = self.or()?;
                if *self.peek() != Tok::RParen {
                    return self.err("expected `)`");
                }
                self.bump();
                Ok(q)
            }
            Tok::Word(key) => {
                self.bump();
                self.comparison(key)
            }
            Tok::End => self.err("unexpected end of query"),
            _ => self.err("expected a key or `(`"),
        }
    }

    fn comparison(&mut self, key: String) -> Result<Query, QueryError> {
        match self.peek().clone() {
            Tok::Op(op) => {
                self.bump();
                let value = self.literal()?;
                Ok(Query::Compare { key, op, value })
            }
            Tok::Word(w) if w == "in" => {
                self.bump();
                if *self.peek() != Tok::LBrack {
                    return self.err("expected `[` after `in`");
                }
                self.bump();
                let mut values = vec![self.literal()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    values.push(self.literal()?);
                }
                if *self.peek() != Tok::RBrack {
                    return self.err("expected `,` or `]`");
                }
                self.bump();
                Ok(Query::In { key, values })
            }
            _ => self.err(format!("expected a comparison operator or `in` after `{key}`")),
        }
    }

    fn literal(&mut self) -> Result<Scalar, QueryError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Scalar::Text(s))
            }
            Tok::Word(w) => match Scalar::parse_token(&w) {
                v @ (Scalar::Int(_) | Scalar::Float(_) | Scalar::Bool(_)) => {
                    self.bump();
                    Ok(v)
                }
                _ => self.err(format!(
                    "expected a literal, found `{w}` (quote text values)"
                )),
            },
            _ => self.err("expected a literal"),
        }
    }
}

pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    if *p.peek() == Tok::End {
        return Ok(Query::All);
    }
    let q = p.or()?;
    if *p.peek() != Tok::End {
        return p.err("unexpected trailing input");
    }
    Ok(q)
}
