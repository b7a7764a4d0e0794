//! Parser and canonical serializer for the statutory rule language.
//!
//! The document format is line-comment (`#`) structured text:
//!
//! ```text
//! extralegal { gender, ethnicity }
//! exclusive mental_state { Intentional, Negligent, Knowing, Unknown }
//!
//! article 234 {
//!   guard: actor_type == person
//!      and exists act (action == assault)
//!      and exists result (result_type == injury)
//!   defaults {
//!     especially_serious_circumstance = false
//!   }
//!   clause 1 "up to three years" {
//!     guard: mental_state == Intentional
//!        and exists act (exists result (causes and severity == Minor))
//!        and not especially_serious_circumstance
//!     penalty [0, 36]
//!     aggravate "cruel_means" when cruel_means delta 24
//!   }
//! }
//! ```
//!
//! Penalty intervals use bracket notation: `[l, u]`, `(l, u]`, `[l, u)`,
//! `(l, u)`; the upper endpoint may be `Life` or `Death`. A bare predicate
//! in a guard is shorthand for `predicate == true`. `==` against a bare
//! identifier or quoted string tests an enum token; against an integer it
//! is the `==` threshold comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{
    AdjustDirection, AdjustmentDelta, AtomTest, Clause, ClauseId, CmpOp, ExclusiveGroup,
    GuardExpr, PenaltySpec, StatuteArticle, StatuteKB, UpperBound,
};
use crate::case::FactValue;

/// Parse failure with source position.
#[derive(Debug, Error)]
pub enum KbParseError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("duplicate clause id {0}")]
    DuplicateClauseId(ClauseId),
    #[error("duplicate article {0}")]
    DuplicateArticle(u32),
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Punct(char),
    // two-character operators
    EqEq,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn error(&self, message: &str) -> KbParseError {
        KbParseError::Syntax {
            line: self.line,
            col: self.col,
            message: message.to_string(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<Spanned>, KbParseError> {
        let mut out = Vec::new();
        while let Some(b) = self.peek() {
            let (line, col) = (self.line, self.col);
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.bump();
                }
                b'#' => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            Some(b'"') => break,
                            Some(b'\n') | None => {
                                return Err(KbParseError::Syntax {
                                    line,
                                    col,
                                    message: "unterminated string".to_string(),
                                })
                            }
                            Some(c) => s.push(c as char),
                        }
                    }
                    out.push(Spanned { tok: Tok::Str(s), line, col });
                }
                b'=' => {
                    self.bump();
                    match self.peek() {
                        Some(b'=') => {
                            self.bump();
                            out.push(Spanned { tok: Tok::EqEq, line, col });
                        }
                        _ => out.push(Spanned { tok: Tok::Punct('='), line, col }),
                    }
                }
                b'<' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        out.push(Spanned { tok: Tok::Le, line, col });
                    } else {
                        out.push(Spanned { tok: Tok::Punct('<'), line, col });
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        out.push(Spanned { tok: Tok::Ge, line, col });
                    } else {
                        out.push(Spanned { tok: Tok::Punct('>'), line, col });
                    }
                }
                b'{' | b'}' | b'(' | b')' | b'[' | b']' | b',' | b':' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Punct(b as char), line, col });
                }
                b'-' | b'0'..=b'9' => {
                    let negative = b == b'-';
                    if negative {
                        self.bump();
                        if !matches!(self.peek(), Some(b'0'..=b'9')) {
                            return Err(self.error("expected digits after '-'"));
                        }
                    }
                    let mut n: i64 = 0;
                    while let Some(c @ b'0'..=b'9') = self.peek() {
                        n = n
                            .checked_mul(10)
                            .and_then(|n| n.checked_add((c - b'0') as i64))
                            .ok_or_else(|| self.error("integer literal overflows"))?;
                        self.bump();
                    }
                    out.push(Spanned {
                        tok: Tok::Int(if negative { -n } else { n }),
                        line,
                        col,
                    });
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push(Spanned { tok: Tok::Ident(s), line, col });
                }
                other => {
                    return Err(KbParseError::Syntax {
                        line,
                        col,
                        message: format!("unexpected character {:?}", other as char),
                    })
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn position(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn err(&self, message: impl Into<String>) -> KbParseError {
        let (line, col) = self.position();
        KbParseError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, c: char) -> Result<(), KbParseError> {
        match self.next() {
            Some(Tok::Punct(p)) if p == c => Ok(()),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err(format!("expected `{c}`")))
            }
        }
    }

    fn expect_ident(&mut self, word: &str) -> Result<(), KbParseError> {
        match self.next() {
            Some(Tok::Ident(s)) if s == word => Ok(()),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err(format!("expected `{word}`")))
            }
        }
    }

    fn ident(&mut self) -> Result<String, KbParseError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected identifier"))
            }
        }
    }

    fn int(&mut self) -> Result<i64, KbParseError> {
        match self.next() {
            Some(Tok::Int(n)) => Ok(n),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected integer"))
            }
        }
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    // expr := or ; or := and { "or" and } ; and := unary { "and" unary }
    fn guard(&mut self) -> Result<GuardExpr, KbParseError> {
        let mut items = vec![self.guard_and()?];
        while self.eat_ident("or") {
            items.push(self.guard_and()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            GuardExpr::Or(items)
        })
    }

    fn guard_and(&mut self) -> Result<GuardExpr, KbParseError> {
        let mut items = vec![self.guard_unary()?];
        while self.eat_ident("and") {
            items.push(self.guard_unary()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            GuardExpr::And(items)
        })
    }

    fn guard_unary(&mut self) -> Result<GuardExpr, KbParseError> {
        if self.eat_ident("not") {
            return Ok(GuardExpr::Not(Box::new(self.guard_unary()?)));
        }
        if self.eat_ident("exists") {
            let scope = self.ident()?;
            self.expect_punct('(')?;
            let inner = self.guard()?;
            self.expect_punct(')')?;
            return match scope.as_str() {
                "act" => Ok(GuardExpr::ExistsAct(Box::new(inner))),
                "result" => Ok(GuardExpr::ExistsResult(Box::new(inner))),
                other => Err(self.err(format!("unknown quantifier scope `{other}`"))),
            };
        }
        if self.eat_punct('(') {
            let inner = self.guard()?;
            self.expect_punct(')')?;
            return Ok(inner);
        }
        if self.eat_ident("true") {
            return Ok(GuardExpr::Const(true));
        }
        if self.eat_ident("false") {
            return Ok(GuardExpr::Const(false));
        }
        if self.eat_ident("causes") {
            return Ok(GuardExpr::CausesLink);
        }
        const RESERVED: [&str; 14] = [
            "and", "or", "not", "exists", "article", "clause", "guard", "penalty", "defaults",
            "exclusive", "extralegal", "aggravate", "mitigate", "when",
        ];
        if matches!(self.peek(), Some(Tok::Ident(s)) if RESERVED.contains(&s.as_str())) {
            return Err(self.err("expected guard expression"));
        }
        let predicate = self.ident()?;
        let test = match self.peek() {
            Some(Tok::EqEq) => {
                self.pos += 1;
                match self.next() {
                    Some(Tok::Ident(s)) if s == "true" => AtomTest::Bool(true),
                    Some(Tok::Ident(s)) if s == "false" => AtomTest::Bool(false),
                    Some(Tok::Ident(s)) => AtomTest::Token(s),
                    Some(Tok::Str(s)) => AtomTest::Token(s),
                    Some(Tok::Int(n)) => AtomTest::Cmp(CmpOp::Eq, n),
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        return Err(self.err("expected value after `==`"));
                    }
                }
            }
            Some(Tok::Le) => {
                self.pos += 1;
                AtomTest::Cmp(CmpOp::Le, self.int()?)
            }
            Some(Tok::Ge) => {
                self.pos += 1;
                AtomTest::Cmp(CmpOp::Ge, self.int()?)
            }
            Some(Tok::Punct('<')) => {
                self.pos += 1;
                AtomTest::Cmp(CmpOp::Lt, self.int()?)
            }
            Some(Tok::Punct('>')) => {
                self.pos += 1;
                AtomTest::Cmp(CmpOp::Gt, self.int()?)
            }
            // Bare predicate is sugar for `predicate == true`.
            _ => AtomTest::Bool(true),
        };
        Ok(GuardExpr::Atom { predicate, test })
    }

    fn penalty(&mut self) -> Result<PenaltySpec, KbParseError> {
        let lower_strict = if self.eat_punct('[') {
            false
        } else if self.eat_punct('(') {
            true
        } else {
            return Err(self.err("expected `[` or `(` to open a penalty interval"));
        };
        let lower = self.int()?;
        if lower < 0 {
            return Err(self.err("penalty lower bound must be non-negative"));
        }
        self.expect_punct(',')?;
        let upper = match self.next() {
            Some(Tok::Int(n)) if n >= 0 => UpperBound::Months(n as u32),
            Some(Tok::Ident(s)) if s == "Life" => UpperBound::Life,
            Some(Tok::Ident(s)) if s == "Death" => UpperBound::Death,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.err("expected month count, `Life`, or `Death`"));
            }
        };
        let upper_strict = if self.eat_punct(']') {
            false
        } else if self.eat_punct(')') {
            true
        } else {
            return Err(self.err("expected `]` or `)` to close a penalty interval"));
        };
        let spec = PenaltySpec {
            lower_months: lower as u32,
            upper,
            lower_strict,
            upper_strict,
        };
        if let Some(u) = spec.upper.months() {
            if spec.lower_months > u || spec.is_empty() {
                return Err(self.err(format!("penalty interval {spec} admits no sentence")));
            }
        }
        Ok(spec)
    }

    fn literal(&mut self) -> Result<FactValue, KbParseError> {
        match self.next() {
            Some(Tok::Ident(s)) if s == "true" => Ok(FactValue::Bool(true)),
            Some(Tok::Ident(s)) if s == "false" => Ok(FactValue::Bool(false)),
            Some(Tok::Ident(s)) => Ok(FactValue::Token(s)),
            Some(Tok::Str(s)) => Ok(FactValue::Token(s)),
            Some(Tok::Int(n)) => Ok(FactValue::Int(n)),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected literal value"))
            }
        }
    }

    fn clause(&mut self, article_no: u32) -> Result<Clause, KbParseError> {
        let index = self.int()?;
        if index < 0 {
            return Err(self.err("clause index must be non-negative"));
        }
        let clause_id = ClauseId(article_no, index as u32);
        let consequence_label = match self.peek() {
            Some(Tok::Str(_)) => match self.next() {
                Some(Tok::Str(s)) => s,
                _ => unreachable!(),
            },
            _ => format!("article {article_no} clause {index}"),
        };
        self.expect_punct('{')?;
        self.expect_ident("guard")?;
        self.expect_punct(':')?;
        let guard = self.guard()?;
        self.expect_ident("penalty")?;
        let penalty = self.penalty()?;

        let mut adjustments = Vec::new();
        loop {
            let direction = if self.eat_ident("aggravate") {
                AdjustDirection::RaiseLower
            } else if self.eat_ident("mitigate") {
                AdjustDirection::LowerUpper
            } else {
                break;
            };
            let label = match self.peek() {
                Some(Tok::Str(_)) => match self.next() {
                    Some(Tok::Str(s)) => s,
                    _ => unreachable!(),
                },
                _ => format!("adj{}", adjustments.len()),
            };
            self.expect_ident("when")?;
            let trigger = self.guard()?;
            self.expect_ident("delta")?;
            let delta = self.int()?;
            if delta <= 0 {
                return Err(self.err("delta_months must be positive"));
            }
            adjustments.push(AdjustmentDelta {
                id: format!("{clause_id}/{label}"),
                trigger,
                direction,
                delta_months: delta as u32,
            });
        }
        self.expect_punct('}')?;
        Ok(Clause {
            clause_id,
            guard,
            penalty,
            adjustments,
            consequence_label,
        })
    }

    fn article(&mut self) -> Result<StatuteArticle, KbParseError> {
        let article_no = self.int()?;
        if article_no < 1 {
            return Err(self.err("article number must be >= 1"));
        }
        let article_no = article_no as u32;
        self.expect_punct('{')?;
        self.expect_ident("guard")?;
        self.expect_punct(':')?;
        let article_guard = self.guard()?;

        let mut field_defaults = BTreeMap::new();
        if self.eat_ident("defaults") {
            self.expect_punct('{')?;
            while !self.eat_punct('}') {
                let name = self.ident()?;
                self.expect_punct('=')?;
                let value = self.literal()?;
                field_defaults.insert(name, value);
            }
        }

        let mut clauses: Vec<Clause> = Vec::new();
        while self.eat_ident("clause") {
            let clause = self.clause(article_no)?;
            if clauses.iter().any(|c| c.clause_id == clause.clause_id) {
                return Err(KbParseError::DuplicateClauseId(clause.clause_id));
            }
            clauses.push(clause);
        }
        if clauses.is_empty() {
            return Err(self.err(format!("article {article_no} has no clauses")));
        }
        self.expect_punct('}')?;
        Ok(StatuteArticle {
            article_no,
            article_guard,
            clauses,
            field_defaults,
        })
    }

    fn document(&mut self) -> Result<StatuteKB, KbParseError> {
        let mut kb = StatuteKB::empty();
        while let Some(tok) = self.peek() {
            match tok {
                Tok::Ident(s) if s == "article" => {
                    self.pos += 1;
                    let article = self.article()?;
                    if kb.articles.contains_key(&article.article_no) {
                        return Err(KbParseError::DuplicateArticle(article.article_no));
                    }
                    kb.articles.insert(article.article_no, article);
                }
                Tok::Ident(s) if s == "exclusive" => {
                    self.pos += 1;
                    let predicate = self.ident()?;
                    self.expect_punct('{')?;
                    let mut tokens = std::collections::BTreeSet::new();
                    loop {
                        tokens.insert(self.ident()?);
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                    self.expect_punct('}')?;
                    kb.exclusivity.push(ExclusiveGroup { predicate, tokens });
                }
                Tok::Ident(s) if s == "extralegal" => {
                    self.pos += 1;
                    self.expect_punct('{')?;
                    loop {
                        kb.extra_legal_names.insert(self.ident()?);
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                    self.expect_punct('}')?;
                }
                _ => return Err(self.err("expected `article`, `exclusive`, or `extralegal`")),
            }
        }
        kb.exclusivity.sort_by(|a, b| a.predicate.cmp(&b.predicate));
        Ok(kb)
    }
}

/// Parses a rule-language document into an unvalidated knowledge base.
pub fn parse_kb(text: &str) -> Result<StatuteKB, KbParseError> {
    let toks = Lexer::new(text).tokenize()?;
    let mut parser = Parser { toks, pos: 0 };
    parser.document()
}

// ---------------------------------------------------------------------------
// Canonical serializer
// ---------------------------------------------------------------------------

fn write_guard(out: &mut String, expr: &GuardExpr, parent_or: bool) {
    match expr {
        GuardExpr::Const(b) => {
            let _ = write!(out, "{b}");
        }
        GuardExpr::CausesLink => out.push_str("causes"),
        GuardExpr::Atom { predicate, test } => match test {
            AtomTest::Bool(true) => out.push_str(predicate),
            AtomTest::Bool(false) => {
                let _ = write!(out, "{predicate} == false");
            }
            AtomTest::Token(t) => {
                if t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                    && t.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                    && !matches!(t.as_str(), "true" | "false")
                {
                    let _ = write!(out, "{predicate} == {t}");
                } else {
                    let _ = write!(out, "{predicate} == \"{t}\"");
                }
            }
            AtomTest::Cmp(op, n) => {
                let _ = write!(out, "{predicate} {} {n}", op.symbol());
            }
        },
        GuardExpr::Not(inner) => {
            out.push_str("not ");
            let needs_parens = matches!(**inner, GuardExpr::And(_) | GuardExpr::Or(_));
            if needs_parens {
                out.push('(');
            }
            write_guard(out, inner, false);
            if needs_parens {
                out.push(')');
            }
        }
        GuardExpr::And(items) => {
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" and ");
                }
                // structural nesting must survive the round trip
                let needs_parens = matches!(item, GuardExpr::Or(_) | GuardExpr::And(_));
                if needs_parens {
                    out.push('(');
                }
                write_guard(out, item, false);
                if needs_parens {
                    out.push(')');
                }
            }
        }
        GuardExpr::Or(items) => {
            if parent_or {
                out.push('(');
            }
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(" or ");
                }
                write_guard(out, item, true);
            }
            if parent_or {
                out.push(')');
            }
        }
        GuardExpr::ExistsAct(inner) => {
            out.push_str("exists act (");
            write_guard(out, inner, false);
            out.push(')');
        }
        GuardExpr::ExistsResult(inner) => {
            out.push_str("exists result (");
            write_guard(out, inner, false);
            out.push(')');
        }
    }
}

fn guard_text(expr: &GuardExpr) -> String {
    let mut s = String::new();
    write_guard(&mut s, expr, false);
    s
}

fn literal_text(value: &FactValue) -> String {
    match value {
        FactValue::Bool(b) => b.to_string(),
        FactValue::Int(n) => n.to_string(),
        FactValue::Token(t) => t.clone(),
        FactValue::Link(a, b) => format!("\"({a},{b})\""),
    }
}

/// Renders a knowledge base back to canonical rule-language text.
/// `parse_kb(serialize_kb(kb)) == kb` for every parseable KB.
pub fn serialize_kb(kb: &StatuteKB) -> String {
    let mut out = String::new();
    if !kb.extra_legal_names.is_empty() {
        let names: Vec<&str> = kb.extra_legal_names.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "extralegal {{ {} }}", names.join(", "));
    }
    for group in &kb.exclusivity {
        let tokens: Vec<&str> = group.tokens.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "exclusive {} {{ {} }}", group.predicate, tokens.join(", "));
    }
    for article in kb.articles.values() {
        let _ = writeln!(out, "\narticle {} {{", article.article_no);
        let _ = writeln!(out, "  guard: {}", guard_text(&article.article_guard));
        if !article.field_defaults.is_empty() {
            let _ = writeln!(out, "  defaults {{");
            for (name, value) in &article.field_defaults {
                let _ = writeln!(out, "    {} = {}", name, literal_text(value));
            }
            let _ = writeln!(out, "  }}");
        }
        for clause in &article.clauses {
            let _ = writeln!(
                out,
                "  clause {} \"{}\" {{",
                clause.clause_id.1, clause.consequence_label
            );
            let _ = writeln!(out, "    guard: {}", guard_text(&clause.guard));
            let lower = if clause.penalty.lower_strict { '(' } else { '[' };
            let upper = if clause.penalty.upper_strict { ')' } else { ']' };
            let _ = writeln!(
                out,
                "    penalty {}{}, {}{}",
                lower, clause.penalty.lower_months, clause.penalty.upper, upper
            );
            for adj in &clause.adjustments {
                let keyword = match adj.direction {
                    AdjustDirection::RaiseLower => "aggravate",
                    AdjustDirection::LowerUpper => "mitigate",
                };
                let label = adj
                    .id
                    .rsplit_once('/')
                    .map(|(_, l)| l)
                    .unwrap_or(adj.id.as_str());
                let _ = writeln!(
                    out,
                    "    {} \"{}\" when {} delta {}",
                    keyword,
                    label,
                    guard_text(&adj.trigger),
                    adj.delta_months
                );
            }
            let _ = writeln!(out, "  }}");
        }
        let _ = writeln!(out, "}}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_CLAUSE_ARTICLE: &str = r#"
        exclusive severity { Minor, Serious, EspeciallySerious }
        exclusive mental_state { Intentional, Negligent, Knowing, Unknown }

        article 234 {
          guard: actor_type == person
             and exists act (action == assault)
             and exists result (result_type == injury)
          defaults {
            especially_serious_circumstance = false
          }
          clause 1 "ordinary" {
            guard: mental_state == Intentional
               and exists act (exists result (causes and severity == Minor))
               and not especially_serious_circumstance
            penalty [0, 36]
          }
          clause 2 "serious" {
            guard: (mental_state == Intentional
                    and exists act (exists result (causes and severity == Serious)))
                or especially_serious_circumstance
            penalty (36, 120]
          }
        }
    "#;

    #[test]
    fn parses_two_clause_schema() {
        let kb = parse_kb(TWO_CLAUSE_ARTICLE).unwrap();
        let article = &kb.articles[&234];
        assert_eq!(article.clauses.len(), 2);

        let c1 = &article.clauses[0];
        assert_eq!(c1.clause_id, ClauseId(234, 1));
        assert_eq!(c1.penalty, PenaltySpec::closed(0, 36));

        let c2 = &article.clauses[1];
        assert_eq!(c2.clause_id, ClauseId(234, 2));
        assert_eq!(c2.penalty.lower_months, 36);
        assert!(c2.penalty.lower_strict);
        assert!(!c2.penalty.upper_strict);
        assert_eq!(c2.penalty.min_months(), 37);
        assert_eq!(c2.penalty.max_months(), Some(120));
    }

    #[test]
    fn empty_document_is_empty_kb() {
        let kb = parse_kb("").unwrap();
        assert!(kb.articles.is_empty());
    }

    #[test]
    fn duplicate_clause_id_is_rejected() {
        let doc = r#"
            article 9 {
              guard: true
              clause 1 { guard: x penalty [0, 1] }
              clause 1 { guard: y penalty [0, 1] }
            }
        "#;
        assert!(matches!(
            parse_kb(doc),
            Err(KbParseError::DuplicateClauseId(ClauseId(9, 1)))
        ));
    }

    #[test]
    fn syntax_error_carries_position() {
        let doc = "article 9 {\n  guard: and\n}";
        match parse_kb(doc) {
            Err(KbParseError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn guards_support_comparisons_and_negation() {
        let doc = r#"
            article 347 {
              guard: age >= 16 and not banned
              clause 1 { guard: drug_quantity_g < 10 and circumstance == none penalty [0, 36] }
            }
        "#;
        let kb = parse_kb(doc).unwrap();
        let article = &kb.articles[&347];
        match &article.article_guard {
            GuardExpr::And(items) => {
                assert_eq!(items[0], GuardExpr::atom("age", AtomTest::Cmp(CmpOp::Ge, 16)));
                assert_eq!(
                    items[1],
                    GuardExpr::Not(Box::new(GuardExpr::atom("banned", AtomTest::Bool(true))))
                );
            }
            other => panic!("unexpected guard {other:?}"),
        }
    }

    #[test]
    fn adjustments_parse_with_labels_and_deltas() {
        let doc = r#"
            article 12 {
              guard: true
              clause 1 {
                guard: convicted
                penalty [36, 120]
                aggravate "repeat" when recidivist delta 12
                mitigate "surrender" when voluntary_surrender delta 24
              }
            }
        "#;
        let kb = parse_kb(doc).unwrap();
        let clause = &kb.articles[&12].clauses[0];
        assert_eq!(clause.adjustments.len(), 2);
        assert_eq!(clause.adjustments[0].direction, AdjustDirection::RaiseLower);
        assert_eq!(clause.adjustments[0].delta_months, 12);
        assert_eq!(clause.adjustments[0].id, "12.1/repeat");
        assert_eq!(clause.adjustments[1].direction, AdjustDirection::LowerUpper);
    }

    #[test]
    fn zero_delta_is_rejected() {
        let doc = r#"
            article 12 {
              guard: true
              clause 1 { guard: x penalty [0, 10] aggravate when y delta 0 }
            }
        "#;
        assert!(matches!(parse_kb(doc), Err(KbParseError::Syntax { .. })));
    }

    #[test]
    fn literally_empty_penalty_interval_is_rejected() {
        let doc = r#"
            article 12 {
              guard: true
              clause 1 { guard: x penalty [10, 2] }
            }
        "#;
        assert!(matches!(parse_kb(doc), Err(KbParseError::Syntax { .. })));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let kb = parse_kb(TWO_CLAUSE_ARTICLE).unwrap();
        let text = serialize_kb(&kb);
        let reparsed = parse_kb(&text).unwrap();
        assert_eq!(kb, reparsed);
        // Serialization itself is canonical: a second round is byte-stable.
        assert_eq!(text, serialize_kb(&reparsed));
    }

    #[test]
    fn or_precedence_binds_looser_than_and() {
        let kb = parse_kb(
            "article 1 { guard: true clause 1 { guard: a and b or c penalty [0,1] } }",
        )
        .unwrap();
        let guard = &kb.articles[&1].clauses[0].guard;
        match guard {
            GuardExpr::Or(items) => {
                assert_eq!(items.len(), 2);
                assert!(matches!(items[0], GuardExpr::And(_)));
            }
            other => panic!("unexpected parse {other:?}"),
        }
    }
}
