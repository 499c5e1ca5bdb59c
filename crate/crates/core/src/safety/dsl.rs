//! Boolean rule language over window features.
//!
//! ```text
//! rule       := expr "->" severity
//! expr       := and_expr ("OR" and_expr)*
//! and_expr   := not_expr ("AND" not_expr)*
//! not_expr   := "NOT" not_expr | primary
//! primary    := comparison | "(" expr ")"
//! comparison := ident cmp number
//! cmp        := ">" | ">=" | "<" | "<=" | "==" | "!="
//! ident      := avg_speed | vehicle_count | speeding_count | pedestrian_count | hour_of_day
//! severity   := "warning" | "danger"
//! ```
//!
//! Keywords are upper-case and case-sensitive. `AND`/`OR` chains parse into
//! n-ary nodes; explicit parentheses around a nested chain are kept as a
//! nested node, so printing and re-parsing preserves the tree exactly.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::window::WindowFeatures;
use crate::model::Severity;

/// Maximum nesting depth of a rule expression.
pub const MAX_DEPTH: usize = 32;

// Guards the recursive descent itself; redundant parentheses add parser
// nesting without adding tree depth.
const MAX_PARSE_NESTING: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    AvgSpeed,
    VehicleCount,
    SpeedingCount,
    PedestrianCount,
    HourOfDay,
}

impl Feature {
    pub const ALL: [Feature; 5] = [
        Feature::AvgSpeed,
        Feature::VehicleCount,
        Feature::SpeedingCount,
        Feature::PedestrianCount,
        Feature::HourOfDay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::AvgSpeed => "avg_speed",
            Feature::VehicleCount => "vehicle_count",
            Feature::SpeedingCount => "speeding_count",
            Feature::PedestrianCount => "pedestrian_count",
            Feature::HourOfDay => "hour_of_day",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }

    /// `None` only for `avg_speed` on a window without vehicles.
    pub fn value(self, f: &WindowFeatures) -> Option<f64> {
        match self {
            Feature::AvgSpeed => f.avg_speed,
            Feature::VehicleCount => Some(f.vehicle_count as f64),
            Feature::SpeedingCount => Some(f.speeding_count as f64),
            Feature::PedestrianCount => Some(f.pedestrian_count as f64),
            Feature::HourOfDay => Some(f.hour_of_day as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Gt, CmpOp::Ge, CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Cmp { feature: Feature, op: CmpOp, value: f64 },
    Not(Box<Expr>),
    /// Two or more operands.
    And(Vec<Expr>),
    /// Two or more operands.
    Or(Vec<Expr>),
}

impl Expr {
    pub fn cmp(feature: Feature, op: CmpOp, value: f64) -> Expr {
        Expr::Cmp { feature, op, value }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Cmp { .. } => 1,
            Expr::Not(e) => 1 + e.depth(),
            Expr::And(es) | Expr::Or(es) => 1 + es.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// Comparisons on an absent feature are false; the connectives are
    /// ordinary boolean logic on top of that.
    pub fn eval(&self, f: &WindowFeatures) -> bool {
        match self {
            Expr::Cmp { feature, op, value } => feature.value(f).is_some_and(|x| op.apply(x, *value)),
            Expr::Not(e) => !e.eval(f),
            Expr::And(es) => es.iter().all(|e| e.eval(f)),
            Expr::Or(es) => es.iter().any(|e| e.eval(f)),
        }
    }

    fn fmt_operand(&self, f: &mut fmt::Formatter<'_>, paren_or: bool, paren_and: bool) -> fmt::Result {
        let wrap = match self {
            Expr::Or(_) => paren_or,
            Expr::And(_) => paren_and,
            _ => false,
        };
        if wrap {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Cmp { feature, op, value } => write!(f, "{} {} {}", feature.name(), op.symbol(), value),
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                e.fmt_operand(f, true, true)
            }
            Expr::And(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    e.fmt_operand(f, true, true)?;
                }
                Ok(())
            }
            Expr::Or(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" OR ")?;
                    }
                    e.fmt_operand(f, true, false)?;
                }
                Ok(())
            }
        }
    }
}

/// A parsed rule body: condition plus the severity it assigns.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleExpr {
    pub expr: Expr,
    pub severity: Severity,
}

impl fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.expr, self.severity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleErrorKind {
    Syntax,
    UnknownIdentifier,
    DepthExceeded,
}

/// Rule text rejection with a 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at line {line}, column {column}")]
pub struct RuleError {
    pub kind: RuleErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Cmp(CmpOp),
    LParen,
    RParen,
    Arrow,
    And,
    Or,
    Not,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier {s:?}"),
            Tok::Number(n) => write!(f, "number {n}"),
            Tok::Cmp(op) => write!(f, "'{}'", op.symbol()),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Arrow => f.write_str("'->'"),
            Tok::And => f.write_str("AND"),
            Tok::Or => f.write_str("OR"),
            Tok::Not => f.write_str("NOT"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> RuleError {
    RuleError { kind: RuleErrorKind::Syntax, line: pos.line, column: pos.column, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, RuleError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let next = chars.get(i + 1).copied();
        let (tok, len) = match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '-' if next == Some('>') => (Tok::Arrow, 2),
            '>' if next == Some('=') => (Tok::Cmp(CmpOp::Ge), 2),
            '>' => (Tok::Cmp(CmpOp::Gt), 1),
            '<' if next == Some('=') => (Tok::Cmp(CmpOp::Le), 2),
            '<' => (Tok::Cmp(CmpOp::Lt), 1),
            '=' if next == Some('=') => (Tok::Cmp(CmpOp::Eq), 2),
            '!' if next == Some('=') => (Tok::Cmp(CmpOp::Ne), 2),
            c if c.is_ascii_digit() || (c == '-' && next.is_some_and(|n| n.is_ascii_digit())) => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '.' {
                    j += 1;
                    let frac_start = j;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    if j == frac_start {
                        return Err(syntax(Pos { line, column: col + (j - i) }, "expected digits after '.'"));
                    }
                }
                let lit: String = chars[i..j].iter().collect();
                let value = lit.parse::<f64>().map_err(|_| syntax(pos, format!("invalid number {lit:?}")))?;
                (Tok::Number(value), j - i)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Ident(word),
                };
                (tok, j - i)
            }
            other => return Err(syntax(pos, format!("unexpected character {other:?}"))),
        };
        out.push((tok, pos));
        i += len;
        col += len;
    }
    out.push((Tok::Eof, Pos { line, column: col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    nesting: usize,
    /// First unknown identifier; reported only if the text is otherwise
    /// syntactically valid.
    unknown: Option<(String, Pos)>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> RuleError {
        syntax(self.pos(), format!("expected {wanted}, found {}", self.peek()))
    }

    fn enter(&mut self) -> Result<(), RuleError> {
        self.nesting += 1;
        if self.nesting > MAX_PARSE_NESTING {
            return Err(RuleError {
                kind: RuleErrorKind::DepthExceeded,
                line: self.pos().line,
                column: self.pos().column,
                message: format!("expression nesting exceeds {MAX_DEPTH}"),
            });
        }
        Ok(())
    }

    fn rule(&mut self) -> Result<RuleExpr, RuleError> {
        let expr = self.expr()?;
        if *self.peek() != Tok::Arrow {
            return Err(self.unexpected("'->'"));
        }
        self.bump();
        let severity = match self.peek() {
            Tok::Ident(s) if s == "warning" => Severity::Warning,
            Tok::Ident(s) if s == "danger" => Severity::Danger,
            _ => return Err(self.unexpected("severity 'warning' or 'danger'")),
        };
        self.bump();
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("end of input"));
        }
        Ok(RuleExpr { expr, severity })
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        let mut terms = vec![self.and_expr()?];
        while *self.peek() == Tok::Or {
            self.bump();
            terms.push(self.and_expr()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::Or(terms) })
    }

    fn and_expr(&mut self) -> Result<Expr, RuleError> {
        let mut terms = vec![self.not_expr()?];
        while *self.peek() == Tok::And {
            self.bump();
            terms.push(self.not_expr()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::And(terms) })
    }

    fn not_expr(&mut self) -> Result<Expr, RuleError> {
        if *self.peek() == Tok::Not {
            self.bump();
            self.enter()?;
            let inner = self.not_expr()?;
            self.nesting -= 1;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, RuleError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                self.enter()?;
                let e = self.expr()?;
                self.nesting -= 1;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("')'"));
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                let (_, pos) = self.bump();
                let feature = match Feature::from_name(&name) {
                    Some(f) => f,
                    None => {
                        self.unknown.get_or_insert((name, pos));
                        Feature::AvgSpeed
                    }
                };
                let op = match self.peek() {
                    Tok::Cmp(op) => *op,
                    _ => return Err(self.unexpected("comparison operator")),
                };
                self.bump();
                let value = match self.peek() {
                    Tok::Number(v) => *v,
                    _ => return Err(self.unexpected("number")),
                };
                self.bump();
                Ok(Expr::Cmp { feature, op, value })
            }
            _ => Err(self.unexpected("comparison or '('")),
        }
    }
}

/// Parse `expr -> severity`.
pub fn parse_rule(text: &str) -> Result<RuleExpr, RuleError> {
    let mut p = Parser { toks: lex(text)?, at: 0, nesting: 0, unknown: None };
    let rule = p.rule()?;
    if let Some((name, pos)) = p.unknown {
        return Err(RuleError {
            kind: RuleErrorKind::UnknownIdentifier,
            line: pos.line,
            column: pos.column,
            message: format!("unknown identifier {name:?}"),
        });
    }
    let depth = rule.expr.depth();
    if depth > MAX_DEPTH {
        return Err(RuleError {
            kind: RuleErrorKind::DepthExceeded,
            line: 1,
            column: 1,
            message: format!("expression depth {depth} exceeds {MAX_DEPTH}"),
        });
    }
    Ok(rule)
}

/// Evaluate a parsed rule against one window.
pub fn eval_rule(rule: &RuleExpr, features: &WindowFeatures) -> Option<Severity> {
    rule.expr.eval(features).then_some(rule.severity)
}
