//! FrameQL abstract syntax.

use std::fmt;

/// Columns of the detection relation.
pub const COLUMNS: &[&str] = &["timestamp", "class", "mask", "trackid", "content", "features"];

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: SelectList,
    pub source: String,
    pub where_clause: Option<Expr>,
    pub group_by: Option<GroupBy>,
    /// Conjunction of aggregate comparisons.
    pub having: Vec<HavingTerm>,
    pub limit: Option<u64>,
    pub gap: Option<u64>,
    pub error_bound: Option<f64>,
    pub confidence: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

impl Query {
    /// A bare `SELECT <select> FROM <source>` query.
    pub fn new(select: SelectList, source: impl Into<String>) -> Self {
        Query {
            select,
            source: source.into(),
            where_clause: None,
            group_by: None,
            having: Vec::new(),
            limit: None,
            gap: None,
            error_bound: None,
            confidence: None,
            fpr: None,
            fnr: None,
        }
    }

    pub fn is_aggregate(&self) -> bool {
        matches!(self.select, SelectList::Aggregate(_))
    }

    /// Confidence level in effect, with the 0.95 default.
    pub fn confidence_level(&self) -> f64 {
        self.confidence.unwrap_or(DEFAULT_CONFIDENCE)
    }

    /// Top-level conjuncts of the WHERE clause.
    pub fn where_conjuncts(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        if let Some(e) = &self.where_clause {
            e.collect_conjuncts(&mut out);
        }
        out
    }

    /// The class named by a top-level `class = '<name>'` conjunct, if any.
    pub fn class_filter(&self) -> Option<&str> {
        self.where_conjuncts().into_iter().find_map(Expr::as_class_eq)
    }
}

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub enum SelectList {
    Aggregate(Aggregate),
    /// `*`
    Star,
    /// Named columns, e.g. `timestamp`.
    Columns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    /// `FCOUNT(*)`: matching records per frame.
    FCount,
    /// `COUNT(*)`
    Count,
    /// `COUNT(DISTINCT <column>)`
    CountDistinct(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Timestamp,
    TrackId,
}

impl GroupBy {
    pub fn column(self) -> &'static str {
        match self {
            GroupBy::Timestamp => "timestamp",
            GroupBy::TrackId => "trackid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HavingTerm {
    pub agg: HavingAgg,
    pub op: CmpOp,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HavingAgg {
    /// `COUNT(*)`
    Count,
    /// `SUM(class='<name>')`
    SumClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn eval<T: PartialOrd + ?Sized>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    /// The operator with its operands swapped (`a < b` iff `b > a`).
    pub fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            op => op,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Str(String),
    Num(f64),
    Call { name: String, args: Vec<Expr> },
    Cmp { op: CmpOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Bool { op: BoolOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn column(name: &str) -> Expr {
        Expr::Column(name.to_string())
    }

    pub fn call(name: &str, arg: &str) -> Expr {
        Expr::Call { name: name.to_string(), args: vec![Expr::column(arg)] }
    }

    pub fn cmp(lhs: Expr, op: CmpOp, rhs: Expr) -> Expr {
        Expr::Cmp { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bool { op: BoolOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bool { op: BoolOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    fn collect_conjuncts<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Expr::Bool { op: BoolOp::And, lhs, rhs } => {
                lhs.collect_conjuncts(out);
                rhs.collect_conjuncts(out);
            }
            e => out.push(e),
        }
    }

    /// `class = 'x'` (either operand order) yields `x`.
    pub fn as_class_eq(&self) -> Option<&str> {
        match self {
            Expr::Cmp { op: CmpOp::Eq, lhs, rhs } => match (lhs.as_ref(), rhs.as_ref()) {
                (Expr::Column(c), Expr::Str(s)) | (Expr::Str(s), Expr::Column(c)) if c == "class" => {
                    Some(s)
                }
                _ => None,
            },
            _ => None,
        }
    }

    /// Visits every node depth-first.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
            Expr::Cmp { lhs, rhs, .. } | Expr::Bool { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            _ => {}
        }
    }

    pub fn contains_call(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e, Expr::Call { .. }));
        found
    }
}
