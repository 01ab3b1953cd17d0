use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{ParseError, Pos};
use crate::select::udf::{ArgKind, UdfRegistry};

pub(crate) fn parse_query(src: &str, udfs: &UdfRegistry) -> Result<Query, ParseError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, idx: 0, udfs, marks: Marks::default() };
    let q = p.query()?;
    p.validate(q)
}

/// Source positions of constructs that validation may need to report.
#[derive(Default)]
struct Marks {
    group_by: Option<Pos>,
    having: Option<Pos>,
    gap: Option<Pos>,
    error: Option<Pos>,
}

struct Parser<'a> {
    tokens: Vec<Token>,
    idx: usize,
    udfs: &'a UdfRegistry,
    marks: Marks,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.idx].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.idx + k).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.idx].pos
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.idx].clone();
        if self.idx + 1 < self.tokens.len() {
            self.idx += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::syntax(self.pos(), format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let pos = self.pos();
                self.advance();
                Ok((s, pos))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn number(&mut self, what: &str) -> Result<(f64, Pos), ParseError> {
        match *self.peek() {
            Tok::Num(n) => {
                let pos = self.pos();
                self.advance();
                Ok((n, pos))
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn column(&mut self) -> Result<String, ParseError> {
        let (name, pos) = self.ident("column name")?;
        if !COLUMNS.contains(&name.as_str()) {
            return Err(ParseError::validation(pos, format!("unknown column `{name}`")));
        }
        Ok(name)
    }

    fn query(&mut self) -> Result<Query, ParseError> {
        self.expect_kw("SELECT")?;
        let select = self.select_list()?;
        self.expect_kw("FROM")?;
        let (source, _) = self.ident("trace name")?;
        let mut q = Query::new(select, source);

        if self.eat_kw("WHERE") {
            q.where_clause = Some(self.expr()?);
        }
        if self.is_kw("GROUP") {
            self.marks.group_by = Some(self.pos());
            self.advance();
            self.expect_kw("BY")?;
            let (col, pos) = self.ident("`timestamp` or `trackid`")?;
            q.group_by = Some(match col.as_str() {
                "timestamp" => GroupBy::Timestamp,
                "trackid" => GroupBy::TrackId,
                _ => {
                    return Err(ParseError::validation(
                        pos,
                        format!("GROUP BY supports `timestamp` or `trackid`, not `{col}`"),
                    ))
                }
            });
        }
        if self.is_kw("HAVING") {
            self.marks.having = Some(self.pos());
            self.advance();
            q.having.push(self.having_term()?);
            while self.eat_kw("AND") {
                q.having.push(self.having_term()?);
            }
        }
        self.trailers(&mut q)?;
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("end of query"));
        }
        Ok(q)
    }

    fn select_list(&mut self) -> Result<SelectList, ParseError> {
        if *self.peek() == Tok::Star {
            self.advance();
            return Ok(SelectList::Star);
        }
        if self.is_kw("FCOUNT") && *self.peek_at(1) == Tok::LParen {
            self.advance();
            self.expect(Tok::LParen)?;
            self.expect(Tok::Star)?;
            self.expect(Tok::RParen)?;
            return Ok(SelectList::Aggregate(Aggregate::FCount));
        }
        if self.is_kw("COUNT") && *self.peek_at(1) == Tok::LParen {
            self.advance();
            self.expect(Tok::LParen)?;
            let agg = if *self.peek() == Tok::Star {
                self.advance();
                Aggregate::Count
            } else {
                self.expect_kw("DISTINCT")?;
                Aggregate::CountDistinct(self.column()?)
            };
            self.expect(Tok::RParen)?;
            return Ok(SelectList::Aggregate(agg));
        }
        let mut cols = vec![self.column()?];
        while *self.peek() == Tok::Comma {
            self.advance();
            cols.push(self.column()?);
        }
        Ok(SelectList::Columns(cols))
    }

    fn having_term(&mut self) -> Result<HavingTerm, ParseError> {
        let agg = if self.eat_kw("COUNT") {
            self.expect(Tok::LParen)?;
            self.expect(Tok::Star)?;
            self.expect(Tok::RParen)?;
            HavingAgg::Count
        } else if self.eat_kw("SUM") {
            self.expect(Tok::LParen)?;
            let (col, pos) = self.ident("`class`")?;
            if col != "class" {
                return Err(ParseError::validation(pos, "SUM supports only `class = '<name>'`"));
            }
            self.expect(Tok::Op(CmpOp::Eq))?;
            let name = match self.peek().clone() {
                Tok::Str(s) => {
                    self.advance();
                    s
                }
                _ => return Err(self.unexpected("class name string")),
            };
            self.expect(Tok::RParen)?;
            HavingAgg::SumClass(name)
        } else {
            return Err(self.unexpected("COUNT(*) or SUM(class = ...)"));
        };
        let op = match *self.peek() {
            Tok::Op(op) => {
                self.advance();
                op
            }
            _ => return Err(self.unexpected("comparison operator")),
        };
        let (value, _) = self.number("number")?;
        Ok(HavingTerm { agg, op, value })
    }

    fn trailers(&mut self, q: &mut Query) -> Result<(), ParseError> {
        loop {
            let pos = self.pos();
            let dup = |name: &str| ParseError::syntax(pos, format!("duplicate {name} clause"));
            if self.eat_kw("LIMIT") {
                if q.limit.is_some() {
                    return Err(dup("LIMIT"));
                }
                let (n, npos) = self.number("row limit")?;
                q.limit = Some(positive_int(n, npos, "LIMIT")?);
            } else if self.eat_kw("GAP") {
                if q.gap.is_some() {
                    return Err(dup("GAP"));
                }
                self.marks.gap = Some(pos);
                let (n, npos) = self.number("frame gap")?;
                if n < 0.0 || n.fract() != 0.0 || !n.is_finite() {
                    return Err(ParseError::validation(npos, "GAP must be a non-negative integer"));
                }
                q.gap = Some(n as u64);
            } else if self.eat_kw("ERROR") {
                if q.error_bound.is_some() {
                    return Err(dup("ERROR WITHIN"));
                }
                self.marks.error = Some(pos);
                self.expect_kw("WITHIN")?;
                let (e, epos) = self.number("error bound")?;
                if !(e > 0.0 && e.is_finite()) {
                    return Err(ParseError::validation(epos, "ERROR WITHIN must be positive"));
                }
                q.error_bound = Some(e);
            } else if self.is_kw("AT") || self.is_kw("CONFIDENCE") {
                if q.confidence.is_some() {
                    return Err(dup("CONFIDENCE"));
                }
                self.eat_kw("AT");
                self.expect_kw("CONFIDENCE")?;
                let (mut c, cpos) = self.number("confidence level")?;
                if *self.peek() == Tok::Percent {
                    self.advance();
                    c /= 100.0;
                }
                if !(c > 0.0 && c < 1.0) {
                    return Err(ParseError::validation(cpos, "CONFIDENCE must lie strictly between 0 and 1"));
                }
                q.confidence = Some(c);
            } else if self.is_kw("FPR") || self.is_kw("FNR") {
                let fpr = self.is_kw("FPR");
                self.advance();
                self.expect_kw("WITHIN")?;
                let (r, rpos) = self.number("rate")?;
                if !(0.0..=1.0).contains(&r) {
                    return Err(ParseError::validation(rpos, "rate bounds must lie in [0, 1]"));
                }
                let slot = if fpr { &mut q.fpr } else { &mut q.fnr };
                if slot.is_some() {
                    return Err(dup(if fpr { "FPR WITHIN" } else { "FNR WITHIN" }));
                }
                *slot = Some(r);
            } else {
                return Ok(());
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("OR") {
            let rhs = self.and_expr()?;
            lhs = Expr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.comparison()?;
        while self.eat_kw("AND") {
            let rhs = self.comparison()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos();
        let parenthesized = *self.peek() == Tok::LParen;
        let lhs = self.operand()?;
        if let Tok::Op(op) = *self.peek() {
            self.advance();
            let rhs = self.operand()?;
            return Ok(Expr::cmp(lhs, op, rhs));
        }
        if parenthesized && matches!(lhs, Expr::Cmp { .. } | Expr::Bool { .. }) {
            return Ok(lhs);
        }
        if *self.peek() == Tok::Eof || self.is_kw("AND") || self.is_kw("OR") {
            return Err(ParseError::syntax(start, "expected a comparison"));
        }
        Err(self.unexpected("comparison operator"))
    }

    fn operand(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.advance();
                Ok(Expr::Num(n))
            }
            Tok::Str(s) => {
                self.advance();
                Ok(Expr::Str(s))
            }
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let pos = self.pos();
                self.advance();
                if *self.peek() == Tok::LParen {
                    self.advance();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        args.push(self.operand()?);
                        while *self.peek() == Tok::Comma {
                            self.advance();
                            args.push(self.operand()?);
                        }
                    }
                    self.expect(Tok::RParen)?;
                    self.check_udf(&name, &args, pos)?;
                    Ok(Expr::Call { name, args })
                } else if COLUMNS.contains(&name.as_str()) {
                    Ok(Expr::Column(name))
                } else {
                    Err(ParseError::validation(pos, format!("unknown column `{name}`")))
                }
            }
            _ => Err(self.unexpected("operand")),
        }
    }

    fn check_udf(&self, name: &str, args: &[Expr], pos: Pos) -> Result<(), ParseError> {
        let udf = self
            .udfs
            .get(name)
            .ok_or_else(|| ParseError::validation(pos, format!("unknown UDF `{name}`")))?;
        let want = match udf.arg {
            ArgKind::Content => "content",
            ArgKind::Mask => "mask",
        };
        match args {
            [Expr::Column(c)] if c == want => Ok(()),
            _ => Err(ParseError::validation(pos, format!("UDF `{name}` takes a single `{want}` argument"))),
        }
    }

    fn validate(&self, mut q: Query) -> Result<Query, ParseError> {
        let origin = Pos { line: 1, column: 1 };
        if q.gap.is_some() && q.limit.is_none() {
            return Err(ParseError::validation(self.marks.gap.unwrap_or(origin), "GAP requires LIMIT"));
        }
        if q.error_bound.is_some() && !q.is_aggregate() {
            return Err(ParseError::validation(
                self.marks.error.unwrap_or(origin),
                "ERROR WITHIN requires an aggregate select list",
            ));
        }
        if !q.having.is_empty() && q.group_by.is_none() {
            return Err(ParseError::validation(self.marks.having.unwrap_or(origin), "HAVING requires GROUP BY"));
        }
        if q.is_aggregate() && q.group_by.is_some() {
            return Err(ParseError::validation(
                self.marks.group_by.unwrap_or(origin),
                "grouped aggregates are not supported",
            ));
        }
        if q.error_bound.is_some() && q.confidence.is_none() {
            q.confidence = Some(DEFAULT_CONFIDENCE);
        }
        Ok(q)
    }
}

fn positive_int(n: f64, pos: Pos, what: &str) -> Result<u64, ParseError> {
    if n >= 1.0 && n.fract() == 0.0 && n.is_finite() {
        Ok(n as u64)
    } else {
        Err(ParseError::validation(pos, format!("{what} must be a positive integer")))
    }
}
