use std::fmt::Write;

use super::ast::*;

/// Canonical FrameQL text for `q`. Re-parsing the output yields `q` again.
pub fn print(q: &Query) -> String {
    let mut s = String::from("SELECT ");
    match &q.select {
        SelectList::Star => s.push('*'),
        SelectList::Aggregate(Aggregate::FCount) => s.push_str("FCOUNT(*)"),
        SelectList::Aggregate(Aggregate::Count) => s.push_str("COUNT(*)"),
        SelectList::Aggregate(Aggregate::CountDistinct(c)) => {
            let _ = write!(s, "COUNT(DISTINCT {c})");
        }
        SelectList::Columns(cols) => s.push_str(&cols.join(", ")),
    }
    let _ = write!(s, "\nFROM {}", q.source);
    if let Some(w) = &q.where_clause {
        s.push_str("\nWHERE ");
        print_expr(&mut s, w);
    }
    if let Some(g) = q.group_by {
        let _ = write!(s, "\nGROUP BY {}", g.column());
    }
    for (i, h) in q.having.iter().enumerate() {
        s.push_str(if i == 0 { "\nHAVING " } else { " AND " });
        match &h.agg {
            HavingAgg::Count => s.push_str("COUNT(*)"),
            HavingAgg::SumClass(c) => {
                let _ = write!(s, "SUM(class = {})", quote(c));
            }
        }
        let _ = write!(s, " {} {}", h.op, num(h.value));
    }
    if let Some(l) = q.limit {
        let _ = write!(s, "\nLIMIT {l}");
        if let Some(g) = q.gap {
            let _ = write!(s, " GAP {g}");
        }
    } else if let Some(g) = q.gap {
        let _ = write!(s, "\nGAP {g}");
    }
    if let Some(e) = q.error_bound {
        let _ = write!(s, "\nERROR WITHIN {}", num(e));
    }
    if let Some(c) = q.confidence {
        let _ = write!(s, "\nAT CONFIDENCE {}", percent(c));
    }
    if let Some(r) = q.fpr {
        let _ = write!(s, "\nFPR WITHIN {}", num(r));
    }
    if let Some(r) = q.fnr {
        let _ = write!(s, "\nFNR WITHIN {}", num(r));
    }
    s
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Percent form when it reproduces the same value, plain decimal otherwise.
fn percent(c: f64) -> String {
    let p = c * 100.0;
    let text = num(p);
    match text.parse::<f64>() {
        Ok(back) if back / 100.0 == c => format!("{text}%"),
        _ => num(c),
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn print_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Column(c) => out.push_str(c),
        Expr::Str(s) => out.push_str(&quote(s)),
        Expr::Num(n) => out.push_str(&num(*n)),
        Expr::Call { name, args } => {
            out.push_str(name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                print_expr(out, a);
            }
            out.push(')');
        }
        Expr::Cmp { op, lhs, rhs } => {
            print_operand(out, lhs);
            let _ = write!(out, " {op} ");
            print_operand(out, rhs);
        }
        Expr::Bool { op, lhs, rhs } => {
            // left-associative; OR binds looser than AND
            let lhs_parens = matches!(**lhs, Expr::Bool { op: BoolOp::Or, .. }) && *op == BoolOp::And;
            let rhs_parens = match **rhs {
                Expr::Bool { op: inner, .. } => inner == *op || inner == BoolOp::Or,
                _ => false,
            };
            wrap(out, lhs, lhs_parens);
            out.push_str(if *op == BoolOp::And { "\n  AND " } else { " OR " });
            wrap(out, rhs, rhs_parens);
        }
    }
}

fn print_operand(out: &mut String, e: &Expr) {
    wrap(out, e, matches!(e, Expr::Cmp { .. } | Expr::Bool { .. }));
}

fn wrap(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
    }
    print_expr(out, e);
    if parens {
        out.push(')');
    }
}
