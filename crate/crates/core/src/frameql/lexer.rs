use super::ast::CmpOp;
use super::{ParseError, Pos};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Percent,
    Star,
    LParen,
    RParen,
    Comma,
    Op(CmpOp),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Percent => "`%`".into(),
            Tok::Star => "`*`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Op(op) => format!("`{op}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let (mut line, mut col) = (1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        // `--` line comments
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                // hyphenated trace names such as night-street
                if chars[i] == '-' && !chars.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric()) {
                    break;
                }
                s.push(chars[i]);
                bump!();
            }
            Tok::Ident(s)
        } else if c.is_ascii_digit()
            || c == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
            || c == '-' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.')
        {
            let mut s = String::new();
            if c == '-' {
                s.push(c);
                bump!();
            }
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                s.push(chars[i]);
                bump!();
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = (i, line, col, s.len());
                s.push(chars[i]);
                bump!();
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    s.push(chars[i]);
                    bump!();
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        bump!();
                    }
                } else {
                    // not an exponent after all
                    i = save.0;
                    line = save.1;
                    col = save.2;
                    s.truncate(save.3);
                }
            }
            let n: f64 = s
                .parse()
                .map_err(|_| ParseError::syntax(pos, format!("malformed number `{s}`")))?;
            Tok::Num(n)
        } else if c == '\'' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(ParseError::syntax(pos, "unterminated string literal"));
                }
                if chars[i] == '\'' {
                    if chars.get(i + 1) == Some(&'\'') {
                        s.push('\'');
                        bump!();
                        bump!();
                        continue;
                    }
                    bump!();
                    break;
                }
                s.push(chars[i]);
                bump!();
            }
            Tok::Str(s)
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let (tok, width) = match two.as_str() {
                "<=" => (Tok::Op(CmpOp::Le), 2),
                ">=" => (Tok::Op(CmpOp::Ge), 2),
                "!=" | "<>" => (Tok::Op(CmpOp::Ne), 2),
                _ => match c {
                    '<' => (Tok::Op(CmpOp::Lt), 1),
                    '>' => (Tok::Op(CmpOp::Gt), 1),
                    '=' => (Tok::Op(CmpOp::Eq), 1),
                    '%' => (Tok::Percent, 1),
                    '*' => (Tok::Star, 1),
                    '(' => (Tok::LParen, 1),
                    ')' => (Tok::RParen, 1),
                    ',' => (Tok::Comma, 1),
                    _ => return Err(ParseError::syntax(pos, format!("unexpected character `{c}`"))),
                },
            };
            for _ in 0..width {
                bump!();
            }
            tok
        };
        out.push(Token { tok, pos });
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, column: col } });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn operators_and_literals() {
        assert_eq!(
            toks("a>=17.5 AND b<>'x''y'"),
            vec![
                Tok::Ident("a".into()),
                Tok::Op(CmpOp::Ge),
                Tok::Num(17.5),
                Tok::Ident("AND".into()),
                Tok::Ident("b".into()),
                Tok::Op(CmpOp::Ne),
                Tok::Str("x'y".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn hyphenated_identifier_and_negative_number() {
        assert_eq!(toks("night-street")[0], Tok::Ident("night-street".into()));
        assert_eq!(toks("x > -3")[2], Tok::Num(-3.0));
        assert_eq!(toks("95%"), vec![Tok::Num(95.0), Tok::Percent, Tok::Eof]);
    }

    #[test]
    fn positions_are_one_based() {
        let t = tokenize("SELECT\n  *").unwrap();
        assert_eq!(t[1].pos, Pos { line: 2, column: 3 });
    }

    #[test]
    fn unterminated_string() {
        let e = tokenize("x = 'abc").unwrap_err();
        assert_eq!((e.line, e.column), (1, 5));
    }
}
