//! Lexer and recursive-descent parser for the bracketed ad syntax.
//!
//! Precedence, lowest first: `?:`, `||`, `&&`, `== !=`, `< <= > >=`, `+ -`,
//! `* / %`, unary `! -`.

use super::ast::{BinaryOp, Builtin, ClassAd, Expr, UnaryOp};
use super::value::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate attribute '{0}'")]
    DuplicateAttribute(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const PUNCTS: [&str; 26] = [
    "&&", "||", "==", "!=", "<=", ">=", "[", "]", "{", "}", "(", ")", ";", ",", "=", ".", "?",
    ":", "!", "-", "+", "*", "/", "%", "<", ">",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, message: String| ParseError::Syntax {
        line,
        column,
        message,
    };

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        // comments: `#`, `//` to end of line, `/* ... */`
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i >= chars.len() {
                    return Err(err(sl, sc, "unterminated comment".into()));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    i += 2;
                    col += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }

        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                column: tc,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            let mut is_real = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                is_real = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_real = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = if is_real {
                let r: f64 = text
                    .parse()
                    .map_err(|_| err(tl, tc, format!("bad real literal '{text}'")))?;
                if !r.is_finite() {
                    return Err(err(tl, tc, format!("real literal out of range '{text}'")));
                }
                Tok::Real(r)
            } else {
                Tok::Int(
                    text.parse()
                        .map_err(|_| err(tl, tc, format!("integer literal out of range '{text}'")))?,
                )
            };
            out.push(Token {
                tok,
                line: tl,
                column: tc,
            });
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                let Some(&ch) = chars.get(i) else {
                    return Err(err(tl, tc, "unterminated string".into()));
                };
                i += 1;
                col += 1;
                match ch {
                    '"' => break,
                    '\\' => {
                        let Some(&esc) = chars.get(i) else {
                            return Err(err(tl, tc, "unterminated string".into()));
                        };
                        i += 1;
                        col += 1;
                        s.push(match esc {
                            'n' => '\n',
                            't' => '\t',
                            'r' => '\r',
                            '"' => '"',
                            '\\' => '\\',
                            other => {
                                return Err(err(line, col - 1, format!("unknown escape '\\{other}'")))
                            }
                        });
                    }
                    '\n' => {
                        line += 1;
                        col = 1;
                        s.push('\n');
                    }
                    other => s.push(other),
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                line: tl,
                column: tc,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len();
                out.push(Token {
                    tok: Tok::Punct(p),
                    line: tl,
                    column: tc,
                });
            }
            None => return Err(err(tl, tc, format!("unexpected character '{c}'"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError::Syntax {
            line: t.line,
            column: t.column,
            message: message.into(),
        }
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.error_here(format!("expected '{p}', found {}", describe(self.peek()))))
        }
    }

    fn ad(&mut self) -> Result<ClassAd, ParseError> {
        self.expect("[")?;
        let mut ad = ClassAd::new();
        loop {
            if self.eat("]") {
                return Ok(ad);
            }
            let name = match self.next().tok {
                Tok::Ident(n) => n,
                other => {
                    self.pos -= 1;
                    return Err(
                        self.error_here(format!("expected attribute name, found {}", describe(&other)))
                    );
                }
            };
            self.expect("=")?;
            let e = self.expr()?;
            ad.insert(name, e).map_err(ParseError::DuplicateAttribute)?;
            if !self.eat(";") && !self.is_punct("]") {
                return Err(self.error_here(format!(
                    "expected ';' or ']', found {}",
                    describe(self.peek())
                )));
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let cond = self.or()?;
        if self.eat("?") {
            let then = self.expr()?;
            self.expect(":")?;
            let other = self.expr()?;
            return Ok(Expr::Conditional(
                Box::new(cond),
                Box::new(then),
                Box::new(other),
            ));
        }
        Ok(cond)
    }

    fn binary_level(
        &mut self,
        ops: &[(&str, BinaryOp)],
        next: fn(&mut Parser) -> Result<Expr, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        'outer: loop {
            for (sym, op) in ops {
                if self.eat(sym) {
                    let rhs = next(self)?;
                    lhs = Expr::binary(*op, lhs, rhs);
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[("||", BinaryOp::Or)], Parser::and)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[("&&", BinaryOp::And)], Parser::equality)
    }

    fn equality(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(
            &[("==", BinaryOp::Eq), ("!=", BinaryOp::Ne)],
            Parser::relational,
        )
    }

    fn relational(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(
            &[
                ("<=", BinaryOp::Le),
                (">=", BinaryOp::Ge),
                ("<", BinaryOp::Lt),
                (">", BinaryOp::Gt),
            ],
            Parser::additive,
        )
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(
            &[("+", BinaryOp::Add), ("-", BinaryOp::Sub)],
            Parser::multiplicative,
        )
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(
            &[
                ("*", BinaryOp::Mul),
                ("/", BinaryOp::Div),
                ("%", BinaryOp::Mod),
            ],
            Parser::unary,
        )
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat("!") {
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(self.unary()?)));
        }
        if self.eat("-") {
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        if self.is_punct("[") {
            return Ok(Expr::Record(self.ad()?));
        }
        let t = self.next();
        match t.tok {
            Tok::Int(i) => Ok(Expr::int(i)),
            Tok::Real(r) => Ok(Expr::real(r)),
            Tok::Str(s) => Ok(Expr::text(s)),
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Punct("{") => {
                let mut items = Vec::new();
                if self.eat("}") {
                    return Ok(Expr::List(items));
                }
                loop {
                    items.push(self.expr()?);
                    if self.eat("}") {
                        return Ok(Expr::List(items));
                    }
                    self.expect(",")?;
                }
            }
            Tok::Ident(name) => {
                match name.to_ascii_lowercase().as_str() {
                    "true" => return Ok(Expr::boolean(true)),
                    "false" => return Ok(Expr::boolean(false)),
                    "undefined" => return Ok(Expr::Literal(Value::Undefined)),
                    "error" => return Ok(Expr::Literal(Value::error("error literal"))),
                    _ => {}
                }
                if self.is_punct("(") {
                    let Some(func) = Builtin::from_name(&name) else {
                        self.pos -= 1;
                        return Err(self.error_here(format!("unknown function '{name}'")));
                    };
                    self.next();
                    let mut args = Vec::new();
                    if !self.eat(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.eat(")") {
                                break;
                            }
                            self.expect(",")?;
                        }
                    }
                    return Ok(Expr::Call(func, args));
                }
                if self.eat(".") {
                    return match self.next().tok {
                        Tok::Ident(attr) => Ok(Expr::scoped(&name, attr)),
                        other => {
                            self.pos -= 1;
                            Err(self.error_here(format!(
                                "expected attribute name after '{name}.', found {}",
                                describe(&other)
                            )))
                        }
                    };
                }
                Ok(Expr::attr(name))
            }
            other => {
                self.pos -= 1;
                Err(self.error_here(format!("expected expression, found {}", describe(&other))))
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier '{s}'"),
        Tok::Int(i) => format!("integer {i}"),
        Tok::Real(r) => format!("real {r}"),
        Tok::Str(_) => "string".to_string(),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Eof => "end of input".to_string(),
    }
}

/// Parses one bracketed ad, e.g. `[ Executable = "/bin/ls"; Rank = other.FreeCPUs ]`.
pub fn parse_ad(src: &str) -> Result<ClassAd, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
    };
    let ad = p.ad()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error_here("trailing input after ad"));
    }
    Ok(ad)
}

/// Parses a bare expression.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error_here("trailing input after expression"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_sum() {
        let ad = parse_ad("[ x = 1+2; ]").unwrap();
        assert_eq!(
            ad.get("x"),
            Some(&Expr::binary(BinaryOp::Add, Expr::int(1), Expr::int(2)))
        );
    }

    #[test]
    fn case_folded_duplicate_is_rejected() {
        assert_eq!(
            parse_ad("[ x = 1; X = 2; ]"),
            Err(ParseError::DuplicateAttribute("X".into()))
        );
    }

    #[test]
    fn requirements_and_rank_reach_a_fixed_point() {
        let ad =
            parse_ad("[ Requirements = other.FreeCPUs > 0; Rank = other.FreeCPUs; ]").unwrap();
        assert_eq!(ad.len(), 2);
        let again = parse_ad(&ad.to_string()).unwrap();
        assert_eq!(ad, again);
        assert_eq!(again.to_string(), ad.to_string());
    }

    #[test]
    fn syntax_error_reports_position() {
        match parse_ad("[\n  a = 1 +;\n]") {
            Err(ParseError::Syntax { line, column, .. }) => {
                assert_eq!((line, column), (2, 10));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precedence_and_keywords() {
        let e = parse_expr("a || b && !c == TRUE").unwrap();
        assert_eq!(e.to_string(), "(a || (b && ((!c) == true)))");
        let e = parse_expr("1 + 2 * 3 < 4 ? \"x\\n\" : undefined").unwrap();
        assert_eq!(e.to_string(), "(((1 + (2 * 3)) < 4) ? \"x\\n\" : undefined)");
    }

    #[test]
    fn unknown_function_is_a_syntax_error() {
        assert!(matches!(
            parse_expr("regexp(\"a\", b)"),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn nested_ads_and_comments() {
        let ad = parse_ad(
            "# a dag\n[ Type = \"DAG\"; // nodes\n Nodes = [ A = [ Executable = \"a\" ]; ]; /* deps */ Dependencies = {}; ]",
        )
        .unwrap();
        assert!(matches!(ad.get("nodes"), Some(Expr::Record(_))));
    }

    #[test]
    fn integer_overflow_in_literal_is_rejected() {
        assert!(parse_expr("99999999999999999999").is_err());
    }
}
