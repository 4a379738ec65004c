use std::fmt;

use super::value::{format_real, quote, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Mul,
    Div,
    Mod,
    Add,
    Sub,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 13] = [
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Mod,
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Lt,
        BinaryOp::Le,
        BinaryOp::Gt,
        BinaryOp::Ge,
        BinaryOp::Eq,
        BinaryOp::Ne,
        BinaryOp::And,
        BinaryOp::Or,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "&&",
            BinaryOp::Or => "||",
        }
    }
}

/// The builtin functions the expression language knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Member,
    Length,
    ToLower,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Builtin> {
        match name.to_ascii_lowercase().as_str() {
            "member" => Some(Builtin::Member),
            "length" => Some(Builtin::Length),
            "tolower" => Some(Builtin::ToLower),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Member => "member",
            Builtin::Length => "length",
            Builtin::ToLower => "tolower",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    /// `scope` is stored lowercase; `None` means the enclosing ad.
    AttrRef {
        scope: Option<String>,
        name: String,
    },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    List(Vec<Expr>),
    Call(Builtin, Vec<Expr>),
    Conditional(Box<Expr>, Box<Expr>, Box<Expr>),
    /// A nested ad such as the per-node ads of a DAG. Not a value: evaluating
    /// it yields an error.
    Record(ClassAd),
}

impl Expr {
    pub fn int(i: i64) -> Expr {
        Expr::Literal(Value::Integer(i))
    }

    pub fn real(r: f64) -> Expr {
        Expr::Literal(Value::Real(r))
    }

    pub fn text(s: impl Into<String>) -> Expr {
        Expr::Literal(Value::Text(s.into()))
    }

    pub fn boolean(b: bool) -> Expr {
        Expr::Literal(Value::Boolean(b))
    }

    pub fn attr(name: impl Into<String>) -> Expr {
        Expr::AttrRef {
            scope: None,
            name: name.into(),
        }
    }

    pub fn scoped(scope: &str, name: impl Into<String>) -> Expr {
        Expr::AttrRef {
            scope: Some(scope.to_ascii_lowercase()),
            name: name.into(),
        }
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn text_list<S: AsRef<str>>(items: &[S]) -> Expr {
        Expr::List(items.iter().map(|s| Expr::text(s.as_ref())).collect())
    }

    /// True if any attribute reference in the tree uses `scope`.
    pub fn references_scope(&self, scope: &str) -> bool {
        match self {
            Expr::Literal(_) => false,
            Expr::AttrRef { scope: s, .. } => s.as_deref() == Some(scope),
            Expr::Unary(_, e) => e.references_scope(scope),
            Expr::Binary(_, l, r) => l.references_scope(scope) || r.references_scope(scope),
            Expr::List(items) | Expr::Call(_, items) => {
                items.iter().any(|e| e.references_scope(scope))
            }
            Expr::Conditional(c, t, e) => {
                c.references_scope(scope) || t.references_scope(scope) || e.references_scope(scope)
            }
            Expr::Record(ad) => ad.iter().any(|(_, e)| e.references_scope(scope)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::AttrRef { .. } => 1,
            Expr::Unary(_, e) => 1 + e.depth(),
            Expr::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
            Expr::List(items) | Expr::Call(_, items) => {
                1 + items.iter().map(Expr::depth).max().unwrap_or(0)
            }
            Expr::Conditional(c, t, e) => 1 + c.depth().max(t.depth()).max(e.depth()),
            Expr::Record(ad) => 1 + ad.iter().map(|(_, e)| e.depth()).max().unwrap_or(0),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => match v {
                Value::Integer(i) if *i < 0 => write!(f, "({i})"),
                Value::Real(r) if *r < 0.0 => write!(f, "({})", format_real(*r)),
                Value::Text(s) => f.write_str(&quote(s)),
                other => write!(f, "{other}"),
            },
            Expr::AttrRef { scope, name } => match scope {
                Some(s) => write!(f, "{s}.{name}"),
                None => f.write_str(name),
            },
            Expr::Unary(op, e) => match op {
                UnaryOp::Not => write!(f, "(!{e})"),
                UnaryOp::Neg => write!(f, "(-{e})"),
            },
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::List(items) => {
                f.write_str("{")?;
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str("}")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, e) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str(")")
            }
            Expr::Conditional(c, t, e) => write!(f, "({c} ? {t} : {e})"),
            Expr::Record(ad) => write!(f, "{ad}"),
        }
    }
}

/// Attribute name to expression map. Lookups ignore ASCII case; the name as
/// first written is kept for display.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassAd {
    entries: Vec<(String, Expr)>,
}

impl ClassAd {
    pub fn new() -> ClassAd {
        ClassAd::default()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(n, _)| n.eq_ignore_ascii_case(name))
    }

    /// Adds a new attribute; fails if the case-folded name already exists.
    pub fn insert(&mut self, name: impl Into<String>, expr: Expr) -> Result<(), String> {
        let name = name.into();
        if self.position(&name).is_some() {
            return Err(name);
        }
        self.entries.push((name, expr));
        Ok(())
    }

    /// Adds or replaces an attribute, keeping its position when replacing.
    pub fn set(&mut self, name: impl Into<String>, expr: Expr) {
        let name = name.into();
        match self.position(&name) {
            Some(i) => self.entries[i].1 = expr,
            None => self.entries.push((name, expr)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Expr> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    pub fn remove(&mut self, name: &str) -> Option<Expr> {
        self.position(name).map(|i| self.entries.remove(i).1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Evaluates an attribute with this ad as `self` and nothing else bound.
    pub fn eval_attr(&self, name: &str) -> Value {
        match self.get(name) {
            None => Value::Undefined,
            Some(e) => super::eval::evaluate(e, &super::eval::MatchContext::new(self)),
        }
    }

    pub fn get_text(&self, name: &str) -> Option<String> {
        match self.eval_attr(name) {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn get_int(&self, name: &str) -> Option<i64> {
        self.eval_attr(name).as_i64()
    }

    pub fn set_text(&mut self, name: &str, value: impl Into<String>) {
        self.set(name, Expr::text(value));
    }

    pub fn set_int(&mut self, name: &str, value: i64) {
        self.set(name, Expr::int(value));
    }

    /// Multi-line rendering used for files.
    pub fn to_pretty(&self) -> String {
        let mut out = String::from("[\n");
        for (n, e) in &self.entries {
            out.push_str("  ");
            out.push_str(n);
            out.push_str(" = ");
            out.push_str(&e.to_string());
            out.push_str(";\n");
        }
        out.push(']');
        out
    }
}

impl fmt::Display for ClassAd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[ ")?;
        for (n, e) in &self.entries {
            write!(f, "{n} = {e}; ")?;
        }
        f.write_str("]")
    }
}
