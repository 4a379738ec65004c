//! Three-valued evaluation over one or more bound ads.

use std::cmp::Ordering;

use super::ast::{BinaryOp, Builtin, ClassAd, Expr, UnaryOp};
use super::value::Value;

const MAX_DEPTH: usize = 128;

/// Scope bindings for evaluation. `self` is always bound.
#[derive(Debug, Clone)]
pub struct MatchContext<'a> {
    bindings: Vec<(String, &'a ClassAd)>,
}

impl<'a> MatchContext<'a> {
    pub fn new(self_ad: &'a ClassAd) -> MatchContext<'a> {
        MatchContext {
            bindings: vec![("self".to_string(), self_ad)],
        }
    }

    /// Binds (or rebinds) a scope name; names are case-insensitive.
    pub fn bind(mut self, scope: &str, ad: &'a ClassAd) -> MatchContext<'a> {
        let scope = scope.to_ascii_lowercase();
        match self.bindings.iter_mut().find(|(s, _)| *s == scope) {
            Some(slot) => slot.1 = ad,
            None => self.bindings.push((scope, ad)),
        }
        self
    }

    pub fn get(&self, scope: &str) -> Option<&'a ClassAd> {
        self.bindings
            .iter()
            .find(|(s, _)| s == scope)
            .map(|(_, ad)| *ad)
    }

    pub fn self_ad(&self) -> &'a ClassAd {
        self.get("self").expect("self is always bound")
    }
}

pub fn evaluate(expr: &Expr, ctx: &MatchContext<'_>) -> Value {
    eval(expr, ctx, 0)
}

/// Same semantics as [`evaluate`]; `ce.` and `se.` references resolve in the
/// ads bound under those names.
pub fn evaluate_multi_scope(expr: &Expr, ctx: &MatchContext<'_>) -> Value {
    eval(expr, ctx, 0)
}

fn eval(expr: &Expr, ctx: &MatchContext<'_>, depth: usize) -> Value {
    if depth > MAX_DEPTH {
        return Value::error("evaluation depth limit exceeded");
    }
    match expr {
        Expr::Literal(v) => v.clone(),
        Expr::AttrRef { scope, name } => resolve(scope.as_deref(), name, ctx, depth),
        Expr::Unary(op, e) => unary(*op, eval(e, ctx, depth + 1)),
        Expr::Binary(op, l, r) => {
            let lv = eval(l, ctx, depth + 1);
            let rv = eval(r, ctx, depth + 1);
            binary(*op, lv, rv)
        }
        Expr::List(items) => Value::List(items.iter().map(|e| eval(e, ctx, depth + 1)).collect()),
        Expr::Call(func, args) => {
            let vals: Vec<Value> = args.iter().map(|e| eval(e, ctx, depth + 1)).collect();
            call(*func, vals)
        }
        Expr::Conditional(c, t, e) => match eval(c, ctx, depth + 1) {
            Value::Boolean(true) => eval(t, ctx, depth + 1),
            Value::Boolean(false) => eval(e, ctx, depth + 1),
            Value::Undefined => Value::Undefined,
            Value::Error(m) => Value::Error(m),
            other => Value::error(format!("condition is {}", other.type_name())),
        },
        Expr::Record(_) => Value::error("nested ad is not a value"),
    }
}

fn resolve(scope: Option<&str>, name: &str, ctx: &MatchContext<'_>, depth: usize) -> Value {
    let scope = scope.unwrap_or("self");
    let Some(target) = ctx.get(scope) else {
        return Value::Undefined;
    };
    let Some(expr) = target.get(name) else {
        return Value::Undefined;
    };
    // The referenced attribute is evaluated from the point of view of the ad
    // that holds it; following `other` swaps the two roles.
    let mut inner = ctx.clone().bind("self", target);
    if scope == "other" {
        inner = inner.bind("other", ctx.self_ad());
    }
    eval(expr, &inner, depth + 1)
}

fn unary(op: UnaryOp, v: Value) -> Value {
    match (op, v) {
        (_, Value::Error(m)) => Value::Error(m),
        (_, Value::Undefined) => Value::Undefined,
        (UnaryOp::Not, Value::Boolean(b)) => Value::Boolean(!b),
        (UnaryOp::Neg, Value::Integer(i)) => i
            .checked_neg()
            .map(Value::Integer)
            .unwrap_or_else(|| Value::error("integer overflow")),
        (UnaryOp::Neg, Value::Real(r)) => Value::Real(-r),
        (UnaryOp::Not, other) => Value::error(format!("'!' applied to {}", other.type_name())),
        (UnaryOp::Neg, other) => Value::error(format!("'-' applied to {}", other.type_name())),
    }
}

fn as_bool3(v: &Value) -> Result<Option<bool>, Value> {
    match v {
        Value::Boolean(b) => Ok(Some(*b)),
        Value::Undefined => Ok(None),
        Value::Error(m) => Err(Value::Error(m.clone())),
        other => Err(Value::error(format!(
            "logical operator applied to {}",
            other.type_name()
        ))),
    }
}

fn binary(op: BinaryOp, l: Value, r: Value) -> Value {
    match op {
        BinaryOp::And | BinaryOp::Or => {
            let (a, b) = match (as_bool3(&l), as_bool3(&r)) {
                (Err(e), _) | (_, Err(e)) => return e,
                (Ok(a), Ok(b)) => (a, b),
            };
            let dominant = op == BinaryOp::Or;
            if a == Some(dominant) || b == Some(dominant) {
                Value::Boolean(dominant)
            } else if a.is_none() || b.is_none() {
                Value::Undefined
            } else {
                Value::Boolean(!dominant)
            }
        }
        _ => {
            if let Value::Error(m) = l {
                return Value::Error(m);
            }
            if let Value::Error(m) = r {
                return Value::Error(m);
            }
            if l.is_undefined() || r.is_undefined() {
                return Value::Undefined;
            }
            match op {
                BinaryOp::Eq => match equals(&l, &r) {
                    Ok(b) => Value::Boolean(b),
                    Err(e) => e,
                },
                BinaryOp::Ne => match equals(&l, &r) {
                    Ok(b) => Value::Boolean(!b),
                    Err(e) => e,
                },
                BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                    match compare(&l, &r) {
                        Ok(ord) => Value::Boolean(match op {
                            BinaryOp::Lt => ord == Ordering::Less,
                            BinaryOp::Le => ord != Ordering::Greater,
                            BinaryOp::Gt => ord == Ordering::Greater,
                            _ => ord != Ordering::Less,
                        }),
                        Err(e) => e,
                    }
                }
                _ => arithmetic(op, &l, &r),
            }
        }
    }
}

fn arithmetic(op: BinaryOp, l: &Value, r: &Value) -> Value {
    match (l, r) {
        (Value::Integer(a), Value::Integer(b)) => {
            let (a, b) = (*a, *b);
            let out = match op {
                BinaryOp::Add => a.checked_add(b),
                BinaryOp::Sub => a.checked_sub(b),
                BinaryOp::Mul => a.checked_mul(b),
                BinaryOp::Div | BinaryOp::Mod if b == 0 => {
                    return Value::error("division by zero")
                }
                BinaryOp::Div => a.checked_div(b),
                BinaryOp::Mod => a.checked_rem(b),
                _ => unreachable!("not arithmetic"),
            };
            out.map(Value::Integer)
                .unwrap_or_else(|| Value::error("integer overflow"))
        }
        _ => {
            let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
                return Value::error(format!(
                    "'{}' applied to {} and {}",
                    op.symbol(),
                    l.type_name(),
                    r.type_name()
                ));
            };
            let out = match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div | BinaryOp::Mod if b == 0.0 => {
                    return Value::error("division by zero")
                }
                BinaryOp::Div => a / b,
                BinaryOp::Mod => a % b,
                _ => unreachable!("not arithmetic"),
            };
            if out.is_finite() {
                Value::Real(out)
            } else {
                Value::error("real overflow")
            }
        }
    }
}

/// Equality: numbers compare across integer/real, strings ignore ASCII case,
/// lists compare element-wise. Mismatched types are an error.
pub(crate) fn equals(l: &Value, r: &Value) -> Result<bool, Value> {
    match (l, r) {
        (Value::Integer(a), Value::Integer(b)) => Ok(a == b),
        (Value::Text(a), Value::Text(b)) => Ok(a.eq_ignore_ascii_case(b)),
        (Value::Boolean(a), Value::Boolean(b)) => Ok(a == b),
        (Value::List(a), Value::List(b)) => {
            if a.len() != b.len() {
                return Ok(false);
            }
            for (x, y) in a.iter().zip(b) {
                if !equals(x, y)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        (Value::Undefined, Value::Undefined) => Ok(true),
        (Value::Error(m), _) | (_, Value::Error(m)) => Err(Value::Error(m.clone())),
        _ => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => Ok(a == b),
            _ => Err(Value::error(format!(
                "cannot compare {} with {}",
                l.type_name(),
                r.type_name()
            ))),
        },
    }
}

fn compare(l: &Value, r: &Value) -> Result<Ordering, Value> {
    match (l, r) {
        (Value::Integer(a), Value::Integer(b)) => Ok(a.cmp(b)),
        (Value::Text(a), Value::Text(b)) => Ok(a.to_ascii_lowercase().cmp(&b.to_ascii_lowercase())),
        _ => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => a
                .partial_cmp(&b)
                .ok_or_else(|| Value::error("unordered reals")),
            _ => Err(Value::error(format!(
                "cannot order {} and {}",
                l.type_name(),
                r.type_name()
            ))),
        },
    }
}

fn call(func: Builtin, args: Vec<Value>) -> Value {
    let arity = match func {
        Builtin::Member => 2,
        Builtin::Length | Builtin::ToLower => 1,
    };
    if args.len() != arity {
        return Value::error(format!(
            "{}() takes {arity} argument(s), got {}",
            func.name(),
            args.len()
        ));
    }
    if let Some(e) = args.iter().find(|v| v.is_error()) {
        return e.clone();
    }
    if args.iter().any(Value::is_undefined) {
        return Value::Undefined;
    }
    match func {
        Builtin::Member => match &args[1] {
            Value::List(items) => {
                Value::Boolean(items.iter().any(|v| equals(&args[0], v) == Ok(true)))
            }
            other => Value::error(format!("member() needs a list, got {}", other.type_name())),
        },
        Builtin::Length => match &args[0] {
            Value::List(items) => Value::Integer(items.len() as i64),
            Value::Text(s) => Value::Integer(s.chars().count() as i64),
            other => Value::error(format!("length() of {}", other.type_name())),
        },
        Builtin::ToLower => match &args[0] {
            Value::Text(s) => Value::Text(s.to_lowercase()),
            other => Value::error(format!("tolower() of {}", other.type_name())),
        },
    }
}

/// Symmetric match: each side's `Requirements` must be `true` with the other
/// ad bound as `other`. A missing `Requirements` counts as satisfied.
pub fn match_two(a: &ClassAd, b: &ClassAd) -> bool {
    requirements_hold(a, b) && requirements_hold(b, a)
}

fn requirements_hold(me: &ClassAd, other: &ClassAd) -> bool {
    match me.get("requirements") {
        None => true,
        Some(req) => evaluate(req, &MatchContext::new(me).bind("other", other)).is_true(),
    }
}

/// A rank value and, when the rank could not be used as a number, why.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank {
    pub value: f64,
    pub diagnostic: Option<String>,
}

/// Evaluates `a.Rank` against `b`. Non-numeric results rank as 0.0.
pub fn rank_of(a: &ClassAd, b: &ClassAd) -> Rank {
    rank_in(a, &MatchContext::new(a).bind("other", b))
}

/// Evaluates the `Rank` of `ctx.self` under an arbitrary context.
pub fn rank_in(ad: &ClassAd, ctx: &MatchContext<'_>) -> Rank {
    let Some(expr) = ad.get("rank") else {
        return Rank {
            value: 0.0,
            diagnostic: None,
        };
    };
    match evaluate(expr, ctx) {
        Value::Integer(i) => Rank {
            value: i as f64,
            diagnostic: None,
        },
        Value::Real(r) => Rank {
            value: r,
            diagnostic: None,
        },
        other => {
            let msg = format!("rank evaluated to {}, using 0.0", other.type_name());
            log::debug!("{msg}");
            Rank {
                value: 0.0,
                diagnostic: Some(msg),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::{parse_ad, parse_expr};
    use super::*;

    fn eval_in(src: &str, ad: &ClassAd) -> Value {
        evaluate(&parse_expr(src).unwrap(), &MatchContext::new(ad))
    }

    #[test]
    fn arithmetic_basics() {
        let ad = ClassAd::new();
        assert_eq!(eval_in("1 + 2", &ad), Value::Integer(3));
        assert_eq!(eval_in("7 / 2", &ad), Value::Integer(3));
        assert_eq!(eval_in("7.0 / 2", &ad), Value::Real(3.5));
        assert!(eval_in("1 / 0", &ad).is_error());
        assert!(eval_in("1 % 0", &ad).is_error());
        assert!(eval_in("9223372036854775807 + 1", &ad).is_error());
        assert!(eval_in("-(-9223372036854775807 - 1)", &ad).is_error());
        assert!(eval_in("1e308 * 10", &ad).is_error());
    }

    #[test]
    fn undefined_and_false_is_false() {
        let ad = ClassAd::new();
        assert_eq!(eval_in("undefinedAttr && false", &ad), Value::Boolean(false));
    }

    #[test]
    fn lenient_logic_table() {
        let ad = ClassAd::new();
        let lit = ["true", "false", "undefined"];
        let b3 = |s: &str| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        };
        for a in lit {
            for b in lit {
                let (x, y) = (b3(a), b3(b));
                let and = match (x, y) {
                    (Some(false), _) | (_, Some(false)) => Value::Boolean(false),
                    (None, _) | (_, None) => Value::Undefined,
                    _ => Value::Boolean(true),
                };
                let or = match (x, y) {
                    (Some(true), _) | (_, Some(true)) => Value::Boolean(true),
                    (None, _) | (_, None) => Value::Undefined,
                    _ => Value::Boolean(false),
                };
                assert_eq!(eval_in(&format!("{a} && {b}"), &ad), and, "{a} && {b}");
                assert_eq!(eval_in(&format!("{a} || {b}"), &ad), or, "{a} || {b}");
            }
        }
    }

    #[test]
    fn equality_with_undefined_is_undefined() {
        let ad = ClassAd::new();
        assert_eq!(eval_in("x == 1", &ad), Value::Undefined);
        assert_eq!(eval_in("x != 1", &ad), Value::Undefined);
        assert!(eval_in("error == x", &ad).is_error());
    }

    #[test]
    fn member_scans_the_list() {
        let ad = parse_ad(r#"[ CloseSEs = {"SE1", "SE2"} ]"#).unwrap();
        assert_eq!(
            eval_in(r#"member("SE1", self.CloseSEs)"#, &ad),
            Value::Boolean(true)
        );
        assert_eq!(
            eval_in(r#"member("SE3", CloseSEs)"#, &ad),
            Value::Boolean(false)
        );
        assert_eq!(eval_in("length(CloseSEs)", &ad), Value::Integer(2));
        assert_eq!(eval_in(r#"tolower("AbC")"#, &ad), Value::text("abc"));
        assert!(eval_in("member(1)", &ad).is_error());
    }

    #[test]
    fn references_follow_scopes_and_swap_roles() {
        let job = parse_ad("[ Want = 2; Requirements = other.Free >= Want ]").unwrap();
        let ce = parse_ad("[ Total = 4; Free = Total - 1; Requirements = other.Want < 3 ]")
            .unwrap();
        assert!(match_two(&job, &ce));
        assert!(match_two(&ce, &job));
    }

    #[test]
    fn self_reference_cycles_terminate_with_error() {
        let ad = parse_ad("[ a = b + 1; b = a + 1 ]").unwrap();
        assert!(ad.eval_attr("a").is_error());
    }

    #[test]
    fn match_examples() {
        let job = parse_ad("[ Requirements = other.FreeCPUs > 0 ]").unwrap();
        let ce1 = parse_ad("[ FreeCPUs = 4 ]").unwrap();
        let ce2 = parse_ad("[ FreeCPUs = 0 ]").unwrap();
        assert!(match_two(&job, &ce1));
        assert!(!match_two(&job, &ce2));
        assert!(match_two(&ClassAd::new(), &ClassAd::new()));
    }

    #[test]
    fn rank_examples() {
        let ce1 = parse_ad("[ FreeCPUs = 4 ]").unwrap();
        let job = parse_ad("[ Rank = other.FreeCPUs ]").unwrap();
        assert_eq!(rank_of(&job, &ce1).value, 4.0);
        let r = rank_of(&ClassAd::new(), &ce1);
        assert_eq!((r.value, r.diagnostic), (0.0, None));
        let r = rank_of(&parse_ad(r#"[ Rank = "abc" ]"#).unwrap(), &ce1);
        assert_eq!(r.value, 0.0);
        assert!(r.diagnostic.is_some());
    }

    #[test]
    fn multi_scope_examples() {
        let job = ClassAd::new();
        let ce1 = parse_ad(r#"[ FreeCPUs = 4; CloseSEs = {"SE1"} ]"#).unwrap();
        let se1 = parse_ad("[ AvailableSpace = 1000 ]").unwrap();
        let ctx = MatchContext::new(&job).bind("ce", &ce1).bind("se", &se1);
        let e = parse_expr("se.AvailableSpace >= 500").unwrap();
        assert_eq!(evaluate_multi_scope(&e, &ctx), Value::Boolean(true));
        let e = parse_expr("ce.FreeCPUs > 0 && se.AvailableSpace >= 500").unwrap();
        assert_eq!(evaluate_multi_scope(&e, &ctx), Value::Boolean(true));
        let bare = MatchContext::new(&job);
        assert_eq!(
            evaluate_multi_scope(&parse_expr("se.X").unwrap(), &bare),
            Value::Undefined
        );
    }
}
