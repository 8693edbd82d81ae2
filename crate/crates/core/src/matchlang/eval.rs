//! Three-valued expression evaluation against a pair of ads.

use std::cmp::Ordering;

use super::ad::{Ad, Lookup};
use super::ast::{BinaryOp, Expr, Func, Scope, UnaryOp};
use super::value::Value;

/// Maximum number of nested attribute resolutions before evaluation gives up
/// with an error value.
pub const MAX_RESOLUTION_DEPTH: usize = 32;

/// Evaluates `expr` with `my` as the evaluating ad and `target` as the other
/// side of the match.
///
/// Missing attributes are `Undefined`; a reference cycle is `Undefined`; a
/// non-cyclic chain deeper than [`MAX_RESOLUTION_DEPTH`] is an `Error` value.
pub fn evaluate(expr: &Expr, my: &Ad, target: Option<&Ad>) -> Value {
    let mut ev = Evaluator {
        ads: [Some(my), target],
        stack: Vec::new(),
    };
    ev.eval(expr, 0)
}

struct Evaluator<'a> {
    ads: [Option<&'a Ad>; 2],
    stack: Vec<(usize, &'a str)>,
}

impl<'a> Evaluator<'a> {
    fn eval(&mut self, expr: &'a Expr, me: usize) -> Value {
        match expr {
            Expr::Literal(v) => v.clone(),
            Expr::AttrRef { scope, name } => match scope {
                Scope::My => self.resolve(me, name),
                Scope::Target => self.resolve(1 - me, name),
                Scope::Unscoped => {
                    if self.defines(me, name) {
                        self.resolve(me, name)
                    } else {
                        self.resolve(1 - me, name)
                    }
                }
            },
            Expr::Unary { op, operand } => {
                let v = self.eval(operand, me);
                unary(*op, v)
            }
            Expr::Binary { op, lhs, rhs } => match op {
                BinaryOp::And => {
                    let l = self.eval(lhs, me);
                    kleene_and(l, || self.eval(rhs, me))
                }
                BinaryOp::Or => {
                    let l = self.eval(lhs, me);
                    kleene_or(l, || self.eval(rhs, me))
                }
                _ => {
                    let l = self.eval(lhs, me);
                    let r = self.eval(rhs, me);
                    binary(*op, l, r)
                }
            },
            Expr::Call { func, args } => {
                let (min, max) = func.arity();
                if args.len() < min || max.is_some_and(|m| args.len() > m) {
                    return Value::error(format!("wrong number of arguments to {}", func.name()));
                }
                let vals: Vec<Value> = args.iter().map(|a| self.eval(a, me)).collect();
                call(*func, vals)
            }
        }
    }

    fn defines(&self, side: usize, name: &str) -> bool {
        self.ads[side].is_some_and(|ad| ad.lookup(name).is_some())
    }

    fn resolve(&mut self, side: usize, name: &'a str) -> Value {
        let Some(ad) = self.ads[side] else {
            return Value::Undefined;
        };
        let expr = match ad.lookup(name) {
            None => return Value::Undefined,
            Some(Lookup::Kind(kind)) => return Value::Text(kind.as_str().to_string()),
            Some(Lookup::Expr(e)) => e,
        };
        if self.stack.iter().any(|&(s, n)| s == side && n == name) {
            return Value::Undefined;
        }
        if self.stack.len() >= MAX_RESOLUTION_DEPTH {
            return Value::error("attribute resolution depth exceeded");
        }
        self.stack.push((side, name));
        let v = self.eval(expr, side);
        self.stack.pop();
        v
    }
}

enum Truth {
    True,
    False,
    Unknown,
    Err(Value),
}

fn truth(v: Value) -> Truth {
    match v {
        Value::Boolean(true) => Truth::True,
        Value::Boolean(false) => Truth::False,
        Value::Undefined => Truth::Unknown,
        Value::Error(_) => Truth::Err(v),
        other => Truth::Err(Value::error(format!(
            "logical operator applied to {}",
            other.type_name()
        ))),
    }
}

fn kleene_and(lhs: Value, rhs: impl FnOnce() -> Value) -> Value {
    match truth(lhs) {
        Truth::False => Value::Boolean(false),
        Truth::Err(e) => e,
        Truth::True => match truth(rhs()) {
            Truth::True => Value::Boolean(true),
            Truth::False => Value::Boolean(false),
            Truth::Unknown => Value::Undefined,
            Truth::Err(e) => e,
        },
        Truth::Unknown => match truth(rhs()) {
            Truth::False => Value::Boolean(false),
            Truth::True | Truth::Unknown => Value::Undefined,
            Truth::Err(e) => e,
        },
    }
}

fn kleene_or(lhs: Value, rhs: impl FnOnce() -> Value) -> Value {
    match truth(lhs) {
        Truth::True => Value::Boolean(true),
        Truth::Err(e) => e,
        Truth::False => match truth(rhs()) {
            Truth::True => Value::Boolean(true),
            Truth::False => Value::Boolean(false),
            Truth::Unknown => Value::Undefined,
            Truth::Err(e) => e,
        },
        Truth::Unknown => match truth(rhs()) {
            Truth::True => Value::Boolean(true),
            Truth::False | Truth::Unknown => Value::Undefined,
            Truth::Err(e) => e,
        },
    }
}

fn unary(op: UnaryOp, v: Value) -> Value {
    match (op, v) {
        (_, e @ Value::Error(_)) => e,
        (_, Value::Undefined) => Value::Undefined,
        (UnaryOp::Not, Value::Boolean(b)) => Value::Boolean(!b),
        (UnaryOp::Neg, Value::Integer(i)) => i
            .checked_neg()
            .map(Value::Integer)
            .unwrap_or_else(|| Value::error("integer overflow")),
        (UnaryOp::Neg, Value::Real(r)) => Value::Real(-r),
        (op, other) => Value::error(format!(
            "cannot apply {} to {}",
            if op == UnaryOp::Not { "!" } else { "-" },
            other.type_name()
        )),
    }
}

fn mismatch(op: BinaryOp, l: &Value, r: &Value) -> Value {
    Value::error(format!(
        "type mismatch: {} {} {}",
        l.type_name(),
        op.symbol(),
        r.type_name()
    ))
}

fn binary(op: BinaryOp, l: Value, r: Value) -> Value {
    if l.is_error() {
        return l;
    }
    if r.is_error() {
        return r;
    }
    if l.is_undefined() || r.is_undefined() {
        return Value::Undefined;
    }
    match op {
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div | BinaryOp::Mod => {
            arithmetic(op, &l, &r)
        }
        BinaryOp::Lt
        | BinaryOp::Le
        | BinaryOp::Gt
        | BinaryOp::Ge
        | BinaryOp::Eq
        | BinaryOp::Ne => compare(op, &l, &r),
        BinaryOp::And | BinaryOp::Or => unreachable!("logical operators are evaluated lazily"),
    }
}

fn arithmetic(op: BinaryOp, l: &Value, r: &Value) -> Value {
    let overflow = || Value::error("integer overflow");
    match (l, r) {
        (Value::Integer(a), Value::Integer(b)) => {
            let (a, b) = (*a, *b);
            match op {
                BinaryOp::Add => a.checked_add(b).map(Value::Integer).unwrap_or_else(overflow),
                BinaryOp::Sub => a.checked_sub(b).map(Value::Integer).unwrap_or_else(overflow),
                BinaryOp::Mul => a.checked_mul(b).map(Value::Integer).unwrap_or_else(overflow),
                BinaryOp::Div if b == 0 => Value::error("division by zero"),
                BinaryOp::Div => a.checked_div(b).map(Value::Integer).unwrap_or_else(overflow),
                BinaryOp::Mod if b == 0 => Value::error("division by zero"),
                BinaryOp::Mod => a.checked_rem(b).map(Value::Integer).unwrap_or_else(overflow),
                _ => unreachable!(),
            }
        }
        _ => match (l.as_f64(), r.as_f64()) {
            (Some(a), Some(b)) => match op {
                BinaryOp::Add => Value::Real(a + b),
                BinaryOp::Sub => Value::Real(a - b),
                BinaryOp::Mul => Value::Real(a * b),
                BinaryOp::Div | BinaryOp::Mod if b == 0.0 => Value::error("division by zero"),
                BinaryOp::Div => Value::Real(a / b),
                BinaryOp::Mod => Value::Real(a % b),
                _ => unreachable!(),
            },
            _ => mismatch(op, l, r),
        },
    }
}

fn compare(op: BinaryOp, l: &Value, r: &Value) -> Value {
    let ord: Option<Ordering> = match (l, r) {
        (Value::Integer(a), Value::Integer(b)) => Some(a.cmp(b)),
        (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
        (Value::Boolean(a), Value::Boolean(b)) => {
            return match op {
                BinaryOp::Eq => Value::Boolean(a == b),
                BinaryOp::Ne => Value::Boolean(a != b),
                _ => mismatch(op, l, r),
            };
        }
        _ => match (l.as_f64(), r.as_f64()) {
            // NaN compares unordered: every relation is false except `!=`.
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => return mismatch(op, l, r),
        },
    };
    let result = match ord {
        None => op == BinaryOp::Ne,
        Some(o) => match op {
            BinaryOp::Lt => o == Ordering::Less,
            BinaryOp::Le => o != Ordering::Greater,
            BinaryOp::Gt => o == Ordering::Greater,
            BinaryOp::Ge => o != Ordering::Less,
            BinaryOp::Eq => o == Ordering::Equal,
            BinaryOp::Ne => o != Ordering::Equal,
            _ => unreachable!(),
        },
    };
    Value::Boolean(result)
}

fn call(func: Func, mut args: Vec<Value>) -> Value {
    if func == Func::IsUndefined {
        return Value::Boolean(args[0].is_undefined());
    }
    if let Some(e) = args.iter().find(|v| v.is_error()) {
        return e.clone();
    }
    if args.iter().any(Value::is_undefined) {
        return Value::Undefined;
    }
    if let Some(bad) = args.iter().find(|v| v.as_f64().is_none()) {
        return Value::error(format!("{} expects numbers, got {}", func.name(), bad.type_name()));
    }
    match func {
        Func::Min | Func::Max => {
            let want = if func == Func::Min { Ordering::Less } else { Ordering::Greater };
            if args.iter().all(|v| matches!(v, Value::Integer(_))) {
                let ints = args.iter().filter_map(Value::as_i64);
                let best = if func == Func::Min { ints.min() } else { ints.max() };
                Value::Integer(best.expect("arity checked"))
            } else {
                let mut best = args[0].as_f64().expect("numeric");
                for v in &args[1..] {
                    let x = v.as_f64().expect("numeric");
                    if x.partial_cmp(&best) == Some(want) {
                        best = x;
                    }
                }
                Value::Real(best)
            }
        }
        Func::Abs => match args.swap_remove(0) {
            Value::Integer(i) => i
                .checked_abs()
                .map(Value::Integer)
                .unwrap_or_else(|| Value::error("integer overflow")),
            v => Value::Real(v.as_f64().expect("numeric").abs()),
        },
        Func::Floor | Func::Ceil => match args.swap_remove(0) {
            Value::Integer(i) => Value::Integer(i),
            v => {
                let r = v.as_f64().expect("numeric");
                let rounded = if func == Func::Floor { r.floor() } else { r.ceil() };
                if rounded.is_finite() && rounded >= i64::MIN as f64 && rounded < i64::MAX as f64 {
                    Value::Integer(rounded as i64)
                } else {
                    Value::error(format!("{} result out of integer range", func.name()))
                }
            }
        },
        Func::IsUndefined => unreachable!(),
    }
}
