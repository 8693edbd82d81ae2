use std::fmt;

use super::value::Value;

/// Which ad an attribute reference resolves against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// `MY.name` (also accepted as `SELF.name`).
    My,
    /// `TARGET.name`.
    Target,
    /// Bare `name`: looked up in the evaluating ad first, then in the target.
    Unscoped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
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
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Mod,
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
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Min,
    Max,
    Abs,
    Floor,
    Ceil,
    IsUndefined,
}

impl Func {
    pub const ALL: [Func; 6] = [
        Func::Min,
        Func::Max,
        Func::Abs,
        Func::Floor,
        Func::Ceil,
        Func::IsUndefined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Floor => "floor",
            Func::Ceil => "ceil",
            Func::IsUndefined => "isUndefined",
        }
    }

    /// Case-insensitive lookup of a function name.
    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }

    /// Accepted argument counts as (min, max); `None` means unbounded.
    pub fn arity(self) -> (usize, Option<usize>) {
        match self {
            Func::Min | Func::Max => (1, None),
            Func::Abs | Func::Floor | Func::Ceil | Func::IsUndefined => (1, Some(1)),
        }
    }
}

/// Expression tree. Attribute names are stored lowercase.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    AttrRef { scope: Scope, name: String },
    Unary { op: UnaryOp, operand: Box<Expr> },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { func: Func, args: Vec<Expr> },
}

impl Expr {
    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn attr(scope: Scope, name: &str) -> Expr {
        Expr::AttrRef {
            scope,
            name: name.to_ascii_lowercase(),
        }
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary {
            op,
            operand: Box::new(operand),
        }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn call(func: Func, args: Vec<Expr>) -> Expr {
        Expr::Call { func, args }
    }

    /// True if any attribute reference in the tree names `attr` (any scope).
    pub fn references(&self, attr: &str) -> bool {
        match self {
            Expr::Literal(_) => false,
            Expr::AttrRef { name, .. } => name == attr,
            Expr::Unary { operand, .. } => operand.references(attr),
            Expr::Binary { lhs, rhs, .. } => lhs.references(attr) || rhs.references(attr),
            Expr::Call { args, .. } => args.iter().any(|a| a.references(attr)),
        }
    }

    /// Canonical text form; `parse(e.unparse())` is structurally equal to `e`.
    pub fn unparse(&self) -> String {
        self.to_string()
    }
}

fn needs_parens(child: &Expr) -> bool {
    matches!(
        child,
        Expr::Binary { .. } | Expr::Unary { op: UnaryOp::Not, .. }
    )
}

fn write_operand(f: &mut fmt::Formatter<'_>, child: &Expr) -> fmt::Result {
    if needs_parens(child) {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

/// Fully parenthesized canonical form: every nested binary operand is wrapped,
/// negation always wraps its operand (`-(x)`), so a negative literal `-5`
/// never collides with `Neg(5)`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::AttrRef { scope, name } => match scope {
                Scope::My => write!(f, "MY.{name}"),
                Scope::Target => write!(f, "TARGET.{name}"),
                Scope::Unscoped => f.write_str(name),
            },
            Expr::Unary {
                op: UnaryOp::Not,
                operand,
            } => {
                f.write_str("!")?;
                write_operand(f, operand)
            }
            Expr::Unary {
                op: UnaryOp::Neg,
                operand,
            } => write!(f, "-({operand})"),
            Expr::Binary { op, lhs, rhs } => {
                write_operand(f, lhs)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, rhs)
            }
            Expr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
