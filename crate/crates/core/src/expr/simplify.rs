//! Rewrite-based simplification.
//!
//! Every rule preserves semantics on the evaluable domain (rows where the
//! original tree evaluates to a finite value) and never increases node count.

use super::{BinaryOp, Expr, UnaryOp};

pub fn simplify(e: &Expr) -> Expr {
    let mut current = rewrite(e);
    // Rules can cascade (e.g. folding exposes an identity element one level
    // up); iterate to a fixpoint with a small bound.
    for _ in 0..8 {
        let next = rewrite(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn rewrite(e: &Expr) -> Expr {
    match e {
        Expr::Constant(_) | Expr::Variable(_) => e.clone(),
        Expr::Unary(op, child) => rewrite_unary(*op, rewrite(child)),
        Expr::Binary(op, left, right) => rewrite_binary(*op, rewrite(left), rewrite(right)),
    }
}

fn finite_constant(v: f64) -> Option<Expr> {
    v.is_finite().then(|| Expr::Constant(v))
}

fn rewrite_unary(op: UnaryOp, child: Expr) -> Expr {
    match (op, &child) {
        (UnaryOp::Neg, Expr::Constant(c)) => Expr::Constant(-c),
        (UnaryOp::Neg, Expr::Unary(UnaryOp::Neg, inner)) => (**inner).clone(),
        (_, Expr::Constant(c)) => {
            // Fold only when the result stays finite; `log(-1)` and friends
            // are left intact so evaluation reports them per row.
            let v = match op {
                UnaryOp::Neg => -c,
                UnaryOp::Sin => c.sin(),
                UnaryOp::Cos => c.cos(),
                UnaryOp::Exp => c.exp(),
                UnaryOp::Log => c.ln(),
                UnaryOp::Sqrt => c.sqrt(),
            };
            finite_constant(v).unwrap_or_else(|| Expr::unary(op, child.clone()))
        }
        _ => Expr::unary(op, child),
    }
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Constant(c) if *c == v)
}

fn rewrite_binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
    if let (Expr::Constant(a), Expr::Constant(b)) = (&left, &right) {
        let v = match op {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => a.powf(*b),
        };
        if let Some(folded) = finite_constant(v) {
            return folded;
        }
    }
    match op {
        BinaryOp::Add => {
            if is_const(&right, 0.0) {
                return left;
            }
            if is_const(&left, 0.0) {
                return right;
            }
        }
        BinaryOp::Sub => {
            if is_const(&right, 0.0) {
                return left;
            }
            if left == right {
                return Expr::Constant(0.0);
            }
            if is_const(&left, 0.0) {
                return Expr::unary(UnaryOp::Neg, right);
            }
        }
        BinaryOp::Mul => {
            if is_const(&right, 1.0) {
                return left;
            }
            if is_const(&left, 1.0) {
                return right;
            }
            if is_const(&left, 0.0) || is_const(&right, 0.0) {
                return Expr::Constant(0.0);
            }
        }
        BinaryOp::Div => {
            if is_const(&right, 1.0) {
                return left;
            }
            if left == right {
                return Expr::Constant(1.0);
            }
            if is_const(&left, 0.0) {
                return Expr::Constant(0.0);
            }
        }
        BinaryOp::Pow => {
            if is_const(&right, 1.0) {
                return left;
            }
            // IEEE pow(x, 0) is 1 for every x, including non-finite rows, so
            // this fold is exact.
            if is_const(&right, 0.0) {
                return Expr::Constant(1.0);
            }
        }
    }
    Expr::binary(op, left, right)
}
