//! Expression trees over a configurable operator grammar.
//!
//! An [`Expr`] is an immutable tree of constants, variables, and unary/binary
//! operators. The grammar available to a search is described by an
//! [`OperatorSet`], which also owns the variable names used when printing and
//! parsing. All operations here are pure; trees are cheap to clone and safe to
//! share across worker threads.

mod parse;
mod simplify;

pub use parse::parse;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;

/// Binary operators of the expression grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    /// All binary operators, in canonical order.
    pub const ALL: [BinaryOp; 5] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ];

    pub fn symbol(&self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Pow => "pow",
        }
    }

    pub fn from_name(name: &str) -> Option<BinaryOp> {
        BinaryOp::ALL.iter().copied().find(|op| op.name() == name)
    }

    fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            // IEEE semantics already match the real-valued contract: a
            // negative base with a non-integer exponent yields NaN, and
            // 0^negative yields +inf.
            BinaryOp::Pow => a.powf(b),
        }
    }
}

/// Unary operators of the expression grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    /// All unary operators, in canonical order.
    pub const ALL: [UnaryOp; 6] = [
        UnaryOp::Neg,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryOp> {
        UnaryOp::ALL.iter().copied().find(|op| op.name() == name)
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
            // Natural log; non-positive input yields a non-finite marker.
            UnaryOp::Log => x.ln(),
            UnaryOp::Sqrt => x.sqrt(),
        }
    }
}

/// Errors raised by grammar construction, parsing, and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("expression references variable {index} but only {width} columns are available")]
    DimensionMismatch { index: usize, width: usize },
    #[error("invalid operator set: {0}")]
    InvalidOperatorSet(String),
}

/// The grammar of hypotheses: which operators are admitted, whether literal
/// constants may appear, and the named variables expressions range over.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSet {
    binary: Vec<BinaryOp>,
    unary: Vec<UnaryOp>,
    allow_constants: bool,
    variables: Vec<String>,
}

impl OperatorSet {
    pub fn new(
        binary: &[BinaryOp],
        unary: &[UnaryOp],
        allow_constants: bool,
        variables: Vec<String>,
    ) -> Result<Self, ExprError> {
        if binary.is_empty() {
            return Err(ExprError::InvalidOperatorSet(
                "at least one binary operator is required".into(),
            ));
        }
        if variables.is_empty() {
            return Err(ExprError::InvalidOperatorSet(
                "at least one variable is required".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &variables {
            if v.is_empty() {
                return Err(ExprError::InvalidOperatorSet("empty variable name".into()));
            }
            if !seen.insert(v.clone()) {
                return Err(ExprError::InvalidOperatorSet(format!(
                    "duplicate variable name `{v}`"
                )));
            }
        }
        let mut binary = binary.to_vec();
        binary.sort();
        binary.dedup();
        let mut unary = unary.to_vec();
        unary.sort();
        unary.dedup();
        Ok(OperatorSet {
            binary,
            unary,
            allow_constants,
            variables,
        })
    }

    /// The default grammar: all arithmetic plus {sin, cos, exp, log, sqrt},
    /// with constants enabled. Special inverse-trigonometric operators are
    /// deliberately not part of the grammar.
    pub fn default_for(variables: Vec<String>) -> Result<Self, ExprError> {
        OperatorSet::new(
            &BinaryOp::ALL,
            &[
                UnaryOp::Sin,
                UnaryOp::Cos,
                UnaryOp::Exp,
                UnaryOp::Log,
                UnaryOp::Sqrt,
            ],
            true,
            variables,
        )
    }

    pub fn binary_ops(&self) -> &[BinaryOp] {
        &self.binary
    }

    pub fn unary_ops(&self) -> &[UnaryOp] {
        &self.unary
    }

    pub fn allow_constants(&self) -> bool {
        self.allow_constants
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variables
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn variable_name(&self, index: usize) -> Option<&str> {
        self.variables.get(index).map(|s| s.as_str())
    }

    /// Comma-separated variable list, for prompt binding.
    pub fn variables_line(&self) -> String {
        self.variables.join(", ")
    }

    /// Operator portion of the grammar description, for prompt binding.
    pub fn operators_line(&self) -> String {
        let binary = self
            .binary
            .iter()
            .map(|op| op.symbol())
            .collect::<Vec<_>>()
            .join(", ");
        let unary = self
            .unary
            .iter()
            .map(|op| op.name())
            .collect::<Vec<_>>()
            .join(", ");
        format!("binary: {binary}; unary: {unary}")
    }
}

/// Deterministic, human-readable description of a grammar. Used verbatim when
/// binding prompts.
pub fn describe_grammar(ops: &OperatorSet) -> String {
    format!("{}; variables: {}", ops.operators_line(), ops.variables_line())
}

/// An immutable expression tree. Variables are indices into the owning
/// [`OperatorSet`]'s variable list; constants are always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    Constant(f64),
    Variable(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        debug_assert!(value.is_finite(), "expression constants must be finite");
        Expr::Constant(value)
    }

    pub fn variable(index: usize) -> Expr {
        Expr::Variable(index)
    }

    /// Builds a unary node. Negation of a bare constant folds into a negative
    /// constant so that every constructible tree round-trips through its
    /// textual form.
    pub fn unary(op: UnaryOp, child: Expr) -> Expr {
        if op == UnaryOp::Neg {
            if let Expr::Constant(c) = child {
                return Expr::Constant(-c);
            }
        }
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    /// Total number of nodes; constants, variables, and operators each count
    /// as one.
    pub fn complexity(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Variable(_) => 1,
            Expr::Unary(_, child) => 1 + child.complexity(),
            Expr::Binary(_, left, right) => 1 + left.complexity() + right.complexity(),
        }
    }

    /// Tree depth; a lone leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Variable(_) => 1,
            Expr::Unary(_, child) => 1 + child.depth(),
            Expr::Binary(_, left, right) => 1 + left.depth().max(right.depth()),
        }
    }

    /// Sorted, deduplicated indices of the variables the tree references.
    pub fn variables_used(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_variables(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_variables(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Constant(_) => {}
            Expr::Variable(i) => out.push(*i),
            Expr::Unary(_, child) => child.collect_variables(out),
            Expr::Binary(_, left, right) => {
                left.collect_variables(out);
                right.collect_variables(out);
            }
        }
    }

    /// The subtree rooted at preorder index `index` (0 is the root).
    pub fn subtree(&self, index: usize) -> Option<&Expr> {
        let mut remaining = index;
        self.subtree_inner(&mut remaining)
    }

    fn subtree_inner<'a>(&'a self, remaining: &mut usize) -> Option<&'a Expr> {
        if *remaining == 0 {
            return Some(self);
        }
        *remaining -= 1;
        match self {
            Expr::Constant(_) | Expr::Variable(_) => None,
            Expr::Unary(_, child) => child.subtree_inner(remaining),
            Expr::Binary(_, left, right) => left
                .subtree_inner(remaining)
                .or_else(|| right.subtree_inner(remaining)),
        }
    }

    /// A copy of the tree with the subtree at preorder index `index` replaced.
    pub fn with_subtree(&self, index: usize, replacement: Expr) -> Expr {
        let mut remaining = index;
        self.with_subtree_inner(&mut remaining, &replacement)
    }

    fn with_subtree_inner(&self, remaining: &mut usize, replacement: &Expr) -> Expr {
        if *remaining == 0 {
            // Mark as consumed so sibling branches copy verbatim.
            *remaining = usize::MAX;
            return replacement.clone();
        }
        if *remaining == usize::MAX {
            return self.clone();
        }
        *remaining -= 1;
        match self {
            Expr::Constant(_) | Expr::Variable(_) => self.clone(),
            Expr::Unary(op, child) => Expr::Unary(
                *op,
                Box::new(child.with_subtree_inner(remaining, replacement)),
            ),
            Expr::Binary(op, left, right) => {
                let left = left.with_subtree_inner(remaining, replacement);
                let right = right.with_subtree_inner(remaining, replacement);
                Expr::Binary(*op, Box::new(left), Box::new(right))
            }
        }
    }

    /// Preorder indices of all leaf nodes.
    pub fn leaf_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = 0;
        self.visit_preorder(&mut |node| {
            if matches!(node, Expr::Constant(_) | Expr::Variable(_)) {
                out.push(idx);
            }
            idx += 1;
        });
        out
    }

    /// Preorder indices of all operator (non-leaf) nodes.
    pub fn operator_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = 0;
        self.visit_preorder(&mut |node| {
            if matches!(node, Expr::Unary(..) | Expr::Binary(..)) {
                out.push(idx);
            }
            idx += 1;
        });
        out
    }

    /// Preorder indices of all constant nodes.
    pub fn constant_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = 0;
        self.visit_preorder(&mut |node| {
            if matches!(node, Expr::Constant(_)) {
                out.push(idx);
            }
            idx += 1;
        });
        out
    }

    fn visit_preorder(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Constant(_) | Expr::Variable(_) => {}
            Expr::Unary(_, child) => child.visit_preorder(f),
            Expr::Binary(_, left, right) => {
                left.visit_preorder(f);
                right.visit_preorder(f);
            }
        }
    }

    /// Constant values in preorder.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_preorder(&mut |node| {
            if let Expr::Constant(c) = node {
                out.push(*c);
            }
        });
        out
    }

    /// Copy of the tree with constants replaced, in preorder. `values` must
    /// match the number of constant nodes.
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut iter = values.iter().copied();
        let out = self.with_constants_inner(&mut iter);
        debug_assert!(iter.next().is_none(), "constant count mismatch");
        out
    }

    fn with_constants_inner(&self, values: &mut impl Iterator<Item = f64>) -> Expr {
        match self {
            Expr::Constant(_) => Expr::Constant(values.next().expect("constant count mismatch")),
            Expr::Variable(i) => Expr::Variable(*i),
            Expr::Unary(op, child) => {
                Expr::Unary(*op, Box::new(child.with_constants_inner(values)))
            }
            Expr::Binary(op, left, right) => {
                let left = left.with_constants_inner(values);
                let right = right.with_constants_inner(values);
                Expr::Binary(*op, Box::new(left), Box::new(right))
            }
        }
    }

    /// Semantics-preserving simplification: constant folding, identity
    /// elements, cancellation, and double negation. Never increases node
    /// count.
    pub fn simplify(&self) -> Expr {
        simplify::simplify(self)
    }

    /// Evaluates the tree over every row of `data`. Numeric domain errors
    /// (log of a non-positive value, division by zero, fractional powers of
    /// negative bases) produce non-finite markers per row rather than errors.
    pub fn evaluate(&self, data: &Dataset) -> Result<Vec<f64>, ExprError> {
        let width = data.n_features();
        if let Some(&index) = self.variables_used().iter().find(|&&i| i >= width) {
            return Err(ExprError::DimensionMismatch { index, width });
        }
        Ok(self.eval_columns(data.columns(), data.n_rows()))
    }

    fn eval_columns(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        match self {
            Expr::Constant(c) => vec![*c; n_rows],
            Expr::Variable(i) => columns[*i].clone(),
            Expr::Unary(op, child) => {
                let mut vals = child.eval_columns(columns, n_rows);
                for v in &mut vals {
                    *v = op.apply(*v);
                }
                vals
            }
            Expr::Binary(op, left, right) => {
                let mut l = left.eval_columns(columns, n_rows);
                let r = right.eval_columns(columns, n_rows);
                for (a, b) in l.iter_mut().zip(r.iter()) {
                    *a = op.apply(*a, *b);
                }
                l
            }
        }
    }

    /// Evaluates the tree at a single point.
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self {
            Expr::Constant(c) => *c,
            Expr::Variable(i) => row.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Unary(op, child) => op.apply(child.eval_row(row)),
            Expr::Binary(op, left, right) => op.apply(left.eval_row(row), right.eval_row(row)),
        }
    }
}

fn fmt_constant(c: f64) -> String {
    // `{:?}` prints the shortest decimal form that round-trips exactly.
    // Negative constants are wrapped so they stay intact when re-parsed in
    // any operator position.
    if c.is_sign_negative() {
        format!("({:?})", c)
    } else {
        format!("{:?}", c)
    }
}

fn render(e: &Expr, ops: &OperatorSet, wrap: bool) -> String {
    match e {
        Expr::Constant(c) => fmt_constant(*c),
        Expr::Variable(i) => ops
            .variable_name(*i)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("v{i}")),
        Expr::Unary(UnaryOp::Neg, child) => {
            let inner = format!("-{}", render(child, ops, true));
            if wrap {
                format!("({inner})")
            } else {
                inner
            }
        }
        Expr::Unary(op, child) => format!("{}({})", op.name(), render(child, ops, false)),
        Expr::Binary(op, left, right) => {
            let inner = format!(
                "{} {} {}",
                render(left, ops, true),
                op.symbol(),
                render(right, ops, true)
            );
            if wrap {
                format!("({inner})")
            } else {
                inner
            }
        }
    }
}

/// Serializes a tree to fully parenthesized infix text. `parse(format(e))`
/// reconstructs a structurally identical tree.
pub fn format(e: &Expr, ops: &OperatorSet) -> String {
    render(e, ops, true)
}

/// Draws a random expression of depth at most `max_depth`. Leaves are
/// variables and (when the grammar allows them) constants.
pub fn random_expr(ops: &OperatorSet, max_depth: usize, rng: &mut impl Rng) -> Expr {
    assert!(max_depth >= 1, "max_depth must be at least 1");
    random_expr_inner(ops, max_depth, rng)
}

fn random_leaf(ops: &OperatorSet, rng: &mut impl Rng) -> Expr {
    let constant_prob = if ops.allow_constants() { 0.3 } else { 0.0 };
    if rng.gen_bool(constant_prob) {
        let normal = Normal::new(0.0, 2.0).expect("valid normal");
        let mut c: f64 = normal.sample(rng);
        if !c.is_finite() {
            c = 1.0;
        }
        Expr::constant(c)
    } else {
        Expr::variable(rng.gen_range(0..ops.variable_names().len()))
    }
}

fn random_expr_inner(ops: &OperatorSet, max_depth: usize, rng: &mut impl Rng) -> Expr {
    if max_depth <= 1 {
        return random_leaf(ops, rng);
    }
    // Bias toward operators near the root, leaves deeper down.
    let n_unary = ops.unary_ops().len();
    let leaf_weight = 0.25;
    let unary_weight = if n_unary > 0 { 0.25 } else { 0.0 };
    let roll: f64 = rng.gen();
    if roll < leaf_weight {
        random_leaf(ops, rng)
    } else if roll < leaf_weight + unary_weight {
        let op = ops.unary_ops()[rng.gen_range(0..n_unary)];
        Expr::unary(op, random_expr_inner(ops, max_depth - 1, rng))
    } else {
        let op = ops.binary_ops()[rng.gen_range(0..ops.binary_ops().len())];
        let left = random_expr_inner(ops, max_depth - 1, rng);
        let right = random_expr_inner(ops, max_depth - 1, rng);
        Expr::binary(op, left, right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops_xyz() -> OperatorSet {
        OperatorSet::default_for(vec!["x1".into(), "x2".into(), "x3".into()]).unwrap()
    }

    #[test]
    fn complexity_counts_every_node() {
        assert_eq!(Expr::variable(0).complexity(), 1);
        let e = Expr::binary(
            BinaryOp::Add,
            Expr::variable(0),
            Expr::binary(BinaryOp::Mul, Expr::variable(1), Expr::variable(2)),
        );
        assert_eq!(e.complexity(), 5);
        assert_eq!(e.depth(), 3);
    }

    #[test]
    fn format_examples() {
        let ops = ops_xyz();
        let e = Expr::binary(BinaryOp::Add, Expr::variable(0), Expr::constant(2.0));
        assert_eq!(format(&e, &ops), "(x1 + 2.0)");
        let s = Expr::unary(UnaryOp::Sin, Expr::variable(0));
        assert_eq!(format(&s, &ops), "sin(x1)");
    }

    #[test]
    fn negation_of_constant_folds() {
        let e = Expr::unary(UnaryOp::Neg, Expr::constant(2.0));
        assert_eq!(e, Expr::constant(-2.0));
    }

    #[test]
    fn subtree_replacement_preserves_other_branches() {
        let e = Expr::binary(
            BinaryOp::Add,
            Expr::variable(0),
            Expr::binary(BinaryOp::Mul, Expr::variable(1), Expr::variable(2)),
        );
        // Preorder: 0=add 1=x1 2=mul 3=x2 4=x3
        let swapped = e.with_subtree(3, Expr::constant(7.0));
        assert_eq!(
            swapped,
            Expr::binary(
                BinaryOp::Add,
                Expr::variable(0),
                Expr::binary(BinaryOp::Mul, Expr::constant(7.0), Expr::variable(2)),
            )
        );
        assert_eq!(e.subtree(4), Some(&Expr::variable(2)));
        assert_eq!(e.subtree(5), None);
    }

    #[test]
    fn random_expr_respects_depth_and_grammar() {
        let ops = ops_xyz();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let e = random_expr(&ops, 1, &mut rng);
            assert_eq!(e.depth(), 1);
        }
        for _ in 0..500 {
            let e = random_expr(&ops, 4, &mut rng);
            assert!(e.depth() <= 4);
            assert!(e.variables_used().iter().all(|&i| i < 3));
            for c in e.constants() {
                assert!(c.is_finite());
            }
        }
    }

    #[test]
    fn random_expr_covers_every_variable() {
        let ops = ops_xyz();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = [false; 3];
        for _ in 0..10_000 {
            let e = random_expr(&ops, 4, &mut rng);
            for i in e.variables_used() {
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn describe_grammar_is_stable_and_complete() {
        let ops = OperatorSet::new(
            &[BinaryOp::Add, BinaryOp::Mul],
            &[UnaryOp::Sin],
            true,
            vec!["x1".into()],
        )
        .unwrap();
        let line = describe_grammar(&ops);
        assert_eq!(line, "binary: +, *; unary: sin; variables: x1");
        assert_eq!(line, describe_grammar(&ops));
    }

    #[test]
    fn operator_set_rejects_degenerate_grammars() {
        assert!(OperatorSet::new(&[], &[], true, vec!["x".into()]).is_err());
        assert!(OperatorSet::new(&[BinaryOp::Add], &[], true, vec![]).is_err());
        assert!(
            OperatorSet::new(&[BinaryOp::Add], &[], true, vec!["x".into(), "x".into()]).is_err()
        );
    }
}
