//! Multi-population genetic search over expression trees.
//!
//! Each population evolves through tournament-selected mutation and
//! crossover, with simulated-annealing acceptance and an elitist guarantee
//! that the best member survives. New expressions are simplified and their
//! constants refit before scoring. Top performers migrate between
//! populations at iteration barriers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::concepts::ConceptLibrary;
use crate::data::Dataset;
use crate::expr::{random_expr, BinaryOp, Expr, OperatorSet, UnaryOp};
use crate::llm::{llm_crossover, llm_mutate, LlmBackend, LlmConfig, LlmStats};

/// Floor added to the loss before taking its log, so exact fits do not
/// produce an infinite score.
pub const LOSS_FLOOR: f64 = 1e-30;

/// Structural caps applied to every expression produced by the search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeLimits {
    pub max_complexity: usize,
    pub max_depth: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits {
            max_complexity: 30,
            max_depth: 10,
        }
    }
}

impl TreeLimits {
    pub fn admits(&self, e: &Expr) -> bool {
        e.complexity() <= self.max_complexity && e.depth() <= self.max_depth
    }
}

/// Mean squared error of an expression against the dataset target. Any
/// non-finite row makes the loss infinite.
pub fn mse_loss(e: &Expr, data: &Dataset) -> f64 {
    let predictions = match e.evaluate(data) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    let mut sum = 0.0;
    for (p, y) in predictions.iter().zip(data.y().iter()) {
        if !p.is_finite() {
            return f64::INFINITY;
        }
        let d = p - y;
        sum += d * d;
    }
    let loss = sum / data.n_rows() as f64;
    if loss.is_finite() {
        loss
    } else {
        f64::INFINITY
    }
}

/// Negative log-posterior of a hypothesis: log-loss plus a complexity prior.
/// Lower is better; strictly increasing in both arguments.
pub fn posterior_score(loss: f64, complexity: usize, parsimony: f64) -> f64 {
    assert!(parsimony >= 0.0, "parsimony must be non-negative");
    (loss + LOSS_FLOOR).ln() + parsimony * complexity as f64
}

/// A candidate expression with its cached loss, complexity, and score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    pub expr: Expr,
    pub loss: f64,
    pub complexity: usize,
    pub score: f64,
}

impl Hypothesis {
    pub fn new(expr: Expr, data: &Dataset, parsimony: f64) -> Hypothesis {
        let loss = mse_loss(&expr, data);
        let complexity = expr.complexity();
        let score = posterior_score(loss, complexity, parsimony);
        Hypothesis {
            expr,
            loss,
            complexity,
            score,
        }
    }
}

/// Weights for the symbolic mutation categories. Sampling is proportional to
/// weight; the weights need not sum to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MutationWeights {
    pub mutate_constant: f64,
    pub mutate_operator: f64,
    pub add_node_append: f64,
    pub add_node_prepend: f64,
    pub add_node_insert: f64,
    pub delete_subtree: f64,
    pub simplify: f64,
    pub init_new_tree: f64,
    pub do_nothing: f64,
}

impl Default for MutationWeights {
    fn default() -> Self {
        MutationWeights {
            mutate_constant: 1.0,
            mutate_operator: 1.0,
            add_node_append: 1.0,
            add_node_prepend: 1.0,
            add_node_insert: 1.0,
            delete_subtree: 1.0,
            simplify: 1.0,
            init_new_tree: 1.0,
            do_nothing: 1.0,
        }
    }
}

/// The symbolic mutation categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MutationKind {
    MutateConstant,
    MutateOperator,
    AddNodeAppend,
    AddNodePrepend,
    AddNodeInsert,
    DeleteSubtree,
    Simplify,
    InitNewTree,
    DoNothing,
}

impl MutationWeights {
    fn entries(&self) -> [(MutationKind, f64); 9] {
        [
            (MutationKind::MutateConstant, self.mutate_constant),
            (MutationKind::MutateOperator, self.mutate_operator),
            (MutationKind::AddNodeAppend, self.add_node_append),
            (MutationKind::AddNodePrepend, self.add_node_prepend),
            (MutationKind::AddNodeInsert, self.add_node_insert),
            (MutationKind::DeleteSubtree, self.delete_subtree),
            (MutationKind::Simplify, self.simplify),
            (MutationKind::InitNewTree, self.init_new_tree),
            (MutationKind::DoNothing, self.do_nothing),
        ]
    }

    pub fn total(&self) -> f64 {
        self.entries().iter().map(|(_, w)| w).sum()
    }

    /// Samples a category proportionally to its weight.
    pub fn sample(&self, rng: &mut impl Rng) -> MutationKind {
        let total = self.total();
        assert!(total > 0.0, "mutation weights must sum to a positive value");
        let mut roll = rng.gen_range(0.0..total);
        for (kind, w) in self.entries() {
            if roll < w {
                return kind;
            }
            roll -= w;
        }
        MutationKind::DoNothing
    }
}

fn random_leaf(ops: &OperatorSet, rng: &mut impl Rng) -> Expr {
    random_expr(ops, 1, rng)
}

fn perturb_constant(c: f64, rng: &mut impl Rng) -> f64 {
    if c == 0.0 {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        return normal.sample(rng);
    }
    let normal = Normal::new(0.0, 0.7).expect("valid scale");
    let factor: f64 = normal.sample(rng);
    let mut out = c * factor.exp();
    if rng.gen_bool(0.1) {
        out = -out;
    }
    if out.is_finite() {
        out
    } else {
        c
    }
}

fn pick_other_binary(current: BinaryOp, ops: &OperatorSet, rng: &mut impl Rng) -> BinaryOp {
    let choices: Vec<BinaryOp> = ops
        .binary_ops()
        .iter()
        .copied()
        .filter(|op| *op != current)
        .collect();
    choices.choose(rng).copied().unwrap_or(current)
}

fn pick_other_unary(current: UnaryOp, ops: &OperatorSet, rng: &mut impl Rng) -> UnaryOp {
    let choices: Vec<UnaryOp> = ops
        .unary_ops()
        .iter()
        .copied()
        .filter(|op| *op != current)
        .collect();
    choices.choose(rng).copied().unwrap_or(current)
}

/// Wraps the subtree at `index` in a fresh operator node.
fn wrap_node(e: &Expr, index: usize, ops: &OperatorSet, rng: &mut impl Rng) -> Expr {
    let target = e.subtree(index).expect("index in range").clone();
    let n_unary = ops.unary_ops().len();
    let use_unary = n_unary > 0 && rng.gen_bool(0.3);
    let wrapped = if use_unary {
        let op = ops.unary_ops()[rng.gen_range(0..n_unary)];
        Expr::unary(op, target)
    } else {
        let op = ops.binary_ops()[rng.gen_range(0..ops.binary_ops().len())];
        let leaf = random_leaf(ops, rng);
        if rng.gen_bool(0.5) {
            Expr::binary(op, target, leaf)
        } else {
            Expr::binary(op, leaf, target)
        }
    };
    e.with_subtree(index, wrapped)
}

fn apply_mutation(
    kind: MutationKind,
    e: &Expr,
    ops: &OperatorSet,
    limits: &TreeLimits,
    rng: &mut impl Rng,
) -> Expr {
    match kind {
        MutationKind::DoNothing => e.clone(),
        MutationKind::Simplify => e.simplify(),
        MutationKind::InitNewTree => random_expr(ops, limits.max_depth.min(5), rng),
        MutationKind::MutateConstant => {
            let constants = e.constant_indices();
            match constants.choose(rng) {
                Some(&idx) => {
                    let value = match e.subtree(idx) {
                        Some(Expr::Constant(c)) => *c,
                        _ => unreachable!("constant index points at constant"),
                    };
                    e.with_subtree(idx, Expr::constant(perturb_constant(value, rng)))
                }
                None => e.clone(),
            }
        }
        MutationKind::MutateOperator => {
            let operators = e.operator_indices();
            match operators.choose(rng) {
                Some(&idx) => {
                    let replacement = match e.subtree(idx) {
                        Some(Expr::Binary(op, l, r)) => Expr::Binary(
                            pick_other_binary(*op, ops, rng),
                            l.clone(),
                            r.clone(),
                        ),
                        Some(Expr::Unary(op, c)) => {
                            Expr::Unary(pick_other_unary(*op, ops, rng), c.clone())
                        }
                        _ => unreachable!("operator index points at operator"),
                    };
                    e.with_subtree(idx, replacement)
                }
                None => e.clone(),
            }
        }
        MutationKind::AddNodeAppend => {
            let leaves = e.leaf_indices();
            match leaves.choose(rng) {
                Some(&idx) => wrap_node(e, idx, ops, rng),
                None => e.clone(),
            }
        }
        MutationKind::AddNodePrepend => wrap_node(e, 0, ops, rng),
        MutationKind::AddNodeInsert => {
            let idx = rng.gen_range(0..e.complexity());
            wrap_node(e, idx, ops, rng)
        }
        MutationKind::DeleteSubtree => {
            let idx = rng.gen_range(0..e.complexity());
            e.with_subtree(idx, random_leaf(ops, rng))
        }
    }
}

/// Applies one randomly selected mutation category. The result always
/// satisfies the structural caps; growth mutations that would exceed them
/// fall back to returning the input unchanged.
pub fn mutate(
    e: &Expr,
    weights: &MutationWeights,
    ops: &OperatorSet,
    limits: &TreeLimits,
    rng: &mut impl Rng,
) -> Expr {
    let kind = weights.sample(rng);
    for _ in 0..4 {
        let candidate = apply_mutation(kind, e, ops, limits, rng);
        if limits.admits(&candidate) {
            return candidate;
        }
    }
    e.clone()
}

/// Swaps uniformly chosen subtrees between two expressions. Total node count
/// is conserved across the pair.
pub fn crossover(a: &Expr, b: &Expr, rng: &mut impl Rng) -> (Expr, Expr) {
    let ai = rng.gen_range(0..a.complexity());
    let bi = rng.gen_range(0..b.complexity());
    let a_sub = a.subtree(ai).expect("index in range").clone();
    let b_sub = b.subtree(bi).expect("index in range").clone();
    (a.with_subtree(ai, b_sub), b.with_subtree(bi, a_sub))
}

/// Refits the constants of `e` by simplex search, spending at most `budget`
/// objective evaluations. The tree structure is unchanged and the result is
/// kept only if it does not increase the loss.
pub fn optimize_constants(e: &Expr, data: &Dataset, budget: usize) -> Expr {
    assert!(budget >= 1, "budget must be at least 1");
    let baseline = e.constants();
    if baseline.is_empty() {
        return e.clone();
    }
    let original_loss = mse_loss(e, data);
    let mut objective = |params: &[f64]| {
        if params.iter().any(|p| !p.is_finite()) {
            return f64::INFINITY;
        }
        mse_loss(&e.with_constants(params), data)
    };

    // Restart from the current values with two different simplex scales; a
    // larger simplex escapes poor local shapes, a smaller one polishes.
    let restarts = [0.5, 1.5];
    let per_restart = (budget / restarts.len()).max(1);
    let mut best_params = baseline.clone();
    let mut best_loss = original_loss;
    for step in restarts {
        let result = crate::optim::nelder_mead(&mut objective, &baseline, step, per_restart);
        if result.value < best_loss {
            best_loss = result.value;
            best_params = result.x;
        }
    }
    if best_loss < original_loss && best_params.iter().all(|p| p.is_finite()) {
        e.with_constants(&best_params)
    } else {
        e.clone()
    }
}

/// Random initial expressions for a fresh population. Trees start shallow;
/// depth grows through search rather than initialization.
pub fn random_init_exprs(
    ops: &OperatorSet,
    n: usize,
    max_depth: usize,
    rng: &mut impl Rng,
) -> Vec<Expr> {
    (0..n)
        .map(|_| random_expr(ops, max_depth.min(5), rng))
        .collect()
}

/// A fixed-size pool of hypotheses with its own RNG stream and annealing
/// temperature.
#[derive(Debug, Clone)]
pub struct Population {
    pub members: Vec<Hypothesis>,
    pub temperature: f64,
    rng: ChaCha8Rng,
}

impl Population {
    pub fn from_exprs(
        exprs: Vec<Expr>,
        data: &Dataset,
        parsimony: f64,
        temperature: f64,
        rng: ChaCha8Rng,
    ) -> Population {
        assert!(!exprs.is_empty(), "population cannot be empty");
        let members = exprs
            .into_iter()
            .map(|e| Hypothesis::new(e, data, parsimony))
            .collect();
        Population {
            members,
            temperature,
            rng,
        }
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn best_index(&self) -> usize {
        self.members
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.score.total_cmp(&b.score))
            .map(|(i, _)| i)
            .expect("population non-empty")
    }

    pub fn best(&self) -> &Hypothesis {
        &self.members[self.best_index()]
    }

    pub fn best_loss_index(&self) -> usize {
        self.members
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.loss.total_cmp(&b.loss))
            .map(|(i, _)| i)
            .expect("population non-empty")
    }
}

/// Knobs for the per-population search cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveParams {
    pub cycles_per_iteration: usize,
    pub tournament_size: usize,
    pub crossover_probability: f64,
    pub anneal_decay: f64,
    pub temperature_floor: f64,
    pub parsimony: f64,
    pub limits: TreeLimits,
    pub weights: MutationWeights,
    pub constant_opt_budget: usize,
}

impl Default for EvolveParams {
    fn default() -> Self {
        EvolveParams {
            cycles_per_iteration: 150,
            tournament_size: 10,
            crossover_probability: 0.1,
            anneal_decay: 0.99,
            temperature_floor: 0.05,
            parsimony: 0.0032,
            limits: TreeLimits::default(),
            weights: MutationWeights::default(),
            constant_opt_budget: 100,
        }
    }
}

fn tournament(pop: &Population, size: usize, rng: &mut impl Rng) -> (usize, Vec<usize>) {
    let n = pop.members.len();
    let k = size.clamp(1, n);
    let sample = rand::seq::index::sample(rng, n, k).into_vec();
    let winner = sample
        .iter()
        .copied()
        .min_by(|&a, &b| pop.members[a].score.total_cmp(&pop.members[b].score))
        .expect("tournament non-empty");
    (winner, sample)
}

/// Picks the member to replace: the worst-scoring hypothesis in `sample`.
/// The population's best-score and best-loss members are never evicted, so
/// both the elite score and the elite loss are monotone across cycles.
fn victim(pop: &Population, sample: &[usize], elites: (usize, usize)) -> Option<usize> {
    sample
        .iter()
        .copied()
        .filter(|&i| i != elites.0 && i != elites.1)
        .max_by(|&a, &b| pop.members[a].score.total_cmp(&pop.members[b].score))
}

/// Runs one search cycle over a population: `cycles_per_iteration` tournament
/// steps of mutation or crossover, each candidate simplified and
/// constant-refit before annealing acceptance. With probability `p` the
/// symbolic operator for an event is replaced by its LLM counterpart; LLM
/// failures always fall back to the symbolic path, so the cycle never stalls.
#[allow(clippy::too_many_arguments)]
pub fn sr_cycle(
    pop: &mut Population,
    data: &Dataset,
    library: &ConceptLibrary,
    p: f64,
    backend: &dyn LlmBackend,
    params: &EvolveParams,
    llm_cfg: &LlmConfig,
    stats: &LlmStats,
    ops: &OperatorSet,
) {
    assert!((0.0..=1.0).contains(&p), "llm probability must be in [0, 1]");
    let mut rng = pop.rng.clone();
    for _ in 0..params.cycles_per_iteration {
        let elites = (pop.best_index(), pop.best_loss_index());
        let use_llm = p > 0.0 && rng.gen_bool(p);
        let do_crossover = pop.size() >= 2 && rng.gen_bool(params.crossover_probability);

        let (parent_idx, candidate_expr, sample) = if do_crossover {
            let (ia, sample_a) = tournament(pop, params.tournament_size, &mut rng);
            let (ib, sample_b) = tournament(pop, params.tournament_size, &mut rng);
            let a = &pop.members[ia].expr;
            let b = &pop.members[ib].expr;
            let child = if use_llm {
                llm_crossover(
                    a, b, library, ops, backend, llm_cfg, stats, &params.limits, &mut rng,
                )
            } else {
                crossover(a, b, &mut rng).0
            };
            let mut sample = sample_a;
            sample.extend(sample_b);
            (ia, child, sample)
        } else {
            let (ia, sample) = tournament(pop, params.tournament_size, &mut rng);
            let parent = &pop.members[ia].expr;
            let child = if use_llm {
                llm_mutate(
                    parent,
                    library,
                    ops,
                    backend,
                    llm_cfg,
                    stats,
                    &params.weights,
                    &params.limits,
                    &mut rng,
                )
            } else {
                mutate(parent, &params.weights, ops, &params.limits, &mut rng)
            };
            (ia, child, sample)
        };

        let refined = optimize_constants(
            &candidate_expr.simplify(),
            data,
            params.constant_opt_budget,
        );
        if !params.limits.admits(&refined) {
            pop.temperature = (pop.temperature * params.anneal_decay).max(params.temperature_floor);
            continue;
        }
        let candidate = Hypothesis::new(refined, data, params.parsimony);

        let parent_score = pop.members[parent_idx].score;
        let delta = candidate.score - parent_score;
        let accept = if delta <= 0.0 {
            true
        } else if pop.temperature > 0.0 && delta.is_finite() {
            rng.gen_bool((-delta / pop.temperature).exp().clamp(0.0, 1.0))
        } else {
            false
        };
        if accept {
            if let Some(slot) = victim(pop, &sample, elites) {
                pop.members[slot] = candidate;
            }
        }
        pop.temperature = (pop.temperature * params.anneal_decay).max(params.temperature_floor);
    }
    pop.rng = rng;
}

/// Replaces the worst `⌈fraction · n⌉` members of each population with
/// copies sampled from the union of all populations' top 10% (by score).
/// A population's best-score and best-loss members are never evicted.
pub fn migrate(pops: &mut [Population], fraction: f64, rng: &mut impl Rng) {
    assert!((0.0..=1.0).contains(&fraction), "fraction must be in [0, 1]");
    if pops.len() < 2 || fraction == 0.0 {
        return;
    }
    let mut pool: Vec<Hypothesis> = Vec::new();
    for pop in pops.iter() {
        let n_top = ((pop.size() as f64) * 0.1).ceil() as usize;
        let mut order: Vec<usize> = (0..pop.size()).collect();
        order.sort_by(|&a, &b| pop.members[a].score.total_cmp(&pop.members[b].score));
        for &i in order.iter().take(n_top.max(1)) {
            pool.push(pop.members[i].clone());
        }
    }
    if pool.is_empty() {
        return;
    }
    for pop in pops.iter_mut() {
        let n_replace = ((pop.size() as f64) * fraction).ceil() as usize;
        if n_replace == 0 {
            continue;
        }
        let elites = (pop.best_index(), pop.best_loss_index());
        let mut order: Vec<usize> = (0..pop.size()).collect();
        order.sort_by(|&a, &b| pop.members[b].score.total_cmp(&pop.members[a].score));
        for &slot in order
            .iter()
            .filter(|&&i| i != elites.0 && i != elites.1)
            .take(n_replace.min(pop.size()))
        {
            let pick = pool.choose(rng).expect("pool non-empty").clone();
            pop.members[slot] = pick;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset_from_expr;
    use crate::data::VarRange;
    use crate::expr::parse;
    use rand::SeedableRng;

    fn ops3() -> OperatorSet {
        OperatorSet::default_for(vec!["x1".into(), "x2".into(), "x3".into()]).unwrap()
    }

    fn line_dataset() -> Dataset {
        // y = x1 over a small grid.
        let xs: Vec<f64> = (0..32).map(|i| 0.1 + i as f64 * 0.2).collect();
        Dataset::new(
            vec!["x1".into()],
            vec![xs.clone()],
            xs,
            "y".into(),
        )
        .unwrap()
    }

    #[test]
    fn mse_loss_basics() {
        let d = line_dataset();
        let ops = OperatorSet::default_for(vec!["x1".into()]).unwrap();
        assert_eq!(mse_loss(&parse("x1", &ops).unwrap(), &d), 0.0);

        let ones = Dataset::new(
            vec!["x1".into()],
            vec![vec![5.0, 6.0]],
            vec![1.0, 1.0],
            "y".into(),
        )
        .unwrap();
        assert_eq!(mse_loss(&Expr::constant(0.0), &ones), 1.0);

        // Division by zero anywhere makes the loss infinite.
        let with_zero = Dataset::new(
            vec!["x1".into()],
            vec![vec![0.0, 1.0]],
            vec![1.0, 1.0],
            "y".into(),
        )
        .unwrap();
        let inv = parse("1 / x1", &ops).unwrap();
        assert!(mse_loss(&inv, &with_zero).is_infinite());
    }

    #[test]
    fn posterior_score_monotone() {
        assert_eq!(posterior_score(1.0, 3, 0.0), (1.0 + LOSS_FLOOR).ln());
        assert!(posterior_score(1.0, 3, 0.1) < posterior_score(1.0, 4, 0.1));
        assert!(posterior_score(1.0, 3, 0.1) < posterior_score(2.0, 3, 0.1));
    }

    #[test]
    fn posterior_argmin_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parsimony = 0.05;
        let hypotheses: Vec<(f64, usize)> = (0..200)
            .map(|_| (rng.gen_range(1e-9..10.0), rng.gen_range(1..40)))
            .collect();
        let via_fn = hypotheses
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                posterior_score(a.0, a.1, parsimony)
                    .total_cmp(&posterior_score(b.0, b.1, parsimony))
            })
            .map(|(i, _)| i);
        let brute = hypotheses
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (a.0.ln() + parsimony * a.1 as f64).total_cmp(&(b.0.ln() + parsimony * b.1 as f64))
            })
            .map(|(i, _)| i);
        assert_eq!(via_fn, brute);
    }

    #[test]
    fn do_nothing_weights_return_input() {
        let ops = ops3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = MutationWeights {
            mutate_constant: 0.0,
            mutate_operator: 0.0,
            add_node_append: 0.0,
            add_node_prepend: 0.0,
            add_node_insert: 0.0,
            delete_subtree: 0.0,
            simplify: 0.0,
            init_new_tree: 0.0,
            do_nothing: 1.0,
        };
        let e = parse("x1 + x2 * x3", &ops).unwrap();
        for _ in 0..50 {
            assert_eq!(mutate(&e, &weights, &ops, &TreeLimits::default(), &mut rng), e);
        }
    }

    #[test]
    fn delete_subtree_shrinks_to_leaf_replacement() {
        let ops = ops3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights = MutationWeights {
            delete_subtree: 1.0,
            mutate_constant: 0.0,
            mutate_operator: 0.0,
            add_node_append: 0.0,
            add_node_prepend: 0.0,
            add_node_insert: 0.0,
            simplify: 0.0,
            init_new_tree: 0.0,
            do_nothing: 0.0,
        };
        let e = parse("x1 + x2 * x3", &ops).unwrap();
        for _ in 0..200 {
            let m = mutate(&e, &weights, &ops, &TreeLimits::default(), &mut rng);
            assert!(m.complexity() <= 5);
            assert!(m.variables_used().iter().all(|&i| i < 3));
        }
    }

    #[test]
    fn mutation_categories_sample_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let weights = MutationWeights::default();
        let mut counts = std::collections::HashMap::new();
        let n = 100_000;
        for _ in 0..n {
            *counts.entry(weights.sample(&mut rng)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 9);
        for (&kind, &count) in &counts {
            let freq = count as f64 / n as f64;
            assert!(
                (freq - 1.0 / 9.0).abs() < 0.02,
                "{kind:?} frequency {freq} deviates from uniform"
            );
        }
    }

    #[test]
    fn mutation_respects_caps() {
        let ops = ops3();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let limits = TreeLimits {
            max_complexity: 9,
            max_depth: 4,
        };
        let mut e = parse("x1 + x2 * x3", &ops).unwrap();
        let weights = MutationWeights::default();
        for _ in 0..2000 {
            e = mutate(&e, &weights, &ops, &limits, &mut rng);
            assert!(e.complexity() <= limits.max_complexity);
            assert!(e.depth() <= limits.max_depth);
        }
    }

    #[test]
    fn crossover_conserves_nodes_and_leaves() {
        let ops = ops3();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Leaf-only parents can only swap roots.
        let (a, b) = crossover(&Expr::variable(0), &Expr::variable(1), &mut rng);
        assert_eq!((a, b), (Expr::variable(1), Expr::variable(0)));

        for _ in 0..1000 {
            let a = random_expr(&ops, 5, &mut rng);
            let b = random_expr(&ops, 5, &mut rng);
            let total = a.complexity() + b.complexity();
            let (a2, b2) = crossover(&a, &b, &mut rng);
            assert_eq!(a2.complexity() + b2.complexity(), total);
        }
    }

    #[test]
    fn optimize_constants_matches_least_squares() {
        let ops = OperatorSet::default_for(vec!["x1".into()]).unwrap();
        let truth = parse("3.14 * x1 - 2.71", &ops).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = dataset_from_expr(
            &truth,
            &[VarRange::new("x1", -2.0, 2.0)],
            128,
            &mut rng,
        )
        .unwrap();
        let skeleton = parse("1.0 * x1 + 0.5", &ops).unwrap();
        let fitted = optimize_constants(&skeleton, &data, 2000);
        let constants = fitted.constants();
        assert!((constants[0] - 3.14).abs() < 1e-5, "slope {:?}", constants);
        assert!((constants[1] + 2.71).abs() < 1e-5, "intercept {:?}", constants);
        assert!(mse_loss(&fitted, &data) <= mse_loss(&skeleton, &data));
    }

    #[test]
    fn optimize_constants_without_constants_is_identity() {
        let ops = ops3();
        let d = line_dataset();
        let e = parse("x1", &OperatorSet::default_for(vec!["x1".into()]).unwrap()).unwrap();
        assert_eq!(optimize_constants(&e, &d, 10), e);
        let _ = ops;
    }
}
