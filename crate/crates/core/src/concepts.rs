//! The concept library and its surrounding machinery: Pareto-front
//! extraction from populations, natural-language concept abstraction from
//! exemplars, concept evolution, and the recency-window sampling policy.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::evolve::{Hypothesis, Population};
use crate::expr::{format, OperatorSet};
use crate::llm::{render_prompt, LlmBackend, LlmConfig, LlmStats, PromptBindings};

/// Default size of the recency window used when sampling concepts.
pub const DEFAULT_RECENCY_WINDOW: usize = 20;

/// A natural-language statement about expression structure, accumulated
/// during search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: u64,
    pub created_iteration: usize,
    pub text: String,
}

/// Append-only, insertion-ordered list of concepts. Recency is defined by
/// insertion order; ids are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptLibrary {
    concepts: Vec<Concept>,
    recency_window: usize,
    next_id: u64,
}

impl ConceptLibrary {
    pub fn new(recency_window: usize) -> ConceptLibrary {
        ConceptLibrary {
            concepts: Vec::new(),
            recency_window,
            next_id: 0,
        }
    }

    /// Seeds a library with user-provided hints at iteration 0. Empty hints
    /// produce an empty library.
    pub fn from_hints(hints: &[String], recency_window: usize) -> ConceptLibrary {
        let mut lib = ConceptLibrary::new(recency_window);
        for hint in hints {
            if !hint.trim().is_empty() {
                lib.append(hint.trim().to_owned(), 0);
            }
        }
        lib
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn recency_window(&self) -> usize {
        self.recency_window
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn append(&mut self, text: String, iteration: usize) -> &Concept {
        assert!(!text.is_empty(), "concepts must have non-empty text");
        let concept = Concept {
            id: self.next_id,
            created_iteration: iteration,
            text,
        };
        self.next_id += 1;
        self.concepts.push(concept);
        self.concepts.last().expect("just pushed")
    }

    /// The most recent concepts, up to the recency window.
    fn recent(&self) -> &[Concept] {
        let start = self.concepts.len().saturating_sub(self.recency_window);
        &self.concepts[start..]
    }

    /// Concepts older than the recency window; the candidate pool for
    /// concept evolution.
    pub fn older_than_window(&self) -> &[Concept] {
        let end = self.concepts.len().saturating_sub(self.recency_window);
        &self.concepts[..end]
    }

    /// Uniform sample without replacement of up to `l` texts from the
    /// recency window. An empty library yields an empty list.
    pub fn sample_concepts(&self, l: usize, rng: &mut impl Rng) -> Vec<String> {
        assert!(l >= 1, "sample size must be at least 1");
        let window = self.recent();
        if window.is_empty() {
            return Vec::new();
        }
        let k = l.min(window.len());
        index_sample(rng, window.len(), k)
            .into_iter()
            .map(|i| window[i].text.clone())
            .collect()
    }

    /// Writes the library as line-delimited JSON records.
    pub fn write_log(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        for concept in &self.concepts {
            let line = serde_json::to_string(concept).expect("concept serializes");
            writeln!(file, "{line}")?;
        }
        Ok(())
    }
}

/// Builds a library seeded from optional user hints.
pub fn init_library(hints: &[String]) -> ConceptLibrary {
    ConceptLibrary::from_hints(hints, DEFAULT_RECENCY_WINDOW)
}

/// The simplicity/loss frontier of a set of populations: `best` holds the
/// Pareto-optimal hypotheses sorted by ascending complexity, `worst` the
/// highest-loss exemplars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoFront {
    pub best: Vec<Hypothesis>,
    pub worst: Vec<Hypothesis>,
}

fn dominates(a: &Hypothesis, b: &Hypothesis) -> bool {
    a.complexity <= b.complexity
        && a.loss <= b.loss
        && (a.complexity < b.complexity || a.loss < b.loss)
}

/// Extracts the Pareto frontier of all members across populations under
/// (complexity, loss), deduplicated by formatted text, plus the `n_worst`
/// distinct highest-finite-loss members.
pub fn extract_pareto(pops: &[Population], n_worst: usize, ops: &OperatorSet) -> ParetoFront {
    assert!(!pops.is_empty(), "need at least one population");
    let mut seen = std::collections::HashSet::new();
    let mut all: Vec<Hypothesis> = Vec::new();
    for pop in pops {
        for h in &pop.members {
            if seen.insert(format(&h.expr, ops)) {
                all.push(h.clone());
            }
        }
    }

    // Staircase sweep: sort by (complexity, loss) and keep strict
    // improvements in loss. Equivalent to pairwise dominance filtering with
    // per-complexity tie-breaking.
    let mut sorted: Vec<&Hypothesis> = all.iter().filter(|h| h.loss.is_finite()).collect();
    sorted.sort_by(|a, b| {
        a.complexity
            .cmp(&b.complexity)
            .then(a.loss.total_cmp(&b.loss))
    });
    let mut best: Vec<Hypothesis> = Vec::new();
    let mut best_loss = f64::INFINITY;
    for h in sorted {
        if h.loss < best_loss {
            best_loss = h.loss;
            best.push(h.clone());
        }
    }
    if best.is_empty() {
        // Degenerate: nothing evaluated finitely. Keep the simplest member so
        // downstream consumers always have a frontier.
        if let Some(h) = all.iter().min_by_key(|h| h.complexity) {
            best.push((*h).clone());
        }
    }

    let mut finite: Vec<&Hypothesis> = all.iter().filter(|h| h.loss.is_finite()).collect();
    finite.sort_by(|a, b| b.loss.total_cmp(&a.loss));
    let worst: Vec<Hypothesis> = finite.into_iter().take(n_worst).cloned().collect();

    ParetoFront { best, worst }
}

/// Per-member frontier scores: the negative log-loss improvement per unit of
/// added complexity, relative to the previous frontier member.
pub fn frontier_scores(front: &ParetoFront) -> Vec<f64> {
    let mut scores = Vec::with_capacity(front.best.len());
    for (i, h) in front.best.iter().enumerate() {
        if i == 0 {
            scores.push(0.0);
            continue;
        }
        let prev = &front.best[i - 1];
        let dc = (h.complexity - prev.complexity) as f64;
        let dl = (h.loss + crate::evolve::LOSS_FLOOR).ln()
            - (prev.loss + crate::evolve::LOSS_FLOOR).ln();
        if dc > 0.0 && dl != 0.0 {
            scores.push(-dl / dc);
        } else {
            scores.push(0.0);
        }
    }
    scores
}

/// Asks the backend to summarize what separates the frontier's best
/// expressions from its worst. Returns the new concept text, or `None` when
/// the backend fails (the library is left untouched in that case).
pub fn abstract_concept(
    front: &ParetoFront,
    library: &ConceptLibrary,
    ops: &OperatorSet,
    backend: &dyn LlmBackend,
    cfg: &LlmConfig,
    stats: &LlmStats,
    rng: &mut impl Rng,
) -> Option<String> {
    assert!(!front.best.is_empty(), "frontier must be non-empty");
    let mut expressions: Vec<String> = front
        .best
        .iter()
        .map(|h| format!("good: {}", format(&h.expr, ops)))
        .collect();
    expressions.extend(
        front
            .worst
            .iter()
            .map(|h| format!("bad: {}", format(&h.expr, ops))),
    );
    let bindings = PromptBindings {
        concepts: library.sample_concepts(cfg.concepts_per_prompt, rng),
        variables: ops.variables_line(),
        operators: ops.operators_line(),
        expressions,
        data_digest: None,
    };
    let prompt = match render_prompt(&cfg.templates.abstraction, &bindings) {
        Ok(p) => p,
        Err(_) => {
            stats.record_fallback();
            return None;
        }
    };
    match backend.complete(&prompt) {
        Ok(response) => {
            stats.record_call(true);
            let text = response.trim();
            if text.is_empty() {
                None
            } else {
                Some(text.to_owned())
            }
        }
        Err(_) => {
            stats.record_call(false);
            stats.record_fallback();
            None
        }
    }
}

/// Splits a concept-evolution response into individual concept lines,
/// stripping list markers.
fn response_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(crate::llm::strip_list_markers)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

/// One concept-evolution step: samples inputs from the concepts *older than*
/// the recency window, asks the backend to evolve them, and appends every
/// response line as a new concept. A library no larger than the window has
/// no candidates and the step is a no-op. Returns the number of concepts
/// appended.
pub fn evolve_concepts(
    library: &mut ConceptLibrary,
    backend: &dyn LlmBackend,
    cfg: &LlmConfig,
    stats: &LlmStats,
    iteration: usize,
    rng: &mut impl Rng,
) -> usize {
    let pool = library.older_than_window();
    if pool.is_empty() {
        return 0;
    }
    let k = cfg.concepts_per_prompt.min(pool.len());
    let picked: Vec<String> = index_sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i].text.clone())
        .collect();
    let bindings = PromptBindings {
        concepts: picked,
        variables: String::new(),
        operators: String::new(),
        expressions: Vec::new(),
        data_digest: None,
    };
    let prompt = match render_prompt(&cfg.templates.evolution, &bindings) {
        Ok(p) => p,
        Err(_) => {
            stats.record_fallback();
            return 0;
        }
    };
    match backend.complete(&prompt) {
        Ok(response) => {
            stats.record_call(true);
            let lines = response_lines(&response);
            let count = lines.len();
            for line in lines {
                library.append(line, iteration);
            }
            count
        }
        Err(_) => {
            stats.record_call(false);
            stats.record_fallback();
            0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::evolve::Hypothesis;
    use crate::expr::Expr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops1() -> OperatorSet {
        OperatorSet::default_for(vec!["x1".into()]).unwrap()
    }

    fn hypothesis(complexity: usize, loss: f64) -> Hypothesis {
        // Build an expression whose node count equals `complexity` by
        // chaining negations under sin to keep formatted strings distinct.
        let mut expr = Expr::variable(0);
        for _ in 1..complexity {
            expr = Expr::unary(crate::expr::UnaryOp::Sin, expr);
        }
        Hypothesis {
            expr,
            loss,
            complexity,
            score: loss,
        }
    }

    fn population_of(hyps: Vec<Hypothesis>) -> Population {
        let data = Dataset::new(
            vec!["x1".into()],
            vec![vec![1.0, 2.0]],
            vec![1.0, 2.0],
            "y".into(),
        )
        .unwrap();
        let mut pop = Population::from_exprs(
            vec![Expr::variable(0)],
            &data,
            0.0,
            1.0,
            ChaCha8Rng::seed_from_u64(0),
        );
        pop.members = hyps;
        pop
    }

    #[test]
    fn library_seeding_and_ordering() {
        assert!(init_library(&[]).is_empty());
        let lib = init_library(&["related to electromagnetism".to_string()]);
        assert_eq!(lib.len(), 1);
        assert_eq!(lib.concepts()[0].created_iteration, 0);

        let mut lib = ConceptLibrary::new(3);
        for i in 0..5 {
            lib.append(format!("c{i}"), i);
        }
        let ids: Vec<u64> = lib.concepts().iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(
            lib.older_than_window()
                .iter()
                .map(|c| c.text.as_str())
                .collect::<Vec<_>>(),
            vec!["c0", "c1"]
        );
    }

    #[test]
    fn sampling_from_small_library_returns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lib = ConceptLibrary::from_hints(
            &["a".to_string(), "b".to_string(), "c".to_string()],
            DEFAULT_RECENCY_WINDOW,
        );
        let mut sampled = lib.sample_concepts(5, &mut rng);
        sampled.sort();
        assert_eq!(sampled, vec!["a", "b", "c"]);
        assert!(ConceptLibrary::new(20).sample_concepts(5, &mut rng).is_empty());
    }

    #[test]
    fn sampling_respects_recency_window_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lib = ConceptLibrary::new(20);
        // 30 concepts; only the last 20 are sampleable.
        for i in 0..30 {
            lib.append(format!("c{i}"), 0);
        }
        let l = 5;
        let draws = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            for text in lib.sample_concepts(l, &mut rng) {
                *counts.entry(text).or_insert(0usize) += 1;
            }
        }
        for i in 0..10 {
            assert!(!counts.contains_key(&format!("c{i}")), "c{i} escaped window");
        }
        let expected = l as f64 / 20.0;
        for i in 10..30 {
            let freq = *counts.get(&format!("c{i}")).unwrap_or(&0) as f64 / draws as f64;
            assert!(
                (freq - expected).abs() < 0.02,
                "c{i} frequency {freq} vs expected {expected}"
            );
        }
    }

    #[test]
    fn pareto_front_small_example() {
        let pop = population_of(vec![
            hypothesis(3, 1.0),
            hypothesis(5, 0.5),
            hypothesis(4, 2.0),
        ]);
        let front = extract_pareto(&[pop], 1, &ops1());
        let pairs: Vec<(usize, f64)> = front.best.iter().map(|h| (h.complexity, h.loss)).collect();
        assert_eq!(pairs, vec![(3, 1.0), (5, 0.5)]);
        assert_eq!(front.worst.len(), 1);
        assert_eq!(front.worst[0].complexity, 4);
    }

    #[test]
    fn pareto_front_singleton() {
        let pop = population_of(vec![hypothesis(3, 1.0)]);
        let front = extract_pareto(&[pop], 3, &ops1());
        assert_eq!(front.best.len(), 1);
        assert_eq!(front.worst.len(), 1);
        assert_eq!(front.best[0], front.worst[0]);
    }

    #[test]
    fn pareto_front_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let members: Vec<Hypothesis> = (0..500)
                .map(|_| hypothesis(rng.gen_range(1..30), rng.gen_range(1e-6..10.0f64)))
                .collect();
            let pop = population_of(members.clone());
            let front = extract_pareto(&[pop], 5, &ops1());

            // O(n^2) dominance oracle over the deduplicated member set, with
            // per-complexity tie-breaking to the lowest loss.
            let mut unique: Vec<&Hypothesis> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for h in &members {
                if seen.insert(format(&h.expr, &ops1())) {
                    unique.push(h);
                }
            }
            let mut expected: Vec<(usize, f64)> = unique
                .iter()
                .filter(|h| {
                    !unique.iter().any(|g| dominates(g, h) )
                })
                .map(|h| (h.complexity, h.loss))
                .collect();
            expected.sort_by(|a, b| a.0.cmp(&b.0));
            let actual: Vec<(usize, f64)> =
                front.best.iter().map(|h| (h.complexity, h.loss)).collect();
            assert_eq!(actual, expected);
        }
    }

    #[test]
    fn frontier_scores_hand_case() {
        let front = ParetoFront {
            best: vec![hypothesis(1, 1.0), hypothesis(3, (-2.0f64).exp())],
            worst: vec![],
        };
        let scores = frontier_scores(&front);
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0], 0.0);
        assert!((scores[1] - 1.0).abs() < 1e-9, "score {}", scores[1]);
        assert!(scores.iter().all(|&s| s >= 0.0));
    }
}
