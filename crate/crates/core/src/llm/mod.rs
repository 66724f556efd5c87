//! LLM-guided search operators and their plumbing: prompt templates with
//! double-brace placeholders, response parsing, and the init/mutate/crossover
//! operators. Every operator is total — when the backend fails or returns
//! nothing usable, the symbolic counterpart runs instead, so search never
//! stalls on the model.

mod backend;

pub use backend::{
    prompt_digest, CallCounters, HttpBackend, HttpSettings, LlmBackend, LlmError, ReplayBackend,
    ReplayStore, ScriptedBackend,
};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::Serialize;

use crate::concepts::ConceptLibrary;
use crate::data::Dataset;
use crate::evolve::{crossover, mutate, MutationWeights, TreeLimits};
use crate::expr::{format as format_expr, parse, random_expr, Expr, OperatorSet};

/// The five prompt templates used by the search. Placeholders use double
/// braces: `{{concepts}}`, `{{variables}}`, `{{operators}}`,
/// `{{expressions}}`, `{{data}}`.
#[derive(Debug, Clone, Serialize)]
pub struct PromptTemplates {
    pub init: String,
    pub mutate: String,
    pub crossover: String,
    pub abstraction: String,
    pub evolution: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            init: include_str!("../../prompts/init.txt").to_owned(),
            mutate: include_str!("../../prompts/mutate.txt").to_owned(),
            crossover: include_str!("../../prompts/crossover.txt").to_owned(),
            abstraction: include_str!("../../prompts/abstraction.txt").to_owned(),
            evolution: include_str!("../../prompts/evolution.txt").to_owned(),
        }
    }
}

impl PromptTemplates {
    /// Loads `init.txt`, `mutate.txt`, `crossover.txt`, `abstraction.txt`,
    /// and `evolution.txt` from a directory, so the shipped templates can be
    /// swapped without rebuilding.
    pub fn from_dir(dir: impl AsRef<Path>) -> std::io::Result<PromptTemplates> {
        let dir = dir.as_ref();
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        Ok(PromptTemplates {
            init: read("init.txt")?,
            mutate: read("mutate.txt")?,
            crossover: read("crossover.txt")?,
            abstraction: read("abstraction.txt")?,
            evolution: read("evolution.txt")?,
        })
    }
}

/// Values available to a prompt template. The number of reference
/// expressions matches the operator: none for init, one for mutate, two for
/// crossover.
#[derive(Debug, Clone, Default)]
pub struct PromptBindings {
    pub concepts: Vec<String>,
    pub variables: String,
    pub operators: String,
    pub expressions: Vec<String>,
    pub data_digest: Option<String>,
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, text)| format!("{}. {}", i + 1, text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes bindings into a template. Deterministic; a placeholder whose
/// binding is absent (or an empty list) is an error so callers can fall back
/// cleanly.
pub fn render_prompt(template: &str, bindings: &PromptBindings) -> Result<String, LlmError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| {
            LlmError::MissingPlaceholderValue("unterminated placeholder".into())
        })?;
        let name = after[..end].trim();
        let value = match name {
            "concepts" => {
                if bindings.concepts.is_empty() {
                    return Err(LlmError::MissingPlaceholderValue("concepts".into()));
                }
                numbered(&bindings.concepts)
            }
            "variables" => {
                if bindings.variables.is_empty() {
                    return Err(LlmError::MissingPlaceholderValue("variables".into()));
                }
                bindings.variables.clone()
            }
            "operators" => {
                if bindings.operators.is_empty() {
                    return Err(LlmError::MissingPlaceholderValue("operators".into()));
                }
                bindings.operators.clone()
            }
            "expressions" => {
                if bindings.expressions.is_empty() {
                    return Err(LlmError::MissingPlaceholderValue("expressions".into()));
                }
                numbered(&bindings.expressions)
            }
            "data" => bindings
                .data_digest
                .clone()
                .ok_or_else(|| LlmError::MissingPlaceholderValue("data".into()))?,
            other => {
                return Err(LlmError::MissingPlaceholderValue(other.to_owned()));
            }
        };
        out.push_str(&value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Serializes up to `rows` sample rows as `x1=…, x2=… → y=…` lines for the
/// optional `{{data}}` binding.
pub fn dataset_digest(data: &Dataset, rows: usize) -> String {
    let n = rows.min(data.n_rows());
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let features = data
            .variable_names()
            .iter()
            .zip(data.columns().iter())
            .map(|(name, col)| format!("{name}={:.6}", col[i]))
            .collect::<Vec<_>>()
            .join(", ");
        lines.push(format!("{features} -> {}={:.6}", data.target_name(), data.y()[i]));
    }
    lines.join("\n")
}

/// Strips leading list markers (`1.`, `2)`, `-`, `*`) and surrounding
/// backticks from a response line.
pub fn strip_list_markers(line: &str) -> &str {
    let mut s = line.trim();
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(stripped) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = stripped.trim_start();
        }
    }
    for marker in ["- ", "* ", "• "] {
        if let Some(stripped) = s.strip_prefix(marker) {
            s = stripped.trim_start();
        }
    }
    s.trim_matches('`').trim()
}

/// Scans response text line by line for parseable expressions, stripping
/// list markers and `name =` prefixes. Returns up to `max_n` expressions in
/// order of appearance; text with no parseable lines yields an empty list.
pub fn parse_candidates(text: &str, ops: &OperatorSet, max_n: usize) -> Vec<Expr> {
    let mut out = Vec::new();
    for line in text.lines() {
        if out.len() >= max_n {
            break;
        }
        let cleaned = strip_list_markers(line);
        if cleaned.is_empty() {
            continue;
        }
        let mut attempts: Vec<&str> = vec![cleaned];
        if let Some(eq) = cleaned.find('=') {
            attempts.push(cleaned[eq + 1..].trim());
        }
        for attempt in attempts {
            if attempt.is_empty() {
                continue;
            }
            if let Ok(expr) = parse(attempt, ops) {
                out.push(expr);
                break;
            }
        }
    }
    out
}

/// Operator-level counters: completions requested, completions that failed,
/// and events that fell back to the symbolic operator.
#[derive(Debug, Default)]
pub struct LlmStats {
    calls: AtomicU64,
    failures: AtomicU64,
    fallbacks: AtomicU64,
}

/// Plain snapshot of [`LlmStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LlmStatsSnapshot {
    pub calls: u64,
    pub failures: u64,
    pub fallbacks: u64,
}

impl LlmStats {
    pub fn record_call(&self, ok: bool) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if !ok {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn record_fallback(&self) {
        self.fallbacks.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LlmStatsSnapshot {
        LlmStatsSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            fallbacks: self.fallbacks.load(Ordering::Relaxed),
        }
    }
}

/// Configuration shared by the LLM-guided operators.
#[derive(Debug, Clone)]
pub struct LlmConfig {
    pub templates: PromptTemplates,
    /// Number of concepts sampled into each prompt.
    pub concepts_per_prompt: usize,
    /// Cap on candidates retained from a single response.
    pub max_candidates: usize,
    /// Bind `{{data}}` with sample rows when a template asks for it.
    pub include_data_digest: bool,
    pub digest_rows: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            templates: PromptTemplates::default(),
            concepts_per_prompt: 5,
            max_candidates: 5,
            include_data_digest: false,
            digest_rows: 10,
        }
    }
}

fn bindings_for(
    library: &ConceptLibrary,
    ops: &OperatorSet,
    expressions: Vec<String>,
    cfg: &LlmConfig,
    rng: &mut impl Rng,
) -> PromptBindings {
    PromptBindings {
        concepts: library.sample_concepts(cfg.concepts_per_prompt, rng),
        variables: ops.variables_line(),
        operators: ops.operators_line(),
        expressions,
        data_digest: None,
    }
}

fn complete_and_parse(
    template: &str,
    bindings: &PromptBindings,
    ops: &OperatorSet,
    backend: &dyn LlmBackend,
    stats: &LlmStats,
    limits: &TreeLimits,
    max_n: usize,
) -> Option<Vec<Expr>> {
    let prompt = render_prompt(template, bindings).ok()?;
    match backend.complete(&prompt) {
        Ok(response) => {
            stats.record_call(true);
            let candidates: Vec<Expr> = parse_candidates(&response, ops, max_n)
                .into_iter()
                .filter(|e| limits.admits(e))
                .collect();
            if candidates.is_empty() {
                None
            } else {
                Some(candidates)
            }
        }
        Err(_) => {
            stats.record_call(false);
            None
        }
    }
}

/// Concept-conditioned population seeding: asks the backend for candidate
/// expressions and fills any shortfall with random trees. Always returns
/// exactly `n` expressions.
pub fn llm_init(
    library: &ConceptLibrary,
    ops: &OperatorSet,
    n: usize,
    backend: &dyn LlmBackend,
    cfg: &LlmConfig,
    stats: &LlmStats,
    limits: &TreeLimits,
    rng: &mut impl Rng,
) -> Vec<Expr> {
    assert!(n >= 1, "must request at least one expression");
    let bindings = bindings_for(library, ops, Vec::new(), cfg, rng);
    let mut out = complete_and_parse(
        &cfg.templates.init,
        &bindings,
        ops,
        backend,
        stats,
        limits,
        n,
    )
    .unwrap_or_default();
    if out.is_empty() {
        stats.record_fallback();
    }
    while out.len() < n {
        out.push(random_expr(ops, limits.max_depth.min(5), rng));
    }
    out
}

/// Concept-conditioned mutation. Falls back to the symbolic mutation
/// operator when the backend fails, nothing parses, or every candidate
/// breaks the structural caps.
#[allow(clippy::too_many_arguments)]
pub fn llm_mutate(
    e: &Expr,
    library: &ConceptLibrary,
    ops: &OperatorSet,
    backend: &dyn LlmBackend,
    cfg: &LlmConfig,
    stats: &LlmStats,
    weights: &MutationWeights,
    limits: &TreeLimits,
    rng: &mut impl Rng,
) -> Expr {
    let bindings = bindings_for(library, ops, vec![format_expr(e, ops)], cfg, rng);
    if let Some(candidates) = complete_and_parse(
        &cfg.templates.mutate,
        &bindings,
        ops,
        backend,
        stats,
        limits,
        1,
    ) {
        return candidates.into_iter().next().expect("non-empty");
    }
    stats.record_fallback();
    mutate(e, weights, ops, limits, rng)
}

/// Concept-conditioned crossover over two reference expressions. Falls back
/// to the first offspring of symbolic subtree crossover.
#[allow(clippy::too_many_arguments)]
pub fn llm_crossover(
    a: &Expr,
    b: &Expr,
    library: &ConceptLibrary,
    ops: &OperatorSet,
    backend: &dyn LlmBackend,
    cfg: &LlmConfig,
    stats: &LlmStats,
    limits: &TreeLimits,
    rng: &mut impl Rng,
) -> Expr {
    let bindings = bindings_for(
        library,
        ops,
        vec![format_expr(a, ops), format_expr(b, ops)],
        cfg,
        rng,
    );
    if let Some(candidates) = complete_and_parse(
        &cfg.templates.crossover,
        &bindings,
        ops,
        backend,
        stats,
        limits,
        1,
    ) {
        return candidates.into_iter().next().expect("non-empty");
    }
    stats.record_fallback();
    crossover(a, b, rng).0
}
