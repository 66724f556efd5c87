//! The alternating search loop over hypotheses and concepts.
//!
//! Each iteration runs every population's search cycle in parallel against a
//! snapshot of the concept library, extracts the Pareto frontier, abstracts
//! a new concept from it, evolves the library, and migrates hypotheses
//! between populations. Early stopping triggers when the best loss falls
//! under the solve threshold.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::{
    abstract_concept, evolve_concepts, extract_pareto, frontier_scores, ConceptLibrary,
    ParetoFront, DEFAULT_RECENCY_WINDOW,
};
use crate::data::{DataError, Dataset};
use crate::evolve::{
    migrate, random_init_exprs, sr_cycle, EvolveParams, Hypothesis, MutationWeights, Population,
    TreeLimits,
};
use crate::expr::{format as format_expr, BinaryOp, ExprError, OperatorSet, UnaryOp};
use crate::llm::{llm_init, LlmBackend, LlmConfig, LlmStats, PromptTemplates};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which operators the search grammar admits; variables always come from the
/// dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub binary: Vec<String>,
    pub unary: Vec<String>,
    pub allow_constants: bool,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            binary: ["add", "sub", "mul", "div", "pow"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            unary: ["sin", "cos", "exp", "log", "sqrt"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            allow_constants: true,
        }
    }
}

impl OperatorConfig {
    pub fn to_operator_set(&self, variables: &[String]) -> Result<OperatorSet, RunError> {
        let binary: Vec<BinaryOp> = self
            .binary
            .iter()
            .map(|name| {
                BinaryOp::from_name(name)
                    .ok_or_else(|| RunError::Config(format!("unknown binary operator `{name}`")))
            })
            .collect::<Result<_, _>>()?;
        let unary: Vec<UnaryOp> = self
            .unary
            .iter()
            .map(|name| {
                UnaryOp::from_name(name)
                    .ok_or_else(|| RunError::Config(format!("unknown unary operator `{name}`")))
            })
            .collect::<Result<_, _>>()?;
        Ok(OperatorSet::new(
            &binary,
            &unary,
            self.allow_constants,
            variables.to_vec(),
        )?)
    }
}

/// LLM-related settings as they appear in configuration files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_inflight: usize,
    /// Number of concepts sampled into each prompt.
    pub concepts_per_prompt: usize,
    pub max_candidates: usize,
    /// Directory holding prompt template overrides; the built-in templates
    /// are used when unset.
    pub prompts_dir: Option<String>,
    pub include_data_digest: bool,
    pub digest_rows: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let http = crate::llm::HttpSettings::default();
        LlmSettings {
            endpoint: http.endpoint,
            model: http.model,
            api_key_env: http.api_key_env,
            temperature: http.temperature,
            max_tokens: http.max_tokens,
            timeout_secs: http.timeout_secs,
            max_retries: http.max_retries,
            max_inflight: http.max_inflight,
            concepts_per_prompt: 5,
            max_candidates: 5,
            prompts_dir: None,
            include_data_digest: false,
            digest_rows: 10,
        }
    }
}

impl LlmSettings {
    pub fn to_llm_config(&self) -> Result<LlmConfig, RunError> {
        let templates = match &self.prompts_dir {
            Some(dir) => PromptTemplates::from_dir(dir)?,
            None => PromptTemplates::default(),
        };
        Ok(LlmConfig {
            templates,
            concepts_per_prompt: self.concepts_per_prompt,
            max_candidates: self.max_candidates,
            include_data_digest: self.include_data_digest,
            digest_rows: self.digest_rows,
        })
    }

    pub fn to_http_settings(&self) -> crate::llm::HttpSettings {
        crate::llm::HttpSettings {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            max_inflight: self.max_inflight,
        }
    }
}

/// How the final expression is chosen from the frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    MinLoss,
    MinScore,
}

/// Full configuration of a search run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Outer iterations of the hypothesis/concept loop.
    pub iterations: usize,
    pub n_populations: usize,
    pub population_size: usize,
    pub cycles_per_iteration: usize,
    /// Concept-evolution steps per iteration.
    pub concept_steps: usize,
    /// Probability that an evolution event uses the LLM operator instead of
    /// the symbolic one. Zero disables all backend traffic.
    pub llm_probability: f64,
    /// Seed concepts for the library.
    pub hints: Vec<String>,
    pub parsimony: f64,
    pub tournament_size: usize,
    pub crossover_probability: f64,
    pub initial_temperature: f64,
    pub anneal_decay: f64,
    pub temperature_floor: f64,
    pub migrate_fraction: f64,
    pub max_complexity: usize,
    pub max_depth: usize,
    /// Solve threshold: stop as soon as the best MSE drops below this.
    /// Zero disables early stopping.
    pub early_stop_mse: f64,
    /// Number of worst exemplars carried on the frontier.
    pub n_worst: usize,
    /// Recency window for concept sampling.
    pub recency_window: usize,
    pub constant_opt_budget: usize,
    pub selection: SelectionMode,
    /// Optional wall-clock budget; checked at iteration boundaries.
    pub time_budget_secs: Option<f64>,
    pub mutation_weights: MutationWeights,
    pub operators: OperatorConfig,
    pub llm: LlmSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            iterations: 40,
            n_populations: 8,
            population_size: 33,
            cycles_per_iteration: 150,
            concept_steps: 3,
            llm_probability: 0.0,
            hints: Vec::new(),
            parsimony: 0.0032,
            tournament_size: 10,
            crossover_probability: 0.1,
            initial_temperature: 1.0,
            anneal_decay: 0.99,
            temperature_floor: 0.05,
            migrate_fraction: 0.05,
            max_complexity: 30,
            max_depth: 10,
            early_stop_mse: 1e-11,
            n_worst: 5,
            recency_window: DEFAULT_RECENCY_WINDOW,
            constant_opt_budget: 100,
            selection: SelectionMode::MinLoss,
            time_budget_secs: None,
            mutation_weights: MutationWeights::default(),
            operators: OperatorConfig::default(),
            llm: LlmSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(RunError::Config(msg.to_owned()))
            }
        };
        check(self.iterations >= 1, "iterations must be at least 1")?;
        check(self.n_populations >= 1, "need at least one population")?;
        check(self.population_size >= 2, "population size must be at least 2")?;
        check(self.cycles_per_iteration >= 1, "cycles_per_iteration must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.llm_probability),
            "llm_probability must be in [0, 1]",
        )?;
        check(self.parsimony >= 0.0, "parsimony must be non-negative")?;
        check(
            (0.0..=1.0).contains(&self.migrate_fraction),
            "migrate_fraction must be in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.crossover_probability),
            "crossover_probability must be in [0, 1]",
        )?;
        check(self.tournament_size >= 1, "tournament_size must be at least 1")?;
        check(self.max_depth >= 1, "max_depth must be at least 1")?;
        check(self.max_complexity >= 1, "max_complexity must be at least 1")?;
        check(self.early_stop_mse >= 0.0, "early_stop_mse must be non-negative")?;
        check(
            self.mutation_weights.total() > 0.0,
            "mutation weights must sum to a positive value",
        )?;
        check(
            self.llm.concepts_per_prompt >= 1,
            "concepts_per_prompt must be at least 1",
        )?;
        check(self.constant_opt_budget >= 1, "constant_opt_budget must be at least 1")?;
        Ok(())
    }

    fn evolve_params(&self) -> EvolveParams {
        EvolveParams {
            cycles_per_iteration: self.cycles_per_iteration,
            tournament_size: self.tournament_size,
            crossover_probability: self.crossover_probability,
            anneal_decay: self.anneal_decay,
            temperature_floor: self.temperature_floor,
            parsimony: self.parsimony,
            limits: TreeLimits {
                max_complexity: self.max_complexity,
                max_depth: self.max_depth,
            },
            weights: self.mutation_weights.clone(),
            constant_opt_budget: self.constant_opt_budget,
        }
    }
}

/// Per-iteration progress record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_loss: f64,
    pub best_complexity: usize,
    pub llm_calls: u64,
    pub llm_fallbacks: u64,
    pub concepts_added: usize,
}

/// Everything a run produces: the selected hypothesis, the simplicity/loss
/// frontier, the concept library, and per-iteration history.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub best: Hypothesis,
    pub frontier: ParetoFront,
    pub library: ConceptLibrary,
    pub history: Vec<IterationRecord>,
    pub solved: bool,
    pub iterations_used: usize,
    pub ops: OperatorSet,
}

/// Self-contained, serializable view of a run with expressions rendered as
/// text. Identical seeds and a deterministic backend produce byte-identical
/// summaries.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub best_expression: String,
    pub best_loss: f64,
    pub best_complexity: usize,
    pub solved: bool,
    pub iterations_used: usize,
    pub frontier: Vec<FrontierRow>,
    pub concepts: Vec<crate::concepts::Concept>,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierRow {
    pub complexity: usize,
    pub loss: f64,
    pub score: f64,
    pub expression: String,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        let scores = frontier_scores(&self.frontier);
        let frontier = self
            .frontier
            .best
            .iter()
            .zip(scores.iter())
            .map(|(h, &score)| FrontierRow {
                complexity: h.complexity,
                loss: h.loss,
                score,
                expression: format_expr(&h.expr, &self.ops),
            })
            .collect();
        RunSummary {
            best_expression: format_expr(&self.best.expr, &self.ops),
            best_loss: self.best.loss,
            best_complexity: self.best.complexity,
            solved: self.solved,
            iterations_used: self.iterations_used,
            frontier,
            concepts: self.library.concepts().to_vec(),
            history: self.history.clone(),
        }
    }
}

/// Picks the run's final expression from the frontier.
pub fn best_expression(front: &ParetoFront, mode: SelectionMode, parsimony: f64) -> Hypothesis {
    assert!(!front.best.is_empty(), "frontier must be non-empty");
    match mode {
        SelectionMode::MinLoss => front
            .best
            .iter()
            .min_by(|a, b| {
                a.loss
                    .total_cmp(&b.loss)
                    .then(a.complexity.cmp(&b.complexity))
            })
            .expect("non-empty")
            .clone(),
        SelectionMode::MinScore => front
            .best
            .iter()
            .min_by(|a, b| {
                let sa = crate::evolve::posterior_score(a.loss, a.complexity, parsimony);
                let sb = crate::evolve::posterior_score(b.loss, b.complexity, parsimony);
                sa.total_cmp(&sb)
            })
            .expect("non-empty")
            .clone(),
    }
}

fn population_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // Fixed stream splitting: adding populations never perturbs the streams
    // of existing ones.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + index as u64);
    rng
}

/// Runs the full search loop. LLM failures never abort a run; with
/// `llm_probability == 0` the loop is a pure genetic search and the backend
/// is never contacted.
pub fn run(
    cfg: &RunConfig,
    data: &Dataset,
    backend: &dyn LlmBackend,
) -> Result<RunResult, RunError> {
    cfg.validate()?;
    let ops = cfg.operators.to_operator_set(data.variable_names())?;
    let llm_cfg = cfg.llm.to_llm_config()?;
    let params = cfg.evolve_params();
    let stats = LlmStats::default();
    let started = Instant::now();

    let mut orch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    orch_rng.set_stream(0);
    let mut concept_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    concept_rng.set_stream(u64::MAX);

    let mut library = ConceptLibrary::from_hints(&cfg.hints, cfg.recency_window);

    // Initialize populations, each from its own stream. A population is
    // seeded by the LLM with probability `llm_probability`, otherwise (and
    // on any backend shortfall) with random trees.
    let mut populations: Vec<Population> = (0..cfg.n_populations)
        .map(|i| {
            let mut rng = population_rng(cfg.seed, i);
            let exprs = if cfg.llm_probability > 0.0 && rng.gen_bool(cfg.llm_probability) {
                llm_init(
                    &library,
                    &ops,
                    cfg.population_size,
                    backend,
                    &llm_cfg,
                    &stats,
                    &params.limits,
                    &mut rng,
                )
            } else {
                random_init_exprs(&ops, cfg.population_size, params.limits.max_depth, &mut rng)
            };
            Population::from_exprs(exprs, data, cfg.parsimony, cfg.initial_temperature, rng)
        })
        .collect();

    let mut history: Vec<IterationRecord> = Vec::with_capacity(cfg.iterations);
    let mut frontier: Option<ParetoFront> = None;
    let mut solved = false;
    let mut iterations_used = 0;

    for iteration in 0..cfg.iterations {
        iterations_used = iteration + 1;
        let snapshot = library.clone();
        let before = stats.snapshot();

        populations.par_iter_mut().for_each(|pop| {
            sr_cycle(
                pop,
                data,
                &snapshot,
                cfg.llm_probability,
                backend,
                &params,
                &llm_cfg,
                &stats,
                &ops,
            );
        });

        let current = extract_pareto(&populations, cfg.n_worst, &ops);
        let best_now = best_expression(&current, SelectionMode::MinLoss, cfg.parsimony);
        let is_solved = cfg.early_stop_mse > 0.0 && best_now.loss < cfg.early_stop_mse;

        let mut concepts_added = 0;
        if !is_solved && cfg.llm_probability > 0.0 {
            if let Some(text) = abstract_concept(
                &current,
                &library,
                &ops,
                backend,
                &llm_cfg,
                &stats,
                &mut concept_rng,
            ) {
                library.append(text, iteration);
                concepts_added += 1;
            }
            for _ in 0..cfg.concept_steps {
                concepts_added += evolve_concepts(
                    &mut library,
                    backend,
                    &llm_cfg,
                    &stats,
                    iteration,
                    &mut concept_rng,
                );
            }
        }

        let after = stats.snapshot();
        history.push(IterationRecord {
            iteration,
            best_loss: best_now.loss,
            best_complexity: best_now.complexity,
            llm_calls: after.calls - before.calls,
            llm_fallbacks: after.fallbacks - before.fallbacks,
            concepts_added,
        });
        frontier = Some(current);

        if is_solved {
            solved = true;
            break;
        }
        if let Some(budget) = cfg.time_budget_secs {
            if started.elapsed().as_secs_f64() >= budget {
                break;
            }
        }
        migrate(&mut populations, cfg.migrate_fraction, &mut orch_rng);
    }

    let frontier = frontier.expect("at least one iteration ran");
    let best = best_expression(&frontier, cfg.selection, cfg.parsimony);
    Ok(RunResult {
        best,
        frontier,
        library,
        history,
        solved,
        iterations_used,
        ops,
    })
}

/// Writes run artifacts into `dir`: `summary.json`, `frontier.csv`,
/// `concepts.jsonl`, and `history.csv`.
pub fn write_artifacts(result: &RunResult, dir: impl AsRef<Path>) -> std::io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let summary = result.summary();

    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(dir.join("summary.json"), json)?;

    let mut frontier = std::fs::File::create(dir.join("frontier.csv"))?;
    writeln!(frontier, "complexity,loss,score,expression")?;
    for row in &summary.frontier {
        writeln!(
            frontier,
            "{},{:?},{:?},\"{}\"",
            row.complexity, row.loss, row.score, row.expression
        )?;
    }

    result.library.write_log(dir.join("concepts.jsonl"))?;

    let mut history = std::fs::File::create(dir.join("history.csv"))?;
    writeln!(
        history,
        "iteration,best_loss,best_complexity,llm_calls,llm_fallbacks,concepts_added"
    )?;
    for record in &summary.history {
        writeln!(
            history,
            "{},{:?},{},{},{},{}",
            record.iteration,
            record.best_loss,
            record.best_complexity,
            record.llm_calls,
            record.llm_fallbacks,
            record.concepts_added
        )?;
    }
    Ok(())
}
