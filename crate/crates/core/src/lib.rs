//! Symbolic regression over expression trees with multi-population genetic
//! search, optionally guided by an LLM through an evolving library of
//! natural-language concepts.
//!
//! The crate is organized around the search loop:
//!
//! - [`expr`]: the hypothesis language — expression trees, parsing/printing,
//!   evaluation, complexity, simplification, random generation.
//! - [`data`]: datasets, CSV ingestion, noise/distractor injection, splits,
//!   and synthetic problem generation.
//! - [`evolve`]: fitness scoring, the symbolic mutation/crossover operators,
//!   constant refitting, the per-population search cycle, and migration.
//! - [`llm`]: LLM backends (HTTP, replay, scripted), prompt templating, and
//!   the LLM-guided init/mutate/crossover operators with symbolic fallback.
//! - [`concepts`]: Pareto-front extraction and the concept library with its
//!   abstraction, evolution, and sampling policies.
//! - [`orchestrator`]: the alternating loop over hypotheses and concepts.
//! - [`bench`]: exact-match checking, R², benchmark suites, and scaling-law
//!   skeleton fitting.

pub mod bench;
pub mod concepts;
pub mod data;
pub mod evolve;
pub mod expr;
pub mod llm;
pub mod optim;
pub mod orchestrator;
