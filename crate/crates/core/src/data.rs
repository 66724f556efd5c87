//! Datasets and dataset construction: CSV ingestion, target-noise and
//! distractor injection, train/validation splitting, and synthetic problem
//! generation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{random_expr, BinaryOp, Expr, OperatorSet, UnaryOp};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("non-numeric cell at row {row}, column {col}")]
    NonNumericCell { row: usize, col: usize },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("distractor name `{0}` collides with an existing column")]
    NameCollision(String),
    #[error("distractor name pool exhausted (need {needed}, have {available})")]
    NamePoolExhausted { needed: usize, available: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("synthetic generation exhausted after {0} attempts")]
    GenerationExhausted(usize),
}

/// A named feature matrix plus target vector. Columns are stored
/// feature-major so expression evaluation can stream over them. Immutable
/// after construction; every transformation returns a new dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    variable_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    target_name: String,
}

impl Dataset {
    pub fn new(
        variable_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        y: Vec<f64>,
        target_name: String,
    ) -> Result<Self, DataError> {
        if variable_names.len() != columns.len() {
            return Err(DataError::Invalid(format!(
                "{} names for {} columns",
                variable_names.len(),
                columns.len()
            )));
        }
        if y.is_empty() {
            return Err(DataError::Invalid("dataset has no rows".into()));
        }
        for col in &columns {
            if col.len() != y.len() {
                return Err(DataError::Invalid("ragged columns".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &variable_names {
            if !seen.insert(name.clone()) {
                return Err(DataError::Invalid(format!("duplicate column `{name}`")));
            }
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite cell".into()));
        }
        Ok(Dataset {
            variable_names,
            columns,
            y,
            target_name,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.variable_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| DataError::MissingColumn(name.to_owned()))
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// One feature row, in column order.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// A grammar over this dataset's variables with the given operator lists.
    pub fn operator_set(
        &self,
        binary: &[BinaryOp],
        unary: &[UnaryOp],
        allow_constants: bool,
    ) -> Result<OperatorSet, crate::expr::ExprError> {
        OperatorSet::new(binary, unary, allow_constants, self.variable_names.clone())
    }

    fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            variable_names: self.variable_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            target_name: self.target_name.clone(),
        }
    }
}

/// Loads a CSV file with a header row. Every non-target column becomes a
/// feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_name: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_name)
        .ok_or_else(|| DataError::MissingTarget(target_name.to_owned()))?;

    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_names.len()];
    let mut y = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut feature_col = 0;
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| DataError::NonNumericCell {
                row: row_idx,
                col: col_idx,
            })?;
            if col_idx == target_idx {
                y.push(value);
            } else {
                columns[feature_col].push(value);
                feature_col += 1;
            }
        }
    }
    Dataset::new(feature_names, columns, y, target_name.to_owned())
}

/// Writes a dataset as CSV (features in order, then the target column).
/// Values are printed in shortest round-trip form, so a written dataset
/// re-loads bit-exactly.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<&str> = d.variable_names.iter().map(String::as_str).collect();
    header.push(&d.target_name);
    writer.write_record(&header)?;
    for i in 0..d.n_rows() {
        let mut record: Vec<String> = d.columns.iter().map(|c| format!("{:?}", c[i])).collect();
        record.push(format!("{:?}", d.y[i]));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Adds Gaussian noise to the target with standard deviation
/// `level * RMS(y)`. Features are untouched; a zero target scale leaves the
/// dataset unchanged.
pub fn add_target_noise(d: &Dataset, level: f64, rng: &mut impl Rng) -> Dataset {
    assert!(level >= 0.0, "noise level must be non-negative");
    let rms = (d.y.iter().map(|v| v * v).sum::<f64>() / d.n_rows() as f64).sqrt();
    if level == 0.0 || rms == 0.0 {
        return d.clone();
    }
    let normal = Normal::new(0.0, level * rms).expect("valid noise scale");
    let y = d.y.iter().map(|v| v + normal.sample(rng)).collect();
    Dataset {
        variable_names: d.variable_names.clone(),
        columns: d.columns.clone(),
        y,
        target_name: d.target_name.clone(),
    }
}

/// Default pool of distractor variable names.
pub fn default_distractor_names() -> Vec<String> {
    [
        "alpha", "beta", "gamma", "delta", "kappa", "lambda", "omega", "sigma", "tau", "zeta",
        "mu", "nu", "xi", "rho", "phi", "chi",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Appends `k` standard-normal noise columns with names drawn from
/// `name_pool`, forcing the search to do feature selection.
pub fn add_distractors(
    d: &Dataset,
    k: usize,
    name_pool: &[String],
    rng: &mut impl Rng,
) -> Result<Dataset, DataError> {
    if k == 0 {
        return Ok(d.clone());
    }
    if name_pool.len() < k {
        return Err(DataError::NamePoolExhausted {
            needed: k,
            available: name_pool.len(),
        });
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut names = d.variable_names.clone();
    let mut columns = d.columns.clone();
    for name in name_pool.iter().take(k) {
        if d.variable_names.contains(name) || name == &d.target_name {
            return Err(DataError::NameCollision(name.clone()));
        }
        names.push(name.clone());
        columns.push((0..d.n_rows()).map(|_| normal.sample(rng)).collect());
    }
    Dataset::new(names, columns, d.y.clone(), d.target_name.clone())
}

/// Deterministic shuffled row split into `(train, validation)` of sizes
/// `⌊f·N⌋` and `N − ⌊f·N⌋`.
pub fn split(d: &Dataset, train_fraction: f64, rng: &mut impl Rng) -> (Dataset, Dataset) {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train fraction must be in (0, 1)"
    );
    let n = d.n_rows();
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let cut = (train_fraction * n as f64).floor() as usize;
    let (train_rows, val_rows) = indices.split_at(cut);
    (d.select_rows(train_rows), d.select_rows(val_rows))
}

/// Per-variable sampling range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarRange {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl VarRange {
    pub fn new(name: impl Into<String>, low: f64, high: f64) -> Self {
        VarRange {
            name: name.into(),
            low,
            high,
        }
    }
}

/// Samples a dataset from a known expression over uniform variable ranges.
/// Rows where the target is non-finite are rejected and resampled.
pub fn dataset_from_expr(
    expr: &Expr,
    ranges: &[VarRange],
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<Dataset, DataError> {
    let names: Vec<String> = ranges.iter().map(|r| r.name.clone()).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); ranges.len()];
    let mut y = Vec::with_capacity(n_samples);
    let max_attempts = n_samples.saturating_mul(100).max(1000);
    let mut attempts = 0;
    let mut row = vec![0.0; ranges.len()];
    while y.len() < n_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(DataError::GenerationExhausted(attempts));
        }
        for (j, r) in ranges.iter().enumerate() {
            row[j] = rng.gen_range(r.low..r.high);
        }
        let value = expr.eval_row(&row);
        if !value.is_finite() {
            continue;
        }
        for (j, v) in row.iter().enumerate() {
            columns[j].push(*v);
        }
        y.push(value);
    }
    Dataset::new(names, columns, y, "y".into())
}

/// Specification for a synthetic problem: a random ground-truth expression
/// biased toward nested unary compositions and arbitrary constants, plus a
/// sampled dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_vars: usize,
    pub max_complexity: usize,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "SyntheticSpec::default_range")]
    pub var_range: (f64, f64),
    #[serde(default = "SyntheticSpec::default_unary_weight")]
    pub unary_weight: f64,
    #[serde(default = "SyntheticSpec::default_constant_prob")]
    pub constant_prob: f64,
}

impl SyntheticSpec {
    fn default_range() -> (f64, f64) {
        // Keeps log/sqrt mostly in-domain.
        (0.1, 5.0)
    }

    fn default_unary_weight() -> f64 {
        0.4
    }

    fn default_constant_prob() -> f64 {
        0.25
    }

    pub fn new(n_vars: usize, max_complexity: usize, n_samples: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_vars,
            max_complexity,
            n_samples,
            seed,
            var_range: Self::default_range(),
            unary_weight: Self::default_unary_weight(),
            constant_prob: Self::default_constant_prob(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_vars == 0 {
            return Err(DataError::Invalid("n_vars must be at least 1".into()));
        }
        if self.max_complexity >= 20 {
            return Err(DataError::Invalid(
                "synthetic ground truths must have complexity below 20".into(),
            ));
        }
        if self.n_samples == 0 {
            return Err(DataError::Invalid("n_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// The grammar synthetic ground truths are drawn from.
    pub fn operator_set(&self) -> OperatorSet {
        let names = (1..=self.n_vars).map(|i| format!("y{i}")).collect();
        OperatorSet::default_for(names).expect("valid synthetic grammar")
    }
}

fn synthetic_leaf(spec: &SyntheticSpec, rng: &mut impl Rng) -> Expr {
    if rng.gen_bool(spec.constant_prob) {
        let magnitude = rng.gen_range(0.1..2.0);
        let sign = if rng.gen_bool(0.3) { -1.0 } else { 1.0 };
        Expr::constant(sign * magnitude)
    } else {
        Expr::variable(rng.gen_range(0..spec.n_vars))
    }
}

fn synthetic_tree(spec: &SyntheticSpec, budget: usize, ops: &OperatorSet, rng: &mut impl Rng) -> Expr {
    if budget <= 1 {
        return synthetic_leaf(spec, rng);
    }
    if budget >= 2 && rng.gen_bool(spec.unary_weight) {
        let unary = ops.unary_ops();
        let op = unary[rng.gen_range(0..unary.len())];
        return Expr::unary(op, synthetic_tree(spec, budget - 1, ops, rng));
    }
    if budget < 3 {
        return Expr::unary(
            ops.unary_ops()[rng.gen_range(0..ops.unary_ops().len())],
            synthetic_leaf(spec, rng),
        );
    }
    let op = ops.binary_ops()[rng.gen_range(0..ops.binary_ops().len())];
    let left_budget = rng.gen_range(1..=(budget - 2));
    let left = synthetic_tree(spec, left_budget, ops, rng);
    let right = synthetic_tree(spec, budget - 1 - left_budget, ops, rng);
    Expr::binary(op, left, right)
}

/// Generates `(ground_truth, dataset)` for a synthetic problem. Candidate
/// expressions are rejected when they are nearly constant on the sample,
/// explode numerically, or are non-finite on more than 1% of the sampled
/// domain.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    rng: &mut impl Rng,
) -> Result<(Expr, Dataset), DataError> {
    spec.validate()?;
    let ops = spec.operator_set();
    let ranges: Vec<VarRange> = ops
        .variable_names()
        .iter()
        .map(|n| VarRange::new(n.clone(), spec.var_range.0, spec.var_range.1))
        .collect();
    const MAX_CANDIDATES: usize = 500;
    for _ in 0..MAX_CANDIDATES {
        let target_complexity = rng.gen_range(7..spec.max_complexity.max(9));
        let candidate = synthetic_tree(spec, target_complexity, &ops, rng).simplify();
        if candidate.complexity() >= spec.max_complexity || candidate.complexity() < 5 {
            continue;
        }
        if candidate.variables_used().is_empty() {
            continue;
        }

        // Probe finiteness rate before committing to a full sample.
        let probe = 200;
        let mut finite = 0;
        let mut row = vec![0.0; spec.n_vars];
        for _ in 0..probe {
            for (j, r) in ranges.iter().enumerate() {
                row[j] = rng.gen_range(r.low..r.high);
            }
            let v = candidate.eval_row(&row);
            if v.is_finite() && v.abs() < 1e8 {
                finite += 1;
            }
        }
        if (finite as f64) < 0.99 * probe as f64 {
            continue;
        }

        let dataset = match dataset_from_expr(&candidate, &ranges, spec.n_samples, rng) {
            Ok(d) => d,
            Err(DataError::GenerationExhausted(_)) => continue,
            Err(e) => return Err(e),
        };
        if dataset.y().iter().any(|v| v.abs() >= 1e8) {
            continue;
        }
        let mean = dataset.y().iter().sum::<f64>() / dataset.n_rows() as f64;
        let variance = dataset
            .y()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / dataset.n_rows() as f64;
        if variance < 1e-12 {
            continue;
        }
        return Ok((candidate, dataset));
    }
    Err(DataError::GenerationExhausted(MAX_CANDIDATES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset() -> Dataset {
        Dataset::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            vec![7.0, 8.0, 9.0],
            "y".into(),
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            vec![
                vec![0.1, 1.9181636e-5, 3.0],
                vec![std::f64::consts::PI, -2.5, 1e300],
            ],
            vec![0.07957782, -0.0, 42.0],
            "y".into(),
        )
        .unwrap();
        write_csv(&d, &path).unwrap();
        let loaded = load_csv(&path, "y").unwrap();
        assert_eq!(loaded, d);
    }

    #[test]
    fn load_csv_reports_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "a,b,y\n1,2,3\n").unwrap();
        assert!(matches!(
            load_csv(&path, "missing"),
            Err(DataError::MissingTarget(_))
        ));
        let d = load_csv(&path, "y").unwrap();
        assert_eq!(d.variable_names(), &["a".to_string(), "b".to_string()]);
        std::fs::write(&path, "a,y\n1,oops\n").unwrap();
        assert!(matches!(
            load_csv(&path, "y"),
            Err(DataError::NonNumericCell { row: 0, col: 1 })
        ));
    }

    #[test]
    fn noise_is_scaled_by_target_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let y: Vec<f64> = (0..n).map(|i| 2.0 + (i as f64 % 7.0)).collect();
        let d = Dataset::new(
            vec!["x".into()],
            vec![vec![1.0; n]],
            y.clone(),
            "y".into(),
        )
        .unwrap();
        let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let noisy = add_target_noise(&d, 0.001, &mut rng);
        assert_eq!(noisy.columns(), d.columns());
        let eps: Vec<f64> = noisy.y().iter().zip(y.iter()).map(|(a, b)| a - b).collect();
        let std = (eps.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        let ratio = std / rms;
        assert!(
            (0.00095..=0.00105).contains(&ratio),
            "noise ratio {ratio} out of band"
        );
    }

    #[test]
    fn noise_degenerate_cases_leave_target_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = small_dataset();
        assert_eq!(add_target_noise(&d, 0.0, &mut rng), d);
        let zeros = Dataset::new(
            vec!["x".into()],
            vec![vec![1.0, 2.0]],
            vec![0.0, 0.0],
            "y".into(),
        )
        .unwrap();
        assert_eq!(add_target_noise(&zeros, 0.001, &mut rng), zeros);
    }

    #[test]
    fn distractors_append_without_touching_originals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = small_dataset();
        let pool = default_distractor_names();
        assert_eq!(add_distractors(&d, 0, &pool, &mut rng).unwrap(), d);
        let with = add_distractors(&d, 2, &pool, &mut rng).unwrap();
        assert_eq!(with.n_features(), 4);
        assert_eq!(&with.columns()[..2], d.columns());
        assert_eq!(with.y(), d.y());

        let colliding = vec!["a".to_string()];
        assert!(matches!(
            add_distractors(&d, 1, &colliding, &mut rng),
            Err(DataError::NameCollision(_))
        ));
        assert!(matches!(
            add_distractors(&d, 5, &colliding[..0].to_vec(), &mut rng),
            Err(DataError::NamePoolExhausted { .. })
        ));
    }

    #[test]
    fn split_sizes_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10;
        let d = Dataset::new(
            vec!["x".into()],
            vec![(0..n).map(|i| i as f64).collect()],
            (0..n).map(|i| i as f64 * 2.0).collect(),
            "y".into(),
        )
        .unwrap();
        let (train, val) = split(&d, 0.8, &mut rng);
        assert_eq!(train.n_rows(), 8);
        assert_eq!(val.n_rows(), 2);
        let mut all: Vec<f64> = train
            .columns()[0]
            .iter()
            .chain(val.columns()[0].iter())
            .copied()
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());

        // Same seed, same split.
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let (train2, _) = split(&d, 0.8, &mut rng2);
        assert_eq!(train, train2);
    }

    #[test]
    fn split_matches_published_benchmark_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 53_812;
        let d = Dataset::new(
            vec!["x".into()],
            vec![vec![1.0; n]],
            vec![0.5; n],
            "score".into(),
        )
        .unwrap();
        let (train, val) = split(&d, 0.8, &mut rng);
        assert_eq!(train.n_rows(), 43_049);
        assert_eq!(val.n_rows(), 10_763);
    }

    #[test]
    fn synthetic_generation_satisfies_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = SyntheticSpec::new(4, 19, 256, 6);
        for _ in 0..10 {
            let (truth, dataset) = generate_synthetic(&spec, &mut rng).unwrap();
            assert!(truth.complexity() < 20);
            assert_eq!(dataset.n_rows(), 256);
            // The target column is exactly the expression evaluated on the
            // features (pre-noise).
            let recomputed = truth.evaluate(&dataset).unwrap();
            for (a, b) in recomputed.iter().zip(dataset.y().iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn paper_style_nested_exemplar_is_expressible() {
        // A deeply nested unary/constant form representative of the
        // synthetic family must parse in the generator grammar and evaluate
        // finitely on positive inputs.
        let spec = SyntheticSpec::new(3, 19, 16, 0);
        let ops = spec.operator_set();
        let e = parse(
            "(0.782*y3 + 0.536) / (y2 * exp(y1) * (log(y2) - y2*exp(cos(y1))))",
            &ops,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ranges: Vec<VarRange> = ops
            .variable_names()
            .iter()
            .map(|n| VarRange::new(n.clone(), 1.0, 3.0))
            .collect();
        let d = dataset_from_expr(&e, &ranges, 64, &mut rng).unwrap();
        assert!(d.y().iter().all(|v| v.is_finite()));
    }
}
