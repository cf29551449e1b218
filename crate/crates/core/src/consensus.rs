//! Reputation-weighted consensus over the report matrix.
//!
//! Reporters' revealed observations form a matrix with reporters as rows
//! and events as columns, row-weighted by each reporter's reputation. The
//! pipeline: impute missing entries, subtract the reputation-weighted
//! column means, form the unbiased weighted covariance of the events,
//! eigendecompose it, select the leading components until a fixed fraction
//! of variance is explained, and sum them into a coordination vector.
//! Projecting each reporter's centered row onto that vector scores their
//! conformity with the consensus; reputation is then redistributed toward
//! conforming reporters, zero-sum.

use crate::units::Amount;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default fraction of explained variance gathered into the coordination
/// vector.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.9;
/// Default blend between prior reputation and conformity when
/// redistributing (fraction kept from the prior).
pub const DEFAULT_BLEND_OLD: f64 = 0.8;
/// Dead-zone half-width for resolving binary events from the weighted mean.
pub const DEFAULT_BINARY_MARGIN: f64 = 0.15;

/// One cell of the report matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportEntry {
    /// A numeric observation (0 or 1 for binary events).
    Value(f64),
    /// The reporter submitted a ballot but judged this event unanswerable.
    Invalid,
    /// No entry was submitted for this event.
    NoReport,
}

impl ReportEntry {
    pub fn is_no_report(&self) -> bool {
        matches!(self, ReportEntry::NoReport)
    }
}

/// Reporters x events observation matrix with reputation row weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMatrix {
    /// Reporter identifiers (addresses), one per row.
    pub reporters: Vec<String>,
    /// Reputation weight per reporter; all strictly positive.
    pub weights: Vec<f64>,
    /// Event identifiers, one per column.
    pub events: Vec<String>,
    /// Row-major observations.
    pub entries: Vec<Vec<ReportEntry>>,
}

/// How to turn a per-event weighted mean into a final outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutcomeSpec {
    Binary { margin: f64 },
    Scalar { lower: f64, upper: f64 },
    Categorical { labels: usize },
}

impl OutcomeSpec {
    /// Numeric stand-in for an INVALID ballot entry: the midpoint of the
    /// event's valid range, which pulls the mean toward the dead zone.
    fn invalid_encoding(&self) -> f64 {
        match self {
            OutcomeSpec::Binary { .. } => 0.5,
            OutcomeSpec::Scalar { lower, upper } => (lower + upper) / 2.0,
            OutcomeSpec::Categorical { labels } => (*labels as f64 - 1.0) / 2.0,
        }
    }
}

/// Final outcome of one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Outcome {
    Resolved(f64),
    Invalid,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConsensusError {
    #[error("report matrix is empty")]
    EmptyMatrix,
    #[error("report matrix needs at least two reporters, got {0}")]
    TooFewReporters(usize),
    #[error("matrix shape is inconsistent")]
    ShapeMismatch,
    #[error("reporter weights must be strictly positive and finite")]
    BadWeights,
    #[error("weighted covariance denominator vanished; a re-vote is required")]
    DegenerateWeights,
    #[error("covariance input is not symmetric")]
    NotSymmetric,
    #[error("outcome spec count does not match event count")]
    SpecMismatch,
}

/// The report matrix with per-column reputation-weighted means removed.
#[derive(Debug, Clone)]
pub struct CenteredMatrix {
    /// Centered values, reporters x events.
    pub values: DMatrix<f64>,
    /// Reputation-weighted column means of the (imputed) raw matrix.
    pub column_means: DVector<f64>,
    /// Columns where every entry was NO-REPORT; these are unresolvable.
    pub unresolvable: Vec<bool>,
}

/// Full diagnostics from the PCA pipeline.
#[derive(Debug, Clone)]
pub struct ConsensusAnalysis {
    pub covariance: DMatrix<f64>,
    /// Eigenvalues in descending order.
    pub eigenvalues: DVector<f64>,
    /// Matching eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
    /// Projection of each reporter's centered row onto each component
    /// (reporters x components).
    pub projections: DMatrix<f64>,
    /// Cumulative explained variance per component.
    pub explained: Vec<f64>,
    /// Number of components gathered into the coordination vector.
    pub selected: usize,
    /// Coordination vector, or None on the degenerate (unanimous) path.
    pub coordination: Option<DVector<f64>>,
}

/// Per-branch result: event outcomes plus the zero-sum reputation update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub reporters: Vec<String>,
    pub events: Vec<String>,
    pub outcomes: Vec<Outcome>,
    /// Raw conformity-weighted column means before outcome resolution.
    pub raw_outcomes: Vec<f64>,
    /// Updated reputation per reporter, in fixed point, summing exactly to
    /// the prior total.
    pub updated_reputation: Vec<Amount>,
    /// Conformity weight per reporter in [0, 1].
    pub conformity: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Serializable view of the PCA internals, rounded for determinism.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub eigenvalues: Vec<f64>,
    pub explained: Vec<f64>,
    pub selected: usize,
    pub coordination: Option<Vec<f64>>,
    pub degenerate: bool,
}

/// Tuning knobs for the redistribution step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusParams {
    pub variance_threshold: f64,
    /// Fraction of prior reputation retained in the blend.
    pub blend_old: f64,
}

impl Default for ConsensusParams {
    fn default() -> Self {
        ConsensusParams {
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            blend_old: DEFAULT_BLEND_OLD,
        }
    }
}

impl ReportMatrix {
    pub fn reporter_count(&self) -> usize {
        self.reporters.len()
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    fn check(&self) -> Result<(), ConsensusError> {
        if self.reporters.is_empty() || self.events.is_empty() {
            return Err(ConsensusError::EmptyMatrix);
        }
        if self.reporters.len() < 2 {
            return Err(ConsensusError::TooFewReporters(self.reporters.len()));
        }
        if self.weights.len() != self.reporters.len()
            || self.entries.len() != self.reporters.len()
            || self.entries.iter().any(|r| r.len() != self.events.len())
        {
            return Err(ConsensusError::ShapeMismatch);
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(ConsensusError::BadWeights);
        }
        Ok(())
    }

    /// Rows whose every entry is NO-REPORT: these reporters earn zero
    /// conformity.
    fn absent_rows(&self) -> Vec<bool> {
        self.entries
            .iter()
            .map(|row| row.iter().all(ReportEntry::is_no_report))
            .collect()
    }

    /// Dense numeric matrix: INVALID entries take the event's midpoint
    /// encoding, NO-REPORT entries the reputation-weighted mean of the
    /// present entries in their column (neutral imputation).
    fn to_numeric(&self, specs: &[OutcomeSpec]) -> Result<(DMatrix<f64>, Vec<bool>), ConsensusError> {
        if specs.len() != self.events.len() {
            return Err(ConsensusError::SpecMismatch);
        }
        let (rows, cols) = (self.reporters.len(), self.events.len());
        let mut numeric = DMatrix::zeros(rows, cols);
        let mut unresolvable = vec![false; cols];
        for j in 0..cols {
            let mut present_weight = 0.0;
            let mut present_sum = 0.0;
            for i in 0..rows {
                let v = match self.entries[i][j] {
                    ReportEntry::Value(v) => v,
                    ReportEntry::Invalid => specs[j].invalid_encoding(),
                    ReportEntry::NoReport => continue,
                };
                present_weight += self.weights[i];
                present_sum += self.weights[i] * v;
                numeric[(i, j)] = v;
            }
            if present_weight == 0.0 {
                unresolvable[j] = true;
                continue;
            }
            let mean = present_sum / present_weight;
            for i in 0..rows {
                if self.entries[i][j].is_no_report() {
                    numeric[(i, j)] = mean;
                }
            }
        }
        Ok((numeric, unresolvable))
    }
}

/// Subtract the reputation-weighted column mean from every column.
pub fn center(matrix: &ReportMatrix, specs: &[OutcomeSpec]) -> Result<CenteredMatrix, ConsensusError> {
    matrix.check()?;
    let (numeric, unresolvable) = matrix.to_numeric(specs)?;
    let total: f64 = matrix.weights.iter().sum();
    let mut means = DVector::zeros(matrix.event_count());
    for j in 0..matrix.event_count() {
        let mut acc = 0.0;
        for i in 0..matrix.reporter_count() {
            acc += matrix.weights[i] * numeric[(i, j)];
        }
        means[j] = acc / total;
    }
    let mut values = numeric;
    for j in 0..values.ncols() {
        for i in 0..values.nrows() {
            values[(i, j)] -= means[j];
        }
    }
    Ok(CenteredMatrix { values, column_means: means, unresolvable })
}

/// Unbiased weighted covariance of the events:
/// R / (R^2 - sum r_i^2) * sum_i r_i * c_i^T c_i over centered rows c_i.
pub fn weighted_covariance(
    centered: &DMatrix<f64>,
    weights: &[f64],
) -> Result<DMatrix<f64>, ConsensusError> {
    if weights.len() != centered.nrows() || weights.is_empty() {
        return Err(ConsensusError::ShapeMismatch);
    }
    let total: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    let denom = total * total - sum_sq;
    if denom <= 0.0 {
        return Err(ConsensusError::DegenerateWeights);
    }
    let cols = centered.ncols();
    let mut cov = DMatrix::zeros(cols, cols);
    for (i, &w) in weights.iter().enumerate() {
        let row = centered.row(i);
        for a in 0..cols {
            for b in a..cols {
                cov[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    let factor = total / denom;
    for a in 0..cols {
        for b in a..cols {
            let v = cov[(a, b)] * factor;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Symmetric eigendecomposition with eigenvalues in descending order and a
/// deterministic sign convention (first non-negligible component of each
/// eigenvector is positive).
pub fn decompose(cov: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>), ConsensusError> {
    if cov.nrows() != cov.ncols() {
        return Err(ConsensusError::NotSymmetric);
    }
    let scale = cov.amax().max(1.0);
    for a in 0..cov.nrows() {
        for b in 0..a {
            if (cov[(a, b)] - cov[(b, a)]).abs() > 1e-9 * scale {
                return Err(ConsensusError::NotSymmetric);
            }
        }
    }
    let eig = cov.clone().symmetric_eigen();
    let n = cov.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (rank, &idx) in order.iter().enumerate() {
        values[rank] = eig.eigenvalues[idx];
        let mut col = eig.eigenvectors.column(idx).clone_owned();
        if let Some(lead) = col.iter().find(|v| v.abs() > 1e-12) {
            if *lead < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(rank, &col);
    }
    Ok((values, vectors))
}

/// Cumulative explained-variance fractions and the number of leading
/// components needed to reach the threshold. Returns None for an all-zero
/// spectrum (the unanimous, degenerate path).
pub fn select_components(eigenvalues: &DVector<f64>, threshold: f64) -> Option<(usize, Vec<f64>)> {
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 1e-12 {
        return None;
    }
    let mut explained = Vec::with_capacity(eigenvalues.len());
    let mut acc = 0.0;
    let mut selected = eigenvalues.len();
    for (k, l) in eigenvalues.iter().enumerate() {
        acc += l.max(0.0) / total;
        explained.push(acc);
        if selected == eigenvalues.len() && acc >= threshold - 1e-12 {
            selected = k + 1;
        }
    }
    Some((selected, explained))
}

/// Sum of the selected leading components. The component that crosses the
/// threshold is included.
pub fn coordination_vector(vectors: &DMatrix<f64>, selected: usize) -> DVector<f64> {
    let mut v = DVector::zeros(vectors.nrows());
    for i in 0..selected {
        v += vectors.column(i);
    }
    v
}

/// Run the full pipeline on a report matrix.
pub fn analyze(
    matrix: &ReportMatrix,
    specs: &[OutcomeSpec],
    params: &ConsensusParams,
) -> Result<(CenteredMatrix, ConsensusAnalysis), ConsensusError> {
    let centered = center(matrix, specs)?;
    let cov = weighted_covariance(&centered.values, &matrix.weights)?;
    let (values, vectors) = decompose(&cov)?;
    let projections = &centered.values * &vectors;
    let analysis = match select_components(&values, params.variance_threshold) {
        Some((selected, explained)) => {
            let v = coordination_vector(&vectors, selected);
            ConsensusAnalysis {
                covariance: cov,
                eigenvalues: values,
                eigenvectors: vectors,
                projections,
                explained,
                selected,
                coordination: Some(v),
            }
        }
        None => ConsensusAnalysis {
            covariance: cov,
            eigenvalues: values,
            eigenvectors: vectors,
            projections,
            explained: Vec::new(),
            selected: 0,
            coordination: None,
        },
    };
    Ok((centered, analysis))
}

/// Resolve outcomes and redistribute reputation.
///
/// `prior_reputation` is the fixed-point reputation backing each row; its
/// sum is conserved exactly in the result.
pub fn redistribute(
    matrix: &ReportMatrix,
    specs: &[OutcomeSpec],
    prior_reputation: &[Amount],
    params: &ConsensusParams,
) -> Result<ConsensusResult, ConsensusError> {
    matrix.check()?;
    if prior_reputation.len() != matrix.reporter_count() {
        return Err(ConsensusError::ShapeMismatch);
    }
    let (centered, analysis) = analyze(matrix, specs, params)?;
    let absent = matrix.absent_rows();
    let rows = matrix.reporter_count();

    // Conformity in [0,1] per reporter. On the degenerate (unanimous) path
    // every submitted ballot conforms fully; otherwise scores are the
    // projections onto the coordination vector, shifted by the
    // worse-performing extreme. The shift direction (and with it the
    // eigenvector sign ambiguity) is settled by favoring the
    // reputation-weighted majority.
    let mut conformity: Vec<f64> = match &analysis.coordination {
        None => vec![1.0; rows],
        Some(v) => {
            let scores: Vec<f64> = (0..rows).map(|i| centered.values.row(i).transpose().dot(v)).collect();
            let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            if range <= 1e-12 {
                vec![1.0; rows]
            } else {
                let up: Vec<f64> = scores.iter().map(|s| (s - min) / range).collect();
                let down: Vec<f64> = scores.iter().map(|s| (max - s) / range).collect();
                let mass = |c: &[f64]| -> f64 {
                    c.iter()
                        .zip(&matrix.weights)
                        .zip(&absent)
                        .map(|((ci, w), a)| if *a { 0.0 } else { ci * w })
                        .sum()
                };
                if mass(&up) >= mass(&down) {
                    up
                } else {
                    down
                }
            }
        }
    };
    for (c, a) in conformity.iter_mut().zip(&absent) {
        if *a {
            *c = 0.0;
        }
    }

    // Outcomes: conformity-and-reputation-weighted column means of the
    // imputed numeric matrix, then resolved per event kind.
    let (numeric, _) = matrix.to_numeric(specs)?;
    let mut raw_outcomes = Vec::with_capacity(matrix.event_count());
    let mut outcomes = Vec::with_capacity(matrix.event_count());
    for j in 0..matrix.event_count() {
        if centered.unresolvable[j] {
            raw_outcomes.push(f64::NAN);
            outcomes.push(Outcome::Invalid);
            continue;
        }
        let mut wsum = 0.0;
        let mut acc = 0.0;
        for i in 0..rows {
            let u = matrix.weights[i] * conformity[i];
            wsum += u;
            acc += u * numeric[(i, j)];
        }
        // If every conforming weight vanished, fall back to the plain
        // reputation-weighted mean.
        let raw = if wsum > 0.0 { acc / wsum } else { centered.column_means[j] };
        raw_outcomes.push(raw);
        outcomes.push(resolve_outcome(raw, &specs[j]));
    }

    // Reputation update. Unanimous path with every reporter present is an
    // exact fixed point; otherwise blend prior reputation with
    // reputation-scaled conformity, zero-sum by largest remainder.
    let total_fixed: Amount = prior_reputation.iter().copied().sum();
    let updated_reputation = if analysis.coordination.is_none() && absent.iter().all(|a| !a) {
        prior_reputation.to_vec()
    } else {
        let conf_mass: f64 = (0..rows).map(|i| matrix.weights[i] * conformity[i]).sum();
        let shares: Vec<f64> = if conf_mass > 0.0 {
            (0..rows)
                .map(|i| {
                    params.blend_old * matrix.weights[i]
                        + (1.0 - params.blend_old)
                            * matrix.weights.iter().sum::<f64>()
                            * (matrix.weights[i] * conformity[i] / conf_mass)
                })
                .collect()
        } else {
            matrix.weights.clone()
        };
        largest_remainder_allocate(total_fixed, &shares)
    };

    let diagnostics = Diagnostics {
        eigenvalues: analysis.eigenvalues.iter().map(|v| round_1e9(*v)).collect(),
        explained: analysis.explained.iter().map(|v| round_1e9(*v)).collect(),
        selected: analysis.selected,
        coordination: analysis
            .coordination
            .as_ref()
            .map(|v| v.iter().map(|x| round_1e9(*x)).collect()),
        degenerate: analysis.coordination.is_none(),
    };

    Ok(ConsensusResult {
        reporters: matrix.reporters.clone(),
        events: matrix.events.clone(),
        outcomes,
        raw_outcomes: raw_outcomes.iter().map(|v| round_1e9(*v)).collect(),
        updated_reputation,
        conformity: conformity.iter().map(|v| round_1e9(*v)).collect(),
        diagnostics,
    })
}

fn resolve_outcome(raw: f64, spec: &OutcomeSpec) -> Outcome {
    match spec {
        OutcomeSpec::Binary { margin } => {
            if raw >= 0.5 + margin {
                Outcome::Resolved(1.0)
            } else if raw <= 0.5 - margin {
                Outcome::Resolved(0.0)
            } else {
                Outcome::Invalid
            }
        }
        OutcomeSpec::Scalar { lower, upper } => Outcome::Resolved(raw.clamp(*lower, *upper)),
        OutcomeSpec::Categorical { labels } => {
            Outcome::Resolved(raw.round().clamp(0.0, *labels as f64 - 1.0))
        }
    }
}

/// Round to 10^-9 for deterministic serialization of consensus floats.
pub fn round_1e9(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    (v * 1e9).round() / 1e9
}

/// Split `total` into fixed-point parts proportional to `shares`, exactly
/// conserving the total via largest-remainder rounding.
pub fn largest_remainder_allocate(total: Amount, shares: &[f64]) -> Vec<Amount> {
    if shares.is_empty() {
        return Vec::new();
    }
    let mass: f64 = shares.iter().sum();
    if mass <= 0.0 {
        // Nothing to apportion against; give everything to the first slot.
        let mut out = vec![Amount::ZERO; shares.len()];
        out[0] = total;
        return out;
    }
    let total_scaled = total.scaled();
    let ideal: Vec<f64> = shares.iter().map(|s| s / mass * total_scaled as f64).collect();
    let mut floors: Vec<i128> = ideal.iter().map(|x| x.floor() as i128).collect();
    let assigned: i128 = floors.iter().sum();
    let mut leftover = total_scaled - assigned;
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - floors[a] as f64;
        let rb = ideal[b] - floors[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut idx = 0;
    while leftover > 0 {
        floors[order[idx % order.len()]] += 1;
        leftover -= 1;
        idx += 1;
    }
    // Float floors can overshoot in pathological cases; claw back.
    idx = order.len();
    while leftover < 0 {
        idx -= 1;
        let slot = order[idx % order.len()];
        if floors[slot] > 0 {
            floors[slot] -= 1;
            leftover += 1;
        }
        if idx == 0 {
            idx = order.len();
        }
    }
    floors.into_iter().map(Amount::from_scaled).collect()
}

/// Export the report matrix as CSV: one row per reporter with a weight
/// column; NO-REPORT as `NA`, INVALID as `INVALID`.
pub fn matrix_to_csv(matrix: &ReportMatrix) -> String {
    let mut out = String::from("reporter,weight");
    for e in &matrix.events {
        out.push(',');
        out.push_str(e);
    }
    out.push('\n');
    for i in 0..matrix.reporter_count() {
        out.push_str(&matrix.reporters[i]);
        out.push(',');
        out.push_str(&format!("{}", matrix.weights[i]));
        for j in 0..matrix.event_count() {
            out.push(',');
            match matrix.entries[i][j] {
                ReportEntry::Value(v) => out.push_str(&format!("{}", v)),
                ReportEntry::Invalid => out.push_str("INVALID"),
                ReportEntry::NoReport => out.push_str("NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Parse the CSV form produced by [`matrix_to_csv`].
pub fn matrix_from_csv(text: &str) -> Result<ReportMatrix, ConsensusError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(ConsensusError::EmptyMatrix)?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "reporter" || cols[1] != "weight" {
        return Err(ConsensusError::ShapeMismatch);
    }
    let events: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut reporters = Vec::new();
    let mut weights = Vec::new();
    let mut entries = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(ConsensusError::ShapeMismatch);
        }
        reporters.push(fields[0].to_string());
        weights.push(fields[1].parse::<f64>().map_err(|_| ConsensusError::BadWeights)?);
        let row: Result<Vec<ReportEntry>, ConsensusError> = fields[2..]
            .iter()
            .map(|f| match *f {
                "NA" => Ok(ReportEntry::NoReport),
                "INVALID" => Ok(ReportEntry::Invalid),
                v => v
                    .parse::<f64>()
                    .map(ReportEntry::Value)
                    .map_err(|_| ConsensusError::ShapeMismatch),
            })
            .collect();
        entries.push(row?);
    }
    let matrix = ReportMatrix { reporters, weights, events, entries };
    matrix.check()?;
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_specs(n: usize) -> Vec<OutcomeSpec> {
        vec![OutcomeSpec::Binary { margin: DEFAULT_BINARY_MARGIN }; n]
    }

    fn value_matrix(weights: Vec<f64>, rows: Vec<Vec<f64>>) -> ReportMatrix {
        let events = (0..rows[0].len()).map(|j| format!("e{j}")).collect();
        ReportMatrix {
            reporters: (0..rows.len()).map(|i| format!("r{i}")).collect(),
            weights,
            events,
            entries: rows
                .into_iter()
                .map(|r| r.into_iter().map(ReportEntry::Value).collect())
                .collect(),
        }
    }

    #[test]
    fn centering_equal_weights() {
        let m = value_matrix(vec![1.0, 1.0], vec![vec![1.0], vec![0.0]]);
        let c = center(&m, &binary_specs(1)).unwrap();
        assert!((c.values[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.values[(1, 0)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn centering_weighted() {
        // weights (3,1), column (1,0): mean 0.75, centered (0.25, -0.75).
        let m = value_matrix(vec![3.0, 1.0], vec![vec![1.0], vec![0.0]]);
        let c = center(&m, &binary_specs(1)).unwrap();
        assert!((c.values[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((c.values[(1, 0)] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn centering_identical_rows_is_zero() {
        let m = value_matrix(vec![2.0, 5.0, 1.0], vec![vec![1.0, 0.0]; 3]);
        let c = center(&m, &binary_specs(2)).unwrap();
        assert!(c.values.amax() < 1e-15);
    }

    #[test]
    fn weighted_column_means_vanish_after_centering() {
        let m = value_matrix(
            vec![1.5, 2.5, 0.25],
            vec![vec![1.0, 0.3, 0.0], vec![0.0, 0.9, 1.0], vec![1.0, 0.1, 0.5]],
        );
        let c = center(&m, &binary_specs(3)).unwrap();
        for j in 0..3 {
            let mean: f64 = (0..3).map(|i| m.weights[i] * c.values[(i, j)]).sum::<f64>()
                / m.weights.iter().sum::<f64>();
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_matches_unweighted_textbook_case() {
        // Equal unit weights on reports (1,0)/(0,1) reduce to the plain
        // unbiased sample covariance: variance 0.5, covariance -0.5.
        let m = value_matrix(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = center(&m, &binary_specs(2)).unwrap();
        let cov = weighted_covariance(&c.values, &m.weights).unwrap();
        assert!((cov[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((cov[(1, 1)] - 0.5).abs() < 1e-12);
        assert!((cov[(0, 1)] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn covariance_zero_for_identical_rows() {
        let m = value_matrix(vec![1.0, 2.0, 3.0], vec![vec![0.5, 1.0]; 3]);
        let c = center(&m, &binary_specs(2)).unwrap();
        let cov = weighted_covariance(&c.values, &m.weights).unwrap();
        assert!(cov.amax() < 1e-20);
    }

    #[test]
    fn covariance_rejects_single_reporter() {
        let centered = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert_eq!(
            weighted_covariance(&centered, &[5.0]),
            Err(ConsensusError::DegenerateWeights)
        );
    }

    #[test]
    fn decompose_diagonal() {
        let cov = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = decompose(&cov).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((vecs[(1, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_rejects_asymmetric() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert_eq!(decompose(&cov).err(), Some(ConsensusError::NotSymmetric));
    }

    #[test]
    fn component_selection_boundaries() {
        let vals = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let (n, explained) = select_components(&vals, 0.9).unwrap();
        assert_eq!(n, 1);
        assert!((explained[0] - 1.0).abs() < 1e-15);

        let vals = DVector::from_vec(vec![2.0, 1.0, 1.0]);
        // alpha_1 = 0.5 exactly meets a 0.5 threshold (H[0] = 1).
        let (n, _) = select_components(&vals, 0.5).unwrap();
        assert_eq!(n, 1);
        let (n, _) = select_components(&vals, 0.75).unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn all_zero_spectrum_is_degenerate() {
        let vals = DVector::from_vec(vec![0.0, 0.0]);
        assert!(select_components(&vals, 0.9).is_none());
    }

    #[test]
    fn coordination_vector_norm_for_orthonormal_components() {
        let vecs = DMatrix::identity(3, 3);
        let v = coordination_vector(&vecs, 1);
        assert!((v.norm_squared() - 1.0).abs() < 1e-15);
        let v = coordination_vector(&vecs, 2);
        assert!((v.norm_squared() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn unanimity_is_a_fixed_point() {
        let m = value_matrix(vec![5.0, 7.0, 11.0], vec![vec![1.0, 0.0, 1.0]; 3]);
        let prior = vec![
            Amount::from_whole(5),
            Amount::from_whole(7),
            Amount::from_whole(11),
        ];
        let res = redistribute(&m, &binary_specs(3), &prior, &ConsensusParams::default()).unwrap();
        assert_eq!(res.updated_reputation, prior);
        assert_eq!(
            res.outcomes,
            vec![Outcome::Resolved(1.0), Outcome::Resolved(0.0), Outcome::Resolved(1.0)]
        );
    }

    #[test]
    fn absent_reporter_loses_reputation() {
        // Two reporters agree; the third never submitted.
        let mut m = value_matrix(
            vec![10.0, 42.0, 53.0],
            vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]],
        );
        m.entries[2] = vec![ReportEntry::NoReport, ReportEntry::NoReport];
        let prior = vec![
            Amount::from_whole(10),
            Amount::from_whole(42),
            Amount::from_whole(53),
        ];
        let res = redistribute(&m, &binary_specs(2), &prior, &ConsensusParams::default()).unwrap();
        assert!(res.updated_reputation[2] < prior[2]);
        assert!(res.updated_reputation[0] > prior[0]);
        assert!(res.updated_reputation[1] > prior[1]);
        let total: Amount = res.updated_reputation.iter().copied().sum();
        assert_eq!(total, Amount::from_whole(105));
        assert_eq!(res.outcomes[0], Outcome::Resolved(1.0));
        assert_eq!(res.outcomes[1], Outcome::Resolved(0.0));
    }

    #[test]
    fn lone_dissenter_loses_reputation() {
        let honest = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        let dissent = vec![0.0, 1.0, 0.0, 0.0, 1.0];
        let m = value_matrix(
            vec![1.0; 4],
            vec![honest.clone(), honest.clone(), honest.clone(), dissent],
        );
        let prior = vec![Amount::from_whole(25); 4];
        let res = redistribute(&m, &binary_specs(5), &prior, &ConsensusParams::default()).unwrap();
        assert!(res.updated_reputation[3] < prior[3]);
        for i in 0..3 {
            assert!(res.updated_reputation[i] > prior[i]);
        }
        let total: Amount = res.updated_reputation.iter().copied().sum();
        assert_eq!(total, Amount::from_whole(100));
        // Consensus should land on the honest side.
        assert_eq!(res.outcomes[0], Outcome::Resolved(1.0));
        assert_eq!(res.outcomes[1], Outcome::Resolved(0.0));
    }

    #[test]
    fn all_no_report_column_is_invalid() {
        let mut m = value_matrix(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        m.entries[0][1] = ReportEntry::NoReport;
        m.entries[1][1] = ReportEntry::NoReport;
        let res = redistribute(
            &m,
            &binary_specs(2),
            &[Amount::from_whole(1), Amount::from_whole(1)],
            &ConsensusParams::default(),
        )
        .unwrap();
        assert_eq!(res.outcomes[1], Outcome::Invalid);
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = ReportMatrix {
            reporters: vec![],
            weights: vec![],
            events: vec![],
            entries: vec![],
        };
        assert_eq!(center(&m, &[]).err(), Some(ConsensusError::EmptyMatrix));
    }

    #[test]
    fn largest_remainder_conserves_exactly() {
        let total = Amount::from_scaled(1_000_000_007);
        let parts = largest_remainder_allocate(total, &[0.3, 0.3, 0.4]);
        let sum: Amount = parts.iter().copied().sum();
        assert_eq!(sum, total);
    }

    #[test]
    fn csv_round_trip() {
        let mut m = value_matrix(vec![2.0, 3.0], vec![vec![1.0, 0.5], vec![0.0, 0.5]]);
        m.entries[0][1] = ReportEntry::Invalid;
        m.entries[1][0] = ReportEntry::NoReport;
        let csv = matrix_to_csv(&m);
        let back = matrix_from_csv(&csv).unwrap();
        assert_eq!(back.reporters, m.reporters);
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.entries, m.entries);
    }
}
