use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("degenerate population: tp+fn = {positives}, tn+fp = {negatives}")]
    DegeneratePopulation { positives: u64, negatives: u64 },
}

/// Sensitivity tp/(tp+fn), specificity tn/(tn+fp), and their harmonic mean.
pub fn compute_metrics(k: ConfusionCounts) -> Result<Metrics, MetricsError> {
    let positives = k.tp + k.fn_;
    let negatives = k.tn + k.fp;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegeneratePopulation { positives, negatives });
    }
    let sensitivity = k.tp as f64 / positives as f64;
    let specificity = k.tn as f64 / negatives as f64;
    let sum = sensitivity + specificity;
    let f_measure = if sum == 0.0 { 0.0 } else { 2.0 * sensitivity * specificity / sum };
    Ok(Metrics { sensitivity, specificity, f_measure })
}
