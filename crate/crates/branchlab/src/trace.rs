use serde::{Deserialize, Serialize};

/// Why a simulated replica stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    /// Ran to the requested horizon.
    Horizon,
    /// Population hit zero; it stays zero afterwards.
    Extinct,
    /// Population reached the cap; treated as survival by the estimators.
    CapHit,
}

/// Time-stamped population counts of one replica. Counts are absorbing at
/// zero: once extinct, every later count is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrace {
    pub times: Vec<f64>,
    pub counts: Vec<u64>,
    pub terminator: Terminator,
}

impl PopulationTrace {
    pub fn new(times: Vec<f64>, counts: Vec<u64>, terminator: Terminator) -> Self {
        debug_assert_eq!(times.len(), counts.len());
        debug_assert!(
            counts
                .iter()
                .skip_while(|&&c| c > 0)
                .all(|&c| c == 0),
            "counts must stay zero after absorption"
        );
        Self { times, counts, terminator }
    }

    pub fn is_extinct(&self) -> bool {
        self.terminator == Terminator::Extinct
    }

    pub fn final_count(&self) -> u64 {
        *self.counts.last().unwrap_or(&0)
    }
}

/// Binomial survival frequency with its standard error and the replica
/// bookkeeping behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub survived: usize,
    pub cap_hits: usize,
    /// Heuristic lower bound `1 - q^cap` on the survival probability of a
    /// cap-hitting replica, with `q` the single-type extinction probability
    /// at the start state. Quantifies the misclassification risk of counting
    /// cap hits as survival.
    pub cap_survival_lower_bound: Option<f64>,
}

impl SurvivalEstimate {
    pub fn from_outcomes(survived: usize, cap_hits: usize, replicas: usize) -> Self {
        let p = survived as f64 / replicas as f64;
        let stderr = (p * (1.0 - p) / replicas as f64).sqrt();
        Self {
            estimate: p,
            stderr,
            replicas,
            survived,
            cap_hits,
            cap_survival_lower_bound: None,
        }
    }
}
