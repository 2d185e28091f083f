use serde::{Deserialize, Serialize};

use crate::error::SimError;

/// Multiprogrammed system metrics.
///
/// `harmonic` is normalized per core, so it is 1 when no core slows down;
/// `weighted` is not, so it equals the core count in that case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub weighted_speedup: f64,
    pub harmonic_speedup: f64,
    pub max_slowdown: f64,
}

pub fn metrics(alone: &[u64], shared: &[u64]) -> Result<Metrics, SimError> {
    if alone.len() != shared.len() || alone.is_empty() {
        return Err(SimError::Trace("metrics need one alone and one shared time per core".into()));
    }
    if alone.iter().chain(shared).any(|&t| t == 0) {
        return Err(SimError::Trace("execution times must be positive".into()));
    }
    let slowdowns: Vec<f64> = alone.iter().zip(shared).map(|(&a, &s)| s as f64 / a as f64).collect();
    Ok(Metrics {
        weighted_speedup: slowdowns.iter().map(|s| 1.0 / s).sum(),
        harmonic_speedup: slowdowns.len() as f64 / slowdowns.iter().sum::<f64>(),
        max_slowdown: slowdowns.iter().copied().fold(f64::MIN, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unchanged_times() {
        let m = metrics(&[100, 200, 300], &[100, 200, 300]).unwrap();
        assert_eq!((m.weighted_speedup, m.harmonic_speedup, m.max_slowdown), (3.0, 1.0, 1.0));
    }

    #[test]
    fn one_core_twice_as_slow() {
        let m = metrics(&[100, 100], &[200, 100]).unwrap();
        assert_eq!(m.weighted_speedup, 1.5);
        assert_eq!(m.max_slowdown, 2.0);
        assert!((m.harmonic_speedup - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_time_is_an_error() {
        assert!(metrics(&[0], &[1]).is_err());
        assert!(metrics(&[1, 2], &[1]).is_err());
    }
}
