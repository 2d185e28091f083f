use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{neighbors, Defense, DefenseAction, DefenseContext, DefenseKind, DefenseStats};
use crate::profile::HcFirst;

/// Probabilistic adjacent row activation: each activation refreshes both
/// neighbors with probability `p(t)`, chosen so the chance that `t`
/// activations of an aggressor pass without a single refresh is
/// `target_failure_prob`.
#[derive(Debug, Clone)]
pub struct Para {
    target: f64,
    rows: u32,
    rng: ChaCha8Rng,
    stats: DefenseStats,
}

impl Para {
    pub fn new(target_failure_prob: f64, ctx: &DefenseContext) -> Self {
        Para {
            target: target_failure_prob,
            rows: ctx.geometry.rows_per_bank,
            rng: ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x5041_5241),
            stats: DefenseStats::default(),
        }
    }

    /// `1 - f^(1/t)`, the smallest `p` with `(1 - p)^t <= f`; zero for an
    /// unbounded threshold.
    pub fn probability(target_failure_prob: f64, threshold: HcFirst) -> f64 {
        match threshold.get() {
            None => 0.0,
            Some(t) => -f64::exp_m1(target_failure_prob.ln() / t.max(1) as f64),
        }
    }
}

impl Defense for Para {
    fn kind(&self) -> DefenseKind {
        DefenseKind::Para
    }

    fn on_activation(&mut self, bank: usize, row: u32, _cycle: u64, threshold: HcFirst, out: &mut Vec<DefenseAction>) {
        // one draw per activation keeps decisions monotone in the threshold
        let u: f64 = self.rng.random();
        if u < Self::probability(self.target, threshold) {
            self.stats.refreshes += 1;
            out.push(DefenseAction::RefreshRows { bank, rows: neighbors(row, self.rows) });
        }
    }

    fn epoch_reset(&mut self, _cycle: u64) {}

    fn stats(&self) -> DefenseStats {
        self.stats
    }
}
