//! Token and cost accounting.
//!
//! Prices are integers in micro-currency per 1,000 tokens, so one token at a
//! price of `p` costs exactly `p` nano-currency units. Costs are accumulated in
//! nano-units and never go through floating point.

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prices {
    /// Micro-currency per 1k prompt tokens (e.g. 1500 = $0.0015 / 1k).
    pub prompt_micro_per_1k: u64,
    pub completion_micro_per_1k: u64,
}

impl Prices {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> Cost {
        Cost::from_nano(
            prompt_tokens * self.prompt_micro_per_1k
                + completion_tokens * self.completion_micro_per_1k,
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cost(u64);

impl Cost {
    pub fn from_nano(nano: u64) -> Self {
        Cost(nano)
    }

    pub fn nano(self) -> u64 {
        self.0
    }

    /// Micro-units, rounded half up.
    pub fn micro(self) -> u64 {
        (self.0 + 500) / 1000
    }

    pub fn as_currency(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let micro = self.micro();
        write!(f, "{}.{:06}", micro / 1_000_000, micro % 1_000_000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterSnapshot {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub responses: u64,
    pub cost: Cost,
}

impl MeterSnapshot {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Default)]
pub struct CostMeter {
    prices: Prices,
    // (prompt, completion, responses) under one lock so snapshots are consistent
    totals: Mutex<(u64, u64, u64)>,
}

impl CostMeter {
    pub fn new(prices: Prices) -> Self {
        CostMeter {
            prices,
            ..CostMeter::default()
        }
    }

    pub fn prices(&self) -> Prices {
        self.prices
    }

    pub fn record(&self, prompt_tokens: u64, completion_tokens: u64) {
        let mut totals = self.totals.lock().unwrap();
        totals.0 += prompt_tokens;
        totals.1 += completion_tokens;
        totals.2 += 1;
    }

    pub fn snapshot(&self) -> MeterSnapshot {
        let totals = self.totals.lock().unwrap();
        MeterSnapshot {
            prompt_tokens: totals.0,
            completion_tokens: totals.1,
            responses: totals.2,
            cost: self.prices.cost(totals.0, totals.1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_cost_arithmetic() {
        let prices = Prices {
            prompt_micro_per_1k: 1500,
            completion_micro_per_1k: 2000,
        };
        let meter = CostMeter::new(prices);
        meter.record(1001, 3);
        meter.record(999, 0);
        let snap = meter.snapshot();
        assert_eq!(snap.prompt_tokens, 2000);
        assert_eq!(snap.completion_tokens, 3);
        // 2000 * 1.5 micro + 3 * 2 micro = 3006 micro
        assert_eq!(snap.cost.micro(), 3006);
        assert_eq!(snap.cost.to_string(), "0.003006");
    }

    #[test]
    fn table_scale_cost() {
        // 4.07M tokens at $0.002 / 1k
        let prices = Prices {
            prompt_micro_per_1k: 2000,
            completion_micro_per_1k: 2000,
        };
        assert_eq!(prices.cost(4_070_000, 0).to_string(), "8.140000");
    }

    #[test]
    fn concurrent_updates_are_exact() {
        let meter = CostMeter::new(Prices::default());
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        meter.record(3, 1);
                    }
                });
            }
        });
        let snap = meter.snapshot();
        assert_eq!(snap.prompt_tokens, 24_000);
        assert_eq!(snap.completion_tokens, 8_000);
        assert_eq!(snap.responses, 8_000);
    }
}
