//! Analytic floating-point operation counts for one posterior-predictive sample.
//!
//! Leading-order formulas with unit constants:
//!
//! * Mercer prior: `T (N M D + B D) + P D`
//! * naive GP: `T (B^3 / 3 + B) + P^3 / 3`
//! * KISS-GP: `2 T B + B^2`, independent of `P` as written

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default compute budget, in FLOPs, of a single accelerator.
pub const DEFAULT_BUDGET: f64 = 989e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mercer,
    NaiveGp,
    KissGp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mercer, Method::NaiveGp, Method::KissGp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mercer => "mercer",
            Method::NaiveGp => "naive_gp",
            Method::KissGp => "kiss_gp",
        }
    }
}

/// Problem sizes: eigen-indices `N`, points per batch `M`, network parameters
/// `D`, likelihood minibatch `B`, SGLD steps per independent sample `T`, and
/// test points `P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: u64,
    pub m: u64,
    pub d: u64,
    pub b: u64,
    pub t: u64,
    pub p: u64,
}

impl Scenario {
    /// Table values of the expensive setting, with `P` supplied.
    pub fn high_cost(p: u64) -> Self {
        Scenario { n: 100, m: 10_000, d: 2_500, b: 32, t: 10_000, p }
    }

    /// Table values of the cheap setting, with `P` supplied.
    pub fn low_cost(p: u64) -> Self {
        Scenario { n: 10, m: 8, d: 32, b: 8, t: 1_000, p }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [("n", self.n), ("m", self.m), ("d", self.d), ("b", self.b), ("t", self.t), ("p", self.p)];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("cost scenario field `{name}` must be positive"))),
            None => Ok(()),
        }
    }

    pub fn with_p(self, p: u64) -> Self {
        Scenario { p, ..self }
    }
}

/// FLOPs for one posterior-predictive sample.
pub fn cost_flops(method: Method, s: &Scenario) -> f64 {
    let (n, m, d, b, t, p) = (s.n as f64, s.m as f64, s.d as f64, s.b as f64, s.t as f64, s.p as f64);
    match method {
        Method::Mercer => t * (n * m * d + b * d) + p * d,
        Method::NaiveGp => t * (b.powi(3) / 3.0 + b) + p.powi(3) / 3.0,
        Method::KissGp => 2.0 * t * b + b * b,
    }
}

/// Smallest `P` whose cost exceeds `budget`, keeping the other sizes fixed.
///
/// `Some(1)` if even one test point is over budget; `None` if no `P` up to
/// `u64::MAX` exceeds it.
pub fn crossover(method: Method, s: &Scenario, budget: f64) -> Option<u64> {
    let over = |p: u64| cost_flops(method, &s.with_p(p)) > budget;
    if over(1) {
        return Some(1);
    }
    if !over(u64::MAX) {
        return None;
    }
    let (mut lo, mut hi) = (1u64, u64::MAX);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if over(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Cost and crossover of every method for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub scenario: Scenario,
    pub budget: f64,
    pub entries: Vec<CostEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub method: Method,
    pub flops: f64,
    pub within_budget: bool,
    pub crossover_p: Option<u64>,
}

pub fn report(s: &Scenario, budget: f64) -> Result<CostReport> {
    s.validate()?;
    if !(budget > 0.0) {
        return Err(Error::Config(format!("budget must be positive, got {budget}")));
    }
    let entries = Method::ALL
        .iter()
        .map(|&method| {
            let flops = cost_flops(method, s);
            CostEntry { method, flops, within_budget: flops <= budget, crossover_p: crossover(method, s, budget) }
        })
        .collect();
    Ok(CostReport { scenario: *s, budget, entries })
}
