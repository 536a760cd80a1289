//! Rényi-DP accounting for the subsampled Gaussian mechanism.
//!
//! Per-step RDP at integer order α is
//!
//! ```text
//! (1/(α−1)) · log Σ_{k=0..α} C(α,k) (1−q)^{α−k} q^k exp(k(k−1) / (2σ²))
//! ```
//!
//! composed linearly over steps and converted to (ε, δ) by
//! `ε = min_α [ rdp(α) + log(1/δ)/(α−1) ]`.
//!
//! The accountant assumes each example enters a step independently with
//! probability `q = |B|/N`. The training loop instead shuffles and cuts the
//! dataset into fixed-size batches. This is the usual approximation made by
//! moments-accountant implementations and is kept as is.

use crate::error::{Error, Result};

/// Integers 2..=64 plus 128, 256, 512.
pub fn default_orders() -> Vec<u32> {
    (2..=64).chain([128, 256, 512]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySpec {
    pub dataset_size: usize,
    pub batch: usize,
    pub noise_multiplier: f64,
    pub steps: u64,
    pub delta: f64,
    pub orders: Vec<u32>,
}

impl PrivacySpec {
    pub fn sampling_ratio(&self) -> f64 {
        self.batch as f64 / self.dataset_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_size == 0 {
            return Err(Error::config("n", "dataset size must be >= 1"));
        }
        if self.batch == 0 || self.batch > self.dataset_size {
            return Err(Error::config(
                "batch",
                format!("must be in 1..={}, got {}", self.dataset_size, self.batch),
            ));
        }
        if !(self.noise_multiplier > 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::config("sigma", "noise multiplier must be finite and > 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0, 1)"));
        }
        if self.orders.is_empty() || self.orders.iter().any(|&a| a < 2) {
            return Err(Error::config("orders", "need a non-empty grid of integer orders >= 2"));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> Result<EpsilonReport> {
        self.validate()?;
        let q = self.sampling_ratio();
        if self.steps == 0 {
            return Ok(EpsilonReport {
                q,
                steps: 0,
                epsilon: 0.0,
                best_order: self.orders[0],
            });
        }
        let per_step = RdpCurve::subsampled_gaussian(q, self.noise_multiplier, &self.orders)?;
        let total = RdpCurve::zeros(&self.orders).compose(&per_step, self.steps)?;
        let (epsilon, best_order) = total.to_epsilon(self.delta)?;
        Ok(EpsilonReport {
            q,
            steps: self.steps,
            epsilon,
            best_order,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    pub q: f64,
    pub steps: u64,
    pub epsilon: f64,
    pub best_order: u32,
}

/// Accumulated RDP per order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    orders: Vec<u32>,
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn zeros(orders: &[u32]) -> Self {
        Self {
            orders: orders.to_vec(),
            values: vec![0.0; orders.len()],
        }
    }

    pub fn from_values(orders: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if orders.len() != values.len() {
            return Err(Error::config("orders", "order and value counts differ"));
        }
        Ok(Self { orders, values })
    }

    pub fn subsampled_gaussian(q: f64, sigma: f64, orders: &[u32]) -> Result<Self> {
        let values = orders
            .iter()
            .map(|&a| rdp_subsampled_gaussian(q, sigma, a))
            .collect::<Result<_>>()?;
        Ok(Self {
            orders: orders.to_vec(),
            values,
        })
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, order: u32) -> Option<f64> {
        self.orders.iter().position(|&a| a == order).map(|i| self.values[i])
    }

    /// `self[α] + steps · per_step[α]`.
    pub fn compose(&self, per_step: &RdpCurve, steps: u64) -> Result<RdpCurve> {
        compose(self, per_step, steps)
    }

    pub fn to_epsilon(&self, delta: f64) -> Result<(f64, u32)> {
        to_epsilon(self, delta)
    }
}

/// RDP of one application of the Poisson-subsampled Gaussian mechanism at
/// integer order `alpha`.
///
/// Evaluated as `log(1 + S)` with
/// `S = Σ_{k≥2} C(α,k)(1−q)^{α−k} q^k · expm1(k(k−1)/(2σ²))`, which equals the
/// binomial sum minus one because the binomial weights sum to one and the
/// k = 0, 1 terms carry `exp(0)`. Every term of `S` is non-negative, so the
/// log-sum-exp over them loses no precision even when `S` is tiny.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::config("q", format!("sampling ratio must lie in (0, 1], got {q}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::config("sigma", format!("noise multiplier must be > 0, got {sigma}")));
    }
    if alpha < 2 {
        return Err(Error::config("alpha", "orders must be integers >= 2"));
    }
    let a = alpha as f64;
    let two_var = 2.0 * sigma * sigma;
    if q == 1.0 {
        return checked(a / two_var, q, sigma, alpha);
    }
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let mut log_binom = 0.0f64; // log C(α, 0)
    let mut terms = Vec::with_capacity(alpha as usize - 1);
    for k in 1..=alpha {
        let kf = k as f64;
        log_binom += (a - kf + 1.0).ln() - kf.ln();
        if k < 2 {
            continue;
        }
        let x = kf * (kf - 1.0) / two_var;
        terms.push(log_binom + (a - kf) * log_1mq + kf * log_q + log_expm1(x));
    }
    let log_s = log_sum_exp(&terms);
    let log_a = if log_s > 0.0 {
        log_s + (-log_s).exp().ln_1p()
    } else {
        log_s.exp().ln_1p()
    };
    checked(log_a / (a - 1.0), q, sigma, alpha)
}

fn checked(v: f64, q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if v.is_finite() {
        Ok(v.max(0.0))
    } else {
        Err(Error::Accounting(format!(
            "RDP overflow at q={q}, sigma={sigma}, alpha={alpha}"
        )))
    }
}

/// `log(exp(x) − 1)` for `x > 0`.
fn log_expm1(x: f64) -> f64 {
    if x > 30.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

pub fn compose(curve: &RdpCurve, per_step: &RdpCurve, steps: u64) -> Result<RdpCurve> {
    if curve.orders != per_step.orders {
        return Err(Error::config("orders", "cannot compose curves over different order grids"));
    }
    let t = steps as f64;
    let values = curve
        .values
        .iter()
        .zip(&per_step.values)
        .map(|(&c, &p)| {
            let v = c + t * p;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Accounting(format!("RDP overflow composing {steps} steps")))
            }
        })
        .collect::<Result<_>>()?;
    Ok(RdpCurve {
        orders: curve.orders.clone(),
        values,
    })
}

/// Smallest `ε` over the grid and the order attaining it. Ties keep the
/// earliest order.
pub fn to_epsilon(curve: &RdpCurve, delta: f64) -> Result<(f64, u32)> {
    if curve.orders.is_empty() {
        return Err(Error::config("orders", "empty order grid"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config("delta", "must lie in (0, 1)"));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&a, &r) in curve.orders.iter().zip(&curve.values) {
        let eps = r + log_inv_delta / (a as f64 - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

/// `ε` after `epochs` passes over `n` examples in batches of `batch`, with
/// `T = epochs · ⌊n / batch⌋` steps.
pub fn epsilon_for_training(n: usize, batch: usize, sigma: f64, epochs: u64, delta: f64) -> Result<EpsilonReport> {
    let steps = if batch == 0 { 0 } else { epochs * (n / batch) as u64 };
    PrivacySpec {
        dataset_size: n,
        batch,
        noise_multiplier: sigma,
        steps,
        delta,
        orders: default_orders(),
    }
    .epsilon()
}

/// Step-by-step privacy ledger used by the training loop.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    per_step: Option<RdpCurve>,
    total: RdpCurve,
    delta: f64,
    steps: u64,
}

impl PrivacyLedger {
    /// `sigma = 0` (or a non-private run) yields ε = ∞ after the first step.
    pub fn new(q: f64, sigma: f64, delta: f64, orders: &[u32]) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config("dp.delta", "must lie in (0, 1)"));
        }
        let per_step = if sigma > 0.0 {
            Some(RdpCurve::subsampled_gaussian(q, sigma, orders)?)
        } else {
            None
        };
        Ok(Self {
            per_step,
            total: RdpCurve::zeros(orders),
            delta,
            steps: 0,
        })
    }

    pub fn non_private() -> Self {
        Self {
            per_step: None,
            total: RdpCurve::zeros(&default_orders()),
            delta: 0.5,
            steps: 0,
        }
    }

    /// Records one step and returns ε so far.
    pub fn step(&mut self) -> Result<f64> {
        self.steps += 1;
        if let Some(p) = &self.per_step {
            self.total = self.total.compose(p, 1)?;
        }
        self.epsilon()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epsilon(&self) -> Result<f64> {
        if self.steps == 0 {
            return Ok(0.0);
        }
        match self.per_step {
            Some(_) => Ok(self.total.to_epsilon(self.delta)?.0),
            None => Ok(f64::INFINITY),
        }
    }
}
