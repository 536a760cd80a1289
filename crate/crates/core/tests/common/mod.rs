//! Oracles shared by the integration tests.

#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};

const P: usize = 512;
const RM: RoundingMode = RoundingMode::ToEven;

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal BigFloat")
}

/// Subsampled-Gaussian RDP at integer order `alpha`, by direct evaluation of
/// `(1/(α−1)) log Σ_k C(α,k) (1−q)^{α−k} q^k exp(k(k−1)/(2σ²))` in 512-bit
/// arithmetic.
pub fn rdp_direct(q: f64, sigma: f64, alpha: u32) -> f64 {
    let mut cc = Consts::new().expect("constants cache");
    let q_b = BigFloat::from_f64(q, P);
    let one = BigFloat::from_u8(1, P);
    let p_b = one.sub(&q_b, P, RM);
    let two_s2 = BigFloat::from_f64(sigma, P).mul(&BigFloat::from_f64(sigma, P), P, RM).mul(&BigFloat::from_u8(2, P), P, RM);
    let mut sum = BigFloat::from_u8(0, P);
    let mut binom: u128 = 1;
    for k in 0..=alpha as u64 {
        if k > 0 {
            binom = binom * (alpha as u128 - k as u128 + 1) / k as u128;
        }
        let c = BigFloat::from_u128(binom, P);
        let qk = q_b.powi(k as usize, P, RM);
        let pk = p_b.powi((alpha as u64 - k) as usize, P, RM);
        let arg = BigFloat::from_u64(k * k.saturating_sub(1), P).div(&two_s2, P, RM);
        let term = c.mul(&qk, P, RM).mul(&pk, P, RM).mul(&arg.exp(P, RM, &mut cc), P, RM);
        sum = sum.add(&term, P, RM);
    }
    let log = sum.ln(P, RM, &mut cc);
    to_f64(&log.div(&BigFloat::from_u32(alpha - 1, P), P, RM))
}

/// Max relative error of `analytic` against central differences of `f`
/// with step `h`, denominator floored at `floor`.
pub fn max_rel_error(analytic: &[f64], mut f: impl FnMut(usize, f64) -> f64, h: f64, floor: f64) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for (i, &a) in analytic.iter().enumerate() {
        let n = (f(i, h) - f(i, -h)) / (2.0 * h);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}
