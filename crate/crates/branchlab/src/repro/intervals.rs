//! Alternating-interval construction with exact integer endpoints:
//! `S_0 = 0`, `a_1 = 1`, `S_1 = 2`, then `a_{n+1} = 4 S_n` and
//! `S_{n+1} = S_n + 2 a_{n+1}`, giving the closed forms `S_n = 2 * 9^(n-1)`
//! and `S_n + a_{n+1} = 10 * 9^(n-1)`. The half-line splits into an A-set
//! `[S_n, S_n + a_{n+1})` and a B-set `[S_n + a_{n+1}, S_{n+1})` whose signed
//! occupation integral cancels exactly at the times `S_n` and equals
//! `a_{n+1}` at `S_n + a_{n+1}`, so the running time average oscillates
//! between 0 and 4/5.
//!
//! A Feynman-Kac Monte Carlo estimator evaluates
//! `E[exp(kappa T + int_0^T phi(X_s) ds)]` with `phi = 1_A - 1_B` along
//! `X_t = sigma B_t + t`; at `sigma = 0` it reduces to the exact
//! deterministic integrals.

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct IntervalConstruction {
    /// `S_0..=S_n_max`.
    pub s: Vec<BigInt>,
    /// `a_1..=a_{n_max}` at indices `1..=n_max` (index 0 unused).
    pub a: Vec<BigInt>,
    /// f64 images of the endpoints, cached for the Monte Carlo inner loop.
    s_f64: Vec<f64>,
    mid_f64: Vec<f64>,
}

impl IntervalConstruction {
    pub fn build(n_max: usize) -> Self {
        let mut s = vec![BigInt::zero(), BigInt::from(2)];
        let mut a = vec![BigInt::zero(), BigInt::one()];
        for n in 1..n_max {
            let a_next = 4 * &s[n];
            let s_next = &s[n] + 2 * &a_next;
            a.push(a_next);
            s.push(s_next);
        }
        let s_f64: Vec<f64> = s.iter().map(|v| v.to_f64().unwrap_or(f64::MAX)).collect();
        let mid_f64: Vec<f64> = (0..s.len() - 1)
            .map(|n| (&s[n] + &a[n + 1]).to_f64().unwrap_or(f64::MAX))
            .collect();
        Self { s, a, s_f64, mid_f64 }
    }

    pub fn n_max(&self) -> usize {
        self.s.len() - 1
    }

    /// Closed forms `S_n = 2 * 9^(n-1)` and `S_n + a_{n+1} = 10 * 9^(n-1)`
    /// hold for every recursion index.
    pub fn closed_forms_hold(&self) -> bool {
        (1..self.n_max()).all(|n| {
            let nine = BigInt::from(9).pow((n - 1) as u32);
            self.s[n] == 2 * &nine && &self.s[n] + &self.a[n + 1] == 10 * nine
        })
    }

    /// Exact `int_0^t (1_A - 1_B)(s) ds` for rational `t >= 0`.
    pub fn signed_integral(&self, t: &BigRational) -> BigRational {
        let mut acc = BigRational::zero();
        for n in 0..self.n_max() {
            let s_n = BigRational::from_integer(self.s[n].clone());
            if t <= &s_n {
                break;
            }
            let mid = BigRational::from_integer(&self.s[n] + &self.a[n + 1]);
            let s_next = BigRational::from_integer(self.s[n + 1].clone());
            // A-part [S_n, S_n + a_{n+1})
            let hi = if t < &mid { t.clone() } else { mid.clone() };
            acc += hi - &s_n;
            // B-part [S_n + a_{n+1}, S_{n+1})
            if t > &mid {
                let hi = if t < &s_next { t.clone() } else { s_next };
                acc -= hi - mid;
            }
        }
        acc
    }

    /// Exact time averages of the signed integral at `S_n` (always 0) and at
    /// `S_n + a_{n+1}` (always 4/5 for n >= 1).
    pub fn time_averages(&self, n: usize) -> Result<(BigRational, BigRational)> {
        if n < 1 || n >= self.n_max() {
            return Err(Error::Config(format!("need 1 <= n < {}", self.n_max())));
        }
        let at_s = BigRational::from_integer(self.s[n].clone());
        let at_mid = BigRational::from_integer(&self.s[n] + &self.a[n + 1]);
        Ok((
            self.signed_integral(&at_s) / &at_s,
            self.signed_integral(&at_mid) / &at_mid,
        ))
    }

    /// Indicator `1_A - 1_B` at a floating-point position (0 left of the
    /// origin or past the materialized cycles).
    pub fn phi(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let n = match self.s_f64.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i,
            Err(0) => return 0.0,
            Err(i) => i - 1,
        };
        if n >= self.mid_f64.len() {
            return 0.0;
        }
        if x < self.mid_f64[n] {
            1.0
        } else {
            -1.0
        }
    }
}

/// Rescaled A-set measure: the union of `[9^-n, 5 * 9^-n)` over `n >= 1` is
/// disjoint with total length `sum 4 * 9^-n = 1/2` (computed here by the
/// geometric series, exactly).
pub fn rescaled_measure_limit() -> BigRational {
    let r = BigRational::new(BigInt::one(), BigInt::from(9));
    BigRational::from_integer(4.into()) * &r / (BigRational::one() - &r)
}

/// Partial sums of the rescaled measure.
pub fn rescaled_measure_partial(terms: usize) -> BigRational {
    let mut acc = BigRational::zero();
    for n in 1..=terms {
        acc += BigRational::new(BigInt::from(4), BigInt::from(9).pow(n as u32));
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTime {
    /// `T = S_n`: the signed integral cancels.
    AtS,
    /// `T = S_n + a_{n+1}`: the signed integral equals `a_{n+1}`.
    AtSPlusA,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FkEstimate {
    pub t: f64,
    /// `log` of the Monte Carlo mean of `exp(kappa T + int phi)`.
    pub log_estimate: f64,
    /// Delta-method standard error of the log estimate.
    pub log_stderr: f64,
    /// Effective sample size of the exponential weights.
    pub ess: f64,
    pub ess_warning: bool,
    /// Exact log value when `sigma = 0` (deterministic path).
    pub exact_log: Option<f64>,
}

/// Log-domain Monte Carlo estimate of
/// `E[exp(kappa T + int_0^T (1_A - 1_B)(X_s) ds)]`, `X_t = sigma B_t + t`.
/// Functional values span hundreds of e-folds, so everything is accumulated
/// through a log-sum-exp.
pub fn feynman_kac_mc(
    sigma: f64,
    kappa: f64,
    n: usize,
    probe: ProbeTime,
    replicas: usize,
    dt: f64,
    rng: RandomSource,
) -> Result<FkEstimate> {
    if !(0.0..=f64::INFINITY).contains(&sigma) {
        return Err(Error::Config("sigma must be nonnegative".into()));
    }
    if n < 1 || n > 3 {
        return Err(Error::Config("n must lie in 1..=3 (exponentials stay representable)".into()));
    }
    let iv = IntervalConstruction::build(n + 2);
    let t_big = match probe {
        ProbeTime::AtS => BigRational::from_integer(iv.s[n].clone()),
        ProbeTime::AtSPlusA => BigRational::from_integer(&iv.s[n] + &iv.a[n + 1]),
    };
    let t = t_big.to_f64().unwrap();
    if sigma == 0.0 {
        let exact = kappa * t + iv.signed_integral(&t_big).to_f64().unwrap();
        return Ok(FkEstimate {
            t,
            log_estimate: exact,
            log_stderr: 0.0,
            ess: replicas as f64,
            ess_warning: false,
            exact_log: Some(exact),
        });
    }
    let steps = (t / dt).ceil() as usize;
    let h = t / steps as f64;
    let weights: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            let mut x = 0.0f64;
            let mut integral = 0.0f64;
            for _ in 0..steps {
                integral += iv.phi(x) * h;
                let z: f64 = StandardNormal.sample(&mut r);
                x += h + sigma * h.sqrt() * z;
            }
            kappa * t + integral
        })
        .collect();
    let w_max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let m1: f64 = weights.iter().map(|w| (w - w_max).exp()).sum::<f64>() / replicas as f64;
    let m2: f64 =
        weights.iter().map(|w| (2.0 * (w - w_max)).exp()).sum::<f64>() / replicas as f64;
    let log_estimate = w_max + m1.ln();
    let var = (m2 - m1 * m1).max(0.0);
    let log_stderr = (var / replicas as f64).sqrt() / m1;
    let sum1: f64 = m1 * replicas as f64;
    let sum2: f64 = m2 * replicas as f64;
    let ess = sum1 * sum1 / sum2.max(f64::MIN_POSITIVE);
    Ok(FkEstimate {
        t,
        log_estimate,
        log_stderr,
        ess,
        ess_warning: ess < 0.01 * replicas as f64,
        exact_log: None,
    })
}
