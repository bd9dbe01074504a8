//! Generalized-eigenvalue machinery for expectation kernels: Perron value of
//! finite truncations (certified lower brackets of the spectral radius),
//! growth-slope estimates of the expected-population exponent, test-function
//! certificates, and a reversibility check that ties the two together.

use crate::bmc::ExpectationKernel;
use crate::error::{Error, Result};
use crate::law::StateIndex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PERRON_REL_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITERS: usize = 400_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Truncation,
    GrowthSlope,
    TestFunctionCertificate,
    DensePerron,
}

/// Eigenvalue estimate with a certified bracket where one exists. `lower` /
/// `upper` are `None` when that side is unbounded or not certified.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenvalueEstimate {
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

impl EigenvalueEstimate {
    pub fn bracket_consistent(&self) -> bool {
        self.lower.map_or(true, |l| l <= self.value + 1e-12)
            && self.upper.map_or(true, |u| self.value <= u + 1e-12)
    }
}

/// Pointwise sub-invariance certificate: `u` bounded by 1, nonnegative, with
/// `(m u)(x) >= rho u(x)` on every checked state. A valid certificate proves
/// the growth exponent from any state with `u(x) > 0` is at least `rho`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunctionCertificate {
    pub u: BTreeMap<usize, f64>,
    pub rho: f64,
    pub checked_states: Vec<usize>,
    /// Minimum of `(m u)(x) - rho u(x)` over the checked states.
    pub margin: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct PerronResult {
    pub rho: f64,
    /// Right eigenvector normalized to max entry 1; strictly positive on
    /// irreducible inputs.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// Whether the shift fallback `M + I` was used (periodic matrices).
    pub used_shift: bool,
}

fn strongly_connected_component(adj: &[Vec<usize>], root: usize) -> Vec<usize> {
    let n = adj.len();
    let mut fwd = vec![false; n];
    let mut stack = vec![root];
    fwd[root] = true;
    while let Some(x) = stack.pop() {
        for &y in &adj[x] {
            if !fwd[y] {
                fwd[y] = true;
                stack.push(y);
            }
        }
    }
    let mut radj = vec![Vec::new(); n];
    for (x, targets) in adj.iter().enumerate() {
        for &y in targets {
            radj[y].push(x);
        }
    }
    let mut bwd = vec![false; n];
    let mut stack = vec![root];
    bwd[root] = true;
    while let Some(x) = stack.pop() {
        for &y in &radj[x] {
            if !bwd[y] {
                bwd[y] = true;
                stack.push(y);
            }
        }
    }
    (0..n).filter(|&i| fwd[i] && bwd[i]).collect()
}

fn adjacency(matrix: &[Vec<f64>]) -> Vec<Vec<usize>> {
    matrix
        .iter()
        .map(|row| row.iter().enumerate().filter(|&(_, &v)| v > 0.0).map(|(j, _)| j).collect())
        .collect()
}

fn matvec(matrix: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    matrix
        .iter()
        .map(|row| row.iter().zip(v).map(|(&a, &x)| a * x).sum())
        .collect()
}

/// Perron root and eigenvector of a finite nonnegative irreducible matrix by
/// power iteration with max-entry normalization. Periodic matrices (detected
/// as a period-2 oscillation or by exhausting the iteration budget) fall back
/// to power iteration on `M + I`, which has the same eigenvectors and shifts
/// the Perron root by exactly 1.
pub fn dense_perron(matrix: &[Vec<f64>]) -> Result<PerronResult> {
    let n = matrix.len();
    if n == 0 {
        return Err(Error::Config("empty matrix".into()));
    }
    for row in matrix {
        if row.len() != n {
            return Err(Error::Config("matrix must be square".into()));
        }
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Config("matrix entries must be nonnegative and finite".into()));
        }
    }
    if n == 1 {
        return Ok(PerronResult { rho: matrix[0][0], vector: vec![1.0], iterations: 0, used_shift: false });
    }
    let adj = adjacency(matrix);
    if strongly_connected_component(&adj, 0).len() != n {
        return Err(Error::NotIrreducible);
    }
    match power_iteration(matrix, false) {
        Some(res) => Ok(res),
        None => {
            let shifted: Vec<Vec<f64>> = matrix
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut r = row.clone();
                    r[i] += 1.0;
                    r
                })
                .collect();
            match power_iteration(&shifted, true) {
                Some(mut res) => {
                    res.rho -= 1.0;
                    Ok(res)
                }
                None => Err(Error::NonConvergence("power iteration on M + I".into())),
            }
        }
    }
}

fn power_iteration(matrix: &[Vec<f64>], shifted: bool) -> Option<PerronResult> {
    let n = matrix.len();
    let mut v = vec![1.0f64; n];
    let mut prev2 = v.clone();
    for it in 1..=PERRON_MAX_ITERS {
        let w = matvec(matrix, &v);
        let rho = w.iter().cloned().fold(0.0f64, f64::max);
        if rho == 0.0 {
            return None;
        }
        let residual = w
            .iter()
            .zip(&v)
            .map(|(&wi, &vi)| (wi - rho * vi).abs())
            .fold(0.0f64, f64::max);
        let next: Vec<f64> = w.iter().map(|&wi| wi / rho).collect();
        if residual < PERRON_REL_TOL * rho {
            return Some(PerronResult { rho, vector: next, iterations: it, used_shift: shifted });
        }
        // Period-2 oscillation: the even/odd subsequences settle while the
        // residual stays large.
        if it > 8 && !shifted {
            let osc = next.iter().zip(&prev2).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            if osc < 1e-13 && residual >= PERRON_REL_TOL * rho {
                return None;
            }
        }
        prev2 = std::mem::replace(&mut v, next);
    }
    None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruncationReport {
    pub estimates: Vec<EigenvalueEstimate>,
    pub warnings: Vec<String>,
}

/// Perron values of increasing finite truncations rooted at `root`. Each
/// estimate carries the running maximum as its certified lower bracket for
/// the spectral radius; no finite truncation certifies an upper bracket.
/// Truncations whose root component is trivial (a single state without a
/// self-loop) are skipped with a warning.
pub fn spectral_radius_truncation(
    kernel: &ExpectationKernel,
    root: StateIndex,
    sizes: &[usize],
) -> Result<TruncationReport> {
    let mut estimates = Vec::new();
    let mut warnings = Vec::new();
    let mut running_max = f64::NEG_INFINITY;
    for &size in sizes {
        let trunc = kernel.bfs_truncation(root, size);
        let adj = adjacency(&trunc.dense);
        let comp = strongly_connected_component(&adj, 0);
        if comp.len() == 1 && trunc.dense[comp[0]][comp[0]] == 0.0 {
            warnings.push(format!(
                "truncation of size {size}: root component is trivial, no Perron value"
            ));
            continue;
        }
        let sub: Vec<Vec<f64>> = comp
            .iter()
            .map(|&i| comp.iter().map(|&j| trunc.dense[i][j]).collect())
            .collect();
        let perron = dense_perron(&sub)?;
        running_max = running_max.max(perron.rho);
        estimates.push(EigenvalueEstimate {
            value: perron.rho,
            lower: Some(running_max),
            upper: None,
            method: Method::Truncation,
            metadata: serde_json::json!({
                "requested_size": size,
                "materialized_states": trunc.len(),
                "component_states": comp.len(),
                "used_shift": perron.used_shift,
            }),
        });
    }
    Ok(TruncationReport { estimates, warnings })
}

/// Growth-slope estimate of the expected-population exponent
/// `limsup_n (E_x[N_n])^(1/n)`.
///
/// Computes the exact expected counts `a_n` up to `n_max` (log-scaled, so
/// exponential growth never overflows) and reports the maximum of `a_n^(1/n)`
/// over the top window `[n_max/2, n_max]` as the value, with the window
/// minimum and the full sequence in the metadata. Max and min can differ
/// persistently: oscillatory kernels have distinct liminf and limsup, so a
/// single fitted slope would silently average them.
pub fn rho_double_prime_growth(
    kernel: &ExpectationKernel,
    start: StateIndex,
    n_max: usize,
    state_cap: usize,
) -> Result<EigenvalueEstimate> {
    if n_max < 8 {
        return Err(Error::Config("growth estimate needs n_max >= 8".into()));
    }
    let mut v = BTreeMap::new();
    v.insert(start.0, 1.0f64);
    let mut log_a = 0.0f64;
    let mut exponents = Vec::with_capacity(n_max);
    let mut dead = false;
    for n in 1..=n_max {
        if !dead {
            let mut w = kernel.propagate_measure(&v);
            if w.len() > state_cap {
                return Err(Error::TruncationOverflow { cap: state_cap });
            }
            let total: f64 = w.values().sum();
            if total <= 0.0 {
                dead = true;
            } else {
                log_a += total.ln();
                for val in w.values_mut() {
                    *val /= total;
                }
                v = w;
            }
        }
        exponents.push(if dead { 0.0 } else { (log_a / n as f64).exp() });
    }
    let window_start = n_max.div_ceil(2);
    let window = &exponents[window_start - 1..];
    let value = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let window_min = window.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EigenvalueEstimate {
        value,
        lower: Some(window_min),
        upper: None,
        method: Method::GrowthSlope,
        metadata: serde_json::json!({
            "n_max": n_max,
            "window_start": window_start,
            "window_min": window_min,
            "window_max": value,
            "exponents": exponents,
        }),
    })
}

/// Pointwise check that `(m u)(x) >= rho u(x)` on the given states, with `u`
/// extended by zero outside its support. Extension by zero is conservative:
/// kernel entries are nonnegative, so dropped targets only lower `(m u)(x)`.
pub fn certify_rho_prime(
    kernel: &ExpectationKernel,
    u: &BTreeMap<usize, f64>,
    rho: f64,
    checked_states: &[usize],
) -> Result<TestFunctionCertificate> {
    if u.values().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("test function must take values in [0, 1]".into()));
    }
    let mut margin = f64::INFINITY;
    for &x in checked_states {
        let ux = u.get(&x).copied().unwrap_or(0.0);
        let mut mu = 0.0;
        for (y, w) in kernel.row(StateIndex(x)) {
            if let Some(&uy) = u.get(&y.0) {
                mu += w * uy;
            }
        }
        margin = margin.min(mu - rho * ux);
    }
    Ok(TestFunctionCertificate {
        u: u.clone(),
        rho,
        checked_states: checked_states.to_vec(),
        margin,
        valid: margin >= 0.0,
    })
}

/// Build a certificate from the Perron vector of a finite truncation,
/// extended by zero. The certified rate is the Collatz-Wielandt minimum ratio
/// `min_x (m u)(x) / u(x)` evaluated with the full kernel rows (then shaved
/// by one part in 1e12 so the pointwise check is robust to rounding); it
/// agrees with the truncation's Perron value to the iteration tolerance.
pub fn perron_certificate(
    kernel: &ExpectationKernel,
    root: StateIndex,
    size: usize,
) -> Result<(TestFunctionCertificate, PerronResult)> {
    let trunc = kernel.bfs_truncation(root, size);
    let adj = adjacency(&trunc.dense);
    let comp = strongly_connected_component(&adj, 0);
    if comp.len() == 1 && trunc.dense[comp[0]][comp[0]] == 0.0 {
        return Err(Error::NotIrreducible);
    }
    let sub: Vec<Vec<f64>> = comp
        .iter()
        .map(|&i| comp.iter().map(|&j| trunc.dense[i][j]).collect())
        .collect();
    let perron = dense_perron(&sub)?;
    let mut u = BTreeMap::new();
    for (k, &i) in comp.iter().enumerate() {
        u.insert(trunc.states[i], perron.vector[k]);
    }
    let states: Vec<usize> = comp.iter().map(|&i| trunc.states[i]).collect();
    let mut rho_cw = f64::INFINITY;
    for &x in &states {
        let ux = u[&x];
        if ux <= 0.0 {
            continue;
        }
        let mut mu = 0.0;
        for (y, w) in kernel.row(StateIndex(x)) {
            if let Some(&uy) = u.get(&y.0) {
                mu += w * uy;
            }
        }
        rho_cw = rho_cw.min(mu / ux);
    }
    let rho_cert = rho_cw * (1.0 - 1e-12);
    let cert = certify_rho_prime(kernel, &u, rho_cert, &states)?;
    Ok((cert, perron))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReversibleOptions {
    pub n_max: usize,
    /// States materialized around the base point; powers are computed on this
    /// truncation, which is exact whenever every path of length `n_max` stays
    /// inside (e.g. a BFS ball of radius `n_max`).
    pub state_cap: usize,
    /// Tolerance for the subexponential check on `c_n^(1/n)`.
    pub c_tol: f64,
    /// Tolerance for the agreement of the truncation and growth estimates.
    pub rho_tol: f64,
}

impl Default for ReversibleOptions {
    fn default() -> Self {
        Self { n_max: 256, state_cap: 1024, c_tol: 0.05, rho_tol: 0.02 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReversibleReport {
    /// `max_y m^n(x0, y) / m^n(y, x0)` per n (infinite on violations).
    pub ratio: Vec<f64>,
    /// Support sizes `|A_n|`.
    pub support: Vec<usize>,
    /// `c_n = max(ratio_n, |A_n|)`, the smallest constant verifying both
    /// hypotheses at order n.
    pub c_n: Vec<f64>,
    pub c_root: Vec<f64>,
    /// First `(n, y)` with `m^n(x0, y) > 0` but `m^n(y, x0) = 0`, if any.
    pub violation: Option<(usize, usize)>,
    pub hypotheses_hold: bool,
    pub rho_truncation: Option<f64>,
    pub rho_growth: Option<f64>,
    pub rho_agreement: Option<f64>,
    pub rho_agrees: Option<bool>,
}

/// Empirical check of the reversibility criterion: look for constants
/// `c_n` with `m^n(x0, y) <= c_n m^n(y, x0)` and `|A_n| <= c_n` growing
/// subexponentially (`c_n^(1/n)` decreasing toward 1 over the top window).
/// When the hypotheses hold, the spectral radius, the certificate rate, and
/// the growth exponent coincide, so the report also compares the truncation
/// and growth estimates at `rho_tol`.
pub fn reversible_criterion_check(
    kernel: &ExpectationKernel,
    x0: StateIndex,
    opts: &ReversibleOptions,
) -> Result<ReversibleReport> {
    let trunc = kernel.bfs_truncation(x0, opts.state_cap);
    let n = trunc.len();
    let dense = &trunc.dense;
    let root_idx = trunc.index_of[&x0.0];
    // forward[y] tracks m^k(x0, y), backward[y] tracks m^k(y, x0), both
    // renormalized each step with separate log scales.
    let mut fwd = vec![0.0f64; n];
    let mut bwd = vec![0.0f64; n];
    fwd[root_idx] = 1.0;
    bwd[root_idx] = 1.0;
    let mut log_f = 0.0f64;
    let mut log_b = 0.0f64;
    let mut ratio = Vec::with_capacity(opts.n_max);
    let mut support = Vec::with_capacity(opts.n_max);
    let mut c_n = Vec::with_capacity(opts.n_max);
    let mut c_root = Vec::with_capacity(opts.n_max);
    let mut violation = None;
    for step in 1..=opts.n_max {
        let mut fwd_next = vec![0.0f64; n];
        let mut bwd_next = vec![0.0f64; n];
        for i in 0..n {
            if fwd[i] != 0.0 {
                for (j, &w) in dense[i].iter().enumerate() {
                    if w != 0.0 {
                        fwd_next[j] += fwd[i] * w;
                    }
                }
            }
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &w) in dense[i].iter().enumerate() {
                if w != 0.0 {
                    acc += w * bwd[j];
                }
            }
            bwd_next[i] = acc;
        }
        let fmax = fwd_next.iter().cloned().fold(0.0f64, f64::max);
        let bmax = bwd_next.iter().cloned().fold(0.0f64, f64::max);
        if fmax == 0.0 {
            break;
        }
        log_f += fmax.ln();
        for v in fwd_next.iter_mut() {
            *v /= fmax;
        }
        if bmax > 0.0 {
            log_b += bmax.ln();
            for v in bwd_next.iter_mut() {
                *v /= bmax;
            }
        }
        fwd = fwd_next;
        bwd = bwd_next;
        let mut worst: f64 = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if fwd[i] > 0.0 {
                count += 1;
                if bwd[i] > 0.0 {
                    let r = (fwd[i].ln() + log_f - bwd[i].ln() - log_b).exp();
                    worst = worst.max(r);
                } else {
                    worst = f64::INFINITY;
                    if violation.is_none() {
                        violation = Some((step, trunc.states[i]));
                    }
                }
            }
        }
        ratio.push(worst);
        support.push(count);
        let c = worst.max(count as f64);
        c_n.push(c);
        c_root.push(c.powf(1.0 / step as f64));
    }
    let window_start = c_root.len().div_ceil(2);
    let window = &c_root[window_start.saturating_sub(1)..];
    let subexponential = violation.is_none()
        && !window.is_empty()
        && window.iter().cloned().fold(f64::INFINITY, f64::min) <= 1.0 + opts.c_tol
        && *window.last().unwrap() <= window.first().unwrap() + 1e-9;
    let mut report = ReversibleReport {
        ratio,
        support,
        c_n,
        c_root,
        violation,
        hypotheses_hold: subexponential,
        rho_truncation: None,
        rho_growth: None,
        rho_agreement: None,
        rho_agrees: None,
    };
    if report.hypotheses_hold {
        // cap the comparison truncations: their Perron values converge like
        // 1/size^2, and power iteration slows down on larger windows
        let cap = n.min(129);
        let sizes: Vec<usize> =
            [cap / 8, cap / 4, cap / 2, cap].iter().map(|&s| s.max(2)).collect();
        let sweep = spectral_radius_truncation(kernel, x0, &sizes)?;
        let rho_t = sweep.estimates.last().and_then(|e| e.lower);
        let growth = rho_double_prime_growth(kernel, x0, opts.n_max.max(8), opts.state_cap)?;
        report.rho_truncation = rho_t;
        report.rho_growth = Some(growth.value);
        if let Some(rt) = rho_t {
            let diff = (rt - growth.value).abs();
            report.rho_agreement = Some(diff);
            report.rho_agrees = Some(diff <= opts.rho_tol);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand::Rng;

    fn brw_z(mu: f64) -> ExpectationKernel {
        ExpectationKernel::from_fn(move |x| {
            let z = crate::config::zigzag_decode(x);
            vec![
                (crate::config::zigzag_encode(z - 1), mu / 2.0),
                (crate::config::zigzag_encode(z + 1), mu / 2.0),
            ]
        })
    }

    #[test]
    fn rank_one_symmetric() {
        let res = dense_perron(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!((res.rho - 2.0).abs() < 1e-11);
        assert!((res.vector[0] - 1.0).abs() < 1e-11 && (res.vector[1] - 1.0).abs() < 1e-11);
        assert!(!res.used_shift);
    }

    #[test]
    fn period_two_uses_shift_fallback() {
        // the symmetric swap converges directly (the uniform start vector is
        // already the Perron vector) ...
        let res = dense_perron(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((res.rho - 1.0).abs() < 1e-10, "rho = {}", res.rho);
        // ... while an asymmetric period-2 matrix genuinely oscillates and
        // must take the M + I route (same eigenvectors, root shifted by 1)
        let res = dense_perron(&[vec![0.0, 2.0], vec![0.5, 0.0]]).unwrap();
        assert!(res.used_shift);
        assert!((res.rho - 1.0).abs() < 1e-10, "rho = {}", res.rho);
        assert!((res.vector[0] / res.vector[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn reducible_matrix_is_rejected() {
        let err = dense_perron(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotIrreducible));
    }

    #[test]
    fn random_positive_matrix_matches_eigensolver_oracle() {
        // Brute-force oracle: max eigenvalue modulus from an independent
        // dense eigensolver.
        let mut rng = RandomSource::new(5).rng();
        for _ in 0..5 {
            let n = 6;
            let m: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
            let flat: Vec<f64> = m.iter().flatten().cloned().collect();
            let dm = nalgebra::DMatrix::from_row_slice(n, n, &flat);
            let oracle = dm
                .complex_eigenvalues()
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max);
            let res = dense_perron(&m).unwrap();
            assert!((res.rho - oracle).abs() < 1e-9, "{} vs {}", res.rho, oracle);
            assert!(res.vector.iter().all(|&v| v > 0.0), "Perron vector must be positive");
        }
    }

    #[test]
    fn single_state_truncation() {
        let kernel = ExpectationKernel::from_dense(&[vec![1.5]]).unwrap();
        let report = spectral_radius_truncation(&kernel, StateIndex(0), &[1]).unwrap();
        assert_eq!(report.estimates.len(), 1);
        assert_eq!(report.estimates[0].value, 1.5);
    }

    #[test]
    fn brw_truncations_increase_toward_mean() {
        // Perron values of [-k, k] windows increase toward mu; Richardson
        // extrapolation over two large windows recovers mu.
        let mu = 1.3;
        let kernel = brw_z(mu);
        let sizes = [9, 17, 33, 65];
        let report = spectral_radius_truncation(&kernel, StateIndex(0), &sizes).unwrap();
        let values: Vec<f64> = report.estimates.iter().map(|e| e.value).collect();
        for w in values.windows(2) {
            assert!(w[1] >= w[0] - 1e-10, "not nondecreasing: {values:?}");
        }
        assert!(values.iter().all(|&v| v < mu));
        // Analytic check: rho_k = mu cos(pi / (2k + 2)).
        for (&size, &v) in sizes.iter().zip(&values) {
            let k = (size - 1) / 2;
            let analytic = mu * (std::f64::consts::PI / (2 * k + 2) as f64).cos();
            assert!((v - analytic).abs() < 1e-9, "{v} vs {analytic}");
        }
        // Richardson in 1/k^2 on k = 48, 96.
        let big = spectral_radius_truncation(&kernel, StateIndex(0), &[97, 193]).unwrap();
        let (r1, r2) = (big.estimates[0].value, big.estimates[1].value);
        let extrap = (4.0 * r2 - r1) / 3.0;
        assert!((extrap - mu).abs() < 1e-3, "extrapolated {extrap}");
    }

    #[test]
    fn growth_of_constant_doubling() {
        let kernel = ExpectationKernel::from_dense(&[vec![2.0]]).unwrap();
        let est = rho_double_prime_growth(&kernel, StateIndex(0), 32, 8).unwrap();
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn growth_of_subcritical_law_matches_mean() {
        // {p0 = 0.6, p2 = 0.4}: purely local, exponent = mean = 0.8.
        let spec = crate::bmc::BmcSpec::uniform(
            crate::law::OffspringLaw::new(vec![(0, 0.6), (2, 0.4)]).unwrap(),
        );
        let est = rho_double_prime_growth(&spec.kernel(), StateIndex(0), 64, 8).unwrap();
        assert!((est.value - 0.8).abs() < 1e-9, "value {}", est.value);
    }

    #[test]
    fn certificates_trivial_cases() {
        let kernel = ExpectationKernel::from_dense(&[vec![1.5]]).unwrap();
        let mut u = BTreeMap::new();
        u.insert(0usize, 1.0);
        let ok = certify_rho_prime(&kernel, &u, 1.5, &[0]).unwrap();
        assert!(ok.valid && ok.margin >= 0.0);
        let bad = certify_rho_prime(&kernel, &u, 1.6, &[0]).unwrap();
        assert!(!bad.valid && bad.margin < 0.0);
        u.insert(0usize, 1.5);
        assert!(certify_rho_prime(&kernel, &u, 1.0, &[0]).is_err());
    }

    #[test]
    fn perron_vector_extended_by_zero_certifies() {
        let kernel = brw_z(1.3);
        let (cert, perron) = perron_certificate(&kernel, StateIndex(0), 21).unwrap();
        assert!(cert.valid, "margin {}", cert.margin);
        assert!((cert.rho - perron.rho).abs() < 1e-9 * perron.rho);
        // Soundness: growth exponent from the argmax state dominates the
        // certified rate.
        let (&best_state, _) = cert
            .u
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let growth =
            rho_double_prime_growth(&kernel, StateIndex(best_state), 64, 4096).unwrap();
        assert!(
            growth.value >= cert.rho - 1e-6,
            "growth {} vs certified {}",
            growth.value,
            cert.rho
        );
    }

    #[test]
    fn reversible_check_on_symmetric_brw() {
        let kernel = brw_z(1.3);
        let report = reversible_criterion_check(
            &kernel,
            StateIndex(0),
            &ReversibleOptions { n_max: 256, state_cap: 513, ..Default::default() },
        )
        .unwrap();
        assert!(report.violation.is_none());
        assert!(report.hypotheses_hold, "c_root tail {:?}", &report.c_root[250..]);
        assert!(report.rho_agrees == Some(true), "agreement {:?}", report.rho_agreement);
        let rho_t = report.rho_truncation.unwrap();
        let rho_g = report.rho_growth.unwrap();
        assert!((rho_t - 1.3).abs() < 0.02, "rho_trunc {rho_t}");
        assert!((rho_g - 1.3).abs() < 1e-9, "rho_growth {rho_g}");
    }

    #[test]
    fn reversible_check_single_state() {
        let kernel = ExpectationKernel::from_dense(&[vec![1.5]]).unwrap();
        let report = reversible_criterion_check(
            &kernel,
            StateIndex(0),
            &ReversibleOptions { n_max: 32, state_cap: 4, ..Default::default() },
        )
        .unwrap();
        assert!(report.hypotheses_hold);
        assert!(report.c_n.iter().all(|&c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn directed_layers_violate_reversibility() {
        // Strict one-way chain: m^n(y, x0) = 0 wherever m^n(x0, y) > 0.
        let kernel = ExpectationKernel::from_fn(|x| vec![(x + 1, 2.0)]);
        let report = reversible_criterion_check(
            &kernel,
            StateIndex(0),
            &ReversibleOptions { n_max: 16, state_cap: 64, ..Default::default() },
        )
        .unwrap();
        assert!(report.violation.is_some());
        assert!(!report.hypotheses_hold);
    }

    #[test]
    fn lower_brackets_never_exceed_growth_estimate() {
        // rho_c <= rho'' on the same kernel.
        let mut rng = RandomSource::new(31).rng();
        for trial in 0..5 {
            let n = 12usize;
            // Ring plus random chords keeps the kernel irreducible; the
            // pinned back-edge keeps a cycle at the root inside every
            // truncation window.
            let mut rows: Vec<Vec<(usize, f64)>> = (0..n)
                .map(|i| vec![((i + 1) % n, rng.random_range(0.2..1.5))])
                .collect();
            rows[1].push((0, rng.random_range(0.2..1.0)));
            for _ in 0..n {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                rows[i].push((j, rng.random_range(0.0..1.0)));
            }
            let rows2 = rows.clone();
            let kernel = ExpectationKernel::from_fn(move |x| rows2[x].clone());
            let report =
                spectral_radius_truncation(&kernel, StateIndex(0), &[n / 2, n]).unwrap();
            let lower = report.estimates.last().unwrap().lower.unwrap();
            let growth = rho_double_prime_growth(&kernel, StateIndex(0), 48, n + 1).unwrap();
            assert!(
                lower <= growth.value + 1e-6,
                "trial {trial}: lower {lower} vs growth {}",
                growth.value
            );
        }
    }
}
