//! Continuous-time branching Markov processes: diffusive or CTMC
//! single-particle motion, bounded-rate purely local branching, Dirichlet
//! boundary killing, and the estimators built on top (survival, local
//! survival, total mass, expected mass by PDE, growth exponent).

pub mod skeleton;

use crate::error::{Error, Result};
use crate::law::OffspringLaw;
use crate::pde1d::{BoundaryKind, CrankNicolson, Grid1D, Operator1d};
use crate::rng::RandomSource;
use crate::spectral::{EigenvalueEstimate, Method};
use crate::trace::{PopulationTrace, SurvivalEstimate, Terminator};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Scalar field on the real line with declared bounds. The bounds are part
/// of the specification: thinning uses `sup` of the branch rate and the
/// solvers require `inf` of the diffusion coefficient to be positive.
#[derive(Clone)]
pub struct Field {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub inf: f64,
    pub sup: f64,
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field").field("inf", &self.inf).field("sup", &self.sup).finish()
    }
}

impl Field {
    pub fn constant(value: f64) -> Self {
        Self { eval: Arc::new(move |_| value), inf: value, sup: value }
    }

    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static, inf: f64, sup: f64) -> Self {
        Self { eval: Arc::new(f), inf, sup }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Open interval with Dirichlet killing at both ends.
    Interval { left: f64, right: f64 },
    /// No killing; an optional reflecting wall keeps drifting particles in a
    /// finite box.
    Unbounded { reflect_right: Option<f64> },
}

/// Single-particle motion.
#[derive(Clone)]
pub enum Motion {
    Diffusion1d { drift: Field, diffusion: Field, domain: Domain },
    /// Radial reduction of an isotropic d-dimensional diffusion: effective
    /// drift picks up `a (d-1) / (2x)`; killed at the outer radius, reflected
    /// at a small inner radius that excises the singularity at grid scale.
    DiffusionRadial { dim: u32, drift: Field, diffusion: Field, radius: f64, inner: f64 },
    /// Continuous-time Markov chain with bounded jump rates; states are
    /// encoded as nonnegative integers.
    Ctmc { rates: Arc<dyn Fn(usize) -> Vec<(usize, f64)> + Send + Sync>, rate_bound: f64 },
}

impl std::fmt::Debug for Motion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Motion::Diffusion1d { domain, .. } => {
                f.debug_struct("Diffusion1d").field("domain", domain).finish_non_exhaustive()
            }
            Motion::DiffusionRadial { dim, radius, .. } => f
                .debug_struct("DiffusionRadial")
                .field("dim", dim)
                .field("radius", radius)
                .finish_non_exhaustive(),
            Motion::Ctmc { rate_bound, .. } => {
                f.debug_struct("Ctmc").field("rate_bound", rate_bound).finish_non_exhaustive()
            }
        }
    }
}

impl Motion {
    pub fn diffusion_1d(drift: Field, diffusion: Field, domain: Domain) -> Result<Self> {
        if diffusion.inf <= 0.0 {
            return Err(Error::Config("diffusion coefficient must be uniformly positive".into()));
        }
        if let Domain::Interval { left, right } = domain {
            if !(right > left) {
                return Err(Error::Config("empty interval domain".into()));
            }
        }
        Ok(Motion::Diffusion1d { drift, diffusion, domain })
    }

    pub fn diffusion_radial(dim: u32, drift: Field, diffusion: Field, radius: f64, inner: f64) -> Result<Self> {
        if diffusion.inf <= 0.0 {
            return Err(Error::Config("diffusion coefficient must be uniformly positive".into()));
        }
        if !(radius > inner && inner > 0.0) {
            return Err(Error::Config("need 0 < inner < radius".into()));
        }
        Ok(Motion::DiffusionRadial { dim, drift, diffusion, radius, inner })
    }

    fn contains(&self, x: f64) -> bool {
        match self {
            Motion::Diffusion1d { domain: Domain::Interval { left, right }, .. } => {
                x > *left && x < *right
            }
            Motion::Diffusion1d { .. } => true,
            Motion::DiffusionRadial { radius, inner, .. } => x >= *inner && x < *radius,
            Motion::Ctmc { .. } => x >= 0.0,
        }
    }
}

/// Branching data: bounded nonnegative rate field and a purely local
/// offspring law per position, with uniform support bounds.
#[derive(Clone)]
pub struct BranchField {
    pub rate: Field,
    law_fn: Arc<dyn Fn(f64) -> OffspringLaw + Send + Sync>,
    pub max_children: u32,
    pub min_children: u32,
}

impl std::fmt::Debug for BranchField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BranchField")
            .field("rate_sup", &self.rate.sup)
            .field("max_children", &self.max_children)
            .finish_non_exhaustive()
    }
}

impl BranchField {
    /// Same offspring law everywhere.
    pub fn uniform(rate: Field, law: OffspringLaw) -> Result<Self> {
        if law.displacement().is_some() {
            return Err(Error::Config("continuous-time branching must be purely local".into()));
        }
        let (max, min) = (law.max_children(), law.min_children());
        Ok(Self {
            rate,
            law_fn: Arc::new(move |_| law.clone()),
            max_children: max,
            min_children: min,
        })
    }

    /// Position-dependent law; support bounds must be supplied and must hold
    /// uniformly in the position.
    pub fn from_fn(
        rate: Field,
        law_fn: impl Fn(f64) -> OffspringLaw + Send + Sync + 'static,
        max_children: u32,
        min_children: u32,
    ) -> Result<Self> {
        if rate.inf < 0.0 {
            return Err(Error::Config("branch rate must be nonnegative".into()));
        }
        Ok(Self { rate, law_fn: Arc::new(law_fn), max_children, min_children })
    }

    pub fn law_at(&self, x: f64) -> OffspringLaw {
        (self.law_fn)(x)
    }

    pub fn rate_at(&self, x: f64) -> f64 {
        self.rate.eval(x)
    }

    /// `r(x) (mean(x) - 1)`, the zero-order coefficient of the expectation
    /// semigroup's generator.
    pub fn growth_coefficient(&self, x: f64) -> f64 {
        self.rate_at(x) * (self.law_at(x).mean() - 1.0)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BmpConfig {
    pub dt: f64,
    pub horizon: f64,
    pub cap: usize,
    pub replicas: usize,
}

impl BmpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon >= 0.0) {
            return Err(Error::Config("need dt > 0 and horizon >= 0".into()));
        }
        if self.cap < 1 || self.replicas < 1 {
            return Err(Error::Config("need cap >= 1 and replicas >= 1".into()));
        }
        Ok(())
    }
}

/// Positions of the living particles at one instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleSystem {
    pub time: f64,
    pub positions: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BmpRun {
    pub trace: PopulationTrace,
    pub final_particles: ParticleSystem,
}

/// One Euler-Maruyama motion step with boundary killing. Exits are detected
/// by sign change plus a Brownian-bridge correction
/// `exp(-2 d1 d2 / (a dt))` for excursions that cross and return within the
/// step; the correction halves the order of the killing bias, which feeds
/// straight into survival estimates.
fn diffusion_step(
    x: f64,
    drift: &Field,
    diffusion: &Field,
    domain: &Domain,
    dt: f64,
    rng: &mut impl Rng,
) -> Option<f64> {
    let a = diffusion.eval(x);
    let z: f64 = StandardNormal.sample(rng);
    let x2 = x + drift.eval(x) * dt + (a * dt).sqrt() * z;
    match *domain {
        Domain::Interval { left, right } => {
            if x2 <= left || x2 >= right {
                return None;
            }
            let p_left = (-2.0 * (x - left) * (x2 - left) / (a * dt)).exp();
            let p_right = (-2.0 * (right - x) * (right - x2) / (a * dt)).exp();
            let u: f64 = rng.random();
            if u < p_left + p_right {
                None
            } else {
                Some(x2)
            }
        }
        Domain::Unbounded { reflect_right } => match reflect_right {
            Some(wall) if x2 > wall => Some(2.0 * wall - x2),
            _ => Some(x2),
        },
    }
}

fn radial_step(
    x: f64,
    dim: u32,
    drift: &Field,
    diffusion: &Field,
    radius: f64,
    inner: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Option<f64> {
    let a = diffusion.eval(x);
    let b = drift.eval(x) + a * (dim.saturating_sub(1)) as f64 / (2.0 * x);
    let z: f64 = StandardNormal.sample(rng);
    let mut x2 = x + b * dt + (a * dt).sqrt() * z;
    if x2 >= radius {
        return None;
    }
    let p_exit = (-2.0 * (radius - x) * (radius - x2) / (a * dt)).exp();
    let u: f64 = rng.random();
    if u < p_exit {
        return None;
    }
    if x2 < inner {
        x2 = inner + (inner - x2);
    }
    Some(x2.min(radius * (1.0 - 1e-12)))
}

/// Advance the whole population by one step of size `dt`. Branching is
/// decided by thinning against `sup r` with acceptance `r(x)/sup r`, matching
/// the tree-pruning construction in [`skeleton`]; children are born at the
/// parent's position and start moving on the next step.
fn population_step(
    particles: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
    motion: &Motion,
    branch: &BranchField,
    dt: f64,
    rng: &mut impl Rng,
) {
    let rate_sup = branch.rate.sup;
    let p_candidate = if rate_sup > 0.0 { 1.0 - (-rate_sup * dt).exp() } else { 0.0 };
    scratch.clear();
    for &x in particles.iter() {
        let mut branched = false;
        if p_candidate > 0.0 {
            let u: f64 = rng.random();
            if u < p_candidate {
                let accept: f64 = rng.random();
                if accept * rate_sup < branch.rate_at(x) {
                    let n = branch.law_at(x).sample_count(rng);
                    for _ in 0..n {
                        scratch.push(x);
                    }
                    branched = true;
                }
            }
        }
        if !branched {
            let moved = match motion {
                Motion::Diffusion1d { drift, diffusion, domain } => {
                    diffusion_step(x, drift, diffusion, domain, dt, rng)
                }
                Motion::DiffusionRadial { dim, drift, diffusion, radius, inner } => {
                    radial_step(x, *dim, drift, diffusion, *radius, *inner, dt, rng)
                }
                Motion::Ctmc { .. } => unreachable!("ctmc uses the event-driven path"),
            };
            if let Some(x2) = moved {
                scratch.push(x2);
            }
        }
    }
    std::mem::swap(particles, scratch);
}

/// Exact event-driven step for CTMC motion over `(t0, t1]`: motion jumps and
/// branch events compete through exponential clocks, so there is no
/// discretization bias. Children keep evolving within the interval.
fn ctmc_interval(
    particles: &mut Vec<f64>,
    rates: &(dyn Fn(usize) -> Vec<(usize, f64)> + Send + Sync),
    branch: &BranchField,
    t0: f64,
    t1: f64,
    cap: usize,
    rng: &mut impl Rng,
) {
    let mut stack: Vec<(f64, f64)> = particles.iter().map(|&x| (x, t0)).collect();
    let mut out = Vec::with_capacity(particles.len());
    while let Some((mut x, mut t)) = stack.pop() {
        loop {
            if out.len() + stack.len() >= cap {
                out.push(x);
                break;
            }
            let state = x as usize;
            let jump_rates = rates(state);
            let q_tot: f64 = jump_rates.iter().map(|&(_, q)| q).sum();
            let r = branch.rate_at(x);
            let total = q_tot + r;
            if total <= 0.0 {
                out.push(x);
                break;
            }
            t += Exp::new(total).unwrap().sample(rng);
            if t >= t1 {
                out.push(x);
                break;
            }
            let mut u: f64 = rng.random::<f64>() * total;
            if u < r {
                let n = branch.law_at(x).sample_count(rng);
                for _ in 0..n {
                    stack.push((x, t));
                }
                break;
            }
            u -= r;
            let mut target = state;
            for &(y, q) in &jump_rates {
                if u < q {
                    target = y;
                    break;
                }
                u -= q;
            }
            x = target as f64;
        }
    }
    *particles = out;
}

/// Core replica loop. Calls `observe(step_index, time, particles)` after
/// every step (and once at time zero), stopping on extinction, cap, or the
/// horizon.
pub(crate) fn evolve(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    cfg: &BmpConfig,
    rng: &mut impl Rng,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> (Terminator, Vec<f64>, f64) {
    debug_assert!(motion.contains(start), "start {start} outside domain");
    let steps = (cfg.horizon / cfg.dt).round().max(0.0) as usize;
    let mut particles = vec![start];
    let mut scratch = Vec::new();
    observe(0, 0.0, &particles);
    let mut terminator = Terminator::Horizon;
    let mut t = 0.0;
    for k in 1..=steps {
        t = k as f64 * cfg.dt;
        match motion {
            Motion::Ctmc { rates, .. } => {
                ctmc_interval(&mut particles, rates.as_ref(), branch, t - cfg.dt, t, cfg.cap, rng)
            }
            _ => population_step(&mut particles, &mut scratch, motion, branch, cfg.dt, rng),
        }
        observe(k, t, &particles);
        if particles.is_empty() {
            terminator = Terminator::Extinct;
            break;
        }
        if particles.len() >= cfg.cap {
            terminator = Terminator::CapHit;
            break;
        }
    }
    (terminator, particles, t)
}

/// Simulate one replica, recording the population at every step.
pub fn simulate_bmp(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    cfg: &BmpConfig,
    rng: &mut impl Rng,
) -> Result<BmpRun> {
    cfg.validate()?;
    let mut times = Vec::new();
    let mut counts = Vec::new();
    let (terminator, particles, t) = evolve(motion, branch, start, cfg, rng, |_, time, parts| {
        times.push(time);
        counts.push(parts.len() as u64);
    });
    Ok(BmpRun {
        trace: PopulationTrace::new(times, counts, terminator),
        final_particles: ParticleSystem { time: t, positions: particles },
    })
}

/// Survival frequency with the same proxy as the discrete engine: a replica
/// survives when it is alive at the horizon or hit the particle cap.
pub fn survival_probability_mc(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    cfg: &BmpConfig,
    rng: RandomSource,
) -> Result<SurvivalEstimate> {
    cfg.validate()?;
    let outcomes: Vec<Terminator> = (0..cfg.replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            evolve(motion, branch, start, cfg, &mut r, |_, _, _| {}).0
        })
        .collect();
    let survived = outcomes.iter().filter(|&&t| t != Terminator::Extinct).count();
    let cap_hits = outcomes.iter().filter(|&&t| t == Terminator::CapHit).count();
    let mut est = SurvivalEstimate::from_outcomes(survived, cap_hits, cfg.replicas);
    if let Ok(ext) = crate::gw::extinction_probability(&branch.law_at(start)) {
        est.cap_survival_lower_bound = Some(1.0 - ext.value.powi(cfg.cap.min(1 << 30) as i32));
    }
    Ok(est)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalSurvivalEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Fraction of replicas that hit the cap before the horizon; those are
    /// counted as locally surviving, so keep this near zero for the estimate
    /// to be trustworthy.
    pub cap_hit_fraction: f64,
}

/// Frequency of replicas with at least one particle in `(window.0, window.1)`
/// at the horizon.
pub fn local_survival_mc(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    window: (f64, f64),
    cfg: &BmpConfig,
    rng: RandomSource,
) -> Result<LocalSurvivalEstimate> {
    cfg.validate()?;
    if !(window.1 > window.0) {
        return Err(Error::Config("empty local-survival window".into()));
    }
    let hits: Vec<(bool, bool)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            let (term, particles, _) = evolve(motion, branch, start, cfg, &mut r, |_, _, _| {});
            match term {
                Terminator::CapHit => (true, true),
                Terminator::Extinct => (false, false),
                Terminator::Horizon => {
                    (particles.iter().any(|&x| x > window.0 && x < window.1), false)
                }
            }
        })
        .collect();
    let survived = hits.iter().filter(|&&(s, _)| s).count();
    let caps = hits.iter().filter(|&&(_, c)| c).count();
    let p = survived as f64 / cfg.replicas as f64;
    Ok(LocalSurvivalEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / cfg.replicas as f64).sqrt(),
        cap_hit_fraction: caps as f64 / cfg.replicas as f64,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TotalMassEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub censored_fraction: f64,
    /// Set when more than 1% of replicas were still alive at the horizon;
    /// the integral is then horizon-censored and the mean is biased low.
    pub censoring_warning: bool,
}

/// Mean of the lifetime population integral, accumulated per replica until
/// extinction (or the horizon, flagged as censoring). Intended for
/// subcritical regimes where the integral is finite.
pub fn total_mass_estimate(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    cfg: &BmpConfig,
    rng: RandomSource,
) -> Result<TotalMassEstimate> {
    cfg.validate()?;
    let results: Vec<(f64, bool)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            // N_t is a step function: each observed count persists over the
            // following step, so sum count * dt and drop the final count,
            // which has no interval after it.
            let mut integral = 0.0;
            let (term, particles, _) = evolve(motion, branch, start, cfg, &mut r, |_, _, parts| {
                integral += parts.len() as f64 * cfg.dt;
            });
            integral -= particles.len() as f64 * cfg.dt;
            (integral, term != Terminator::Extinct)
        })
        .collect();
    let n = cfg.replicas as f64;
    let mean: f64 = results.iter().map(|&(v, _)| v).sum::<f64>() / n;
    let var: f64 = results.iter().map(|&(v, _)| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let censored = results.iter().filter(|&&(_, c)| c).count();
    let frac = censored as f64 / n;
    Ok(TotalMassEstimate {
        mean,
        stderr: (var / n).sqrt(),
        censored_fraction: frac,
        censoring_warning: frac > 0.01,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PdeOptions {
    pub n_cells: usize,
    pub dt: f64,
}

impl Default for PdeOptions {
    fn default() -> Self {
        Self { n_cells: 400, dt: 1e-3 }
    }
}

fn interval_of(motion: &Motion) -> Result<(f64, f64, BoundaryKind)> {
    match motion {
        Motion::Diffusion1d { domain: Domain::Interval { left, right }, .. } => {
            Ok((*left, *right, BoundaryKind::Dirichlet))
        }
        Motion::DiffusionRadial { inner, radius, .. } => {
            Ok((*inner, *radius, BoundaryKind::Reflect))
        }
        _ => Err(Error::Config(
            "expected-mass PDE needs a 1-D interval (bound unbounded domains in a box first)"
                .into(),
        )),
    }
}

/// Assemble the generator of the expectation semigroup,
/// `L w = a/2 w'' + b w' + r (mean - 1) w`, on the motion's interval.
fn expectation_operator(
    motion: &Motion,
    branch: &BranchField,
    grid: &Grid1D,
) -> Result<Operator1d> {
    let (_, _, left_bc) = interval_of(motion)?;
    let xs = grid.interior_xs();
    let (drift, diffusion, radial_dim) = match motion {
        Motion::Diffusion1d { drift, diffusion, .. } => (drift, diffusion, None),
        Motion::DiffusionRadial { dim, drift, diffusion, .. } => (drift, diffusion, Some(*dim)),
        _ => unreachable!(),
    };
    let a: Vec<f64> = xs.iter().map(|&x| diffusion.eval(x)).collect();
    let b: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let mut v = drift.eval(x);
            if let Some(d) = radial_dim {
                v += diffusion.eval(x) * (d.saturating_sub(1)) as f64 / (2.0 * x);
            }
            v
        })
        .collect();
    let c: Vec<f64> = xs.iter().map(|&x| branch.growth_coefficient(x)).collect();
    Ok(Operator1d::assemble(grid, &a, &b, &c, left_bc, BoundaryKind::Dirichlet))
}

/// Expected population size `E_start[N_t]` by Crank-Nicolson on the linear
/// expectation PDE (exact in expectation: no sampling error, second-order
/// discretization error).
pub fn expected_mass_pde(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    t: f64,
    opts: &PdeOptions,
) -> Result<f64> {
    let (grid, nodes) = expected_mass_profile(motion, branch, t, opts)?;
    Ok(grid.interp(&nodes, start))
}

/// Full spatial profile `x -> E_x[N_t]` on the grid nodes.
pub fn expected_mass_profile(
    motion: &Motion,
    branch: &BranchField,
    t: f64,
    opts: &PdeOptions,
) -> Result<(Grid1D, Vec<f64>)> {
    let (left, right, _) = interval_of(motion)?;
    let grid = Grid1D::new(left, right, opts.n_cells)?;
    let op = expectation_operator(motion, branch, &grid)?;
    let cn = CrankNicolson::new(op, opts.dt);
    let mut w = vec![1.0; grid.interior_count()];
    let steps = (t / opts.dt).round() as usize;
    for _ in 0..steps {
        cn.step(&mut w, None);
    }
    let mut nodes = vec![0.0; grid.n_nodes()];
    nodes[1..grid.n_cells].copy_from_slice(&w);
    Ok((grid, nodes))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LambdaOptions {
    pub pde: PdeOptions,
    /// Number of checkpoints over `[0, t_max]` at which the log-mass slope
    /// is sampled.
    pub checkpoints: usize,
    /// Monte Carlo fallback (used when no 1-D interval is available).
    pub mc_replicas: usize,
    pub mc_dt: f64,
    pub mc_cap: usize,
}

impl Default for LambdaOptions {
    fn default() -> Self {
        Self { pde: PdeOptions::default(), checkpoints: 32, mc_replicas: 2000, mc_dt: 1e-2, mc_cap: 100_000 }
    }
}

/// Exponential growth rate of the expected mass,
/// `limsup_t (1/t) log E_start[N_t]`, from slopes of the log-mass over the
/// top-half window of `[0, t_max]`. Both the window maximum (the reported
/// value) and minimum are kept, since oscillatory examples have genuinely
/// different liminf and limsup. Uses the deterministic PDE route whenever the
/// motion lives on a 1-D interval; Monte Carlo otherwise.
pub fn lambda_double_prime_estimate(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    t_max: f64,
    rng: RandomSource,
    opts: &LambdaOptions,
) -> Result<EigenvalueEstimate> {
    let log_mass: Vec<(f64, f64)> = if interval_of(motion).is_ok() {
        log_mass_pde(motion, branch, start, t_max, opts)?
    } else {
        log_mass_mc(motion, branch, start, t_max, rng, opts)?
    };
    let slopes: Vec<(f64, f64)> = log_mass
        .windows(2)
        .map(|w| {
            let (t0, l0) = w[0];
            let (t1, l1) = w[1];
            (t1, (l1 - l0) / (t1 - t0))
        })
        .collect();
    let window: Vec<f64> = slopes
        .iter()
        .filter(|&&(t, _)| t >= t_max / 2.0 - 1e-12)
        .map(|&(_, s)| s)
        .collect();
    if window.is_empty() {
        return Err(Error::Config("no slope checkpoints in the top window".into()));
    }
    let value = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let window_min = window.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EigenvalueEstimate {
        value,
        lower: Some(window_min),
        upper: None,
        method: Method::GrowthSlope,
        metadata: serde_json::json!({
            "t_max": t_max,
            "window_min": window_min,
            "window_max": value,
            "slopes": slopes,
        }),
    })
}

fn log_mass_pde(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    t_max: f64,
    opts: &LambdaOptions,
) -> Result<Vec<(f64, f64)>> {
    let (left, right, _) = interval_of(motion)?;
    let grid = Grid1D::new(left, right, opts.pde.n_cells)?;
    let op = expectation_operator(motion, branch, &grid)?;
    let cn = CrankNicolson::new(op, opts.pde.dt);
    let mut w = vec![1.0; grid.interior_count()];
    let mut log_scale = 0.0f64;
    let steps_per_cp = ((t_max / opts.checkpoints as f64) / opts.pde.dt).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(opts.checkpoints);
    let mut nodes = vec![0.0; grid.n_nodes()];
    for cp in 1..=opts.checkpoints {
        for _ in 0..steps_per_cp {
            cn.step(&mut w, None);
        }
        // renormalize so exponential growth or decay never leaves f64 range
        let max = w.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            log_scale += max.ln();
            for v in w.iter_mut() {
                *v /= max;
            }
        }
        nodes[1..grid.n_cells].copy_from_slice(&w);
        let value = grid.interp(&nodes, start).max(1e-300);
        out.push((cp as f64 * steps_per_cp as f64 * opts.pde.dt, value.ln() + log_scale));
    }
    Ok(out)
}

fn log_mass_mc(
    motion: &Motion,
    branch: &BranchField,
    start: f64,
    t_max: f64,
    rng: RandomSource,
    opts: &LambdaOptions,
) -> Result<Vec<(f64, f64)>> {
    let cfg = BmpConfig { dt: opts.mc_dt, horizon: t_max, cap: opts.mc_cap, replicas: opts.mc_replicas };
    cfg.validate()?;
    let steps = (t_max / opts.mc_dt).round() as usize;
    let stride = (steps / opts.checkpoints).max(1);
    let sums: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.offset(k as u64).rng();
            let mut counts = vec![f64::NAN; steps / stride + 1];
            let (term, particles, _) =
                evolve(motion, branch, start, &cfg, &mut r, |step, _, parts| {
                    if step % stride == 0 {
                        counts[step / stride] = parts.len() as f64;
                    }
                });
            // replicas that stop early freeze their final count at the
            // unobserved checkpoints (extinct stays 0, capped stays capped)
            let fill = match term {
                Terminator::Extinct => 0.0,
                _ => particles.len() as f64,
            };
            for c in counts.iter_mut() {
                if c.is_nan() {
                    *c = fill;
                }
            }
            counts
        })
        .collect();
    let n_cp = steps / stride + 1;
    let mut out = Vec::new();
    for cp in 1..n_cp {
        let mean: f64 = sums.iter().map(|c| c[cp]).sum::<f64>() / cfg.replicas as f64;
        out.push((cp as f64 * stride as f64 * opts.mc_dt, mean.max(1e-300).ln()));
    }
    Ok(out)
}
