//! File-format layer: TOML specifications for the discrete chains, the
//! continuous-time processes, and the reaction-diffusion problems, plus the
//! integer-lattice index bijections used by the built-in spaces.

use crate::bmc::{BmcSpec, ExpectationKernel};
use crate::bmp::{BmpConfig, BranchField, Domain, Field, Motion};
use crate::error::{Error, Result};
use crate::fkpp::FkppProblem;
use crate::law::{OffspringLaw, Placement, StateIndex};
use crate::pde1d::Grid1D;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Zigzag bijection between signed lattice coordinates and dense indices:
/// 0, -1, 1, -2, 2, ... map to 0, 1, 2, 3, 4, ...
pub fn zigzag_encode(z: i64) -> usize {
    if z >= 0 {
        (z as usize) << 1
    } else {
        (((-z) as usize) << 1) - 1
    }
}

pub fn zigzag_decode(i: usize) -> i64 {
    if i % 2 == 0 {
        (i >> 1) as i64
    } else {
        -(((i + 1) >> 1) as i64)
    }
}

const COORD_BITS: u32 = 20;

/// Bit-interleaving bijection between d-dimensional lattice points and dense
/// indices (each coordinate zigzagged first). Coordinates must stay below
/// 2^19 in absolute value.
pub fn lattice_encode(coords: &[i64]) -> usize {
    let d = coords.len();
    let mut out = 0usize;
    for (i, &z) in coords.iter().enumerate() {
        let u = zigzag_encode(z);
        assert!(u < (1usize << COORD_BITS), "lattice coordinate {z} out of range");
        for bit in 0..COORD_BITS {
            if u & (1 << bit) != 0 {
                out |= 1 << (bit as usize * d + i);
            }
        }
    }
    out
}

pub fn lattice_decode(index: usize, d: usize) -> Vec<i64> {
    let mut coords = vec![0usize; d];
    for bit in 0..COORD_BITS {
        for (i, c) in coords.iter_mut().enumerate() {
            if index & (1 << (bit as usize * d + i)) != 0 {
                *c |= 1 << bit;
            }
        }
    }
    coords.into_iter().map(zigzag_decode).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    /// Piecewise-constant: `values[i]` on `(breaks[i-1], breaks[i])`, with
    /// `values.len() == breaks.len() + 1`.
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
}

impl FieldSpec {
    pub fn build(&self) -> Result<Field> {
        match self {
            FieldSpec::Constant { value } => Ok(Field::constant(*value)),
            FieldSpec::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(Error::Config(
                        "piecewise field needs values.len() == breaks.len() + 1".into(),
                    ));
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config("piecewise breaks must increase".into()));
                }
                let inf = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let breaks = breaks.clone();
                let values = values.clone();
                Ok(Field::from_fn(
                    move |x| {
                        let i = breaks.partition_point(|&b| b <= x);
                        values[i]
                    },
                    inf,
                    sup,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementName {
    /// Children stay at the parent (purely local).
    Stay,
    /// Each child independently jumps to a uniform lattice neighbour.
    Srw,
    /// Each child independently follows an outgoing edge, weight-sampled.
    UniformOut,
    /// One outgoing edge is drawn per event and all children follow it.
    TogetherOut,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawTableSpec {
    pub probs: Vec<(u32, f64)>,
    #[serde(default)]
    pub displacement: Option<DisplacementName>,
    #[serde(default)]
    pub overrides: Vec<LawOverrideSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawOverrideSpec {
    pub state: usize,
    pub probs: Vec<(u32, f64)>,
    #[serde(default)]
    pub displacement: Option<DisplacementName>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    /// Integer lattice of the given dimension, zigzag/interleave indexed.
    LatticeZd { dim: usize },
    /// Directed weighted graph from a CSV file with `src,dst,weight` lines.
    GraphFile { path: String },
    /// Layered DAG: layer l has `widths[l]` nodes, each pointing to every
    /// node of the next layer.
    LayeredDag { widths: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmcFileSpec {
    pub space: SpaceSpec,
    pub law: LawTableSpec,
}

/// Out-edges per state, weight-normalized.
type EdgeTable = BTreeMap<usize, Vec<(usize, f64)>>;

fn parse_graph_csv(text: &str) -> Result<EdgeTable> {
    let mut edges: EdgeTable = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("src") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(Error::Config(format!("graph line {}: expected src,dst[,weight]", lineno + 1)));
        }
        let src: usize = parts[0]
            .parse()
            .map_err(|_| Error::Config(format!("graph line {}: bad src", lineno + 1)))?;
        let dst: usize = parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("graph line {}: bad dst", lineno + 1)))?;
        let weight: f64 = if parts.len() == 3 {
            parts[2]
                .parse()
                .map_err(|_| Error::Config(format!("graph line {}: bad weight", lineno + 1)))?
        } else {
            1.0
        };
        if weight < 0.0 {
            return Err(Error::Config(format!("graph line {}: negative weight", lineno + 1)));
        }
        edges.entry(src).or_default().push((dst, weight));
    }
    Ok(edges)
}

#[derive(Clone)]
enum SpaceTopology {
    Lattice { dim: usize },
    Graph { edges: std::sync::Arc<EdgeTable> },
}

impl SpaceTopology {
    fn out_targets(&self, state: usize) -> Vec<(StateIndex, f64)> {
        match self {
            SpaceTopology::Lattice { dim } => {
                let coords = lattice_decode(state, *dim);
                let w = 1.0 / (2 * dim) as f64;
                let mut out = Vec::with_capacity(2 * dim);
                for i in 0..*dim {
                    for delta in [-1i64, 1] {
                        let mut c = coords.clone();
                        c[i] += delta;
                        out.push((StateIndex(lattice_encode(&c)), w));
                    }
                }
                out
            }
            SpaceTopology::Graph { edges } => {
                let out = edges.get(&state).cloned().unwrap_or_default();
                let total: f64 = out.iter().map(|&(_, w)| w).sum();
                if total <= 0.0 {
                    return Vec::new();
                }
                out.into_iter().map(|(y, w)| (StateIndex(y), w / total)).collect()
            }
        }
    }
}

impl BmcFileSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolve the named displacements against the space and build the chain
    /// spec (the kernel follows from it).
    pub fn build(&self, base_dir: Option<&std::path::Path>) -> Result<BmcSpec> {
        let topology = match &self.space {
            SpaceSpec::LatticeZd { dim } => {
                if *dim == 0 || *dim > 3 {
                    return Err(Error::Config("lattice dimension must lie in 1..=3".into()));
                }
                SpaceTopology::Lattice { dim: *dim }
            }
            SpaceSpec::GraphFile { path } => {
                let full = match base_dir {
                    Some(dir) => dir.join(path),
                    None => path.into(),
                };
                let text = std::fs::read_to_string(&full)?;
                SpaceTopology::Graph { edges: std::sync::Arc::new(parse_graph_csv(&text)?) }
            }
            SpaceSpec::LayeredDag { widths } => {
                if widths.is_empty() {
                    return Err(Error::Config("layered dag needs at least one layer".into()));
                }
                let mut edges: EdgeTable = BTreeMap::new();
                let mut offset = 0usize;
                for (l, &w) in widths.iter().enumerate() {
                    if l + 1 < widths.len() {
                        let next_offset = offset + w;
                        for i in 0..w {
                            edges.insert(
                                offset + i,
                                (0..widths[l + 1]).map(|j| (next_offset + j, 1.0)).collect(),
                            );
                        }
                        offset = next_offset;
                    }
                }
                SpaceTopology::Graph { edges: std::sync::Arc::new(edges) }
            }
        };
        let make_law = |probs: &[(u32, f64)],
                        name: Option<DisplacementName>,
                        state: usize|
         -> Result<OffspringLaw> {
            let name = name.unwrap_or(DisplacementName::Stay);
            match name {
                DisplacementName::Stay => OffspringLaw::new(probs.to_vec()),
                kind => {
                    let targets = topology.out_targets(state);
                    if targets.is_empty() {
                        // dead end: absorb by killing
                        return OffspringLaw::new(vec![(0, 1.0)]);
                    }
                    let placement = match kind {
                        DisplacementName::TogetherOut => Placement::AllTogether(targets),
                        _ => Placement::Independent(targets),
                    };
                    OffspringLaw::with_displacement(probs.to_vec(), placement)
                }
            }
        };
        // validate the base law and overrides once up front
        make_law(&self.law.probs, self.law.displacement, 0)?;
        let mut overrides = BTreeMap::new();
        for o in &self.law.overrides {
            make_law(&o.probs, o.displacement.or(self.law.displacement), o.state)?;
            overrides.insert(o.state, (o.probs.clone(), o.displacement.or(self.law.displacement)));
        }
        let base = (self.law.probs.clone(), self.law.displacement);
        let topology = topology.clone();
        Ok(BmcSpec::from_fn(move |x| {
            let (probs, name) = overrides.get(&x).unwrap_or(&base);
            let name = name.unwrap_or(DisplacementName::Stay);
            let law = match name {
                DisplacementName::Stay => OffspringLaw::new(probs.clone()),
                kind => {
                    let targets = topology.out_targets(x);
                    if targets.is_empty() {
                        OffspringLaw::new(vec![(0, 1.0)])
                    } else {
                        let placement = match kind {
                            DisplacementName::TogetherOut => Placement::AllTogether(targets),
                            _ => Placement::Independent(targets),
                        };
                        OffspringLaw::with_displacement(probs.clone(), placement)
                    }
                }
            };
            law.expect("law validated at build time")
        }))
    }

    pub fn kernel(&self, base_dir: Option<&std::path::Path>) -> Result<ExpectationKernel> {
        Ok(self.build(base_dir)?.kernel())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { left: f64, right: f64 },
    Unbounded {
        #[serde(default)]
        reflect_right: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionFileSpec {
    Diffusion1d { drift: FieldSpec, diffusion: FieldSpec, domain: DomainSpec },
    DiffusionRadial { dim: u32, drift: FieldSpec, diffusion: FieldSpec, radius: f64, inner: f64 },
}

impl MotionFileSpec {
    pub fn build(&self) -> Result<Motion> {
        match self {
            MotionFileSpec::Diffusion1d { drift, diffusion, domain } => {
                let domain = match domain {
                    DomainSpec::Interval { left, right } => {
                        Domain::Interval { left: *left, right: *right }
                    }
                    DomainSpec::Unbounded { reflect_right } => {
                        Domain::Unbounded { reflect_right: *reflect_right }
                    }
                };
                Motion::diffusion_1d(drift.build()?, diffusion.build()?, domain)
            }
            MotionFileSpec::DiffusionRadial { dim, drift, diffusion, radius, inner } => {
                Motion::diffusion_radial(*dim, drift.build()?, diffusion.build()?, *radius, *inner)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchFileSpec {
    pub rate: FieldSpec,
    pub probs: Vec<(u32, f64)>,
}

impl BranchFileSpec {
    pub fn build(&self) -> Result<BranchField> {
        let rate = self.rate.build()?;
        if rate.inf < 0.0 {
            return Err(Error::Config("branch rate must be nonnegative".into()));
        }
        BranchField::uniform(rate, OffspringLaw::new(self.probs.clone())?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmpFileSpec {
    pub motion: MotionFileSpec,
    pub branch: BranchFileSpec,
    pub config: BmpConfig,
    #[serde(default)]
    pub start: Option<f64>,
}

impl BmpFileSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant { value: f64 },
    /// 1 on `(lo, hi)`, 0 elsewhere.
    Indicator { lo: f64, hi: f64 },
    /// Linear ramp from 0 at the left end to `max` at the right end.
    Ramp { max: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub left: f64,
    pub right: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub drift: FieldSpec,
    pub diffusion: FieldSpec,
    #[serde(default)]
    pub radial_dim: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkppFileSpec {
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub branch: BranchFileSpec,
    pub initial: InitialSpec,
}

impl FkppFileSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<FkppProblem> {
        let grid = Grid1D::new(self.grid.left, self.grid.right, self.grid.n_cells)?;
        let initial: Box<dyn Fn(f64) -> f64 + Send + Sync> = match self.initial {
            InitialSpec::Constant { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Config("initial value must lie in [0, 1]".into()));
                }
                Box::new(move |_| value)
            }
            InitialSpec::Indicator { lo, hi } => {
                Box::new(move |x| if x > lo && x < hi { 1.0 } else { 0.0 })
            }
            InitialSpec::Ramp { max } => {
                if !(0.0..=1.0).contains(&max) {
                    return Err(Error::Config("ramp max must lie in [0, 1]".into()));
                }
                let (l, r) = (grid.left, grid.right);
                Box::new(move |x| max * ((x - l) / (r - l)).clamp(0.0, 1.0))
            }
        };
        let problem = FkppProblem::new(
            grid,
            self.coefficients.drift.build()?,
            self.coefficients.diffusion.build()?,
            self.branch.build()?,
            initial,
        )?;
        Ok(match self.coefficients.radial_dim {
            Some(dim) => problem.radial(dim),
            None => problem,
        })
    }
}
