//! Parameter estimation for the macro-scale model: closed-form estimators
//! for the daughter intensity and birth rate, and a weighted minimum-contrast
//! grid search over (lambda_c, a, b, p).
//!
//! The search matches simulated structural summaries against targets using
//! common random numbers: every lattice vertex replays the same substreams,
//! so objective differences reflect parameters, not sampling noise.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{rasterize_spheres, Sphere};
use crate::marks::{assign_radii, GammaMarkParams};
use crate::pointproc::{simulate_stack, ChainParams, MaternParams};
use crate::seed::MasterSeed;
use crate::stats::{kolmogorov_distance, summarize_grid, Edf, SummaryTargets};

/// Weights of the six objective terms: spherical contact, the three chord
/// axes, volume fraction, and connected volume fraction. They must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub w_scd: f64,
    pub w_x: f64,
    pub w_y: f64,
    pub w_z: f64,
    pub w_v: f64,
    pub w_vprime: f64,
}

impl Weights {
    pub fn new(w_scd: f64, w_x: f64, w_y: f64, w_z: f64, w_v: f64, w_vprime: f64) -> Result<Self> {
        let w = Self { w_scd, w_x, w_y, w_z, w_v, w_vprime };
        for v in w.as_array() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!("weight {v} must be finite and >= 0")));
            }
        }
        let sum: f64 = w.as_array().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("weights sum to {sum}, expected 1")));
        }
        Ok(w)
    }

    fn as_array(&self) -> [f64; 6] {
        [self.w_scd, self.w_x, self.w_y, self.w_z, self.w_v, self.w_vprime]
    }
}

impl Default for Weights {
    /// A quarter each on contact, volume and connected volume; the chord
    /// axes share the remaining quarter.
    fn default() -> Self {
        Self {
            w_scd: 0.25,
            w_x: 1.0 / 12.0,
            w_y: 1.0 / 12.0,
            w_z: 1.0 / 12.0,
            w_v: 0.25,
            w_vprime: 0.25,
        }
    }
}

/// Inclusive arithmetic progression over one search axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisRange {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::InvalidParam(format!("axis range [{min}, {max}] is invalid")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParam(format!("axis step {step} must be finite and > 0")));
        }
        Ok(Self { min, max, step })
    }

    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0.. {
            let v = self.min + self.step * i as f64;
            if v > self.max + self.step * 1e-9 {
                break;
            }
            out.push(v.min(self.max));
        }
        out
    }
}

/// Search lattice over the four macro-scale parameters, with the number of
/// simulation replications per vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub lambda_c: AxisRange,
    pub a: AxisRange,
    pub b: AxisRange,
    pub p: AxisRange,
    pub reps: usize,
}

pub const DEFAULT_FIT_REPS: usize = 3;

impl LatticeSpec {
    pub fn new(
        lambda_c: AxisRange,
        a: AxisRange,
        b: AxisRange,
        p: AxisRange,
        reps: usize,
    ) -> Result<Self> {
        if !(lambda_c.min > 0.0) {
            return Err(Error::InvalidParam("lambda_c axis must be positive".into()));
        }
        if !(a.min > 0.0 && b.min > 0.0) {
            return Err(Error::InvalidParam("semi-axis ranges must be positive".into()));
        }
        if !(p.min > 0.0 && p.max < 1.0) {
            return Err(Error::InvalidParam("survival axis must lie inside (0, 1)".into()));
        }
        if reps == 0 {
            return Err(Error::InvalidParam("need at least one replication per vertex".into()));
        }
        Ok(Self { lambda_c, a, b, p, reps })
    }

    /// Admissible vertices (a > b) in lexicographic (lambda_c, a, b, p)
    /// order.
    pub fn vertices(&self) -> Vec<MacroTheta> {
        let mut out = Vec::new();
        for &lambda_c in &self.lambda_c.values() {
            for &a in &self.a.values() {
                for &b in &self.b.values() {
                    if a <= b {
                        continue;
                    }
                    for &p in &self.p.values() {
                        out.push(MacroTheta { lambda_c, a, b, p });
                    }
                }
            }
        }
        out
    }
}

/// One macro-scale parameter vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MacroTheta {
    pub lambda_c: f64,
    pub a: f64,
    pub b: f64,
    pub p: f64,
}

/// Outcome of the lattice search.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: MacroTheta,
    /// daughter intensity making the total midpoint intensity match the
    /// target
    pub lambda_d: f64,
    /// cluster birth rate balancing deaths at the fitted survival
    pub birth_rate: f64,
    pub objective: f64,
    /// every admissible vertex with its objective, in evaluation order
    pub table: Vec<(MacroTheta, f64)>,
}

/// Daughter intensity from the observed midpoint intensity: the mean number
/// of midpoints per cluster is spread over the ellipse area pi*a*b.
pub fn derive_lambda_d(lambda_hat: f64, lambda_c: f64, a: f64, b: f64) -> Result<f64> {
    for (name, v) in [("lambda_hat", lambda_hat), ("lambda_c", lambda_c), ("a", a), ("b", b)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParam(format!("{name} {v} must be finite and > 0")));
        }
    }
    if a <= b {
        return Err(Error::InvalidParam(format!("semi-axes need a > b; got ({a}, {b})")));
    }
    Ok(lambda_hat / (lambda_c * std::f64::consts::PI * a * b))
}

/// Birth rate lambda_c * (1 - p), computed as the difference
/// lambda_c - lambda_c * p. For p >= 1/2 the subtraction is exact
/// (Sterbenz), so the death/birth balance lambda_c * p + birth = lambda_c
/// reconstructs bit-exactly; below 1/2 it holds to one ulp. Bit-exactness
/// for every input is unattainable: when both straddling sums are
/// round-to-even ties no representable birth rate sums back to lambda_c.
pub fn derive_birth_rate(lambda_c: f64, p: f64) -> Result<f64> {
    if !(lambda_c > 0.0) || !lambda_c.is_finite() {
        return Err(Error::InvalidParam(format!("lambda_c {lambda_c} must be finite and > 0")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParam(format!("survival probability {p} not in (0, 1)")));
    }
    Ok(lambda_c - lambda_c * p)
}

/// Averaged summaries over `reps` simulated morphologies at one parameter
/// vector, or None when a replication degenerates (no points, too few points
/// for the mark average, or a single-phase grid).
fn replication_summaries(
    theta: &MacroTheta,
    lambda_hat: f64,
    gp: &GammaMarkParams,
    window: (usize, usize, usize),
    reps: usize,
    seed: &MasterSeed,
) -> Result<Option<SummaryTargets>> {
    let lambda_d = derive_lambda_d(lambda_hat, theta.lambda_c, theta.a, theta.b)?;
    let mp = MaternParams::new(theta.lambda_c, lambda_d, theta.a, theta.b)?;
    let cp = ChainParams::new(theta.p, theta.lambda_c)?;
    let (nx, ny, nz) = window;
    let mut summaries = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rng = seed.stream("fit.rep", &[rep as u64]);
        let stack = simulate_stack(&mp, &cp, (nx as f64, ny as f64, nz), &mut rng)?;
        if stack.points.is_empty() {
            return Ok(None);
        }
        let marked = match assign_radii(&stack, gp, &mut rng) {
            Ok(m) => m,
            Err(Error::Degenerate(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let spheres: Vec<Sphere> =
            marked.iter().map(|m| Sphere { cx: m.x, cy: m.y, cz: m.z, r: m.r }).collect();
        let grid = rasterize_spheres(&spheres, (nx, ny, nz), 1.0)?;
        match summarize_grid(&grid) {
            Ok(s) => summaries.push(s),
            Err(Error::Degenerate(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    let n = summaries.len() as f64;
    let collect = |pick: fn(&SummaryTargets) -> &Edf| -> Edf {
        let edfs: Vec<Edf> = summaries.iter().map(|s| pick(s).clone()).collect();
        Edf::pointwise_mean(&edfs)
    };
    Ok(Some(SummaryTargets {
        f_scd: collect(|s| &s.f_scd),
        f_x: collect(|s| &s.f_x),
        f_y: collect(|s| &s.f_y),
        f_z: collect(|s| &s.f_z),
        v: summaries.iter().map(|s| s.v).sum::<f64>() / n,
        v_conn: summaries.iter().map(|s| s.v_conn).sum::<f64>() / n,
    }))
}

fn weighted_objective(weights: &Weights, terms: &[f64; 6]) -> f64 {
    weights.as_array().iter().zip(terms).map(|(w, t)| w * t).sum()
}

/// Weighted contrast between target summaries and the mean summaries of
/// `reps` morphologies simulated at `theta`: Kolmogorov distances for the
/// four distribution terms, absolute differences for the two volume terms.
/// Degenerate simulations yield +infinity.
pub fn contrast(
    theta: &MacroTheta,
    lambda_hat: f64,
    targets: &SummaryTargets,
    gp: &GammaMarkParams,
    weights: &Weights,
    window: (usize, usize, usize),
    reps: usize,
    seed: &MasterSeed,
) -> Result<f64> {
    if reps == 0 {
        return Err(Error::InvalidParam("need at least one replication".into()));
    }
    let sim = match replication_summaries(theta, lambda_hat, gp, window, reps, seed)? {
        Some(s) => s,
        None => return Ok(f64::INFINITY),
    };
    let terms = [
        kolmogorov_distance(&sim.f_scd, &targets.f_scd),
        kolmogorov_distance(&sim.f_x, &targets.f_x),
        kolmogorov_distance(&sim.f_y, &targets.f_y),
        kolmogorov_distance(&sim.f_z, &targets.f_z),
        (sim.v - targets.v).abs(),
        (sim.v_conn - targets.v_conn).abs(),
    ];
    Ok(weighted_objective(weights, &terms))
}

/// Evaluate the contrast at every admissible lattice vertex with common
/// random numbers and return the argmin; ties go to the lexicographically
/// smallest (lambda_c, a, b, p).
pub fn minimum_contrast_search(
    lattice: &LatticeSpec,
    lambda_hat: f64,
    targets: &SummaryTargets,
    gp: &GammaMarkParams,
    weights: &Weights,
    window: (usize, usize, usize),
    seed: &MasterSeed,
) -> Result<FitResult> {
    let vertices = lattice.vertices();
    if vertices.is_empty() {
        return Err(Error::Degenerate("no admissible lattice vertex has a > b".into()));
    }
    let objectives: Vec<f64> = vertices
        .par_iter()
        .map(|theta| contrast(theta, lambda_hat, targets, gp, weights, window, lattice.reps, seed))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0usize;
    for (i, &obj) in objectives.iter().enumerate() {
        if obj < objectives[best] {
            best = i;
        }
    }
    let theta = vertices[best];
    Ok(FitResult {
        best: theta,
        lambda_d: derive_lambda_d(lambda_hat, theta.lambda_c, theta.a, theta.b)?,
        birth_rate: derive_birth_rate(theta.lambda_c, theta.p)?,
        objective: objectives[best],
        table: vertices.into_iter().zip(objectives).collect(),
    })
}
