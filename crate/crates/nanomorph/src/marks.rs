//! Radius marks for sphere midpoints: a gamma moving average over the m
//! nearest midpoints couples nearby radii, and the mark correlation function
//! quantifies that coupling.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::pointproc::PointStack;

/// Radius floor added to every gamma sum; also the smallest radius that
/// rasterizes to a full 27-voxel neighborhood.
pub const RADIUS_FLOOR: f64 = 1.7320508075688772; // sqrt(3)

/// Parameters of the moving-average radius law: each point draws one
/// Gamma(k/m, theta) summand, and a radius is the floor plus the summands of
/// the m nearest midpoints, so each radius minus the floor is marginally
/// Gamma(k, theta).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaMarkParams {
    pub k: f64,
    pub theta: f64,
    pub m: usize,
    pub r_floor: f64,
}

impl GammaMarkParams {
    pub fn new(k: f64, theta: f64, m: usize) -> Result<Self> {
        if !(k > 0.0 && k.is_finite() && theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "gamma parameters need k > 0 and theta > 0; got ({k}, {theta})"
            )));
        }
        if m < 1 {
            return Err(Error::InvalidParam("moving average needs m >= 1".into()));
        }
        Ok(Self { k, theta, m, r_floor: RADIUS_FLOOR })
    }
}

/// Sphere midpoint with its radius, both in voxel units (slice index taken
/// as a z coordinate with spacing 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

/// Assign radii to all midpoints of a stack. One Gamma(k/m, theta) summand
/// is drawn per point, in point order; the radius of a point is r_floor plus
/// the summands of its m nearest points (3D Euclidean distance, the point
/// itself included, distance ties broken by ascending point index).
pub fn assign_radii<R: Rng>(
    stack: &PointStack,
    gp: &GammaMarkParams,
    rng: &mut R,
) -> Result<Vec<MarkedPoint>> {
    let n = stack.points.len();
    if n < gp.m {
        return Err(Error::Degenerate(format!(
            "moving average over {} neighbors needs at least that many points, got {n}",
            gp.m
        )));
    }
    let gamma = Gamma::new(gp.k / gp.m as f64, gp.theta)
        .map_err(|e| Error::InvalidParam(format!("gamma summand law: {e}")))?;
    let summands: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();

    let positions: Vec<[f64; 3]> = stack
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z as f64])
        .collect();
    let index = BucketIndex::build(&positions);
    let mut out = Vec::with_capacity(n);
    let mut scratch = Vec::new();
    for (i, pos) in positions.iter().enumerate() {
        index.nearest(pos, gp.m, &mut scratch);
        debug_assert_eq!(scratch.len(), gp.m);
        debug_assert!(scratch.contains(&(i as u32)));
        let r = gp.r_floor + scratch.iter().map(|&j| summands[j as usize]).sum::<f64>();
        let p = &stack.points[i];
        out.push(MarkedPoint { x: p.x, y: p.y, z: p.z as f64, r });
    }
    Ok(out)
}

/// Uniform-grid spatial index with deterministic expanding-shell queries.
struct BucketIndex<'a> {
    positions: &'a [[f64; 3]],
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    origin: [f64; 3],
    cell: f64,
    /// one past the ring that covers the whole bounding box
    max_shell: i64,
}

impl<'a> BucketIndex<'a> {
    fn build(positions: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in positions {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        // cells sized by the largest axis extent: a volume-based size would
        // collapse for coplanar or collinear point sets (one extent near
        // zero) and the shell search below would expand practically forever
        let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0f64, f64::max);
        let k = (positions.len() as f64).cbrt().ceil().max(1.0);
        let cell = (extent / k).max(1e-9);
        let max_shell = (extent / cell).ceil() as i64 + 2;
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            let key = (
                ((p[0] - lo[0]) / cell).floor() as i64,
                ((p[1] - lo[1]) / cell).floor() as i64,
                ((p[2] - lo[2]) / cell).floor() as i64,
            );
            cells.entry(key).or_default().push(i as u32);
        }
        Self { positions, cells, origin: lo, cell, max_shell }
    }

    /// The m nearest points to `q` (ties by ascending index), written to `out`.
    fn nearest(&self, q: &[f64; 3], m: usize, out: &mut Vec<u32>) {
        let home = (
            ((q[0] - self.origin[0]) / self.cell).floor() as i64,
            ((q[1] - self.origin[1]) / self.cell).floor() as i64,
            ((q[2] - self.origin[2]) / self.cell).floor() as i64,
        );
        let mut candidates: Vec<(f64, u32)> = Vec::new();
        let mut shell = 0i64;
        loop {
            self.collect_shell(home, shell, q, &mut candidates);
            if candidates.len() >= m {
                candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let bound = shell as f64 * self.cell;
                // every uncollected point is at least `bound` away; a strict
                // inequality keeps boundary ties eligible for index order.
                // past max_shell every occupied cell has been visited
                if candidates[m - 1].0.sqrt() < bound || shell > self.max_shell {
                    break;
                }
            }
            shell += 1;
        }
        out.clear();
        out.extend(candidates[..m].iter().map(|&(_, i)| i));
    }

    fn collect_shell(
        &self,
        home: (i64, i64, i64),
        shell: i64,
        q: &[f64; 3],
        candidates: &mut Vec<(f64, u32)>,
    ) {
        for dz in -shell..=shell {
            for dy in -shell..=shell {
                for dx in -shell..=shell {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                        continue;
                    }
                    let key = (home.0 + dx, home.1 + dy, home.2 + dz);
                    let Some(bucket) = self.cells.get(&key) else { continue };
                    for &i in bucket {
                        let p = &self.positions[i as usize];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                        candidates.push((d2, i));
                    }
                }
            }
        }
    }
}

/// Mark correlation: the kernel-weighted mean of radius products over point
/// pairs at distance about r, normalized by the squared mean radius.
/// Epanechnikov kernel; lags with no pair in reach report NaN.
pub fn mark_correlation(
    marked: &[MarkedPoint],
    r_grid: &[f64],
    bandwidth: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = marked.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("mark correlation needs >= 2 points, got {n}")));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParam(format!("bandwidth {bandwidth} must be finite and > 0")));
    }
    if r_grid.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidParam("r grid must be finite".into()));
    }
    let mut order: Vec<usize> = (0..r_grid.len()).collect();
    order.sort_unstable_by(|&i, &j| r_grid[i].total_cmp(&r_grid[j]));
    let sorted_r: Vec<f64> = order.iter().map(|&i| r_grid[i]).collect();
    let reach = sorted_r.last().copied().unwrap_or(0.0) + bandwidth;

    let mean = marked.iter().map(|p| p.r).sum::<f64>() / n as f64;
    let mut weight = vec![0.0f64; r_grid.len()];
    let mut product = vec![0.0f64; r_grid.len()];
    for i in 0..n {
        let pi = &marked[i];
        for j in i + 1..n {
            let pj = &marked[j];
            let d2 = (pi.x - pj.x).powi(2) + (pi.y - pj.y).powi(2) + (pi.z - pj.z).powi(2);
            if d2 > reach * reach {
                continue;
            }
            let d = d2.sqrt();
            let lo = sorted_r.partition_point(|&r| r < d - bandwidth);
            for k in lo..sorted_r.len() {
                let u = sorted_r[k] - d;
                if u > bandwidth {
                    break;
                }
                let kern = 0.75 * (1.0 - (u / bandwidth) * (u / bandwidth)) / bandwidth;
                weight[order[k]] += kern;
                product[order[k]] += kern * pi.r * pj.r;
            }
        }
    }
    Ok(r_grid
        .iter()
        .enumerate()
        .map(|(idx, &r)| {
            let kappa = if weight[idx] > 0.0 {
                product[idx] / weight[idx] / (mean * mean)
            } else {
                f64::NAN
            };
            (r, kappa)
        })
        .collect())
}
