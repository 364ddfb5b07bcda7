//! Structural statistics: empirical distribution functions, point-pattern
//! intensity, planar pair correlation, chord lengths, spherical contact
//! distances, and the Kolmogorov distance used by the fitting objective.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{distance_transform, connected_fraction, VoxelGrid};
use crate::pointproc::{PointStack, Region2};

/// Right-continuous empirical distribution function: F(t) = values[i] for
/// t in [breakpoints[i], breakpoints[i+1]), 0 below the first breakpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Edf {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl Edf {
    /// Build from strictly increasing breakpoints and non-decreasing
    /// cumulative values in [0, 1].
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() {
            return Err(Error::InvalidParam("breakpoint and value lengths differ".into()));
        }
        let sorted = breakpoints.windows(2).all(|w| w[0] < w[1]);
        if !sorted || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParam("breakpoints must be finite and strictly increasing".into()));
        }
        let monotone = values.windows(2).all(|w| w[0] <= w[1]);
        let in_range = values.iter().all(|v| (0.0..=1.0).contains(v));
        if !monotone || !in_range {
            return Err(Error::InvalidParam("values must be non-decreasing within [0, 1]".into()));
        }
        Ok(Self { breakpoints, values })
    }

    /// EDF of a sample: a jump of 1/n at every sorted sample value.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParam("samples must be finite".into()));
        }
        let n = samples.len();
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut seen = 0usize;
        let mut i = 0usize;
        while i < n {
            let t = sorted[i];
            while i < n && sorted[i] == t {
                i += 1;
                seen += 1;
            }
            breakpoints.push(t);
            values.push(seen as f64 / n as f64);
        }
        Ok(Self { breakpoints, values })
    }

    /// No interior-complete observations; evaluates to 0 everywhere.
    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        if i == 0 { 0.0 } else { self.values[i - 1] }
    }

    pub fn left_limit(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b < t);
        if i == 0 { 0.0 } else { self.values[i - 1] }
    }

    /// Pointwise mean of several EDFs on the union of their breakpoints.
    /// The mean of right-continuous steps is again a right-continuous step
    /// function, so this is exact.
    pub fn pointwise_mean(edfs: &[Edf]) -> Edf {
        let mut grid: Vec<f64> = edfs.iter().flat_map(|e| e.breakpoints.iter().copied()).collect();
        grid.sort_unstable_by(f64::total_cmp);
        grid.dedup();
        if grid.is_empty() {
            return Edf { breakpoints: vec![], values: vec![] };
        }
        let n = edfs.len() as f64;
        let values = grid
            .iter()
            .map(|&t| edfs.iter().map(|e| e.evaluate(t)).sum::<f64>() / n)
            .collect();
        Edf { breakpoints: grid, values }
    }

    /// (t, F(t)) rows for serialization.
    pub fn rows(&self) -> Vec<(f64, f64)> {
        self.breakpoints.iter().copied().zip(self.values.iter().copied()).collect()
    }
}

/// Kolmogorov (sup) distance between two step functions. The supremum over
/// all t is attained at a breakpoint of either function, approached from the
/// left or the right, so checking both one-sided limits on the union of
/// breakpoints is exact.
pub fn kolmogorov_distance(f: &Edf, g: &Edf) -> f64 {
    let mut d = 0.0f64;
    for t in f.breakpoints.iter().chain(&g.breakpoints) {
        d = d.max((f.evaluate(*t) - g.evaluate(*t)).abs());
        d = d.max((f.left_limit(*t) - g.left_limit(*t)).abs());
    }
    d
}

/// Number of midpoints per voxel^3 of window.
pub fn intensity_3d(stack: &PointStack) -> Result<f64> {
    let volume = stack.window_volume();
    if !(volume > 0.0) {
        return Err(Error::InvalidParam("window volume must be > 0".into()));
    }
    Ok(stack.points.len() as f64 / volume)
}

/// Planar pair correlation with Epanechnikov kernel and translation edge
/// correction. The default bandwidth is 0.15/sqrt(intensity). Values at
/// lags no point pair inside the window could attain (r <= 0 or beyond the
/// window diagonal plus bandwidth) are reported as NaN.
pub fn pair_correlation_2d(
    points: &[(f64, f64)],
    window: &Region2,
    r_grid: &[f64],
    bandwidth: Option<f64>,
) -> Result<Vec<(f64, f64)>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("pair correlation needs >= 2 points, got {n}")));
    }
    let area = window.area();
    let lambda = n as f64 / area;
    let h = bandwidth.unwrap_or(0.15 / lambda.sqrt());
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParam(format!("bandwidth {h} must be finite and > 0")));
    }
    if r_grid.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidParam("r grid must be finite".into()));
    }

    // sorted view of the lag grid for range lookups
    let mut order: Vec<usize> = (0..r_grid.len()).collect();
    order.sort_unstable_by(|&i, &j| r_grid[i].total_cmp(&r_grid[j]));
    let sorted_r: Vec<f64> = order.iter().map(|&i| r_grid[i]).collect();

    let diag = window.width().hypot(window.height());
    let r_reach = sorted_r.last().copied().unwrap_or(0.0) + h;
    let lambda2 = (n * (n - 1)) as f64 / (area * area);
    let mut sums = vec![0.0f64; r_grid.len()];
    for i in 0..n {
        let (xi, yi) = points[i];
        for j in i + 1..n {
            let (xj, yj) = points[j];
            let (dx, dy) = ((xi - xj).abs(), (yi - yj).abs());
            let d = dx.hypot(dy);
            if d > r_reach || d <= 0.0 {
                continue;
            }
            let overlap = (window.width() - dx) * (window.height() - dy);
            if overlap <= 0.0 {
                continue;
            }
            // both orderings of the pair, divided by the ring circumference
            let w = 2.0 / (2.0 * PI * d * overlap * lambda2);
            let lo = sorted_r.partition_point(|&r| r < d - h);
            for k in lo..sorted_r.len() {
                let u = sorted_r[k] - d;
                if u > h {
                    break;
                }
                let kernel = 0.75 * (1.0 - (u / h) * (u / h)) / h;
                sums[order[k]] += kernel * w;
            }
        }
    }
    Ok(r_grid
        .iter()
        .zip(&sums)
        .map(|(&r, &s)| {
            let admissible = r > 0.0 && r - h < diag;
            (r, if admissible { s } else { f64::NAN })
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// EDF of lengths of maximal foreground runs along one axis, in voxels.
/// Runs touching the window boundary are censored; with no interior-complete
/// run the result is the empty EDF.
pub fn chord_length_edf(grid: &VoxelGrid, axis: Axis) -> Result<Edf> {
    let (nx, ny, nz) = grid.dims();
    let (len, stride, lines): (usize, usize, Vec<usize>) = match axis {
        Axis::X => {
            let starts = (0..ny * nz).map(|row| row * nx).collect();
            (nx, 1, starts)
        }
        Axis::Y => {
            let mut starts = Vec::with_capacity(nx * nz);
            for z in 0..nz {
                for x in 0..nx {
                    starts.push(x + nx * ny * z);
                }
            }
            (ny, nx, starts)
        }
        Axis::Z => {
            let starts = (0..nx * ny).collect();
            (nz, nx * ny, starts)
        }
    };
    let mut chords = Vec::new();
    let data = grid.data();
    for start in lines {
        let mut run = 0usize;
        for k in 0..len {
            if data[start + k * stride] != 0 {
                run += 1;
            } else {
                // a run ending here started at k-run; censored iff it began at 0
                if run > 0 && run < k {
                    chords.push(run as f64);
                }
                run = 0;
            }
        }
        // a run still open at the end touches the boundary: censored
    }
    Edf::from_samples(&chords)
}

/// EDF over all polymer voxels of their Euclidean distance to the ZnO phase.
pub fn spherical_contact_edf(grid: &VoxelGrid) -> Result<Edf> {
    let fg = grid.foreground_count();
    if fg == 0 || fg == grid.len() {
        return Err(Error::Degenerate("spherical contact needs both phases present".into()));
    }
    let df = distance_transform(grid);
    let samples: Vec<f64> = (0..grid.len())
        .filter(|&i| grid.data()[i] == 0)
        .map(|i| df.value(i))
        .collect();
    Edf::from_samples(&samples)
}

/// The structural summaries entering the fitting objective.
#[derive(Clone, Debug)]
pub struct SummaryTargets {
    pub f_scd: Edf,
    pub f_x: Edf,
    pub f_y: Edf,
    pub f_z: Edf,
    /// ZnO volume fraction
    pub v: f64,
    /// fraction of ZnO in components connected to both electrodes
    pub v_conn: f64,
}

pub fn summarize_grid(grid: &VoxelGrid) -> Result<SummaryTargets> {
    Ok(SummaryTargets {
        f_scd: spherical_contact_edf(grid)?,
        f_x: chord_length_edf(grid, Axis::X)?,
        f_y: chord_length_edf(grid, Axis::Y)?,
        f_z: chord_length_edf(grid, Axis::Z)?,
        v: grid.volume_fraction(),
        v_conn: connected_fraction(grid)?,
    })
}
