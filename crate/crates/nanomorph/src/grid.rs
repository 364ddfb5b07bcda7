//! Binary voxel grids: rasterization, exact Euclidean distance transforms,
//! morphological dilation/erosion, boundary shells, and percolation fractions.
//!
//! Foreground (value 1) is the ZnO phase, background (value 0) the polymer
//! phase. The linear index of voxel (x, y, z) is `x + nx*(y + ny*z)`; voxel
//! centers sit at integer coordinates in continuous voxel units.

use crate::error::{Error, Result};

/// Dense binary phase field with a physical voxel edge length in nm.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    voxel_size: f64,
    data: Vec<u8>,
}

/// Sphere in continuous voxel coordinates. Macro-scale spheres satisfy
/// r >= sqrt(3); micro-scale correction spheres may be smaller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub r: f64,
}

impl VoxelGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, voxel_size: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidParam("grid dimensions must be >= 1".into()));
        }
        if !(voxel_size > 0.0) {
            return Err(Error::InvalidParam("voxel size must be > 0".into()));
        }
        Ok(Self { nx, ny, nz, voxel_size, data: vec![0; nx * ny * nz] })
    }

    pub fn from_data(nx: usize, ny: usize, nz: usize, voxel_size: f64, data: Vec<u8>) -> Result<Self> {
        let mut g = Self::new(nx, ny, nz, voxel_size)?;
        if data.len() != g.data.len() {
            return Err(Error::InvalidParam(format!(
                "payload length {} does not match {}x{}x{}",
                data.len(),
                nx,
                ny,
                nz
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParam("voxel values must be 0 or 1".into()));
        }
        g.data = data;
        Ok(g)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // dimensions are >= 1 by construction
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        (x, y, z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.index(x, y, z)] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.data[i] = v as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Foreground (ZnO) volume fraction.
    pub fn volume_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.data.len() as f64
    }

    pub fn complement(&self) -> VoxelGrid {
        let data = self.data.iter().map(|&v| 1 - v).collect();
        VoxelGrid { data, ..*self }
    }

    pub fn union(&self, other: &VoxelGrid) -> Result<VoxelGrid> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a | b).collect();
        Ok(VoxelGrid { data, ..*self })
    }

    pub fn intersection(&self, other: &VoxelGrid) -> Result<VoxelGrid> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & b).collect();
        Ok(VoxelGrid { data, ..*self })
    }

    /// Voxels of `self` that are not foreground in `other`.
    pub fn difference(&self, other: &VoxelGrid) -> Result<VoxelGrid> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & (1 - b)).collect();
        Ok(VoxelGrid { data, ..*self })
    }

    pub fn check_same_dims(&self, other: &VoxelGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidParam(format!(
                "grid dimensions differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Per-voxel exact Euclidean distance to the nearest foreground voxel center.
/// Distances are carried as exact integer squared values; an all-background
/// grid yields an infinite sentinel everywhere.
#[derive(Clone, Debug)]
pub struct DistanceField {
    nx: usize,
    ny: usize,
    nz: usize,
    dist2: Vec<i64>,
}

const INF2: i64 = i64::MAX / 4;

impl DistanceField {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn len(&self) -> usize {
        self.dist2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist2.is_empty()
    }

    /// Exact squared distance, or None when no foreground exists.
    #[inline]
    pub fn squared(&self, idx: usize) -> Option<i64> {
        let d = self.dist2[idx];
        (d < INF2).then_some(d)
    }

    /// Euclidean distance in voxel units (+inf when no foreground exists).
    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        let d = self.dist2[idx];
        if d >= INF2 { f64::INFINITY } else { (d as f64).sqrt() }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.value(x + self.nx * (y + self.ny * z))
    }
}

/// Rasterize a union of spheres: a voxel is foreground iff its center lies
/// within distance r (inclusive) of some sphere center. Centers may lie
/// outside the window; only the in-window part is kept.
pub fn rasterize_spheres(
    spheres: &[Sphere],
    dims: (usize, usize, usize),
    voxel_size: f64,
) -> Result<VoxelGrid> {
    let (nx, ny, nz) = dims;
    let mut grid = VoxelGrid::new(nx, ny, nz, voxel_size)?;
    for s in spheres {
        if !(s.r >= 0.0) {
            return Err(Error::InvalidParam(format!("sphere radius {} is negative", s.r)));
        }
        let x0 = clamp_floor(s.cx - s.r, nx);
        let x1 = clamp_ceil(s.cx + s.r, nx);
        let y0 = clamp_floor(s.cy - s.r, ny);
        let y1 = clamp_ceil(s.cy + s.r, ny);
        let z0 = clamp_floor(s.cz - s.r, nz);
        let z1 = clamp_ceil(s.cz + s.r, nz);
        for z in z0..=z1 {
            let dz = z as f64 - s.cz;
            for y in y0..=y1 {
                let dy = y as f64 - s.cy;
                let base = grid.index(0, y, z);
                for x in x0..=x1 {
                    let dx = x as f64 - s.cx;
                    if (dx * dx + dy * dy + dz * dz).sqrt() <= s.r {
                        grid.data[base + x] = 1;
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn clamp_floor(v: f64, n: usize) -> usize {
    (v.floor().max(0.0) as usize).min(n - 1)
}

fn clamp_ceil(v: f64, n: usize) -> usize {
    (v.ceil().max(0.0) as usize).min(n - 1)
}

/// Exact Euclidean distance transform (squared-distance separable scan with
/// lower envelopes of parabolas along y and z).
pub fn distance_transform(grid: &VoxelGrid) -> DistanceField {
    let (nx, ny, nz) = grid.dims();
    let mut dist2 = vec![0i64; grid.len()];

    // 1D pass along x: exact in-row distance to the nearest foreground voxel.
    let far = (nx + 2) as i64;
    for row in 0..ny * nz {
        let base = row * nx;
        let line = &grid.data[base..base + nx];
        let out = &mut dist2[base..base + nx];
        let mut d = far;
        for x in 0..nx {
            d = if line[x] != 0 { 0 } else { d + 1 };
            out[x] = d;
        }
        d = far;
        for x in (0..nx).rev() {
            d = if line[x] != 0 { 0 } else { (d + 1).min(out[x]) };
            out[x] = if d >= far { INF2 } else { d * d };
        }
    }

    let mut f = vec![0i64; ny.max(nz)];
    let mut out = vec![0i64; ny.max(nz)];
    let mut sites = vec![0usize; ny.max(nz)];
    let mut bounds = vec![0f64; ny.max(nz) + 1];

    // parabola pass along y
    for z in 0..nz {
        for x in 0..nx {
            let base = x + nx * ny * z;
            for y in 0..ny {
                f[y] = dist2[base + nx * y];
            }
            envelope_pass(&f[..ny], &mut out[..ny], &mut sites, &mut bounds);
            for y in 0..ny {
                dist2[base + nx * y] = out[y];
            }
        }
    }

    // parabola pass along z
    let plane = nx * ny;
    for y in 0..ny {
        for x in 0..nx {
            let base = x + nx * y;
            for z in 0..nz {
                f[z] = dist2[base + plane * z];
            }
            envelope_pass(&f[..nz], &mut out[..nz], &mut sites, &mut bounds);
            for z in 0..nz {
                dist2[base + plane * z] = out[z];
            }
        }
    }

    DistanceField { nx, ny, nz, dist2 }
}

/// One lower-envelope pass: out[q] = min over p of (q-p)^2 + f[p]. Entries at
/// the infinite sentinel do not contribute parabolas.
fn envelope_pass(f: &[i64], out: &mut [i64], sites: &mut [usize], bounds: &mut [f64]) {
    let n = f.len();
    let mut k = usize::MAX; // envelope empty
    for q in 0..n {
        if f[q] >= INF2 {
            continue;
        }
        let fq = f[q] as f64 + (q * q) as f64;
        loop {
            if k == usize::MAX {
                k = 0;
                sites[0] = q;
                bounds[0] = f64::NEG_INFINITY;
                bounds[1] = f64::INFINITY;
                break;
            }
            let p = sites[k];
            let fp = f[p] as f64 + (p * p) as f64;
            let s = (fq - fp) / (2.0 * (q - p) as f64);
            if s <= bounds[k] {
                k = k.checked_sub(1).unwrap_or(usize::MAX);
            } else {
                k += 1;
                sites[k] = q;
                bounds[k] = s;
                bounds[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k == usize::MAX {
        out.fill(INF2);
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        while bounds[j + 1] < q as f64 {
            j += 1;
        }
        let p = sites[j];
        let d = q as i64 - p as i64;
        out[q] = d * d + f[p];
    }
}

/// Minkowski dilation with a digital ball: voxel v becomes foreground iff some
/// foreground voxel lies within distance `radius` of v.
pub fn dilate(grid: &VoxelGrid, radius: f64) -> Result<VoxelGrid> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidParam("dilation radius must be >= 0".into()));
    }
    let df = distance_transform(grid);
    let data = df
        .dist2
        .iter()
        .map(|&d2| (d2 < INF2 && (d2 as f64).sqrt() <= radius) as u8)
        .collect();
    Ok(VoxelGrid { data, ..*grid })
}

/// Minkowski erosion, dual to dilation with the window exterior treated as
/// background: a foreground voxel survives iff no background voxel (inside or
/// outside the window) lies within distance `radius`. Matches the set erosion
/// G ⊖ b(o, r) of the foreground as a subset of continuous space.
pub fn erode(grid: &VoxelGrid, radius: f64) -> Result<VoxelGrid> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidParam("erosion radius must be >= 0".into()));
    }
    let (nx, ny, nz) = grid.dims();
    let df = distance_transform(&grid.complement());
    let mut out = grid.clone();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = out.index(x, y, z);
                if out.data[idx] == 0 {
                    continue;
                }
                let face = (x + 1).min(nx - x).min(y + 1).min(ny - y).min(z + 1).min(nz - z);
                let keep = (face as f64) > radius && df.value(idx) > radius;
                out.data[idx] = keep as u8;
            }
        }
    }
    Ok(out)
}

/// Shell i of the foreground: shell 1 holds foreground voxels at distance <= 1
/// from the in-window background, shell i (i >= 2) those at distance in
/// (i-1, i]. Returns sorted linear indices.
pub fn shells(grid: &VoxelGrid, i: usize) -> Result<Vec<usize>> {
    if i == 0 {
        return Err(Error::InvalidParam("shell index starts at 1".into()));
    }
    let df = distance_transform(&grid.complement());
    let lo = ((i - 1) * (i - 1)) as i64;
    let hi = (i * i) as i64;
    let mut out = Vec::new();
    for (idx, &v) in grid.data.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let d2 = df.dist2[idx];
        if d2 > lo && d2 <= hi {
            out.push(idx);
        }
    }
    Ok(out)
}

/// 26-connected components of the foreground, each as a list of linear voxel
/// indices. Components are ordered by their smallest index; indices within a
/// component are in discovery order.
pub fn connected_components_26(grid: &VoxelGrid) -> Vec<Vec<usize>> {
    let (nx, ny, nz) = grid.dims();
    let mut visited = vec![false; grid.len()];
    let mut stack: Vec<usize> = Vec::new();
    let mut components = Vec::new();
    for start in 0..grid.len() {
        if grid.data[start] == 0 || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut component = Vec::new();
        while let Some(idx) = stack.pop() {
            component.push(idx);
            let (x, y, z) = grid.coords(idx);
            for dz in -1i64..=1 {
                let zz = z as i64 + dz;
                if zz < 0 || zz >= nz as i64 {
                    continue;
                }
                for dy in -1i64..=1 {
                    let yy = y as i64 + dy;
                    if yy < 0 || yy >= ny as i64 {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let xx = x as i64 + dx;
                        if xx < 0 || xx >= nx as i64 {
                            continue;
                        }
                        let n = xx as usize + nx * (yy as usize + ny * zz as usize);
                        if grid.data[n] != 0 && !visited[n] {
                            visited[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        components.push(component);
    }
    components
}

/// Fraction of foreground voxels in 26-connected components that touch both
/// the z = 0 and z = nz-1 planes. Returns 0 when no foreground exists.
pub fn connected_fraction(grid: &VoxelGrid) -> Result<f64> {
    let (nx, ny, nz) = grid.dims();
    if nz < 2 {
        return Err(Error::InvalidParam("connectivity needs nz >= 2".into()));
    }
    let total = grid.foreground_count();
    if total == 0 {
        return Ok(0.0);
    }
    let mut visited = vec![false; grid.len()];
    let mut stack: Vec<usize> = Vec::new();
    let mut component: Vec<usize> = Vec::new();
    let mut spanning = 0usize;
    for start in 0..grid.len() {
        if grid.data[start] == 0 || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        component.clear();
        let (mut bottom, mut top) = (false, false);
        while let Some(idx) = stack.pop() {
            component.push(idx);
            let (x, y, z) = grid.coords(idx);
            bottom |= z == 0;
            top |= z == nz - 1;
            for dz in -1i64..=1 {
                let zz = z as i64 + dz;
                if zz < 0 || zz >= nz as i64 {
                    continue;
                }
                for dy in -1i64..=1 {
                    let yy = y as i64 + dy;
                    if yy < 0 || yy >= ny as i64 {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let xx = x as i64 + dx;
                        if xx < 0 || xx >= nx as i64 {
                            continue;
                        }
                        let n = xx as usize + nx * (yy as usize + ny * zz as usize);
                        if grid.data[n] != 0 && !visited[n] {
                            visited[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        if bottom && top {
            spanning += component.len();
        }
    }
    Ok(spanning as f64 / total as f64)
}

/// Fraction of foreground voxels on at least one z-monotone bottom-to-top
/// path. Within a layer steps use the 8-neighborhood; between layers the 9
/// voxels directly below/above are adjacent. Computed as |D ∩ U| / |fg| where
/// D is reached from z = 0 with non-decreasing z and U from z = nz-1 with
/// non-increasing z.
pub fn monotone_connected_fraction(grid: &VoxelGrid) -> Result<f64> {
    let (_, _, nz) = grid.dims();
    if nz < 2 {
        return Err(Error::InvalidParam("connectivity needs nz >= 2".into()));
    }
    let total = grid.foreground_count();
    if total == 0 {
        return Ok(0.0);
    }
    let down = monotone_reach(grid, true);
    let up = monotone_reach(grid, false);
    let both = down.iter().zip(&up).filter(|(&d, &u)| d && u).count();
    Ok(both as f64 / total as f64)
}

/// Reachable set from the bottom plane with dz in {0, +1} (or from the top
/// plane with dz in {0, -1} when `upward` is false).
fn monotone_reach(grid: &VoxelGrid, upward: bool) -> Vec<bool> {
    let (nx, ny, nz) = grid.dims();
    let mut reached = vec![false; grid.len()];
    let mut stack: Vec<usize> = Vec::new();
    let z_start = if upward { 0 } else { nz - 1 };
    let dz_step: i64 = if upward { 1 } else { -1 };
    for y in 0..ny {
        for x in 0..nx {
            let idx = grid.index(x, y, z_start);
            if grid.data[idx] != 0 {
                reached[idx] = true;
                stack.push(idx);
            }
        }
    }
    while let Some(idx) = stack.pop() {
        let (x, y, z) = grid.coords(idx);
        for &dz in &[0, dz_step] {
            let zz = z as i64 + dz;
            if zz < 0 || zz >= nz as i64 {
                continue;
            }
            for dy in -1i64..=1 {
                let yy = y as i64 + dy;
                if yy < 0 || yy >= ny as i64 {
                    continue;
                }
                for dx in -1i64..=1 {
                    if dz == 0 && dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = x as i64 + dx;
                    if xx < 0 || xx >= nx as i64 {
                        continue;
                    }
                    let n = xx as usize + nx * (yy as usize + ny * zz as usize);
                    if grid.data[n] != 0 && !reached[n] {
                        reached[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
    }
    reached
}
