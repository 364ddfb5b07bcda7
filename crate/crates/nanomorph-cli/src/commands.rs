//! Command implementations: each takes a parsed config and/or input paths,
//! runs the corresponding pipeline, writes its outputs into a directory, and
//! returns the numbers the caller wants to print. Every command also writes
//! `config_echo.cfg`, the canonical form of the configuration it ran under.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use nanomorph::error::{Error, Result};
use nanomorph::fit::{minimum_contrast_search, FitResult};
use nanomorph::grid::{
    connected_fraction, monotone_connected_fraction, rasterize_spheres, Sphere, VoxelGrid,
};
use nanomorph::io::{
    load_mvg1, load_spheres_csv, save_mef1, save_mvg1, write_curve_csv, write_objective_csv,
    write_spheres_csv,
};
use nanomorph::marks::{assign_radii, mark_correlation, MarkedPoint};
use nanomorph::micro::apply_corrections;
use nanomorph::physics::{quenching_efficiency, solve_exciton_field};
use nanomorph::pointproc::{simulate_stack, Region2};
use nanomorph::stats::{
    chord_length_edf, pair_correlation_2d, spherical_contact_edf, summarize_grid, Axis,
};
use nanomorph::MasterSeed;

use crate::config::{echo, RunConfig};

/// Bundled film presets, shipped as data files.
pub const PRESETS: [(&str, &str); 3] = [
    ("57nm.cfg", include_str!("../presets/57nm.cfg")),
    ("100nm.cfg", include_str!("../presets/100nm.cfg")),
    ("167nm.cfg", include_str!("../presets/167nm.cfg")),
];

pub struct SimOutput {
    pub spheres: Vec<Sphere>,
    pub macro_grid: VoxelGrid,
    pub grid: VoxelGrid,
}

/// The simulation pipeline: stack the slice processes, mark the points with
/// radii, rasterize the spheres, then apply the micro corrections when the
/// config has a micro section. Each stage draws from its own seed stream, so
/// toggling a stage never shifts the randomness of the others.
pub fn run_simulation(cfg: &RunConfig) -> Result<SimOutput> {
    let seed = MasterSeed(cfg.seed);
    let w = &cfg.window;

    let mut rng = seed.stream("sim.stack", &[]);
    let stack = simulate_stack(
        &cfg.macro_model.matern()?,
        &cfg.macro_model.chain()?,
        (w.nx as f64, w.ny as f64, w.nz),
        &mut rng,
    )?;

    let mut rng = seed.stream("sim.marks", &[]);
    let marked = assign_radii(&stack, &cfg.macro_model.gamma()?, &mut rng)?;
    let spheres: Vec<Sphere> =
        marked.iter().map(|q| Sphere { cx: q.x, cy: q.y, cz: q.z, r: q.r }).collect();

    let macro_grid = rasterize_spheres(&spheres, w.dims(), w.voxel_size_nm)?;
    let grid = match &cfg.micro {
        None => macro_grid.clone(),
        Some(mi) => {
            let mut rng = seed.stream("sim.micro", &[]);
            apply_corrections(&macro_grid, &mi.outer()?, &mi.boundary(), &mi.interior()?, &mut rng)?
                .grid
        }
    };
    Ok(SimOutput { spheres, macro_grid, grid })
}

/// Run the simulation and store final grid, macro grid, and the marked
/// sphere list.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimOutput> {
    let sim = run_simulation(cfg)?;
    write_echo(cfg, out)?;
    save_mvg1(out.join("grid.mvg1"), &sim.grid)?;
    save_mvg1(out.join("macro_grid.mvg1"), &sim.macro_grid)?;
    let mut w = BufWriter::new(File::create(out.join("spheres.csv"))?);
    write_spheres_csv(&mut w, &sim.spheres)?;
    w.flush()?;
    Ok(sim)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Scd,
    Chords,
    Volume,
    Connectivity,
    Pair,
    MarkCorr,
}

impl StatKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scd" => Ok(Self::Scd),
            "chords" => Ok(Self::Chords),
            "volume" => Ok(Self::Volume),
            "connectivity" => Ok(Self::Connectivity),
            "pair" => Ok(Self::Pair),
            "markcorr" => Ok(Self::MarkCorr),
            other => Err(Error::InvalidParam(format!(
                "unknown statistic `{other}` (expected scd, chords, volume, connectivity, pair, markcorr)"
            ))),
        }
    }

    fn needs_spheres(self) -> bool {
        matches!(self, Self::Pair | Self::MarkCorr)
    }
}

pub enum EstimateInput {
    Grid(PathBuf),
    Spheres(PathBuf),
}

pub struct EstimateRequest {
    pub input: EstimateInput,
    /// Empty means every statistic the input supports.
    pub stats: Vec<StatKind>,
    /// Observation window in voxels, needed only for the pair correlation.
    pub window_xy: Option<(f64, f64)>,
}

/// Estimate the requested statistics and write one CSV per curve plus a
/// `fractions.csv` for the scalar ones. Returns the written paths.
pub fn cmd_estimate(req: &EstimateRequest, out: &Path) -> Result<Vec<PathBuf>> {
    let stats: Vec<StatKind> = if req.stats.is_empty() {
        match req.input {
            EstimateInput::Grid(_) => {
                vec![StatKind::Scd, StatKind::Chords, StatKind::Volume, StatKind::Connectivity]
            }
            EstimateInput::Spheres(_) => match req.window_xy {
                Some(_) => vec![StatKind::Pair, StatKind::MarkCorr],
                None => vec![StatKind::MarkCorr],
            },
        }
    } else {
        req.stats.clone()
    };

    let mut written = Vec::new();
    match &req.input {
        EstimateInput::Grid(path) => {
            if let Some(s) = stats.iter().find(|s| s.needs_spheres()) {
                return Err(Error::InvalidParam(format!(
                    "{s:?} requires sphere input (--spheres), not a grid"
                )));
            }
            let grid = load_mvg1(path)?;
            let mut fractions: Vec<(&str, f64)> = Vec::new();
            for stat in &stats {
                match stat {
                    StatKind::Scd => {
                        let edf = spherical_contact_edf(&grid)?;
                        written.push(write_curve(out, "scd.csv", "r", "F", &edf.rows())?);
                    }
                    StatKind::Chords => {
                        for (axis, name) in [
                            (Axis::X, "chord_x.csv"),
                            (Axis::Y, "chord_y.csv"),
                            (Axis::Z, "chord_z.csv"),
                        ] {
                            let edf = chord_length_edf(&grid, axis)?;
                            written.push(write_curve(out, name, "len", "F", &edf.rows())?);
                        }
                    }
                    StatKind::Volume => {
                        fractions.push(("volume_fraction", grid.volume_fraction()));
                    }
                    StatKind::Connectivity => {
                        fractions.push(("connected_fraction", connected_fraction(&grid)?));
                        fractions.push((
                            "monotone_connected_fraction",
                            monotone_connected_fraction(&grid)?,
                        ));
                    }
                    _ => unreachable!("sphere statistics rejected above"),
                }
            }
            if !fractions.is_empty() {
                let path = out.join("fractions.csv");
                let mut w = BufWriter::new(File::create(&path)?);
                writeln!(w, "statistic,value")?;
                for (name, value) in fractions {
                    writeln!(w, "{name},{value}")?;
                }
                w.flush()?;
                written.push(path);
            }
        }
        EstimateInput::Spheres(path) => {
            if let Some(s) = stats.iter().find(|s| !s.needs_spheres()) {
                return Err(Error::InvalidParam(format!(
                    "{s:?} requires a rasterized grid (--grid), not spheres"
                )));
            }
            let spheres = load_spheres_csv(path)?;
            for stat in &stats {
                match stat {
                    StatKind::Pair => {
                        let (wx, wy) = req.window_xy.ok_or_else(|| {
                            Error::InvalidParam(
                                "pair correlation needs the observation window; pass --config"
                                    .into(),
                            )
                        })?;
                        let rows = slice_averaged_pair_correlation(&spheres, wx, wy)?;
                        written.push(write_curve(out, "pair_correlation.csv", "r", "g", &rows)?);
                    }
                    StatKind::MarkCorr => {
                        let marked: Vec<MarkedPoint> = spheres
                            .iter()
                            .map(|s| MarkedPoint { x: s.cx, y: s.cy, z: s.cz, r: s.r })
                            .collect();
                        let r_grid: Vec<f64> = (1..=30).map(|i| i as f64).collect();
                        let rows: Vec<(f64, f64)> = mark_correlation(&marked, &r_grid, 1.0)?
                            .into_iter()
                            .filter(|(_, k)| k.is_finite())
                            .collect();
                        written.push(write_curve(out, "mark_correlation.csv", "r", "kappa", &rows)?);
                    }
                    _ => unreachable!("grid statistics rejected above"),
                }
            }
        }
    }
    Ok(written)
}

/// Pair correlation of the sphere midpoints, estimated per z-slice in its 2D
/// window and averaged across slices holding at least two points.
fn slice_averaged_pair_correlation(
    spheres: &[Sphere],
    wx: f64,
    wy: f64,
) -> Result<Vec<(f64, f64)>> {
    let window = Region2::new(0.0, 0.0, wx, wy)?;
    let r_max = (0.5 * wx.min(wy)).min(30.0);
    let r_grid: Vec<f64> =
        (1..).map(|i| i as f64).take_while(|&r| r <= r_max).collect();
    if r_grid.is_empty() {
        return Err(Error::Degenerate("window too small for any pair lag".into()));
    }

    let mut slices: std::collections::BTreeMap<i64, Vec<(f64, f64)>> = Default::default();
    for s in spheres {
        slices.entry(s.cz.round() as i64).or_default().push((s.cx, s.cy));
    }
    let mut sums = vec![0.0f64; r_grid.len()];
    let mut counts = vec![0usize; r_grid.len()];
    let mut used = 0;
    for pts in slices.values().filter(|p| p.len() >= 2) {
        let curve = pair_correlation_2d(pts, &window, &r_grid, None)?;
        used += 1;
        for (i, (_, g)) in curve.into_iter().enumerate() {
            if g.is_finite() {
                sums[i] += g;
                counts[i] += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "no slice holds two or more midpoints; cannot estimate the pair correlation".into(),
        ));
    }
    Ok(r_grid
        .iter()
        .zip(sums.iter().zip(&counts))
        .filter(|&(_, (_, &c))| c > 0)
        .map(|(&r, (&s, &c))| (r, s / c as f64))
        .collect())
}

pub struct FitFiles {
    pub result: FitResult,
    pub files: Vec<PathBuf>,
}

/// Summarize the target grid, search the config's lattice for the
/// minimum-contrast parameters, and store the per-vertex objective table and
/// the best vertex with its derived intensities.
pub fn cmd_fit(cfg: &RunConfig, target: &Path, out: &Path) -> Result<FitFiles> {
    let grid = load_mvg1(target)?;
    let targets = summarize_grid(&grid)?;
    let lambda_hat = cfg.fit.lambda_hat.ok_or_else(|| {
        Error::InvalidParam("fit.lambda_hat (target midpoint intensity) is required to fit".into())
    })?;
    let lattice = cfg.fit.lattice(&cfg.macro_model)?;
    let weights = cfg.fit.weights()?;
    let gp = cfg.macro_model.gamma()?;
    let result = minimum_contrast_search(
        &lattice,
        lambda_hat,
        &targets,
        &gp,
        &weights,
        grid.dims(),
        &MasterSeed(cfg.seed),
    )?;

    write_echo(cfg, out)?;
    let table_path = out.join("objective.csv");
    let rows: Vec<[f64; 5]> = result
        .table
        .iter()
        .map(|(t, obj)| [t.lambda_c, t.a, t.b, t.p, *obj])
        .collect();
    let mut w = BufWriter::new(File::create(&table_path)?);
    write_objective_csv(&mut w, &rows)?;
    w.flush()?;

    let best_path = out.join("best.txt");
    let mut w = BufWriter::new(File::create(&best_path)?);
    writeln!(w, "lambda_c = {}", result.best.lambda_c)?;
    writeln!(w, "a = {}", result.best.a)?;
    writeln!(w, "b = {}", result.best.b)?;
    writeln!(w, "p = {}", result.best.p)?;
    writeln!(w, "objective = {}", result.objective)?;
    writeln!(w, "lambda_d = {}", result.lambda_d)?;
    writeln!(w, "birth_rate = {}", result.birth_rate)?;
    w.flush()?;

    Ok(FitFiles { result, files: vec![table_path, best_path] })
}

/// Solve the exciton diffusion equation on a stored grid and return the
/// quenching efficiency; optionally store the solved field.
pub fn cmd_quench(
    cfg: &RunConfig,
    grid_path: &Path,
    field_path: Option<&Path>,
    out: &Path,
) -> Result<f64> {
    let grid = load_mvg1(grid_path)?;
    // the grid file carries its own voxel size; the config only contributes
    // the physical constants
    let dp = cfg.physics.diffusion(grid.voxel_size())?;
    let field = solve_exciton_field(&grid, &dp)?;
    let eta = quenching_efficiency(&field, &grid)?;
    write_echo(cfg, out)?;
    if let Some(path) = field_path {
        save_mef1(path, field.dims(), grid.voxel_size(), field.values())?;
    }
    Ok(eta)
}

/// Write the bundled presets into the output directory.
pub fn cmd_presets(out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, text) in PRESETS {
        let path = out.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

fn write_echo(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let path = out.join("config_echo.cfg");
    std::fs::write(&path, echo(cfg))?;
    Ok(path)
}

fn write_curve(
    dir: &Path,
    name: &str,
    col_a: &str,
    col_b: &str,
    rows: &[(f64, f64)],
) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    write_curve_csv(&mut w, col_a, col_b, rows)?;
    w.flush()?;
    Ok(path)
}
