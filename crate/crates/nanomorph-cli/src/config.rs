//! Flat key=value run configuration with dotted section prefixes.
//!
//! `#` starts a comment, blank lines are skipped, keys may not repeat, and
//! unknown keys are rejected by name. Every model invariant is re-validated
//! at load by constructing the corresponding parameter types, so a config
//! that parses is a config that runs.

use std::collections::BTreeMap;
use std::path::Path;

use nanomorph::error::{Error, Result};
use nanomorph::fit::{derive_lambda_d, AxisRange, LatticeSpec, Weights, DEFAULT_FIT_REPS};
use nanomorph::marks::GammaMarkParams;
use nanomorph::micro::{
    BoundaryConfig, DistanceClass, InteriorParams, OuterParams, DEFAULT_CLASS_EDGES,
};
use nanomorph::physics::DiffusionParams;
use nanomorph::pointproc::{
    ChainParams, DisplacementLaw, MaternParams, DEFAULT_R_MAX, DEFAULT_R_MIN,
};

pub const N_OUTER_CLASSES: usize = DEFAULT_CLASS_EDGES.len();

const PHYSICS_MAX_ITERS: usize = 50_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MacroModel {
    pub lambda_c: f64,
    /// Dot intensity per cluster; resolved from `macro.lambda_hat` when the
    /// config gives the total midpoint intensity instead.
    pub lambda_d: f64,
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub k: f64,
    pub theta: f64,
    pub m: usize,
}

impl MacroModel {
    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(self.lambda_c, self.lambda_d, self.a, self.b)
    }

    pub fn chain(&self) -> Result<ChainParams> {
        ChainParams::with_law(
            self.p,
            self.lambda_c,
            DisplacementLaw::EightNeighbor,
            self.r_min,
            self.r_max,
        )
    }

    pub fn gamma(&self) -> Result<GammaMarkParams> {
        GammaMarkParams::new(self.k, self.theta, self.m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroModel {
    /// Center intensity per distance class, classes fixed at the default
    /// edges [0,2), [2,4), [4,6), [6,8), [8,10).
    pub outer_lambda: [f64; N_OUTER_CLASSES],
    pub alpha: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub n_shells: usize,
    pub interior_r: f64,
    pub interior_lambda_h: f64,
}

impl MicroModel {
    pub fn outer(&self) -> Result<OuterParams> {
        let classes: Vec<DistanceClass> = DEFAULT_CLASS_EDGES
            .iter()
            .zip(self.outer_lambda)
            .map(|(&(d_low, d_high), lambda)| DistanceClass { d_low, d_high, lambda })
            .collect();
        OuterParams::new(classes, self.alpha, self.beta, self.sigma2)
    }

    pub fn boundary(&self) -> BoundaryConfig {
        BoundaryConfig { n_shells: self.n_shells }
    }

    pub fn interior(&self) -> Result<InteriorParams> {
        InteriorParams::new(self.interior_r, self.interior_lambda_h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_size_nm: f64,
}

impl Window {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physics {
    pub d: f64,
    pub tau: f64,
    pub g: f64,
    pub tol: f64,
}

impl Physics {
    pub fn diffusion(&self, voxel_size_nm: f64) -> Result<DiffusionParams> {
        DiffusionParams::new(self.d, self.tau, self.g, voxel_size_nm, self.tol, PHYSICS_MAX_ITERS)
    }
}

impl Default for Physics {
    fn default() -> Self {
        Self { d: 1.8e-7, tau: 400e-12, g: 1e27, tol: 1e-3 }
    }
}

/// Lattice and objective settings for the minimum-contrast search. Absent
/// axes default to a bracket around the macro values: lambda_c, a and b span
/// +/- 50% in five steps, and the survival probability spans +/- 50% of its
/// complement 1-p (the birth side), which keeps the axis inside (0, 1).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitSection {
    pub lambda_hat: Option<f64>,
    pub axis_lambda_c: Option<(f64, f64, f64)>,
    pub axis_a: Option<(f64, f64, f64)>,
    pub axis_b: Option<(f64, f64, f64)>,
    pub axis_p: Option<(f64, f64, f64)>,
    pub weights: Option<[f64; 6]>,
    pub reps: Option<usize>,
}

impl FitSection {
    pub fn weights(&self) -> Result<Weights> {
        match self.weights {
            Some([s, x, y, z, v, vc]) => Weights::new(s, x, y, z, v, vc),
            None => Ok(Weights::default()),
        }
    }

    pub fn reps(&self) -> usize {
        self.reps.unwrap_or(DEFAULT_FIT_REPS)
    }

    pub fn lattice(&self, m: &MacroModel) -> Result<LatticeSpec> {
        let axis = |explicit: Option<(f64, f64, f64)>, center: f64| match explicit {
            Some((min, max, step)) => AxisRange::new(min, max, step),
            None => AxisRange::new(0.5 * center, 1.5 * center, 0.25 * center),
        };
        let p_axis = match self.axis_p {
            Some((min, max, step)) => AxisRange::new(min, max, step),
            None => {
                let q = 1.0 - m.p;
                let (lo, hi) = (1.0 - 1.5 * q, 1.0 - 0.5 * q);
                AxisRange::new(lo, hi, (hi - lo) / 4.0)
            }
        };
        LatticeSpec::new(
            axis(self.axis_lambda_c, m.lambda_c)?,
            axis(self.axis_a, m.a)?,
            axis(self.axis_b, m.b)?,
            p_axis?,
            self.reps(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub macro_model: MacroModel,
    pub micro: Option<MicroModel>,
    pub window: Window,
    pub physics: Physics,
    pub fit: FitSection,
    pub seed: u64,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut keys = Keys::parse(text)?;

    let lambda_c = keys.req_f64("macro.lambda_c")?;
    let a = keys.req_f64("macro.a")?;
    let b = keys.req_f64("macro.b")?;
    let p = keys.req_f64("macro.p")?;
    let lambda_d = match (keys.opt_f64("macro.lambda_d")?, keys.opt_f64("macro.lambda_hat")?) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParam(
                "give exactly one of macro.lambda_d and macro.lambda_hat, not both".into(),
            ))
        }
        (None, None) => {
            return Err(Error::InvalidParam(
                "one of macro.lambda_d or macro.lambda_hat is required".into(),
            ))
        }
        (Some(d), None) => d,
        (None, Some(hat)) => derive_lambda_d(hat, lambda_c, a, b)?,
    };
    let macro_model = MacroModel {
        lambda_c,
        lambda_d,
        a,
        b,
        p,
        r_min: keys.opt_f64("macro.r_min")?.unwrap_or(DEFAULT_R_MIN),
        r_max: keys.opt_f64("macro.r_max")?.unwrap_or(DEFAULT_R_MAX),
        k: keys.req_f64("macro.k")?,
        theta: keys.req_f64("macro.theta")?,
        m: keys.req_usize("macro.m")?,
    };

    let micro = parse_micro(&mut keys)?;

    let window = Window {
        nx: keys.req_usize("window.nx")?,
        ny: keys.req_usize("window.ny")?,
        nz: keys.req_usize("window.nz")?,
        voxel_size_nm: keys.req_f64("window.voxel_size_nm")?,
    };
    if window.nx == 0 || window.ny == 0 || window.nz == 0 {
        return Err(Error::InvalidParam("window dimensions must be >= 1".into()));
    }

    let defaults = Physics::default();
    let physics = Physics {
        d: keys.opt_f64("physics.D")?.unwrap_or(defaults.d),
        tau: keys.opt_f64("physics.tau")?.unwrap_or(defaults.tau),
        g: keys.opt_f64("physics.g")?.unwrap_or(defaults.g),
        tol: keys.opt_f64("physics.tol")?.unwrap_or(defaults.tol),
    };

    let fit = FitSection {
        lambda_hat: keys.opt_f64("fit.lambda_hat")?,
        axis_lambda_c: keys.opt_axis("fit.lambda_c")?,
        axis_a: keys.opt_axis("fit.a")?,
        axis_b: keys.opt_axis("fit.b")?,
        axis_p: keys.opt_axis("fit.p")?,
        weights: parse_weights(&mut keys)?,
        reps: keys.opt_usize("fit.reps")?,
    };

    let seed = keys.opt_u64("seed")?.unwrap_or(0);
    keys.finish()?;

    let cfg = RunConfig { macro_model, micro, window, physics, fit, seed };
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_micro(keys: &mut Keys) -> Result<Option<MicroModel>> {
    if !keys.any_with_prefix("micro.") {
        return Ok(None);
    }
    let mut outer_lambda = [0.0; N_OUTER_CLASSES];
    for (i, slot) in outer_lambda.iter_mut().enumerate() {
        *slot = keys.req_f64(&format!("micro.outer.lambda.{}", i + 1))?;
    }
    Ok(Some(MicroModel {
        outer_lambda,
        alpha: keys.req_f64("micro.outer.alpha")?,
        beta: keys.req_f64("micro.outer.beta")?,
        sigma2: keys.req_f64("micro.outer.sigma2")?,
        n_shells: keys.req_usize("micro.boundary.n_shells")?,
        interior_r: keys.req_f64("micro.interior.r")?,
        interior_lambda_h: keys.req_f64("micro.interior.lambda_h")?,
    }))
}

fn parse_weights(keys: &mut Keys) -> Result<Option<[f64; 6]>> {
    let names =
        ["fit.w_scd", "fit.w_x", "fit.w_y", "fit.w_z", "fit.w_v", "fit.w_vconn"];
    let present: Vec<bool> =
        names.iter().map(|n| keys.contains(n)).collect();
    if present.iter().all(|&p| !p) {
        return Ok(None);
    }
    let mut w = [0.0; 6];
    for (slot, name) in w.iter_mut().zip(names) {
        *slot = keys.req_f64(name)?;
    }
    Ok(Some(w))
}

/// Re-run every model constructor so invalid combinations fail at load, not
/// mid-pipeline.
fn validate(cfg: &RunConfig) -> Result<()> {
    cfg.macro_model.matern()?;
    cfg.macro_model.chain()?;
    cfg.macro_model.gamma()?;
    if let Some(micro) = &cfg.micro {
        micro.outer()?;
        micro.interior()?;
    }
    cfg.physics.diffusion(cfg.window.voxel_size_nm)?;
    cfg.fit.weights()?;
    cfg.fit.lattice(&cfg.macro_model)?;
    if let Some(hat) = cfg.fit.lambda_hat {
        if !(hat > 0.0) || !hat.is_finite() {
            return Err(Error::InvalidParam(format!(
                "fit.lambda_hat {hat} must be finite and > 0"
            )));
        }
    }
    Ok(())
}

/// Canonical text form of a config; parsing it reproduces the same resolved
/// configuration.
pub fn echo(cfg: &RunConfig) -> String {
    let mut out = String::from("# resolved run configuration\n");
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    let m = &cfg.macro_model;
    kv("macro.lambda_c", fmt_f64(m.lambda_c));
    kv("macro.a", fmt_f64(m.a));
    kv("macro.b", fmt_f64(m.b));
    kv("macro.p", fmt_f64(m.p));
    kv("macro.lambda_d", fmt_f64(m.lambda_d));
    kv("macro.r_min", fmt_f64(m.r_min));
    kv("macro.r_max", fmt_f64(m.r_max));
    kv("macro.k", fmt_f64(m.k));
    kv("macro.theta", fmt_f64(m.theta));
    kv("macro.m", m.m.to_string());
    if let Some(mi) = &cfg.micro {
        for (i, l) in mi.outer_lambda.iter().enumerate() {
            kv(&format!("micro.outer.lambda.{}", i + 1), fmt_f64(*l));
        }
        kv("micro.outer.alpha", fmt_f64(mi.alpha));
        kv("micro.outer.beta", fmt_f64(mi.beta));
        kv("micro.outer.sigma2", fmt_f64(mi.sigma2));
        kv("micro.boundary.n_shells", mi.n_shells.to_string());
        kv("micro.interior.r", fmt_f64(mi.interior_r));
        kv("micro.interior.lambda_h", fmt_f64(mi.interior_lambda_h));
    }
    let w = &cfg.window;
    kv("window.nx", w.nx.to_string());
    kv("window.ny", w.ny.to_string());
    kv("window.nz", w.nz.to_string());
    kv("window.voxel_size_nm", fmt_f64(w.voxel_size_nm));
    kv("physics.D", fmt_f64(cfg.physics.d));
    kv("physics.tau", fmt_f64(cfg.physics.tau));
    kv("physics.g", fmt_f64(cfg.physics.g));
    kv("physics.tol", fmt_f64(cfg.physics.tol));
    let f = &cfg.fit;
    if let Some(hat) = f.lambda_hat {
        kv("fit.lambda_hat", fmt_f64(hat));
    }
    for (name, ax) in [
        ("fit.lambda_c", f.axis_lambda_c),
        ("fit.a", f.axis_a),
        ("fit.b", f.axis_b),
        ("fit.p", f.axis_p),
    ] {
        if let Some((min, max, step)) = ax {
            kv(&format!("{name}.min"), fmt_f64(min));
            kv(&format!("{name}.max"), fmt_f64(max));
            kv(&format!("{name}.step"), fmt_f64(step));
        }
    }
    if let Some([s, x, y, z, v, vc]) = f.weights {
        kv("fit.w_scd", fmt_f64(s));
        kv("fit.w_x", fmt_f64(x));
        kv("fit.w_y", fmt_f64(y));
        kv("fit.w_z", fmt_f64(z));
        kv("fit.w_v", fmt_f64(v));
        kv("fit.w_vconn", fmt_f64(vc));
    }
    if let Some(reps) = f.reps {
        kv("fit.reps", reps.to_string());
    }
    kv("seed", cfg.seed.to_string());
    out
}

/// Shortest representation that parses back to the same f64 (Rust float
/// formatting round-trips exactly); scientific notation outside a
/// plain-decimal comfort band.
fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-4 && v.abs() < 1e7 {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

struct Keys {
    map: BTreeMap<String, (String, usize)>,
}

impl Keys {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParam(format!("line {}: expected key = value", i + 1))
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key.is_empty() || value.is_empty() {
                return Err(Error::InvalidParam(format!(
                    "line {}: empty key or value",
                    i + 1
                )));
            }
            if map.insert(key.clone(), (value, i + 1)).is_some() {
                return Err(Error::InvalidParam(format!(
                    "line {}: duplicate key {key}",
                    i + 1
                )));
            }
        }
        Ok(Self { map })
    }

    fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn any_with_prefix(&self, prefix: &str) -> bool {
        self.map.range(prefix.to_string()..).next().is_some_and(|(k, _)| k.starts_with(prefix))
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(v, _)| v)
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("{key}: `{v}` is not a number")))?;
                if !x.is_finite() {
                    return Err(Error::InvalidParam(format!("{key}: {v} is not finite")));
                }
                Ok(Some(x))
            }
        }
    }

    fn req_f64(&mut self, key: &str) -> Result<f64> {
        self.opt_f64(key)?
            .ok_or_else(|| Error::InvalidParam(format!("missing required key {key}")))
    }

    fn opt_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParam(format!("{key}: `{v}` is not a count"))),
        }
    }

    fn req_usize(&mut self, key: &str) -> Result<usize> {
        self.opt_usize(key)?
            .ok_or_else(|| Error::InvalidParam(format!("missing required key {key}")))
    }

    fn opt_u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParam(format!("{key}: `{v}` is not a u64 seed"))),
        }
    }

    /// A `<name>.min/.max/.step` triple; all three or none.
    fn opt_axis(&mut self, name: &str) -> Result<Option<(f64, f64, f64)>> {
        let min = self.opt_f64(&format!("{name}.min"))?;
        let max = self.opt_f64(&format!("{name}.max"))?;
        let step = self.opt_f64(&format!("{name}.step"))?;
        match (min, max, step) {
            (None, None, None) => Ok(None),
            (Some(min), Some(max), Some(step)) => Ok(Some((min, max, step))),
            _ => Err(Error::InvalidParam(format!(
                "{name}.min/.max/.step must be given together"
            ))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().next() {
            None => Ok(()),
            Some((key, (_, line))) => {
                Err(Error::InvalidParam(format!("line {line}: unknown key {key}")))
            }
        }
    }
}
