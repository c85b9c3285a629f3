//! Scenario files: road, vehicle roster, base distribution and safety
//! measure settings.
//!
//! The `.scn` format is line-oriented `key = value` text; `#` starts a
//! comment. Units are part of key names. Every key is listed in
//! `docs/scenario-format.md`; unknown keys are rejected.
//!
//! The base distribution randomizes the environment vehicles only. With
//! `m = vehicle_count` there are `m - 1` environment vehicles and the family
//! layout is `[S_1..S_{m-1}, T_1.., W_1.., V_1.., ξ]`.

pub mod params_io;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expfam::{Block, BlockParams, FamilySpec, FixedCovGaussian, ParamPoint, ScaledBeta};
use crate::sim::{Road, VehicleState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("missing key: {0}")]
    MissingKey(String),
    #[error("line {line}: unknown key: {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key: {key}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`")]
    Malformed { line: usize },
    #[error("line {line}: key {key}: {reason}")]
    InvalidValue { line: usize, key: String, reason: String },
    #[error("line {line}: key {key}: dimension mismatch: policy.dim is {expected} but the file holds {got}")]
    DimensionMismatch {
        line: usize,
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: key {key}: {source}")]
    PolicyFile {
        line: usize,
        key: String,
        #[source]
        source: params_io::BinaryError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scaled-Beta marginal `lo + (hi - lo) Beta(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaDist {
    pub alpha: f64,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitDists {
    /// Longitudinal position from the road start (m).
    pub s: BetaDist,
    /// Lateral offset from the lane center (m).
    pub t: BetaDist,
    /// Heading (degrees).
    pub w_deg: BetaDist,
    /// Speed (m/s).
    pub v: BetaDist,
}

impl Default for InitDists {
    fn default() -> Self {
        let d = |lo, hi| BetaDist {
            alpha: 2.0,
            beta: 2.0,
            lo,
            hi,
        };
        InitDists {
            s: d(80.0, 120.0),
            t: d(-0.25, 0.25),
            w_deg: d(-3.6, 3.6),
            v: d(10.0, 20.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgoPolicyKind {
    Idm { target_speed_mps: f64 },
    Constant { accel_mps2: f64, steer_rate_rps: f64 },
}

/// Fixed initial state of the vehicle under test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoSpec {
    pub lane: usize,
    pub x_m: f64,
    pub lateral_offset_m: f64,
    pub heading_deg: f64,
    pub speed_mps: f64,
    pub policy: EgoPolicyKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvVehicleSpec {
    pub lane: usize,
    /// Added to the sampled S.
    pub s_offset_m: f64,
}

/// Gaussian distribution of the environment policy weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDist {
    pub dim: usize,
    pub mu0_path: String,
    pub sigma0_path: String,
    pub box_radius: f64,
    /// Draw an independent weight vector per environment vehicle.
    pub per_vehicle: bool,
    pub mu0: Vec<f64>,
    /// Lower-triangular Cholesky factor of Σ₀.
    pub sigma0_chol: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureConfig {
    pub n_beams: usize,
    pub max_range_m: f64,
    /// Default rare-event threshold (s).
    pub gamma_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt_s: f64,
    pub horizon_s: f64,
}

impl SimConfig {
    pub fn max_steps(&self) -> usize {
        (self.horizon_s / self.dt_s).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub vehicle_count: usize,
    pub road: Road,
    pub vehicle_length_m: f64,
    pub vehicle_width_m: f64,
    pub ego: EgoSpec,
    pub env: Vec<EnvVehicleSpec>,
    pub init: InitDists,
    pub policy: PolicyDist,
    pub shape_min: f64,
    pub shape_max: f64,
    pub measure: MeasureConfig,
    pub sim: SimConfig,
    pub seed_base: u64,
}

struct Entry {
    line: usize,
    value: String,
}

struct Fields {
    entries: BTreeMap<String, Entry>,
}

impl Fields {
    fn raw(&self, key: &str) -> Result<&Entry, ScenarioError> {
        self.entries.get(key).ok_or_else(|| ScenarioError::MissingKey(key.to_string()))
    }

    fn invalid(&self, key: &str, reason: impl Into<String>) -> ScenarioError {
        ScenarioError::InvalidValue {
            line: self.entries.get(key).map_or(0, |e| e.line),
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, ScenarioError> {
        let e = self.raw(key)?;
        e.value
            .parse()
            .map_err(|_| self.invalid(key, format!("cannot parse `{}`", e.value)))
    }

    fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ScenarioError> {
        if self.entries.contains_key(key) {
            self.parsed(key)
        } else {
            Ok(default)
        }
    }

    fn real(&self, key: &str) -> Result<f64, ScenarioError> {
        let v: f64 = self.parsed(key)?;
        if !v.is_finite() {
            return Err(self.invalid(key, "value must be finite"));
        }
        Ok(v)
    }

    fn real_or(&self, key: &str, default: f64) -> Result<f64, ScenarioError> {
        if self.entries.contains_key(key) {
            self.real(key)
        } else {
            Ok(default)
        }
    }

    fn positive(&self, key: &str) -> Result<f64, ScenarioError> {
        let v = self.real(key)?;
        if v <= 0.0 {
            return Err(self.invalid(key, "value must be > 0"));
        }
        Ok(v)
    }

    fn beta_dist(&self, key: &str) -> Result<BetaDist, ScenarioError> {
        let e = self.raw(key)?;
        let parts: Vec<f64> = e
            .value
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| self.invalid(key, "expected four reals: alpha beta lo hi"))?;
        let [alpha, beta, lo, hi] = parts[..] else {
            return Err(self.invalid(key, "expected four reals: alpha beta lo hi"));
        };
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(self.invalid(key, "Beta shapes must be > 0"));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(self.invalid(key, "support must satisfy lo < hi"));
        }
        Ok(BetaDist { alpha, beta, lo, hi })
    }
}

fn tokenize(text: &str) -> Result<Fields, ScenarioError> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ScenarioError::Malformed { line });
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ScenarioError::Malformed { line });
        }
        if entries.contains_key(&key) {
            return Err(ScenarioError::DuplicateKey { line, key });
        }
        entries.insert(
            key,
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }
    Ok(Fields { entries })
}

const FIXED_KEYS: &[&str] = &[
    "format_version",
    "vehicle_count",
    "road.length_m",
    "road.lane_count",
    "road.lane_width_m",
    "vehicle.length_m",
    "vehicle.width_m",
    "ego.lane",
    "ego.x_m",
    "ego.lateral_offset_m",
    "ego.heading_deg",
    "ego.speed_mps",
    "ego.policy",
    "ego.target_speed_mps",
    "ego.accel_mps2",
    "ego.steer_rate_rps",
    "init.s_m",
    "init.t_m",
    "init.w_deg",
    "init.v_mps",
    "policy.dim",
    "policy.mu0_path",
    "policy.sigma0_path",
    "policy.box",
    "policy.per_vehicle",
    "search.shape_min",
    "search.shape_max",
    "measure.n_beams",
    "measure.max_range_m",
    "measure.gamma_s",
    "sim.dt_s",
    "sim.horizon_s",
    "seed_base",
];

fn env_key(j: usize, field: &str) -> String {
    format!("env.{j}.{field}")
}

/// Parses a scenario file; relative policy paths resolve against its directory.
pub fn parse(path: impl AsRef<Path>) -> Result<ScenarioSpec, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_str(&text, &base)
}

pub fn parse_str(text: &str, base_dir: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let f = tokenize(text)?;

    let vehicle_count: usize = f.parsed("vehicle_count")?;
    if vehicle_count < 2 {
        return Err(f.invalid("vehicle_count", "need the ego plus at least one environment vehicle (>= 2)"));
    }
    let version: u32 = f.parsed("format_version")?;
    if version != FORMAT_VERSION {
        return Err(f.invalid("format_version", format!("unsupported version {version} (expected {FORMAT_VERSION})")));
    }

    // reject unknown keys once the roster size is known
    for (key, e) in &f.entries {
        let known = FIXED_KEYS.contains(&key.as_str())
            || key
                .strip_prefix("env.")
                .and_then(|rest| rest.split_once('.'))
                .is_some_and(|(j, field)| {
                    j.parse::<usize>().is_ok_and(|j| (1..vehicle_count).contains(&j))
                        && matches!(field, "lane" | "s_offset_m")
                });
        if !known {
            return Err(ScenarioError::UnknownKey {
                line: e.line,
                key: key.clone(),
            });
        }
    }

    let lane_count: usize = f.parsed("road.lane_count")?;
    if lane_count == 0 {
        return Err(f.invalid("road.lane_count", "value must be >= 1"));
    }
    let road = Road {
        length_m: f.positive("road.length_m")?,
        lane_count,
        lane_width_m: f.positive("road.lane_width_m")?,
    };
    let vehicle_length_m = f.positive("vehicle.length_m")?;
    let vehicle_width_m = f.positive("vehicle.width_m")?;

    let lane = |key: &str| -> Result<usize, ScenarioError> {
        let l: usize = f.parsed(key)?;
        if l >= lane_count {
            return Err(f.invalid(key, format!("lane index must be < road.lane_count ({lane_count})")));
        }
        Ok(l)
    };

    let speed_mps = f.real("ego.speed_mps")?;
    if speed_mps < 0.0 {
        return Err(f.invalid("ego.speed_mps", "value must be >= 0"));
    }
    let policy_name: String = f.parsed("ego.policy")?;
    let policy = match policy_name.as_str() {
        "idm" => EgoPolicyKind::Idm {
            target_speed_mps: {
                let v = f.real_or("ego.target_speed_mps", speed_mps)?;
                if v <= 0.0 {
                    return Err(f.invalid("ego.target_speed_mps", "value must be > 0"));
                }
                v
            },
        },
        "constant" => EgoPolicyKind::Constant {
            accel_mps2: f.real_or("ego.accel_mps2", 0.0)?,
            steer_rate_rps: f.real_or("ego.steer_rate_rps", 0.0)?,
        },
        other => return Err(f.invalid("ego.policy", format!("unknown policy `{other}` (expected idm or constant)"))),
    };
    let ego = EgoSpec {
        lane: lane("ego.lane")?,
        x_m: f.real("ego.x_m")?,
        lateral_offset_m: f.real_or("ego.lateral_offset_m", 0.0)?,
        heading_deg: f.real_or("ego.heading_deg", 0.0)?,
        speed_mps,
        policy,
    };

    let env = (1..vehicle_count)
        .map(|j| {
            Ok(EnvVehicleSpec {
                lane: lane(&env_key(j, "lane"))?,
                s_offset_m: f.real_or(&env_key(j, "s_offset_m"), 0.0)?,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;

    let init = InitDists {
        s: f.beta_dist("init.s_m")?,
        t: f.beta_dist("init.t_m")?,
        w_deg: f.beta_dist("init.w_deg")?,
        v: f.beta_dist("init.v_mps")?,
    };
    if init.v.lo < 0.0 {
        return Err(f.invalid("init.v_mps", "speeds must be >= 0"));
    }

    let dim: usize = f.parsed("policy.dim")?;
    if dim == 0 || dim % 2 != 0 {
        return Err(f.invalid("policy.dim", "value must be a positive even integer (2 × feature count)"));
    }
    let box_radius = f.real("policy.box")?;
    if box_radius < 0.0 {
        return Err(f.invalid("policy.box", "value must be >= 0"));
    }
    let per_vehicle: bool = f.parsed_or("policy.per_vehicle", false)?;
    let mu0_path: String = f.parsed("policy.mu0_path")?;
    let sigma0_path: String = f.parsed("policy.sigma0_path")?;
    let mu0_line = f.raw("policy.mu0_path")?.line;
    let sigma_line = f.raw("policy.sigma0_path")?.line;
    let mu0 = params_io::read_vector(&base_dir.join(&mu0_path)).map_err(|source| ScenarioError::PolicyFile {
        line: mu0_line,
        key: "policy.mu0_path".into(),
        source,
    })?;
    if mu0.len() != dim {
        return Err(ScenarioError::DimensionMismatch {
            line: mu0_line,
            key: "policy.mu0_path".into(),
            expected: dim,
            got: mu0.len(),
        });
    }
    let sigma0_chol =
        params_io::read_cholesky(&base_dir.join(&sigma0_path)).map_err(|source| ScenarioError::PolicyFile {
            line: sigma_line,
            key: "policy.sigma0_path".into(),
            source,
        })?;
    if sigma0_chol.nrows() != dim {
        return Err(ScenarioError::DimensionMismatch {
            line: sigma_line,
            key: "policy.sigma0_path".into(),
            expected: dim,
            got: sigma0_chol.nrows(),
        });
    }
    if (0..dim).any(|i| !(sigma0_chol[(i, i)] > 0.0)) {
        return Err(f.invalid("policy.sigma0_path", "Cholesky factor must have a positive diagonal"));
    }

    let shape_min = f.real_or("search.shape_min", crate::expfam::SHAPE_MIN)?;
    let shape_max = f.real_or("search.shape_max", crate::expfam::SHAPE_MAX)?;
    if !(shape_min > 0.0 && shape_max >= shape_min) {
        return Err(f.invalid("search.shape_max", "need 0 < shape_min <= shape_max"));
    }

    let n_beams: usize = f.parsed("measure.n_beams")?;
    if n_beams < 4 {
        return Err(f.invalid("measure.n_beams", "value must be >= 4"));
    }
    let measure = MeasureConfig {
        n_beams,
        max_range_m: f.positive("measure.max_range_m")?,
        gamma_s: f.real("measure.gamma_s")?,
    };
    let sim = SimConfig {
        dt_s: f.positive("sim.dt_s")?,
        horizon_s: f.positive("sim.horizon_s")?,
    };
    let seed_base: u64 = f.parsed_or("seed_base", 0)?;

    Ok(ScenarioSpec {
        vehicle_count,
        road,
        vehicle_length_m,
        vehicle_width_m,
        ego,
        env,
        init,
        policy: PolicyDist {
            dim,
            mu0_path,
            sigma0_path,
            box_radius,
            per_vehicle,
            mu0,
            sigma0_chol,
        },
        shape_min,
        shape_max,
        measure,
        sim,
        seed_base,
    })
}

fn fmt_real(x: f64) -> String {
    // shortest representation that round-trips exactly
    format!("{x:?}")
}

fn fmt_beta(d: &BetaDist) -> String {
    format!("{} {} {} {}", fmt_real(d.alpha), fmt_real(d.beta), fmt_real(d.lo), fmt_real(d.hi))
}

impl ScenarioSpec {
    /// Canonical text form; parsing it back yields an identical spec.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("format_version", FORMAT_VERSION.to_string());
        kv("vehicle_count", self.vehicle_count.to_string());
        kv("road.length_m", fmt_real(self.road.length_m));
        kv("road.lane_count", self.road.lane_count.to_string());
        kv("road.lane_width_m", fmt_real(self.road.lane_width_m));
        kv("vehicle.length_m", fmt_real(self.vehicle_length_m));
        kv("vehicle.width_m", fmt_real(self.vehicle_width_m));
        kv("ego.lane", self.ego.lane.to_string());
        kv("ego.x_m", fmt_real(self.ego.x_m));
        kv("ego.lateral_offset_m", fmt_real(self.ego.lateral_offset_m));
        kv("ego.heading_deg", fmt_real(self.ego.heading_deg));
        kv("ego.speed_mps", fmt_real(self.ego.speed_mps));
        match self.ego.policy {
            EgoPolicyKind::Idm { target_speed_mps } => {
                kv("ego.policy", "idm".into());
                kv("ego.target_speed_mps", fmt_real(target_speed_mps));
            }
            EgoPolicyKind::Constant {
                accel_mps2,
                steer_rate_rps,
            } => {
                kv("ego.policy", "constant".into());
                kv("ego.accel_mps2", fmt_real(accel_mps2));
                kv("ego.steer_rate_rps", fmt_real(steer_rate_rps));
            }
        }
        for (i, e) in self.env.iter().enumerate() {
            kv(&env_key(i + 1, "lane"), e.lane.to_string());
            kv(&env_key(i + 1, "s_offset_m"), fmt_real(e.s_offset_m));
        }
        kv("init.s_m", fmt_beta(&self.init.s));
        kv("init.t_m", fmt_beta(&self.init.t));
        kv("init.w_deg", fmt_beta(&self.init.w_deg));
        kv("init.v_mps", fmt_beta(&self.init.v));
        kv("policy.dim", self.policy.dim.to_string());
        kv("policy.mu0_path", self.policy.mu0_path.clone());
        kv("policy.sigma0_path", self.policy.sigma0_path.clone());
        kv("policy.box", fmt_real(self.policy.box_radius));
        kv("policy.per_vehicle", self.policy.per_vehicle.to_string());
        kv("search.shape_min", fmt_real(self.shape_min));
        kv("search.shape_max", fmt_real(self.shape_max));
        kv("measure.n_beams", self.measure.n_beams.to_string());
        kv("measure.max_range_m", fmt_real(self.measure.max_range_m));
        kv("measure.gamma_s", fmt_real(self.measure.gamma_s));
        kv("sim.dt_s", fmt_real(self.sim.dt_s));
        kv("sim.horizon_s", fmt_real(self.sim.horizon_s));
        kv("seed_base", self.seed_base.to_string());
        s
    }

    /// Digest of the canonical text plus the policy data it references.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.serialize().as_bytes());
        h.update(params_io::encode_vector(&self.policy.mu0));
        h.update(params_io::encode_cholesky(&self.policy.sigma0_chol));
        h.finalize().into()
    }

    pub fn env_count(&self) -> usize {
        self.vehicle_count - 1
    }

    /// Dimension of the Gaussian block (`d`, or `(m-1) d` with per-vehicle draws).
    pub fn weight_block_dim(&self) -> usize {
        if self.policy.per_vehicle {
            self.policy.dim * self.env_count()
        } else {
            self.policy.dim
        }
    }

    pub fn sample_dim(&self) -> usize {
        4 * self.env_count() + self.weight_block_dim()
    }

    /// Replaces the in-memory policy distribution (paths are left as-is).
    pub fn with_policy(mut self, mu0: Vec<f64>, sigma0_chol: DMatrix<f64>) -> Self {
        self.policy.dim = mu0.len();
        self.policy.mu0 = mu0;
        self.policy.sigma0_chol = sigma0_chol;
        self
    }

    /// Initial world: ego first, then the environment vehicles in roster order.
    pub fn initial_world(&self, x: &[f64]) -> Vec<VehicleState> {
        let m1 = self.env_count();
        let (len, wid) = (self.vehicle_length_m, self.vehicle_width_m);
        let mut world = Vec::with_capacity(self.vehicle_count);
        world.push(VehicleState::new(
            self.ego.x_m,
            self.road.lane_center(self.ego.lane) + self.ego.lateral_offset_m,
            self.ego.heading_deg.to_radians(),
            self.ego.speed_mps,
            len,
            wid,
        ));
        for (j, e) in self.env.iter().enumerate() {
            world.push(VehicleState::new(
                x[j] + e.s_offset_m,
                self.road.lane_center(e.lane) + x[m1 + j],
                x[2 * m1 + j].to_radians(),
                x[3 * m1 + j],
                len,
                wid,
            ));
        }
        world
    }

    /// Policy weights of environment vehicle `j` (0-based) inside a sample.
    pub fn policy_weights<'a>(&self, x: &'a [f64], j: usize) -> &'a [f64] {
        let start = 4 * self.env_count();
        let d = self.policy.dim;
        if self.policy.per_vehicle {
            &x[start + j * d..start + (j + 1) * d]
        } else {
            &x[start..start + d]
        }
    }
}

/// Product family of the scenario and its base parameters θ₀.
pub fn base_family(spec: &ScenarioSpec) -> (FamilySpec, ParamPoint) {
    let m1 = spec.env_count();
    let mut blocks = Vec::with_capacity(4 * m1 + 1);
    let mut theta = Vec::with_capacity(4 * m1 + 1);
    for dist in [spec.init.s, spec.init.t, spec.init.w_deg, spec.init.v] {
        for _ in 0..m1 {
            blocks.push(Block::Beta(ScaledBeta {
                lo: dist.lo,
                hi: dist.hi,
                shape_min: spec.shape_min,
                shape_max: spec.shape_max,
            }));
            theta.push(BlockParams::Beta {
                alpha: dist.alpha,
                beta: dist.beta,
            });
        }
    }
    let d = spec.policy.dim;
    let (mu0, chol) = if spec.policy.per_vehicle {
        let full = d * m1;
        let mut l = DMatrix::zeros(full, full);
        for j in 0..m1 {
            l.view_mut((j * d, j * d), (d, d)).copy_from(&spec.policy.sigma0_chol);
        }
        (spec.policy.mu0.repeat(m1), l)
    } else {
        (spec.policy.mu0.clone(), spec.policy.sigma0_chol.clone())
    };
    let gaussian = FixedCovGaussian::from_cholesky(mu0.clone(), chol, spec.policy.box_radius)
        .expect("Cholesky factor validated at parse time");
    blocks.push(Block::Gaussian(gaussian));
    theta.push(BlockParams::Gaussian { mu: mu0 });
    (FamilySpec::new(blocks), ParamPoint(theta))
}

/// Directory holding the shipped scenarios.
pub fn shipped_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}
