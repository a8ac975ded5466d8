//! Plain-text file formats.
//!
//! Key-value files hold one `key = value` per line (UTF-8, LF endings).
//! Blank lines and lines starting with `#` are ignored. Vector values are
//! space-separated. Floats are written with 17 significant digits so every
//! value round-trips exactly.
//!
//! Trajectory files start with the header `# id time x y z weight` followed
//! by one space-separated record per primitive and sample time.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};

use crate::deform::{MotionParams, Primitive};
use crate::error::{Error, Result};
pub use crate::harness::evaluate::FittedState;
use crate::harness::evaluate::Metrics;
use crate::harness::fit::{FitReport, OptConfig};
use crate::harness::scene::{BodyMotion, GroundTruth, MotionKind, Scene, SceneConfig, TrajectoryData};
use crate::regularization::LossWeights;
use crate::se3::{Twist, Vec3};
use crate::temporal::{BezierTwists, TemporalProfile};

pub const TRAJECTORY_HEADER: &str = "# id time x y z weight";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_slice(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Ordered key-value document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
    index: HashMap<String, (usize, usize)>,
    path: PathBuf,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut doc = KvDoc {
            path: path.to_path_buf(),
            ..Default::default()
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(doc.error(n + 1, format!("expected `key = value`, got `{line}`")));
            };
            let key = k.trim().to_string();
            if doc.index.contains_key(&key) {
                return Err(doc.error(n + 1, format!("duplicate key `{key}`")));
            }
            doc.index.insert(key.clone(), (doc.entries.len(), n + 1));
            doc.entries.push((key, v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?, path)
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.index.get(&key) {
            Some(&(pos, _)) => self.entries[pos].1 = value,
            None => {
                self.index.insert(key.clone(), (self.entries.len(), 0));
                self.entries.push((key, value));
            }
        }
    }

    pub fn set_f64(&mut self, key: impl Into<String>, v: f64) {
        self.set(key, fmt_f64(v));
    }

    pub fn set_vec(&mut self, key: impl Into<String>, v: &[f64]) {
        self.set(key, fmt_slice(v));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&(pos, _)| self.entries[pos].1.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.index.get(key).map(|&(_, l)| l).unwrap_or(0)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| self.error(0, format!("missing key `{key}`")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse::<T>()
            .map_err(|e| self.error(self.line_of(key), format!("`{key}`: {e}")))
    }

    pub fn f64s(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        let vals = raw
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.error(self.line_of(key), format!("`{key}`: {e}")))?;
        if vals.len() != n {
            return Err(self.error(
                self.line_of(key),
                format!("`{key}` needs {n} numbers, got {}", vals.len()),
            ));
        }
        Ok(vals)
    }

    pub fn vec3(&self, key: &str) -> Result<Vec3> {
        let v = self.f64s(key, 3)?;
        Ok(Vec3::new(v[0], v[1], v[2]))
    }

    pub fn twist(&self, key: &str) -> Result<Twist> {
        let v = self.f64s(key, 6)?;
        Ok(Twist::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.render())
    }
}

const CONFIG_KEYS: [&str; 15] = [
    "n_bodies",
    "primitives_per_body",
    "n_timesteps",
    "motions",
    "omega_min",
    "omega_max",
    "nu_min",
    "nu_max",
    "noise_sigma",
    "seed",
    "body_half_extent",
    "body_spacing",
    "temporal_scale",
    "inactive_fraction",
    "bezier_amplitude",
];

/// Reads a scene config; absent keys keep their defaults.
pub fn scene_config_from_doc(doc: &KvDoc) -> Result<SceneConfig> {
    if let Some(bad) = doc.keys().find(|k| !CONFIG_KEYS.contains(k)) {
        return Err(Error::Parse {
            path: doc.path.clone(),
            line: doc.line_of(bad),
            message: format!("unknown config key `{bad}`"),
        });
    }
    let mut cfg = SceneConfig::default();
    macro_rules! opt {
        ($key:literal, $field:expr) => {
            if doc.get($key).is_some() {
                $field = doc.parse_value($key)?;
            }
        };
    }
    opt!("n_bodies", cfg.n_bodies);
    opt!("primitives_per_body", cfg.primitives_per_body);
    opt!("n_timesteps", cfg.n_timesteps);
    opt!("omega_min", cfg.omega_range.0);
    opt!("omega_max", cfg.omega_range.1);
    opt!("nu_min", cfg.nu_range.0);
    opt!("nu_max", cfg.nu_range.1);
    opt!("noise_sigma", cfg.noise_sigma);
    opt!("seed", cfg.rng_seed);
    opt!("body_half_extent", cfg.body_half_extent);
    opt!("body_spacing", cfg.body_spacing);
    opt!("temporal_scale", cfg.temporal_scale);
    opt!("inactive_fraction", cfg.inactive_fraction);
    opt!("bezier_amplitude", cfg.bezier_amplitude);
    if let Some(raw) = doc.get("motions") {
        cfg.motions = raw
            .split(',')
            .map(|s| s.trim().parse::<MotionKind>())
            .collect::<Result<Vec<_>>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn scene_config_to_doc(cfg: &SceneConfig) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("n_bodies", cfg.n_bodies.to_string());
    doc.set("primitives_per_body", cfg.primitives_per_body.to_string());
    doc.set("n_timesteps", cfg.n_timesteps.to_string());
    doc.set(
        "motions",
        cfg.motions.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
    );
    doc.set_f64("omega_min", cfg.omega_range.0);
    doc.set_f64("omega_max", cfg.omega_range.1);
    doc.set_f64("nu_min", cfg.nu_range.0);
    doc.set_f64("nu_max", cfg.nu_range.1);
    doc.set_f64("noise_sigma", cfg.noise_sigma);
    doc.set("seed", cfg.rng_seed.to_string());
    doc.set_f64("body_half_extent", cfg.body_half_extent);
    doc.set_f64("body_spacing", cfg.body_spacing);
    doc.set_f64("temporal_scale", cfg.temporal_scale);
    doc.set_f64("inactive_fraction", cfg.inactive_fraction);
    doc.set_f64("bezier_amplitude", cfg.bezier_amplitude);
    doc
}

fn put_primitive(doc: &mut KvDoc, i: usize, p: &Primitive, body: usize) {
    let pre = format!("primitive.{i}");
    doc.set(format!("{pre}.body"), body.to_string());
    doc.set_vec(format!("{pre}.mu"), p.mu.as_slice());
    doc.set_vec(format!("{pre}.scale"), p.scale.as_slice());
    doc.set_vec(format!("{pre}.orient"), p.orient_wxyz().as_slice());
    doc.set_f64(format!("{pre}.alpha"), p.profile.alpha);
    doc.set_f64(format!("{pre}.mu_t"), p.profile.mu_t);
    doc.set_f64(format!("{pre}.s_t"), p.profile.s_t);
    doc.set_vec(format!("{pre}.color"), p.color.as_slice());
}

/// Keeps stored unit quaternions bit-exact; renormalizes anything else.
fn unit_quaternion(q: Quaternion<f64>, pre: &str) -> Result<UnitQuaternion<f64>> {
    let n = q.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::invalid(format!("{pre}.orient is not a valid rotation")));
    }
    if (n - 1.0).abs() < 1e-12 {
        Ok(UnitQuaternion::new_unchecked(q))
    } else {
        Ok(UnitQuaternion::new_normalize(q))
    }
}

fn get_primitive(doc: &KvDoc, i: usize) -> Result<(Primitive, usize)> {
    let pre = format!("primitive.{i}");
    let q = doc.f64s(&format!("{pre}.orient"), 4)?;
    let profile = TemporalProfile::new(
        doc.parse_value(&format!("{pre}.mu_t"))?,
        doc.parse_value(&format!("{pre}.s_t"))?,
        doc.parse_value(&format!("{pre}.alpha"))?,
    )?;
    let p = Primitive {
        mu: doc.vec3(&format!("{pre}.mu"))?,
        scale: doc.vec3(&format!("{pre}.scale"))?,
        orient: unit_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]), &pre)?,
        profile,
        color: doc.vec3(&format!("{pre}.color"))?,
    };
    p.validate()?;
    Ok((p, doc.parse_value(&format!("{pre}.body"))?))
}

fn put_params(doc: &mut KvDoc, pre: &str, p: &MotionParams) {
    let t = &p.twists;
    doc.set_vec(format!("{pre}.base"), &t.base.to_array());
    doc.set_vec(format!("{pre}.ctrl0"), &t.ctrl0.to_array());
    doc.set_vec(format!("{pre}.ctrl1"), &t.ctrl1.to_array());
    doc.set_vec(format!("{pre}.ctrl2"), &t.ctrl2.to_array());
    doc.set_vec(format!("{pre}.anchor"), p.anchor.as_slice());
}

fn get_params(doc: &KvDoc, pre: &str) -> Result<MotionParams> {
    Ok(MotionParams {
        twists: BezierTwists {
            base: doc.twist(&format!("{pre}.base"))?,
            ctrl0: doc.twist(&format!("{pre}.ctrl0"))?,
            ctrl1: doc.twist(&format!("{pre}.ctrl1"))?,
            ctrl2: doc.twist(&format!("{pre}.ctrl2"))?,
        },
        anchor: doc.vec3(&format!("{pre}.anchor"))?,
    })
}

fn put_scene(doc: &mut KvDoc, scene: &Scene) {
    doc.set("n_primitives", scene.len().to_string());
    doc.set("n_bodies", scene.n_bodies.to_string());
    for (i, p) in scene.primitives.iter().enumerate() {
        put_primitive(doc, i, p, scene.body[i]);
    }
}

fn get_scene(doc: &KvDoc) -> Result<Scene> {
    let n: usize = doc.parse_value("n_primitives")?;
    let n_bodies: usize = doc.parse_value("n_bodies")?;
    let mut primitives = Vec::with_capacity(n);
    let mut body = Vec::with_capacity(n);
    for i in 0..n {
        let (p, b) = get_primitive(doc, i)?;
        if b >= n_bodies {
            return Err(Error::invalid(format!("primitive {i} refers to body {b}")));
        }
        primitives.push(p);
        body.push(b);
    }
    Ok(Scene {
        primitives,
        body,
        n_bodies,
    })
}

pub fn scene_to_doc(scene: &Scene, truth: &GroundTruth) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("format", "scene-v1");
    put_scene(&mut doc, scene);
    for (b, body) in truth.bodies.iter().enumerate() {
        doc.set(format!("body.{b}.kind"), body.kind.name());
        put_params(&mut doc, &format!("body.{b}"), &body.params);
    }
    doc
}

pub fn scene_from_doc(doc: &KvDoc) -> Result<(Scene, GroundTruth)> {
    expect_format(doc, "scene-v1")?;
    let scene = get_scene(doc)?;
    let bodies = (0..scene.n_bodies)
        .map(|b| {
            Ok(BodyMotion {
                kind: doc.parse_value(&format!("body.{b}.kind"))?,
                params: get_params(doc, &format!("body.{b}"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = scene.body.iter().map(|&b| bodies[b].params).collect();
    Ok((scene, GroundTruth { bodies, params }))
}

fn expect_format(doc: &KvDoc, want: &str) -> Result<()> {
    let got = doc.require("format")?;
    if got != want {
        return Err(Error::invalid(format!("expected format `{want}`, found `{got}`")));
    }
    Ok(())
}

pub fn fitted_to_doc(state: &FittedState) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("format", "fit-v1");
    doc.set("model", state.model.name());
    doc.set("anchors_at_truth", state.anchors_at_truth.to_string());
    put_scene(&mut doc, &state.scene);
    for (i, p) in state.params.iter().enumerate() {
        put_params(&mut doc, &format!("params.{i}"), p);
        doc.set(format!("slot.{i}.lineage"), state.lineage[i].to_string());
    }
    doc
}

pub fn fitted_from_doc(doc: &KvDoc) -> Result<FittedState> {
    expect_format(doc, "fit-v1")?;
    let scene = get_scene(doc)?;
    let params = (0..scene.len())
        .map(|i| get_params(doc, &format!("params.{i}")))
        .collect::<Result<Vec<_>>>()?;
    let lineage = (0..scene.len())
        .map(|i| doc.parse_value(&format!("slot.{i}.lineage")))
        .collect::<Result<Vec<usize>>>()?;
    Ok(FittedState {
        scene,
        params,
        lineage,
        model: doc.parse_value("model")?,
        anchors_at_truth: doc.parse_value("anchors_at_truth")?,
    })
}

pub fn trajectories_to_string(data: &TrajectoryData) -> String {
    let mut out = String::with_capacity(data.n_primitives() * data.times.len() * 120);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (i, (row, wrow)) in data.targets.iter().zip(&data.weights).enumerate() {
        for ((t, y), w) in data.times.iter().zip(row).zip(wrow) {
            let _ = writeln!(
                out,
                "{i} {} {} {} {} {}",
                fmt_f64(*t),
                fmt_f64(y.x),
                fmt_f64(y.y),
                fmt_f64(y.z),
                fmt_f64(*w)
            );
        }
    }
    out
}

/// Parses a trajectory file. Records must be grouped by id, in increasing
/// id order, with the same time grid for every id.
pub fn trajectories_from_str(text: &str, path: &Path) -> Result<TrajectoryData> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == TRAJECTORY_HEADER => {}
        _ => return Err(perr(1, format!("expected header `{TRAJECTORY_HEADER}`"))),
    }
    let mut times: Vec<f64> = Vec::new();
    let mut targets: Vec<Vec<Vec3>> = Vec::new();
    let mut weights: Vec<Vec<f64>> = Vec::new();
    for (n, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(perr(n + 1, format!("expected 6 fields, got {}", fields.len())));
        }
        let id: usize = fields[0].parse().map_err(|e| perr(n + 1, format!("bad id: {e}")))?;
        let nums = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| perr(n + 1, format!("bad number: {e}")))?;
        if id == targets.len() {
            targets.push(Vec::new());
            weights.push(Vec::new());
        } else if id + 1 != targets.len() {
            return Err(perr(n + 1, format!("record for id {id} out of order")));
        }
        let k = targets[id].len();
        if id == 0 {
            times.push(nums[0]);
        } else if k >= times.len() || times[k] != nums[0] {
            return Err(perr(n + 1, format!("id {id} does not share the time grid of id 0")));
        }
        targets[id].push(Vec3::new(nums[1], nums[2], nums[3]));
        weights[id].push(nums[4]);
    }
    if targets.iter().any(|r| r.len() != times.len()) {
        return Err(perr(0, "some ids are missing samples".into()));
    }
    Ok(TrajectoryData {
        times,
        targets,
        weights,
    })
}

pub const SCENE_FILE: &str = "scene.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAJECTORY_FILE: &str = "trajectories.txt";
pub const FIT_FILE: &str = "fit.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const LOSS_HISTORY_FILE: &str = "loss_history.txt";

pub fn write_scene_dir(
    dir: &Path,
    cfg: &SceneConfig,
    scene: &Scene,
    data: &TrajectoryData,
    truth: &GroundTruth,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    scene_config_to_doc(cfg).write(&dir.join(CONFIG_FILE))?;
    scene_to_doc(scene, truth).write(&dir.join(SCENE_FILE))?;
    write_file(&dir.join(TRAJECTORY_FILE), &trajectories_to_string(data))
}

pub fn read_scene_dir(dir: &Path) -> Result<(Scene, TrajectoryData, GroundTruth)> {
    let (scene, truth) = scene_from_doc(&KvDoc::read(&dir.join(SCENE_FILE))?)?;
    let tpath = dir.join(TRAJECTORY_FILE);
    let data = trajectories_from_str(&read_file(&tpath)?, &tpath)?;
    data.validate_for(&scene)?;
    Ok((scene, data, truth))
}

fn put_per_body(doc: &mut KvDoc, key: &str, values: &[f64]) {
    for (b, v) in values.iter().enumerate() {
        doc.set_f64(format!("metrics.{key}.{b}"), *v);
    }
}

/// Report for a fit run: `metrics.*` results plus the settings used.
pub fn fit_report_to_doc(report: &FitReport, opt: &OptConfig, weights: &LossWeights) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("format", "fit-report-v1");
    let obj = &report.final_objective;
    doc.set_f64("metrics.objective", obj.total);
    doc.set_f64("metrics.data_loss", obj.data);
    doc.set_f64("metrics.opacity_reg", obj.reg);
    doc.set_f64("metrics.motion_smoothness", obj.motion);
    doc.set_f64("metrics.rigid_coherence", obj.rigid);
    doc.set_f64("metrics.weighted_rmse", report.final_rmse);
    doc.set("metrics.iterations", report.loss_history.len().to_string());
    let (lo, hi) = budget_range(&report.budget_history);
    doc.set("metrics.primitive_count_min", lo.to_string());
    doc.set("metrics.primitive_count_max", hi.to_string());
    doc.set("metrics.relocation_events", report.relocation_events.to_string());
    doc.set("metrics.relocated_primitives", report.relocated_primitives.to_string());
    doc.set("metrics.non_monotone", report.non_monotone.to_string());
    doc.set_f64("metrics.wall_time_secs", report.wall_time_secs);
    for (b, e) in report.twist_error.iter().enumerate() {
        if let Some(e) = e {
            doc.set_f64(format!("metrics.twist_error.{b}"), *e);
        }
    }
    doc.set("config.model", opt.model.name());
    doc.set("config.optimizer", opt.optimizer.name());
    doc.set("config.iters", opt.iters.to_string());
    doc.set("config.learn_anchors", opt.learn_anchors.to_string());
    doc.set_f64("config.lr_twist", opt.lr_twist);
    doc.set_f64("config.lr_control", opt.lr_control);
    doc.set_f64("config.lr_anchor", opt.lr_anchor);
    doc.set_f64("config.lr_final_ratio", opt.lr_final_ratio);
    doc.set_f64("config.w_reg", weights.w_reg);
    doc.set_f64("config.w_motion", weights.w_motion);
    doc.set_f64("config.w_rigid", weights.w_rigid);
    doc.set_f64("config.lambda_c", weights.lambda_c);
    doc.set("config.knn", weights.k_neighbors.to_string());
    doc.set("config.reloc_period", opt.relocation.period.to_string());
    doc.set_f64("config.reloc_threshold", opt.relocation.opacity_threshold);
    doc.set("config.seed", opt.relocation.rng_seed.to_string());
    doc
}

/// Smallest and largest primitive count over a run.
pub fn budget_range(history: &[usize]) -> (usize, usize) {
    let lo = history.iter().copied().min().unwrap_or(0);
    let hi = history.iter().copied().max().unwrap_or(0);
    (lo, hi)
}

/// Evaluation report. `budget` is the primitive-count range of the fit run,
/// when known.
pub fn metrics_to_doc(m: &Metrics, budget: Option<(usize, usize)>) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.set("format", "eval-report-v1");
    doc.set_f64("metrics.weighted_rmse", m.weighted_rmse);
    put_per_body(&mut doc, "rmse", &m.rmse_per_body);
    put_per_body(&mut doc, "body_diameter", &m.body_diameter);
    let relative: Vec<f64> = m
        .rmse_per_body
        .iter()
        .zip(&m.body_diameter)
        .map(|(r, d)| r / d)
        .collect();
    put_per_body(&mut doc, "rmse_over_diameter", &relative);
    for (b, e) in m.twist_error.iter().enumerate() {
        if let Some(e) = e {
            doc.set_f64(format!("metrics.twist_error.{b}"), *e);
        }
    }
    doc.set("metrics.primitive_count", m.primitive_count.to_string());
    if let Some((lo, hi)) = budget {
        doc.set("metrics.primitive_count_min", lo.to_string());
        doc.set("metrics.primitive_count_max", hi.to_string());
    }
    doc
}

/// `iter loss` pairs, one per line.
pub fn loss_history_to_string(history: &[f64]) -> String {
    let mut out = String::from("# iter loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{i} {}", fmt_f64(*l));
    }
    out
}
