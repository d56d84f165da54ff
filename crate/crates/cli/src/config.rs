//! Run configuration: a line-oriented, sectioned key=value text format.
//!
//! Grammar: `[section]` headers, `key = value` entries, `#` comments, blank
//! lines. Every key has one expected type (word, integer, float, boolean, or
//! a comma-separated list), and parsing is strict in both directions:
//! unknown sections or keys are rejected with their full path, and every
//! defaulted value is materialized into the resolved config, so the
//! canonical echo is a fixed point of the parser:
//!
//! ```text
//! parse(echo(parse(text))) == parse(text)
//! ```
//!
//! Floats are echoed with the shortest representation that round-trips, so
//! the echo loses nothing.

use vanishlab_core::evolve::{Interpolation, Scheme};
use vanishlab_core::vanishing::DualityMode;
use vanishlab_core::velocity::{Axis, Orientation};

use std::collections::BTreeMap;
use std::fmt::Write as _;

/// A rejected configuration, pointing at the offending key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config at {}: {}", self.path, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Solve,
    SweepNu,
    SweepDelta,
    Duality,
    Dissipation,
    DepauwDemo,
    McEstimate,
    CheckWeak,
    BackwardProbe,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::SweepNu => "sweep-nu",
            Experiment::SweepDelta => "sweep-delta",
            Experiment::Duality => "duality",
            Experiment::Dissipation => "dissipation",
            Experiment::DepauwDemo => "depauw-demo",
            Experiment::McEstimate => "mc-estimate",
            Experiment::CheckWeak => "check-weak",
            Experiment::BackwardProbe => "backward-probe",
        }
    }

    fn lookup(s: &str) -> Option<Experiment> {
        ALL_EXPERIMENTS.iter().copied().find(|e| e.as_str() == s)
    }
}

pub const ALL_EXPERIMENTS: [Experiment; 9] = [
    Experiment::Solve,
    Experiment::SweepNu,
    Experiment::SweepDelta,
    Experiment::Duality,
    Experiment::Dissipation,
    Experiment::DepauwDemo,
    Experiment::McEstimate,
    Experiment::CheckWeak,
    Experiment::BackwardProbe,
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Output directory from the config; the command line may override the
    /// placement, never the echo.
    pub output: String,
    /// Run guarded ladder entries flagged instead of rejecting them. The
    /// `--allow-underresolved` flag forces this on, and the echo records the
    /// effective value so re-running it needs no flag.
    pub allow_under_resolved: bool,
    pub grid_n: usize,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Solve {
        field: FieldCfg,
        datum: DatumCfg,
        solve: SolveCfg,
    },
    /// Parameter ladders; covers sweep-nu, sweep-delta and dissipation
    /// (a nu sweep reported through the dissipation meter).
    Sweep {
        delta: bool,
        verdict: bool,
        field: FieldCfg,
        datum: DatumCfg,
        panel: String,
        sweep: SweepCfg,
    },
    Duality {
        field: FieldCfg,
        datum: DatumCfg,
        source: SourceCfg,
        duality: DualityCfg,
    },
    Mc {
        field: FieldCfg,
        datum: Option<DatumCfg>,
        source: Option<SourceCfg>,
        mc: McCfg,
    },
    Weak {
        field: FieldCfg,
        datum: DatumCfg,
        weak: WeakCfg,
    },
    Demo(DemoCfg),
    Probe {
        field: FieldCfg,
        source: SourceCfg,
        probe: ProbeCfg,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldCfg {
    pub kind: FieldKindCfg,
    /// Spatial mollification scale; zero keeps the field sharp.
    pub mollify: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKindCfg {
    Zero,
    Shear { axis: Axis, profile: ProfileCfg },
    Stream { amplitude: f64, fx: u32, fy: u32 },
    Exchange { n_min: u32, n_max: u32, orientation: Orientation },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileCfg {
    Sinusoid { amplitude: f64, freq: u32, phase: f64 },
    DyadicStrips { strip_log2: u32, speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatumCfg {
    Constant { value: f64 },
    CosineX { freq: u32, amplitude: f64 },
    CosineY { freq: u32, amplitude: f64 },
    Checkerboard { level: u32 },
    VerticalStripes { level: u32 },
    /// First field of a binary container, resolved relative to the config
    /// file's directory.
    File { path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveCfg {
    pub nu: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub interpolation: Interpolation,
    pub cfl: f64,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCfg {
    pub values: Vec<f64>,
    pub horizon: f64,
    pub pairing_intervals: usize,
    pub early_times: Vec<f64>,
    pub cfl: f64,
    pub interpolation: Interpolation,
    /// Characteristic-tracer step override for mollified solves; zero keeps
    /// the field's own budget.
    pub trace_dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceCfg {
    pub center_t: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub radius_t: f64,
    pub radius_x: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCfg {
    pub mode: DualityMode,
    pub nu: f64,
    pub horizon: f64,
    pub cfl: f64,
    pub interpolation: Interpolation,
    pub time_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCfg {
    pub direction: McDirection,
    pub nu: f64,
    pub horizon: f64,
    /// Evaluation time of the estimated solution.
    pub t: f64,
    pub samples: usize,
    pub dt: f64,
    pub probes: usize,
    pub cfl: f64,
    pub interpolation: Interpolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakCfg {
    pub strides: Vec<usize>,
    pub time_samples: usize,
    pub horizon: f64,
    pub trace_dt: f64,
    pub tests: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoCfg {
    pub n_max: u32,
    pub nodes_per_slab: usize,
    pub strides: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCfg {
    pub nus: Vec<f64>,
    pub times: Vec<f64>,
    pub horizon: f64,
    pub cfl: f64,
    pub interpolation: Interpolation,
}

/// One section's keys, consumed as they are read; leftovers are unknown keys.
struct Keys {
    section: &'static str,
    map: BTreeMap<String, String>,
}

impl Keys {
    fn path(&self, key: &str) -> String {
        format!("{}.{}", self.section, key)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn req(&mut self, key: &str) -> Result<String, ConfigError> {
        self.take(key)
            .ok_or_else(|| err(self.path(key), "missing required key"))
    }

    fn word_or(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_f64(&self.path(key), &v),
        }
    }

    fn req_f64(&mut self, key: &str) -> Result<f64, ConfigError> {
        let v = self.req(key)?;
        parse_f64(&self.path(key), &v)
    }

    fn u32_or(&mut self, key: &str, default: u32) -> Result<u32, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_int(&self.path(key), &v),
        }
    }

    fn req_u32(&mut self, key: &str) -> Result<u32, ConfigError> {
        let v = self.req(key)?;
        parse_int(&self.path(key), &v)
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_int(&self.path(key), &v),
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_int(&self.path(key), &v),
        }
    }

    fn req_usize(&mut self, key: &str) -> Result<usize, ConfigError> {
        let v = self.req(key)?;
        parse_int(&self.path(key), &v)
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(err(
                self.path(key),
                format!("expected true or false, got '{v}'"),
            )),
        }
    }

    fn req_list_f64(&mut self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.req(key)?;
        parse_list(&self.path(key), &v, parse_f64)
    }

    fn list_f64_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(&self.path(key), &v, parse_f64),
        }
    }

    fn list_usize_or(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(&self.path(key), &v, parse_int::<usize>),
        }
    }

    fn interpolation_or(&mut self, key: &str) -> Result<Interpolation, ConfigError> {
        match self.word_or(key, "monotone-bilinear").as_str() {
            "monotone-bilinear" => Ok(Interpolation::MonotoneBilinear),
            "cubic" => Ok(Interpolation::Cubic),
            v => Err(err(
                self.path(key),
                format!("expected monotone-bilinear or cubic, got '{v}'"),
            )),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(err(format!("{}.{}", self.section, key), "unknown key")),
        }
    }
}

fn parse_f64(path: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| err(path, format!("expected a number, got '{v}'")))?;
    if !x.is_finite() {
        return Err(err(path, format!("number must be finite, got '{v}'")));
    }
    Ok(x)
}

fn parse_int<T: std::str::FromStr>(path: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| err(path, format!("expected a non-negative integer, got '{v}'")))
}

fn parse_list<T>(
    path: &str,
    v: &str,
    one: impl Fn(&str, &str) -> Result<T, ConfigError>,
) -> Result<Vec<T>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| one(path, item.trim())).collect()
}

/// All sections of a config, consumed one by one; leftovers are sections the
/// experiment does not read.
struct SectionSet {
    map: BTreeMap<String, BTreeMap<String, String>>,
}

impl SectionSet {
    fn take(&mut self, name: &'static str) -> Keys {
        Keys {
            section: name,
            map: self.map.remove(name).unwrap_or_default(),
        }
    }

    fn finish(self, experiment: Experiment) -> Result<(), ConfigError> {
        match self.map.into_keys().next() {
            None => Ok(()),
            Some(name) => Err(err(
                name.clone(),
                format!(
                    "section [{name}] is not used by experiment {}",
                    experiment.as_str()
                ),
            )),
        }
    }
}

fn parse_raw(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>, ConfigError> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| err("config", format!("line {lineno}: unterminated section header")))?
                .trim()
                .to_string();
            check_name(&name, lineno)?;
            if sections.contains_key(&name) {
                return Err(err(name.clone(), format!("line {lineno}: duplicate section")));
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
        } else if let Some((k, v)) = line.split_once('=') {
            let key = k.trim().to_string();
            check_name(&key, lineno)?;
            let section = current
                .as_ref()
                .ok_or_else(|| err(key.clone(), format!("line {lineno}: key outside any section")))?;
            let entries = sections.get_mut(section).expect("current section exists");
            let path = format!("{section}.{key}");
            if entries.insert(key, v.trim().to_string()).is_some() {
                return Err(err(path, format!("line {lineno}: duplicate key")));
            }
        } else {
            return Err(err(
                "config",
                format!("line {lineno}: expected '[section]' or 'key = value', got '{line}'"),
            ));
        }
    }
    Ok(sections)
}

fn check_name(name: &str, lineno: usize) -> Result<(), ConfigError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-');
    if ok {
        Ok(())
    } else {
        Err(err(
            "config",
            format!("line {lineno}: names use lowercase letters, digits and '-', got '{name}'"),
        ))
    }
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let mut sections = SectionSet {
        map: parse_raw(text)?,
    };

    let mut run = sections.take("run");
    let experiment_word = run.req("experiment")?;
    let experiment = Experiment::lookup(&experiment_word).ok_or_else(|| {
        err(
            "run.experiment",
            format!(
                "unknown experiment '{experiment_word}'; one of: {}",
                ALL_EXPERIMENTS.map(Experiment::as_str).join(", ")
            ),
        )
    })?;
    let seed = run.u64_or("seed", 0)?;
    let output = run.word_or("output", "out");
    let allow_under_resolved = run.bool_or("allow-underresolved", false)?;
    run.finish()?;

    let mut grid = sections.take("grid");
    let grid_n = grid.req_usize("n")?;
    grid.finish()?;

    let payload = match experiment {
        Experiment::Solve => payload_solve(&mut sections)?,
        Experiment::SweepNu => payload_sweep(&mut sections, false, false)?,
        Experiment::SweepDelta => payload_sweep(&mut sections, true, false)?,
        Experiment::Dissipation => payload_sweep(&mut sections, false, true)?,
        Experiment::Duality => payload_duality(&mut sections)?,
        Experiment::McEstimate => payload_mc(&mut sections)?,
        Experiment::CheckWeak => payload_weak(&mut sections)?,
        Experiment::DepauwDemo => payload_demo(&mut sections)?,
        Experiment::BackwardProbe => payload_probe(&mut sections)?,
    };
    sections.finish(experiment)?;

    Ok(RunConfig {
        experiment,
        seed,
        output,
        allow_under_resolved,
        grid_n,
        payload,
    })
}

fn field_cfg(sections: &mut SectionSet) -> Result<FieldCfg, ConfigError> {
    let mut f = sections.take("field");
    let kind_word = f.req("kind")?;
    let kind = match kind_word.as_str() {
        "zero" => FieldKindCfg::Zero,
        "shear" => {
            let axis = match f.word_or("axis", "x").as_str() {
                "x" => Axis::X,
                "y" => Axis::Y,
                v => return Err(err(f.path("axis"), format!("expected x or y, got '{v}'"))),
            };
            let profile = match f.word_or("profile", "sinusoid").as_str() {
                "sinusoid" => ProfileCfg::Sinusoid {
                    amplitude: f.f64_or("amplitude", 1.0)?,
                    freq: f.u32_or("freq", 1)?,
                    phase: f.f64_or("phase", 0.0)?,
                },
                "dyadic-strips" => ProfileCfg::DyadicStrips {
                    strip_log2: f.req_u32("strip-log2")?,
                    speed: f.f64_or("speed", 1.0)?,
                },
                v => {
                    return Err(err(
                        f.path("profile"),
                        format!("expected sinusoid or dyadic-strips, got '{v}'"),
                    ))
                }
            };
            FieldKindCfg::Shear { axis, profile }
        }
        "stream" => FieldKindCfg::Stream {
            amplitude: f.f64_or("amplitude", 1.0)?,
            fx: f.u32_or("fx", 1)?,
            fy: f.u32_or("fy", 1)?,
        },
        "dyadic-exchange" => {
            let n_min = f.u32_or("n-min", 0)?;
            let n_max = f.req_u32("n-max")?;
            let orientation = match f.word_or("orientation", "standard").as_str() {
                "standard" => Orientation::Standard,
                "transposed" => Orientation::Transposed,
                v => {
                    return Err(err(
                        f.path("orientation"),
                        format!("expected standard or transposed, got '{v}'"),
                    ))
                }
            };
            FieldKindCfg::Exchange {
                n_min,
                n_max,
                orientation,
            }
        }
        v => {
            return Err(err(
                "field.kind",
                format!("expected zero, shear, stream or dyadic-exchange, got '{v}'"),
            ))
        }
    };
    let mollify = f.f64_or("mollify", 0.0)?;
    if mollify < 0.0 {
        return Err(err("field.mollify", "mollification scale cannot be negative"));
    }
    f.finish()?;
    Ok(FieldCfg { kind, mollify })
}

fn datum_cfg(sections: &mut SectionSet) -> Result<DatumCfg, ConfigError> {
    let mut d = sections.take("datum");
    let kind = d.req("kind")?;
    let datum = match kind.as_str() {
        "constant" => DatumCfg::Constant {
            value: d.f64_or("value", 1.0)?,
        },
        "cosine-x" => DatumCfg::CosineX {
            freq: d.u32_or("freq", 1)?,
            amplitude: d.f64_or("amplitude", 1.0)?,
        },
        "cosine-y" => DatumCfg::CosineY {
            freq: d.u32_or("freq", 1)?,
            amplitude: d.f64_or("amplitude", 1.0)?,
        },
        "checkerboard" => DatumCfg::Checkerboard {
            level: d.req_u32("level")?,
        },
        "vertical-stripes" => DatumCfg::VerticalStripes {
            level: d.req_u32("level")?,
        },
        "file" => DatumCfg::File {
            path: d.req("path")?,
        },
        v => {
            return Err(err(
                "datum.kind",
                format!(
                    "expected constant, cosine-x, cosine-y, checkerboard, \
                     vertical-stripes or file, got '{v}'"
                ),
            ))
        }
    };
    d.finish()?;
    Ok(datum)
}

fn source_cfg(sections: &mut SectionSet) -> Result<SourceCfg, ConfigError> {
    let mut s = sections.take("source");
    let cfg = SourceCfg {
        center_t: s.f64_or("center-t", 0.5)?,
        center_x: s.f64_or("center-x", 0.5)?,
        center_y: s.f64_or("center-y", 0.5)?,
        radius_t: s.f64_or("radius-t", 0.1)?,
        radius_x: s.f64_or("radius-x", 0.15)?,
        amplitude: s.f64_or("amplitude", 1.0)?,
    };
    s.finish()?;
    Ok(cfg)
}

fn payload_solve(sections: &mut SectionSet) -> Result<Payload, ConfigError> {
    let field = field_cfg(sections)?;
    let datum = datum_cfg(sections)?;
    let mut s = sections.take("solve");
    let nu = s.f64_or("nu", 0.0)?;
    let horizon = s.f64_or("horizon", 1.0)?;
    if !(horizon > 0.0) {
        return Err(err("solve.horizon", "horizon must be positive"));
    }
    let scheme = match s.word_or("scheme", "splitting").as_str() {
        "splitting" => Scheme::Splitting,
        "spectral-galerkin" => Scheme::SpectralGalerkin,
        "pure-transport" => Scheme::PureTransport,
        v => {
            return Err(err(
                s.path("scheme"),
                format!("expected splitting, spectral-galerkin or pure-transport, got '{v}'"),
            ))
        }
    };
    let interpolation = s.interpolation_or("interpolation")?;
    let cfl = s.f64_or("cfl", 0.9)?;
    let default_outputs: Vec<f64> = (0..=8).map(|k| k as f64 * horizon / 8.0).collect();
    let outputs = s.list_f64_or("outputs", &default_outputs)?;
    s.finish()?;
    Ok(Payload::Solve {
        field,
        datum,
        solve: SolveCfg {
            nu,
            horizon,
            scheme,
            interpolation,
            cfl,
            outputs,
        },
    })
}

fn payload_sweep(
    sections: &mut SectionSet,
    delta: bool,
    verdict: bool,
) -> Result<Payload, ConfigError> {
    let field = field_cfg(sections)?;
    let datum = datum_cfg(sections)?;
    let mut p = sections.take("panel");
    let panel = p.word_or("kind", "standard");
    if panel != "standard" {
        return Err(err(
            "panel.kind",
            format!("the only shipped panel is 'standard', got '{panel}'"),
        ));
    }
    p.finish()?;
    let mut s = sections.take("sweep");
    let sweep = SweepCfg {
        values: s.req_list_f64("values")?,
        horizon: s.f64_or("horizon", 1.0)?,
        pairing_intervals: s.usize_or("pairing-intervals", 16)?,
        early_times: s.list_f64_or("early-times", &[0.03125, 0.0625, 0.125])?,
        cfl: s.f64_or("cfl", 0.9)?,
        interpolation: s.interpolation_or("interpolation")?,
        trace_dt: s.f64_or("trace-dt", 0.0)?,
    };
    s.finish()?;
    Ok(Payload::Sweep {
        delta,
        verdict,
        field,
        datum,
        panel,
        sweep,
    })
}

fn payload_duality(sections: &mut SectionSet) -> Result<Payload, ConfigError> {
    let field = field_cfg(sections)?;
    let datum = datum_cfg(sections)?;
    let source = source_cfg(sections)?;
    let mut d = sections.take("duality");
    let mode = match d.req("mode")?.as_str() {
        "adjoint" => DualityMode::DiscreteAdjoint,
        "independent" => DualityMode::Independent,
        v => {
            return Err(err(
                "duality.mode",
                format!("expected adjoint or independent, got '{v}'"),
            ))
        }
    };
    let duality = DualityCfg {
        mode,
        nu: d.req_f64("nu")?,
        horizon: d.f64_or("horizon", 1.0)?,
        cfl: d.f64_or("cfl", 0.4)?,
        interpolation: d.interpolation_or("interpolation")?,
        time_samples: d.usize_or("time-samples", 65)?,
    };
    d.finish()?;
    if duality.time_samples < 2 {
        return Err(err("duality.time-samples", "need at least two samples"));
    }
    Ok(Payload::Duality {
        field,
        datum,
        source,
        duality,
    })
}

fn payload_mc(sections: &mut SectionSet) -> Result<Payload, ConfigError> {
    let field = field_cfg(sections)?;
    let mut m = sections.take("mc");
    let direction = match m.word_or("direction", "forward").as_str() {
        "forward" => McDirection::Forward,
        "backward" => McDirection::Backward,
        v => {
            return Err(err(
                "mc.direction",
                format!("expected forward or backward, got '{v}'"),
            ))
        }
    };
    let nu = m.req_f64("nu")?;
    let horizon = m.f64_or("horizon", 1.0)?;
    let default_t = match direction {
        McDirection::Forward => horizon,
        McDirection::Backward => 0.0,
    };
    let mc = McCfg {
        direction,
        nu,
        horizon,
        t: m.f64_or("t", default_t)?,
        samples: m.usize_or("samples", 10_000)?,
        dt: m.f64_or("dt", 1e-3)?,
        probes: m.usize_or("probes", 16)?,
        cfl: m.f64_or("cfl", 0.9)?,
        interpolation: m.interpolation_or("interpolation")?,
    };
    m.finish()?;
    if mc.probes == 0 {
        return Err(err("mc.probes", "need at least one probe point"));
    }
    let (datum, source) = match direction {
        McDirection::Forward => (Some(datum_cfg(sections)?), None),
        McDirection::Backward => (None, Some(source_cfg(sections)?)),
    };
    Ok(Payload::Mc {
        field,
        datum,
        source,
        mc,
    })
}

fn payload_weak(sections: &mut SectionSet) -> Result<Payload, ConfigError> {
    let field = field_cfg(sections)?;
    let datum = datum_cfg(sections)?;
    let mut w = sections.take("weak");
    let weak = WeakCfg {
        strides: w.list_usize_or("strides", &[16, 4, 1])?,
        time_samples: w.usize_or("time-samples", 257)?,
        horizon: w.f64_or("horizon", 1.0)?,
        trace_dt: w.f64_or("trace-dt", 0.0)?,
        tests: w.word_or("tests", "standard"),
    };
    w.finish()?;
    if weak.tests != "standard" {
        return Err(err(
            "weak.tests",
            format!("the only shipped test panel is 'standard', got '{}'", weak.tests),
        ));
    }
    if weak.time_samples < 2 {
        return Err(err("weak.time-samples", "need at least two samples"));
    }
    Ok(Payload::Weak { field, datum, weak })
}

fn payload_demo(sections: &mut SectionSet) -> Result<Payload, ConfigError> {
    let mut d = sections.take("demo");
    let demo = DemoCfg {
        n_max: d.u32_or("n-max", 5)?,
        nodes_per_slab: d.usize_or("nodes-per-slab", 64)?,
        strides: d.list_usize_or("strides", &[4, 2, 1])?,
    };
    d.finish()?;
    Ok(Payload::Demo(demo))
}

fn payload_probe(sections: &mut SectionSet) -> Result<Payload, ConfigError> {
    let field = field_cfg(sections)?;
    let source = source_cfg(sections)?;
    let mut p = sections.take("probe");
    let probe = ProbeCfg {
        nus: p.req_list_f64("nus")?,
        times: p.req_list_f64("times")?,
        horizon: p.f64_or("horizon", 1.0)?,
        cfl: p.f64_or("cfl", 0.9)?,
        interpolation: p.interpolation_or("interpolation")?,
    };
    p.finish()?;
    Ok(Payload::Probe {
        field,
        source,
        probe,
    })
}

impl RunConfig {
    /// Canonical text: fixed section and key order, every default resolved,
    /// floats in shortest round-trip form. Parsing the echo reproduces the
    /// config exactly.
    pub fn echo(&self) -> String {
        let mut parts: Vec<String> = Vec::new();

        let mut run = String::new();
        let _ = writeln!(run, "[run]");
        let _ = writeln!(run, "experiment = {}", self.experiment.as_str());
        let _ = writeln!(run, "seed = {}", self.seed);
        let _ = writeln!(run, "output = {}", self.output);
        let _ = writeln!(run, "allow-underresolved = {}", self.allow_under_resolved);
        parts.push(run);

        parts.push(format!("[grid]\nn = {}\n", self.grid_n));

        match &self.payload {
            Payload::Solve {
                field,
                datum,
                solve,
            } => {
                parts.push(echo_field(field));
                parts.push(echo_datum(datum));
                let mut s = String::new();
                let _ = writeln!(s, "[solve]");
                let _ = writeln!(s, "nu = {}", solve.nu);
                let _ = writeln!(s, "horizon = {}", solve.horizon);
                let scheme = match solve.scheme {
                    Scheme::Splitting => "splitting",
                    Scheme::SpectralGalerkin => "spectral-galerkin",
                    Scheme::PureTransport => "pure-transport",
                };
                let _ = writeln!(s, "scheme = {scheme}");
                let _ = writeln!(s, "interpolation = {}", interp_word(solve.interpolation));
                let _ = writeln!(s, "cfl = {}", solve.cfl);
                let _ = writeln!(s, "outputs = {}", float_list(&solve.outputs));
                parts.push(s);
            }
            Payload::Sweep {
                field,
                datum,
                panel,
                sweep,
                ..
            } => {
                parts.push(echo_field(field));
                parts.push(echo_datum(datum));
                parts.push(format!("[panel]\nkind = {panel}\n"));
                let mut s = String::new();
                let _ = writeln!(s, "[sweep]");
                let _ = writeln!(s, "values = {}", float_list(&sweep.values));
                let _ = writeln!(s, "horizon = {}", sweep.horizon);
                let _ = writeln!(s, "pairing-intervals = {}", sweep.pairing_intervals);
                let _ = writeln!(s, "early-times = {}", float_list(&sweep.early_times));
                let _ = writeln!(s, "cfl = {}", sweep.cfl);
                let _ = writeln!(s, "interpolation = {}", interp_word(sweep.interpolation));
                let _ = writeln!(s, "trace-dt = {}", sweep.trace_dt);
                parts.push(s);
            }
            Payload::Duality {
                field,
                datum,
                source,
                duality,
            } => {
                parts.push(echo_field(field));
                parts.push(echo_datum(datum));
                parts.push(echo_source(source));
                let mut s = String::new();
                let _ = writeln!(s, "[duality]");
                let mode = match duality.mode {
                    DualityMode::DiscreteAdjoint => "adjoint",
                    DualityMode::Independent => "independent",
                };
                let _ = writeln!(s, "mode = {mode}");
                let _ = writeln!(s, "nu = {}", duality.nu);
                let _ = writeln!(s, "horizon = {}", duality.horizon);
                let _ = writeln!(s, "cfl = {}", duality.cfl);
                let _ = writeln!(s, "interpolation = {}", interp_word(duality.interpolation));
                let _ = writeln!(s, "time-samples = {}", duality.time_samples);
                parts.push(s);
            }
            Payload::Mc {
                field,
                datum,
                source,
                mc,
            } => {
                parts.push(echo_field(field));
                if let Some(d) = datum {
                    parts.push(echo_datum(d));
                }
                if let Some(src) = source {
                    parts.push(echo_source(src));
                }
                let mut s = String::new();
                let _ = writeln!(s, "[mc]");
                let direction = match mc.direction {
                    McDirection::Forward => "forward",
                    McDirection::Backward => "backward",
                };
                let _ = writeln!(s, "direction = {direction}");
                let _ = writeln!(s, "nu = {}", mc.nu);
                let _ = writeln!(s, "horizon = {}", mc.horizon);
                let _ = writeln!(s, "t = {}", mc.t);
                let _ = writeln!(s, "samples = {}", mc.samples);
                let _ = writeln!(s, "dt = {}", mc.dt);
                let _ = writeln!(s, "probes = {}", mc.probes);
                let _ = writeln!(s, "cfl = {}", mc.cfl);
                let _ = writeln!(s, "interpolation = {}", interp_word(mc.interpolation));
                parts.push(s);
            }
            Payload::Weak { field, datum, weak } => {
                parts.push(echo_field(field));
                parts.push(echo_datum(datum));
                let mut s = String::new();
                let _ = writeln!(s, "[weak]");
                let _ = writeln!(s, "strides = {}", int_list(&weak.strides));
                let _ = writeln!(s, "time-samples = {}", weak.time_samples);
                let _ = writeln!(s, "horizon = {}", weak.horizon);
                let _ = writeln!(s, "trace-dt = {}", weak.trace_dt);
                let _ = writeln!(s, "tests = {}", weak.tests);
                parts.push(s);
            }
            Payload::Demo(demo) => {
                let mut s = String::new();
                let _ = writeln!(s, "[demo]");
                let _ = writeln!(s, "n-max = {}", demo.n_max);
                let _ = writeln!(s, "nodes-per-slab = {}", demo.nodes_per_slab);
                let _ = writeln!(s, "strides = {}", int_list(&demo.strides));
                parts.push(s);
            }
            Payload::Probe {
                field,
                source,
                probe,
            } => {
                parts.push(echo_field(field));
                parts.push(echo_source(source));
                let mut s = String::new();
                let _ = writeln!(s, "[probe]");
                let _ = writeln!(s, "nus = {}", float_list(&probe.nus));
                let _ = writeln!(s, "times = {}", float_list(&probe.times));
                let _ = writeln!(s, "horizon = {}", probe.horizon);
                let _ = writeln!(s, "cfl = {}", probe.cfl);
                let _ = writeln!(s, "interpolation = {}", interp_word(probe.interpolation));
                parts.push(s);
            }
        }

        parts.join("\n")
    }
}

fn interp_word(i: Interpolation) -> &'static str {
    match i {
        Interpolation::MonotoneBilinear => "monotone-bilinear",
        Interpolation::Cubic => "cubic",
    }
}

fn float_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn int_list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn echo_field(field: &FieldCfg) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[field]");
    match &field.kind {
        FieldKindCfg::Zero => {
            let _ = writeln!(s, "kind = zero");
        }
        FieldKindCfg::Shear { axis, profile } => {
            let _ = writeln!(s, "kind = shear");
            let _ = writeln!(s, "axis = {}", if *axis == Axis::X { "x" } else { "y" });
            match profile {
                ProfileCfg::Sinusoid {
                    amplitude,
                    freq,
                    phase,
                } => {
                    let _ = writeln!(s, "profile = sinusoid");
                    let _ = writeln!(s, "amplitude = {amplitude}");
                    let _ = writeln!(s, "freq = {freq}");
                    let _ = writeln!(s, "phase = {phase}");
                }
                ProfileCfg::DyadicStrips { strip_log2, speed } => {
                    let _ = writeln!(s, "profile = dyadic-strips");
                    let _ = writeln!(s, "strip-log2 = {strip_log2}");
                    let _ = writeln!(s, "speed = {speed}");
                }
            }
        }
        FieldKindCfg::Stream { amplitude, fx, fy } => {
            let _ = writeln!(s, "kind = stream");
            let _ = writeln!(s, "amplitude = {amplitude}");
            let _ = writeln!(s, "fx = {fx}");
            let _ = writeln!(s, "fy = {fy}");
        }
        FieldKindCfg::Exchange {
            n_min,
            n_max,
            orientation,
        } => {
            let _ = writeln!(s, "kind = dyadic-exchange");
            let _ = writeln!(s, "n-min = {n_min}");
            let _ = writeln!(s, "n-max = {n_max}");
            let word = match orientation {
                Orientation::Standard => "standard",
                Orientation::Transposed => "transposed",
            };
            let _ = writeln!(s, "orientation = {word}");
        }
    }
    let _ = writeln!(s, "mollify = {}", field.mollify);
    s
}

fn echo_datum(datum: &DatumCfg) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[datum]");
    match datum {
        DatumCfg::Constant { value } => {
            let _ = writeln!(s, "kind = constant");
            let _ = writeln!(s, "value = {value}");
        }
        DatumCfg::CosineX { freq, amplitude } => {
            let _ = writeln!(s, "kind = cosine-x");
            let _ = writeln!(s, "freq = {freq}");
            let _ = writeln!(s, "amplitude = {amplitude}");
        }
        DatumCfg::CosineY { freq, amplitude } => {
            let _ = writeln!(s, "kind = cosine-y");
            let _ = writeln!(s, "freq = {freq}");
            let _ = writeln!(s, "amplitude = {amplitude}");
        }
        DatumCfg::Checkerboard { level } => {
            let _ = writeln!(s, "kind = checkerboard");
            let _ = writeln!(s, "level = {level}");
        }
        DatumCfg::VerticalStripes { level } => {
            let _ = writeln!(s, "kind = vertical-stripes");
            let _ = writeln!(s, "level = {level}");
        }
        DatumCfg::File { path } => {
            let _ = writeln!(s, "kind = file");
            let _ = writeln!(s, "path = {path}");
        }
    }
    s
}

fn echo_source(source: &SourceCfg) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[source]");
    let _ = writeln!(s, "center-t = {}", source.center_t);
    let _ = writeln!(s, "center-x = {}", source.center_x);
    let _ = writeln!(s, "center-y = {}", source.center_y);
    let _ = writeln!(s, "radius-t = {}", source.radius_t);
    let _ = writeln!(s, "radius-x = {}", source.radius_x);
    let _ = writeln!(s, "amplitude = {}", source.amplitude);
    s
}
