//! Line-oriented `key = value` scenario files.
//!
//! `#` starts a comment. Every key may appear at most once; unknown keys are
//! rejected. Relative `map` paths resolve against the file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use forkfleet::battery::BatteryParams;
use forkfleet::density::{DensityConfig, Linkage};
use forkfleet::fleet::{PolicyConfig, ScenarioConfig, TaskKind};
use forkfleet::placement::{PlacementConfig, DEFAULT_CELL_SIZE};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config line {line} ({field}): {message}")]
    Line {
        line: usize,
        field: String,
        message: String,
    },
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
}

/// Everything a command can take from a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub map: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub density: DensityConfig,
    pub placement: PlacementConfig,
    pub cell_size: f64,
    /// Weight placement visits by dwell time instead of sample count.
    pub dwell_weighting: bool,
    /// Waypoint spacing when converting road descriptions, m.
    pub spacing: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            map: None,
            scenario: ScenarioConfig::default(),
            density: DensityConfig::default(),
            placement: PlacementConfig::default(),
            cell_size: DEFAULT_CELL_SIZE,
            dwell_weighting: false,
            spacing: 1.0,
        }
    }
}

fn num(v: &str) -> Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("expected a number, found '{v}'"))
}

fn int<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("expected a non-negative integer, found '{v}'"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, found '{v}'")),
    }
}

fn policy(v: &str) -> Result<PolicyConfig, String> {
    let mut toks = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty());
    match toks.next() {
        Some("random") if toks.next().is_none() => Ok(PolicyConfig::Random),
        Some("fixed") => {
            let spots = toks.map(int).collect::<Result<Vec<usize>, _>>()?;
            if spots.is_empty() {
                return Err("fixed policy needs at least one spot id".into());
            }
            Ok(PolicyConfig::Fixed(spots))
        }
        _ => Err(format!(
            "expected 'random' or 'fixed <spot ids>', found '{v}'"
        )),
    }
}

impl Settings {
    /// Sets one key from its textual value.
    pub fn apply(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let sc = &mut self.scenario;
        let k = &mut sc.kinematics;
        let b = &mut sc.battery;
        match key {
            "map" => self.map = Some(base.join(value)),
            "vehicle_count" => sc.vehicle_count = int(value)?,
            "seed" => sc.seed = int(value)?,
            "dt" => sc.dt = num(value)?,
            "duration" => sc.duration = num(value)?,
            "dwell" => sc.dwell = num(value)?,
            "initial_soc" => sc.initial_soc = num(value)?,
            "policy" => sc.policy = policy(value)?,
            "task.kind" => {
                sc.task.kind = TaskKind::parse(value).ok_or_else(|| {
                    format!("expected pick_and_place or relocate, found '{value}'")
                })?
            }
            "task.pickup_mass" => sc.task.pickup_mass = num(value)?,
            "task.lift_height" => sc.task.lift_height = num(value)?,
            "kinematics.v_max" => k.v_max = num(value)?,
            "kinematics.a_max" => k.a_max = num(value)?,
            "kinematics.b_max" => k.b_max = num(value)?,
            "kinematics.a_lat_max" => k.a_lat_max = num(value)?,
            "kinematics.lift_speed" => k.lift_speed = num(value)?,
            "kinematics.d_safe" => k.d_safe = num(value)?,
            "kinematics.horizon" => k.horizon = num(value)?,
            "kinematics.t_deadlock" => k.t_deadlock = num(value)?,
            "kinematics.yield_distance" => k.yield_distance = num(value)?,
            "kinematics.yield_speed" => k.yield_speed = num(value)?,
            "vehicle.truck_mass" => sc.spec.truck_mass = num(value)?,
            "vehicle.fork_mass" => sc.spec.fork_mass = num(value)?,
            "vehicle.rated_capacity" => sc.spec.rated_capacity = num(value)?,
            "battery.capacity" => b.capacity = num(value)?,
            "battery.c_rr" => b.c_rr = num(value)?,
            "battery.c_steer" => b.c_steer = num(value)?,
            "battery.eta_drive" => b.eta_drive = num(value)?,
            "battery.eta_regen" => b.eta_regen = num(value)?,
            "battery.g" => b.g = num(value)?,
            "battery.aux_power" => b.aux_power = num(value)?,
            "density.distance_threshold" => self.density.distance_threshold = num(value)?,
            "density.velocity_threshold" => self.density.velocity_threshold = num(value)?,
            "density.linkage" => {
                self.density.linkage = match value {
                    "symmetric_min" => Linkage::SymmetricMin,
                    "directed_either" => Linkage::DirectedEither,
                    _ => {
                        return Err(format!(
                            "expected symmetric_min or directed_either, found '{value}'"
                        ))
                    }
                }
            }
            "density.snapshot_interval" => self.density.snapshot_interval = num(value)?,
            "placement.k" => self.placement.k = int(value)?,
            "placement.min_separation" => self.placement.min_separation = num(value)?,
            "placement.d_scale" => self.placement.d_scale = num(value)?,
            "placement.cell_size" => self.cell_size = num(value)?,
            "placement.dwell_weighting" => self.dwell_weighting = boolean(value)?,
            "convert.spacing" => self.spacing = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parses a scenario file on top of the defaults.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |field: &str, message: String| ConfigError::Line {
                line: i + 1,
                field: field.to_string(),
                message,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(line, "expected 'key = value'".into()));
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(key, "key given more than once".into()));
            }
            s.apply(key, value, base).map_err(|m| err(key, m))?;
            seen.push(key.to_string());
        }
        Ok(s)
    }

    /// Range checks, run after file and flag values are merged.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            field: field.to_string(),
            message,
        };
        self.scenario
            .validate()
            .map_err(|e| invalid("scenario", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.scenario.initial_soc) {
            return Err(invalid(
                "initial_soc",
                format!("{} outside [0, 1]", self.scenario.initial_soc),
            ));
        }
        self.density
            .validate()
            .map_err(|e| invalid("density", e.to_string()))?;
        let p = &self.placement;
        if p.k == 0 {
            return Err(invalid("placement.k", "must be at least 1".into()));
        }
        if !(p.min_separation >= 0.0) {
            return Err(invalid(
                "placement.min_separation",
                format!("{} is negative", p.min_separation),
            ));
        }
        if !(p.d_scale > 0.0) {
            return Err(invalid(
                "placement.d_scale",
                format!("{} must be positive", p.d_scale),
            ));
        }
        if !(self.cell_size > 0.0) {
            return Err(invalid(
                "placement.cell_size",
                format!("{} must be positive", self.cell_size),
            ));
        }
        if !(self.spacing > 0.0) {
            return Err(invalid(
                "convert.spacing",
                format!("{} must be positive", self.spacing),
            ));
        }
        Ok(())
    }
}

/// Battery coefficients in scenario-file form, one `battery.*` key per line.
pub fn write_battery(p: &BatteryParams) -> String {
    let mut out = String::new();
    for (key, v) in [
        ("capacity", p.capacity),
        ("c_rr", p.c_rr),
        ("c_steer", p.c_steer),
        ("eta_drive", p.eta_drive),
        ("eta_regen", p.eta_regen),
        ("g", p.g),
        ("aux_power", p.aux_power),
    ] {
        let _ = writeln!(out, "battery.{key} = {v:?}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Every accepted key, in documentation order.
    const KEYS: &[&str] = &[
        "map",
        "vehicle_count",
        "seed",
        "dt",
        "duration",
        "dwell",
        "initial_soc",
        "policy",
        "task.kind",
        "task.pickup_mass",
        "task.lift_height",
        "kinematics.v_max",
        "kinematics.a_max",
        "kinematics.b_max",
        "kinematics.a_lat_max",
        "kinematics.lift_speed",
        "kinematics.d_safe",
        "kinematics.horizon",
        "kinematics.t_deadlock",
        "kinematics.yield_distance",
        "kinematics.yield_speed",
        "vehicle.truck_mass",
        "vehicle.fork_mass",
        "vehicle.rated_capacity",
        "battery.capacity",
        "battery.c_rr",
        "battery.c_steer",
        "battery.eta_drive",
        "battery.eta_regen",
        "battery.g",
        "battery.aux_power",
        "density.distance_threshold",
        "density.velocity_threshold",
        "density.linkage",
        "density.snapshot_interval",
        "placement.k",
        "placement.min_separation",
        "placement.d_scale",
        "placement.cell_size",
        "placement.dwell_weighting",
        "convert.spacing",
    ];

    #[test]
    fn every_key_is_accepted() {
        let sample = |k: &str| match k {
            "map" => "m.roadnet",
            "policy" => "fixed 1, 2",
            "task.kind" => "relocate",
            "density.linkage" => "directed_either",
            "placement.dwell_weighting" => "true",
            "initial_soc" | "battery.eta_drive" | "battery.eta_regen" => "0.5",
            _ => "3",
        };
        let text: String = KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", sample(k)))
            .collect();
        let s = Settings::parse(&text, Path::new("/cfg")).unwrap();
        assert_eq!(s.map, Some(PathBuf::from("/cfg/m.roadnet")));
        assert_eq!(s.scenario.policy, PolicyConfig::Fixed(vec![1, 2]));
        assert_eq!(s.scenario.task.kind, TaskKind::Relocate);
        assert_eq!(s.spacing, 3.0);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = Settings::parse("seed = 1\n\n dt = fast\n", Path::new(".")).unwrap_err();
        assert_eq!(
            e,
            ConfigError::Line {
                line: 3,
                field: "dt".into(),
                message: "expected a number, found 'fast'".into()
            }
        );
        assert!(matches!(
            Settings::parse("colour = red", Path::new(".")),
            Err(ConfigError::Line { line: 1, .. })
        ));
        assert!(matches!(
            Settings::parse("seed = 1\nseed = 2", Path::new(".")),
            Err(ConfigError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn battery_output_parses_back() {
        let p = BatteryParams {
            c_rr: 0.0123456789012345,
            ..BatteryParams::default()
        };
        let s = Settings::parse(&write_battery(&p), Path::new(".")).unwrap();
        assert_eq!(s.scenario.battery, p);
    }
}
