//! Timestamped vehicle samples and their CSV interchange format.
//!
//! The CSV header is `t,vehicle_id,x,y,heading,speed,fork_height,load_mass,soc`.
//! Lines starting with `#` are comments. Floats are written so that reading
//! them back reproduces the exact same bits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::numfmt::fmt_f64;
use crate::roadnet::normalize_angle;

pub const CSV_HEADER: &str = "t,vehicle_id,x,y,heading,speed,fork_height,load_mass,soc";
const COLUMNS: [&str; 9] = [
    "t",
    "vehicle_id",
    "x",
    "y",
    "heading",
    "speed",
    "fork_height",
    "load_mass",
    "soc",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub vehicle_id: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub fork_height: f64,
    pub load_mass: f64,
    pub soc: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("line {line}: samples of vehicle {vehicle} are not strictly increasing in time")]
    UnsortedSamples { line: u64, vehicle: usize },
}

/// Serializes samples in the given order, optionally preceded by `#` comment
/// lines.
pub fn write_csv(samples: &[TrajectorySample], comments: &[String]) -> String {
    let mut out = String::with_capacity(64 + samples.len() * 120);
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(s.t),
            s.vehicle_id,
            fmt_f64(s.x),
            fmt_f64(s.y),
            fmt_f64(s.heading),
            fmt_f64(s.speed),
            fmt_f64(s.fork_height),
            fmt_f64(s.load_mass),
            fmt_f64(s.soc)
        );
    }
    out
}

/// Parses a trajectory CSV and checks that every vehicle's samples are
/// strictly increasing in time. Vehicles may interleave and may first appear
/// anywhere in the file.
pub fn read_csv(text: &str) -> Result<Vec<TrajectorySample>, TrajectoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TrajectoryError::Schema {
            line: e.position().map_or(1, |p| p.line()),
            message: e.to_string(),
        })?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != COLUMNS {
        return Err(TrajectoryError::Schema {
            line: headers.position().map_or(1, |p| p.line()),
            message: format!(
                "expected header '{CSV_HEADER}', found '{}'",
                found.join(",")
            ),
        });
    }

    let mut out = Vec::new();
    let mut last_t: BTreeMap<usize, f64> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| TrajectoryError::Schema {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != COLUMNS.len() {
            return Err(TrajectoryError::Schema {
                line,
                message: format!("expected {} columns, found {}", COLUMNS.len(), record.len()),
            });
        }
        let num = |i: usize| -> Result<f64, TrajectoryError> {
            record[i]
                .parse::<f64>()
                .map_err(|_| TrajectoryError::Schema {
                    line,
                    message: format!(
                        "column '{}' has invalid number '{}'",
                        COLUMNS[i], &record[i]
                    ),
                })
        };
        let vehicle_id: usize = record[1].parse().map_err(|_| TrajectoryError::Schema {
            line,
            message: format!("column 'vehicle_id' has invalid id '{}'", &record[1]),
        })?;
        let s = TrajectorySample {
            t: num(0)?,
            vehicle_id,
            x: num(2)?,
            y: num(3)?,
            heading: num(4)?,
            speed: num(5)?,
            fork_height: num(6)?,
            load_mass: num(7)?,
            soc: num(8)?,
        };
        if let Some(&prev) = last_t.get(&vehicle_id) {
            if !(s.t > prev) {
                return Err(TrajectoryError::UnsortedSamples {
                    line,
                    vehicle: vehicle_id,
                });
            }
        }
        last_t.insert(vehicle_id, s.t);
        out.push(s);
    }
    Ok(out)
}

/// Splits a mixed stream into per-vehicle tracks, keeping stream order
/// within each track.
pub fn group_by_vehicle(samples: &[TrajectorySample]) -> BTreeMap<usize, Vec<TrajectorySample>> {
    let mut map: BTreeMap<usize, Vec<TrajectorySample>> = BTreeMap::new();
    for s in samples {
        map.entry(s.vehicle_id).or_default().push(*s);
    }
    map
}

/// Index of the first sample whose time is not after its predecessor's.
pub fn first_unsorted(track: &[TrajectorySample]) -> Option<usize> {
    track
        .windows(2)
        .position(|w| !(w[1].t > w[0].t))
        .map(|i| i + 1)
}

/// Linear interpolation of a time-sorted single-vehicle track at `t`.
/// Returns `None` outside the track's time span. Heading follows the shorter
/// arc; load mass is held from the earlier sample. Exact sample times return
/// that sample unchanged.
pub fn interpolate(track: &[TrajectorySample], t: f64) -> Option<TrajectorySample> {
    let first = track.first()?;
    let last = track.last()?;
    if t < first.t || t > last.t {
        return None;
    }
    // index of the first sample with time > t
    let hi = track.partition_point(|s| s.t <= t);
    let a = &track[hi - 1];
    if a.t == t || hi == track.len() {
        return Some(TrajectorySample { t, ..*a });
    }
    let b = &track[hi];
    let f = (t - a.t) / (b.t - a.t);
    let lerp = |u: f64, v: f64| u + (v - u) * f;
    let mut dh = b.heading - a.heading;
    if !(-PI..=PI).contains(&dh) {
        dh = normalize_angle(dh);
    }
    Some(TrajectorySample {
        t,
        vehicle_id: a.vehicle_id,
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        heading: normalize_angle(a.heading + dh * f),
        speed: lerp(a.speed, b.speed),
        fork_height: lerp(a.fork_height, b.fork_height),
        load_mass: a.load_mass,
        soc: lerp(a.soc, b.soc),
    })
}
