//! Passive playback of recorded trajectories on the world's time grid.

use std::collections::BTreeMap;

use log::warn;

use super::FleetError;
use crate::battery::{integrate_trajectory, BatteryParams, Integration, VehicleSpec};
use crate::roadnet::RoadGraph;
use crate::trajectory::{first_unsorted, group_by_vehicle, interpolate, TrajectorySample};

/// Slack for deciding whether a sample time is already on the grid.
const GRID_SLACK: f64 = 1e-9;
const BOUNDS_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTimeline {
    pub dt: f64,
    /// Grid samples ordered by time, then vehicle id. `soc` is recomputed
    /// by the battery model from each vehicle's first grid sample.
    pub samples: Vec<TrajectorySample>,
    pub energy: BTreeMap<usize, Integration>,
}

impl ReplayTimeline {
    pub fn track(&self, vehicle: usize) -> Vec<TrajectorySample> {
        self.samples
            .iter()
            .filter(|s| s.vehicle_id == vehicle)
            .copied()
            .collect()
    }
}

/// Resamples each vehicle's track at `t = k·dt` within its recorded span.
/// Vehicles appear at their first sample and vanish after their last.
pub fn replay(
    samples: &[TrajectorySample],
    graph: &RoadGraph,
    dt: f64,
    spec: &VehicleSpec,
    battery: &BatteryParams,
) -> Result<ReplayTimeline, FleetError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FleetError::InvalidConfig(format!(
            "dt = {dt} must be positive"
        )));
    }
    let bounds = graph.bounding_box();
    let mut rows: Vec<(u64, TrajectorySample)> = Vec::new();
    let mut energy = BTreeMap::new();
    for (vehicle, track) in group_by_vehicle(samples) {
        if let Some(index) = first_unsorted(&track) {
            return Err(FleetError::UnsortedSamples { vehicle, index });
        }
        let (t0, t1) = (track[0].t, track[track.len() - 1].t);
        let k0 = (t0 / dt - GRID_SLACK).ceil().max(0.0) as u64;
        let k1 = (t1 / dt + GRID_SLACK).floor();
        if k1 < k0 as f64 {
            continue;
        }
        let mut grid = Vec::new();
        for k in k0..=k1 as u64 {
            let t = k as f64 * dt;
            let s = interpolate(&track, t.clamp(t0, t1)).expect("inside the span");
            grid.push(TrajectorySample { t, ..s });
        }
        if let Some((x0, y0, x1, y1)) = bounds {
            let outside = grid.iter().filter(|s| {
                s.x < x0 - BOUNDS_MARGIN
                    || s.x > x1 + BOUNDS_MARGIN
                    || s.y < y0 - BOUNDS_MARGIN
                    || s.y > y1 + BOUNDS_MARGIN
            });
            let n = outside.count();
            if n > 0 {
                warn!("vehicle {vehicle}: {n} replayed samples lie outside the map");
            }
        }
        let integration = integrate_trajectory(&grid, spec, battery, grid[0].soc.clamp(0.0, 1.0))?;
        for (s, st) in grid.iter_mut().zip(&integration.series) {
            s.soc = st.soc;
        }
        rows.extend(grid.into_iter().zip(k0..).map(|(s, k)| (k, s)));
        energy.insert(vehicle, integration);
    }
    rows.sort_by_key(|&(k, s)| (k, s.vehicle_id));
    Ok(ReplayTimeline {
        dt,
        samples: rows.into_iter().map(|(_, s)| s).collect(),
        energy,
    })
}
