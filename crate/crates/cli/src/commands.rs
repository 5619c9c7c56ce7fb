use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use forkfleet::battery::{
    calibrate, predicted_energy, soc_band, BatteryError, CalibrationCycle, CalibrationResult,
    FreeParam,
};
use forkfleet::density::{density_timeline, write_episode_summary, write_report_csv, DensityError};
use forkfleet::fleet::{replay, simulate, FleetError};
use forkfleet::numfmt::fmt_f64;
use forkfleet::odr::{parse_opendrive_subset, to_road_graph};
use forkfleet::placement::{
    heatmap, place_chargers, score_placement, visit_weights, write_heatmap, write_nonzero_csv,
    write_placement_csv, GridSpec, HeatmapGrid, PlacementError,
};
use forkfleet::roadnet::{parse_roadnet, write_roadnet, RoadGraph};
use forkfleet::trajectory::{read_csv, write_csv, TrajectorySample};
use log::{info, warn};

use crate::config::{write_battery, ConfigError, Settings};
use crate::error::CliError;
use crate::output::{Outputs, Provenance};

/// Flags shared by every subcommand. Set flags win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub map: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub config: Option<PathBuf>,
}

/// State assembled before a command runs: merged settings and the inputs
/// read so far, with their digests.
pub struct Context {
    pub settings: Settings,
    pub provenance: Provenance,
    pub out_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))
}

/// Fails with a usage error if any referenced file is missing.
fn require_files(paths: &[&Path]) -> Result<(), CliError> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Usage(format!("no such file: {}", p.display())));
        }
    }
    Ok(())
}

impl Context {
    /// Loads the config file (if any), applies `overrides` and the common
    /// flags, then validates. `overrides` are `(key, value)` pairs in config
    /// syntax.
    pub fn load(common: &Common, overrides: &[(&str, String)]) -> Result<Self, CliError> {
        let (mut settings, config_text) = match &common.config {
            Some(path) => {
                require_files(&[path])?;
                let text = read(path)?;
                let base = path.parent().unwrap_or(Path::new("."));
                (Settings::parse(&text, base)?, Some(text))
            }
            None => (Settings::default(), None),
        };
        for (key, value) in overrides {
            settings
                .apply(key, value, Path::new("."))
                .map_err(|message| ConfigError::Invalid {
                    field: (*key).to_string(),
                    message,
                })?;
        }
        if let Some(seed) = common.seed {
            settings.scenario.seed = seed;
        }
        if let Some(dt) = common.dt {
            settings.scenario.dt = dt;
        }
        if let Some(map) = &common.map {
            settings.map = Some(map.clone());
        }
        settings.validate()?;
        let mut provenance = Provenance::new(settings.scenario.seed);
        if let Some(text) = config_text {
            provenance.add_input("config", text.as_bytes());
        }
        Ok(Self {
            settings,
            provenance,
            out_dir: common.out_dir.clone(),
        })
    }

    fn map_path(&self) -> Result<PathBuf, CliError> {
        self.settings.map.clone().ok_or_else(|| {
            CliError::Usage("a map is required (--map or `map` in the config)".into())
        })
    }

    /// Reads a `.roadnet` file, or converts a `.xodr` one at the configured
    /// spacing.
    pub fn load_map(&mut self) -> Result<RoadGraph, CliError> {
        let path = self.map_path()?;
        require_files(&[&path])?;
        let text = read(&path)?;
        self.provenance.add_input("map", text.as_bytes());
        let graph = if path.extension().is_some_and(|e| e == "xodr") {
            let desc = parse_opendrive_subset(&text).map_err(|e| CliError::input(&path, e))?;
            to_road_graph(&desc, self.settings.spacing).map_err(|e| CliError::input(&path, e))?
        } else {
            parse_roadnet(&text).map_err(|e| CliError::input(&path, e))?
        };
        info!(
            "map {}: {} nodes, {} edges",
            path.display(),
            graph.node_count(),
            graph.edges().len()
        );
        Ok(graph)
    }

    pub fn load_trajectory(&mut self, path: &Path) -> Result<Vec<TrajectorySample>, CliError> {
        require_files(&[path])?;
        let text = read(path)?;
        self.provenance.add_input("trajectory", text.as_bytes());
        read_csv(&text).map_err(|e| CliError::input(path, e))
    }

    fn commit(&self, outputs: Outputs) -> Result<Vec<PathBuf>, CliError> {
        let written = outputs.commit(&self.out_dir)?;
        for p in &written {
            info!("wrote {}", p.display());
        }
        Ok(written)
    }
}

fn fleet_error(e: FleetError, map: &Path) -> CliError {
    match e {
        FleetError::InvalidConfig(message) => ConfigError::Invalid {
            field: "scenario".into(),
            message,
        }
        .into(),
        e @ FleetError::NotEnoughSpots { .. } => CliError::Infeasible(e.to_string()),
        e => CliError::input(map, e),
    }
}

fn soc_csv(p: &Provenance, samples: &[TrajectorySample]) -> Result<String, CliError> {
    let mut out = p.stamp("t,vehicle_id,soc,band\n");
    for s in samples {
        let band = soc_band(s.soc).map_err(|e| CliError::Infeasible(e.to_string()))?;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(s.t),
            s.vehicle_id,
            fmt_f64(s.soc),
            band.as_str()
        );
    }
    Ok(out)
}

pub fn simulate_cmd(mut ctx: Context) -> Result<Vec<PathBuf>, CliError> {
    let graph = ctx.load_map()?;
    let map = ctx.map_path()?;
    let run = simulate(&graph, &ctx.settings.scenario).map_err(|e| fleet_error(e, &map))?;
    let p = &ctx.provenance;
    let mut summary = p.stamp(
        "vehicle_id,distance,tasks_completed,energy_drawn,energy_regenerated,final_soc,band\n",
    );
    for v in &run.summary {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{}",
            v.vehicle_id,
            fmt_f64(v.distance),
            v.tasks_completed,
            fmt_f64(v.energy_drawn),
            fmt_f64(v.energy_regenerated),
            fmt_f64(v.final_soc),
            v.band.as_str()
        );
    }
    let mut out = Outputs::default();
    out.add("trajectory.csv", write_csv(&run.samples, &[p.line()]));
    out.add("soc.csv", soc_csv(p, &run.samples)?);
    out.add("summary.csv", summary);
    ctx.commit(out)
}

pub fn replay_cmd(mut ctx: Context, trajectory: &Path) -> Result<Vec<PathBuf>, CliError> {
    let graph = ctx.load_map()?;
    let samples = ctx.load_trajectory(trajectory)?;
    let s = &ctx.settings.scenario;
    let tl = replay(&samples, &graph, s.dt, &s.spec, &s.battery).map_err(|e| match e {
        FleetError::InvalidConfig(_) => fleet_error(e, trajectory),
        e => CliError::input(trajectory, e),
    })?;
    let p = &ctx.provenance;
    let mut out = Outputs::default();
    out.add("replay.csv", write_csv(&tl.samples, &[p.line()]));
    out.add("soc.csv", soc_csv(p, &tl.samples)?);
    ctx.commit(out)
}

pub fn convert_cmd(mut ctx: Context, input: &Path, output: &str) -> Result<Vec<PathBuf>, CliError> {
    require_files(&[input])?;
    let text = read(input)?;
    ctx.provenance.add_input("input", text.as_bytes());
    let desc = parse_opendrive_subset(&text).map_err(|e| CliError::input(input, e))?;
    let graph =
        to_road_graph(&desc, ctx.settings.spacing).map_err(|e| CliError::input(input, e))?;
    let mut out = Outputs::default();
    out.add(output, ctx.provenance.stamp(&write_roadnet(&graph)));
    ctx.commit(out)
}

pub fn density_cmd(mut ctx: Context, trajectory: &Path) -> Result<Vec<PathBuf>, CliError> {
    let graph = ctx.load_map()?;
    let samples = ctx.load_trajectory(trajectory)?;
    let tl = density_timeline(&samples, &graph, &ctx.settings.density).map_err(|e| match e {
        DensityError::InvalidConfig(message) => ConfigError::Invalid {
            field: "density".into(),
            message,
        }
        .into(),
        e => CliError::input(trajectory, e),
    })?;
    info!("{} critical episodes", tl.episodes.len());
    let p = &ctx.provenance;
    let mut out = Outputs::default();
    out.add("clusters.csv", write_report_csv(&tl, &[p.line()]));
    out.add("episodes.txt", p.stamp(&write_episode_summary(&tl, &graph)));
    ctx.commit(out)
}

fn placement_error(e: PlacementError, trajectory: &Path) -> CliError {
    match e {
        PlacementError::InvalidConfig(message) => ConfigError::Invalid {
            field: "placement".into(),
            message,
        }
        .into(),
        e @ (PlacementError::InfeasibleSeparation | PlacementError::EmptyPlacement) => {
            CliError::Infeasible(e.to_string())
        }
        e => CliError::input(trajectory, e),
    }
}

fn grid_for(
    ctx: &Context,
    graph: &RoadGraph,
    samples: &[TrajectorySample],
    trajectory: &Path,
) -> Result<HeatmapGrid, CliError> {
    let cs = ctx.settings.cell_size;
    let spec = GridSpec::covering(graph, cs, cs).map_err(|e| placement_error(e, trajectory))?;
    let grid = heatmap(samples, spec).map_err(|e| placement_error(e, trajectory))?;
    if grid.overflow > 0 {
        warn!("{} samples fall outside the heatmap extent", grid.overflow);
    }
    Ok(grid)
}

pub fn place_cmd(mut ctx: Context, trajectory: &Path) -> Result<Vec<PathBuf>, CliError> {
    let graph = ctx.load_map()?;
    let samples = ctx.load_trajectory(trajectory)?;
    let err = |e| placement_error(e, trajectory);
    let weights = visit_weights(&samples, &graph, ctx.settings.dwell_weighting).map_err(err)?;
    let result = place_chargers(&graph, &weights, &ctx.settings.placement).map_err(err)?;
    if result.stations.len() < result.k {
        warn!(
            "only {} of {} stations could be placed",
            result.stations.len(),
            result.k
        );
    }
    let detour = score_placement(&result, &samples, &graph).map_err(err)?;
    let grid = grid_for(&ctx, &graph, &samples, trajectory)?;
    let p = &ctx.provenance;
    let mut out = Outputs::default();
    out.add(
        "placement.csv",
        write_placement_csv(
            &result,
            &graph,
            &[p.line(), format!("mean detour {} m", fmt_f64(detour))],
        ),
    );
    out.add("heatmap.txt", p.stamp(&write_heatmap(&grid)));
    ctx.commit(out)
}

pub fn heatmap_cmd(mut ctx: Context, trajectory: &Path) -> Result<Vec<PathBuf>, CliError> {
    let graph = ctx.load_map()?;
    let samples = ctx.load_trajectory(trajectory)?;
    let grid = grid_for(&ctx, &graph, &samples, trajectory)?;
    let p = &ctx.provenance;
    let mut out = Outputs::default();
    out.add("heatmap.txt", p.stamp(&write_heatmap(&grid)));
    out.add("heatmap_cells.csv", p.stamp(&write_nonzero_csv(&grid)));
    ctx.commit(out)
}

/// Manifest rows: trajectory path (relative to the manifest) and measured
/// net energy in joules. A first row whose energy is not a number is taken
/// as a header.
fn read_manifest(path: &Path, text: &str) -> Result<Vec<(String, PathBuf, f64)>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.len() != 2 {
            return Err(CliError::input(
                path,
                format!("line {line}: expected 2 fields, found {}", record.len()),
            ));
        }
        match record[1].parse::<f64>() {
            Ok(j) if j.is_finite() => rows.push((record[0].to_string(), base.join(&record[0]), j)),
            _ if i == 0 => {}
            _ => {
                return Err(CliError::input(
                    path,
                    format!("line {line}: invalid energy '{}'", &record[1]),
                ))
            }
        }
    }
    Ok(rows)
}

pub fn calibrate_cmd(
    mut ctx: Context,
    manifest: &Path,
    free: &[String],
) -> Result<Vec<PathBuf>, CliError> {
    let free = free
        .iter()
        .filter(|n| !n.is_empty())
        .map(|n| {
            FreeParam::from_name(n).ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown free parameter '{n}'; expected one of {}",
                    FreeParam::ALL.map(|p| p.name()).join(", ")
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    require_files(&[manifest])?;
    let text = read(manifest)?;
    ctx.provenance.add_input("manifest", text.as_bytes());
    let rows = read_manifest(manifest, &text)?;
    require_files(&rows.iter().map(|(_, p, _)| p.as_path()).collect::<Vec<_>>())?;
    let mut cycles = Vec::with_capacity(rows.len());
    for (_, path, measured) in &rows {
        let samples = ctx.load_trajectory(path)?;
        cycles.push(CalibrationCycle {
            samples,
            measured: *measured,
        });
    }
    let s = &ctx.settings.scenario;
    let (fit, stalled) = match calibrate(&cycles, &s.spec, &s.battery, &free) {
        Ok(r) => (r, false),
        Err(BatteryError::NoImprovement(best)) => (*best, true),
        Err(e @ BatteryError::Underdetermined { .. }) => {
            return Err(CliError::Infeasible(e.to_string()))
        }
        Err(BatteryError::InvalidParam { name, value }) => {
            return Err(ConfigError::Invalid {
                field: format!("battery.{name}"),
                message: format!("{value} out of range"),
            }
            .into())
        }
        Err(e) => return Err(CliError::input(manifest, e)),
    };
    let out = calibration_outputs(&ctx, &rows, &cycles, &fit)?;
    let written = ctx.commit(out)?;
    if stalled {
        return Err(CliError::Infeasible(format!(
            "calibration made no progress from objective {}; best-so-far parameters written",
            fmt_f64(fit.objective)
        )));
    }
    Ok(written)
}

fn calibration_outputs(
    ctx: &Context,
    rows: &[(String, PathBuf, f64)],
    cycles: &[CalibrationCycle],
    fit: &CalibrationResult,
) -> Result<Outputs, CliError> {
    let p = &ctx.provenance;
    let mut params = p.stamp(&format!(
        "# objective {} after {} sweeps\n",
        fmt_f64(fit.objective),
        fit.sweeps()
    ));
    params.push_str(&write_battery(&fit.params));
    let mut report = p.stamp("cycle,trajectory,measured,predicted,residual\n");
    for (i, ((name, path, measured), c)) in rows.iter().zip(cycles).enumerate() {
        let predicted = predicted_energy(&c.samples, &ctx.settings.scenario.spec, &fit.params)
            .map_err(|e| CliError::input(path, e))?;
        let _ = writeln!(
            report,
            "{i},{name},{},{},{}",
            fmt_f64(*measured),
            fmt_f64(predicted),
            fmt_f64(fit.residuals[i])
        );
    }
    let mut out = Outputs::default();
    out.add("calibrated.conf", params);
    out.add("residuals.csv", report);
    Ok(out)
}
