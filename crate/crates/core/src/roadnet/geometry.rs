use super::{RoadnetError, Waypoint};

/// Resamples a polyline so that consecutive waypoints are at most `spacing`
/// apart along the line. Every input vertex is kept, so corners survive and
/// the summed chord length equals the polyline length. Each waypoint takes
/// the heading of the segment leaving it (the last one, of the segment
/// entering it). Node ids are assigned `0..n` in order.
pub fn sample_polyline(points: &[(f64, f64)], spacing: f64) -> Result<Vec<Waypoint>, RoadnetError> {
    if points.len() < 2 {
        return Err(RoadnetError::DegenerateGeometry(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(RoadnetError::DegenerateGeometry(format!(
            "spacing {spacing} must be positive"
        )));
    }
    let segments: Vec<((f64, f64), (f64, f64))> = points
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|(a, b)| (b.0 - a.0).hypot(b.1 - a.1) > 0.0)
        .collect();
    if segments.is_empty() {
        return Err(RoadnetError::DegenerateGeometry(
            "polyline has zero length".into(),
        ));
    }

    let mut out = Vec::new();
    let mut heading = 0.0;
    for &(a, b) in &segments {
        let len = (b.0 - a.0).hypot(b.1 - a.1);
        heading = (b.1 - a.1).atan2(b.0 - a.0);
        let n = intervals(len, spacing);
        for i in 0..n {
            let f = i as f64 / n as f64;
            out.push(Waypoint::new(
                out.len(),
                a.0 + (b.0 - a.0) * f,
                a.1 + (b.1 - a.1) * f,
                heading,
            ));
        }
    }
    let end = segments.last().unwrap().1;
    out.push(Waypoint::new(out.len(), end.0, end.1, heading));
    Ok(out)
}

/// Number of equal intervals needed so that none exceeds `spacing`.
pub(crate) fn intervals(len: f64, spacing: f64) -> usize {
    // the small slack keeps exact multiples (10 / 2) from rounding up
    ((len / spacing) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}
