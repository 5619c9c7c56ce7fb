//! Native line-oriented graph file.
//!
//! ```text
//! roadnet v1
//! node <id> <x> <y> <heading>
//! edge <from> <to> <length> <speed_limit> <one_way:0|1>
//! spot <id> <edge_from> <edge_to> <offset>
//! ```
//!
//! `#` starts a comment. A spot names its anchor edge by endpoints; the first
//! edge listed with those endpoints is used.

use std::fmt::Write as _;

use super::{build_graph, Edge, EdgeId, NodeId, ParkingSpot, RoadGraph, RoadnetError, Waypoint};
use crate::numfmt::fmt_f64;

pub const HEADER: &str = "roadnet v1";

fn parse_err(line: usize, message: impl Into<String>) -> RoadnetError {
    RoadnetError::Parse {
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, RoadnetError> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

pub fn parse_roadnet(text: &str) -> Result<RoadGraph, RoadnetError> {
    let mut nodes: Vec<(usize, Waypoint, usize)> = Vec::new();
    let mut edges = Vec::new();
    let mut spots: Vec<(usize, usize, usize, f64, usize)> = Vec::new();
    let mut saw_header = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line.split_whitespace().collect::<Vec<_>>() != ["roadnet", "v1"] {
                return Err(parse_err(line_no, format!("expected header '{HEADER}'")));
            }
            saw_header = true;
            continue;
        }
        let mut toks = line.split_whitespace();
        let kind = toks.next().unwrap();
        match kind {
            "node" => {
                let id: usize = field(toks.next(), line_no, "node id")?;
                let x: f64 = field(toks.next(), line_no, "x")?;
                let y: f64 = field(toks.next(), line_no, "y")?;
                let h: f64 = field(toks.next(), line_no, "heading")?;
                nodes.push((id, Waypoint::new(id, x, y, h), line_no));
            }
            "edge" => {
                let from: usize = field(toks.next(), line_no, "edge from")?;
                let to: usize = field(toks.next(), line_no, "edge to")?;
                let length: f64 = field(toks.next(), line_no, "length")?;
                let speed: f64 = field(toks.next(), line_no, "speed limit")?;
                let one_way = match toks.next() {
                    Some("1") => true,
                    Some("0") => false,
                    other => {
                        return Err(parse_err(
                            line_no,
                            format!("one_way must be 0 or 1, got {other:?}"),
                        ))
                    }
                };
                edges.push(Edge::new(from, to, length, speed, one_way));
            }
            "spot" => {
                let id: usize = field(toks.next(), line_no, "spot id")?;
                let from: usize = field(toks.next(), line_no, "spot edge_from")?;
                let to: usize = field(toks.next(), line_no, "spot edge_to")?;
                let offset: f64 = field(toks.next(), line_no, "offset")?;
                spots.push((id, from, to, offset, line_no));
            }
            other => return Err(parse_err(line_no, format!("unknown record '{other}'"))),
        }
        if let Some(extra) = toks.next() {
            return Err(parse_err(
                line_no,
                format!("unexpected trailing token '{extra}'"),
            ));
        }
    }
    if !saw_header {
        return Err(parse_err(1, format!("expected header '{HEADER}'")));
    }

    nodes.sort_by_key(|n| n.0);
    for (pos, (id, _, line)) in nodes.iter().enumerate() {
        if *id != pos {
            return Err(parse_err(
                *line,
                format!("node ids must be dense from 0; expected {pos}, found {id}"),
            ));
        }
    }
    let waypoints: Vec<Waypoint> = nodes.into_iter().map(|n| n.1).collect();

    let mut parking = Vec::with_capacity(spots.len());
    for (id, from, to, offset, line) in spots {
        let anchor = edges
            .iter()
            .position(|e| e.from == NodeId(from) && e.to == NodeId(to))
            .ok_or_else(|| {
                RoadnetError::DanglingReference(format!(
                    "line {line}: spot {id} names missing edge {from} -> {to}"
                ))
            })?;
        parking.push(ParkingSpot {
            id,
            anchor_edge: EdgeId(anchor),
            offset,
            occupied_by: None,
        });
    }
    build_graph(waypoints, edges, parking)
}

/// Serializes a graph. Output is a pure function of the graph contents.
pub fn write_roadnet(g: &RoadGraph) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for w in g.waypoints() {
        let _ = writeln!(
            out,
            "node {} {} {} {}",
            w.node.0,
            fmt_f64(w.x),
            fmt_f64(w.y),
            fmt_f64(w.heading)
        );
    }
    for e in g.edges() {
        let _ = writeln!(
            out,
            "edge {} {} {} {} {}",
            e.from.0,
            e.to.0,
            fmt_f64(e.length),
            fmt_f64(e.speed_limit),
            u8::from(e.one_way)
        );
    }
    for s in g.parking_spots() {
        let e = g.edge(s.anchor_edge);
        let _ = writeln!(
            out,
            "spot {} {} {} {}",
            s.id,
            e.from.0,
            e.to.0,
            fmt_f64(s.offset)
        );
    }
    out
}
