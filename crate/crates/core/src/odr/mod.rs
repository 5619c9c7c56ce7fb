//! Import of road networks from the OpenDRIVE markup format.
//!
//! Only a small subset is understood: `road` elements with `planView`
//! geometry made of `line` and `arc` records, driving-lane counts from the
//! first `laneSection`, and road-to-road `link` records. Other content is
//! skipped with a warning; spiral and polynomial geometry is rejected.

mod graph;

use log::warn;
use roxmltree::{Document, Node};
use thiserror::Error;

pub use graph::{to_road_graph, to_road_graph_with, DEFAULT_SPEED_LIMIT};

/// Join tolerance between consecutive geometry records of one road, and
/// between declared and summed road length.
pub const CONTINUITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdrError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("road {road}: unsupported geometry <{element}>")]
    UnsupportedGeometry { road: String, element: String },
    #[error("<{element}> is missing attribute '{attribute}'{}", road_suffix(.road))]
    MissingAttribute {
        element: String,
        attribute: String,
        road: Option<String>,
    },
    #[error("<{element}> attribute '{attribute}' has invalid value '{value}'")]
    InvalidAttribute {
        element: String,
        attribute: String,
        value: String,
    },
    #[error("road {road}: geometry gap of {gap} m at s = {s}")]
    GeometryGap { road: String, s: f64, gap: f64 },
    #[error("road {road}: geometry s-offsets are not strictly increasing at s = {s}")]
    NonIncreasingOffsets { road: String, s: f64 },
    #[error("road {road}: declared length {declared} differs from geometry length {summed}")]
    LengthMismatch {
        road: String,
        declared: f64,
        summed: f64,
    },
    #[error("road {0} has zero length")]
    DegenerateRoad(String),
    #[error("duplicate road id {0}")]
    DuplicateRoad(String),
    #[error("linked road ends {a} and {b} are {gap} m apart")]
    LinkGap { a: String, b: String, gap: f64 },
    #[error("spacing {0} must be positive")]
    InvalidSpacing(f64),
}

fn road_suffix(road: &Option<String>) -> String {
    road.as_ref()
        .map(|r| format!(" (road {r})"))
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Line,
    Arc { curvature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometrySegment {
    pub kind: SegmentKind,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub hdg: f64,
    pub length: f64,
}

impl GeometrySegment {
    /// Position and heading at distance `ds` from the segment start.
    pub fn eval(&self, ds: f64) -> (f64, f64, f64) {
        match self.kind {
            SegmentKind::Line => (
                self.x + ds * self.hdg.cos(),
                self.y + ds * self.hdg.sin(),
                self.hdg,
            ),
            SegmentKind::Arc { curvature: k } => {
                let h = self.hdg + k * ds;
                // center sits at distance 1/k to the left of the start heading
                let x = self.x + (h.sin() - self.hdg.sin()) / k;
                let y = self.y - (h.cos() - self.hdg.cos()) / k;
                (x, y, h)
            }
        }
    }

    pub fn end(&self) -> (f64, f64, f64) {
        self.eval(self.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPoint {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkTarget {
    Road {
        id: String,
        contact: ContactPoint,
    },
    /// Junction records are not imported; kept so callers can see them.
    Junction(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub id: String,
    pub length: f64,
    pub plan_view: Vec<GeometrySegment>,
    pub left_lanes: usize,
    pub right_lanes: usize,
    pub predecessor: Option<LinkTarget>,
    pub successor: Option<LinkTarget>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadDescription {
    pub roads: Vec<Road>,
}

impl RoadDescription {
    pub fn road(&self, id: &str) -> Option<&Road> {
        self.roads.iter().find(|r| r.id == id)
    }
}

fn attr<'a>(node: Node<'a, '_>, name: &str, road: Option<&str>) -> Result<&'a str, OdrError> {
    node.attribute(name)
        .ok_or_else(|| OdrError::MissingAttribute {
            element: node.tag_name().name().to_string(),
            attribute: name.to_string(),
            road: road.map(str::to_string),
        })
}

fn num_attr(node: Node<'_, '_>, name: &str, road: Option<&str>) -> Result<f64, OdrError> {
    let raw = attr(node, name, road)?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| OdrError::InvalidAttribute {
            element: node.tag_name().name().to_string(),
            attribute: name.to_string(),
            value: raw.to_string(),
        })
}

fn children<'a, 'i>(node: Node<'a, 'i>, tag: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    node.children()
        .filter(move |c| c.is_element() && c.tag_name().name() == tag)
}

/// Parses the supported subset of an OpenDRIVE document.
pub fn parse_opendrive_subset(text: &str) -> Result<RoadDescription, OdrError> {
    let doc = Document::parse(text).map_err(|e| OdrError::MalformedDocument(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "OpenDRIVE" {
        return Err(OdrError::MalformedDocument(format!(
            "root element is <{}>, expected <OpenDRIVE>",
            root.tag_name().name()
        )));
    }
    let mut desc = RoadDescription::default();
    for child in root.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "road" => {
                let road = parse_road(child)?;
                if desc.road(&road.id).is_some() {
                    return Err(OdrError::DuplicateRoad(road.id));
                }
                desc.roads.push(road);
            }
            "header" => {}
            other => warn!("skipping unsupported top-level element <{other}>"),
        }
    }
    Ok(desc)
}

fn parse_road(node: Node<'_, '_>) -> Result<Road, OdrError> {
    let id = attr(node, "id", None)?.to_string();
    let rid = Some(id.as_str());
    let length = num_attr(node, "length", rid)?;

    let mut predecessor = None;
    let mut successor = None;
    let mut plan_view = Vec::new();
    let mut lanes = None;

    for child in node.children().filter(Node::is_element) {
        match child.tag_name().name() {
            "link" => {
                for l in child.children().filter(Node::is_element) {
                    let target = parse_link(l, &id)?;
                    match l.tag_name().name() {
                        "predecessor" => predecessor = Some(target),
                        "successor" => successor = Some(target),
                        other => warn!("road {id}: skipping <link> child <{other}>"),
                    }
                }
            }
            "planView" => {
                for g in children(child, "geometry") {
                    plan_view.push(parse_geometry(g, &id)?);
                }
            }
            "lanes" => {
                let mut sections = children(child, "laneSection");
                if let Some(first) = sections.next() {
                    lanes = Some(count_driving_lanes(first));
                }
                if sections.next().is_some() {
                    warn!("road {id}: only the first laneSection is used");
                }
            }
            other => warn!("road {id}: skipping <{other}>"),
        }
    }

    check_plan_view(&id, length, &plan_view)?;
    let (left_lanes, right_lanes) = lanes.unwrap_or_else(|| {
        warn!("road {id}: no lanes given, assuming one driving lane each way");
        (1, 1)
    });
    Ok(Road {
        id,
        length,
        plan_view,
        left_lanes,
        right_lanes,
        predecessor,
        successor,
    })
}

fn parse_link(node: Node<'_, '_>, road: &str) -> Result<LinkTarget, OdrError> {
    let kind = attr(node, "elementType", Some(road))?;
    let target = attr(node, "elementId", Some(road))?.to_string();
    match kind {
        "road" => {
            let default = if node.tag_name().name() == "predecessor" {
                ContactPoint::End
            } else {
                ContactPoint::Start
            };
            let contact = match node.attribute("contactPoint") {
                None => default,
                Some("start") => ContactPoint::Start,
                Some("end") => ContactPoint::End,
                Some(other) => {
                    return Err(OdrError::InvalidAttribute {
                        element: node.tag_name().name().to_string(),
                        attribute: "contactPoint".into(),
                        value: other.into(),
                    })
                }
            };
            Ok(LinkTarget::Road {
                id: target,
                contact,
            })
        }
        "junction" => Ok(LinkTarget::Junction(target)),
        other => Err(OdrError::InvalidAttribute {
            element: node.tag_name().name().to_string(),
            attribute: "elementType".into(),
            value: other.into(),
        }),
    }
}

fn parse_geometry(node: Node<'_, '_>, road: &str) -> Result<GeometrySegment, OdrError> {
    let rid = Some(road);
    let s = num_attr(node, "s", rid)?;
    let x = num_attr(node, "x", rid)?;
    let y = num_attr(node, "y", rid)?;
    let hdg = num_attr(node, "hdg", rid)?;
    let length = num_attr(node, "length", rid)?;
    if !(length > 0.0) {
        return Err(OdrError::InvalidAttribute {
            element: "geometry".into(),
            attribute: "length".into(),
            value: length.to_string(),
        });
    }
    let shape = node.children().find(Node::is_element).ok_or_else(|| {
        OdrError::MalformedDocument(format!("road {road}: <geometry> at s = {s} has no shape"))
    })?;
    let kind = match shape.tag_name().name() {
        "line" => SegmentKind::Line,
        "arc" => {
            let curvature = num_attr(shape, "curvature", rid)?;
            if curvature == 0.0 {
                return Err(OdrError::InvalidAttribute {
                    element: "arc".into(),
                    attribute: "curvature".into(),
                    value: "0".into(),
                });
            }
            SegmentKind::Arc { curvature }
        }
        other => {
            return Err(OdrError::UnsupportedGeometry {
                road: road.to_string(),
                element: other.to_string(),
            })
        }
    };
    Ok(GeometrySegment {
        kind,
        s,
        x,
        y,
        hdg,
        length,
    })
}

fn count_driving_lanes(section: Node<'_, '_>) -> (usize, usize) {
    let count = |side: &str| {
        children(section, side)
            .flat_map(|s| children(s, "lane"))
            .filter(|l| l.attribute("type").is_none_or(|t| t == "driving"))
            .count()
    };
    (count("left"), count("right"))
}

fn check_plan_view(road: &str, length: f64, segs: &[GeometrySegment]) -> Result<(), OdrError> {
    if length <= 0.0 {
        return Err(OdrError::DegenerateRoad(road.to_string()));
    }
    let mut summed = 0.0;
    for (i, seg) in segs.iter().enumerate() {
        if i > 0 {
            let prev = &segs[i - 1];
            if seg.s <= prev.s {
                return Err(OdrError::NonIncreasingOffsets {
                    road: road.to_string(),
                    s: seg.s,
                });
            }
            let (ex, ey, _) = prev.end();
            let gap = (ex - seg.x).hypot(ey - seg.y);
            if gap > CONTINUITY_TOLERANCE {
                return Err(OdrError::GeometryGap {
                    road: road.to_string(),
                    s: seg.s,
                    gap,
                });
            }
        }
        summed += seg.length;
    }
    if segs.is_empty() || (summed - length).abs() > CONTINUITY_TOLERANCE {
        return Err(OdrError::LengthMismatch {
            road: road.to_string(),
            declared: length,
            summed,
        });
    }
    Ok(())
}
