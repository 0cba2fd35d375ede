//! Layout text format, cluster report CSV and the synthetic layout generator.
//!
//! Layout records, one per line (`#` starts a comment):
//!
//! ```text
//! HEADER RADIUS <int> CONSTRAINT <COSINE|EDGEMOVE> THRESHOLD <decimal>
//! POLY <id> <x1> <y1> ... <xk> <yk>
//! MARKER <id> <xlo> <ylo> <xhi> <yhi>
//! ```

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Coord, GeometryError, Marker, Pattern, Point, Polygon, Rect};
use crate::raster::{self, cosine};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    Cosine,
    EdgeMove,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintKind::Cosine => "COSINE",
            ConstraintKind::EdgeMove => "EDGEMOVE",
        })
    }
}

impl FromStr for ConstraintKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "COSINE" => Ok(ConstraintKind::Cosine),
            "EDGEMOVE" => Ok(ConstraintKind::EdgeMove),
            other => Err(format!("unknown constraint '{other}'")),
        }
    }
}

/// The active similarity constraint with its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    /// Patterns match when the DCT cosine similarity is at least `threshold`.
    Cosine { threshold: f64 },
    /// Patterns match when every corresponding edge moves at most `threshold` nm.
    EdgeMove { threshold: f64 },
}

impl Constraint {
    pub fn kind(&self) -> ConstraintKind {
        match self {
            Constraint::Cosine { .. } => ConstraintKind::Cosine,
            Constraint::EdgeMove { .. } => ConstraintKind::EdgeMove,
        }
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            Constraint::Cosine { threshold } | Constraint::EdgeMove { threshold } => threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPolygon {
    pub id: u64,
    pub polygon: Polygon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub design_polygons: Vec<DesignPolygon>,
    pub markers: Vec<Marker>,
    pub pattern_radius: Coord,
    pub constraint_kind: ConstraintKind,
    pub threshold: f64,
}

impl LayoutDocument {
    pub fn constraint(&self) -> Constraint {
        match self.constraint_kind {
            ConstraintKind::Cosine => Constraint::Cosine {
                threshold: self.threshold,
            },
            ConstraintKind::EdgeMove => Constraint::EdgeMove {
                threshold: self.threshold,
            },
        }
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint_kind = constraint.kind();
        self.threshold = constraint.threshold();
        self
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: polygon {id} is not Manhattan at vertex {vertex} ({from:?} -> {to:?})")]
    NonManhattan {
        line: usize,
        id: u64,
        vertex: usize,
        from: Point,
        to: Point,
    },
    #[error("line {line}: polygon {id}: {source}")]
    InvalidPolygon {
        line: usize,
        id: u64,
        source: GeometryError,
    },
    #[error("missing HEADER record")]
    MissingHeader,
    #[error("line {line}: HEADER is missing {field}")]
    MissingField { line: usize, field: &'static str },
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

fn num<T: FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, ParseError> {
    let tok = tok.ok_or_else(|| syntax(line, format!("expected {what}")))?;
    tok.parse().map_err(|_| syntax(line, format!("invalid {what} '{tok}'")))
}

/// Parses the layout text format.
pub fn parse_layout(bytes: &[u8]) -> Result<LayoutDocument, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError::InvalidUtf8)?;
    let mut header: Option<(Coord, ConstraintKind, f64)> = None;
    let mut design_polygons = Vec::new();
    let mut markers = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        let Some(kind) = toks.next() else { continue };
        match kind {
            "HEADER" => {
                if header.is_some() {
                    return Err(syntax(line, "duplicate HEADER"));
                }
                let (mut radius, mut constraint, mut threshold) = (None, None, None);
                while let Some(key) = toks.next() {
                    match key {
                        "RADIUS" => radius = Some(num::<Coord>(toks.next(), line, "radius")?),
                        "CONSTRAINT" => {
                            let v = toks.next().ok_or_else(|| syntax(line, "expected constraint"))?;
                            constraint = Some(v.parse::<ConstraintKind>().map_err(|m| syntax(line, m))?);
                        }
                        "THRESHOLD" => threshold = Some(num::<f64>(toks.next(), line, "threshold")?),
                        other => return Err(syntax(line, format!("unknown HEADER field '{other}'"))),
                    }
                }
                let radius = radius.ok_or(ParseError::MissingField { line, field: "RADIUS" })?;
                let constraint = constraint.ok_or(ParseError::MissingField {
                    line,
                    field: "CONSTRAINT",
                })?;
                let threshold = threshold.ok_or(ParseError::MissingField {
                    line,
                    field: "THRESHOLD",
                })?;
                if radius <= 0 {
                    return Err(syntax(line, "RADIUS must be positive"));
                }
                let in_range = match constraint {
                    ConstraintKind::Cosine => (0.0..=1.0).contains(&threshold),
                    ConstraintKind::EdgeMove => threshold.is_finite() && threshold >= 0.0,
                };
                if !in_range {
                    return Err(syntax(
                        line,
                        format!("threshold {threshold} out of range for {constraint}"),
                    ));
                }
                header = Some((radius, constraint, threshold));
            }
            "POLY" => {
                let id: u64 = num(toks.next(), line, "polygon id")?;
                let coords: Vec<Coord> = toks
                    .map(|t| t.parse().map_err(|_| syntax(line, format!("invalid coordinate '{t}'"))))
                    .collect::<Result<_, _>>()?;
                if !coords.len().is_multiple_of(2) {
                    return Err(syntax(line, "odd number of polygon coordinates"));
                }
                let vertices: Vec<Point> = coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
                let polygon = Polygon::new(vertices).map_err(|e| match e {
                    GeometryError::NonManhattan { index, from, to } => ParseError::NonManhattan {
                        line,
                        id,
                        vertex: index,
                        from,
                        to,
                    },
                    source => ParseError::InvalidPolygon { line, id, source },
                })?;
                design_polygons.push(DesignPolygon { id, polygon });
            }
            "MARKER" => {
                let id: u64 = num(toks.next(), line, "marker id")?;
                let xlo = num(toks.next(), line, "xlo")?;
                let ylo = num(toks.next(), line, "ylo")?;
                let xhi = num(toks.next(), line, "xhi")?;
                let yhi = num(toks.next(), line, "yhi")?;
                if toks.next().is_some() {
                    return Err(syntax(line, "trailing tokens after MARKER"));
                }
                let rect = Rect::new(xlo, ylo, xhi, yhi);
                if !rect.is_valid() {
                    return Err(syntax(line, "marker has negative width or height"));
                }
                markers.push(Marker { id, rect });
            }
            other => return Err(syntax(line, format!("unknown record '{other}'"))),
        }
    }
    let (pattern_radius, constraint_kind, threshold) = header.ok_or(ParseError::MissingHeader)?;
    Ok(LayoutDocument {
        design_polygons,
        markers,
        pattern_radius,
        constraint_kind,
        threshold,
    })
}

/// Serializes a document in the layout text format.
pub fn write_layout(doc: &LayoutDocument, out: &mut impl Write) -> io::Result<()> {
    writeln!(
        out,
        "HEADER RADIUS {} CONSTRAINT {} THRESHOLD {}",
        doc.pattern_radius, doc.constraint_kind, doc.threshold
    )?;
    for dp in &doc.design_polygons {
        write!(out, "POLY {}", dp.id)?;
        for v in dp.polygon.vertices() {
            write!(out, " {} {}", v.x, v.y)?;
        }
        writeln!(out)?;
    }
    for m in &doc.markers {
        let r = m.rect;
        writeln!(out, "MARKER {} {} {} {} {}", m.id, r.xlo, r.ylo, r.xhi, r.yhi)?;
    }
    Ok(())
}

/// One marker's cluster assignment and chosen center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub marker_id: u64,
    pub cluster_id: usize,
    pub center: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub assignments: Vec<Assignment>,
    pub cluster_count: usize,
    pub iterations_used: usize,
    pub compression_ratio: f64,
}

impl ClusterReport {
    pub fn new(assignments: Vec<Assignment>, iterations_used: usize) -> Self {
        let cluster_count = assignments.iter().map(|a| a.cluster_id + 1).max().unwrap_or(0);
        let n = assignments.len();
        let compression_ratio = if n == 0 {
            0.0
        } else {
            (n - cluster_count) as f64 / n as f64
        };
        Self {
            assignments,
            cluster_count,
            iterations_used,
            compression_ratio,
        }
    }

    /// Checks coverage, dense cluster ids and center validity against the markers.
    pub fn validate(&self, markers: &[Marker]) -> Result<(), ReportError> {
        let mut seen = HashSet::new();
        let by_id: std::collections::HashMap<u64, &Marker> = markers.iter().map(|m| (m.id, m)).collect();
        let mut used = vec![false; self.cluster_count];
        for a in &self.assignments {
            let m = by_id.get(&a.marker_id).ok_or(ReportError::UnknownMarker(a.marker_id))?;
            if !seen.insert(a.marker_id) {
                return Err(ReportError::DuplicateMarker(a.marker_id));
            }
            if !m.rect.contains_point(a.center) {
                return Err(ReportError::CenterOutsideMarker {
                    marker_id: a.marker_id,
                    center: a.center,
                });
            }
            match used.get_mut(a.cluster_id) {
                Some(u) => *u = true,
                None => return Err(ReportError::SparseClusterIds),
            }
        }
        if let Some(m) = markers.iter().find(|m| !seen.contains(&m.id)) {
            return Err(ReportError::MissingMarker(m.id));
        }
        if used.iter().any(|u| !u) {
            return Err(ReportError::SparseClusterIds);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("marker {0} is not in the layout")]
    UnknownMarker(u64),
    #[error("marker {0} assigned more than once")]
    DuplicateMarker(u64),
    #[error("marker {0} has no assignment")]
    MissingMarker(u64),
    #[error("center {center:?} lies outside marker {marker_id}")]
    CenterOutsideMarker { marker_id: u64, center: Point },
    #[error("cluster ids are not dense")]
    SparseClusterIds,
    #[error("report line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const REPORT_HEADER: &str = "marker_id,cluster_id,center_x,center_y";

/// Writes the report CSV after validating it against `markers`.
pub fn write_report(report: &ClusterReport, markers: &[Marker], out: &mut impl Write) -> Result<(), ReportError> {
    report.validate(markers)?;
    writeln!(out, "{REPORT_HEADER}")?;
    for a in &report.assignments {
        writeln!(out, "{},{},{},{}", a.marker_id, a.cluster_id, a.center.x, a.center.y)?;
    }
    writeln!(
        out,
        "# clusters={} iterations={} compression={}",
        report.cluster_count, report.iterations_used, report.compression_ratio
    )?;
    Ok(())
}

/// Reads back a report CSV written by [`write_report`].
pub fn parse_report(text: &str) -> Result<ClusterReport, ReportError> {
    let bad = |line: usize, message: &str| ReportError::Malformed {
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == REPORT_HEADER => {}
        _ => return Err(bad(1, "missing CSV header")),
    }
    let mut assignments = Vec::new();
    let mut summary = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if let Some(rest) = raw.strip_prefix('#') {
            let mut clusters = None;
            let mut iterations = None;
            let mut compression = None;
            for kv in rest.split_whitespace() {
                match kv.split_once('=') {
                    Some(("clusters", v)) => clusters = v.parse::<usize>().ok(),
                    Some(("iterations", v)) => iterations = v.parse::<usize>().ok(),
                    Some(("compression", v)) => compression = v.parse::<f64>().ok(),
                    _ => return Err(bad(line, "unrecognized summary field")),
                }
            }
            match (clusters, iterations, compression) {
                (Some(c), Some(i), Some(r)) => summary = Some((c, i, r)),
                _ => return Err(bad(line, "incomplete summary line")),
            }
            continue;
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 4 {
            return Err(bad(line, "expected 4 fields"));
        }
        let parse_i = |s: &str| s.trim().parse::<i64>().map_err(|_| bad(line, "invalid integer"));
        assignments.push(Assignment {
            marker_id: f[0].trim().parse().map_err(|_| bad(line, "invalid marker id"))?,
            cluster_id: f[1].trim().parse().map_err(|_| bad(line, "invalid cluster id"))?,
            center: Point::new(parse_i(f[2])?, parse_i(f[3])?),
        });
    }
    let (cluster_count, iterations_used, compression_ratio) =
        summary.ok_or_else(|| bad(text.lines().count(), "missing summary line"))?;
    Ok(ClusterReport {
        assignments,
        cluster_count,
        iterations_used,
        compression_ratio,
    })
}

/// Generator output with ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticLayout {
    pub doc: LayoutDocument,
    /// Template index of each marker (same order as `doc.markers`).
    pub template_of: Vec<usize>,
    /// Offset of the stamped content from each marker center.
    pub content_offsets: Vec<Point>,
}

/// Minimum gap between shapes of one template.
const SHAPE_GAP: Coord = 24;
const MIN_SHAPE: Coord = 64;
const MAX_SHAPE: Coord = 320;
/// Upper bound on cross-template raster cosine, both on the 8×8 thumbnail and
/// the default 64/32 DCT feature, in the bounding-box-centered frame.
const TEMPLATE_SEPARATION: f64 = 0.75;

/// Pattern radius used by the generator for a given jitter: large enough that
/// any center inside a marker sees the whole stamped template, rounded to a
/// multiple of 32 so the default 64-pixel raster has an integer pitch.
pub fn synthetic_radius(jitter: Coord) -> Coord {
    let r = 512 + 4 * jitter;
    (r + 31) / 32 * 32
}

/// Deterministic synthetic layout with `template_count` distinct templates,
/// each stamped `instances_per_template` times.
pub fn generate_synthetic(
    template_count: usize,
    instances_per_template: usize,
    jitter: Coord,
    seed: u64,
) -> LayoutDocument {
    generate_synthetic_labeled(template_count, instances_per_template, jitter, seed).doc
}

/// As [`generate_synthetic`], also returning template labels and offsets.
///
/// Templates are rejection-sampled so that no two share a polygon-topology
/// key (polygon count and vertex counts) and their centered rasters stay
/// below a fixed cosine. Each instance's content is shifted by a uniform
/// offset in `[-jitter, jitter]^2` from its marker center; markers are
/// `4 * jitter` wide so any other instance's alignment remains reachable.
/// The design is stamped on a grid whose pitch keeps every window disjoint.
pub fn generate_synthetic_labeled(
    template_count: usize,
    instances_per_template: usize,
    jitter: Coord,
    seed: u64,
) -> SyntheticLayout {
    assert!(template_count >= 1 && instances_per_template >= 1 && jitter >= 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = synthetic_radius(jitter);
    let extent = radius - 3 * jitter - 32;
    let templates = make_templates(&mut rng, template_count, extent, radius);

    let total = template_count * instances_per_template;
    let mut labels: Vec<usize> = (0..total).map(|i| i / instances_per_template).collect();
    labels.shuffle(&mut rng);
    let cols = (total as f64).sqrt().ceil() as usize;
    let pitch = ((2 * radius + 4 * jitter + 64 + 63) / 64) * 64;

    let mut design_polygons = Vec::new();
    let mut markers = Vec::with_capacity(total);
    let mut content_offsets = Vec::with_capacity(total);
    for (slot, &t) in labels.iter().enumerate() {
        let g = Point::new((slot % cols) as Coord * pitch, (slot / cols) as Coord * pitch);
        let o = Point::new(rng.gen_range(-jitter..=jitter), rng.gen_range(-jitter..=jitter));
        for shape in &templates[t] {
            design_polygons.push(DesignPolygon {
                id: design_polygons.len() as u64,
                polygon: shape.translate(g.x + o.x, g.y + o.y),
            });
        }
        markers.push(Marker {
            id: slot as u64,
            rect: Rect::new(g.x - 2 * jitter, g.y - 2 * jitter, g.x + 2 * jitter, g.y + 2 * jitter),
        });
        content_offsets.push(o);
    }
    SyntheticLayout {
        doc: LayoutDocument {
            design_polygons,
            markers,
            pattern_radius: radius,
            constraint_kind: ConstraintKind::Cosine,
            threshold: 0.95,
        },
        template_of: labels,
        content_offsets,
    }
}

fn topology_key(shapes: &[Polygon]) -> Vec<usize> {
    let mut k: Vec<usize> = shapes.iter().map(Polygon::len).collect();
    k.sort_unstable();
    k
}

fn make_templates(rng: &mut ChaCha8Rng, count: usize, extent: Coord, radius: Coord) -> Vec<Vec<Polygon>> {
    let max_shapes = 4 + count / 8;
    let mut keys = HashSet::new();
    let mut accepted: Vec<(Vec<Polygon>, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut attempts = 0usize;
    while accepted.len() < count {
        attempts += 1;
        assert!(attempts < 200_000, "could not sample {count} separated templates");
        let n_shapes = rng.gen_range(1..=max_shapes);
        let shapes = random_template(rng, n_shapes, extent);
        if shapes.is_empty() {
            continue;
        }
        let key = topology_key(&shapes);
        if keys.contains(&key) {
            continue;
        }
        let pattern = Pattern::new(Point::ORIGIN, radius, shapes.clone()).centered();
        let thumb = raster::rasterize(&pattern, 8).pixels().to_vec();
        let feat = raster::pattern_features(&pattern, raster::DEFAULT_GRID, raster::DEFAULT_DCT_K).coeffs;
        let separated = accepted
            .iter()
            .all(|(_, t, f)| cosine(t, &thumb) <= TEMPLATE_SEPARATION && cosine(f, &feat) <= TEMPLATE_SEPARATION);
        if !separated {
            continue;
        }
        keys.insert(key);
        accepted.push((shapes, thumb, feat));
    }
    accepted.into_iter().map(|(s, _, _)| s).collect()
}

fn random_template(rng: &mut ChaCha8Rng, n_shapes: usize, extent: Coord) -> Vec<Polygon> {
    let mut boxes: Vec<Rect> = Vec::new();
    let mut shapes = Vec::new();
    for _ in 0..n_shapes {
        for _ in 0..200 {
            let max = MAX_SHAPE.min(extent);
            let w = rng.gen_range(MIN_SHAPE..=max);
            let h = rng.gen_range(MIN_SHAPE..=max);
            let x = rng.gen_range(-extent..=extent - w);
            let y = rng.gen_range(-extent..=extent - h);
            let b = Rect::new(x, y, x + w, y + h);
            let grown = Rect::new(
                b.xlo - SHAPE_GAP,
                b.ylo - SHAPE_GAP,
                b.xhi + SHAPE_GAP,
                b.yhi + SHAPE_GAP,
            );
            if boxes.iter().any(|o| o.overlaps(&grown)) {
                continue;
            }
            boxes.push(b);
            shapes.push(random_shape(rng, b));
            break;
        }
    }
    shapes
}

/// A rectangle, L-shape or U-shape filling the box `b`.
fn random_shape(rng: &mut ChaCha8Rng, b: Rect) -> Polygon {
    let (w, h) = (b.width(), b.height());
    let p = |x: Coord, y: Coord| Point::new(b.xlo + x, b.ylo + y);
    match rng.gen_range(0..3) {
        1 => {
            let nx = rng.gen_range(w * 3 / 10..=w * 6 / 10);
            let ny = rng.gen_range(h * 3 / 10..=h * 6 / 10);
            // notch the top-right corner
            Polygon::new(vec![
                p(0, 0),
                p(w, 0),
                p(w, h - ny),
                p(w - nx, h - ny),
                p(w - nx, h),
                p(0, h),
            ])
            .expect("valid L")
        }
        2 => {
            let nw = (w / 3).max(8);
            let x0 = (w - nw) / 2;
            let depth = rng.gen_range(h * 3 / 10..=h * 6 / 10);
            Polygon::new(vec![
                p(0, 0),
                p(w, 0),
                p(w, h),
                p(x0 + nw, h),
                p(x0 + nw, h - depth),
                p(x0, h - depth),
                p(x0, h),
                p(0, h),
            ])
            .expect("valid U")
        }
        _ => Polygon::from_rect(&b),
    }
}
