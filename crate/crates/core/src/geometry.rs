//! Manhattan geometry primitives.
//!
//! Coordinates are integer nanometers. Polygons are stored in a canonical
//! form: counter-clockwise, no collinear or repeated vertices, ring rotated to
//! start at the lexicographically smallest `(x, y)` vertex. Patterns hold their
//! shapes in coordinates relative to the pattern center, so two patterns with
//! identical window content compare equal regardless of where they were cut.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer nanometer coordinate.
pub type Coord = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: Coord,
    pub y: Coord,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0, y: 0 };

    pub const fn new(x: Coord, y: Coord) -> Self {
        Self { x, y }
    }
}

/// Closed axis-aligned rectangle. Degenerate (zero width or height) rectangles
/// are legal; they have zero area.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub xlo: Coord,
    pub ylo: Coord,
    pub xhi: Coord,
    pub yhi: Coord,
}

impl Rect {
    pub const fn new(xlo: Coord, ylo: Coord, xhi: Coord, yhi: Coord) -> Self {
        Self { xlo, ylo, xhi, yhi }
    }

    /// Square of half-width `radius` around `center`.
    pub fn window(center: Point, radius: Coord) -> Self {
        Self::new(
            center.x - radius,
            center.y - radius,
            center.x + radius,
            center.y + radius,
        )
    }

    pub fn width(&self) -> Coord {
        self.xhi - self.xlo
    }

    pub fn height(&self) -> Coord {
        self.yhi - self.ylo
    }

    pub fn area(&self) -> i128 {
        self.width() as i128 * self.height() as i128
    }

    pub fn is_valid(&self) -> bool {
        self.xlo <= self.xhi && self.ylo <= self.yhi
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.xlo && p.x <= self.xhi && p.y >= self.ylo && p.y <= self.yhi
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.xlo >= self.xlo && other.xhi <= self.xhi && other.ylo >= self.ylo && other.yhi <= self.yhi
    }

    /// Geometric center, floored to the integer grid.
    pub fn center(&self) -> Point {
        Point::new((self.xlo + self.xhi).div_euclid(2), (self.ylo + self.yhi).div_euclid(2))
    }

    /// Intersection with positive area, if any.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.xlo.max(other.xlo),
            self.ylo.max(other.ylo),
            self.xhi.min(other.xhi),
            self.yhi.min(other.yhi),
        );
        (r.xlo < r.xhi && r.ylo < r.yhi).then_some(r)
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.intersection(other).is_some()
    }

    pub fn translate(&self, dx: Coord, dy: Coord) -> Rect {
        Rect::new(self.xlo + dx, self.ylo + dy, self.xhi + dx, self.yhi + dy)
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(
            self.xlo.min(other.xlo),
            self.ylo.min(other.ylo),
            self.xhi.max(other.xhi),
            self.yhi.max(other.yhi),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("polygon needs at least 4 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("edge from vertex {index} ({from:?} -> {to:?}) is not axis-aligned")]
    NonManhattan { index: usize, from: Point, to: Point },
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
}

/// Direction of a polygon edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeDir {
    East,
    North,
    West,
    South,
}

impl EdgeDir {
    fn of(from: Point, to: Point) -> EdgeDir {
        match (to.x.cmp(&from.x), to.y.cmp(&from.y)) {
            (std::cmp::Ordering::Greater, _) => EdgeDir::East,
            (std::cmp::Ordering::Less, _) => EdgeDir::West,
            (_, std::cmp::Ordering::Greater) => EdgeDir::North,
            _ => EdgeDir::South,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, EdgeDir::East | EdgeDir::West)
    }

    fn left(self) -> EdgeDir {
        match self {
            EdgeDir::East => EdgeDir::North,
            EdgeDir::North => EdgeDir::West,
            EdgeDir::West => EdgeDir::South,
            EdgeDir::South => EdgeDir::East,
        }
    }

    fn reverse(self) -> EdgeDir {
        self.left().left()
    }
}

/// Simple rectilinear polygon in canonical form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Validates a closed ring (the closing edge is implicit) and normalizes it.
    ///
    /// Collinear interior vertices are merged. Repeated consecutive vertices,
    /// diagonal edges, zero area and crossing edges are rejected.
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 4 {
            return Err(GeometryError::TooFewVertices(n));
        }
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            if (a.x == b.x) == (a.y == b.y) {
                return Err(GeometryError::NonManhattan {
                    index: i,
                    from: a,
                    to: b,
                });
            }
        }
        let ring = merge_collinear(vertices);
        if ring.len() < 4 {
            return Err(GeometryError::TooFewVertices(ring.len()));
        }
        if signed_area2(&ring) == 0 {
            return Err(GeometryError::ZeroArea);
        }
        check_simple(&ring)?;
        Ok(Self::from_ring_unchecked(ring))
    }

    pub fn from_rect(r: &Rect) -> Self {
        debug_assert!(r.xlo < r.xhi && r.ylo < r.yhi);
        Self {
            vertices: vec![
                Point::new(r.xlo, r.ylo),
                Point::new(r.xhi, r.ylo),
                Point::new(r.xhi, r.yhi),
                Point::new(r.xlo, r.yhi),
            ],
        }
    }

    /// Canonicalizes orientation and start vertex of an already-valid ring.
    fn from_ring_unchecked(mut ring: Vec<Point>) -> Self {
        if signed_area2(&ring) < 0 {
            ring.reverse();
        }
        let start = ring
            .iter()
            .enumerate()
            .min_by_key(|(_, p)| **p)
            .map(|(i, _)| i)
            .unwrap_or(0);
        ring.rotate_left(start);
        Self { vertices: ring }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect::new(Coord::MAX, Coord::MAX, Coord::MIN, Coord::MIN);
        for p in &self.vertices {
            r.xlo = r.xlo.min(p.x);
            r.ylo = r.ylo.min(p.y);
            r.xhi = r.xhi.max(p.x);
            r.yhi = r.yhi.max(p.y);
        }
        r
    }

    pub fn area(&self) -> i128 {
        signed_area2(&self.vertices) / 2
    }

    pub fn translate(&self, dx: Coord, dy: Coord) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect(),
        }
    }

    /// Edges as `(from, to)` pairs, starting at the canonical start vertex.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn edge_dirs(&self) -> Vec<EdgeDir> {
        self.edges().map(|(a, b)| EdgeDir::of(a, b)).collect()
    }

    /// Disjoint rectangles whose union is the polygon interior (vertical slabs).
    pub fn to_rects(&self) -> Vec<Rect> {
        let mut xs: Vec<Coord> = self.vertices.iter().map(|p| p.x).collect();
        xs.sort_unstable();
        xs.dedup();
        let horizontals: Vec<(Coord, Coord, Coord)> = self
            .edges()
            .filter(|(a, b)| a.y == b.y)
            .map(|(a, b)| (a.x.min(b.x), a.x.max(b.x), a.y))
            .collect();
        let mut rects = Vec::new();
        let mut ys = Vec::new();
        for w in xs.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            ys.clear();
            ys.extend(
                horizontals
                    .iter()
                    .filter(|(lo, hi, _)| *lo <= x0 && *hi >= x1)
                    .map(|(_, _, y)| *y),
            );
            ys.sort_unstable();
            for pair in ys.chunks_exact(2) {
                if pair[0] < pair[1] {
                    rects.push(Rect::new(x0, pair[0], x1, pair[1]));
                }
            }
        }
        rects
    }

    /// Pieces of this polygon inside `window`. A polygon may split into several
    /// pieces; pieces touching only at a corner stay separate.
    pub fn clip(&self, window: &Rect) -> Vec<Polygon> {
        let bb = self.bbox();
        if window.contains_rect(&bb) {
            return vec![self.clone()];
        }
        if !window.overlaps(&bb) {
            return Vec::new();
        }
        let rects: Vec<Rect> = self.to_rects().iter().filter_map(|r| r.intersection(window)).collect();
        polygons_from_rects(&rects)
    }

    /// Positive-area intersection test.
    pub fn overlaps(&self, other: &Polygon) -> bool {
        if !self.bbox().overlaps(&other.bbox()) {
            return false;
        }
        rects_overlap(&self.to_rects(), &other.to_rects())
    }
}

fn rects_overlap(a: &[Rect], b: &[Rect]) -> bool {
    a.iter().any(|ra| b.iter().any(|rb| ra.overlaps(rb)))
}

/// Twice the signed area (positive for counter-clockwise rings).
fn signed_area2(ring: &[Point]) -> i128 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            a.x as i128 * b.y as i128 - b.x as i128 * a.y as i128
        })
        .sum()
}

/// Drops vertices lying in the middle of a straight run.
fn merge_collinear(mut ring: Vec<Point>) -> Vec<Point> {
    loop {
        let n = ring.len();
        if n < 3 {
            return ring;
        }
        let keep: Vec<bool> = (0..n)
            .map(|i| {
                let prev = ring[(i + n - 1) % n];
                let cur = ring[i];
                let next = ring[(i + 1) % n];
                !((prev.x == cur.x && cur.x == next.x) || (prev.y == cur.y && cur.y == next.y))
            })
            .collect();
        if keep.iter().all(|k| *k) {
            return ring;
        }
        ring = ring.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect();
    }
}

/// Rejects rings whose non-adjacent edges touch or cross.
fn check_simple(ring: &[Point]) -> Result<(), GeometryError> {
    let n = ring.len();
    let seg = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a0, a1) = seg(i);
            let (b0, b1) = seg(j);
            let ra = Rect::new(a0.x.min(a1.x), a0.y.min(a1.y), a0.x.max(a1.x), a0.y.max(a1.y));
            let rb = Rect::new(b0.x.min(b1.x), b0.y.min(b1.y), b0.x.max(b1.x), b0.y.max(b1.y));
            if ra.xlo <= rb.xhi && rb.xlo <= ra.xhi && ra.ylo <= rb.yhi && rb.ylo <= ra.yhi {
                return Err(GeometryError::SelfIntersecting(i, j));
            }
        }
    }
    Ok(())
}

/// Converts a set of rectangles into the boundary polygons of their union.
///
/// The union is rasterized onto the compressed grid of rectangle coordinates
/// and each edge-connected component's outline is traced counter-clockwise.
/// Regions with holes are not supported; hole rings are discarded.
pub fn polygons_from_rects(rects: &[Rect]) -> Vec<Polygon> {
    let rects: Vec<&Rect> = rects.iter().filter(|r| r.xlo < r.xhi && r.ylo < r.yhi).collect();
    if rects.is_empty() {
        return Vec::new();
    }
    let mut xs: Vec<Coord> = rects.iter().flat_map(|r| [r.xlo, r.xhi]).collect();
    let mut ys: Vec<Coord> = rects.iter().flat_map(|r| [r.ylo, r.yhi]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let mut covered = vec![false; nx * ny];
    for r in &rects {
        let i0 = xs.binary_search(&r.xlo).unwrap();
        let i1 = xs.binary_search(&r.xhi).unwrap();
        let j0 = ys.binary_search(&r.ylo).unwrap();
        let j1 = ys.binary_search(&r.yhi).unwrap();
        for j in j0..j1 {
            for i in i0..i1 {
                covered[j * nx + i] = true;
            }
        }
    }
    let cov = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && covered[j as usize * nx + i as usize]
    };

    // Directed boundary edges with the interior on the left.
    type V = (usize, usize);
    let mut outgoing: HashMap<V, Vec<(V, EdgeDir)>> = HashMap::new();
    let mut starts: Vec<V> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !covered[j * nx + i] {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            let mut push = |from: V, to: V, d: EdgeDir| {
                outgoing.entry(from).or_default().push((to, d));
                starts.push(from);
            };
            if !cov(ii, jj - 1) {
                push((i, j), (i + 1, j), EdgeDir::East);
            }
            if !cov(ii + 1, jj) {
                push((i + 1, j), (i + 1, j + 1), EdgeDir::North);
            }
            if !cov(ii, jj + 1) {
                push((i + 1, j + 1), (i, j + 1), EdgeDir::West);
            }
            if !cov(ii - 1, jj) {
                push((i, j + 1), (i, j), EdgeDir::South);
            }
        }
    }
    starts.sort_unstable();
    starts.dedup();

    let mut polygons = Vec::new();
    for start in starts {
        while let Some(first) = take_edge(&mut outgoing, start, None) {
            let mut ring_idx: Vec<V> = vec![start];
            let (mut cur, mut dir) = first;
            while cur != start {
                ring_idx.push(cur);
                let (next, d) = take_edge(&mut outgoing, cur, Some(dir)).expect("boundary edges form closed loops");
                cur = next;
                dir = d;
            }
            let ring: Vec<Point> = ring_idx.into_iter().map(|(i, j)| Point::new(xs[i], ys[j])).collect();
            let ring = merge_collinear(ring);
            if ring.len() >= 4 && signed_area2(&ring) > 0 {
                polygons.push(Polygon::from_ring_unchecked(ring));
            }
        }
    }
    polygons.sort();
    polygons
}

/// Unused boundary edges leaving each compressed-grid vertex.
type OutgoingEdges = HashMap<(usize, usize), Vec<((usize, usize), EdgeDir)>>;

/// Removes and returns an outgoing edge from `v`. At pinch vertices the left
/// turn relative to `incoming` is preferred, which keeps corner-touching
/// components apart.
fn take_edge(
    outgoing: &mut OutgoingEdges,
    v: (usize, usize),
    incoming: Option<EdgeDir>,
) -> Option<((usize, usize), EdgeDir)> {
    let list = outgoing.get_mut(&v)?;
    if list.is_empty() {
        return None;
    }
    let idx = match incoming {
        Some(d) if list.len() > 1 => {
            let order = [d.left(), d, d.left().reverse(), d.reverse()];
            order
                .iter()
                .find_map(|want| list.iter().position(|(_, e)| e == want))
                .unwrap_or(0)
        }
        _ => 0,
    };
    Some(list.swap_remove(idx))
}

/// Axis-aligned marker rectangle: the legal region for a pattern center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub id: u64,
    pub rect: Rect,
}

impl Marker {
    pub fn center(&self) -> Point {
        self.rect.center()
    }
}

/// Design content clipped to the window `[center - R, center + R]^2`, stored
/// relative to `center`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub center: Point,
    pub radius: Coord,
    pub shapes: Vec<Polygon>,
}

impl Pattern {
    pub fn new(center: Point, radius: Coord, mut shapes: Vec<Polygon>) -> Self {
        shapes.sort();
        Self { center, radius, shapes }
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// The window in relative coordinates.
    pub fn local_window(&self) -> Rect {
        Rect::window(Point::ORIGIN, self.radius)
    }

    /// Bounding box of all shapes (relative coordinates).
    pub fn content_bbox(&self) -> Option<Rect> {
        self.shapes.iter().map(Polygon::bbox).reduce(|a, b| a.union(&b))
    }

    pub fn area(&self) -> i128 {
        self.shapes.iter().map(Polygon::area).sum()
    }

    /// Content shifted by `(dx, dy)` inside the same window, re-clipped.
    pub fn shifted(&self, dx: Coord, dy: Coord) -> Pattern {
        let window = self.local_window();
        let shapes = self
            .shapes
            .iter()
            .flat_map(|s| s.translate(dx, dy).clip(&window))
            .collect();
        Pattern::new(self.center, self.radius, shapes)
    }

    /// Offset of the content bounding-box center from the window center.
    pub fn content_offset(&self) -> Point {
        self.content_bbox().map_or(Point::ORIGIN, |b| b.center())
    }

    /// The pattern with its content bounding box moved to the window center.
    /// Content never leaves the window since its extent is at most `2R`.
    pub fn centered(&self) -> Pattern {
        let o = self.content_offset();
        self.shifted(-o.x, -o.y)
    }
}

/// Grid-bucketed index over design polygons for window queries.
#[derive(Debug, Clone)]
pub struct DesignIndex {
    polygons: Vec<Polygon>,
    bboxes: Vec<Rect>,
    cell: Coord,
    bins: HashMap<(Coord, Coord), Vec<usize>>,
}

impl DesignIndex {
    pub fn new(polygons: Vec<Polygon>, cell: Coord) -> Self {
        let cell = cell.max(1);
        let bboxes: Vec<Rect> = polygons.iter().map(Polygon::bbox).collect();
        let mut bins: HashMap<(Coord, Coord), Vec<usize>> = HashMap::new();
        for (idx, b) in bboxes.iter().enumerate() {
            for by in b.ylo.div_euclid(cell)..=b.yhi.div_euclid(cell) {
                for bx in b.xlo.div_euclid(cell)..=b.xhi.div_euclid(cell) {
                    bins.entry((bx, by)).or_default().push(idx);
                }
            }
        }
        Self {
            polygons,
            bboxes,
            cell,
            bins,
        }
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    /// Indices of polygons whose bounding box has positive overlap with `window`.
    pub fn query(&self, window: &Rect) -> Vec<usize> {
        let c = self.cell;
        let mut hits = Vec::new();
        for by in window.ylo.div_euclid(c)..=window.yhi.div_euclid(c) {
            for bx in window.xlo.div_euclid(c)..=window.xhi.div_euclid(c) {
                if let Some(ids) = self.bins.get(&(bx, by)) {
                    hits.extend(ids.iter().copied().filter(|&i| self.bboxes[i].overlaps(window)));
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits
    }

    /// Extracts the pattern of half-width `radius` at `center`.
    pub fn extract(&self, center: Point, radius: Coord) -> Pattern {
        let window = Rect::window(center, radius);
        let shapes = self
            .query(&window)
            .into_iter()
            .flat_map(|i| self.polygons[i].clip(&window))
            .map(|p| p.translate(-center.x, -center.y))
            .collect();
        Pattern::new(center, radius, shapes)
    }
}

/// Which side of a correspondence had fewer polygons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrespondenceSide {
    AFewer,
    BFewer,
    Equal,
}

/// Polygon pairing `(index in a, index in b)` under the "exactly one overlap" rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Correspondence {
    pub pairs: Vec<(usize, usize)>,
    pub side: CorrespondenceSide,
}

impl Correspondence {
    /// True when every polygon on both sides has exactly one partner.
    pub fn is_bijective(&self) -> bool {
        self.side == CorrespondenceSide::Equal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum MatchFailure {
    /// Polygon `index` of the smaller side overlaps nothing.
    #[error("polygon {index} of pattern {side} overlaps no polygon of the other pattern")]
    NoOverlap { side: char, index: usize },
    /// Polygon `index` of the smaller side overlaps `count` ≥ 2 polygons.
    #[error("polygon {index} of pattern {side} overlaps {count} polygons of the other pattern")]
    MultipleOverlap { side: char, index: usize, count: usize },
}

/// Pairs polygons of `a` with polygons of `b` after translating `b` by `shift`.
///
/// Every polygon of the pattern with fewer polygons must overlap (positive
/// area) exactly one polygon of the other. With equal counts both directions
/// are checked. An empty pattern only matches another empty pattern.
pub fn match_polygons(a: &Pattern, b: &Pattern, shift: Point) -> Result<Correspondence, MatchFailure> {
    let a_rects: Vec<Vec<Rect>> = a.shapes.iter().map(Polygon::to_rects).collect();
    let b_rects: Vec<Vec<Rect>> = b
        .shapes
        .iter()
        .map(|p| p.translate(shift.x, shift.y).to_rects())
        .collect();
    let a_boxes: Vec<Rect> = a.shapes.iter().map(Polygon::bbox).collect();
    let b_boxes: Vec<Rect> = b.shapes.iter().map(|p| p.bbox().translate(shift.x, shift.y)).collect();

    let partners =
        |from_rects: &[Vec<Rect>], from_boxes: &[Rect], to_rects: &[Vec<Rect>], to_boxes: &[Rect], side: char| {
            let mut out = Vec::with_capacity(from_rects.len());
            for (i, (fr, fb)) in from_rects.iter().zip(from_boxes).enumerate() {
                let hits: Vec<usize> = to_rects
                    .iter()
                    .zip(to_boxes)
                    .enumerate()
                    .filter(|(_, (tr, tb))| fb.overlaps(tb) && rects_overlap(fr, tr))
                    .map(|(j, _)| j)
                    .collect();
                match hits.len() {
                    0 => return Err(MatchFailure::NoOverlap { side, index: i }),
                    1 => out.push(hits[0]),
                    count => return Err(MatchFailure::MultipleOverlap { side, index: i, count }),
                }
            }
            Ok(out)
        };

    match (a.shapes.is_empty(), b.shapes.is_empty()) {
        (true, true) => {
            return Ok(Correspondence {
                pairs: Vec::new(),
                side: CorrespondenceSide::Equal,
            })
        }
        (true, false) => return Err(MatchFailure::NoOverlap { side: 'b', index: 0 }),
        (false, true) => return Err(MatchFailure::NoOverlap { side: 'a', index: 0 }),
        _ => {}
    }

    use std::cmp::Ordering::*;
    match a.shapes.len().cmp(&b.shapes.len()) {
        Less => {
            let to_b = partners(&a_rects, &a_boxes, &b_rects, &b_boxes, 'a')?;
            Ok(Correspondence {
                pairs: to_b.into_iter().enumerate().collect(),
                side: CorrespondenceSide::AFewer,
            })
        }
        Greater => {
            let to_a = partners(&b_rects, &b_boxes, &a_rects, &a_boxes, 'b')?;
            let mut pairs: Vec<(usize, usize)> = to_a.into_iter().enumerate().map(|(j, i)| (i, j)).collect();
            pairs.sort_unstable();
            Ok(Correspondence {
                pairs,
                side: CorrespondenceSide::BFewer,
            })
        }
        Equal => {
            let to_b = partners(&a_rects, &a_boxes, &b_rects, &b_boxes, 'a')?;
            partners(&b_rects, &b_boxes, &a_rects, &a_boxes, 'b')?;
            Ok(Correspondence {
                pairs: to_b.into_iter().enumerate().collect(),
                side: CorrespondenceSide::Equal,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Signed perpendicular offset of one corresponding edge pair (b minus a).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeOffset {
    pub axis: Axis,
    pub offset: Coord,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("polygon pair ({a_index}, {b_index}) differs in edge topology")]
pub struct TopologyMismatch {
    pub a_index: usize,
    pub b_index: usize,
}

/// Per-edge offsets between corresponding polygons.
///
/// Edges are paired by order from the canonical start vertex. If the edge
/// direction sequences disagree at that start (a moved edge can change which
/// vertex is lexicographically smallest), the other rotations with matching
/// direction sequences are tried and the one with the smallest worst-case
/// offset is used.
pub fn edge_displacements(
    a: &Pattern,
    b: &Pattern,
    corr: &Correspondence,
) -> Result<Vec<EdgeOffset>, TopologyMismatch> {
    let mut out = Vec::new();
    for &(ia, ib) in &corr.pairs {
        let pa = &a.shapes[ia];
        let pb = &b.shapes[ib];
        let mismatch = TopologyMismatch {
            a_index: ia,
            b_index: ib,
        };
        if pa.len() != pb.len() {
            return Err(mismatch);
        }
        let da = pa.edge_dirs();
        let db = pb.edge_dirs();
        let n = da.len();
        let offsets_at = |rot: usize| -> Vec<EdgeOffset> {
            (0..n)
                .map(|k| {
                    let va = pa.vertices()[k];
                    let vb = pb.vertices()[(k + rot) % n];
                    if da[k].is_horizontal() {
                        EdgeOffset {
                            axis: Axis::Y,
                            offset: vb.y - va.y,
                        }
                    } else {
                        EdgeOffset {
                            axis: Axis::X,
                            offset: vb.x - va.x,
                        }
                    }
                })
                .collect()
        };
        let dirs_match = |rot: usize| (0..n).all(|k| da[k] == db[(k + rot) % n]);
        if dirs_match(0) {
            out.extend(offsets_at(0));
            continue;
        }
        let best = (1..n)
            .filter(|&r| dirs_match(r))
            .map(|r| {
                let offs = offsets_at(r);
                let worst = offs.iter().map(|o| o.offset.abs()).max().unwrap_or(0);
                (worst, r, offs)
            })
            .min_by_key(|(w, r, _)| (*w, *r));
        match best {
            Some((_, _, offs)) => out.extend(offs),
            None => return Err(mismatch),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(xlo: Coord, ylo: Coord, xhi: Coord, yhi: Coord) -> Polygon {
        Polygon::from_rect(&Rect::new(xlo, ylo, xhi, yhi))
    }

    fn pts(v: &[(Coord, Coord)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    fn l_shape() -> Polygon {
        Polygon::new(pts(&[(0, 0), (20, 0), (20, 10), (10, 10), (10, 20), (0, 20)])).unwrap()
    }

    #[test]
    fn normalizes_orientation_and_start() {
        let cw = Polygon::new(pts(&[(10, 10), (10, 0), (0, 0), (0, 10)])).unwrap();
        assert_eq!(cw.vertices()[0], Point::new(0, 0));
        assert_eq!(cw.vertices()[1], Point::new(10, 0));
        assert_eq!(cw, rect(0, 0, 10, 10));
    }

    #[test]
    fn merges_collinear_vertices() {
        let p = Polygon::new(pts(&[(0, 0), (5, 0), (10, 0), (10, 10), (0, 10)])).unwrap();
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn rejects_bad_rings() {
        assert!(matches!(
            Polygon::new(pts(&[(0, 0), (10, 5), (10, 10), (0, 10)])),
            Err(GeometryError::NonManhattan { index: 0, .. })
        ));
        assert!(matches!(
            Polygon::new(pts(&[(0, 0), (10, 0), (10, 10)])),
            Err(GeometryError::TooFewVertices(3))
        ));
        // Bow-tie shaped rectilinear ring.
        let bow = pts(&[(0, 0), (20, 0), (20, 10), (5, 10), (5, -5), (0, -5)]);
        assert!(Polygon::new(bow).is_err());
    }

    #[test]
    fn slab_rects_cover_area() {
        let l = l_shape();
        let rects = l.to_rects();
        assert_eq!(rects.iter().map(Rect::area).sum::<i128>(), l.area());
        assert_eq!(l.area(), 300);
    }

    #[test]
    fn clip_inside_outside_straddle() {
        let w = Rect::window(Point::new(0, 0), 50);
        let inside = rect(-10, -10, 10, 10);
        assert_eq!(inside.clip(&w), vec![inside.clone()]);
        assert!(rect(60, 0, 80, 10).clip(&w).is_empty());
        let straddle = rect(40, -5, 70, 5);
        let clipped = straddle.clip(&w);
        assert_eq!(clipped, vec![rect(40, -5, 50, 5)]);
        assert_eq!(clipped[0].bbox().xhi, 50);
        // area of the clip equals the analytic intersection area
        assert_eq!(clipped[0].area(), 10 * 10);
    }

    #[test]
    fn clip_splits_u_shape_into_pieces() {
        // U opening upward; window cuts off the bottom bar.
        let u = Polygon::new(pts(&[
            (0, 0),
            (30, 0),
            (30, 30),
            (20, 30),
            (20, 10),
            (10, 10),
            (10, 30),
            (0, 30),
        ]))
        .unwrap();
        let w = Rect::new(-5, 15, 40, 40);
        let pieces = u.clip(&w);
        assert_eq!(pieces, vec![rect(0, 15, 10, 30), rect(20, 15, 30, 30)]);
    }

    #[test]
    fn corner_touching_cells_stay_separate() {
        let polys = polygons_from_rects(&[Rect::new(0, 0, 10, 10), Rect::new(10, 10, 20, 20)]);
        assert_eq!(polys.len(), 2);
        let merged = polygons_from_rects(&[Rect::new(0, 0, 10, 10), Rect::new(10, 0, 20, 10)]);
        assert_eq!(merged, vec![rect(0, 0, 20, 10)]);
    }

    #[test]
    fn design_index_extracts_relative_pattern() {
        let idx = DesignIndex::new(vec![rect(100, 100, 120, 130), rect(500, 500, 510, 510)], 64);
        let p = idx.extract(Point::new(110, 110), 50);
        assert_eq!(p.shapes, vec![rect(-10, -10, 10, 20)]);
        let far = idx.extract(Point::new(-1000, 0), 50);
        assert!(far.is_empty());
    }

    fn pattern(shapes: Vec<Polygon>) -> Pattern {
        Pattern::new(Point::ORIGIN, 200, shapes)
    }

    #[test]
    fn identical_patterns_identity_correspondence() {
        let a = pattern(vec![rect(0, 0, 10, 10), rect(30, 0, 40, 10)]);
        let c = match_polygons(&a, &a, Point::ORIGIN).unwrap();
        assert_eq!(c.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn spanning_polygon_is_multiple_overlap() {
        let a = pattern(vec![rect(0, 0, 100, 10)]);
        let b = pattern(vec![rect(0, 0, 10, 10), rect(50, 0, 60, 10)]);
        assert_eq!(
            match_polygons(&a, &b, Point::ORIGIN),
            Err(MatchFailure::MultipleOverlap {
                side: 'a',
                index: 0,
                count: 2
            })
        );
    }

    #[test]
    fn touching_is_not_overlap() {
        let a = pattern(vec![rect(0, 0, 10, 10)]);
        let b = pattern(vec![rect(10, 0, 20, 10)]);
        assert!(matches!(
            match_polygons(&a, &b, Point::ORIGIN),
            Err(MatchFailure::NoOverlap { .. })
        ));
    }

    #[test]
    fn offset_three_polygon_patterns_match_bruteforce() {
        let a = pattern(vec![rect(0, 0, 20, 20), rect(50, 0, 70, 20), rect(0, 50, 20, 70)]);
        let b = pattern(a.shapes.iter().map(|p| p.translate(5, 0)).collect());
        let c = match_polygons(&a, &b, Point::ORIGIN).unwrap();
        // brute-force all-pairs positive-area intersection
        let mut brute = Vec::new();
        for (i, pa) in a.shapes.iter().enumerate() {
            for (j, pb) in b.shapes.iter().enumerate() {
                let hit = pa
                    .to_rects()
                    .iter()
                    .any(|ra| pb.to_rects().iter().any(|rb| ra.intersection(rb).is_some()));
                if hit {
                    brute.push((i, j));
                }
            }
        }
        assert_eq!(c.pairs, brute);
        assert_eq!(c.pairs.len(), 3);
    }

    #[test]
    fn empty_matches_only_empty() {
        let e = pattern(vec![]);
        assert!(match_polygons(&e, &e, Point::ORIGIN).unwrap().pairs.is_empty());
        let a = pattern(vec![rect(0, 0, 5, 5)]);
        assert!(match_polygons(&e, &a, Point::ORIGIN).is_err());
        assert!(match_polygons(&a, &e, Point::ORIGIN).is_err());
    }

    #[test]
    fn rigid_translation_offsets() {
        let a = pattern(vec![l_shape(), rect(40, 40, 60, 50)]);
        let b = pattern(a.shapes.iter().map(|p| p.translate(3, -7)).collect());
        let c = match_polygons(&a, &b, Point::new(-3, 7)).unwrap();
        let d = edge_displacements(&a, &b, &c).unwrap();
        assert_eq!(d.len(), 10);
        for e in d {
            match e.axis {
                Axis::X => assert_eq!(e.offset, 3),
                Axis::Y => assert_eq!(e.offset, -7),
            }
        }
    }

    #[test]
    fn widened_rectangle_moves_only_right_edge() {
        let a = pattern(vec![rect(0, 0, 10, 10)]);
        let b = pattern(vec![rect(0, 0, 14, 10)]);
        let c = match_polygons(&a, &b, Point::ORIGIN).unwrap();
        let d = edge_displacements(&a, &b, &c).unwrap();
        // bottom, right, top, left
        assert_eq!(
            d,
            vec![
                EdgeOffset {
                    axis: Axis::Y,
                    offset: 0
                },
                EdgeOffset {
                    axis: Axis::X,
                    offset: 4
                },
                EdgeOffset {
                    axis: Axis::Y,
                    offset: 0
                },
                EdgeOffset {
                    axis: Axis::X,
                    offset: 0
                },
            ]
        );
    }

    #[test]
    fn rect_vs_l_is_topology_mismatch() {
        let a = pattern(vec![rect(0, 0, 20, 20)]);
        let b = pattern(vec![l_shape()]);
        let c = match_polygons(&a, &b, Point::ORIGIN).unwrap();
        assert_eq!(
            edge_displacements(&a, &b, &c),
            Err(TopologyMismatch { a_index: 0, b_index: 0 })
        );
    }

    #[test]
    fn moved_start_vertex_falls_back_to_rotation() {
        // Two left prongs at x = 0; moving the lower prong right changes the
        // canonical start vertex.
        let a = Polygon::new(pts(&[
            (0, 0),
            (30, 0),
            (30, 30),
            (0, 30),
            (0, 20),
            (10, 20),
            (10, 10),
            (0, 10),
        ]))
        .unwrap();
        let b = Polygon::new(pts(&[
            (2, 0),
            (30, 0),
            (30, 30),
            (0, 30),
            (0, 20),
            (10, 20),
            (10, 10),
            (2, 10),
        ]))
        .unwrap();
        let pa = pattern(vec![a]);
        let pb = pattern(vec![b]);
        let c = match_polygons(&pa, &pb, Point::ORIGIN).unwrap();
        let d = edge_displacements(&pa, &pb, &c).unwrap();
        let worst = d.iter().map(|e| e.offset.abs()).max().unwrap();
        assert_eq!(worst, 2);
    }

    #[test]
    fn centered_moves_bbox_to_origin() {
        let p = pattern(vec![rect(40, 10, 60, 30)]);
        let c = p.centered();
        assert_eq!(c.shapes, vec![rect(-10, -10, 10, 10)]);
    }
}
