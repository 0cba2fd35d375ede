//! Direct rasterization of patterns and DCT-based cosine similarity.
//!
//! Pixels carry exact area-fraction coverage. Shapes are decomposed into
//! rectangles on the compressed coordinate grid of the pattern, so overlapping
//! polygons are counted once, and coverage is accumulated in integers scaled by
//! the grid side before a single division per pixel.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use crate::geometry::{Coord, Pattern, Rect};

/// Default raster side in pixels.
pub const DEFAULT_GRID: usize = 64;
/// Default side of the low-frequency DCT block.
pub const DEFAULT_DCT_K: usize = 32;

/// Square coverage raster of a pattern window. Row `0` is the bottom row.
#[derive(Clone, Debug, PartialEq)]
pub struct Bitmap {
    side: usize,
    radius: Coord,
    pixels: Vec<f64>,
}

impl Bitmap {
    pub fn from_pixels(side: usize, radius: Coord, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), side * side, "pixel buffer does not match side");
        Self { side, radius, pixels }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn radius(&self) -> Coord {
        self.radius
    }

    /// Nanometers per pixel, `2R / G`.
    pub fn pixel_pitch(&self) -> f64 {
        2.0 * self.radius as f64 / self.side as f64
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.side + x]
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&v| v == 0.0)
    }

    /// Circular shift by `(dx, dy)` pixels.
    pub fn rolled(&self, dx: i64, dy: i64) -> Bitmap {
        let g = self.side as i64;
        let mut out = vec![0.0; self.pixels.len()];
        for y in 0..g {
            for x in 0..g {
                let nx = (x + dx).rem_euclid(g);
                let ny = (y + dy).rem_euclid(g);
                out[(ny * g + nx) as usize] = self.pixels[(y * g + x) as usize];
            }
        }
        Bitmap::from_pixels(self.side, self.radius, out)
    }
}

fn check_side(side: usize) {
    assert!(
        side >= 2 && side.is_power_of_two(),
        "raster side must be a power of two, got {side}"
    );
}

/// Disjoint rectangles covering the union of the pattern's shapes.
fn union_rects(p: &Pattern) -> Vec<Rect> {
    let rects: Vec<Rect> = p.shapes.iter().flat_map(|s| s.to_rects()).collect();
    if p.shapes.len() <= 1 {
        return rects;
    }
    let mut xs: Vec<Coord> = rects.iter().flat_map(|r| [r.xlo, r.xhi]).collect();
    let mut ys: Vec<Coord> = rects.iter().flat_map(|r| [r.ylo, r.yhi]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    if xs.len() < 2 || ys.len() < 2 {
        return Vec::new();
    }
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let mut covered = vec![false; nx * ny];
    for r in &rects {
        let i0 = xs.binary_search(&r.xlo).unwrap();
        let i1 = xs.binary_search(&r.xhi).unwrap();
        let j0 = ys.binary_search(&r.ylo).unwrap();
        let j1 = ys.binary_search(&r.yhi).unwrap();
        for j in j0..j1 {
            covered[j * nx + i0..j * nx + i1].iter_mut().for_each(|c| *c = true);
        }
    }
    let mut out = Vec::new();
    for j in 0..ny {
        let mut i = 0;
        while i < nx {
            if !covered[j * nx + i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < nx && covered[j * nx + i] {
                i += 1;
            }
            out.push(Rect::new(xs[start], ys[j], xs[i], ys[j + 1]));
        }
    }
    out
}

/// Exact per-pixel coverage numerators: pixel area fraction times `(2R)^2`
/// expressed in units of `(1/G nm)^2`, i.e. the covered area in nm² times `G²`.
pub fn coverage_numerators(p: &Pattern, side: usize) -> Vec<i128> {
    check_side(side);
    let g = side as i128;
    let r = p.radius as i128;
    let span = 2 * r; // one pixel in scaled units
    let mut acc = vec![0i128; side * side];
    for rect in union_rects(p) {
        // scaled coordinates: (v + R) * G, pixel k spans [k*2R, (k+1)*2R]
        let sx0 = ((rect.xlo as i128 + r) * g).clamp(0, span * g);
        let sx1 = ((rect.xhi as i128 + r) * g).clamp(0, span * g);
        let sy0 = ((rect.ylo as i128 + r) * g).clamp(0, span * g);
        let sy1 = ((rect.yhi as i128 + r) * g).clamp(0, span * g);
        if sx0 >= sx1 || sy0 >= sy1 {
            continue;
        }
        let px0 = (sx0 / span) as usize;
        let px1 = (((sx1 + span - 1) / span) as usize).min(side);
        let py0 = (sy0 / span) as usize;
        let py1 = (((sy1 + span - 1) / span) as usize).min(side);
        for py in py0..py1 {
            let lo = (py as i128 * span).max(sy0);
            let hi = ((py as i128 + 1) * span).min(sy1);
            let oy = hi - lo;
            if oy <= 0 {
                continue;
            }
            for px in px0..px1 {
                let lo = (px as i128 * span).max(sx0);
                let hi = ((px as i128 + 1) * span).min(sx1);
                let ox = hi - lo;
                if ox > 0 {
                    acc[py * side + px] += ox * oy;
                }
            }
        }
    }
    acc
}

/// Rasterizes a pattern into a `side`×`side` coverage bitmap.
pub fn rasterize(p: &Pattern, side: usize) -> Bitmap {
    let span = 2 * p.radius as i128;
    let full = (span * span) as f64;
    let pixels = coverage_numerators(p, side)
        .into_iter()
        .map(|n| n as f64 / full)
        .collect();
    Bitmap::from_pixels(side, p.radius, pixels)
}

/// Low-frequency block of the orthonormal 2D DCT-II.
#[derive(Clone, Debug, PartialEq)]
pub struct DctFeature {
    pub k: usize,
    pub coeffs: Vec<f64>,
}

impl DctFeature {
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

type DctTable = Rc<Vec<f64>>;

thread_local! {
    static DCT_TABLES: RefCell<HashMap<(usize, usize), DctTable>> = RefCell::new(HashMap::new());
}

/// `table[u * n + x] = alpha(u) * cos(pi * (2x + 1) * u / 2n)` for `u < k`.
fn dct_table(n: usize, k: usize) -> DctTable {
    DCT_TABLES.with(|t| {
        t.borrow_mut()
            .entry((n, k))
            .or_insert_with(|| {
                let mut table = vec![0.0; k * n];
                for u in 0..k {
                    let alpha = if u == 0 {
                        (1.0 / n as f64).sqrt()
                    } else {
                        (2.0 / n as f64).sqrt()
                    };
                    for x in 0..n {
                        table[u * n + x] = alpha * (PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
                    }
                }
                Rc::new(table)
            })
            .clone()
    })
}

/// Top-left `k`×`k` block of the orthonormal DCT-II, row-major with the row
/// index being the vertical frequency.
pub fn dct_features(b: &Bitmap, k: usize) -> DctFeature {
    let n = b.side();
    assert!(k >= 1 && k <= n, "dct block {k} out of range for side {n}");
    let table = dct_table(n, k);
    let px = b.pixels();
    // rows: tmp[y][u]
    let mut tmp = vec![0.0; n * k];
    for y in 0..n {
        let row = &px[y * n..(y + 1) * n];
        for u in 0..k {
            let basis = &table[u * n..(u + 1) * n];
            tmp[y * k + u] = row.iter().zip(basis).map(|(a, c)| a * c).sum();
        }
    }
    let mut coeffs = vec![0.0; k * k];
    for v in 0..k {
        let basis = &table[v * n..(v + 1) * n];
        for u in 0..k {
            coeffs[v * k + u] = (0..n).map(|y| basis[y] * tmp[y * k + u]).sum();
        }
    }
    DctFeature { k, coeffs }
}

/// Cosine of the angle between two feature vectors.
///
/// Two zero vectors are identical (empty) patterns and score 1. A zero vector
/// against a nonzero one scores 0.
pub fn cosine_similarity(a: &DctFeature, b: &DctFeature) -> f64 {
    cosine(&a.coeffs, &b.coeffs)
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "feature length mismatch");
    if a == b && a.iter().any(|&v| v != 0.0) {
        return 1.0;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
    }
}

/// Convenience: rasterize then take DCT features.
pub fn pattern_features(p: &Pattern, side: usize, k: usize) -> DctFeature {
    dct_features(&rasterize(p, side), k)
}
