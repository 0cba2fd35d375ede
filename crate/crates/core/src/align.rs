//! Optimal alignment engine.
//!
//! Every aligner answers the same question: by how much must the center of
//! pattern `b` move so that its content lines up with pattern `a`. A
//! [`Translation`] is that center move; equivalently it is the displacement of
//! `b`'s content relative to `a`'s inside their windows.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::{Add, Neg};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{match_polygons, Axis, Coord, EdgeOffset, Marker, Pattern, Point};
use crate::raster::Bitmap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Translation {
    pub dx: Coord,
    pub dy: Coord,
}

impl Translation {
    pub const ZERO: Translation = Translation { dx: 0, dy: 0 };

    pub const fn new(dx: Coord, dy: Coord) -> Self {
        Self { dx, dy }
    }

    pub fn apply(self, p: Point) -> Point {
        Point::new(p.x + self.dx, p.y + self.dy)
    }

    /// As a shift applied to `b`'s shapes to overlay them on `a`.
    pub fn as_shape_shift(self) -> Point {
        Point::new(-self.dx, -self.dy)
    }
}

impl Neg for Translation {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.dx, -self.dy)
    }
}

impl Add for Translation {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        Self::new(self.dx + other.dx, self.dy + other.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("bitmap has an all-zero spectrum")]
    DegenerateSpectrum,
    #[error("no polygon correspondence between patterns")]
    NoCorrespondence,
}

/// Result of phase correlation.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSurface {
    pub side: usize,
    pub values: Vec<f64>,
    pub peak: (usize, usize),
    pub peak_value: f64,
}

impl CorrelationSurface {
    /// Peak as a circular shift in `(-G/2, G/2]`.
    pub fn shift(&self) -> (i64, i64) {
        let g = self.side as i64;
        let wrap = |p: usize| {
            let p = p as i64;
            if p > g / 2 {
                p - g
            } else {
                p
            }
        };
        (wrap(self.peak.0), wrap(self.peak.1))
    }
}

/// Spectral floor relative to the largest cross-power modulus.
const SPECTRAL_FLOOR: f64 = 1e-12;

type FftPlan = Arc<dyn Fft<f64>>;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), FftPlan>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place 2D FFT of a row-major `n`×`n` buffer.
fn fft2(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let fft = plan(n, inverse);
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
}

fn to_complex(b: &Bitmap) -> Vec<Complex<f64>> {
    b.pixels().iter().map(|&v| Complex::new(v, 0.0)).collect()
}

/// Phase correlation surface of `moving` against `reference`.
pub fn correlation_surface(reference: &Bitmap, moving: &Bitmap) -> Result<CorrelationSurface, AlignError> {
    assert_eq!(reference.side(), moving.side(), "bitmap sides differ");
    if reference.is_blank() || moving.is_blank() {
        return Err(AlignError::DegenerateSpectrum);
    }
    let n = reference.side();
    let mut f = to_complex(reference);
    let mut g = to_complex(moving);
    fft2(&mut f, n, false);
    fft2(&mut g, n, false);
    let mut cross: Vec<Complex<f64>> = g.iter().zip(&f).map(|(gv, fv)| gv * fv.conj()).collect();
    let max_mod = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max_mod == 0.0 {
        return Err(AlignError::DegenerateSpectrum);
    }
    let floor = SPECTRAL_FLOOR * max_mod;
    for c in cross.iter_mut() {
        let m = c.norm();
        *c = if m < floor { Complex::new(0.0, 0.0) } else { *c / m };
    }
    fft2(&mut cross, n, true);
    let scale = 1.0 / (n * n) as f64;
    let values: Vec<f64> = cross.iter().map(|c| c.re * scale).collect();
    // row-major scan keeps the first (smallest (y, x)) maximum
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    Ok(CorrelationSurface {
        side: n,
        peak: (best % n, best / n),
        peak_value: values[best],
        values,
    })
}

/// Circular pixel shift of `moving`'s content relative to `reference`.
pub fn phase_correlate(reference: &Bitmap, moving: &Bitmap) -> Result<(i64, i64), AlignError> {
    correlation_surface(reference, moving).map(|s| s.shift())
}

/// Phase correlation converted to a nanometer translation (nearest nm).
pub fn phase_correlate_nm(reference: &Bitmap, moving: &Bitmap) -> Result<Translation, AlignError> {
    let (sx, sy) = phase_correlate(reference, moving)?;
    let pitch = reference.pixel_pitch();
    Ok(Translation::new(
        (sx as f64 * pitch).round() as Coord,
        (sy as f64 * pitch).round() as Coord,
    ))
}

/// Allowed displacements along one axis for a polygon pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeasibleInterval {
    pub axis: Axis,
    pub d_min: Coord,
    pub d_max: Coord,
}

impl FeasibleInterval {
    pub fn new(axis: Axis, a: Coord, b: Coord) -> Self {
        Self {
            axis,
            d_min: a.min(b),
            d_max: a.max(b),
        }
    }

    /// Interval width; narrower means a tighter alignment constraint.
    pub fn quality(&self) -> Coord {
        self.d_max - self.d_min
    }

    /// Midpoint rounded half toward zero.
    pub fn midpoint(&self) -> Coord {
        (self.d_min + self.d_max) / 2
    }
}

/// Per-pair X and Y intervals from bounding boxes: the offsets that align the
/// low sides and the high sides of the two boxes.
pub fn pair_intervals(a: &Pattern, b: &Pattern, pairs: &[(usize, usize)]) -> Vec<(FeasibleInterval, FeasibleInterval)> {
    pairs
        .iter()
        .map(|&(ia, ib)| {
            let ba = a.shapes[ia].bbox();
            let bb = b.shapes[ib].bbox();
            (
                FeasibleInterval::new(Axis::X, bb.xlo - ba.xlo, bb.xhi - ba.xhi),
                FeasibleInterval::new(Axis::Y, bb.ylo - ba.ylo, bb.yhi - ba.yhi),
            )
        })
        .collect()
}

/// Interval competition: per axis the narrowest interval wins (first pair on
/// ties) and the translation is its midpoint.
pub fn interval_competition(intervals: &[(FeasibleInterval, FeasibleInterval)]) -> Option<Translation> {
    let wx = intervals.iter().map(|(x, _)| x).min_by_key(|iv| iv.quality())?;
    let wy = intervals.iter().map(|(_, y)| y).min_by_key(|iv| iv.quality())?;
    Some(Translation::new(wx.midpoint(), wy.midpoint()))
}

/// Geometric min-max alignment for the cosine track.
///
/// Polygons are paired at the `hint` translation (falling back to zero); if
/// no pairing exists the whole-content bounding boxes are paired instead.
pub fn xy_minmax_align(a: &Pattern, b: &Pattern, hint: Translation) -> Result<Translation, AlignError> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(Translation::ZERO),
        (true, false) | (false, true) => return Err(AlignError::NoCorrespondence),
        _ => {}
    }
    let corr = match_polygons(a, b, hint.as_shape_shift()).or_else(|_| match_polygons(a, b, Point::ORIGIN));
    if let Ok(corr) = corr {
        if let Some(t) = interval_competition(&pair_intervals(a, b, &corr.pairs)) {
            return Ok(t);
        }
    }
    let (ba, bb) = match (a.content_bbox(), b.content_bbox()) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(AlignError::NoCorrespondence),
    };
    let ix = FeasibleInterval::new(Axis::X, bb.xlo - ba.xlo, bb.xhi - ba.xhi);
    let iy = FeasibleInterval::new(Axis::Y, bb.ylo - ba.ylo, bb.yhi - ba.yhi);
    Ok(Translation::new(ix.midpoint(), iy.midpoint()))
}

/// Min-max alignment of edge offsets.
///
/// Per axis the translation is the midpoint of the offset range (half toward
/// zero) and the residual is `ceil((max - min) / 2)`. An axis without edges
/// contributes zero shift and zero residual. Returns the translation and the
/// worst axis residual.
pub fn edge_minmax_align(displacements: &[EdgeOffset]) -> (Translation, Coord) {
    let mut x: Option<(Coord, Coord)> = None;
    let mut y: Option<(Coord, Coord)> = None;
    for d in displacements {
        let slot = match d.axis {
            Axis::X => &mut x,
            Axis::Y => &mut y,
        };
        *slot = Some(match *slot {
            None => (d.offset, d.offset),
            Some((lo, hi)) => (lo.min(d.offset), hi.max(d.offset)),
        });
    }
    let solve = |range: Option<(Coord, Coord)>| match range {
        None => (0, 0),
        Some((lo, hi)) => ((lo + hi) / 2, (hi - lo + 1) / 2),
    };
    let (tx, rx) = solve(x);
    let (ty, ry) = solve(y);
    (Translation::new(tx, ty), rx.max(ry))
}

/// Largest `|d - T|` over the displacements, per the translation's axis.
pub fn max_deviation(displacements: &[EdgeOffset], t: Translation) -> Coord {
    displacements
        .iter()
        .map(|d| match d.axis {
            Axis::X => (d.offset - t.dx).abs(),
            Axis::Y => (d.offset - t.dy).abs(),
        })
        .max()
        .unwrap_or(0)
}

/// Per-axis clamp of `t` so that `center + t` stays inside the marker.
pub fn clamp_to_marker(t: Translation, center: Point, marker: &Marker) -> Translation {
    let r = marker.rect;
    Translation::new(
        (center.x + t.dx).clamp(r.xlo, r.xhi) - center.x,
        (center.y + t.dy).clamp(r.ylo, r.yhi) - center.y,
    )
}
