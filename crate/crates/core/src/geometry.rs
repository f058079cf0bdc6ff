//! Normalized board geometry. All coordinates live in the unit square, with
//! `(0, 0)` at the top-left corner of the board.

use serde::{Deserialize, Serialize};

/// Number of significant decimal digits kept for every stored coordinate.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
///
/// Stored coordinates are quantized on write so that the in-memory value and
/// its canonical text rendering are the same number.
pub fn quantize(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        // folds -0.0 into 0.0
        return if v == 0.0 { 0.0 } else { v };
    }
    let s = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    s.parse().unwrap_or(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Size {
    pub w: f64,
    pub h: f64,
}

impl Size {
    pub const fn new(w: f64, h: f64) -> Self {
        Self { w, h }
    }

    /// A usable note size: both components finite and strictly positive.
    pub fn is_valid(&self) -> bool {
        self.w.is_finite() && self.h.is_finite() && self.w > 0.0 && self.h > 0.0
    }

    /// Caps each component at 1 and quantizes.
    pub fn clamped(self) -> Size {
        Size::new(quantize(self.w.min(1.0)), quantize(self.h.min(1.0)))
    }

    pub fn halved(self) -> Size {
        Size::new(quantize(self.w / 2.0), quantize(self.h / 2.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_parts(pos: Point, size: Size) -> Self {
        Self::new(pos.x, pos.y, size.w, size.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Far edges are quantized like stored coordinates, so adjacent rects
    /// share an edge exactly (`0.4 + 0.2` would land past `0.6`).
    pub fn right(&self) -> f64 {
        quantize(self.x + self.w)
    }

    pub fn bottom(&self) -> f64 {
        quantize(self.y + self.h)
    }

    /// Closed containment: points on the edge count as inside.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// True when the rect lies inside the unit square.
    pub fn within_unit_square(&self) -> bool {
        const EPS: f64 = 1e-9;
        self.x >= 0.0
            && self.y >= 0.0
            && self.w > 0.0
            && self.h > 0.0
            && self.right() <= 1.0 + EPS
            && self.bottom() <= 1.0 + EPS
    }
}

/// Moves a note's top-left corner so the whole note fits on the board.
///
/// Sizes above 1 are treated as 1. Returns `pos` unchanged when the note
/// already fits. Non-finite coordinates collapse to 0.
pub fn clamp_position(pos: Point, size: Size) -> Point {
    let w = size.w.min(1.0);
    let h = size.h.min(1.0);
    let clamp = |v: f64, extent: f64| {
        let hi = quantize(1.0 - extent).max(0.0);
        if v.is_nan() {
            0.0
        } else {
            quantize(v.clamp(0.0, hi))
        }
    };
    Point::new(clamp(pos.x, w), clamp(pos.y, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_examples() {
        let size = Size::new(0.2, 0.1);
        assert_eq!(clamp_position(Point::new(0.5, 0.5), size), Point::new(0.5, 0.5));
        assert_eq!(clamp_position(Point::new(0.95, 0.5), size), Point::new(0.8, 0.5));
        assert_eq!(clamp_position(Point::new(-0.3, 1.2), size), Point::new(0.0, 0.9));
    }

    #[test]
    fn oversized_note_pinned_to_origin() {
        assert_eq!(
            clamp_position(Point::new(0.4, 0.4), Size::new(3.0, 1.5)),
            Point::new(0.0, 0.0)
        );
    }

    #[test]
    fn quantize_keeps_nine_digits() {
        assert_eq!(quantize(1.0 / 3.0), 0.333333333);
        assert_eq!(quantize(0.8), 0.8);
        assert_eq!(quantize(-0.0).to_bits(), 0.0f64.to_bits());
        assert_eq!(quantize(quantize(2.0 / 3.0)), quantize(2.0 / 3.0));
    }

    #[test]
    fn intersection() {
        let a = Rect::new(0.0, 0.0, 0.5, 0.5);
        let b = Rect::new(0.5, 0.0, 0.5, 0.5);
        assert_eq!(a.intersection_area(&b), 0.0);
        let c = Rect::new(0.25, 0.25, 0.5, 0.5);
        assert!((a.intersection_area(&c) - 0.0625).abs() < 1e-12);
    }
}
