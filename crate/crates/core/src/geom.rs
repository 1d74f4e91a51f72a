//! Angle helpers shared by the image and template code.
//!
//! All angles use pixel coordinates: x grows to the right, y grows downward,
//! and an angle `a` denotes the direction `(cos a, sin a)`.

use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use num_traits::Euclid;

/// Wraps into `[0, 2π)`.
pub fn wrap_tau(a: f64) -> f64 {
    let r = Euclid::rem_euclid(&a, &TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps into `[0, π)`; used for undirected orientations.
pub fn wrap_pi(a: f64) -> f64 {
    let r = Euclid::rem_euclid(&a, &PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_tau(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Smallest difference between two undirected orientations, in `[0, π/2]`.
pub fn orientation_diff(a: f64, b: f64) -> f64 {
    let d = wrap_pi(a - b);
    d.min(PI - d)
}

pub fn deg(rad: f64) -> f64 {
    rad * 180.0 / PI
}

pub fn rad(deg: f64) -> f64 {
    deg * PI / 180.0
}

/// Rotates `(x, y)` about `(cx, cy)` by `angle`.
pub fn rotate_point(x: f64, y: f64, cx: f64, cy: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    let dx = x - cx;
    let dy = y - cy;
    (cx + c * dx - s * dy, cy + s * dx + c * dy)
}
