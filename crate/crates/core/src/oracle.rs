//! Analytical references and brute-force baselines.
//!
//! Time convention is `e^{-iωt}`, so an outgoing wave carries `e^{+ikr}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::beamtrace::{BeamPath, CMat2};
use crate::gbs::{BeamWidth, GbsParams};
use crate::scene::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("observer below the rigid plane (z = {0})")]
    BelowGround(f64),
    #[error("degenerate beam {0}")]
    DegenerateBeam(usize),
}

/// Free-field monopole `e^{ikr} / (4πr)`.
pub fn monopole_free(r: f64, k: f64) -> Result<Complex64, OracleError> {
    if !(r > 0.0) {
        return Err(OracleError::NonPositiveDistance(r));
    }
    Ok(Complex64::from_polar(1.0 / (4.0 * PI * r), k * r))
}

/// Monopole above an infinite rigid plane at `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonopoleCase {
    pub source: Vec3,
    pub freq: f64,
    pub sound_speed: f64,
}

impl MonopoleCase {
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.freq / self.sound_speed
    }

    pub fn image(&self) -> Vec3 {
        Vec3::new(self.source.x, self.source.y, -self.source.z)
    }
}

/// Direct plus image-source field (rigid plane, reflection coefficient +1).
pub fn image_source_field(case: &MonopoleCase, observer: &Vec3) -> Result<Complex64, OracleError> {
    if observer.z < 0.0 {
        return Err(OracleError::BelowGround(observer.z));
    }
    let k = case.wavenumber();
    let direct = monopole_free((observer - case.source).norm(), k)?;
    let image = monopole_free((observer - case.image()).norm(), k)?;
    Ok(direct + image)
}

/// Positions `x` along the line `(x, y0, z_line)` where direct and image
/// arrivals are in antiphase, i.e. `k·(r_image − r_direct) = (2m+1)π`, for
/// `x ∈ [x_min, x_max]`.
pub fn interference_nulls(case: &MonopoleCase, y0: f64, z_line: f64, x_min: f64, x_max: f64) -> Vec<f64> {
    let k = case.wavenumber();
    let img = case.image();
    let phase = |x: f64| {
        let p = Vec3::new(x, y0, z_line);
        k * ((p - img).norm() - (p - case.source).norm())
    };
    // scan finely, then bisect each crossing
    let steps = 20_000;
    let dx = (x_max - x_min) / steps as f64;
    let mut out = Vec::new();
    for i in 0..steps {
        let (a, b) = (x_min + i as f64 * dx, x_min + (i + 1) as f64 * dx);
        let (pa, pb) = (phase(a), phase(b));
        let lo = pa.min(pb);
        let hi = pa.max(pb);
        let mut m = ((lo / PI - 1.0) / 2.0).ceil() as i64;
        while ((2 * m + 1) as f64) * PI <= hi {
            let target = (2 * m + 1) as f64 * PI;
            if target >= lo && !(target == pb && i + 1 < steps) {
                let (mut l, mut r) = (a, b);
                for _ in 0..80 {
                    let mid = 0.5 * (l + r);
                    if (phase(l) - target) * (phase(mid) - target) <= 0.0 {
                        r = mid;
                    } else {
                        l = mid;
                    }
                }
                out.push(0.5 * (l + r));
            }
            m += 1;
        }
    }
    out
}

/// `sqrt(det Q(s))` tracked numerically from `s = 0` in small steps, choosing
/// at each step the root closest to the previous one.
fn tracked_sqrt_det(q0: &CMat2, a: &CMat2, s: f64) -> Complex64 {
    let det = |t: f64| {
        let m = q0 + a * Complex64::new(t, 0.0);
        m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
    };
    let steps = (s / 0.25).ceil().max(1.0) as usize;
    // at s = 0 follow the limit from inside the path
    let mut root = det(s.min(1e-9)).sqrt();
    for i in 1..=steps {
        let t = s * i as f64 / steps as f64;
        let r = det(t).sqrt();
        root = if (r - root).norm() <= (-r - root).norm() { r } else { -r };
    }
    root
}

/// Direct evaluation of the discretised beam integral with no cutoff and no
/// shortcuts: every beam, every segment that sees the observer, ascending
/// beam index.
pub fn brute_force_sum(observer: &Vec3, paths: &[BeamPath], params: &GbsParams) -> Result<Vec<Complex64>, OracleError> {
    let mut acc = vec![Complex64::new(0.0, 0.0); params.omegas.len()];
    for path in paths {
        let c = path.sound_speed;
        let n = path.segments.len();
        for (k, seg) in path.segments.iter().enumerate() {
            if seg.length <= 0.0 {
                continue;
            }
            let rel = observer - seg.origin;
            let t = rel.dot(&seg.direction);
            let within = t >= 0.0 && (t < seg.length || (t == seg.length && k + 1 == n));
            let before = t < 0.0 && k > 0 && seg.s_start + t >= 0.0 && {
                let m = seg.direction - path.segments[k - 1].direction;
                m != Vec3::zeros() && rel.dot(&m) >= 0.0
            };
            let beyond = t >= seg.length && k + 1 < n && {
                let next = &path.segments[k + 1];
                let m = next.direction - seg.direction;
                m != Vec3::zeros() && (observer - next.origin).dot(&m) >= 0.0
            };
            if !(within || before || beyond) {
                continue;
            }
            let s = seg.s_start + t;
            let q = nalgebra::Vector2::new(
                Complex64::new(rel.dot(&seg.e1), 0.0),
                Complex64::new(rel.dot(&seg.e2), 0.0),
            );
            let q0 = match params.width {
                BeamWidth::Launch => path.q0,
                BeamWidth::ReceiverMatched { kappa } => {
                    let r = (s * s + q.norm_squared()).sqrt();
                    CMat2::from_diagonal_element(Complex64::new(0.0, -kappa * r))
                }
            };
            let a = path.p0 * Complex64::new(c, 0.0);
            let q_s = q0 + a * Complex64::new(s, 0.0);
            let inv = q_s
                .try_inverse()
                .ok_or(OracleError::DegenerateBeam(path.index))?;
            let m = path.p0 * inv;
            let quad = (q.transpose() * m * q)[(0, 0)];
            let root = tracked_sqrt_det(&q0, &a, s);
            let eps = -(q0[(0, 0)].im + q0[(1, 1)].im) / 2.0;
            for (f, &omega) in params.omegas.iter().enumerate() {
                let exponent = Complex64::new(0.0, omega) * (s / c) + Complex64::new(0.0, omega / 2.0) * quad;
                let p = Complex64::new(c.sqrt(), 0.0) / root * params.amplitude_phi * seg.amplitude * exponent.exp();
                let phi = params.calibration * (omega / c) * eps;
                acc[f] += p * phi * path.weight_dgamma;
            }
        }
    }
    Ok(acc)
}
