//! Gaussian beam summation: evaluate every traced beam at an observer in its
//! ray-centred coordinates and accumulate the weighted contributions.
//!
//! Each segment of a beam is evaluated at the observer's perpendicular foot.
//! After a planar reflection this is the observer's mirror image seen along
//! the unfolded ray, so direct and reflected arrivals of the same beam are both
//! collected. Segments on either side of a reflector are continued across it
//! while the observer stays in front of the reflector, so an observer close to
//! a reflecting surface receives both the incident and the reflected beam.
//!
//! The per-beam weight is `Φ = scale · k · ε`, where `ε = -Im Q0` is the beam
//! width parameter and `k = ω/c`. For a point source in a homogeneous medium the
//! beam integral then evaluates to `e^{ikr}/(4πr)` with
//! `scale = 1 / (8π² φ √c)`, independent of frequency and of `ε`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::beamtrace::{BeamPath, CMat2, Segment};
use crate::scene::Vec3;

/// SPL reference pressure, Pa.
pub const P_REF: f64 = 2e-5;

/// Contributions whose Gaussian exponent has real part below this are skipped.
pub const EXPONENT_CUTOFF: f64 = -36.0;

/// Probe radius used by [`calibrate_phi`], meters.
pub const CALIBRATION_RADIUS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GbsError {
    #[error("degenerate beam {beam} at s = {s} m (det Q = 0 or Im(PQ⁻¹) not positive definite)")]
    DegenerateBeam { beam: usize, s: f64 },
    #[error("calibration needs free-field paths; beam {0} was reflected")]
    NotFreeField(usize),
    #[error("calibration did not converge: {spread_db:.3} dB spread over probe directions")]
    NonConvergent { spread_db: f64 },
    #[error("calibration probe received no beam contributions")]
    NoContribution,
}

/// How the beam width parameter is chosen when a beam is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeamWidth {
    /// Use the path's own launch `Q0`.
    Launch,
    /// Receiver-matched: `Q0 = -i·κ·r·I` with `r` the unfolded distance from
    /// the source to the observer.
    ReceiverMatched { kappa: f64 },
}

impl Default for BeamWidth {
    fn default() -> Self {
        BeamWidth::ReceiverMatched { kappa: 1.25 }
    }
}

/// Everything the summation needs besides paths and observers.
#[derive(Debug, Clone, PartialEq)]
pub struct GbsParams {
    pub omegas: Vec<f64>,
    pub amplitude_phi: f64,
    pub calibration: f64,
    pub width: BeamWidth,
    pub cutoff: bool,
}

impl GbsParams {
    pub fn n_freq(&self) -> usize {
        self.omegas.len()
    }
}

/// Closed-form calibration scale for an isotropic launch.
pub fn analytic_scale(amplitude_phi: f64, c: f64) -> f64 {
    1.0 / (8.0 * PI * PI * amplitude_phi * c.sqrt())
}

pub fn spl(pressure: Complex64) -> f64 {
    let mag = pressure.norm();
    if mag == 0.0 {
        f64::NEG_INFINITY
    } else {
        20.0 * (mag / P_REF).log10()
    }
}

/// Nearest point of a path to an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPoint {
    pub segment: usize,
    pub s_star: f64,
    /// Offset in the segment's `(e1, e2)` frame.
    pub q: [f64; 2],
    pub distance: f64,
}

/// Euclidean projection of `observer` onto the reflected polyline. Ties go to
/// the smaller arc length.
pub fn nearest_on_path(observer: &Vec3, path: &BeamPath) -> NearestPoint {
    assert!(!path.segments.is_empty(), "path has no segments");
    let mut best: Option<NearestPoint> = None;
    for (k, seg) in path.segments.iter().enumerate() {
        let rel = observer - seg.origin;
        let t = rel.dot(&seg.direction).clamp(0.0, seg.length);
        let foot = seg.origin + seg.direction * t;
        let off = observer - foot;
        let d = off.norm();
        if best.is_none_or(|b| d < b.distance) {
            best = Some(NearestPoint {
                segment: k,
                s_star: seg.s_start + t,
                q: [off.dot(&seg.e1), off.dot(&seg.e2)],
                distance: d,
            });
        }
    }
    best.unwrap()
}

/// Perpendicular foot of `observer` on segment `k`, or `None` when segment
/// `k` does not see the observer.
///
/// Inside the segment (half-open, the final segment closed at its end) the
/// foot always counts. Past the end of a reflected leg the beam is continued
/// while the observer stays on the incident side of the reflector, and before
/// the start of a reflected leg it is continued back to the reflector's front
/// half-space as long as the total arc length stays non-negative.
pub fn foot_in_segment(observer: &Vec3, path: &BeamPath, k: usize) -> Option<(f64, [f64; 2])> {
    let seg: &Segment = &path.segments[k];
    if seg.length <= 0.0 {
        return None;
    }
    let rel = observer - seg.origin;
    let t = rel.dot(&seg.direction);
    let last = k + 1 == path.segments.len();
    let seen = if t < 0.0 {
        k > 0 && seg.s_start + t >= 0.0 && in_front(&rel, &path.segments[k - 1].direction, &seg.direction)
    } else if t < seg.length || (last && t <= seg.length) {
        true
    } else if last {
        false
    } else {
        let next = &path.segments[k + 1];
        in_front(&(observer - next.origin), &seg.direction, &next.direction)
    };
    seen.then(|| (seg.s_start + t, [rel.dot(&seg.e1), rel.dot(&seg.e2)]))
}

/// Whether `rel` (measured from a reflection point) lies on the front side of
/// the reflector that turned `incoming` into `outgoing`.
fn in_front(rel: &Vec3, incoming: &Vec3, outgoing: &Vec3) -> bool {
    let normal = outgoing - incoming;
    normal.norm_squared() > 0.0 && rel.dot(&normal) >= 0.0
}

fn scalar_of(m: &CMat2) -> Option<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    (m[(0, 1)] == zero && m[(1, 0)] == zero && m[(0, 0)] == m[(1, 1)]).then_some(m[(0, 0)])
}

/// `sqrt(det(Q0 + s·A))` on the branch that is continuous in `s ≥ 0`.
///
/// `det(Q0 + sA)` is a quadratic `a s² + b s + d = a (s − z1)(s − z2)`; the
/// factored root `√a·√(s−z1)·√(s−z2)` never crosses a branch cut while the
/// roots are off the non-negative real axis.
pub fn sqrt_det_continuous(q0: &CMat2, a_mat: &CMat2, s: f64) -> Complex64 {
    let a = a_mat[(0, 0)] * a_mat[(1, 1)] - a_mat[(0, 1)] * a_mat[(1, 0)];
    let b = q0[(0, 0)] * a_mat[(1, 1)] + a_mat[(0, 0)] * q0[(1, 1)]
        - q0[(0, 1)] * a_mat[(1, 0)]
        - a_mat[(0, 1)] * q0[(1, 0)];
    let d = q0[(0, 0)] * q0[(1, 1)] - q0[(0, 1)] * q0[(1, 0)];
    let s = Complex64::new(s, 0.0);
    if a.norm() > 0.0 {
        let disc = (b * b - a * d * 4.0).sqrt();
        let z1 = (-b + disc) / (a * 2.0);
        let z2 = (-b - disc) / (a * 2.0);
        a.sqrt() * (s - z1).sqrt() * (s - z2).sqrt()
    } else if b.norm() > 0.0 {
        b.sqrt() * (s + d / b).sqrt()
    } else {
        d.sqrt()
    }
}

/// Effective launch matrices for one evaluation.
fn effective_q0(path: &BeamPath, width: BeamWidth, unfolded_distance: f64) -> CMat2 {
    match width {
        BeamWidth::Launch => path.q0,
        BeamWidth::ReceiverMatched { kappa } => {
            CMat2::identity() * Complex64::new(0.0, -kappa * unfolded_distance)
        }
    }
}

/// Width parameter `ε = -Im tr(Q0) / 2`.
fn width_parameter(q0: &CMat2) -> f64 {
    -(q0[(0, 0)].im + q0[(1, 1)].im) / 2.0
}

/// Evaluated Gaussian beam field at one point of one beam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamEval {
    pub s_star: f64,
    pub q: [f64; 2],
    pub contribution: Complex64,
    /// Real part of the Gaussian exponent.
    pub exponent_re: f64,
}

/// Field of beam `path` at ray-centred coordinates `(s_star, q)` of segment
/// `segment`, using launch matrix `q0`. The `e^{-iωt}` factor is dropped.
///
/// `p = φ·sqrt(c / det Q)·r_acc·exp[iωT + (iω/2) qᵀPQ⁻¹q]`
pub fn beam_pressure(
    path: &BeamPath,
    segment: usize,
    s_star: f64,
    q: [f64; 2],
    omega: f64,
    q0: &CMat2,
    amplitude_phi: f64,
) -> Result<BeamEval, GbsError> {
    let c = path.sound_speed;
    let a_mat = path.p0 * Complex64::new(c, 0.0);
    let q_s = q0 + a_mat * Complex64::new(s_star, 0.0);
    let degenerate = || GbsError::DegenerateBeam { beam: path.index, s: s_star };
    let (root, quad) = match (scalar_of(q0), scalar_of(&path.p0)) {
        // isotropic with real P: sqrt(det Q) on the continuous branch is Q itself
        (Some(_), Some(p)) if p.im == 0.0 && p.re > 0.0 => {
            let qs = q_s[(0, 0)];
            if qs.norm() == 0.0 {
                return Err(degenerate());
            }
            let m = p / qs;
            if !(m.im > 0.0) {
                return Err(degenerate());
            }
            (qs, m * (q[0] * q[0] + q[1] * q[1]))
        }
        _ => {
            let inv = q_s.try_inverse().ok_or_else(degenerate)?;
            let m = path.p0 * inv;
            // Hermitian part of Im(M) must be positive definite
            let h11 = m[(0, 0)].im;
            let h22 = m[(1, 1)].im;
            let h12 = 0.5 * (m[(0, 1)].im + m[(1, 0)].im);
            if !(h11 > 0.0 && h11 * h22 - h12 * h12 > 0.0) {
                return Err(degenerate());
            }
            let quad = m[(0, 0)] * q[0] * q[0]
                + (m[(0, 1)] + m[(1, 0)]) * q[0] * q[1]
                + m[(1, 1)] * q[1] * q[1];
            (sqrt_det_continuous(q0, &a_mat, s_star), quad)
        }
    };
    let travel = s_star / c;
    let i_omega = Complex64::new(0.0, omega);
    let exponent = i_omega * travel + i_omega * 0.5 * quad;
    let seg = &path.segments[segment];
    let contribution = (c.sqrt() / root) * (amplitude_phi * seg.amplitude) * exponent.exp();
    Ok(BeamEval {
        s_star,
        q,
        contribution,
        exponent_re: exponent.re,
    })
}

/// Work counters for one summation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCount {
    pub evaluations: u64,
    pub skipped: u64,
}

impl std::ops::AddAssign for WorkCount {
    fn add_assign(&mut self, rhs: Self) {
        self.evaluations += rhs.evaluations;
        self.skipped += rhs.skipped;
    }
}

/// Weighted contribution of one beam at one observer, per frequency, summed
/// over its segments in order. Returns whether any segment contributed.
pub fn beam_contribution(
    observer: &Vec3,
    path: &BeamPath,
    params: &GbsParams,
    out: &mut [Complex64],
    work: &mut WorkCount,
) -> Result<bool, GbsError> {
    debug_assert_eq!(out.len(), params.n_freq());
    out.fill(Complex64::new(0.0, 0.0));
    let c = path.sound_speed;
    let mut any = false;
    for k in 0..path.segments.len() {
        let Some((s_star, q)) = foot_in_segment(observer, path, k) else {
            continue;
        };
        let r = (s_star * s_star + q[0] * q[0] + q[1] * q[1]).sqrt();
        let q0 = effective_q0(path, params.width, r);
        let eps = width_parameter(&q0);
        for (f, &omega) in params.omegas.iter().enumerate() {
            let ev = beam_pressure(path, k, s_star, q, omega, &q0, params.amplitude_phi)?;
            if params.cutoff && ev.exponent_re < EXPONENT_CUTOFF {
                work.skipped += 1;
                continue;
            }
            work.evaluations += 1;
            let phi_weight = params.calibration * (omega / c) * eps * path.weight_dgamma;
            out[f] += ev.contribution * phi_weight;
            any = true;
        }
    }
    Ok(any)
}

/// Adds the contributions of `paths` to `acc` (one entry per frequency) in
/// ascending path order. This fold order is the reference order every
/// execution plan reproduces.
pub fn accumulate(
    observer: &Vec3,
    paths: &[BeamPath],
    params: &GbsParams,
    acc: &mut [Complex64],
    work: &mut WorkCount,
) -> Result<(), GbsError> {
    let mut scratch = vec![Complex64::new(0.0, 0.0); params.n_freq()];
    for path in paths {
        if beam_contribution(observer, path, params, &mut scratch, work)? {
            for (a, v) in acc.iter_mut().zip(&scratch) {
                *a += *v;
            }
        }
    }
    Ok(())
}

/// Pressure at one observer, one value per frequency.
pub fn sum_at_observer(
    observer: &Vec3,
    paths: &[BeamPath],
    params: &GbsParams,
) -> Result<Vec<Complex64>, GbsError> {
    let mut acc = vec![Complex64::new(0.0, 0.0); params.n_freq()];
    let mut work = WorkCount::default();
    accumulate(observer, paths, params, &mut acc, &mut work)?;
    Ok(acc)
}

/// Unit vectors towards the 26 neighbours of a cube cell.
pub fn probe_directions() -> Vec<Vec3> {
    let mut out = Vec::with_capacity(26);
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                if (x, y, z) != (0, 0, 0) {
                    out.push(Vec3::new(x as f64, y as f64, z as f64).normalize());
                }
            }
        }
    }
    out
}

/// Free-field calibration of the weighting scale: the field summed at
/// [`CALIBRATION_RADIUS`] in the 26 probe directions is matched in magnitude
/// to `1/(4πr)`. Returns the geometric mean of the per-probe scales.
pub fn calibrate_phi(
    paths: &[BeamPath],
    source: &Vec3,
    omega: f64,
    amplitude_phi: f64,
    width: BeamWidth,
) -> Result<f64, GbsError> {
    if let Some(p) = paths.iter().find(|p| p.n_reflections > 0) {
        return Err(GbsError::NotFreeField(p.index));
    }
    let params = GbsParams {
        omegas: vec![omega],
        amplitude_phi,
        calibration: 1.0,
        width,
        cutoff: true,
    };
    let target = 1.0 / (4.0 * PI * CALIBRATION_RADIUS);
    let mut levels = Vec::with_capacity(26);
    for dir in probe_directions() {
        let probe = source + dir * CALIBRATION_RADIUS;
        let p = sum_at_observer(&probe, paths, &params)?[0];
        if p.norm() == 0.0 {
            return Err(GbsError::NoContribution);
        }
        levels.push(20.0 * (target / p.norm()).log10());
    }
    let max = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = levels.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min > 1.0 {
        return Err(GbsError::NonConvergent { spread_db: max - min });
    }
    let mean_db = levels.iter().sum::<f64>() / levels.len() as f64;
    Ok(10f64.powf(mean_db / 20.0))
}

/// Complex pressure and SPL per (observer, frequency), observer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldResult {
    pub n_obs: usize,
    pub frequencies: Vec<f64>,
    pub pressure: Vec<Complex64>,
    pub spl: Vec<f64>,
    pub calibration: f64,
}

impl FieldResult {
    pub fn from_pressure(pressure: Vec<Complex64>, frequencies: Vec<f64>, calibration: f64) -> Self {
        let n_freq = frequencies.len().max(1);
        let n_obs = pressure.len() / n_freq;
        let spl = pressure.iter().map(|&p| spl(p)).collect();
        FieldResult {
            n_obs,
            frequencies,
            pressure,
            spl,
            calibration,
        }
    }

    pub fn n_freq(&self) -> usize {
        self.frequencies.len()
    }

    pub fn pressure_at(&self, obs: usize, freq: usize) -> Complex64 {
        self.pressure[obs * self.n_freq() + freq]
    }

    pub fn spl_at(&self, obs: usize, freq: usize) -> f64 {
        self.spl[obs * self.n_freq() + freq]
    }

    /// Raw bytes of every pressure value, for exact cross-run comparison.
    pub fn pressure_bits(&self) -> Vec<u64> {
        self.pressure
            .iter()
            .flat_map(|p| [p.re.to_bits(), p.im.to_bits()])
            .collect()
    }
}
