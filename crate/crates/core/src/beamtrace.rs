//! Ray-tracing phase: launch a fan of rays from the source, march each one
//! through the scene with specular reflection, and attach the Gaussian-beam
//! dynamic quantities `P` and `Q` to the resulting path.
//!
//! The medium is homogeneous, so along a path `P` is constant and
//! `Q(s) = Q0 + c·P0·s`. Planar rigid reflections leave both unchanged.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Matrix2;
use num_complex::Complex64;
use thiserror::Error;

use crate::scene::{Scene, Vec3};

pub type CMat2 = Matrix2<Complex64>;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("temperature {0} °C is at or below absolute zero")]
    BelowAbsoluteZero(f64),
    #[error("launch grid spans an empty solid angle")]
    EmptySolidAngle,
    #[error("invalid launch grid: {0}")]
    InvalidGrid(String),
    #[error("beam parameter imaginary part must be negative, got {0}")]
    BeamParameter(f64),
    #[error("invalid trace configuration: {0}")]
    InvalidConfig(String),
    #[error("arc length {s} m outside path range [0, {length}] m")]
    OutOfRange { s: f64, length: f64 },
}

/// Speed of sound in dry air, m/s.
pub fn sound_speed(temperature_c: f64) -> Result<f64, TraceError> {
    if temperature_c <= -273.15 || !temperature_c.is_finite() {
        return Err(TraceError::BelowAbsoluteZero(temperature_c));
    }
    Ok(331.3 * (1.0 + temperature_c / 273.15).sqrt())
}

/// Atmospheric state. Humidity and pressure are carried for reporting only;
/// propagation depends on temperature through the sound speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atmosphere {
    pub temperature_c: f64,
    pub rel_humidity_pct: f64,
    pub pressure_atm: f64,
    pub sound_speed: f64,
}

impl Atmosphere {
    pub fn new(temperature_c: f64, rel_humidity_pct: f64, pressure_atm: f64) -> Result<Self, TraceError> {
        Ok(Atmosphere {
            temperature_c,
            rel_humidity_pct,
            pressure_atm,
            sound_speed: sound_speed(temperature_c)?,
        })
    }

    /// Same atmosphere with the sound speed scaled (used by negative controls).
    pub fn with_speed_factor(mut self, factor: f64) -> Self {
        self.sound_speed *= factor;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub position: Vec3,
    pub frequencies: Vec<f64>,
    /// Real amplitude constant of the beam field.
    pub amplitude_phi: f64,
    /// Imaginary part of the beam parameter (negative).
    pub beam_param_im: f64,
}

impl SourceSpec {
    pub fn omegas(&self) -> Vec<f64> {
        self.frequencies.iter().map(|f| 2.0 * PI * f).collect()
    }
}

/// Uniform elevation × azimuth launch grid, in degrees. Elevation is the
/// polar angle from +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaunchGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl LaunchGrid {
    pub fn full_sphere(n_theta: usize, n_phi: usize) -> Self {
        LaunchGrid {
            theta_min: 0.0,
            theta_max: 180.0,
            phi_min: 0.0,
            phi_max: 360.0,
            n_theta,
            n_phi,
        }
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.n_theta == 0 || self.n_phi == 0 {
            return Err(TraceError::InvalidGrid("ray counts must be positive".into()));
        }
        let in_range = |v: f64, hi: f64| (0.0..=hi).contains(&v);
        if !in_range(self.theta_min, 180.0)
            || !in_range(self.theta_max, 180.0)
            || !in_range(self.phi_min, 360.0)
            || !in_range(self.phi_max, 360.0)
        {
            return Err(TraceError::InvalidGrid(
                "angles must lie in [0,180]×[0,360] degrees".into(),
            ));
        }
        if self.theta_max <= self.theta_min || self.phi_max <= self.phi_min {
            return Err(TraceError::EmptySolidAngle);
        }
        Ok(())
    }

    /// Launch parameters of ray `index` (elevation-major ordering).
    pub fn launch(&self, index: usize) -> Launch {
        let i = index / self.n_phi;
        let j = index % self.n_phi;
        let dtheta = (self.theta_max - self.theta_min).to_radians() / self.n_theta as f64;
        let dphi = (self.phi_max - self.phi_min).to_radians() / self.n_phi as f64;
        let theta = self.theta_min.to_radians() + (i as f64 + 0.5) * dtheta;
        let phi = self.phi_min.to_radians() + (j as f64 + 0.5) * dphi;
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Launch {
            index,
            gamma1: theta,
            gamma2: phi,
            direction: Vec3::new(st * cp, st * sp, ct),
            e1: Vec3::new(ct * cp, ct * sp, -st),
            e2: Vec3::new(-sp, cp, 0.0),
            weight_dgamma: st * dtheta * dphi,
        }
    }
}

/// One launched ray: its parameters, direction and solid-angle weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Launch {
    pub index: usize,
    /// Elevation (radians).
    pub gamma1: f64,
    /// Azimuth (radians).
    pub gamma2: f64,
    pub direction: Vec3,
    /// Transverse frame at launch: θ̂ and φ̂.
    pub e1: Vec3,
    pub e2: Vec3,
    /// `sin θ · Δθ · Δφ`, steradians.
    pub weight_dgamma: f64,
}

pub fn launch_directions(grid: &LaunchGrid) -> Result<Vec<Launch>, TraceError> {
    grid.validate()?;
    Ok((0..grid.len()).map(|i| grid.launch(i)).collect())
}

/// Initial beam matrices: `P0 = I/c`, `Q0 = i·Im(b)·I`, which gives
/// `Im(P0·Q0⁻¹) = I/(c·|Im b|) ≻ 0`.
pub fn initial_pq(beam_param_im: f64, c: f64) -> Result<(CMat2, CMat2), TraceError> {
    if !(beam_param_im < 0.0) {
        return Err(TraceError::BeamParameter(beam_param_im));
    }
    let p0 = CMat2::identity() * Complex64::new(1.0 / c, 0.0);
    let q0 = CMat2::identity() * Complex64::new(0.0, beam_param_im);
    Ok((p0, q0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    pub n_steps: u64,
    pub dt: f64,
    pub r_max: u32,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.n_steps == 0 {
            return Err(TraceError::InvalidConfig("n_steps must be positive".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(TraceError::InvalidConfig("dt must be positive".into()));
        }
        if self.r_max == 0 {
            return Err(TraceError::InvalidConfig("r_max must be positive".into()));
        }
        Ok(())
    }

    pub fn max_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// A straight piece of a traced path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub origin: Vec3,
    pub direction: Vec3,
    pub length: f64,
    /// Cumulative arc length at `origin` (m).
    pub s_start: f64,
    /// Cumulative travel time at `origin` (s).
    pub t_start: f64,
    /// Transported ray-centred frame.
    pub e1: Vec3,
    pub e2: Vec3,
    /// Product of reflection coefficients met before this segment.
    pub amplitude: f64,
}

impl Segment {
    pub fn end(&self) -> Vec3 {
        self.origin + self.direction * self.length
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamPath {
    pub index: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub weight_dgamma: f64,
    pub segments: Vec<Segment>,
    pub n_reflections: u32,
    pub sound_speed: f64,
    pub p0: CMat2,
    pub q0: CMat2,
}

impl BeamPath {
    pub fn length(&self) -> f64 {
        self.segments
            .last()
            .map(|s| s.s_start + s.length)
            .unwrap_or(0.0)
    }

    fn check(&self, s: f64) -> Result<(), TraceError> {
        let length = self.length();
        if !(0.0..=length).contains(&s) {
            return Err(TraceError::OutOfRange { s, length });
        }
        Ok(())
    }

    /// `Q(s) = Q0 + c·P0·s`.
    pub fn q_at(&self, s: f64) -> Result<CMat2, TraceError> {
        self.check(s)?;
        Ok(self.q0 + self.p0 * Complex64::new(self.sound_speed * s, 0.0))
    }

    /// Travel time `s / c` along the path.
    pub fn travel_time(&self, s: f64) -> Result<f64, TraceError> {
        self.check(s)?;
        Ok(s / self.sound_speed)
    }

    /// Number of samples `s = 0, step, 2·step, …, length` at which `det Q = 0`
    /// or the Hermitian part of `Im(P Q⁻¹)` is not positive definite.
    pub fn regularity_violations(&self, step: f64) -> usize {
        assert!(step > 0.0, "step must be positive");
        let length = self.length();
        let n = (length / step).floor() as usize;
        let mut samples: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        if samples.last().is_some_and(|&s| s < length) {
            samples.push(length);
        }
        samples
            .into_iter()
            .filter(|&s| {
                let q = self.q0 + self.p0 * Complex64::new(self.sound_speed * s, 0.0);
                let Some(inv) = q.try_inverse() else { return true };
                let m = self.p0 * inv;
                let h11 = m[(0, 0)].im;
                let h22 = m[(1, 1)].im;
                let h12 = 0.5 * (m[(0, 1)].im + m[(1, 0)].im);
                !(h11 > 0.0 && h11 * h22 - h12 * h12 > 0.0)
            })
            .count()
    }

    /// Approximate in-memory footprint, used for chunk planning.
    pub fn footprint_bytes(&self) -> usize {
        std::mem::size_of::<BeamPath>() + self.segments.len() * std::mem::size_of::<Segment>()
    }

    /// Diagnostic CSV rows, one per segment.
    pub fn write_csv_rows(&self, out: &mut String) {
        for (k, seg) in self.segments.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.index,
                k,
                seg.origin.x,
                seg.origin.y,
                seg.origin.z,
                seg.direction.x,
                seg.direction.y,
                seg.direction.z,
                seg.length,
                seg.s_start,
                seg.t_start,
                seg.amplitude
            );
        }
    }
}

pub const PATH_CSV_HEADER: &str = "ray,segment,ox,oy,oz,dx,dy,dz,length,s_start,t_start,amplitude";

fn reflect(v: &Vec3, n: &Vec3) -> Vec3 {
    v - n * (2.0 * v.dot(n))
}

fn orthonormal_frame(d: &Vec3, e1: &Vec3, e2: &Vec3) -> (Vec3, Vec3) {
    let a = (e1 - d * d.dot(e1)).normalize();
    let b = e2 - d * d.dot(e2) - a * a.dot(e2);
    (a, b.normalize())
}

/// Traces one ray. Marching uses exact nearest-hit queries; the time budget
/// `n_steps·dt` only limits the total path length.
pub fn trace(
    scene: &Scene,
    source: &SourceSpec,
    launch: &Launch,
    cfg: &TraceConfig,
    atmosphere: &Atmosphere,
) -> Result<BeamPath, TraceError> {
    let c = atmosphere.sound_speed;
    let (p0, q0) = initial_pq(source.beam_param_im, c)?;
    let total = c * cfg.max_time();
    let escape = scene.bounds().map(|b| b.expanded(b.diagonal().max(1.0)));

    let mut segments = Vec::new();
    let mut origin = source.position;
    let mut dir = launch.direction;
    let (mut e1, mut e2) = (launch.e1, launch.e2);
    let mut s = 0.0;
    let mut amplitude = 1.0;
    let mut n_reflections = 0u32;

    loop {
        let remaining = total - s;
        let hit = scene.intersect(&origin, &dir, remaining);
        let length = match (&hit, &escape) {
            (Some(h), _) => h.t,
            (None, Some(bx)) => match bx.ray_interval(&origin, &dir, remaining) {
                Some((_, exit)) => exit,
                None => 0.0,
            },
            (None, None) => remaining,
        };
        segments.push(Segment {
            origin,
            direction: dir,
            length,
            s_start: s,
            t_start: s / c,
            e1,
            e2,
            amplitude,
        });
        s += length;
        let Some(h) = hit else { break };
        if n_reflections >= cfg.r_max || s >= total {
            break;
        }
        n_reflections += 1;
        amplitude *= scene.reflection_coefficient(h.triangle_index);
        origin = h.point;
        dir = reflect(&dir, &h.normal).normalize();
        let (a, b) = orthonormal_frame(&dir, &reflect(&e1, &h.normal), &reflect(&e2, &h.normal));
        e1 = a;
        e2 = b;
    }

    Ok(BeamPath {
        index: launch.index,
        gamma1: launch.gamma1,
        gamma2: launch.gamma2,
        weight_dgamma: launch.weight_dgamma,
        segments,
        n_reflections,
        sound_speed: c,
        p0,
        q0,
    })
}

/// CSV with one row per segment over all paths.
pub fn paths_to_csv(paths: &[BeamPath]) -> String {
    let mut out = String::new();
    out.push_str(PATH_CSV_HEADER);
    out.push('\n');
    for p in paths {
        p.write_csv_rows(&mut out);
    }
    out
}
