//! Point-to-point channel responses: one transmitter at distance `r0` from
//! the centre of a spherical receiver, single pulse released at `t = 0`.
//!
//! All fractions are per emitted molecule. Distances in µm, times in s.

use std::f64::consts::PI;

use crate::config::Medium;
use crate::error::{Error, Result};
use crate::special::{erf, erfc, erfcx};

/// Gaussian Green's function of free 3D diffusion: the concentration at
/// displacement `distance` from the release point, per emitted molecule,
/// including the degradation survival factor.
pub fn point_concentration(t: f64, distance: f64, medium: &Medium) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("concentration needs t > 0, got {t}")));
    }
    let four_dt = 4.0 * medium.diffusion * t;
    Ok((PI * four_dt).powf(-1.5) * (-distance * distance / four_dt).exp() * medium.survival(t))
}

/// Channel responses for a receiver of a given radius in a given medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointChannel {
    pub medium: Medium,
    /// Receiver radius r_r, µm.
    pub radius: f64,
}

impl PointChannel {
    pub fn new(medium: Medium, radius: f64) -> Self {
        Self { medium, radius }
    }

    fn check_outside(&self, r0: f64) -> Result<()> {
        if r0 < self.radius || r0.is_nan() {
            return Err(Error::domain(format!(
                "transmitter distance {r0} lies inside the receiver (r_r = {})",
                self.radius
            )));
        }
        Ok(())
    }

    /// First-hitting rate K(t | r0) of the absorbing receiver without
    /// degradation, 1/s.
    pub fn hit_rate(&self, r0: f64, t: f64) -> Result<f64> {
        self.check_outside(r0)?;
        if t < 0.0 {
            return Err(Error::domain(format!("negative time {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let d = self.medium.diffusion;
        let gap = r0 - self.radius;
        Ok(self.radius / r0 / (4.0 * PI * d * t).sqrt() * (gap / t) * (-gap * gap / (4.0 * d * t)).exp())
    }

    /// Fraction of a pulse absorbed by time `t`, accounting for degradation.
    pub fn absorbed_by(&self, r0: f64, t: f64) -> Result<f64> {
        self.check_outside(r0)?;
        if t < 0.0 {
            return Err(Error::domain(format!("negative time {t}")));
        }
        Ok(self.absorbed_by_unchecked(r0, t))
    }

    /// Fraction absorbed during `[t, t2]`.
    pub fn absorbed_between(&self, r0: f64, t: f64, t2: f64) -> Result<f64> {
        if t2 < t {
            return Err(Error::domain(format!("interval end {t2} precedes start {t}")));
        }
        self.check_outside(r0)?;
        if t < 0.0 {
            return Err(Error::domain(format!("negative time {t}")));
        }
        Ok(self.absorbed_between_unchecked(r0, t, t2))
    }

    /// Interval version of [`Self::absorbed_by_unchecked`], arranged so that
    /// the subtraction never cancels: early windows difference the absorbed
    /// fractions, late windows difference the fractions still to come.
    #[inline]
    pub(crate) fn absorbed_between_unchecked(&self, r0: f64, t: f64, t2: f64) -> f64 {
        if t2 <= t {
            return 0.0;
        }
        let kd = self.medium.degradation;
        if kd == 0.0 {
            let ratio = self.radius / r0;
            let scale = (r0 - self.radius) / (4.0 * self.medium.diffusion).sqrt();
            let u_late = scale / t2.sqrt();
            if t == 0.0 {
                return ratio * erfc(u_late);
            }
            let u_early = scale / t.sqrt();
            return if u_late > 1.0 {
                ratio * (erfc(u_late) - erfc(u_early))
            } else {
                ratio * (erf(u_early) - erf(u_late))
            };
        }
        let late = self.absorbed_by_unchecked(r0, t2);
        let gap = r0 - self.radius;
        let eventual = self.radius / r0 * (-gap * (kd / self.medium.diffusion).sqrt()).exp();
        if late < 0.5 * eventual {
            late - self.absorbed_by_unchecked(r0, t)
        } else {
            self.still_to_absorb(r0, t) - self.still_to_absorb(r0, t2)
        }
    }

    /// Fraction that will still be absorbed after `t` (degradation only).
    ///
    /// `r_r/(2 r0) [e^{-a} erfc(v - u) - e^{a} erfc(u + v)]`, scaled like
    /// [`Self::absorbed_by_unchecked`].
    fn still_to_absorb(&self, r0: f64, t: f64) -> f64 {
        let gap = r0 - self.radius;
        let ratio = self.radius / r0;
        let kd = self.medium.degradation;
        let a = gap * (kd / self.medium.diffusion).sqrt();
        if t <= 0.0 {
            return ratio * (-a).exp();
        }
        let u = gap / (4.0 * self.medium.diffusion * t).sqrt();
        let v = (kd * t).sqrt();
        let gauss = (-u * u - v * v).exp();
        let remaining = if v >= u {
            gauss * (erfcx(v - u) - erfcx(u + v))
        } else {
            (-a).exp() * erfc(v - u) - erfcx(u + v) * gauss
        };
        (0.5 * ratio * remaining).max(0.0)
    }

    /// Callers guarantee `r0 >= r_r` and `t >= 0`.
    ///
    /// With degradation the textbook form is
    /// `r_r/(2 r0) [e^{-a} erfc(u - v) + e^{a} erfc(u + v)]`, with
    /// `u = (r0 - r_r)/sqrt(4Dt)`, `v = sqrt(k_d t)` and `a = 2uv`. Both
    /// terms are rewritten with `erfcx` so that `e^{a}` never materialises.
    #[inline]
    pub(crate) fn absorbed_by_unchecked(&self, r0: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let gap = r0 - self.radius;
        let ratio = self.radius / r0;
        let u = gap / (4.0 * self.medium.diffusion * t).sqrt();
        let kd = self.medium.degradation;
        if kd == 0.0 {
            return ratio * erfc(u);
        }
        let v = (kd * t).sqrt();
        let gauss = (-u * u - v * v).exp();
        let slow = if u >= v {
            erfcx(u - v) * gauss
        } else {
            let a = gap * (kd / self.medium.diffusion).sqrt();
            (-a).exp() * erfc(u - v)
        };
        let fast = erfcx(u + v) * gauss;
        0.5 * ratio * (slow + fast)
    }

    /// Fraction of a pulse inside the passive receiver at time `t`, from the
    /// exact (non-uniform) volume integral of the Green's function.
    ///
    /// `r0` may lie anywhere, including inside the receiver; `r0 = 0` takes
    /// the analytic limit.
    pub fn observed_inside(&self, r0: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::domain(format!("passive fraction needs t > 0, got {t}")));
        }
        if !(r0 >= 0.0) {
            return Err(Error::domain(format!("negative distance {r0}")));
        }
        Ok(self.observed_inside_unchecked(r0, t))
    }

    #[inline]
    pub(crate) fn observed_inside_unchecked(&self, r0: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.medium.survival(t) * self.observed_inside_undegraded(r0, t)
    }

    fn observed_inside_undegraded(&self, r0: f64, t: f64) -> f64 {
        let rr = self.radius;
        let s = (self.medium.diffusion * t).sqrt();
        if r0 == 0.0 {
            let z = rr / (2.0 * s);
            return erf(z) - rr / (s * PI.sqrt()) * (-z * z).exp();
        }
        // ½[erf((rr - r0)/2s) + erf((rr + r0)/2s)], written without the
        // ±1 cancellation when the transmitter is outside.
        let volume_term = if r0 >= rr {
            0.5 * (erfc((r0 - rr) / (2.0 * s)) - erfc((r0 + rr) / (2.0 * s)))
        } else {
            0.5 * (erf((rr - r0) / (2.0 * s)) + erf((rr + r0) / (2.0 * s)))
        };
        // exp(-(rr+r0)²/4s²) - exp(-(r0-rr)²/4s²) = exp(-(r0-rr)²/4s²)·expm1(-rr·r0/s²)
        let near = (r0 - rr) / (2.0 * s);
        let surface_term =
            s / (PI.sqrt() * r0) * (-near * near).exp() * (-rr * r0 / (s * s)).exp_m1();
        (volume_term + surface_term).clamp(0.0, 1.0)
    }

    /// The uniform-concentration approximation: centre concentration times
    /// receiver volume. Only meaningful for distant transmitters.
    pub fn observed_inside_uniform(&self, r0: f64, t: f64) -> Result<f64> {
        let volume = 4.0 / 3.0 * PI * self.radius.powi(3);
        Ok(point_concentration(t, r0, &self.medium)? * volume)
    }
}

/// A single point-to-point query: transmitter at `r0`, observed at `t`
/// (or over `[t, t2]` for interval queries).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelQuery {
    pub r0: f64,
    pub t: f64,
    pub t2: Option<f64>,
    pub medium: Medium,
    pub r_r: f64,
}

impl ChannelQuery {
    pub fn at(medium: Medium, r_r: f64, r0: f64, t: f64) -> Self {
        Self { r0, t, t2: None, medium, r_r }
    }

    pub fn over(medium: Medium, r_r: f64, r0: f64, t: f64, t2: f64) -> Self {
        Self { r0, t, t2: Some(t2), medium, r_r }
    }

    fn channel(&self) -> PointChannel {
        PointChannel::new(self.medium, self.r_r)
    }
}

pub fn fa_hit_rate(q: &ChannelQuery) -> Result<f64> {
    q.channel().hit_rate(q.r0, q.t)
}

pub fn fa_cum_fraction(q: &ChannelQuery) -> Result<f64> {
    q.channel().absorbed_by(q.r0, q.t)
}

/// Needs `q.t2`; the interval is `[q.t, q.t2]`.
pub fn fa_net_fraction(q: &ChannelQuery) -> Result<f64> {
    let t2 = q.t2.ok_or_else(|| Error::domain("net fraction needs an interval end"))?;
    q.channel().absorbed_between(q.r0, q.t, t2)
}

pub fn ps_point_concentration(t: f64, distance: f64, medium: &Medium) -> Result<f64> {
    point_concentration(t, distance, medium)
}

pub fn ps_fraction(q: &ChannelQuery) -> Result<f64> {
    q.channel().observed_inside(q.r0, q.t)
}

pub fn ps_fraction_uniform(q: &ChannelQuery) -> Result<f64> {
    q.channel().observed_inside_uniform(q.r0, q.t)
}
