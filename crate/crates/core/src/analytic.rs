//! Expected receiver observations over a Poisson field of transmitters.
//!
//! For a per-transmitter response Φ(r), Campbell's theorem gives the mean
//! total observation as `4π λ N ∫ Φ(r) r² dr`. Conditioning on the nearest
//! transmitter splits it into a nearest part and an everyone-else part.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::PointChannel;
use crate::config::{Deployment, Medium, ReceiverKind};
use crate::error::{Error, Result};
use crate::geometry::nearest_distance_median;
use crate::quadrature::{integrate, integrate_semi_infinite, Estimate, QuadratureConfig};

/// Per-transmitter expected observation Φ(r) for the sampling window that
/// starts at `t`.
///
/// Absorbing: molecules absorbed during `[t, t + T_ss]`.
/// Passive: change of the inside fraction between `t` and `t + T_ss`; at
/// `t = 0` this is simply the inside fraction at `T_ss`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiKernel {
    pub kind: ReceiverKind,
    pub channel: PointChannel,
    pub t: f64,
    pub sample_interval: f64,
}

impl PhiKernel {
    pub fn new(kind: ReceiverKind, medium: Medium, r_r: f64, t: f64, sample_interval: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("window start must be a finite t >= 0, got {t}")));
        }
        if !(sample_interval > 0.0) {
            return Err(Error::domain(format!("sampling interval must be positive, got {sample_interval}")));
        }
        Ok(Self { kind, channel: PointChannel::new(medium, r_r), t, sample_interval })
    }

    pub fn r_r(&self) -> f64 {
        self.channel.radius
    }

    /// Φ(r) for `r >= r_r`.
    pub fn eval(&self, r: f64) -> f64 {
        let end = self.t + self.sample_interval;
        match self.kind {
            ReceiverKind::Absorbing => self.channel.absorbed_between_unchecked(r, self.t, end),
            ReceiverKind::Passive => {
                let later = self.channel.observed_inside_unchecked(r, end);
                if self.t == 0.0 {
                    later
                } else {
                    later - self.channel.observed_inside_unchecked(r, self.t)
                }
            }
        }
    }

    /// Radial distance over which Φ changes appreciably near the receiver.
    fn length_scale(&self) -> f64 {
        let d = self.channel.medium.diffusion;
        (0.5 * (d * self.sample_interval).sqrt()).max(1e-6 * self.r_r())
    }
}

/// The three Campbell expectations for one kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expectations {
    pub nearest: f64,
    pub others: f64,
    pub all: f64,
}

fn nearest_exponent(density: f64) -> f64 {
    4.0 / 3.0 * PI * density
}

fn first_panel(kernel: &PhiKernel, density: f64) -> f64 {
    let nn = nearest_distance_median(density, kernel.r_r()) - kernel.r_r();
    kernel.length_scale().min(nn.max(1e-9))
}

/// `∫_{r_r}^∞ Φ(r) r² dr`, the density-free part of the all-transmitter mean.
fn radial_moment(kernel: &PhiKernel, cfg: &QuadratureConfig) -> Result<Estimate> {
    let c = cfg.with_initial_panel(kernel.length_scale());
    integrate_semi_infinite(|r| kernel.eval(r) * r * r, kernel.r_r(), &c)
}

/// Mean observation summed over every transmitter of the field.
pub fn expected_all(kernel: &PhiKernel, deployment: &Deployment, n_tx: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let m = radial_moment(kernel, cfg)?;
    Ok(4.0 * PI * n_tx * m.value * deployment.density)
}

/// Mean observation due to the nearest transmitter alone.
pub fn expected_nearest(kernel: &PhiKernel, deployment: &Deployment, n_tx: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let lambda = deployment.density;
    let c = nearest_exponent(lambda);
    let rr3 = kernel.r_r().powi(3);
    let qc = cfg.with_initial_panel(first_panel(kernel, lambda));
    let m = integrate_semi_infinite(
        |r| kernel.eval(r) * r * r * (-c * (r.powi(3) - rr3)).exp(),
        kernel.r_r(),
        &qc,
    )?;
    Ok(4.0 * PI * lambda * n_tx * m.value)
}

/// `T(x) = ∫_x^∞ Φ(r) r² dr`, tabulated once on the panels of a
/// semi-infinite sweep so each lookup costs one finite quadrature.
struct TailTable<'a> {
    kernel: &'a PhiKernel,
    edges: Vec<f64>,
    /// `suffix[k] = ∫_{edges[k]}^{end} Φ r²`.
    suffix: Vec<f64>,
    cfg: QuadratureConfig,
}

impl<'a> TailTable<'a> {
    fn build(kernel: &'a PhiKernel, cfg: &QuadratureConfig) -> Result<Self> {
        let f = |r: f64| kernel.eval(r) * r * r;
        let mut edges = vec![kernel.r_r()];
        let mut pieces = Vec::new();
        let mut total = 0.0f64;
        let mut width = kernel.length_scale();
        let mut quiet = 0;
        while quiet < cfg.tail_panels {
            if pieces.len() >= cfg.max_panels {
                return Err(Error::NonConvergence {
                    what: "tail table",
                    partial: total,
                    error_estimate: f64::NAN,
                });
            }
            let a = *edges.last().unwrap();
            let p = integrate(f, a, a + width, cfg)?.value;
            total += p;
            quiet = if p.abs() <= cfg.abs_tol.max(cfg.rel_tol * total.abs()) { quiet + 1 } else { 0 };
            pieces.push(p);
            edges.push(a + width);
            width *= 2.0;
        }
        let mut suffix = vec![0.0; edges.len()];
        for k in (0..pieces.len()).rev() {
            suffix[k] = suffix[k + 1] + pieces[k];
        }
        Ok(Self { kernel, edges, suffix, cfg: *cfg })
    }

    fn tail(&self, x: f64) -> Result<f64> {
        let last = *self.edges.last().unwrap();
        if x >= last {
            return Ok(0.0);
        }
        let k = self.edges.partition_point(|&e| e <= x).saturating_sub(1);
        let kernel = self.kernel;
        let partial = integrate(|r| kernel.eval(r) * r * r, x, self.edges[k + 1], &self.cfg)?.value;
        Ok(partial + self.suffix[k + 1])
    }
}

/// Mean observation due to every transmitter except the nearest, as the
/// nested integral over the nearest distance `x` of the mean contribution of
/// points beyond `x`.
pub fn expected_others(kernel: &PhiKernel, deployment: &Deployment, n_tx: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let lambda = deployment.density;
    let inner_cfg = cfg.with_rel_tol(cfg.rel_tol * 0.1);
    let table = TailTable::build(kernel, &inner_cfg)?;
    let c = nearest_exponent(lambda);
    let rr3 = kernel.r_r().powi(3);
    let mut failure = None;
    let qc = cfg.with_initial_panel(first_panel(kernel, lambda));
    let outer = integrate_semi_infinite(
        |x| {
            let weight = x * x * (-c * (x.powi(3) - rr3)).exp();
            if weight == 0.0 {
                return 0.0;
            }
            match table.tail(x) {
                Ok(t) => t * weight,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        kernel.r_r(),
        &qc,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((4.0 * PI * lambda).powi(2) * n_tx * outer.value)
}

pub fn expectations(kernel: &PhiKernel, deployment: &Deployment, n_tx: f64, cfg: &QuadratureConfig) -> Result<Expectations> {
    Ok(Expectations {
        nearest: expected_nearest(kernel, deployment, n_tx, cfg)?,
        others: expected_others(kernel, deployment, n_tx, cfg)?,
        all: expected_all(kernel, deployment, n_tx, cfg)?,
    })
}

fn require_no_degradation(medium: &Medium) -> Result<()> {
    if medium.degradation != 0.0 {
        return Err(Error::domain("closed forms exist only without degradation"));
    }
    Ok(())
}

/// Closed-form mean net absorbed count over `[t, t + T_ss]` without
/// degradation.
pub fn fa_closed_net(t: f64, sample_interval: f64, density: f64, n_tx: f64, medium: &Medium, r_r: f64) -> Result<f64> {
    require_no_degradation(medium)?;
    if !(t >= 0.0 && sample_interval >= 0.0) {
        return Err(Error::domain("times must be non-negative"));
    }
    let d = medium.diffusion;
    let sqrt_pi = PI.sqrt();
    let span = (sample_interval + t).sqrt() - t.sqrt();
    Ok(4.0 * n_tx * sqrt_pi * density * r_r * (d * sqrt_pi * sample_interval + 2.0 * d.sqrt() * r_r * span))
}

/// Closed-form mean cumulative absorbed count by time `t` without degradation.
pub fn fa_closed_cumulative(t: f64, density: f64, n_tx: f64, medium: &Medium, r_r: f64) -> Result<f64> {
    require_no_degradation(medium)?;
    if !(t >= 0.0) {
        return Err(Error::domain("time must be non-negative"));
    }
    let d = medium.diffusion;
    let sqrt_pi = PI.sqrt();
    Ok(4.0 * n_tx * sqrt_pi * density * r_r * (d * t * sqrt_pi + 2.0 * r_r * (d * t).sqrt()))
}

/// Long-time limit of [`fa_closed_net`]: `4π N λ r_r D T_ss`.
pub fn fa_asymptotic_net(density: f64, n_tx: f64, medium: &Medium, r_r: f64, sample_interval: f64) -> Result<f64> {
    require_no_degradation(medium)?;
    Ok(4.0 * PI * n_tx * density * r_r * medium.diffusion * sample_interval)
}

/// Everything needed to build a [`PhiKernel`] except its start time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelFamily {
    pub kind: ReceiverKind,
    pub medium: Medium,
    pub r_r: f64,
    pub sample_interval: f64,
}

impl KernelFamily {
    pub fn at(&self, t: f64) -> Result<PhiKernel> {
        PhiKernel::new(self.kind, self.medium, self.r_r, t, self.sample_interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedRow {
    pub t_s: f64,
    #[serde(rename = "E_nearest")]
    pub nearest: f64,
    #[serde(rename = "E_others")]
    pub others: f64,
    #[serde(rename = "E_all")]
    pub all: f64,
}

/// Evaluates the three expectations on a time grid in parallel. Rows come
/// back in grid order.
pub fn expected_sweep(
    family: &KernelFamily,
    deployment: &Deployment,
    n_tx: f64,
    times: &[f64],
    cfg: &QuadratureConfig,
) -> Result<Vec<ExpectedRow>> {
    times
        .par_iter()
        .map(|&t| {
            let e = expectations(&family.at(t)?, deployment, n_tx, cfg)?;
            Ok(ExpectedRow { t_s: t, nearest: e.nearest, others: e.others, all: e.all })
        })
        .collect()
}
