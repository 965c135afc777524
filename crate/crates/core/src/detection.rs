//! Observation models, the aggregate interference kernel, analytic bit error
//! probabilities and threshold demodulators.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::Serialize;

use crate::channel::PointChannel;
use crate::config::{DetectorMode, DetectorSpec, ExperimentConfig, Medium, ReceiverKind};
use crate::error::{Error, Result};
use crate::geometry::TxField;
use crate::quadrature::{integrate_semi_infinite, integrate_semi_infinite_vec, QuadratureConfig};
use crate::sim::ObservationTrace;

/// The physical link shared by every transmitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub kind: ReceiverKind,
    pub medium: Medium,
    pub r_r: f64,
    pub n_tx: u64,
    pub bit_interval: f64,
    /// Prior probability of a bit-1.
    pub p1: f64,
}

impl LinkParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            kind: cfg.receiver.kind,
            medium: cfg.medium,
            r_r: cfg.receiver.radius,
            n_tx: cfg.protocol.molecules,
            bit_interval: cfg.protocol.bit_interval,
            p1: cfg.protocol.p1,
        }
    }

    pub fn channel(&self) -> PointChannel {
        PointChannel::new(self.medium, self.r_r)
    }
}

/// `R(r)`: expected fraction of one molecule per pulse observed in bit `j`
/// from a transmitter at distance `r`, summed over that transmitter's past
/// bit-1 pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateKernel {
    params: LinkParams,
    channel: PointChannel,
    /// Lags `j - i` of the bit-1 pulses among `b_1..b_j`.
    lags: Vec<usize>,
    j: usize,
}

impl AggregateKernel {
    /// `bits` is `b_1..b_j`; the kernel is for the last bit.
    pub fn new(params: &LinkParams, bits: &[bool]) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::domain("bit index j must be at least 1"));
        }
        let j = bits.len();
        let lags = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| j - 1 - i).collect();
        Ok(Self { params: *params, channel: params.channel(), lags, j })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    /// Lags of the contributing pulses.
    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn is_silent(&self) -> bool {
        self.lags.is_empty()
    }

    /// Contribution of a single pulse emitted `lag` bit intervals before the
    /// current one.
    pub fn term(&self, lag: usize, r: f64) -> f64 {
        let tb = self.params.bit_interval;
        let start = lag as f64 * tb;
        match self.params.kind {
            ReceiverKind::Absorbing => self.channel.absorbed_between_unchecked(r, start, start + tb),
            ReceiverKind::Passive => self.channel.observed_inside_unchecked(r, start + tb),
        }
    }

    /// `R(r)` for `r >= r_r`.
    pub fn eval(&self, r: f64) -> f64 {
        self.lags.iter().map(|&lag| self.term(lag, r)).sum()
    }

    fn length_scale(&self) -> f64 {
        (0.5 * (self.params.medium.diffusion * self.params.bit_interval).sqrt()).max(1e-6 * self.params.r_r)
    }
}

/// `R(r)` for bit `j` of `bits` (1-based `j`, `bits.len() >= j`).
pub fn r_kernel(j: usize, bits: &[bool], r: f64, params: &LinkParams) -> Result<f64> {
    if j == 0 || j > bits.len() {
        return Err(Error::domain(format!("bit index {j} outside 1..={}", bits.len())));
    }
    if !(r >= params.r_r) {
        return Err(Error::domain(format!("distance {r} inside the receiver")));
    }
    Ok(AggregateKernel::new(params, &bits[..j])?.eval(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ObservationModel {
    /// Independent binomial draw per transmitter and past pulse.
    BinomialExact,
    /// One Poisson draw with the aggregate mean.
    PoissonApprox,
}

/// Draws the observation of bit `j` given a transmitter field.
pub fn observation_sample<R: Rng + ?Sized>(
    field: &TxField,
    j: usize,
    bits: &[bool],
    params: &LinkParams,
    model: ObservationModel,
    rng: &mut R,
) -> Result<u64> {
    if j == 0 || j > bits.len() {
        return Err(Error::domain(format!("bit index {j} outside 1..={}", bits.len())));
    }
    let kernel = AggregateKernel::new(params, &bits[..j])?;
    let n = params.n_tx as f64;
    Ok(match model {
        ObservationModel::PoissonApprox => {
            let mean: f64 = field.distances().map(|r| kernel.eval(r)).sum::<f64>() * n;
            draw_poisson(mean, rng)
        }
        ObservationModel::BinomialExact => {
            let mut total = 0;
            for r in field.distances() {
                for &lag in kernel.lags() {
                    let p = kernel.term(lag, r).clamp(0.0, 1.0);
                    total += Binomial::new(params.n_tx, p).map(|b| b.sample(rng)).unwrap_or(0);
                }
            }
            total
        }
    })
}

pub(crate) fn draw_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
    } else {
        0
    }
}

fn pgfl_exponent(kernel: &AggregateKernel, s: f64, density: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if kernel.is_silent() || s == 0.0 {
        return Ok(0.0);
    }
    let qc = cfg.with_initial_panel(kernel.length_scale());
    let m = integrate_semi_infinite(|r| -(-s * kernel.eval(r)).exp_m1() * r * r, kernel.params.r_r, &qc)?;
    Ok(-4.0 * PI * density * m.value)
}

/// `E[exp(-s R_tot)]` where `R_tot` sums the kernel over the field.
pub fn laplace_rtot(s: f64, kernel: &AggregateKernel, density: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::domain(format!("Laplace argument must be non-negative, got {s}")));
    }
    Ok(pgfl_exponent(kernel, s, density, cfg)?.exp())
}

/// Complete Bell polynomials `B_0..=B_n` of `x_1..x_n` by the binomial
/// recursion.
pub fn complete_bell(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut b = vec![0.0; n + 1];
    b[0] = 1.0;
    for m in 1..=n {
        // C(m-1, i-1) built incrementally.
        let mut binom = 1.0;
        let mut acc = 0.0;
        for i in 1..=m {
            acc += binom * xs[i - 1] * b[m - i];
            binom = binom * (m - i) as f64 / i as f64;
        }
        b[m] = acc;
    }
    b
}

/// `B_n / n!` for `n = 0..=xs.len()`, without forming factorials.
pub fn complete_bell_scaled(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    // z_i = x_i / (i-1)!
    let mut z = Vec::with_capacity(n);
    let mut fact = 1.0;
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            fact *= i as f64;
        }
        z.push(x / fact);
    }
    let (q, log_scale) = scaled_recursion(&z, 1.0);
    let factor = log_scale.exp();
    q.into_iter().map(|v| v * factor).collect()
}

/// `q_0 = q0`, `q_m = (1/m) Σ_{i=1}^{m} z_i q_{m-i}`, rescaled on the fly.
/// Returns the values and the natural-log scale they must be multiplied by.
fn scaled_recursion(z: &[f64], q0: f64) -> (Vec<f64>, f64) {
    const BIG: f64 = 1e200;
    let n = z.len();
    let mut q = vec![0.0; n + 1];
    q[0] = q0;
    let mut log_scale = 0.0;
    for m in 1..=n {
        let acc: f64 = (1..=m).map(|i| z[i - 1] * q[m - i]).sum();
        q[m] = acc / m as f64;
        if q[m] > BIG {
            for v in &mut q[..=m] {
                *v /= BIG;
            }
            log_scale += BIG.ln();
        }
    }
    (q, log_scale)
}

/// `B_n` by summing over every `(m_1..m_n)` with `Σ k m_k = n`.
pub fn complete_bell_by_enumeration(xs: &[f64], n: usize) -> f64 {
    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product()
    }
    fn walk(k: usize, remaining: usize, xs: &[f64], n: usize, coeff: f64, prod: f64, total: &mut f64) {
        if remaining == 0 {
            *total += factorial(n) * coeff * prod;
            return;
        }
        if k > remaining {
            return;
        }
        let mut m = 0;
        let mut c = coeff;
        let mut p = prod;
        while m * k <= remaining {
            walk(k + 1, remaining - m * k, xs, n, c, p, total);
            m += 1;
            c /= m as f64 * factorial(k);
            p *= xs[k - 1];
        }
    }
    let mut total = 0.0;
    walk(1, n, xs, n, 1.0, 1.0, &mut total);
    total
}

/// `ln(m^k e^{-m} / k!)`, written so that nothing cancels when `k ≈ m` is
/// large.
fn ln_poisson_weight(k: f64, m: f64) -> f64 {
    if k < 16.0 {
        return k * m.ln() - m - libm::lgamma(k + 1.0);
    }
    let d = (m - k) / k;
    // Stirling remainder of ln k!.
    let k2 = k * k;
    let remainder = (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * k2)) / k2) / k2) / k;
    k * (d.ln_1p() - d) - 0.5 * (2.0 * PI * k).ln() - remainder
}

/// Fills `out[k] = w · m^i e^{-m} / (i-1)!` for `i = k + 1`.
///
/// Starts at the largest term, evaluated in log space, and recurses outwards
/// so nothing underflows when `m` is in the thousands.
fn poisson_moment_terms(mean: f64, w: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    if mean <= 0.0 {
        out.fill(0.0);
        return;
    }
    // The terms peak at i = m rounded, clipped to the requested range.
    let peak = (mean.round().max(1.0) as usize).min(out.len());
    let k = peak as f64;
    let ln_peak = k.ln() + ln_poisson_weight(k, mean);
    let top = ln_peak.exp() * w;
    out[peak - 1] = top;
    let mut term = top;
    for i in peak + 1..=out.len() {
        term *= mean / (i - 1) as f64;
        out[i - 1] = term;
    }
    term = top;
    for i in (1..peak).rev() {
        term *= i as f64 / mean;
        out[i - 1] = term;
    }
}

/// Probabilities `P(N = n)`, `n = 0..count`, of the observation in bit `j`
/// under the Poisson approximation, averaged over the field.
///
/// Uses one vector quadrature for the Laplace exponent and all moments
/// `4πλ ∫ (N R)^i e^{-N R} r² dr / (i-1)!`.
pub fn count_pmf(kernel: &AggregateKernel, density: f64, count: usize, cfg: &QuadratureConfig) -> Result<Vec<f64>> {
    let mut pmf = vec![0.0; count.max(1)];
    if kernel.is_silent() {
        pmf[0] = 1.0;
        pmf.truncate(count);
        return Ok(pmf);
    }
    let n = kernel.params.n_tx as f64;
    let dim = count.max(1);
    // Each moment peaks at its own radius, so the bisection budget grows
    // with the number of moments.
    let qc = QuadratureConfig {
        max_subdivisions: cfg.max_subdivisions + 4 * dim,
        ..cfg.with_initial_panel(kernel.length_scale())
    };
    let m = integrate_semi_infinite_vec(
        |r, out: &mut [f64]| {
            let mean = n * kernel.eval(r);
            let w = r * r;
            out[0] = -(-mean).exp_m1() * w;
            poisson_moment_terms(mean, w, &mut out[1..]);
        },
        kernel.params.r_r,
        dim,
        &qc,
    )?;
    let scale = 4.0 * PI * density;
    let log_l = -scale * m.value[0];
    let z: Vec<f64> = m.value[1..].iter().map(|v| scale * v.max(0.0)).collect();
    let (q, log_scale) = scaled_recursion(&z, 1.0);
    for (p, qn) in pmf.iter_mut().zip(&q) {
        *p = if *qn > 0.0 { (qn.ln() + log_scale + log_l).exp() } else { 0.0 };
    }
    pmf.truncate(count);
    Ok(pmf)
}

/// Miss, false-alarm and weighted error probabilities at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub n_th: u32,
    pub miss: f64,
    pub false_alarm: f64,
    pub error: f64,
    /// Set when a probability had to be clamped by more than 1e-9.
    pub clamped: bool,
}

const CLAMP_REPORT: f64 = 1e-9;

fn clamp_probability(p: f64, flag: &mut bool) -> f64 {
    if p < -CLAMP_REPORT || p > 1.0 + CLAMP_REPORT || p.is_nan() {
        *flag = true;
    }
    if p.is_nan() {
        return 0.0;
    }
    p.clamp(0.0, 1.0)
}

fn with_test_bit(history: &[bool], bit: bool) -> Vec<bool> {
    let mut bits = history.to_vec();
    bits.push(bit);
    bits
}

fn assemble(n_th: u32, miss: f64, not_false_alarm: f64, p1: f64) -> BerPoint {
    let mut clamped = false;
    let miss = clamp_probability(miss, &mut clamped);
    let false_alarm = clamp_probability(1.0 - not_false_alarm, &mut clamped);
    let error = p1 * miss + (1.0 - p1) * false_alarm;
    BerPoint { n_th, miss, false_alarm, error, clamped }
}

/// Error probabilities of the bit following `history` for thresholds
/// `1..=max_n_th`, sharing one pair of moment integrals.
pub fn ber_theorem2_sweep(
    params: &LinkParams,
    history: &[bool],
    density: f64,
    max_n_th: u32,
    cfg: &QuadratureConfig,
) -> Result<Vec<BerPoint>> {
    if max_n_th < 1 {
        return Err(Error::domain("threshold must be at least 1"));
    }
    let count = max_n_th as usize;
    let one = count_pmf(&AggregateKernel::new(params, &with_test_bit(history, true))?, density, count, cfg)?;
    let zero = count_pmf(&AggregateKernel::new(params, &with_test_bit(history, false))?, density, count, cfg)?;
    let (mut below_one, mut below_zero) = (0.0, 0.0);
    Ok((0..count)
        .map(|k| {
            below_one += one[k];
            below_zero += zero[k];
            assemble(k as u32 + 1, below_one, below_zero, params.p1)
        })
        .collect())
}

pub fn ber_theorem2(
    params: &LinkParams,
    history: &[bool],
    density: f64,
    n_th: u32,
    cfg: &QuadratureConfig,
) -> Result<BerPoint> {
    if n_th < 1 {
        return Err(Error::domain(format!("threshold must be at least 1, got {n_th}")));
    }
    Ok(*ber_theorem2_sweep(params, history, density, n_th, cfg)?.last().expect("non-empty sweep"))
}

/// Averages [`ber_theorem2_sweep`] over every i.i.d. history of length
/// `j - 1` drawn with the bit-1 prior.
pub fn ber_theorem2_iid_sweep(
    params: &LinkParams,
    j: usize,
    density: f64,
    max_n_th: u32,
    cfg: &QuadratureConfig,
) -> Result<Vec<BerPoint>> {
    const MAX_BITS: usize = 12;
    if j == 0 || j > MAX_BITS {
        return Err(Error::domain(format!("i.i.d. averaging supports 1..={MAX_BITS} bits, got {j}")));
    }
    let mut acc: Vec<BerPoint> = (1..=max_n_th)
        .map(|n_th| BerPoint { n_th, miss: 0.0, false_alarm: 0.0, error: 0.0, clamped: false })
        .collect();
    for mask in 0u32..(1 << (j - 1)) {
        let history: Vec<bool> = (0..j - 1).map(|i| mask >> i & 1 == 1).collect();
        let weight: f64 = history.iter().map(|&b| if b { params.p1 } else { 1.0 - params.p1 }).product();
        if weight == 0.0 {
            continue;
        }
        for (a, p) in acc.iter_mut().zip(ber_theorem2_sweep(params, &history, density, max_n_th, cfg)?) {
            a.miss += weight * p.miss;
            a.false_alarm += weight * p.false_alarm;
            a.error += weight * p.error;
            a.clamped |= p.clamped;
        }
    }
    Ok(acc)
}

/// Error probabilities at threshold 1 straight from the Laplace functional.
pub fn ber_lemma3(params: &LinkParams, history: &[bool], density: f64, cfg: &QuadratureConfig) -> Result<BerPoint> {
    let n = params.n_tx as f64;
    let one = AggregateKernel::new(params, &with_test_bit(history, true))?;
    let zero = AggregateKernel::new(params, &with_test_bit(history, false))?;
    let miss = laplace_rtot(n, &one, density, cfg)?;
    let no_alarm = laplace_rtot(n, &zero, density, cfg)?;
    Ok(assemble(1, miss, no_alarm, params.p1))
}

/// Miss probability of a lone bit-1 at an absorbing receiver without
/// degradation, threshold 1.
pub fn single_bit_miss_absorbing(params: &LinkParams, density: f64, cfg: &QuadratureConfig) -> Result<f64> {
    if params.kind != ReceiverKind::Absorbing || params.medium.degradation != 0.0 {
        return Err(Error::domain("single-bit closed form needs an absorbing receiver without degradation"));
    }
    let (rr, n) = (params.r_r, params.n_tx as f64);
    let width = (4.0 * params.medium.diffusion * params.bit_interval).sqrt();
    let qc = cfg.with_initial_panel(0.25 * width);
    let m = integrate_semi_infinite(
        |r| -(-n * rr / r * crate::special::erfc((r - rr) / width)).exp_m1() * r * r,
        rr,
        &qc,
    )?;
    Ok((-4.0 * PI * density * m.value).exp())
}

/// Threshold decisions on raw counts.
pub fn decide(counts: &[u64], detector: &DetectorSpec) -> Vec<bool> {
    let th = detector.threshold;
    match detector.mode {
        DetectorMode::FixedThreshold => counts.iter().map(|&c| c as i128 >= i128::from(th)).collect(),
        DetectorMode::Dfd => {
            let mut prev = 0i128;
            counts
                .iter()
                .map(|&c| {
                    let c = c as i128;
                    let bit = c - prev >= i128::from(th);
                    prev = c;
                    bit
                })
                .collect()
        }
    }
}

/// The quantity compared with the threshold for bit `index`: `N[j]` for the
/// fixed detector, `N[j] - N[j-1]` (with `N[0] = 0`) for DFD.
pub fn decision_statistic(counts: &[u64], mode: DetectorMode, index: usize) -> Option<i128> {
    let c = i128::from(*counts.get(index)?);
    Some(match mode {
        DetectorMode::FixedThreshold => c,
        DetectorMode::Dfd => c - index.checked_sub(1).map_or(0, |i| i128::from(counts[i])),
    })
}

pub fn demodulate(trace: &ObservationTrace, detector: &DetectorSpec) -> Vec<bool> {
    decide(&trace.counts, detector)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Deployment;
    use crate::geometry::sample_field;
    use crate::stats::mean_and_stderr;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(kind: ReceiverKind, kd: f64) -> LinkParams {
        LinkParams {
            kind,
            medium: Medium::new(800.0, kd).unwrap(),
            r_r: 5.0,
            n_tx: 20,
            bit_interval: 0.2,
            p1: 0.5,
        }
    }

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::precise()
    }

    #[test]
    fn kernel_reductions() {
        let p = params(ReceiverKind::Absorbing, 0.0);
        let ch = p.channel();
        for r in [5.0, 12.0, 80.0] {
            assert_eq!(r_kernel(3, &[false, false, false], r, &p).unwrap(), 0.0);
            let single = r_kernel(1, &[true], r, &p).unwrap();
            assert!((single - ch.absorbed_by(r, 0.2).unwrap()).abs() < 1e-15);
            let three = r_kernel(3, &[true, false, true], r, &p).unwrap();
            let want = ch.absorbed_between(r, 0.4, 0.6).unwrap() + ch.absorbed_between(r, 0.0, 0.2).unwrap();
            assert!((three - want).abs() < 1e-15);
        }
        let pp = params(ReceiverKind::Passive, 0.8);
        let want = pp.channel().observed_inside(20.0, 0.6).unwrap() + pp.channel().observed_inside(20.0, 0.2).unwrap();
        assert!((r_kernel(3, &[true, false, true], 20.0, &pp).unwrap() - want).abs() < 1e-15);
        assert!(r_kernel(1, &[true], 4.0, &p).is_err());
        assert!(r_kernel(0, &[true], 10.0, &p).is_err());
    }

    #[test]
    fn moment_terms_survive_large_means() {
        // Small mean: plain products are exact enough to compare against.
        let mut out = vec![0.0; 8];
        poisson_moment_terms(2.5, 3.0, &mut out);
        let mut fact = 1.0;
        for (k, &v) in out.iter().enumerate() {
            let i = k as i32 + 1;
            if k > 0 {
                fact *= k as f64;
            }
            let want = 3.0 * 2.5f64.powi(i) * (-2.5f64).exp() / fact;
            assert!((v - want).abs() < 1e-14 * want, "i={i}: {v} vs {want}");
        }
        // Σ_i m^i e^{-m} / (i-1)! = m, far past exp underflow.
        for m in [800.0, 5000.0, 12345.6] {
            let mut out = vec![0.0; 20_000];
            poisson_moment_terms(m, 1.0, &mut out);
            let total: f64 = out.iter().sum();
            assert!((total / m - 1.0).abs() < 1e-12, "m={m}: {total}");
        }
        let mut none = vec![1.0; 4];
        poisson_moment_terms(0.0, 1.0, &mut none);
        assert_eq!(none, vec![0.0; 4]);
    }

    #[test]
    fn pmf_with_thousands_of_molecules_keeps_its_mass_and_campbell_mean() {
        let p = LinkParams { n_tx: 2000, ..params(ReceiverKind::Absorbing, 0.8) };
        let kernel = AggregateKernel::new(&p, &[true, false, true, false, true]).unwrap();
        let density = 5e-6;
        let pmf = count_pmf(&kernel, density, 6000, &QuadratureConfig::production()).unwrap();
        let mass: f64 = pmf.iter().sum();
        let mean: f64 = pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        let first =
            integrate_semi_infinite(|r| kernel.eval(r) * r * r, p.r_r, &cfg().with_initial_panel(1.0)).unwrap().value;
        let campbell = 4.0 * PI * density * 2000.0 * first;
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        assert!((mean / campbell - 1.0).abs() < 1e-4, "mean {mean} vs {campbell}");
    }

    #[test]
    fn laplace_edges_and_complete_monotonicity() {
        let p = params(ReceiverKind::Absorbing, 0.0);
        let k = AggregateKernel::new(&p, &[true, false, true]).unwrap();
        assert_eq!(laplace_rtot(0.0, &k, 1e-5, &cfg()).unwrap(), 1.0);
        let silent = AggregateKernel::new(&p, &[false, false]).unwrap();
        assert_eq!(laplace_rtot(37.0, &silent, 1e-5, &cfg()).unwrap(), 1.0);
        assert!(laplace_rtot(-1.0, &k, 1e-5, &cfg()).is_err());
        let values: Vec<f64> = (0..12).map(|i| laplace_rtot(5.0 * f64::from(i), &k, 1e-4, &cfg()).unwrap()).collect();
        for w in values.windows(3) {
            assert!(w[1] < w[0]);
            assert!(w[2] - 2.0 * w[1] + w[0] > 0.0);
        }
    }

    #[test]
    fn laplace_matches_sampled_fields() {
        let p = params(ReceiverKind::Absorbing, 0.0);
        let k = AggregateKernel::new(&p, &[true, true]).unwrap();
        let density = 1e-4;
        let d = Deployment { density, max_radius: 150.0 };
        let fields: Vec<Vec<f64>> = {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            (0..10_000)
                .map(|_| sample_field(&d, 5.0, &mut rng).distances().map(|r| k.eval(r)).collect())
                .collect()
        };
        for s in [0.25, 1.0] {
            let want = laplace_rtot(s, &k, density, &cfg()).unwrap();
            let draws: Vec<f64> = fields.iter().map(|rs| (-s * rs.iter().sum::<f64>()).exp()).collect();
            let (m, se) = mean_and_stderr(&draws);
            assert!((m - want).abs() < 3.0 * se, "s={s}: {m} ± {se} vs {want}");
            assert!(want > 0.01 && want < 0.99, "s={s}: {want}");
        }
    }

    #[test]
    fn bell_recursion_matches_enumeration() {
        let xs = [0.7, -1.3, 2.5, 0.25, 3.0, -0.5];
        let rec = complete_bell(&xs);
        for n in 0..=6 {
            let en = complete_bell_by_enumeration(&xs, n);
            let scale = en.abs().max(1e-300);
            assert!((rec[n] - en).abs() / scale < 1e-12, "n={n}: {} vs {en}", rec[n]);
        }
        // B_3(x1, x2, x3) = x1³ + 3 x1 x2 + x3
        let b3 = 0.7f64.powi(3) + 3.0 * 0.7 * -1.3 + 2.5;
        assert!((rec[3] - b3).abs() < 1e-14);
        let scaled = complete_bell_scaled(&xs);
        let mut fact = 1.0;
        for n in 0..=6 {
            if n > 0 {
                fact *= n as f64;
            }
            assert!((scaled[n] * fact - rec[n]).abs() <= 1e-12 * rec[n].abs().max(1.0));
        }
    }

    #[test]
    fn scaled_recursion_reproduces_poisson_weights() {
        // With only z_1 = μ non-zero the recursion gives q_n = μ^n / n!.
        let mu: f64 = 3.7;
        let mut z = vec![0.0; 8];
        z[0] = mu;
        let (q, log_scale) = scaled_recursion(&z, 1.0);
        let mut fact = 1.0;
        for n in 0..8 {
            if n > 0 {
                fact *= n as f64;
            }
            let want = mu.powi(n as i32) / fact;
            assert!(((q[n] * log_scale.exp()) / want - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn false_alarm_vanishes_without_any_emission() {
        for kind in [ReceiverKind::Absorbing, ReceiverKind::Passive] {
            let p = params(kind, 0.0);
            let sweep = ber_theorem2_sweep(&p, &[false, false, false, false], 1e-5, 6, &cfg()).unwrap();
            for point in sweep {
                assert_eq!(point.false_alarm, 0.0);
                assert!(!point.clamped);
            }
        }
    }

    #[test]
    fn theorem2_at_threshold_one_is_lemma3() {
        for kind in [ReceiverKind::Absorbing, ReceiverKind::Passive] {
            for kd in [0.0, 0.8] {
                let p = params(kind, kd);
                let history = [true, false, true, false];
                let t2 = ber_theorem2(&p, &history, 1e-5, 1, &cfg()).unwrap();
                let l3 = ber_lemma3(&p, &history, 1e-5, &cfg()).unwrap();
                for (a, b) in [(t2.miss, l3.miss), (t2.false_alarm, l3.false_alarm), (t2.error, l3.error)] {
                    assert!((a - b).abs() <= 1e-12 * b.abs(), "{kind:?} kd={kd}: {a} vs {b}");
                }
            }
        }
        assert!(ber_theorem2(&params(ReceiverKind::Absorbing, 0.0), &[], 1e-5, 0, &cfg()).is_err());
    }

    #[test]
    fn lemma3_single_bit_matches_the_closed_form() {
        let p = params(ReceiverKind::Absorbing, 0.0);
        for density in [1e-6, 1e-5, 1e-4] {
            let l3 = ber_lemma3(&p, &[], density, &cfg()).unwrap();
            let direct = single_bit_miss_absorbing(&p, density, &cfg()).unwrap();
            assert!(((l3.miss - direct) / direct).abs() < 1e-7, "{} vs {direct}", l3.miss);
        }
        assert!(single_bit_miss_absorbing(&params(ReceiverKind::Passive, 0.0), 1e-5, &cfg()).is_err());
    }

    #[test]
    fn miss_limits_and_monotonicity() {
        let p = params(ReceiverKind::Absorbing, 0.0);
        assert!(ber_lemma3(&p, &[], 1e-15, &cfg()).unwrap().miss > 1.0 - 1e-9);
        assert!(ber_lemma3(&p, &[], 1.0, &cfg()).unwrap().miss < 1e-12);
        let mut prev = 1.0;
        for density in [1e-7, 1e-6, 1e-5, 1e-4] {
            let miss = ber_lemma3(&p, &[], density, &cfg()).unwrap().miss;
            assert!(miss <= prev);
            prev = miss;
        }
        let mut prev = 1.0;
        for n_tx in [1, 10, 100, 1000] {
            let miss = ber_lemma3(&LinkParams { n_tx, ..p }, &[], 1e-5, &cfg()).unwrap().miss;
            assert!(miss <= prev);
            prev = miss;
        }
    }

    #[test]
    fn miss_grows_with_threshold_and_false_alarm_shrinks() {
        let p = params(ReceiverKind::Absorbing, 0.8);
        let sweep = ber_theorem2_sweep(&p, &[true, false, true, false], 1e-5, 15, &cfg()).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].miss >= w[0].miss);
            assert!(w[1].false_alarm <= w[0].false_alarm);
        }
        assert!(sweep.iter().all(|p| !p.clamped));
    }

    #[test]
    fn iid_average_weights_every_history() {
        let p = LinkParams { p1: 0.3, ..params(ReceiverKind::Absorbing, 0.0) };
        let avg = ber_theorem2_iid_sweep(&p, 3, 1e-5, 4, &cfg()).unwrap();
        let mut want = [0.0; 4];
        for (history, w) in [
            ([false, false], 0.49),
            ([true, false], 0.21),
            ([false, true], 0.21),
            ([true, true], 0.09),
        ] {
            for (acc, point) in want.iter_mut().zip(ber_theorem2_sweep(&p, &history, 1e-5, 4, &cfg()).unwrap()) {
                *acc += w * point.error;
            }
        }
        for (a, w) in avg.iter().zip(want) {
            assert!((a.error - w).abs() < 1e-14);
        }
        assert!(ber_theorem2_iid_sweep(&p, 13, 1e-5, 4, &cfg()).is_err());
    }

    #[test]
    fn poisson_model_mean_matches_the_kernel_sum() {
        let p = params(ReceiverKind::Absorbing, 0.0);
        let d = Deployment { density: 1e-4, max_radius: 50.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let field = sample_field(&d, 5.0, &mut rng);
        let bits = [true, false, true];
        let want = 20.0 * field.distances().map(|r| r_kernel(3, &bits, r, &p).unwrap()).sum::<f64>();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| observation_sample(&field, 3, &bits, &p, ObservationModel::PoissonApprox, &mut rng).unwrap() as f64)
            .collect();
        let (m, se) = mean_and_stderr(&draws);
        assert!((m - want).abs() < 3.0 * se, "{m} ± {se} vs {want}");

        let empty = TxField { points: vec![], deployment: d, receiver_radius: 5.0 };
        for model in [ObservationModel::PoissonApprox, ObservationModel::BinomialExact] {
            assert_eq!(observation_sample(&empty, 1, &[true], &p, model, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn demodulator_examples() {
        let fixed = DetectorSpec::fixed(1).unwrap();
        assert_eq!(decide(&[0, 0, 0], &fixed), vec![false; 3]);
        assert_eq!(decide(&[10, 10, 10], &DetectorSpec::dfd(1)), vec![true, false, false]);
        assert_eq!(decide(&[5, 3, 9], &DetectorSpec::dfd(0)), vec![true, false, true]);
        assert_eq!(decide(&[5, 3, 9], &DetectorSpec::dfd(-2)), vec![true, true, true]);
        assert_eq!(decide(&[4, 5, 6], &DetectorSpec::fixed(5).unwrap()), vec![false, true, true]);
        assert!(decide(&[], &fixed).is_empty());
    }

    proptest! {
        #[test]
        fn kernel_is_additive_and_bounded(mask in 0u32..64, r in 5.0f64..200.0, passive in any::<bool>(), kd in 0.0f64..2.0) {
            let kind = if passive { ReceiverKind::Passive } else { ReceiverKind::Absorbing };
            let p = params(kind, kd);
            let bits: Vec<bool> = (0..6).map(|i| mask >> i & 1 == 1).collect();
            let total = r_kernel(6, &bits, r, &p).unwrap();
            prop_assert!(total >= 0.0 && total <= 6.0);
            let mut parts = 0.0;
            for i in 0..6 {
                if bits[i] {
                    let mut single = vec![false; 6];
                    single[i] = true;
                    parts += r_kernel(6, &single, r, &p).unwrap();
                }
            }
            prop_assert!((parts - total).abs() <= 1e-15 * total.max(1e-300) + 1e-300);
        }
    }
}
