//! Monte Carlo simulators.
//!
//! * Type 1 sums the expected observation of every sampled transmitter.
//! * Type 2 draws Poisson counts per bit on top of a sampled field.
//! * The particle simulator moves individual molecules by Brownian steps.
//!
//! Every realisation (and every particle chunk) owns a ChaCha stream chosen
//! by `(seed, index)`, and partial results are combined in index order, so
//! output does not depend on the number of worker threads.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::KernelFamily;
use crate::config::{BitSource, DetectorMode, DetectorSpec, Deployment, ReceiverKind};
use crate::detection::{decide, decision_statistic, draw_poisson, AggregateKernel, LinkParams, ObservationModel};
use crate::error::{Error, Result};
use crate::geometry::{sample_field, TxField};
use crate::stats::{wilson_interval, Z_99};

/// Random stream for work item `index` under master `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

const CHUNK: usize = 256;

/// Runs `work` over fixed index chunks in parallel and returns the chunk
/// results in order.
fn chunked<A: Send>(n: usize, chunk: usize, work: impl Fn(Range<usize>) -> A + Sync) -> Vec<A> {
    let chunks = n.div_ceil(chunk);
    (0..chunks)
        .into_par_iter()
        .map(|c| work(c * chunk..((c + 1) * chunk).min(n)))
        .collect()
}

/// Streaming mean/variance accumulator (Welford, with Chan's merge).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Mean ± standard error of the type-1 observation at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Type1Row {
    pub t_s: f64,
    pub nearest: f64,
    pub nearest_se: f64,
    pub others: f64,
    pub others_se: f64,
    pub all: f64,
    pub all_se: f64,
}

/// Expectation-sum Monte Carlo: per realisation, the sum over sampled
/// transmitters of `N_tx · Φ(|x|)`, split into the nearest transmitter and
/// the rest.
pub fn mc_type1(
    family: &KernelFamily,
    deployment: &Deployment,
    n_tx: f64,
    realizations: usize,
    times: &[f64],
    seed: u64,
) -> Result<Vec<Type1Row>> {
    if realizations == 0 {
        return Err(Error::domain("at least one realization is required"));
    }
    let kernels = times.iter().map(|&t| family.at(t)).collect::<Result<Vec<_>>>()?;
    let partials = chunked(realizations, CHUNK, |range| {
        let mut acc = vec![[Moments::default(); 3]; times.len()];
        for idx in range {
            let mut rng = stream_rng(seed, idx as u64);
            let field = sample_field(deployment, family.r_r, &mut rng);
            let radii: Vec<f64> = field.distances().collect();
            let nearest = radii.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
            for (slot, kernel) in acc.iter_mut().zip(&kernels) {
                let mut near = 0.0;
                let mut rest = 0.0;
                for (i, &r) in radii.iter().enumerate() {
                    let v = n_tx * kernel.eval(r);
                    if Some(i) == nearest {
                        near = v;
                    } else {
                        rest += v;
                    }
                }
                slot[0].push(near);
                slot[1].push(rest);
                slot[2].push(near + rest);
            }
        }
        acc
    });
    let mut total = vec![[Moments::default(); 3]; times.len()];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            for k in 0..3 {
                t[k].merge(&p[k]);
            }
        }
    }
    Ok(times
        .iter()
        .zip(&total)
        .map(|(&t, m)| Type1Row {
            t_s: t,
            nearest: m[0].mean,
            nearest_se: m[0].stderr(),
            others: m[1].mean,
            others_se: m[1].stderr(),
            all: m[2].mean,
            all_se: m[2].stderr(),
        })
        .collect())
}

/// Per-bit demodulation variables of one realisation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservationTrace {
    /// `N[j]`: net absorbed count over bit `j` (absorbing) or molecules
    /// inside at the end of bit `j` (passive).
    pub counts: Vec<u64>,
    /// Sampling instant of each count, s.
    pub times: Vec<f64>,
    pub kind: ReceiverKind,
    /// Transmitted bits.
    pub bits: Vec<bool>,
}

/// Bit sequence recipe: a fixed prefix followed by `random` i.i.d. bits.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPlan {
    pub prefix: Vec<bool>,
    pub random: usize,
    pub p1: f64,
}

impl BitPlan {
    pub fn from_source(source: &BitSource, p1: f64) -> Self {
        match source {
            BitSource::Explicit(bits) => Self { prefix: bits.clone(), random: 0, p1 },
            BitSource::Iid { len } => Self { prefix: vec![], random: *len, p1 },
        }
    }

    /// Known history followed by one random test bit.
    pub fn with_test_bit(history: &[bool], p1: f64) -> Self {
        Self { prefix: history.to_vec(), random: 1, p1 }
    }

    pub fn len(&self) -> usize {
        self.prefix.len() + self.random
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        let mut bits = self.prefix.clone();
        bits.extend((0..self.random).map(|_| rng.gen_bool(self.p1)));
        bits
    }
}

/// Poisson-draw (or binomial-draw) Monte Carlo. The field is sampled once
/// per realisation and reused for every bit.
pub fn mc_type2(
    params: &LinkParams,
    deployment: &Deployment,
    plan: &BitPlan,
    realizations: usize,
    model: ObservationModel,
    seed: u64,
) -> Result<Vec<ObservationTrace>> {
    if plan.is_empty() {
        return Err(Error::domain("bit plan is empty"));
    }
    let n_bits = plan.len();
    let times: Vec<f64> = (1..=n_bits).map(|j| j as f64 * params.bit_interval).collect();
    // Kernel with a single pulse at every lag, for per-lag terms.
    let all_lags = AggregateKernel::new(params, &vec![true; n_bits])?;
    let n = params.n_tx as f64;
    let chunks = chunked(realizations, CHUNK, |range| {
        range
            .map(|idx| {
                let mut rng = stream_rng(seed, idx as u64);
                let bits = plan.draw(&mut rng);
                let field = sample_field(deployment, params.r_r, &mut rng);
                let counts = match model {
                    ObservationModel::PoissonApprox => {
                        // lag_sum[l] = Σ_x term(l, |x|)
                        let mut lag_sum = vec![0.0; n_bits];
                        for r in field.distances() {
                            for (l, s) in lag_sum.iter_mut().enumerate() {
                                *s += all_lags.term(l, r);
                            }
                        }
                        (1..=n_bits)
                            .map(|j| {
                                let mean: f64 = (0..j).filter(|&i| bits[i]).map(|i| lag_sum[j - 1 - i]).sum();
                                draw_poisson(n * mean, &mut rng)
                            })
                            .collect()
                    }
                    ObservationModel::BinomialExact => {
                        let radii: Vec<f64> = field.distances().collect();
                        (1..=n_bits)
                            .map(|j| {
                                let mut total = 0;
                                for &r in &radii {
                                    for i in (0..j).filter(|&i| bits[i]) {
                                        let p = all_lags.term(j - 1 - i, r).clamp(0.0, 1.0);
                                        total += Binomial::new(params.n_tx, p).map(|b| b.sample(&mut rng)).unwrap_or(0);
                                    }
                                }
                                total
                            })
                            .collect()
                    }
                };
                ObservationTrace { counts, times: times.clone(), kind: params.kind, bits }
            })
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// Empirical error rate on one bit position with its 99% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerEstimate {
    pub n_th: i64,
    pub errors: u64,
    pub trials: u64,
    /// Bit-1 trials and how many were missed.
    pub ones: u64,
    pub misses: u64,
    /// Bit-0 trials and how many raised a false alarm.
    pub zeros: u64,
    pub false_alarms: u64,
    pub p_e: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl BerEstimate {
    pub fn miss_rate(&self) -> f64 {
        self.misses as f64 / self.ones as f64
    }

    pub fn false_alarm_rate(&self) -> f64 {
        self.false_alarms as f64 / self.zeros as f64
    }
}

/// Error fraction of `detector` on bit `bit_index` (0-based) of each trace.
pub fn estimate_ber(traces: &[ObservationTrace], detector: &DetectorSpec, bit_index: usize) -> Result<BerEstimate> {
    if traces.is_empty() {
        return Err(Error::domain("no traces to estimate from"));
    }
    let (mut ones, mut misses, mut zeros, mut false_alarms) = (0, 0, 0, 0);
    for trace in traces {
        let (Some(&truth), Some(&decided)) =
            (trace.bits.get(bit_index), decide(&trace.counts, detector).get(bit_index))
        else {
            return Err(Error::domain(format!("trace has no bit {bit_index}")));
        };
        if truth {
            ones += 1;
            misses += u64::from(!decided);
        } else {
            zeros += 1;
            false_alarms += u64::from(decided);
        }
    }
    Ok(tally(detector.threshold, ones, misses, zeros, false_alarms))
}

fn tally(n_th: i64, ones: u64, misses: u64, zeros: u64, false_alarms: u64) -> BerEstimate {
    let trials = ones + zeros;
    let errors = misses + false_alarms;
    let (ci_low, ci_high) = wilson_interval(errors, trials, Z_99);
    BerEstimate {
        n_th,
        errors,
        trials,
        ones,
        misses,
        zeros,
        false_alarms,
        p_e: errors as f64 / trials as f64,
        ci_low,
        ci_high,
    }
}

/// [`estimate_ber`] for each threshold in `thresholds`. The decision
/// statistics are sorted once, so long sweeps stay cheap.
pub fn estimate_ber_sweep(
    traces: &[ObservationTrace],
    mode: DetectorMode,
    thresholds: impl IntoIterator<Item = i64>,
    bit_index: usize,
) -> Result<Vec<BerEstimate>> {
    if traces.is_empty() {
        return Err(Error::domain("no traces to estimate from"));
    }
    let (mut ones, mut zeros) = (Vec::new(), Vec::new());
    for trace in traces {
        let (Some(&truth), Some(stat)) = (trace.bits.get(bit_index), decision_statistic(&trace.counts, mode, bit_index))
        else {
            return Err(Error::domain(format!("trace has no bit {bit_index}")));
        };
        if truth {
            ones.push(stat);
        } else {
            zeros.push(stat);
        }
    }
    ones.sort_unstable();
    zeros.sort_unstable();
    Ok(thresholds
        .into_iter()
        .map(|th| {
            let below = |v: &[i128]| v.partition_point(|&s| s < i128::from(th)) as u64;
            let misses = below(&ones);
            let false_alarms = zeros.len() as u64 - below(&zeros);
            tally(th, ones.len() as u64, misses, zeros.len() as u64, false_alarms)
        })
        .collect())
}

/// Writes `realization,bit_index,count` rows (1-based bit index).
pub fn write_traces_csv<W: Write>(traces: &[ObservationTrace], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["realization", "bit_index", "count"])?;
    for (i, trace) in traces.iter().enumerate() {
        for (j, c) in trace.counts.iter().enumerate() {
            w.write_record([i.to_string(), (j + 1).to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoleculeStatus {
    /// Not yet released.
    Pending,
    Live,
    Absorbed,
    Degraded,
}

/// Molecule bookkeeping for one chunk of the particle simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub positions: Vec<[f64; 3]>,
    /// Index of the emitting transmitter.
    pub origin: Vec<u32>,
    pub status: Vec<MoleculeStatus>,
    /// Step at which each molecule is released.
    pub release_step: Vec<u64>,
    pub absorbed: u64,
}

/// Molecule totals at one instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub emitted: u64,
    pub live: u64,
    pub absorbed: u64,
    pub degraded: u64,
}

impl Census {
    fn add(&mut self, other: &Census) {
        self.emitted += other.emitted;
        self.live += other.live;
        self.absorbed += other.absorbed;
        self.degraded += other.degraded;
    }
}

impl ParticleState {
    fn census(&self, step: u64) -> Census {
        let mut c = Census::default();
        for (s, &rel) in self.status.iter().zip(&self.release_step) {
            if rel > step {
                continue;
            }
            c.emitted += 1;
            match s {
                MoleculeStatus::Live => c.live += 1,
                MoleculeStatus::Absorbed => c.absorbed += 1,
                MoleculeStatus::Degraded => c.degraded += 1,
                MoleculeStatus::Pending => {}
            }
        }
        c
    }

    fn inside(&self, radius: f64) -> u64 {
        let r2 = radius * radius;
        self.positions
            .iter()
            .zip(&self.status)
            .filter(|(p, s)| **s == MoleculeStatus::Live && p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r2)
            .count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    /// Time step, s.
    pub dt: f64,
    /// Sampling interval T_ss; the step must be strictly shorter.
    pub sample_interval: f64,
    /// Extra instants at which raw counts are recorded, s.
    pub sample_times: Vec<f64>,
    /// Molecules per chunk; each chunk has its own random stream.
    pub chunk: usize,
    /// Record a census after every step (for conservation checks).
    pub census_every_step: bool,
}

impl ParticleConfig {
    pub fn new(dt: f64, sample_interval: f64, sample_times: Vec<f64>) -> Self {
        Self { dt, sample_interval, sample_times, chunk: 2048, census_every_step: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRun {
    pub trace: ObservationTrace,
    /// Cumulative absorbed (absorbing) or currently inside (passive) at
    /// each requested sample time.
    pub raw: Vec<u64>,
    /// Census at each requested sample time.
    pub census: Vec<Census>,
    /// Census after every step when requested, otherwise empty.
    pub step_census: Vec<Census>,
}

struct ChunkOutput {
    observed: Vec<u64>,
    census: Vec<Census>,
    step_census: Vec<Census>,
}

/// Brownian-motion particle simulation of a sampled field.
///
/// Each bit-1 releases `n_tx` molecules from every transmitter at the start
/// of its interval. Per step a molecule moves by a Gaussian displacement,
/// is absorbed if it ends inside the receiver (absorbing kind), and
/// otherwise degrades with probability `1 - e^{-k_d dt}`.
pub fn particle_sim(
    field: &TxField,
    params: &LinkParams,
    bits: &[bool],
    cfg: &ParticleConfig,
    seed: u64,
) -> Result<ParticleRun> {
    if !(cfg.dt > 0.0) {
        return Err(Error::Config { field: "dt", message: format!("time step must be positive, got {}", cfg.dt) });
    }
    if cfg.dt >= cfg.sample_interval {
        return Err(Error::Config {
            field: "dt",
            message: format!("time step {} must be shorter than the sampling interval {}", cfg.dt, cfg.sample_interval),
        });
    }
    let tb = params.bit_interval;
    let to_step = |t: f64| (t / cfg.dt).round() as u64;
    let bit_ends: Vec<u64> = (1..=bits.len()).map(|j| to_step(j as f64 * tb)).collect();
    let extra: Vec<u64> = cfg.sample_times.iter().map(|&t| to_step(t)).collect();
    // All instants at which counts are needed: bit ends first, then extras.
    let checkpoints: Vec<u64> = bit_ends.iter().chain(&extra).copied().collect();
    let last_step = checkpoints.iter().copied().max().unwrap_or(0);

    // Molecule list: (transmitter, release step).
    let mut molecules = Vec::new();
    for (i, &b) in bits.iter().enumerate() {
        if !b {
            continue;
        }
        let release = to_step(i as f64 * tb);
        for tx in 0..field.points.len() {
            for _ in 0..params.n_tx {
                molecules.push((tx as u32, release));
            }
        }
    }

    let sigma = (2.0 * params.medium.diffusion * cfg.dt).sqrt();
    let p_degrade = -(-params.medium.degradation * cfg.dt).exp_m1();
    let rr2 = params.r_r * params.r_r;
    let absorbing = params.kind == ReceiverKind::Absorbing;
    let chunk = cfg.chunk.max(1);

    let outputs = chunked(molecules.len(), chunk, |range| {
        let mut rng = stream_rng(seed, (range.start / chunk) as u64);
        let slice = &molecules[range];
        let mut state = ParticleState {
            positions: slice
                .iter()
                .map(|&(tx, _)| {
                    let p = field.points[tx as usize];
                    [p.x, p.y, p.z]
                })
                .collect(),
            origin: slice.iter().map(|&(tx, _)| tx).collect(),
            status: vec![MoleculeStatus::Pending; slice.len()],
            release_step: slice.iter().map(|&(_, rel)| rel).collect(),
            absorbed: 0,
        };
        let mut observed = vec![0u64; checkpoints.len()];
        let mut census = vec![Census::default(); checkpoints.len()];
        let mut step_census = Vec::new();
        let record = |step: u64, state: &ParticleState, observed: &mut [u64], census: &mut [Census]| {
            for (k, &cp) in checkpoints.iter().enumerate() {
                if cp == step {
                    observed[k] = if absorbing { state.absorbed } else { state.inside(params.r_r) };
                    census[k] = state.census(step);
                }
            }
        };
        for (s, &rel) in state.status.iter_mut().zip(&state.release_step) {
            if rel == 0 {
                *s = MoleculeStatus::Live;
            }
        }
        record(0, &state, &mut observed, &mut census);
        for step in 1..=last_step {
            for m in 0..state.status.len() {
                if state.status[m] != MoleculeStatus::Live {
                    continue;
                }
                let p = &mut state.positions[m];
                for c in p.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *c += sigma * z;
                }
                if absorbing && p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= rr2 {
                    state.status[m] = MoleculeStatus::Absorbed;
                    state.absorbed += 1;
                } else if p_degrade > 0.0 && rng.gen::<f64>() < p_degrade {
                    state.status[m] = MoleculeStatus::Degraded;
                }
            }
            // Releases take effect at the start of their step.
            for (s, &rel) in state.status.iter_mut().zip(&state.release_step) {
                if rel == step {
                    *s = MoleculeStatus::Live;
                }
            }
            record(step, &state, &mut observed, &mut census);
            if cfg.census_every_step {
                step_census.push(state.census(step));
            }
        }
        ChunkOutput { observed, census, step_census }
    });

    let mut observed = vec![0u64; checkpoints.len()];
    let mut census = vec![Census::default(); checkpoints.len()];
    let mut step_census = vec![Census::default(); if cfg.census_every_step { last_step as usize } else { 0 }];
    for out in &outputs {
        for (a, b) in observed.iter_mut().zip(&out.observed) {
            *a += b;
        }
        for (a, b) in census.iter_mut().zip(&out.census) {
            a.add(b);
        }
        for (a, b) in step_census.iter_mut().zip(&out.step_census) {
            a.add(b);
        }
    }
    let n_bits = bits.len();
    let counts = (0..n_bits)
        .map(|j| {
            if absorbing {
                observed[j] - if j == 0 { 0 } else { observed[j - 1] }
            } else {
                observed[j]
            }
        })
        .collect();
    let trace = ObservationTrace {
        counts,
        times: (1..=n_bits).map(|j| j as f64 * tb).collect(),
        kind: params.kind,
        bits: bits.to_vec(),
    };
    Ok(ParticleRun {
        trace,
        raw: observed[n_bits..].to_vec(),
        census: census[n_bits..].to_vec(),
        step_census,
    })
}
