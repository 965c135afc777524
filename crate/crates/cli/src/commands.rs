use std::f64::consts::PI;

use molfield::analytic::{expected_sweep, fa_closed_net, ExpectedRow, KernelFamily};
use molfield::channel::PointChannel;
use molfield::config::{BitSource, Deployment, DetectorMode, ExperimentConfig, ReceiverKind};
use molfield::detection::{ber_theorem2_iid_sweep, ber_theorem2_sweep, AggregateKernel, BerPoint, LinkParams, ObservationModel};
use molfield::geometry::sample_field;
use molfield::quadrature::{integrate_semi_infinite, QuadratureConfig};
use molfield::sim::{
    estimate_ber_sweep, mc_type1, mc_type2, particle_sim, stream_rng, BerEstimate, BitPlan, ObservationTrace, ParticleConfig,
    Type1Row,
};
use rand::Rng;
use serde_json::{json, Value};

use crate::output::{Cell, Table};
use crate::{row, Failure, Flags};

pub const DEFAULT_REALIZATIONS: usize = 10_000;

/// Random stream reserved for draws made outside the simulators, far from
/// the per-realization streams.
const AUX_STREAM: u64 = u64::MAX;

pub struct Context {
    pub command: &'static str,
    pub cfg: ExperimentConfig,
    pub flags: Flags,
}

impl Context {
    fn meta(&self) -> Value {
        metadata(self.command, None, &self.cfg, &self.flags)
    }

    fn horizon_steps(&self) -> usize {
        let p = &self.cfg.protocol;
        (p.bits.len() as f64 * p.bit_interval / p.sample_interval).round().max(1.0) as usize
    }

    fn family(&self) -> KernelFamily {
        KernelFamily {
            kind: self.cfg.receiver.kind,
            medium: self.cfg.medium,
            r_r: self.cfg.receiver.radius,
            sample_interval: self.cfg.protocol.sample_interval,
        }
    }
}

/// The `#` line: everything needed to regenerate the file.
pub fn metadata(command: &str, preset: Option<&str>, cfg: &ExperimentConfig, flags: &Flags) -> Value {
    json!({
        "command": command,
        "preset": preset,
        "config": cfg.to_raw(),
        "seed": cfg.seed,
        "args": flags.metadata(),
    })
}

pub fn quadrature() -> QuadratureConfig {
    QuadratureConfig::production()
}

/// `k · step` for `k` in `from..=to`, computed without accumulation.
pub fn grid(step: f64, from: usize, to: usize) -> Vec<f64> {
    (from..=to).map(|k| k as f64 * step).collect()
}

pub fn mode_name(mode: DetectorMode) -> &'static str {
    match mode {
        DetectorMode::FixedThreshold => "fixed",
        DetectorMode::Dfd => "dfd",
    }
}

pub const EXPECTED_COLUMNS: [&str; 3] = ["E_nearest", "E_others", "E_all"];
pub const MC_COLUMNS: [&str; 6] = ["mc_nearest", "mc_nearest_se", "mc_others", "mc_others_se", "mc_all", "mc_all_se"];

pub fn expected_cells(e: &ExpectedRow) -> Vec<Cell> {
    row![e.nearest, e.others, e.all]
}

pub fn mc_cells(m: Option<&Type1Row>) -> Vec<Cell> {
    match m {
        Some(m) => row![m.nearest, m.nearest_se, m.others, m.others_se, m.all, m.all_se],
        None => (0..MC_COLUMNS.len()).map(|_| Cell::Empty).collect(),
    }
}

pub fn channel(ctx: &Context) -> Result<Vec<Table>, Failure> {
    let rr = ctx.cfg.receiver.radius;
    let r0 = ctx.flags.r0.unwrap_or(2.0 * rr);
    let tss = ctx.cfg.protocol.sample_interval;
    let ch = PointChannel::new(ctx.cfg.medium, rr);
    let times = grid(tss, 1, ctx.horizon_steps());
    let table = match ctx.cfg.receiver.kind {
        ReceiverKind::Absorbing => {
            let mut t = Table::new("channel", ctx.meta(), ["t_s", "hit_rate_per_s", "absorbed_by_t", "absorbed_in_window"]);
            for &time in &times {
                t.push(row![
                    time,
                    ch.hit_rate(r0, time)?,
                    ch.absorbed_by(r0, time)?,
                    ch.absorbed_between(r0, time, time + tss)?
                ]);
            }
            t
        }
        ReceiverKind::Passive => {
            let mut t = Table::new("channel", ctx.meta(), ["t_s", "inside_at_t", "inside_at_t_uniform"]);
            for &time in &times {
                t.push(row![time, ch.observed_inside(r0, time)?, ch.observed_inside_uniform(r0, time)?]);
            }
            t
        }
    };
    Ok(vec![table])
}

pub fn expected(ctx: &Context) -> Result<Vec<Table>, Failure> {
    let cfg = &ctx.cfg;
    let family = ctx.family();
    let times = grid(cfg.protocol.sample_interval, 0, ctx.horizon_steps());
    let n_tx = cfg.protocol.molecules as f64;
    let rows = expected_sweep(&family, &cfg.deployment, n_tx, &times, &quadrature())?;
    let realizations = ctx.flags.realizations.unwrap_or(0);
    let mc = if realizations > 0 {
        Some(mc_type1(&family, &cfg.deployment, n_tx, realizations, &times, cfg.seed)?)
    } else {
        None
    };
    let closed = cfg.receiver.kind == ReceiverKind::Absorbing && cfg.medium.degradation == 0.0;

    let mut header = vec!["t_s"];
    header.extend(EXPECTED_COLUMNS);
    if closed {
        header.push("E_all_closed");
    }
    if mc.is_some() {
        header.extend(MC_COLUMNS);
    }
    let mut table = Table::new("expected", ctx.meta(), header);
    for (i, e) in rows.iter().enumerate() {
        let mut cells = row![e.t_s];
        cells.extend(expected_cells(e));
        if closed {
            let v = fa_closed_net(e.t_s, cfg.protocol.sample_interval, cfg.deployment.density, n_tx, &cfg.medium, cfg.receiver.radius)?;
            cells.push(Cell::F(v));
        }
        if let Some(mc) = &mc {
            cells.extend(mc_cells(Some(&mc[i])));
        }
        table.push(cells);
    }
    Ok(vec![table])
}

pub fn sim_mc(ctx: &Context) -> Result<Vec<Table>, Failure> {
    let cfg = &ctx.cfg;
    let times = grid(cfg.protocol.sample_interval, 0, ctx.horizon_steps());
    let realizations = ctx.flags.realizations.unwrap_or(DEFAULT_REALIZATIONS);
    let rows = mc_type1(&ctx.family(), &cfg.deployment, cfg.protocol.molecules as f64, realizations, &times, cfg.seed)?;
    let mut header = vec!["t_s"];
    header.extend(MC_COLUMNS);
    let mut table = Table::new("sim_mc", ctx.meta(), header);
    for r in &rows {
        let mut cells = row![r.t_s];
        cells.extend(mc_cells(Some(r)));
        table.push(cells);
    }
    Ok(vec![table])
}

/// The bits preceding the test bit.
#[derive(Debug, Clone, PartialEq)]
pub enum History {
    /// Fixed history; the test bit after it is random.
    Known(Vec<bool>),
    /// `len` i.i.d. bits in total, the last being the test bit.
    Iid(usize),
}

impl History {
    fn bits_total(&self) -> usize {
        match self {
            History::Known(h) => h.len() + 1,
            History::Iid(len) => *len,
        }
    }
}

/// Analytic and simulated BER over thresholds `1..=max_threshold`.
pub struct BerCurve {
    pub max_threshold: u32,
    /// Fixed-threshold detector only.
    pub analytic: Option<Vec<BerPoint>>,
    pub simulated: Vec<(DetectorMode, Vec<BerEstimate>)>,
}

pub struct BerRequest<'a> {
    pub params: LinkParams,
    pub deployment: Deployment,
    pub history: History,
    pub modes: &'a [DetectorMode],
    pub realizations: usize,
    pub seed: u64,
    pub max_threshold: Option<u32>,
}

/// Mean count at the last bit when every bit is a one, a generous scale for
/// the threshold range.
fn all_ones_mean(params: &LinkParams, bits: usize, density: f64) -> Result<f64, Failure> {
    let kernel = AggregateKernel::new(params, &vec![true; bits])?;
    let m = integrate_semi_infinite(|r| kernel.eval(r) * r * r, params.r_r, &quadrature())?;
    Ok(4.0 * PI * density * params.n_tx as f64 * m.value)
}

/// A count exceeded by only one trace in a thousand at the test bit. Past it
/// every threshold misses almost every bit-1, so the sweep stops there.
fn high_test_count(traces: &[ObservationTrace], bit: usize) -> u64 {
    let mut counts: Vec<u64> = traces.iter().filter_map(|t| t.counts.get(bit)).copied().collect();
    counts.sort_unstable();
    let k = ((counts.len() as f64 * 0.999).ceil() as usize).clamp(1, counts.len().max(1)) - 1;
    counts.get(k).copied().unwrap_or(0)
}

pub fn ber_curve(req: &BerRequest) -> Result<BerCurve, Failure> {
    let j = req.history.bits_total();
    let traces = if req.realizations > 0 {
        let plan = match &req.history {
            History::Known(h) => BitPlan::with_test_bit(h, req.params.p1),
            History::Iid(len) => BitPlan { prefix: vec![], random: *len, p1: req.params.p1 },
        };
        mc_type2(&req.params, &req.deployment, &plan, req.realizations, ObservationModel::PoissonApprox, req.seed)?
    } else {
        Vec::new()
    };
    let max_threshold = match req.max_threshold {
        Some(0) => return Err(Failure::usage("--max-threshold must be at least 1")),
        Some(m) => m,
        None if !traces.is_empty() => (high_test_count(&traces, j - 1) + 1).max(2) as u32,
        None => (2.0 * all_ones_mean(&req.params, j, req.deployment.density)? + 10.0).ceil() as u32,
    };
    let analytic = if req.modes.contains(&DetectorMode::FixedThreshold) {
        let q = quadrature();
        let density = req.deployment.density;
        match &req.history {
            History::Known(h) => Some(ber_theorem2_sweep(&req.params, h, density, max_threshold, &q)?),
            History::Iid(len) if *len <= 12 => Some(ber_theorem2_iid_sweep(&req.params, *len, density, max_threshold, &q)?),
            History::Iid(len) => {
                eprintln!("note: analytic averaging over {len} i.i.d. bits is too large; simulation only");
                None
            }
        }
    } else {
        None
    };
    let mut simulated = Vec::new();
    if !traces.is_empty() {
        for &mode in req.modes {
            simulated.push((mode, estimate_ber_sweep(&traces, mode, 1..=i64::from(max_threshold), j - 1)?));
        }
    }
    Ok(BerCurve { max_threshold, analytic, simulated })
}

pub fn ber_header(prefix: &[&str], modes: &[DetectorMode], simulated: bool) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(["N_th", "analytic_miss", "analytic_false_alarm", "analytic_error", "analytic_clamped"].map(String::from));
    if simulated {
        for &m in modes {
            for col in ["error", "ci_low", "ci_high", "miss", "false_alarm"] {
                h.push(format!("{}_{col}", mode_name(m)));
            }
        }
    }
    h
}

pub fn push_ber_rows(table: &mut Table, prefix: &[f64], curve: &BerCurve, modes: &[DetectorMode], simulated: bool) {
    for k in 0..curve.max_threshold as usize {
        let mut cells: Vec<Cell> = prefix.iter().map(|&x| Cell::F(x)).collect();
        cells.push(Cell::U(k as u64 + 1));
        match curve.analytic.as_ref().map(|a| a[k]) {
            Some(p) => cells.extend(row![p.miss, p.false_alarm, p.error, u64::from(p.clamped)]),
            None => cells.extend((0..4).map(|_| Cell::Empty)),
        }
        if simulated {
            for &m in modes {
                match curve.simulated.iter().find(|(mode, _)| *mode == m) {
                    Some((_, est)) => {
                        let e = &est[k];
                        cells.extend(row![e.p_e, e.ci_low, e.ci_high, e.miss_rate(), e.false_alarm_rate()]);
                    }
                    None => cells.extend((0..5).map(|_| Cell::Empty)),
                }
            }
        }
        table.push(cells);
    }
}

pub fn ber(ctx: &Context) -> Result<Vec<Table>, Failure> {
    let cfg = &ctx.cfg;
    let history = match &cfg.protocol.bits {
        BitSource::Explicit(bits) => History::Known(bits.clone()),
        BitSource::Iid { len } => History::Iid(*len),
    };
    let modes = [cfg.detector.mode];
    let req = BerRequest {
        params: LinkParams::from_config(cfg),
        deployment: cfg.deployment,
        history,
        modes: &modes,
        realizations: ctx.flags.realizations.unwrap_or(DEFAULT_REALIZATIONS),
        seed: cfg.seed,
        max_threshold: ctx.flags.max_threshold,
    };
    let curve = ber_curve(&req)?;
    let simulated = req.realizations > 0;
    let mut table = Table::new("ber", ctx.meta(), ber_header(&[], &modes, simulated));
    push_ber_rows(&mut table, &[], &curve, &modes, simulated);

    let th = cfg.detector.threshold;
    if th >= 1 && th <= i64::from(curve.max_threshold) {
        let k = th as usize - 1;
        let analytic = curve.analytic.as_ref().map(|a| a[k].error);
        let sim = curve.simulated.first().map(|(_, e)| e[k].p_e);
        eprintln!("configured N_th = {th}: analytic {analytic:?}, simulated {sim:?}");
    }
    Ok(vec![table])
}

pub fn sim_particle(ctx: &Context) -> Result<Vec<Table>, Failure> {
    let cfg = &ctx.cfg;
    let params = LinkParams::from_config(cfg);
    let tss = cfg.protocol.sample_interval;
    let dt = ctx.flags.dt.unwrap_or(tss / 10.0);
    let mut aux = stream_rng(cfg.seed, AUX_STREAM);
    let field = sample_field(&cfg.deployment, params.r_r, &mut aux);
    let bits = match &cfg.protocol.bits {
        BitSource::Explicit(bits) => bits.clone(),
        BitSource::Iid { len } => (0..*len).map(|_| aux.gen_bool(params.p1)).collect(),
    };
    let bit_ends = grid(params.bit_interval, 1, bits.len());
    let pc = ParticleConfig::new(dt, tss, bit_ends.clone());
    let run = particle_sim(&field, &params, &bits, &pc, cfg.seed)?;

    let n_tx = params.n_tx as f64;
    let mut table = Table::new(
        "particle",
        ctx.meta(),
        ["bit", "t_s", "b", "count", "expected", "emitted", "live", "absorbed", "degraded"],
    );
    for (j, &t) in bit_ends.iter().enumerate() {
        let kernel = AggregateKernel::new(&params, &bits[..=j])?;
        let expected: f64 = n_tx * field.distances().map(|r| kernel.eval(r)).sum::<f64>();
        let c = run.census[j];
        table.push(row![
            j as u64 + 1,
            t,
            u64::from(bits[j]),
            run.trace.counts[j],
            expected,
            c.emitted,
            c.live,
            c.absorbed,
            c.degraded
        ]);
    }
    let mut positions = Table::new("field", ctx.meta(), ["x_um", "y_um", "z_um", "r_um"]);
    for p in &field.points {
        positions.push(row![p.x, p.y, p.z, p.norm()]);
    }
    Ok(vec![table, positions])
}
