//! Parameter sets and output layout of the published figures.
//!
//! Densities for fig5 through fig8 were never stated, so those presets
//! insist on `--lambda`.

use molfield::analytic::{expectations, expected_all, fa_asymptotic_net, fa_closed_cumulative, ExpectedRow, KernelFamily};
use molfield::config::{DetectorMode, ExperimentConfig, ReceiverKind};
use molfield::detection::LinkParams;
use molfield::sim::{mc_type1, Type1Row};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::commands::{
    ber_curve, ber_header, expected_cells, grid, mc_cells, metadata, push_ber_rows, quadrature, BerRequest, History,
    DEFAULT_REALIZATIONS, EXPECTED_COLUMNS, MC_COLUMNS,
};
use crate::output::{Cell, Table};
use crate::{row, Failure, Flags, Preset};

const KINDS: [ReceiverKind; 2] = [ReceiverKind::Absorbing, ReceiverKind::Passive];
const RECEIVER_RADIUS: f64 = 5.0;
/// Bit-error presets transmit [1 0 1 0] followed by the bit under test.
const HISTORY: [bool; 4] = [true, false, true, false];

struct Setting {
    kind: ReceiverKind,
    diffusion: f64,
    degradation: f64,
    density: f64,
    max_radius: f64,
    molecules: u64,
    bit_interval: f64,
    sample_interval: f64,
    /// Explicit bits, or `None` for a single random bit.
    bits: Option<Vec<bool>>,
}

impl Setting {
    fn build(&self, seed: u64) -> Result<ExperimentConfig, Failure> {
        let mut protocol = json!({
            "N_tx": self.molecules,
            "T_b_s": self.bit_interval,
            "T_ss_s": self.sample_interval,
        });
        match &self.bits {
            Some(bits) => protocol["bits"] = json!(bits.iter().map(|&b| u8::from(b)).collect::<Vec<_>>()),
            None => protocol["n_bits"] = json!(1),
        }
        let raw = json!({
            "medium": {"D_um2_per_s": self.diffusion, "k_d_per_s": self.degradation},
            "receiver": {"kind": self.kind, "r_r_um": RECEIVER_RADIUS},
            "deployment": {"lambda_per_um3": self.density, "R_max_um": self.max_radius},
            "protocol": protocol,
            "seed": seed,
        });
        Ok(ExperimentConfig::from_json(&raw.to_string())?)
    }
}

struct Run<'a> {
    preset: Preset,
    flags: &'a Flags,
    seed: u64,
}

impl Run<'_> {
    fn meta(&self, configs: &[ExperimentConfig]) -> Value {
        let mut m = metadata("figure", Some(self.preset.name()), &configs[0], self.flags);
        m["seed"] = json!(self.seed);
        if configs.len() > 1 {
            m["curves"] = json!(configs.iter().map(ExperimentConfig::to_raw).collect::<Vec<_>>());
        }
        m
    }

    fn realizations(&self, default: usize) -> usize {
        self.flags.realizations.unwrap_or(default)
    }

    /// The single density override allowed on presets with a stated density.
    fn density_or(&self, stated: f64) -> Result<f64, Failure> {
        match self.flags.lambda.as_slice() {
            [] => Ok(stated),
            [one] => Ok(*one),
            _ => Err(Failure::usage(format!("{} takes at most one --lambda value", self.preset.name()))),
        }
    }

    fn required_densities(&self) -> Result<&[f64], Failure> {
        if self.flags.lambda.is_empty() {
            return Err(Failure::usage(format!(
                "{} needs --lambda: the published figure does not state the transmitter density it used, \
                 so there is no value to reproduce (pass one or more densities per µm³, e.g. --lambda 1e-5,2e-5)",
                self.preset.name()
            )));
        }
        Ok(&self.flags.lambda)
    }
}

pub fn figure(preset: Preset, flags: &Flags) -> Result<Vec<Table>, Failure> {
    let run = Run { preset, flags, seed: flags.seed.unwrap_or(0) };
    match preset {
        Preset::Fig2 => fig2(&run),
        Preset::Fig3 => fig3(&run),
        Preset::Fig4 => fig4(&run),
        Preset::Fig5 => fig5(&run),
        Preset::Fig6 => fig6(&run),
        Preset::Fig7 => multi_bit(&run, ReceiverKind::Absorbing, 20),
        Preset::Fig8 => multi_bit(&run, ReceiverKind::Passive, 300),
        Preset::Fig9 => fig9(&run),
    }
}

fn family(cfg: &ExperimentConfig, sample_interval: f64) -> KernelFamily {
    KernelFamily { kind: cfg.receiver.kind, medium: cfg.medium, r_r: cfg.receiver.radius, sample_interval }
}

/// Expectations and, when requested, the type-1 simulation for a set of
/// windows `[start, start + width]`.
fn windows(
    cfg: &ExperimentConfig,
    spans: &[(f64, f64)],
    realizations: usize,
    seed: u64,
) -> Result<Vec<(ExpectedRow, Option<Type1Row>)>, Failure> {
    let n_tx = cfg.protocol.molecules as f64;
    let q = quadrature();
    let analytic = spans
        .par_iter()
        .map(|&(start, width)| {
            let kernel = family(cfg, width).at(start)?;
            let e = expectations(&kernel, &cfg.deployment, n_tx, &q)?;
            Ok(ExpectedRow { t_s: start, nearest: e.nearest, others: e.others, all: e.all })
        })
        .collect::<molfield::Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(spans.len());
    for (&(start, width), e) in spans.iter().zip(analytic) {
        let mc = if realizations > 0 {
            Some(mc_type1(&family(cfg, width), &cfg.deployment, n_tx, realizations, &[start], seed)?[0])
        } else {
            None
        };
        out.push((e, mc));
    }
    Ok(out)
}

fn fig2(run: &Run) -> Result<Vec<Table>, Failure> {
    let density = run.density_or(1e-4)?;
    let realizations = run.realizations(DEFAULT_REALIZATIONS);
    let times = grid(0.01, 0, 200);
    let mut tables = Vec::new();
    let mut scaling = Vec::new();
    let mut configs = Vec::new();
    for kind in KINDS {
        let cfg = Setting {
            kind,
            diffusion: 80.0,
            degradation: 0.0,
            density,
            max_radius: 50.0,
            molecules: 10_000,
            bit_interval: 2.0,
            sample_interval: 0.01,
            bits: Some(vec![true]),
        }
        .build(run.seed)?;
        let fam = family(&cfg, 0.01);
        let rows = molfield::analytic::expected_sweep(&fam, &cfg.deployment, 1e4, &times, &quadrature())?;
        let mc = if realizations > 0 {
            Some(mc_type1(&fam, &cfg.deployment, 1e4, realizations, &times, run.seed)?)
        } else {
            None
        };
        let mut header = vec!["t_s"];
        header.extend(EXPECTED_COLUMNS);
        if mc.is_some() {
            header.extend(MC_COLUMNS);
        }
        let mut table = Table::new(format!("fig2_{}", kind.name()), run.meta(std::slice::from_ref(&cfg)), header);
        for (i, e) in rows.iter().enumerate() {
            let mut cells = row![e.t_s];
            cells.extend(expected_cells(e));
            if let Some(mc) = &mc {
                cells.extend(mc_cells(Some(&mc[i])));
            }
            table.push(cells);
        }
        tables.push(table);
        let peak = |f: fn(&ExpectedRow) -> f64| {
            rows.iter().map(|r| (f(r), r.t_s)).fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
        };
        scaling.push((kind, "nearest", peak(|r| r.nearest)));
        scaling.push((kind, "aggregate", peak(|r| r.others)));
        configs.push(cfg);
    }
    let mut table = Table::new("fig2_scaling", run.meta(&configs), ["receiver", "transmitter", "scaling", "t_at_max_s"]);
    for (kind, which, (value, t)) in scaling {
        table.push(row![kind.name(), which, value, t]);
    }
    tables.push(table);
    Ok(tables)
}

/// Currently observed molecules versus time: absorbed so far, or inside now.
fn fig3(run: &Run) -> Result<Vec<Table>, Failure> {
    let density = run.density_or(1e-3)?;
    let realizations = run.realizations(1000);
    let times = grid(0.05, 1, 40);
    let mut tables = Vec::new();
    for kind in KINDS {
        let cfg = current_setting(kind, density).build(run.seed)?;
        let spans: Vec<(f64, f64)> = times.iter().map(|&t| (0.0, t)).collect();
        let results = windows(&cfg, &spans, realizations, run.seed)?;
        let closed = kind == ReceiverKind::Absorbing;
        let mut header = vec!["t_s"];
        header.extend(EXPECTED_COLUMNS);
        if closed {
            header.push("E_all_closed");
        }
        if realizations > 0 {
            header.extend(MC_COLUMNS);
        }
        let mut table = Table::new(format!("fig3_{}", kind.name()), run.meta(std::slice::from_ref(&cfg)), header);
        for (&t, (e, mc)) in times.iter().zip(&results) {
            let mut cells = row![t];
            cells.extend(expected_cells(e));
            if closed {
                cells.push(Cell::F(fa_closed_cumulative(t, density, 1e4, &cfg.medium, RECEIVER_RADIUS)?));
            }
            if realizations > 0 {
                cells.extend(mc_cells(mc.as_ref()));
            }
            table.push(cells);
        }
        tables.push(table);
    }
    Ok(tables)
}

fn current_setting(kind: ReceiverKind, density: f64) -> Setting {
    Setting {
        kind,
        diffusion: 120.0,
        degradation: 0.0,
        density,
        max_radius: 100.0,
        molecules: 10_000,
        bit_interval: 2.0,
        sample_interval: 0.1,
        bits: Some(vec![true]),
    }
}

/// Observations at t = 2 s versus density, with the net count over the
/// following sampling window and its long-time asymptote.
fn fig4(run: &Run) -> Result<Vec<Table>, Failure> {
    const T: f64 = 2.0;
    let densities: Vec<f64> = if run.flags.lambda.is_empty() {
        vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2]
    } else {
        run.flags.lambda.clone()
    };
    let realizations = run.realizations(1000);
    let mut tables = Vec::new();
    for kind in KINDS {
        let mut configs = Vec::new();
        let mut rows = Vec::new();
        for &density in &densities {
            let cfg = current_setting(kind, density).build(run.seed)?;
            let (e, mc) = windows(&cfg, &[(0.0, T)], realizations, run.seed)?.remove(0);
            let tss = cfg.protocol.sample_interval;
            let net = expected_all(&family(&cfg, tss).at(T)?, &cfg.deployment, 1e4, &quadrature())?;
            let asymptote = match kind {
                ReceiverKind::Absorbing => Some(fa_asymptotic_net(density, 1e4, &cfg.medium, RECEIVER_RADIUS, tss)?),
                ReceiverKind::Passive => None,
            };
            rows.push((density, e, net, asymptote, mc));
            configs.push(cfg);
        }
        let mut header = vec!["lambda_per_um3"];
        header.extend(EXPECTED_COLUMNS);
        header.extend(["E_net_all", "net_asymptote"]);
        if realizations > 0 {
            header.extend(MC_COLUMNS);
        }
        let mut table = Table::new(format!("fig4_{}", kind.name()), run.meta(&configs), header);
        for (density, e, net, asymptote, mc) in rows {
            let mut cells = row![density];
            cells.extend(expected_cells(&e));
            cells.extend(row![net, asymptote]);
            if realizations > 0 {
                cells.extend(mc_cells(mc.as_ref()));
            }
            table.push(cells);
        }
        tables.push(table);
    }
    Ok(tables)
}

fn link_setting(kind: ReceiverKind, degradation: f64, density: f64, molecules: u64, bits: Option<Vec<bool>>) -> Setting {
    Setting {
        kind,
        diffusion: 800.0,
        degradation,
        density,
        max_radius: 100.0,
        molecules,
        bit_interval: 0.2,
        sample_interval: 0.2,
        bits,
    }
}

/// Per-bit observations after a single bit-1 at t = 0: net absorbed during
/// each bit, or molecules inside at the end of each bit.
fn fig5(run: &Run) -> Result<Vec<Table>, Failure> {
    const BITS: usize = 10;
    let densities = run.required_densities()?;
    let realizations = run.realizations(DEFAULT_REALIZATIONS);
    let mut sequence = vec![false; BITS];
    sequence[0] = true;
    let mut tables = Vec::new();
    for kind in KINDS {
        let mut header = vec!["lambda_per_um3", "bit", "t_end_s"];
        header.extend(EXPECTED_COLUMNS);
        header.push("net_asymptote");
        if realizations > 0 {
            header.extend(MC_COLUMNS);
        }
        let mut configs = Vec::new();
        let mut body = Vec::new();
        for &density in densities {
            let cfg = link_setting(kind, 0.0, density, 20, Some(sequence.clone())).build(run.seed)?;
            let tb = cfg.protocol.bit_interval;
            let spans: Vec<(f64, f64)> = (1..=BITS)
                .map(|j| match kind {
                    ReceiverKind::Absorbing => ((j - 1) as f64 * tb, tb),
                    ReceiverKind::Passive => (0.0, j as f64 * tb),
                })
                .collect();
            let results = windows(&cfg, &spans, realizations, run.seed)?;
            let asymptote = match kind {
                ReceiverKind::Absorbing => Some(fa_asymptotic_net(density, 20.0, &cfg.medium, RECEIVER_RADIUS, tb)?),
                ReceiverKind::Passive => None,
            };
            for (j, (e, mc)) in results.iter().enumerate() {
                let mut cells = row![density, j as u64 + 1, (j + 1) as f64 * tb];
                cells.extend(expected_cells(e));
                cells.push(asymptote.into());
                if realizations > 0 {
                    cells.extend(mc_cells(mc.as_ref()));
                }
                body.push(cells);
            }
            configs.push(cfg);
        }
        let mut table = Table::new(format!("fig5_{}", kind.name()), run.meta(&configs), header);
        body.into_iter().for_each(|cells| table.push(cells));
        tables.push(table);
    }
    Ok(tables)
}

const BER_REALIZATIONS: usize = 100_000;

struct BerFigure<'a> {
    name: String,
    prefix: &'a [&'a str],
    modes: &'a [DetectorMode],
    /// (prefix values, configuration, history) per curve.
    curves: Vec<(Vec<f64>, ExperimentConfig, History)>,
}

fn ber_table(run: &Run, fig: BerFigure) -> Result<Table, Failure> {
    let realizations = run.realizations(BER_REALIZATIONS);
    let simulated = realizations > 0;
    let configs: Vec<ExperimentConfig> = fig.curves.iter().map(|(_, c, _)| c.clone()).collect();
    let mut table = Table::new(fig.name, run.meta(&configs), ber_header(fig.prefix, fig.modes, simulated));
    for (prefix, cfg, history) in fig.curves {
        let req = BerRequest {
            params: LinkParams::from_config(&cfg),
            deployment: cfg.deployment,
            history,
            modes: fig.modes,
            realizations,
            seed: run.seed,
            max_threshold: run.flags.max_threshold,
        };
        let curve = ber_curve(&req)?;
        push_ber_rows(&mut table, &prefix, &curve, fig.modes, simulated);
    }
    Ok(table)
}

/// Error probability of a lone random bit.
fn fig6(run: &Run) -> Result<Vec<Table>, Failure> {
    let densities = run.required_densities()?;
    KINDS
        .iter()
        .map(|&kind| {
            let curves = densities
                .iter()
                .map(|&d| Ok((vec![d], link_setting(kind, 0.0, d, 20, None).build(run.seed)?, History::Iid(1))))
                .collect::<Result<Vec<_>, Failure>>()?;
            let fig = BerFigure {
                name: format!("fig6_{}", kind.name()),
                prefix: &["lambda_per_um3"],
                modes: &[DetectorMode::FixedThreshold],
                curves,
            };
            ber_table(run, fig)
        })
        .collect()
}

/// The bit after [1 0 1 0], with and without degradation.
fn multi_bit(run: &Run, kind: ReceiverKind, molecules: u64) -> Result<Vec<Table>, Failure> {
    let densities = run.required_densities()?;
    let mut curves = Vec::new();
    for &d in densities {
        for kd in [0.0, 0.8] {
            let cfg = link_setting(kind, kd, d, molecules, Some(HISTORY.to_vec())).build(run.seed)?;
            curves.push((vec![d, kd], cfg, History::Known(HISTORY.to_vec())));
        }
    }
    let fig = BerFigure {
        name: run.preset.name().to_string(),
        prefix: &["lambda_per_um3", "k_d_per_s"],
        modes: &[DetectorMode::FixedThreshold],
        curves,
    };
    Ok(vec![ber_table(run, fig)?])
}

/// Decision feedback against the fixed threshold under degradation.
fn fig9(run: &Run) -> Result<Vec<Table>, Failure> {
    let density = run.density_or(5e-6)?;
    KINDS
        .iter()
        .map(|&kind| {
            let cfg = link_setting(kind, 0.8, density, 10_000, Some(HISTORY.to_vec())).build(run.seed)?;
            let fig = BerFigure {
                name: format!("fig9_{}", kind.name()),
                prefix: &["lambda_per_um3", "k_d_per_s"],
                modes: &[DetectorMode::FixedThreshold, DetectorMode::Dfd],
                curves: vec![(vec![density, 0.8], cfg, History::Known(HISTORY.to_vec()))],
            };
            ber_table(run, fig)
        })
        .collect()
}
