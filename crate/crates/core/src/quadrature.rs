//! Globally adaptive Gauss–Kronrod (10/21-point) quadrature on finite
//! intervals, and a semi-infinite driver that grows the upper limit in
//! geometrically widening panels until the tail stops contributing.
//!
//! Integrands may be vector valued so several related integrals can share
//! one set of nodes; every component must meet the tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of bisections per finite panel.
    pub max_subdivisions: usize,
    /// Width of the first semi-infinite panel. Should be of the order of the
    /// length scale over which the integrand varies.
    pub initial_panel: f64,
    /// Consecutive negligible panels required before the tail is dropped.
    pub tail_panels: usize,
    /// Upper bound on the number of semi-infinite panels.
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self::production()
    }
}

impl QuadratureConfig {
    /// Tolerances for production sweeps.
    pub fn production() -> Self {
        Self {
            abs_tol: 1e-300,
            rel_tol: 1e-6,
            max_subdivisions: 400,
            initial_panel: 1.0,
            tail_panels: 3,
            max_panels: 64,
        }
    }

    /// Tighter tolerances for comparisons against closed forms.
    pub fn precise() -> Self {
        Self {
            rel_tol: 1e-8,
            max_subdivisions: 1000,
            ..Self::production()
        }
    }

    pub fn with_rel_tol(self, rel_tol: f64) -> Self {
        Self { rel_tol, ..self }
    }

    pub fn with_initial_panel(self, initial_panel: f64) -> Self {
        Self {
            initial_panel,
            ..self
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// A quadrature result with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

// Kronrod abscissae on [-1, 1] (non-negative half) and weights; the Gauss
// 10-point rule uses the odd-indexed abscissae.
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_965_163,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

struct Rule {
    value: Vec<f64>,
    error: Vec<f64>,
}

/// One 21-point Kronrod evaluation with the QUADPACK error heuristic.
///
/// `buf` holds 21·dim values: the centre first, then each abscissa pair.
fn kronrod21<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Rule
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    f(center, &mut buf[..dim]);
    for (j, &x) in XGK[..10].iter().enumerate() {
        let dx = half * x;
        let lo = (1 + 2 * j) * dim;
        f(center - dx, &mut buf[lo..lo + dim]);
        f(center + dx, &mut buf[lo + dim..lo + 2 * dim]);
    }

    let mut value: Vec<f64> = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    for d in 0..dim {
        let fc = buf[d];
        let mut kron = WGK[10] * fc;
        let mut resabs = kron.abs();
        let mut gauss = 0.0;
        for j in 0..10 {
            let f1 = buf[(1 + 2 * j) * dim + d];
            let f2 = buf[(2 + 2 * j) * dim + d];
            kron += WGK[j] * (f1 + f2);
            resabs += WGK[j] * (f1.abs() + f2.abs());
            if j % 2 == 1 {
                gauss += WG[j / 2] * (f1 + f2);
            }
        }
        let mean = 0.5 * kron;
        let mut resasc = WGK[10] * (fc - mean).abs();
        for j in 0..10 {
            let f1 = buf[(1 + 2 * j) * dim + d];
            let f2 = buf[(2 + 2 * j) * dim + d];
            resasc += WGK[j] * ((f1 - mean).abs() + (f2 - mean).abs());
        }
        let resasc = resasc * half.abs();
        let resabs = resabs * half.abs();
        value[d] = kron * half;
        let mut err = ((kron - gauss) * half).abs();
        if resasc != 0.0 && err != 0.0 {
            err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            err = err.max(50.0 * f64::EPSILON * resabs);
        }
        error[d] = err;
    }
    Rule { value, error }
}

struct Segment {
    a: f64,
    b: f64,
    rule: Rule,
    /// Largest error relative to its component's target; the heap key.
    priority: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

/// Result of a vector-valued integration.
#[derive(Debug, Clone, PartialEq)]
pub struct VecEstimate {
    pub value: Vec<f64>,
    pub error: Vec<f64>,
}

/// Globally adaptive integration of a vector integrand over `[a, b]`.
///
/// `floor` supplies per-component absolute error allowances on top of the
/// configured tolerances (used by the semi-infinite driver to stop
/// over-resolving panels that are small next to the running total).
pub fn integrate_vec_with_floor<F>(
    mut f: F,
    a: f64,
    b: f64,
    dim: usize,
    cfg: &QuadratureConfig,
    floor: &[f64],
) -> Result<VecEstimate>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut scratch = vec![0.0; 21 * dim];
    if a == b {
        return Ok(VecEstimate {
            value: vec![0.0; dim],
            error: vec![0.0; dim],
        });
    }
    let first = kronrod21(&mut f, a, b, dim, &mut scratch);
    let mut total = first.value.clone();
    let mut total_err = first.error.clone();
    let targets = |total: &[f64]| -> Vec<f64> {
        total
            .iter()
            .zip(floor)
            .map(|(&v, &fl)| cfg.target(v).max(fl))
            .collect::<Vec<_>>()
    };
    let priority = |rule: &Rule, tgt: &[f64]| -> f64 {
        rule.error
            .iter()
            .zip(tgt)
            .map(|(&e, &t)| if t > 0.0 { e / t } else { e })
            .fold(0.0, f64::max)
    };
    let converged = |err: &[f64], tgt: &[f64]| err.iter().zip(tgt).all(|(&e, &t)| e <= t);

    let mut heap = BinaryHeap::new();
    let tgt = targets(&total);
    let p = priority(&first, &tgt);
    heap.push(Segment {
        a,
        b,
        rule: first,
        priority: p,
    });

    let mut subdivisions = 0;
    while !converged(&total_err, &targets(&total)) {
        if subdivisions >= cfg.max_subdivisions {
            let tgt = targets(&total);
            let worst = (0..dim)
                .max_by(|&i, &j| (total_err[i] / tgt[i]).total_cmp(&(total_err[j] / tgt[j])))
                .unwrap_or(0);
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                partial: total[worst],
                error_estimate: total_err[worst],
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be split in floating point.
            return Err(Error::NonConvergence {
                what: "adaptive quadrature (interval exhausted)",
                partial: total[0],
                error_estimate: total_err[0],
            });
        }
        let left = kronrod21(&mut f, worst.a, mid, dim, &mut scratch);
        let right = kronrod21(&mut f, mid, worst.b, dim, &mut scratch);
        for d in 0..dim {
            total[d] += left.value[d] + right.value[d] - worst.rule.value[d];
            total_err[d] += left.error[d] + right.error[d] - worst.rule.error[d];
        }
        let tgt = targets(&total);
        for (lo, hi, rule) in [(worst.a, mid, left), (mid, worst.b, right)] {
            let p = priority(&rule, &tgt);
            heap.push(Segment {
                a: lo,
                b: hi,
                rule,
                priority: p,
            });
        }
        subdivisions += 1;
    }
    // Re-sum to shed accumulated cancellation from the running updates.
    let mut value: Vec<f64> = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    for seg in heap.iter() {
        for d in 0..dim {
            value[d] += seg.rule.value[d];
            error[d] += seg.rule.error[d];
        }
    }
    Ok(VecEstimate { value, error })
}

pub fn integrate_vec<F>(f: F, a: f64, b: f64, dim: usize, cfg: &QuadratureConfig) -> Result<VecEstimate>
where
    F: FnMut(f64, &mut [f64]),
{
    integrate_vec_with_floor(f, a, b, dim, cfg, &vec![0.0; dim])
}

/// Adaptive integration of a scalar function over `[a, b]`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<Estimate>
where
    F: FnMut(f64) -> f64,
{
    let est = integrate_vec(|x, out: &mut [f64]| out[0] = f(x), a, b, 1, cfg)?;
    Ok(Estimate {
        value: est.value[0],
        error: est.error[0],
    })
}

/// Integrates a vector integrand over `[lower, ∞)`.
///
/// Panels start at `cfg.initial_panel` wide and double; integration stops
/// once `cfg.tail_panels` consecutive panels each contribute less than the
/// tolerance relative to the running total, in every component.
pub fn integrate_semi_infinite_vec<F>(
    mut f: F,
    lower: f64,
    dim: usize,
    cfg: &QuadratureConfig,
) -> Result<VecEstimate>
where
    F: FnMut(f64, &mut [f64]),
{
    if !(cfg.initial_panel > 0.0) {
        return Err(Error::domain("initial quadrature panel must be positive"));
    }
    let mut value: Vec<f64> = vec![0.0; dim];
    let mut error = vec![0.0; dim];
    let mut a = lower;
    let mut width = cfg.initial_panel;
    let mut quiet = 0;
    for _ in 0..cfg.max_panels {
        let b = a + width;
        // Panels only need to be resolved to the accuracy of the running total.
        let floor: Vec<f64> = value.iter().map(|v| 0.25 * cfg.rel_tol * v.abs()).collect();
        let panel = integrate_vec_with_floor(&mut f, a, b, dim, cfg, &floor)?;
        let mut negligible = true;
        for d in 0..dim {
            value[d] += panel.value[d];
            error[d] += panel.error[d];
            if panel.value[d].abs() > cfg.target(value[d]) {
                negligible = false;
            }
        }
        quiet = if negligible { quiet + 1 } else { 0 };
        if quiet >= cfg.tail_panels {
            return Ok(VecEstimate { value, error });
        }
        a = b;
        width *= 2.0;
    }
    Err(Error::NonConvergence {
        what: "semi-infinite quadrature",
        partial: value[0],
        error_estimate: error[0],
    })
}

pub fn integrate_semi_infinite<F>(mut f: F, lower: f64, cfg: &QuadratureConfig) -> Result<Estimate>
where
    F: FnMut(f64) -> f64,
{
    let est = integrate_semi_infinite_vec(|x, out: &mut [f64]| out[0] = f(x), lower, 1, cfg)?;
    Ok(Estimate {
        value: est.value[0],
        error: est.error[0],
    })
}
