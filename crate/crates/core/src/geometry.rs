//! Homogeneous Poisson fields of point transmitters around the receiver and
//! the law of the nearest transmitter distance.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::config::Deployment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// One realisation of the transmitter process in the shell
/// `r_r <= |x| <= R_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TxField {
    pub points: Vec<Point3>,
    pub deployment: Deployment,
    pub receiver_radius: f64,
}

impl TxField {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(Point3::norm)
    }

    pub fn nearest_distance(&self) -> Option<f64> {
        self.distances().min_by(f64::total_cmp)
    }

    /// Writes `x,y,z` rows under a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        if self.points.is_empty() {
            w.write_record(["x", "y", "z"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`TxField::write_csv`]; lines starting with `#`
    /// are skipped. Every point must lie in the deployment shell.
    pub fn read_csv<R: Read>(reader: R, deployment: Deployment, receiver_radius: f64) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let mut points = Vec::new();
        for row in r.deserialize() {
            let p: Point3 = row?;
            let n = p.norm();
            if !(n >= receiver_radius && n <= deployment.max_radius) {
                return Err(Error::domain(format!(
                    "point at distance {n} outside the shell [{receiver_radius}, {}]",
                    deployment.max_radius
                )));
            }
            points.push(p);
        }
        Ok(Self { points, deployment, receiver_radius })
    }
}

/// Mean number of transmitters in the sampling shell.
pub fn expected_count(deployment: &Deployment, receiver_radius: f64) -> f64 {
    deployment.density * 4.0 / 3.0 * PI * (deployment.max_radius.powi(3) - receiver_radius.powi(3))
}

/// Draws a Poisson number of points, each uniform in the shell.
pub fn sample_field<R: Rng + ?Sized>(deployment: &Deployment, receiver_radius: f64, rng: &mut R) -> TxField {
    let mean = expected_count(deployment, receiver_radius);
    let count = if mean > 0.0 {
        Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    let inner3 = receiver_radius.powi(3);
    let span3 = deployment.max_radius.powi(3) - inner3;
    let points = (0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            let r = (u * span3 + inner3).cbrt().max(receiver_radius);
            let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
            Point3::new(r * x, r * y, r * z)
        })
        .collect();
    TxField { points, deployment: *deployment, receiver_radius }
}

fn ball_volume_gap(x: f64, receiver_radius: f64) -> f64 {
    4.0 / 3.0 * PI * (x.powi(3) - receiver_radius.powi(3))
}

/// Density of the distance from the receiver centre to the nearest
/// transmitter in 3D. Zero below `r_r`.
pub fn nearest_distance_pdf(x: f64, density: f64, receiver_radius: f64) -> f64 {
    if x < receiver_radius {
        return 0.0;
    }
    4.0 * density * PI * x * x * (-density * ball_volume_gap(x, receiver_radius)).exp()
}

pub fn nearest_distance_cdf(x: f64, density: f64, receiver_radius: f64) -> f64 {
    if x < receiver_radius {
        return 0.0;
    }
    -(-density * ball_volume_gap(x, receiver_radius)).exp_m1()
}

/// Inverse of [`nearest_distance_cdf`] for `p` in `[0, 1)`.
pub fn nearest_distance_quantile(p: f64, density: f64, receiver_radius: f64) -> f64 {
    (receiver_radius.powi(3) - 3.0 * (-p).ln_1p() / (4.0 * PI * density)).cbrt()
}

pub fn nearest_distance_median(density: f64, receiver_radius: f64) -> f64 {
    nearest_distance_quantile(0.5, density, receiver_radius)
}

pub fn sample_nearest_distance<R: Rng + ?Sized>(density: f64, receiver_radius: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    nearest_distance_quantile(u, density, receiver_radius)
}

/// Planar counterpart of [`nearest_distance_pdf`]; `density` is per µm².
pub fn nearest_distance_pdf_2d(x: f64, density: f64, receiver_radius: f64) -> f64 {
    if x < receiver_radius {
        return 0.0;
    }
    2.0 * density * PI * x * (-density * PI * (x * x - receiver_radius * receiver_radius)).exp()
}

pub fn nearest_distance_cdf_2d(x: f64, density: f64, receiver_radius: f64) -> f64 {
    if x < receiver_radius {
        return 0.0;
    }
    -(-density * PI * (x * x - receiver_radius * receiver_radius)).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_semi_infinite, QuadratureConfig};
    use crate::stats::{chi2_1dof_survival, ks_p_value, ks_statistic, mean_and_stderr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deployment(density: f64, max_radius: f64) -> Deployment {
        Deployment { density, max_radius }
    }

    #[test]
    fn mean_field_size_for_the_small_deployment() {
        let d = deployment(1e-4, 50.0);
        let mean = expected_count(&d, 5.0);
        assert!((mean - 52.3).abs() < 0.05, "{mean}");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let counts: Vec<f64> = (0..20_000).map(|_| sample_field(&d, 5.0, &mut rng).len() as f64).collect();
        let (m, se) = mean_and_stderr(&counts);
        assert!((m - mean).abs() < 3.0 * se, "{m} ± {se} vs {mean}");
    }

    #[test]
    fn degenerate_shell_is_always_empty() {
        let d = deployment(1e-2, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(sample_field(&d, 5.0, &mut rng).is_empty());
        }
    }

    #[test]
    fn field_points_stay_in_the_shell_and_follow_the_radial_law() {
        let d = deployment(1e-3, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut radii = Vec::new();
        while radii.len() < 100_000 {
            let f = sample_field(&d, 5.0, &mut rng);
            for r in f.distances() {
                assert!((5.0..=40.0).contains(&r));
                radii.push(r);
            }
        }
        radii.truncate(100_000);
        let (lo3, hi3) = (125.0, 64_000.0);
        let ks = ks_statistic(&mut radii, |r| (r.powi(3) - lo3) / (hi3 - lo3));
        assert!(ks < 0.01, "{ks}");
    }

    #[test]
    fn shell_counts_are_independent() {
        // Four equal-volume shells; each pair of indicator(count > mean) is
        // tested for independence with a 2×2 chi-square test.
        let d = deployment(2e-4, 40.0);
        let edges: Vec<f64> = (0..=4)
            .map(|k| (125.0 + f64::from(k) / 4.0 * (64_000.0 - 125.0)).cbrt())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let counts: Vec<[u32; 4]> = (0..n)
            .map(|_| {
                let mut c = [0u32; 4];
                for r in sample_field(&d, 5.0, &mut rng).distances() {
                    let k = edges.windows(2).position(|w| r >= w[0] && r < w[1]).unwrap_or(3);
                    c[k] += 1;
                }
                c
            })
            .collect();
        let shell_mean = expected_count(&d, 5.0) / 4.0;
        for a in 0..4 {
            for b in (a + 1)..4 {
                let mut table = [[0.0f64; 2]; 2];
                for c in &counts {
                    let i = usize::from(f64::from(c[a]) > shell_mean);
                    let j = usize::from(f64::from(c[b]) > shell_mean);
                    table[i][j] += 1.0;
                }
                let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
                let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
                let mut chi2 = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        let e = rows[i] * cols[j] / n as f64;
                        chi2 += (table[i][j] - e).powi(2) / e;
                    }
                }
                let p = chi2_1dof_survival(chi2);
                assert!(p > 1e-3, "shells {a},{b}: chi2 = {chi2}, p = {p}");
            }
        }
    }

    #[test]
    fn nearest_pdf_is_normalised_and_matches_its_edge_value() {
        for (density, rr) in [(1e-4, 5.0), (1e-2, 5.0), (1e-6, 2.0)] {
            let median = nearest_distance_median(density, rr);
            let total = integrate_semi_infinite(
                |x| nearest_distance_pdf(x, density, rr),
                rr,
                &QuadratureConfig::precise().with_rel_tol(1e-12).with_initial_panel(median),
            )
            .unwrap()
            .value;
            assert!((total - 1.0).abs() < 1e-10, "λ={density}: {total}");
            assert!((nearest_distance_pdf(rr, density, rr) - 4.0 * density * PI * rr * rr).abs() < 1e-18);
            assert_eq!(nearest_distance_pdf(rr - 0.1, density, rr), 0.0);
        }
    }

    #[test]
    fn nearest_median_reference() {
        let median = nearest_distance_median(1e-4, 5.0);
        let closed = (125.0 + 3.0 * 2f64.ln() / (4.0 * PI * 1e-4)).cbrt();
        assert!((median - closed).abs() < 1e-12);
        assert!((median - 12.1).abs() < 0.05, "{median}");
        assert!((nearest_distance_cdf(median, 1e-4, 5.0) - 0.5).abs() < 1e-14);
        assert_eq!(nearest_distance_quantile(0.0, 1e-4, 5.0), 5.0);
    }

    #[test]
    fn nearest_pdf_2d_normalisation_and_rayleigh_reduction() {
        for rr in [0.0, 5.0] {
            let total = integrate_semi_infinite(
                |x| nearest_distance_pdf_2d(x, 1e-3, rr),
                rr,
                &QuadratureConfig::precise().with_rel_tol(1e-12).with_initial_panel(10.0),
            )
            .unwrap()
            .value;
            assert!((total - 1.0).abs() < 1e-10, "{total}");
        }
        // With no exclusion the law is Rayleigh with σ² = 1/(2πλ).
        let sigma2 = 1.0 / (2.0 * PI * 1e-3);
        for x in [1.0, 10.0, 30.0] {
            let rayleigh = x / sigma2 * (-x * x / (2.0 * sigma2)).exp();
            assert!((nearest_distance_pdf_2d(x, 1e-3, 0.0) - rayleigh).abs() < 1e-15);
        }
    }

    #[test]
    fn nearest_distance_2d_matches_a_planar_point_process() {
        let (density, rr, outer) = (1e-3, 5.0, 150.0);
        let mean = density * PI * (outer * outer - rr * rr);
        let poisson = Poisson::new(mean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mins = Vec::new();
        for _ in 0..20_000 {
            let n = poisson.sample(&mut rng) as usize;
            let nearest = (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    (rr * rr + u * (outer * outer - rr * rr)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            mins.push(nearest);
        }
        let n = mins.len();
        let d = ks_statistic(&mut mins, |x| nearest_distance_cdf_2d(x, density, rr));
        assert!(ks_p_value(d, n) > 0.01, "D = {d}");
    }

    #[test]
    fn sampled_nearest_distance_mean_matches_quadrature() {
        let (density, rr) = (1e-4, 5.0);
        let want = integrate_semi_infinite(
            |x| x * nearest_distance_pdf(x, density, rr),
            rr,
            &QuadratureConfig::precise().with_initial_panel(10.0),
        )
        .unwrap()
        .value;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample_nearest_distance(density, rr, &mut rng)).collect();
        let (m, se) = mean_and_stderr(&draws);
        assert!((m - want).abs() < 3.0 * se, "{m} ± {se} vs {want}");
    }

    #[test]
    fn field_minimum_follows_the_nearest_distance_law() {
        let (density, rr) = (1e-4, 5.0);
        let max_radius = 10.0 * nearest_distance_median(density, rr);
        let d = deployment(density, max_radius);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut mins: Vec<f64> = (0..20_000)
            .map(|_| sample_field(&d, rr, &mut rng).nearest_distance().unwrap_or(f64::INFINITY))
            .collect();
        let n = mins.len();
        let stat = ks_statistic(&mut mins, |x| nearest_distance_cdf(x, density, rr));
        assert!(ks_p_value(stat, n) > 0.01, "D = {stat}");
    }

    #[test]
    fn csv_round_trip() {
        let d = deployment(1e-4, 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let field = sample_field(&d, 5.0, &mut rng);
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"x,y,z\n"));
        let back = TxField::read_csv(buf.as_slice(), d, 5.0).unwrap();
        assert_eq!(back, field);

        let bad = b"x,y,z\n1,0,0\n";
        assert!(TxField::read_csv(&bad[..], d, 5.0).is_err());
    }
}
