//! Stochastic fading applied to released packets.
//!
//! One coefficient `xi` is drawn per transmission and scales every entry of
//! the packet. Random streams are derived from `(seed, run)` so that each
//! simulation run owns an independent, reproducible sequence.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("invalid fading parameter: {0}")]
    Invalid(String),
    #[error("truncated gaussian: cannot match mean {mean} and variance {variance} on [{lo}, {hi}]")]
    Unmatched {
        mean: f64,
        variance: f64,
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FadingFamily {
    Gaussian,
    TruncatedGaussian { lo: f64, hi: f64 },
    /// Equiprobable support `{mean - sd, mean + sd}`.
    TwoPoint,
}

impl Default for FadingFamily {
    fn default() -> Self {
        FadingFamily::Gaussian
    }
}

/// How the configured `xi_star` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpreadMeaning {
    #[default]
    Variance,
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingConfig {
    pub xi_bar: f64,
    pub xi_star: f64,
    #[serde(default)]
    pub family: FadingFamily,
    #[serde(default)]
    pub xi_star_is: SpreadMeaning,
    #[serde(default)]
    pub seed: u64,
}

impl FadingConfig {
    pub fn new(xi_bar: f64, xi_star: f64, family: FadingFamily, seed: u64) -> Self {
        FadingConfig {
            xi_bar,
            xi_star,
            family,
            xi_star_is: SpreadMeaning::Variance,
            seed,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.xi_star_is {
            SpreadMeaning::Variance => self.xi_star,
            SpreadMeaning::StdDev => self.xi_star * self.xi_star,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn check(&self) -> Result<(), ChannelError> {
        if !self.xi_bar.is_finite() {
            return Err(ChannelError::Invalid(format!("xi_bar = {}", self.xi_bar)));
        }
        if !(self.xi_star >= 0.0) || !self.xi_star.is_finite() {
            return Err(ChannelError::Invalid(format!(
                "xi_star = {} must be nonnegative",
                self.xi_star
            )));
        }
        match self.family {
            FadingFamily::Gaussian => Ok(()),
            FadingFamily::TwoPoint => {
                if self.xi_bar - self.std_dev() < 0.0 {
                    Err(ChannelError::Invalid(format!(
                        "two-point support {} is negative",
                        self.xi_bar - self.std_dev()
                    )))
                } else {
                    Ok(())
                }
            }
            FadingFamily::TruncatedGaussian { lo, hi } => {
                if !(lo < hi) {
                    return Err(ChannelError::Invalid(format!(
                        "truncation bounds [{lo}, {hi}] are empty"
                    )));
                }
                Sampler::new(self).map(|_| ())
            }
        }
    }

    /// Independent stream for simulation run `run`.
    pub fn stream(&self, run: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(run);
        rng
    }

    pub fn sampler(&self) -> Result<Sampler, ChannelError> {
        self.check()?;
        Sampler::new(self)
    }
}

/// Prepared draw routine for one fading configuration.
#[derive(Debug, Clone)]
pub enum Sampler {
    Constant(f64),
    Gaussian(Normal<f64>),
    Truncated {
        loc: f64,
        scale: f64,
        cdf_lo: f64,
        cdf_hi: f64,
    },
    TwoPoint {
        low: f64,
        high: f64,
    },
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("unit normal")
}

/// Mean and variance of `N(loc, scale^2)` truncated to `[lo, hi]`.
pub fn truncated_moments(loc: f64, scale: f64, lo: f64, hi: f64) -> (f64, f64) {
    let n = std_normal();
    let a = (lo - loc) / scale;
    let b = (hi - loc) / scale;
    let z = n.cdf(b) - n.cdf(a);
    let (pa, pb) = (n.pdf(a), n.pdf(b));
    let ta = if a.is_finite() { a * pa } else { 0.0 };
    let tb = if b.is_finite() { b * pb } else { 0.0 };
    let r = (pa - pb) / z;
    let mean = loc + scale * r;
    let var = scale * scale * (1.0 + (ta - tb) / z - r * r);
    (mean, var)
}

/// Finds `(loc, scale)` whose truncation to `[lo, hi]` has the given moments.
fn match_truncated(mean: f64, var: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if !(mean > lo && mean < hi) || !(var > 0.0) {
        return None;
    }
    let residual = |p: [f64; 2]| {
        let (m, v) = truncated_moments(p[0], p[1].exp(), lo, hi);
        [m - mean, (v / var).ln()]
    };
    let mut p = [mean, 0.5 * var.ln()];
    for _ in 0..200 {
        let r = residual(p);
        if !(r[0].is_finite() && r[1].is_finite()) {
            return None;
        }
        if r[0].abs() < 1e-13 * (1.0 + mean.abs()) && r[1].abs() < 1e-12 {
            return Some((p[0], p[1].exp()));
        }
        let h = 1e-7;
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            let mut q = p;
            q[c] += h;
            let rq = residual(q);
            jac[0][c] = (rq[0] - r[0]) / h;
            jac[1][c] = (rq[1] - r[1]) / h;
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det.abs() < 1e-300 {
            return None;
        }
        let dx = (jac[1][1] * r[0] - jac[0][1] * r[1]) / det;
        let dy = (jac[0][0] * r[1] - jac[1][0] * r[0]) / det;
        let norm0 = r[0].abs() + r[1].abs();
        let mut t = 1.0;
        loop {
            let q = [p[0] - t * dx, (p[1] - t * dy).min(30.0)];
            let rq = residual(q);
            if rq[0].is_finite() && rq[1].is_finite() && rq[0].abs() + rq[1].abs() < norm0 {
                p = q;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return None;
            }
        }
    }
    None
}

impl Sampler {
    fn new(cfg: &FadingConfig) -> Result<Self, ChannelError> {
        let var = cfg.variance();
        let sd = var.sqrt();
        if var == 0.0 {
            return Ok(Sampler::Constant(cfg.xi_bar));
        }
        Ok(match cfg.family {
            FadingFamily::Gaussian => Sampler::Gaussian(
                Normal::new(cfg.xi_bar, sd).map_err(|e| ChannelError::Invalid(e.to_string()))?,
            ),
            FadingFamily::TwoPoint => Sampler::TwoPoint {
                low: cfg.xi_bar - sd,
                high: cfg.xi_bar + sd,
            },
            FadingFamily::TruncatedGaussian { lo, hi } => {
                let (loc, scale) =
                    match_truncated(cfg.xi_bar, var, lo, hi).ok_or(ChannelError::Unmatched {
                        mean: cfg.xi_bar,
                        variance: var,
                        lo,
                        hi,
                    })?;
                let n = std_normal();
                Sampler::Truncated {
                    loc,
                    scale,
                    cdf_lo: n.cdf((lo - loc) / scale),
                    cdf_hi: n.cdf((hi - loc) / scale),
                }
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::Gaussian(n) => n.sample(rng),
            Sampler::TwoPoint { low, high } => {
                if rng.gen::<bool>() {
                    *high
                } else {
                    *low
                }
            }
            Sampler::Truncated {
                loc,
                scale,
                cdf_lo,
                cdf_hi,
            } => {
                let u: f64 = rng.gen();
                let p = (cdf_lo + u * (cdf_hi - cdf_lo)).clamp(1e-300, 1.0 - 1e-16);
                loc + scale * std_normal().inverse_cdf(p)
            }
        }
    }
}

/// Draws one fading coefficient.
pub fn sample_fade<R: Rng + ?Sized>(config: &FadingConfig, rng: &mut R) -> Result<f64, ChannelError> {
    Ok(config.sampler()?.sample(rng))
}

/// Scales every packet entry by the same coefficient.
pub fn fade_packet(xi: f64, packet: &[DVector<f64>]) -> Vec<DVector<f64>> {
    packet.iter().map(|y| y * xi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(cfg: &FadingConfig, n: usize) -> (f64, f64) {
        let s = cfg.sampler().unwrap();
        let mut rng = cfg.stream(3);
        let draws: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn zero_variance_is_deterministic() {
        let cfg = FadingConfig::new(0.8, 0.0, FadingFamily::Gaussian, 1);
        let mut rng = cfg.stream(0);
        for _ in 0..10 {
            assert_eq!(sample_fade(&cfg, &mut rng).unwrap(), 0.8);
        }
    }

    #[test]
    fn two_point_closed_form() {
        let cfg = FadingConfig::new(0.8, 0.04, FadingFamily::TwoPoint, 1);
        match cfg.sampler().unwrap() {
            Sampler::TwoPoint { low, high } => {
                assert!((low - 0.6).abs() < 1e-15 && (high - 1.0).abs() < 1e-15);
            }
            s => panic!("unexpected sampler {s:?}"),
        }
        let (m, v) = moments(&cfg, 200_000);
        assert!((m - 0.8).abs() < 4.0 * 0.2 / (200_000f64).sqrt());
        assert!((v - 0.04).abs() < 1e-3);
    }

    #[test]
    fn std_dev_reading() {
        let mut cfg = FadingConfig::new(0.8, 0.05, FadingFamily::Gaussian, 1);
        cfg.xi_star_is = SpreadMeaning::StdDev;
        assert!((cfg.variance() - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn truncated_matches_requested_moments() {
        let cfg = FadingConfig::new(0.8, 0.05, FadingFamily::TruncatedGaussian { lo: 0.0, hi: 1.5 }, 9);
        let s = cfg.sampler().unwrap();
        if let Sampler::Truncated { loc, scale, .. } = s {
            let (m, v) = truncated_moments(loc, scale, 0.0, 1.5);
            assert!((m - 0.8).abs() < 1e-10 && (v - 0.05).abs() < 1e-10);
        } else {
            panic!("expected truncated sampler");
        }
        let mut rng = cfg.stream(0);
        for _ in 0..10_000 {
            let x = s.sample(&mut rng);
            assert!((0.0..=1.5).contains(&x));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(FadingConfig::new(0.8, -0.1, FadingFamily::Gaussian, 0).check().is_err());
        assert!(FadingConfig::new(0.1, 0.04, FadingFamily::TwoPoint, 0).check().is_err());
        assert!(FadingConfig::new(0.8, 0.05, FadingFamily::TruncatedGaussian { lo: 1.0, hi: 0.0 }, 0)
            .check()
            .is_err());
        // variance larger than any truncation of [0, 1] can carry
        assert!(FadingConfig::new(0.5, 0.2, FadingFamily::TruncatedGaussian { lo: 0.0, hi: 1.0 }, 0)
            .check()
            .is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let cfg = FadingConfig::new(0.8, 0.05, FadingFamily::Gaussian, 42);
        let s = cfg.sampler().unwrap();
        let draw = |run| {
            let mut r = cfg.stream(run);
            (0..20).map(|_| s.sample(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn packet_scaling() {
        let p = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)];
        let f = fade_packet(0.8, &p);
        assert!((f[0][0] - 0.8).abs() < 1e-15 && (f[1][0] - 1.6).abs() < 1e-15);
        assert_eq!(fade_packet(1.0, &p), p);
        assert!(fade_packet(0.0, &p).iter().all(|v| v[0] == 0.0));
    }
}
