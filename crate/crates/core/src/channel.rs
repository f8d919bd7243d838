//! Received-signal-strength synthesis and link failure probabilities.
//!
//! RSS comes from a geometric path-loss model, `W_ij = P_tx * dist(i, j)^-n`.
//! Transmission failure follows the exponential outage form
//! `P_D(i, j) = 1 - exp(-(2^r - 1) sigma^2 / W_ij)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Placement {
    UniformSquare { side: f64 },
    Explicit { positions: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Transmission rate `r` in bits per channel use.
    #[serde(default = "ChannelParams::default_rate")]
    pub rate: f64,
    #[serde(default = "ChannelParams::default_noise")]
    pub noise_power: f64,
    #[serde(default = "ChannelParams::default_placement")]
    pub placement: Placement,
    #[serde(default = "ChannelParams::default_tx_power")]
    pub tx_power: f64,
    #[serde(default = "ChannelParams::default_exponent")]
    pub pathloss_exponent: f64,
}

impl ChannelParams {
    fn default_rate() -> f64 {
        1.0
    }
    fn default_noise() -> f64 {
        1.0
    }
    fn default_placement() -> Placement {
        Placement::UniformSquare { side: 1.0 }
    }
    fn default_tx_power() -> f64 {
        1.0
    }
    fn default_exponent() -> f64 {
        2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::arg("rate must be positive"));
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::arg("noise_power must be positive"));
        }
        if !(self.tx_power > 0.0) {
            return Err(Error::arg("tx_power must be positive"));
        }
        if !(self.pathloss_exponent >= 2.0) {
            return Err(Error::arg("pathloss_exponent must be at least 2"));
        }
        if let Placement::UniformSquare { side } = self.placement {
            if !(side > 0.0) {
                return Err(Error::arg("placement side must be positive"));
            }
        }
        Ok(())
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            rate: Self::default_rate(),
            noise_power: Self::default_noise(),
            placement: Self::default_placement(),
            tx_power: Self::default_tx_power(),
            pathloss_exponent: Self::default_exponent(),
        }
    }
}

/// `W[i][j]` is the RSS at receiver `i` from transmitter `j`. The diagonal
/// holds `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RssMatrix {
    pub w: Matrix,
    pub positions: Vec<[f64; 2]>,
}

impl RssMatrix {
    pub fn n(&self) -> usize {
        self.w.rows()
    }
}

pub fn generate_rss(params: &ChannelParams, n: usize, seed: u64) -> Result<RssMatrix> {
    params.validate()?;
    if n < 2 {
        return Err(Error::arg("need at least two clients for a channel"));
    }
    let (positions, floor) = match &params.placement {
        Placement::UniformSquare { side } => {
            let mut rng = rng::stream(seed, &[rng::label("placement")]);
            let pos: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
                .collect();
            (pos, 1e-3 * side)
        }
        Placement::Explicit { positions } => {
            if positions.len() != n {
                return Err(Error::arg(format!(
                    "{} explicit positions for {n} clients",
                    positions.len()
                )));
            }
            let extent = positions
                .iter()
                .flat_map(|p| positions.iter().map(move |q| (p[0] - q[0]).abs().max((p[1] - q[1]).abs())))
                .fold(0.0f64, f64::max);
            (positions.clone(), 1e-3 * if extent > 0.0 { extent } else { 1.0 })
        }
    };
    let mut w = Matrix::filled(n, n, f64::INFINITY);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
                w.set(i, j, params.tx_power * d.max(floor).powf(-params.pathloss_exponent));
            }
        }
    }
    Ok(RssMatrix { w, positions })
}

/// Failure probability for a single link.
pub fn link_failure(w: f64, rate: f64, noise_power: f64) -> f64 {
    // 1 - exp(-x) without cancellation for small x
    -(-(2f64.powf(rate) - 1.0) * noise_power / w).exp_m1()
}

pub fn failure_probability(rss: &RssMatrix, rate: f64, noise_power: f64) -> Result<Matrix> {
    let n = rss.n();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = rss.w.get(i, j);
            if !(w > 0.0) {
                return Err(Error::arg(format!("RSS W[{i}][{j}] = {w} is not positive")));
            }
            p.set(i, j, link_failure(w, rate, noise_power));
        }
    }
    Ok(p)
}
