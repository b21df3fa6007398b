//! Ricker wavelet source with a regularized point delta.

use std::f64::consts::PI;

use crate::geom::Point;
use crate::nodes::NodeSet;
use crate::{Error, Result};

/// Default delta regularization width in metres.
pub const DEFAULT_EPSILON: f64 = 4.0;

/// Default wavelet delay in units of `sigma_r`.
pub const DEFAULT_DELAY_FACTOR: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RickerSource {
    /// Amplitude in N/m².
    pub s0: f64,
    /// Wavelet width in seconds.
    pub sigma_r: f64,
    pub position: Point,
    /// Delta regularization width in metres.
    pub epsilon: f64,
    /// Shift applied to the wavelet so injection starts from near silence.
    pub t_delay: f64,
}

impl RickerSource {
    pub fn new(s0: f64, sigma_r: f64, position: Point, epsilon: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_r.is_finite()) {
            return Err(Error::Config(format!("sigma_r must be positive, got {sigma_r}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { s0, sigma_r, position, epsilon, t_delay: DEFAULT_DELAY_FACTOR * sigma_r })
    }

    pub fn with_delay(mut self, t_delay: f64) -> Self {
        self.t_delay = t_delay;
        self
    }

    /// Undelayed wavelet `s(t)`.
    pub fn ricker(&self, t: f64) -> f64 {
        let q = t / self.sigma_r;
        let norm = 2.0 * self.s0 / ((3.0 * self.sigma_r).sqrt() * PI.powf(0.25));
        norm * (1.0 - q * q) * (-0.5 * q * q).exp()
    }

    /// Wavelet as injected at simulation time `t`.
    pub fn signal(&self, t: f64) -> f64 {
        self.ricker(t - self.t_delay)
    }

    /// `ε / (π (r² + ε²))`.
    pub fn delta_approx(&self, p: Point) -> f64 {
        let r2 = p.dist2(self.position);
        self.epsilon / (PI * (r2 + self.epsilon * self.epsilon))
    }

    /// Spatial delta weights per node; zero on boundary nodes. Time independent,
    /// so the stepper computes them once.
    pub fn spatial_weights(&self, nodes: &NodeSet) -> Vec<f64> {
        nodes
            .positions
            .iter()
            .zip(&nodes.kinds)
            .map(|(p, k)| if k.is_boundary() { 0.0 } else { self.delta_approx(*p) })
            .collect()
    }

    /// Source term `s(t) δ̃(x)` at every node, using the undelayed wavelet.
    pub fn source_field(&self, nodes: &NodeSet, t: f64) -> Vec<f64> {
        let s = self.ricker(t);
        self.spatial_weights(nodes).into_iter().map(|d| s * d).collect()
    }
}

/// Characteristic period of the wavelet used for the nodes-per-wavelength rule.
pub fn characteristic_period(sigma_r: f64) -> f64 {
    2.0 * PI * sigma_r
}
